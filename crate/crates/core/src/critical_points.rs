//! Perturbed closed geodesics: Newton search, nondegeneracy certificate and
//! Morse index from the spectrum of `A = −d²/dt² − ∇²V_t(x(t))`.

use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient_system::{self, lattice_distance, normalize_lattice, GradientSystem};
use crate::heat_flow::{etdrk4_step, EtdCoefficients};
use crate::potentials::Potential;
use crate::spectral::Spectral;
use crate::torus_loops::{self, map_columns, DiscreteLoop, TangentField, WindingClass, CIRCUMFERENCE};

pub const SPECTRUM_HEAD: usize = 12;
pub const DEDUP_RADIUS: f64 = 1e-4;

/// The classical action on one component `Λ_α T^n`, in displacement coordinates.
pub struct LoopFunctional {
    potential: Potential,
    alpha: WindingClass,
    samples: usize,
    spectral: Arc<Spectral>,
    second: DMatrix<f64>,
    etd: Mutex<Vec<Arc<EtdCoefficients>>>,
}

impl LoopFunctional {
    pub fn new(potential: &Potential, alpha: &WindingClass, samples: usize) -> Result<Self> {
        torus_loops::check_samples(samples)?;
        if potential.dim() != alpha.dim() {
            return Err(Error::DimensionMismatch { expected: alpha.dim(), got: potential.dim() });
        }
        let spectral = Spectral::shared(samples);
        let second = spectral.second_derivative_matrix();
        Ok(Self {
            potential: potential.clone(),
            alpha: alpha.clone(),
            samples,
            spectral,
            second,
            etd: Mutex::new(Vec::new()),
        })
    }

    /// Exponential-integrator weights for step `h`, computed once per step size.
    pub(crate) fn etd_coefficients(&self, h: f64) -> Arc<EtdCoefficients> {
        let mut cache = self.etd.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(c) = cache.iter().find(|c| c.h == h) {
            return c.clone();
        }
        let c = Arc::new(EtdCoefficients::new(&self.spectral.laplacian_symbol(), h));
        cache.push(c.clone());
        c
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn alpha(&self) -> &WindingClass {
        &self.alpha
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.samples as f64
    }

    fn lift_into(&self, j: usize, y: &[f64], q: &mut [f64]) {
        let n = self.dim();
        let t = self.time(j);
        for k in 0..n {
            q[k] = CIRCUMFERENCE * self.alpha.0[k] as f64 * t + y[j * n + k];
        }
    }

    fn point(&self, j: usize, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        torus_loops::lift(&self.alpha, self.time(j), &y[j * n..(j + 1) * n])
    }

    /// ∇V_t(x(t)) sampled on the grid.
    pub fn potential_gradient(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; y.len()];
        let mut q = vec![0.0; n];
        for j in 0..self.samples {
            self.lift_into(j, y, &mut q);
            self.potential.add_gradient(self.time(j), &q, &mut out[j * n..(j + 1) * n]);
        }
        out
    }

    /// ∇²V_t(x(t)) ξ(t) sampled on the grid.
    pub fn potential_hessian_apply(&self, y: &[f64], xi: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; y.len()];
        let mut q = vec![0.0; n];
        for j in 0..self.samples {
            self.lift_into(j, y, &mut q);
            self.potential.add_hessian_apply(self.time(j), &q, &xi[j * n..(j + 1) * n], &mut out[j * n..(j + 1) * n]);
        }
        out
    }

    pub fn loop_of(&self, y: Vec<f64>) -> Result<DiscreteLoop> {
        DiscreteLoop::new(self.alpha.clone(), self.samples, y)
    }
}

impl GradientSystem for LoopFunctional {
    fn rows(&self) -> usize {
        self.samples
    }

    fn dim(&self) -> usize {
        self.alpha.dim()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        for k in 0..n {
            let dy = self.spectral.derivative(&torus_loops::column(y, n, k));
            let w = CIRCUMFERENCE * self.alpha.0[k] as f64;
            total += dy.iter().map(|d| 0.5 * (d + w) * (d + w)).sum::<f64>();
        }
        for j in 0..self.samples {
            total -= self.potential.value(self.time(j), &self.point(j, y));
        }
        total / self.samples as f64
    }

    fn descent(&self, y: &[f64]) -> Vec<f64> {
        let mut out = map_columns(y, self.dim(), |c| self.spectral.second_derivative(c));
        for (o, g) in out.iter_mut().zip(self.potential_gradient(y)) {
            *o += g;
        }
        out
    }

    fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let len = self.len();
        let mut h = DMatrix::zeros(len, len);
        for j in 0..self.samples {
            for l in 0..self.samples {
                let d = self.second[(j, l)];
                for k in 0..n {
                    h[(j * n + k, l * n + k)] = -d;
                }
            }
        }
        let mut block = DMatrix::zeros(len, len);
        for j in 0..self.samples {
            self.potential.add_hessian_block(self.time(j), &self.point(j, y), &mut block, j * n);
        }
        h - block
    }

    fn descent_linear(&self, y: &[f64], xi: &[f64]) -> Vec<f64> {
        let mut out = map_columns(xi, self.dim(), |c| self.spectral.second_derivative(c));
        for (o, g) in out.iter_mut().zip(self.potential_hessian_apply(y, xi)) {
            *o += g;
        }
        out
    }

    fn advance(&self, x: &mut Vec<f64>, tangents: &mut [Vec<f64>], ds: f64) {
        etdrk4_step(self, x, tangents, ds);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    #[serde(rename = "loop")]
    pub orbit: DiscreteLoop,
    pub action: f64,
    pub index: usize,
    pub spectrum_head: Vec<f64>,
    pub gap: f64,
    /// Oriented L²-unit basis of the unstable eigenspace (displacement samples).
    #[serde(skip)]
    pub unstable: Vec<Vec<f64>>,
}

impl CriticalPoint {
    pub fn displacement(&self) -> &[f64] {
        self.orbit.displacement()
    }
}

/// `ẍ + ∇V_t(x)`, the negative L² gradient of the action.
pub fn euler_lagrange_residual(l: &DiscreteLoop, v: &Potential) -> Result<TangentField> {
    let f = LoopFunctional::new(v, l.alpha(), l.samples())?;
    TangentField::new(l.samples(), l.dim(), f.descent(l.displacement()))
}

fn certify(f: &LoopFunctional, y: Vec<f64>) -> Result<CriticalPoint> {
    let spec = gradient_system::analyze(f, &y)?;
    let action = f.value(&y);
    Ok(CriticalPoint {
        orbit: f.loop_of(y)?,
        action,
        index: spec.index,
        spectrum_head: spec.eigenvalues.iter().take(SPECTRUM_HEAD).copied().collect(),
        gap: spec.gap,
        unstable: spec.unstable,
    })
}

/// Newton iteration from `seed`, then spectral certification.
pub fn find_critical(seed: &DiscreteLoop, v: &Potential) -> Result<CriticalPoint> {
    let f = LoopFunctional::new(v, seed.alpha(), seed.samples())?;
    let (y, _) = gradient_system::newton(&f, seed.displacement().to_vec())?;
    certify(&f, y)
}

/// Index and leading eigenvalues of the second variation at `cp`.
pub fn morse_index(cp: &CriticalPoint, v: &Potential) -> Result<(usize, Vec<f64>)> {
    let f = LoopFunctional::new(v, cp.orbit.alpha(), cp.orbit.samples())?;
    let spec = gradient_system::analyze(&f, cp.displacement())?;
    Ok((spec.index, spec.eigenvalues.into_iter().take(SPECTRUM_HEAD).collect()))
}

/// Seeds: constant displacements on a `per_axis^n` lattice of `[0, 2π)^n`,
/// optionally jittered by a seeded generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedLattice {
    pub samples: usize,
    pub per_axis: usize,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SeedLattice {
    pub fn new(samples: usize) -> Self {
        Self { samples, per_axis: 3, jitter: 0.0, seed: 0 }
    }

    pub fn offsets(&self, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let total = self.per_axis.pow(n as u32);
        (0..total)
            .map(|mut code| {
                (0..n)
                    .map(|_| {
                        let i = code % self.per_axis;
                        code /= self.per_axis;
                        let base = CIRCUMFERENCE * i as f64 / self.per_axis as f64;
                        if self.jitter > 0.0 {
                            base + rng.gen_range(-self.jitter..=self.jitter)
                        } else {
                            base
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// All critical points reached from the seed lattice, deduplicated modulo
/// full turns and sorted by (action, index).
pub fn enumerate_critical(v: &Potential, alpha: &WindingClass, grid: &SeedLattice) -> Result<Vec<CriticalPoint>> {
    let f = LoopFunctional::new(v, alpha, grid.samples)?;
    let n = alpha.dim();
    let converged: Vec<Result<Vec<f64>>> = grid
        .offsets(n)
        .into_par_iter()
        .map(|off| {
            let seed: Vec<f64> = (0..grid.samples).flat_map(|_| off.iter().copied()).collect();
            gradient_system::newton(&f, seed).map(|(y, _)| normalize_lattice(&y, n))
        })
        .collect();
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for r in converged {
        let y = match r {
            Ok(y) => y,
            Err(e @ Error::DegenerateCritical { .. }) => return Err(e),
            // A seed that fails to converge contributes nothing.
            Err(_) => continue,
        };
        if !unique.iter().any(|u| lattice_distance(u, &y, n).0 < DEDUP_RADIUS) {
            unique.push(y);
        }
    }
    let mut points = unique.into_par_iter().map(|y| certify(&f, y)).collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.action.total_cmp(&b.action).then(a.index.cmp(&b.index)));
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::pendulum_potential;
    use crate::torus_loops::action;
    use std::f64::consts::PI;

    fn pendulum(alpha: Vec<i64>) -> (WindingClass, Potential) {
        let a = WindingClass(alpha);
        let v = pendulum_potential(&a);
        (a, v)
    }

    #[test]
    fn residual_vanishes_at_equilibria() {
        let (a, v) = pendulum(vec![1]);
        let down = DiscreteLoop::straight(a.clone(), 64, &[0.0]).unwrap();
        assert!(euler_lagrange_residual(&down, &v).unwrap().l2_norm() < 1e-12);
        let any = DiscreteLoop::straight(WindingClass(vec![3]), 32, &[1.0]).unwrap();
        assert!(euler_lagrange_residual(&any, &Potential::zero(1)).unwrap().l2_norm() < 1e-12);
    }

    #[test]
    fn residual_linearization_is_second_order() {
        // Taylor oracle: R(x0 + δ sin) = δ (−4π² − 1) sin + O(δ²) since ∇V(x0 + ξ) = −sin ξ at pendulum-down.
        let (a, v) = pendulum(vec![1]);
        for &delta in &[1e-2, 5e-3] {
            let l = DiscreteLoop::from_fn(a.clone(), 64, |t| vec![delta * (2.0 * PI * t).sin()]).unwrap();
            let r = euler_lagrange_residual(&l, &v).unwrap();
            let lin = TangentField::from_fn(64, 1, |t| vec![delta * (-1.0 - 4.0 * PI * PI) * (2.0 * PI * t).sin()]).unwrap();
            let diff: Vec<f64> = r.values().iter().zip(lin.values()).map(|(p, q)| p - q).collect();
            let err = torus_loops::l2_norm(&diff, 64);
            assert!(err < delta * delta, "δ={delta}: {err}");
        }
    }

    #[test]
    fn newton_reaches_both_equilibria() {
        let (a, v) = pendulum(vec![1]);
        let low = find_critical(&DiscreteLoop::straight(a.clone(), 64, &[0.1]).unwrap(), &v).unwrap();
        assert!((low.action - (2.0 * PI * PI - 1.0)).abs() < 1e-10);
        assert_eq!(low.index, 0);
        let high = find_critical(&DiscreteLoop::straight(a, 64, &[PI - 0.1]).unwrap(), &v).unwrap();
        assert!((high.action - (2.0 * PI * PI + 1.0)).abs() < 1e-10);
        assert_eq!(high.index, 1);
        assert!((high.action - low.action - 2.0).abs() < 1e-10);
    }

    #[test]
    fn free_constant_loops_are_degenerate() {
        let seed = DiscreteLoop::straight(WindingClass(vec![0]), 16, &[0.3]).unwrap();
        assert!(matches!(find_critical(&seed, &Potential::zero(1)), Err(Error::DegenerateCritical { .. })));
    }

    #[test]
    fn spectra_of_equilibria() {
        let (a, v) = pendulum(vec![2]);
        let up = find_critical(&DiscreteLoop::straight(a, 128, &[PI]).unwrap(), &v).unwrap();
        let (idx, head) = morse_index(&up, &v).unwrap();
        assert_eq!(idx, 1);
        assert!((head[0] + 1.0).abs() < 1e-8);
        assert!((head[1] - (4.0 * PI * PI - 1.0)).abs() < 1e-6);
        assert!((head[2] - (4.0 * PI * PI - 1.0)).abs() < 1e-6);
        assert!((head[3] - (16.0 * PI * PI - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn three_torus_point_has_index_two() {
        let (a, v) = pendulum(vec![1, 1, 1]);
        let cp = find_critical(&DiscreteLoop::straight(a, 16, &[PI, 0.0, PI]).unwrap(), &v).unwrap();
        assert_eq!(cp.index, 2);
        assert_eq!(cp.unstable.len(), 2);
        // Canonical orientation: constant directions in coordinates 1 and 3, positive.
        assert!((cp.unstable[0][0] - 1.0).abs() < 1e-8 && cp.unstable[0][1].abs() < 1e-8);
        assert!((cp.unstable[1][2] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn enumeration_counts() {
        let (a, v) = pendulum(vec![1]);
        let pts = enumerate_critical(&v, &a, &SeedLattice::new(32)).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].index, 0);
        let (a3, v3) = pendulum(vec![1, 0, 1]);
        let pts = enumerate_critical(&v3, &a3, &SeedLattice::new(16)).unwrap();
        let mut idx: Vec<usize> = pts.iter().map(|p| p.index).collect();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 1, 1, 2, 2, 2, 3]);
    }

    #[test]
    fn enumeration_is_stable_under_small_perturbation() {
        let (a, v) = pendulum(vec![1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = &v + &Potential::random_perturbation(2, &mut rng, 3, 1e-3);
        assert_eq!(enumerate_critical(&w, &a, &SeedLattice::new(16)).unwrap().len(), 4);
    }

    #[test]
    fn gradient_matches_action_differences() {
        let (a, v) = pendulum(vec![1]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = &v + &Potential::random_perturbation(1, &mut rng, 3, 1e-2);
        let pts = enumerate_critical(&w, &a, &SeedLattice::new(32)).unwrap();
        for cp in &pts {
            // Off the critical point, compare descent against directional differences of the action.
            let base: Vec<f64> = cp.displacement().iter().enumerate().map(|(j, y)| y + 0.2 * (2.0 * PI * j as f64 / 32.0).cos()).collect();
            let l = DiscreteLoop::new(a.clone(), 32, base.clone()).unwrap();
            let g = euler_lagrange_residual(&l, &w).unwrap();
            let dir: Vec<f64> = (0..32).map(|j| (2.0 * PI * 3.0 * j as f64 / 32.0).sin()).collect();
            let h = 1e-5;
            let shift = |s: f64| {
                let y: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + s * d).collect();
                action(&DiscreteLoop::new(a.clone(), 32, y).unwrap(), &w).unwrap()
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            let analytic = -g.values().iter().zip(&dir).map(|(p, q)| p * q).sum::<f64>() / 32.0;
            assert!((fd - analytic).abs() < 1e-6);
        }
    }
}
