//! Finite-dimensional model of a loop-space component: closed polygons with
//! r vertices and bounded gaps, with the Riemann-sum discretization of the
//! classical action as Morse function.
//!
//! Vertices are stored as displacements from the straight polygon,
//! `q_j = 2πα j/r + y_j`, so `y` is periodic in `j`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::critical_points::SeedLattice;
use crate::error::{Error, Result};
use crate::gradient_system::{self, lattice_distance, normalize_lattice, GradientSystem};
use crate::heat_flow::{connecting_lines, FlowLine, FlowOptions, Node};
use crate::morse_complex::{build_complex_from, homology, ChainComplex, HomologyResult};
use crate::potentials::Potential;
use crate::torus_loops::{WindingClass, CIRCUMFERENCE};

pub const DEFAULT_GAP_LIMIT: f64 = PI / 2.0;
pub const MIN_VERTICES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrokenLoop {
    pub alpha: WindingClass,
    /// `r × n` vertices, row-major, one period.
    pub q: Vec<Vec<f64>>,
}

impl BrokenLoop {
    pub fn vertices(&self) -> usize {
        self.q.len()
    }

    /// Vertex `j` for any integer `j`, using `q_{j+r} = q_j + 2πα`.
    pub fn vertex(&self, j: i64) -> Vec<f64> {
        let r = self.q.len() as i64;
        let turns = j.div_euclid(r);
        let base = &self.q[j.rem_euclid(r) as usize];
        base.iter().zip(&self.alpha.0).map(|(b, a)| b + CIRCUMFERENCE * (turns * a) as f64).collect()
    }

    /// Largest consecutive gap and where it occurs.
    pub fn max_gap(&self) -> (usize, f64) {
        (0..self.vertices())
            .map(|j| {
                let (a, b) = (self.vertex(j as i64), self.vertex(j as i64 + 1));
                let d = a.iter().zip(&b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt();
                (j, d)
            })
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
    }

    pub fn check_gaps(&self, limit: f64) -> Result<()> {
        let (index, gap) = self.max_gap();
        if gap > limit {
            return Err(Error::GapViolated { index, gap, limit });
        }
        Ok(())
    }
}

/// `E(q) = Σ (r/2)|q_{j+1} − q_j|² − (1/r) Σ V(j/r, q_j)`.
pub fn broken_energy(b: &BrokenLoop, v: &Potential) -> Result<f64> {
    b.check_gaps(DEFAULT_GAP_LIMIT)?;
    let e = BrokenEnergy::new(v, &b.alpha, b.vertices())?;
    Ok(e.value(&e.displacement_of(b)))
}

/// The discrete action on displacement coordinates. The metric is
/// `⟨a, b⟩ = Σ a·b / r`, so the metric gradient is `r ∂E`.
pub struct BrokenEnergy {
    potential: Potential,
    alpha: WindingClass,
    r: usize,
    gap_limit: f64,
}

impl BrokenEnergy {
    pub fn new(potential: &Potential, alpha: &WindingClass, r: usize) -> Result<Self> {
        if r < MIN_VERTICES {
            return Err(Error::InvalidArgument(format!("need at least {MIN_VERTICES} vertices, got {r}")));
        }
        if potential.dim() != alpha.dim() {
            return Err(Error::DimensionMismatch { expected: alpha.dim(), got: potential.dim() });
        }
        Ok(Self { potential: potential.clone(), alpha: alpha.clone(), r, gap_limit: DEFAULT_GAP_LIMIT })
    }

    pub fn with_gap_limit(mut self, limit: f64) -> Self {
        self.gap_limit = limit;
        self
    }

    pub fn gap_limit(&self) -> f64 {
        self.gap_limit
    }

    fn time(&self, j: usize) -> f64 {
        j as f64 / self.r as f64
    }

    fn vertex(&self, j: usize, y: &[f64]) -> Vec<f64> {
        let n = self.alpha.dim();
        let t = self.time(j);
        (0..n).map(|k| CIRCUMFERENCE * self.alpha.0[k] as f64 * t + y[j * n + k]).collect()
    }

    pub fn displacement_of(&self, b: &BrokenLoop) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.len());
        for (j, q) in b.q.iter().enumerate() {
            let t = self.time(j);
            y.extend(q.iter().zip(&self.alpha.0).map(|(q, a)| q - CIRCUMFERENCE * *a as f64 * t));
        }
        y
    }

    pub fn loop_of(&self, y: &[f64]) -> BrokenLoop {
        BrokenLoop { alpha: self.alpha.clone(), q: (0..self.r).map(|j| self.vertex(j, y)).collect() }
    }

    /// Differences `q_{j+1} − q_j` for each j.
    fn steps(&self, y: &[f64]) -> Vec<f64> {
        let n = self.alpha.dim();
        let mut out = vec![0.0; self.r * n];
        for j in 0..self.r {
            let next = (j + 1) % self.r;
            for k in 0..n {
                out[j * n + k] = y[next * n + k] - y[j * n + k] + CIRCUMFERENCE * self.alpha.0[k] as f64 / self.r as f64;
            }
        }
        out
    }
}

impl GradientSystem for BrokenEnergy {
    fn rows(&self) -> usize {
        self.r
    }

    fn dim(&self) -> usize {
        self.alpha.dim()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let r = self.r as f64;
        let kinetic: f64 = self.steps(y).iter().map(|d| 0.5 * r * d * d).sum();
        let potential: f64 = (0..self.r).map(|j| self.potential.value(self.time(j), &self.vertex(j, y))).sum();
        kinetic - potential / r
    }

    fn descent(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let r = self.r as f64;
        let d = self.steps(y);
        let mut out = vec![0.0; y.len()];
        for j in 0..self.r {
            let prev = (j + self.r - 1) % self.r;
            for k in 0..n {
                out[j * n + k] = r * r * (d[j * n + k] - d[prev * n + k]);
            }
            self.potential.add_gradient(self.time(j), &self.vertex(j, y), &mut out[j * n..(j + 1) * n]);
        }
        out
    }

    fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let len = self.len();
        let r2 = (self.r * self.r) as f64;
        let mut h = DMatrix::zeros(len, len);
        for j in 0..self.r {
            let (prev, next) = ((j + self.r - 1) % self.r, (j + 1) % self.r);
            for k in 0..n {
                h[(j * n + k, j * n + k)] += 2.0 * r2;
                h[(j * n + k, prev * n + k)] -= r2;
                h[(j * n + k, next * n + k)] -= r2;
            }
        }
        let mut block = DMatrix::zeros(len, len);
        for j in 0..self.r {
            self.potential.add_hessian_block(self.time(j), &self.vertex(j, y), &mut block, j * n);
        }
        h - block
    }

    fn descent_linear(&self, y: &[f64], xi: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let r2 = (self.r * self.r) as f64;
        let mut out = vec![0.0; y.len()];
        for j in 0..self.r {
            let (prev, next) = ((j + self.r - 1) % self.r, (j + 1) % self.r);
            for k in 0..n {
                out[j * n + k] = r2 * (xi[next * n + k] - 2.0 * xi[j * n + k] + xi[prev * n + k]);
            }
            self.potential.add_hessian_apply(
                self.time(j),
                &self.vertex(j, y),
                &xi[j * n..(j + 1) * n],
                &mut out[j * n..(j + 1) * n],
            );
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BrokenCritical {
    pub config: BrokenLoop,
    #[serde(skip)]
    pub state: Vec<f64>,
    pub energy: f64,
    pub index: usize,
    pub gap: f64,
    #[serde(skip)]
    pub unstable: Vec<Vec<f64>>,
}

impl<'a> From<&'a BrokenCritical> for Node<'a> {
    fn from(c: &'a BrokenCritical) -> Self {
        Node { state: &c.state, value: c.energy, index: c.index, unstable: &c.unstable }
    }
}

/// Critical configurations reached by Newton from constant seeds,
/// deduplicated modulo full turns and sorted by (energy, index).
pub fn broken_critical(e: &BrokenEnergy, per_axis: usize) -> Result<Vec<BrokenCritical>> {
    let n = e.dim();
    let lattice = SeedLattice { samples: e.r, per_axis, jitter: 0.0, seed: 0 };
    let converged: Vec<Result<Vec<f64>>> = lattice
        .offsets(n)
        .into_par_iter()
        .map(|off| {
            let seed: Vec<f64> = (0..e.r).flat_map(|_| off.iter().copied()).collect();
            gradient_system::newton(e, seed).map(|(y, _)| normalize_lattice(&y, n))
        })
        .collect();
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for c in converged {
        let y = match c {
            Ok(y) => y,
            Err(err @ Error::DegenerateCritical { .. }) => return Err(err),
            Err(_) => continue,
        };
        if !unique.iter().any(|u| lattice_distance(u, &y, n).0 < 1e-6) {
            unique.push(y);
        }
    }
    let mut out = unique
        .into_iter()
        .map(|y| {
            let config = e.loop_of(&y);
            config.check_gaps(e.gap_limit)?;
            let spec = gradient_system::analyze(e, &y)?;
            Ok(BrokenCritical { config, energy: e.value(&y), index: spec.index, gap: spec.gap, unstable: spec.unstable, state: y })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.index.cmp(&b.index)));
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BrokenHomology {
    pub critical: Vec<BrokenCritical>,
    pub lines: Vec<FlowLine>,
    pub complex: ChainComplex,
    pub homology: HomologyResult,
}

pub fn flow_options() -> FlowOptions {
    FlowOptions { ds: 0.005, ..FlowOptions::default() }
}

/// Full Morse–Witten computation on the polygon model with `r` vertices.
pub fn broken_homology_report(v: &Potential, alpha: &WindingClass, r: usize, opts: &FlowOptions) -> Result<BrokenHomology> {
    let e = BrokenEnergy::new(v, alpha, r)?;
    let critical = broken_critical(&e, 3)?;
    let nodes: Vec<Node> = critical.iter().map(Node::from).collect();
    let lines = connecting_lines(&e, &nodes, opts)?;
    for line in &lines {
        for y in &line.slices {
            e.loop_of(y).check_gaps(e.gap_limit)?;
        }
    }
    let summary: Vec<(usize, f64)> = critical.iter().map(|c| (c.index, c.energy)).collect();
    let complex = build_complex_from(alpha, &summary, &lines, None)?;
    let homology = homology(&complex)?;
    Ok(BrokenHomology { critical, lines, complex, homology })
}

pub fn broken_homology(v: &Potential, alpha: &WindingClass, r: usize) -> Result<HomologyResult> {
    Ok(broken_homology_report(v, alpha, r, &flow_options())?.homology)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::pendulum_potential;

    fn straight(alpha: &WindingClass, r: usize, shift: f64) -> BrokenLoop {
        let q = (0..r)
            .map(|j| alpha.0.iter().map(|a| CIRCUMFERENCE * *a as f64 * j as f64 / r as f64 + shift).collect())
            .collect();
        BrokenLoop { alpha: alpha.clone(), q }
    }

    #[test]
    fn straight_polygon_energy_is_exact() {
        let alpha = WindingClass(vec![1]);
        let e = broken_energy(&straight(&alpha, 8, 0.0), &Potential::zero(1)).unwrap();
        assert!((e - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn pendulum_up_energy_converges() {
        let alpha = WindingClass(vec![1]);
        let v = pendulum_potential(&alpha);
        for r in [8, 16, 32] {
            let e = broken_energy(&straight(&alpha, r, PI), &v).unwrap();
            // Riemann sum of the constant −V = 1 is exact here.
            assert!((e - (2.0 * PI * PI + 1.0)).abs() < 1e-12, "r={r}: {e}");
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let alpha = WindingClass(vec![1, 0]);
        let v = &pendulum_potential(&alpha) + &(&Potential::random_perturbation(2, &mut rand_chacha_rng(5), 4, 0.3) * 1.0);
        let e = BrokenEnergy::new(&v, &alpha, 8).unwrap();
        let y: Vec<f64> = (0..16).map(|i| 0.3 * (i as f64 * 0.7).sin()).collect();
        let g = e.descent(&y);
        let h = 1e-6;
        for i in 0..y.len() {
            let (mut a, mut b) = (y.clone(), y.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (e.value(&a) - e.value(&b)) / (2.0 * h);
            // descent = −r ∂E
            assert!((g[i] + 8.0 * fd).abs() < 1e-8 * 8.0 * (1.0 + fd.abs()), "{i}");
        }
        let xi: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let lin = e.descent_linear(&y, &xi);
        let hm = e.hessian(&y);
        for i in 0..16 {
            let hx: f64 = (0..16).map(|j| hm[(i, j)] * xi[j]).sum();
            assert!((lin[i] + hx).abs() < 1e-9);
        }
    }

    fn rand_chacha_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn gap_violation_is_reported() {
        let alpha = WindingClass(vec![1]);
        let mut b = straight(&alpha, 8, 0.0);
        b.q[3][0] += 2.0;
        assert!(matches!(broken_energy(&b, &Potential::zero(1)), Err(Error::GapViolated { .. })));
    }

    #[test]
    fn free_polygons_are_degenerate() {
        let alpha = WindingClass(vec![1]);
        assert!(matches!(
            broken_homology(&Potential::zero(1), &alpha, 8),
            Err(Error::DegenerateCritical { .. })
        ));
    }

    #[test]
    fn circle_homology() {
        let alpha = WindingClass(vec![1]);
        let v = pendulum_potential(&alpha);
        let rep = broken_homology_report(&v, &alpha, 8, &flow_options()).unwrap();
        assert_eq!(rep.critical.len(), 2);
        assert_eq!(rep.critical.iter().map(|c| c.index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(rep.homology.ranks(), vec![1, 1]);
        assert!(rep.homology.is_torsion_free());
    }

    #[test]
    fn too_few_vertices() {
        assert!(BrokenEnergy::new(&Potential::zero(1), &WindingClass(vec![1]), 4).is_err());
    }
}
