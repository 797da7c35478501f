//! Time-periodic trigonometric potentials
//! `V(t, q) = Σ a cos(⟨k, q⟩ + 2π m t + φ)` with exact derivatives.

use std::f64::consts::PI;
use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus_loops::WindingClass;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<i64>,
    pub m: i64,
    pub a: f64,
    #[serde(default)]
    pub phi: f64,
}

impl Mode {
    fn phase(&self, t: f64, q: &[f64]) -> f64 {
        let mut theta = 2.0 * PI * self.m as f64 * t + self.phi;
        for (ki, qi) in self.k.iter().zip(q) {
            if *ki != 0 {
                theta += *ki as f64 * qi;
            }
        }
        theta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialRecord", into = "PotentialRecord")]
pub struct Potential {
    n: usize,
    modes: Vec<Mode>,
}

#[derive(Serialize, Deserialize)]
struct PotentialRecord {
    n: usize,
    modes: Vec<Mode>,
}

impl TryFrom<PotentialRecord> for Potential {
    type Error = Error;
    fn try_from(r: PotentialRecord) -> Result<Self> {
        Potential::new(r.n, r.modes)
    }
}

impl From<Potential> for PotentialRecord {
    fn from(p: Potential) -> Self {
        PotentialRecord { n: p.n, modes: p.modes }
    }
}

/// Value, gradient and Hessian at one point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

impl Potential {
    pub fn new(n: usize, modes: Vec<Mode>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("potential dimension must be positive".into()));
        }
        for mode in &modes {
            if mode.k.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: mode.k.len() });
            }
            if !mode.a.is_finite() || !mode.phi.is_finite() {
                return Err(Error::InvalidArgument("mode amplitude and phase must be finite".into()));
            }
        }
        Ok(Self { n, modes })
    }

    pub fn zero(n: usize) -> Self {
        Self { n, modes: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn value(&self, t: f64, q: &[f64]) -> f64 {
        self.modes.iter().map(|m| m.a * m.phase(t, q).cos()).sum()
    }

    /// Adds ∇V_t(q) into `out`.
    pub fn add_gradient(&self, t: f64, q: &[f64], out: &mut [f64]) {
        for mode in &self.modes {
            let s = -mode.a * mode.phase(t, q).sin();
            for (o, k) in out.iter_mut().zip(&mode.k) {
                if *k != 0 {
                    *o += s * *k as f64;
                }
            }
        }
    }

    /// Adds ∇²V_t(q)·xi into `out`.
    pub fn add_hessian_apply(&self, t: f64, q: &[f64], xi: &[f64], out: &mut [f64]) {
        for mode in &self.modes {
            let kx: f64 = mode.k.iter().zip(xi).map(|(k, x)| *k as f64 * x).sum();
            if kx == 0.0 {
                continue;
            }
            let c = -mode.a * mode.phase(t, q).cos() * kx;
            for (o, k) in out.iter_mut().zip(&mode.k) {
                if *k != 0 {
                    *o += c * *k as f64;
                }
            }
        }
    }

    /// Writes ∇²V_t(q) into the n×n block of `out` at (offset, offset).
    pub fn add_hessian_block(&self, t: f64, q: &[f64], out: &mut DMatrix<f64>, offset: usize) {
        for mode in &self.modes {
            let c = -mode.a * mode.phase(t, q).cos();
            for (i, ki) in mode.k.iter().enumerate().filter(|(_, k)| **k != 0) {
                for (j, kj) in mode.k.iter().enumerate().filter(|(_, k)| **k != 0) {
                    out[(offset + i, offset + j)] += c * (*ki * *kj) as f64;
                }
            }
        }
    }

    pub fn evaluate(&self, t: f64, q: &[f64]) -> Evaluation {
        let mut gradient = vec![0.0; self.n];
        self.add_gradient(t, q, &mut gradient);
        let mut hessian = DMatrix::zeros(self.n, self.n);
        self.add_hessian_block(t, q, &mut hessian, 0);
        Evaluation { value: self.value(t, q), gradient, hessian }
    }

    /// Random low-frequency perturbation with amplitudes in `[-max_amplitude, max_amplitude]`.
    pub fn random_perturbation<R: Rng>(n: usize, rng: &mut R, count: usize, max_amplitude: f64) -> Self {
        let modes = (0..count)
            .map(|_| Mode {
                k: (0..n).map(|_| rng.gen_range(-1..=1)).collect(),
                m: rng.gen_range(-1..=1),
                a: rng.gen_range(-max_amplitude..=max_amplitude),
                phi: rng.gen_range(0.0..2.0 * PI),
            })
            .collect();
        Self { n, modes }
    }
}

impl Add for &Potential {
    type Output = Potential;
    fn add(self, rhs: &Potential) -> Potential {
        assert_eq!(self.n, rhs.n, "adding potentials of different dimension");
        let mut modes = self.modes.clone();
        modes.extend(rhs.modes.iter().cloned());
        Potential { n: self.n, modes }
    }
}

impl Mul<f64> for &Potential {
    type Output = Potential;
    fn mul(self, c: f64) -> Potential {
        let modes = self.modes.iter().map(|m| Mode { a: m.a * c, ..m.clone() }).collect();
        Potential { n: self.n, modes }
    }
}

/// `V_α(t, q) = Σ_k cos(q_k − 2π α_k t)`, splitting each circle of straight
/// loops into a maximum and a minimum of the action.
pub fn pendulum_potential(alpha: &WindingClass) -> Potential {
    let n = alpha.dim();
    let modes = alpha
        .0
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut k = vec![0; n];
            k[i] = 1;
            Mode { k, m: -a, a: 1.0, phi: 0.0 }
        })
        .collect();
    Potential { n, modes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pendulum_at_origin() {
        let v = pendulum_potential(&WindingClass(vec![1]));
        let e = v.evaluate(0.0, &[0.0]);
        assert_eq!(e.value, 1.0);
        assert!(e.gradient[0].abs() < 1e-15);
        assert_eq!(e.hessian[(0, 0)], -1.0);
    }

    #[test]
    fn zero_potential() {
        let e = Potential::zero(2).evaluate(0.3, &[1.0, 2.0]);
        assert_eq!(e.value, 0.0);
        assert_eq!(e.gradient, vec![0.0, 0.0]);
        assert_eq!(e.hessian.amax(), 0.0);
    }

    #[test]
    fn pendulum_modes() {
        let v = pendulum_potential(&WindingClass(vec![1, 2]));
        assert_eq!(v.modes().len(), 2);
        assert_eq!(v.modes()[1].k, vec![0, 1]);
        assert_eq!(v.modes()[1].m, -2);
        let t = 0.37;
        let q = [0.4, -1.1];
        let expected = (q[0] - 2.0 * PI * t).cos() + (q[1] - 4.0 * PI * t).cos();
        assert!((v.value(t, &q) - expected).abs() < 1e-14);
        let v0 = pendulum_potential(&WindingClass(vec![0]));
        assert!((v0.value(0.0, &[PI]) + 1.0).abs() < 1e-15);
        assert!((v0.value(0.8, &[0.3]) - 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = &pendulum_potential(&WindingClass(vec![1, -1])) + &Potential::random_perturbation(2, &mut rng, 4, 0.3);
        let h = 1e-5;
        for _ in 0..100 {
            let t: f64 = rng.gen_range(0.0..1.0);
            let q = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let e = v.evaluate(t, &q);
            for i in 0..2 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let fd = (v.value(t, &qp) - v.value(t, &qm)) / (2.0 * h);
                assert!((fd - e.gradient[i]).abs() < 1e-8);
                let gp = v.evaluate(t, &qp).gradient;
                let gm = v.evaluate(t, &qm).gradient;
                for j in 0..2 {
                    let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                    assert!((fd2 - e.hessian[(j, i)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn periodic_in_space_and_time() {
        let v = pendulum_potential(&WindingClass(vec![2, 1]));
        let q = [0.7, 1.9];
        let base = v.value(0.21, &q);
        assert!((v.value(0.21, &[q[0] + 2.0 * PI, q[1]]) - base).abs() < 1e-12);
        assert!((v.value(1.21, &q) - base).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let v = pendulum_potential(&WindingClass(vec![1]));
        let s = serde_json::to_string(&v).unwrap();
        let back: Potential = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        let bad = r#"{"n":2,"modes":[{"k":[1],"m":0,"a":1.0,"phi":0.0}]}"#;
        assert!(serde_json::from_str::<Potential>(bad).is_err());
    }
}
