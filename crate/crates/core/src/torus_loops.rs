//! Free loops on the flat torus `T^n = R^n / 2πZ^n`.
//!
//! A loop in the homotopy class `α` is stored as its winding part plus a
//! periodic displacement: `x(t_j) = 2π α t_j + y_j` with `t_j = j / N`, so the
//! non-periodic coordinate never enters the sample arrays.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::spectral::Spectral;

pub const CIRCUMFERENCE: f64 = 2.0 * PI;
pub const MIN_SAMPLES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TorusModel {
    n: usize,
}

impl TorusModel {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("torus dimension must be at least 1".into()));
        }
        Ok(Self { n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Free homotopy class of loops on `T^n`: the winding vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WindingClass(pub Vec<i64>);

impl WindingClass {
    pub fn zero(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|a| *a == 0)
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.0.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|a| *a as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LoopRecord", into = "LoopRecord")]
pub struct DiscreteLoop {
    alpha: WindingClass,
    samples: usize,
    /// Row-major N×n displacement samples.
    y: Vec<f64>,
}

/// JSON form `{alpha: [ints], samples: [[reals]]}`, rows indexed by time.
#[derive(Serialize, Deserialize)]
pub struct LoopRecord {
    pub alpha: Vec<i64>,
    pub samples: Vec<Vec<f64>>,
}

impl TryFrom<LoopRecord> for DiscreteLoop {
    type Error = Error;
    fn try_from(r: LoopRecord) -> Result<Self> {
        let n = r.alpha.len();
        let rows = r.samples.len();
        let mut y = Vec::with_capacity(rows * n);
        for row in &r.samples {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            y.extend_from_slice(row);
        }
        DiscreteLoop::new(WindingClass(r.alpha), rows, y)
    }
}

impl From<DiscreteLoop> for LoopRecord {
    fn from(l: DiscreteLoop) -> Self {
        let n = l.dim();
        LoopRecord {
            samples: l.y.chunks(n).map(|c| c.to_vec()).collect(),
            alpha: l.alpha.0,
        }
    }
}

pub(crate) fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_SAMPLES || !samples.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "sample count must be a power of two >= {MIN_SAMPLES}, got {samples}"
        )));
    }
    Ok(())
}

impl DiscreteLoop {
    pub fn new(alpha: WindingClass, samples: usize, y: Vec<f64>) -> Result<Self> {
        check_samples(samples)?;
        let n = alpha.dim();
        if n == 0 {
            return Err(Error::InvalidArgument("winding vector must be nonempty".into()));
        }
        if y.len() != samples * n {
            return Err(Error::DimensionMismatch { expected: samples * n, got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("loop construction"));
        }
        Ok(Self { alpha, samples, y })
    }

    /// Loop with displacement `y(t)` sampled from a closure.
    pub fn from_fn(alpha: WindingClass, samples: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let n = alpha.dim();
        let mut y = Vec::with_capacity(samples * n);
        for j in 0..samples {
            let row = f(j as f64 / samples as f64);
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            y.extend(row);
        }
        Self::new(alpha, samples, y)
    }

    /// The straight loop `2π α t + offset`.
    pub fn straight(alpha: WindingClass, samples: usize, offset: &[f64]) -> Result<Self> {
        let off = offset.to_vec();
        Self::from_fn(alpha, samples, move |_| off.clone())
    }

    pub fn alpha(&self) -> &WindingClass {
        &self.alpha
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.alpha.dim()
    }

    pub fn displacement(&self) -> &[f64] {
        &self.y
    }

    pub fn into_displacement(self) -> Vec<f64> {
        self.y
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.samples as f64
    }

    /// Position `x(t_j)` in the universal cover.
    pub fn point(&self, j: usize) -> Vec<f64> {
        lift(&self.alpha, self.time(j), &self.y[j * self.dim()..(j + 1) * self.dim()])
    }

    pub fn with_displacement(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.alpha.clone(), self.samples, y)
    }
}

pub(crate) fn lift(alpha: &WindingClass, t: f64, y: &[f64]) -> Vec<f64> {
    alpha.0.iter().zip(y).map(|(a, yi)| CIRCUMFERENCE * *a as f64 * t + yi).collect()
}

/// Periodic samples of a vector field along a loop, row-major N×n.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    samples: usize,
    n: usize,
    xi: Vec<f64>,
}

impl TangentField {
    pub fn new(samples: usize, n: usize, xi: Vec<f64>) -> Result<Self> {
        if xi.len() != samples * n {
            return Err(Error::DimensionMismatch { expected: samples * n, got: xi.len() });
        }
        Ok(Self { samples, n, xi })
    }

    pub fn from_fn(samples: usize, n: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let xi = (0..samples).flat_map(|j| f(j as f64 / samples as f64)).collect();
        Self::new(samples, n, xi)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.xi
    }

    /// Discrete L² norm `(∫|ξ|²)^{1/2}` by the rectangle rule.
    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.xi, self.samples)
    }
}

pub(crate) fn l2_norm(v: &[f64], rows: usize) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / rows as f64).sqrt()
}

pub(crate) fn column(v: &[f64], n: usize, k: usize) -> Vec<f64> {
    v.iter().skip(k).step_by(n).copied().collect()
}

pub(crate) fn set_column(v: &mut [f64], n: usize, k: usize, col: &[f64]) {
    for (j, c) in col.iter().enumerate() {
        v[j * n + k] = *c;
    }
}

/// Apply a scalar periodic operator to every coordinate of a row-major field.
pub(crate) fn map_columns(v: &[f64], n: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for k in 0..n {
        let col = op(&column(v, n, k));
        set_column(&mut out, n, k, &col);
    }
    out
}

/// Time derivative of the loop, including the constant winding velocity `2πα`.
pub fn differentiate(l: &DiscreteLoop) -> TangentField {
    let sp = Spectral::shared(l.samples);
    let n = l.dim();
    let mut xi = map_columns(&l.y, n, |c| sp.derivative(c));
    for row in xi.chunks_mut(n) {
        for (v, a) in row.iter_mut().zip(&l.alpha.0) {
            *v += CIRCUMFERENCE * *a as f64;
        }
    }
    TangentField { samples: l.samples, n, xi }
}

/// Classical action `S_V(x) = ∫ ½|ẋ|² − V_t(x) dt`.
pub fn action(l: &DiscreteLoop, v: &Potential) -> Result<f64> {
    if v.dim() != l.dim() {
        return Err(Error::DimensionMismatch { expected: l.dim(), got: v.dim() });
    }
    let dx = differentiate(l);
    let n = l.dim();
    let mut total = 0.0;
    for j in 0..l.samples {
        let kinetic: f64 = dx.xi[j * n..(j + 1) * n].iter().map(|x| x * x).sum::<f64>() * 0.5;
        total += kinetic - v.value(l.time(j), &l.point(j));
    }
    Ok(total / l.samples as f64)
}

/// `(⟨ξ,η⟩_{L²}, ⟨ξ,η⟩_{W^{1,2}})` along `base`; the flat metric makes the
/// covariant derivative a plain time derivative.
pub fn inner_products(xi: &TangentField, eta: &TangentField, base: &DiscreteLoop) -> Result<(f64, f64)> {
    for f in [xi, eta] {
        if f.samples != base.samples {
            return Err(Error::DimensionMismatch { expected: base.samples, got: f.samples });
        }
        if f.n != base.dim() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: f.n });
        }
    }
    let sp = Spectral::shared(base.samples);
    let n = base.dim();
    let rows = base.samples as f64;
    let l2: f64 = xi.xi.iter().zip(&eta.xi).map(|(a, b)| a * b).sum::<f64>() / rows;
    let dxi = map_columns(&xi.xi, n, |c| sp.derivative(c));
    let deta = map_columns(&eta.xi, n, |c| sp.derivative(c));
    let h1: f64 = dxi.iter().zip(&deta).map(|(a, b)| a * b).sum::<f64>() / rows;
    Ok((l2, l2 + h1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::pendulum_potential;

    #[test]
    fn derivative_of_straight_loop() {
        let l = DiscreteLoop::straight(WindingClass(vec![1]), 16, &[0.0]).unwrap();
        for v in differentiate(&l).values() {
            assert!((v - 2.0 * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let l = DiscreteLoop::from_fn(WindingClass(vec![0]), 32, |t| vec![(2.0 * PI * t).sin()]).unwrap();
        let d = differentiate(&l);
        for (j, v) in d.values().iter().enumerate() {
            let t = j as f64 / 32.0;
            assert!((v - 2.0 * PI * (2.0 * PI * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        // Band-limited displacement; central differences on a fine grid are the oracle.
        let y = |t: f64| 0.3 * (2.0 * PI * t).sin() - 0.2 * (6.0 * PI * t + 0.4).cos() + 0.05 * (10.0 * PI * t).sin();
        for &n in &[64usize, 128] {
            let l = DiscreteLoop::from_fn(WindingClass(vec![2]), n, |t| vec![y(t)]).unwrap();
            let d = differentiate(&l);
            let h = 1.0 / n as f64;
            let mut max_err: f64 = 0.0;
            for j in 0..n {
                let t = j as f64 * h;
                let fd = (y(t + h) - y(t - h)) / (2.0 * h) + 4.0 * PI;
                max_err = max_err.max((fd - d.values()[j]).abs());
            }
            // Central-difference truncation: |y'''| h² / 6 with |y'''| ≤ (2π)³(0.3 + 27·0.2 + 125·0.05).
            let bound = (2.0 * PI).powi(3) * (0.3 + 5.4 + 6.25) * h * h / 6.0;
            assert!(max_err <= bound, "n={n} err={max_err} bound={bound}");
        }
    }

    #[test]
    fn action_examples() {
        let alpha = WindingClass(vec![1]);
        let l = DiscreteLoop::straight(alpha.clone(), 64, &[0.0]).unwrap();
        let s = action(&l, &pendulum_potential(&alpha)).unwrap();
        assert!((s - (2.0 * PI * PI - 1.0)).abs() < 1e-12);
        assert!((action(&l, &Potential::zero(1)).unwrap() - 2.0 * PI * PI).abs() < 1e-12);
        let c = DiscreteLoop::straight(WindingClass(vec![0]), 16, &[1.3]).unwrap();
        assert_eq!(action(&c, &Potential::zero(1)).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_examples() {
        let base = DiscreteLoop::straight(WindingClass(vec![1]), 32, &[0.0]).unwrap();
        let one = TangentField::from_fn(32, 1, |_| vec![1.0]).unwrap();
        let (a, b) = inner_products(&one, &one, &base).unwrap();
        assert!((a - 1.0).abs() < 1e-14 && (b - 1.0).abs() < 1e-12);
        let s = TangentField::from_fn(32, 1, |t| vec![(2.0 * PI * t).sin()]).unwrap();
        let (a, b) = inner_products(&s, &s, &base).unwrap();
        assert!((a - 0.5).abs() < 1e-12);
        assert!((b - (0.5 + 2.0 * PI * PI)).abs() < 1e-10);
        let c2 = TangentField::from_fn(32, 1, |t| vec![(4.0 * PI * t).cos()]).unwrap();
        let (a, b) = inner_products(&s, &c2, &base).unwrap();
        assert!(a.abs() < 1e-12 && b.abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_sample_counts() {
        assert!(DiscreteLoop::straight(WindingClass(vec![1]), 8, &[0.0]).is_err());
        assert!(DiscreteLoop::straight(WindingClass(vec![1]), 24, &[0.0]).is_err());
        assert!(DiscreteLoop::new(WindingClass(vec![1]), 16, vec![f64::NAN; 16]).is_err());
    }

    #[test]
    fn json_layout() {
        let l = DiscreteLoop::straight(WindingClass(vec![1, 0]), 16, &[0.5, 1.5]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&l).unwrap();
        assert_eq!(v["alpha"], serde_json::json!([1, 0]));
        assert_eq!(v["samples"][3], serde_json::json!([0.5, 1.5]));
    }
}
