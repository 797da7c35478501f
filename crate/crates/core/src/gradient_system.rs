//! Shared machinery for negative gradient flows of functions on periodic
//! configurations: states are row-major `rows × n` arrays whose coordinates
//! live on circles of circumference 2π, so two states that differ by a
//! constant lattice vector `2π m` describe the same point.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::spectral::Spectral;
use crate::torus_loops::{l2_norm, CIRCUMFERENCE};

pub const DEGENERACY_THRESHOLD: f64 = 1e-6;
pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_STEPS: usize = 50;

pub trait GradientSystem: Sync {
    fn rows(&self) -> usize;
    fn dim(&self) -> usize;

    fn len(&self) -> usize {
        self.rows() * self.dim()
    }

    fn value(&self, x: &[f64]) -> f64;

    /// Negative gradient in the metric `⟨a, b⟩ = Σ a·b / rows`.
    fn descent(&self, x: &[f64]) -> Vec<f64>;

    /// Hessian in the same metric, as a symmetric matrix.
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    /// Derivative of [`GradientSystem::descent`] at `x` applied to `xi`.
    fn descent_linear(&self, x: &[f64], xi: &[f64]) -> Vec<f64>;

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / self.rows() as f64
    }

    fn norm(&self, v: &[f64]) -> f64 {
        l2_norm(v, self.rows())
    }

    /// Advance the flow `∂_s x = descent(x)` and its linearization by `ds`.
    /// The default is classical RK4.
    fn advance(&self, x: &mut Vec<f64>, tangents: &mut [Vec<f64>], ds: f64) {
        let eval = |x: &[f64], ts: &[Vec<f64>]| -> (Vec<f64>, Vec<Vec<f64>>) {
            (self.descent(x), ts.iter().map(|t| self.descent_linear(x, t)).collect())
        };
        let axpy = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> { base.iter().zip(k).map(|(b, d)| b + h * d).collect() };
        let stage = |x: &[f64], ts: &[Vec<f64>], kx: &[f64], kt: &[Vec<f64>], h: f64| {
            let xs = axpy(x, kx, h);
            let tss: Vec<Vec<f64>> = ts.iter().zip(kt).map(|(t, k)| axpy(t, k, h)).collect();
            (xs, tss)
        };
        let (k1, t1) = eval(x, tangents);
        let (x2, ts2) = stage(x, tangents, &k1, &t1, ds / 2.0);
        let (k2, t2) = eval(&x2, &ts2);
        let (x3, ts3) = stage(x, tangents, &k2, &t2, ds / 2.0);
        let (k3, t3) = eval(&x3, &ts3);
        let (x4, ts4) = stage(x, tangents, &k3, &t3, ds);
        let (k4, t4) = eval(&x4, &ts4);
        for i in 0..x.len() {
            x[i] += ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for (m, t) in tangents.iter_mut().enumerate() {
            for i in 0..t.len() {
                t[i] += ds / 6.0 * (t1[m][i] + 2.0 * t2[m][i] + 2.0 * t3[m][i] + t4[m][i]);
            }
        }
    }
}

/// Integer lattice shift `m` minimizing `‖a − b − 2π m‖` for constant shifts per coordinate.
pub fn lattice_offset(a: &[f64], b: &[f64], n: usize) -> Vec<i64> {
    let rows = a.len() / n;
    (0..n)
        .map(|k| {
            let mean: f64 = (0..rows).map(|j| a[j * n + k] - b[j * n + k]).sum::<f64>() / rows as f64;
            (mean / CIRCUMFERENCE).round() as i64
        })
        .collect()
}

pub fn shifted(x: &[f64], n: usize, m: &[i64]) -> Vec<f64> {
    x.iter().enumerate().map(|(i, v)| v + CIRCUMFERENCE * m[i % n] as f64).collect()
}

/// L² distance between `a` and the nearest lattice translate of `b`, with that translate.
pub fn lattice_distance(a: &[f64], b: &[f64], n: usize) -> (f64, Vec<i64>) {
    let m = lattice_offset(a, b, n);
    let bs = shifted(b, n, &m);
    let diff: Vec<f64> = a.iter().zip(&bs).map(|(p, q)| p - q).collect();
    (l2_norm(&diff, a.len() / n), m)
}

/// Representative with every coordinate mean in `[-π/2, 3π/2)`.
pub fn normalize_lattice(x: &[f64], n: usize) -> Vec<f64> {
    let rows = x.len() / n;
    let m: Vec<i64> = (0..n)
        .map(|k| {
            let mean: f64 = (0..rows).map(|j| x[j * n + k]).sum::<f64>() / rows as f64;
            -((mean + CIRCUMFERENCE / 4.0) / CIRCUMFERENCE).floor() as i64
        })
        .collect();
    shifted(x, n, &m)
}

/// Damped Newton iteration on `descent(x) = 0`; the step is halved until the
/// residual norm decreases.
pub fn newton<S: GradientSystem + ?Sized>(sys: &S, seed: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let mut x = seed;
    let mut g = sys.descent(&x);
    let mut res = sys.norm(&g);
    for _ in 0..NEWTON_MAX_STEPS {
        if res < NEWTON_TOLERANCE {
            return Ok((x, res));
        }
        let h = sys.hessian(&x);
        // Hessian step: H δ = −grad = descent.
        let delta = match h.lu().solve(&DVector::from_vec(g.clone())) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                return Err(Error::DegenerateCritical { gap: 0.0, threshold: DEGENERACY_THRESHOLD });
            }
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + lambda * d).collect();
            let gt = sys.descent(&trial);
            let rt = sys.norm(&gt);
            if rt.is_finite() && rt < res {
                x = trial;
                g = gt;
                res = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // Residual stuck at the rounding floor of the discrete operator.
            break;
        }
    }
    if res < NEWTON_TOLERANCE {
        Ok((x, res))
    } else {
        Err(Error::NoConvergence { iterations: NEWTON_MAX_STEPS, residual: res })
    }
}

/// Second-variation data at a critical configuration.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// All eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub index: usize,
    pub gap: f64,
    /// Oriented, L²-unit basis of the negative eigenspace.
    pub unstable: Vec<Vec<f64>>,
}

pub fn analyze<S: GradientSystem + ?Sized>(sys: &S, x: &[f64]) -> Result<Spectrum> {
    let h = sys.hessian(x);
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let gap = eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if gap < DEGENERACY_THRESHOLD {
        return Err(Error::DegenerateCritical { gap, threshold: DEGENERACY_THRESHOLD });
    }
    let index = eigenvalues.iter().filter(|v| **v < 0.0).count();
    let scale = (sys.rows() as f64).sqrt();
    let vectors: Vec<Vec<f64>> =
        order[..index].iter().map(|&i| eig.eigenvectors.column(i).iter().map(|v| v * scale).collect()).collect();
    let unstable = canonical_basis(sys, &eigenvalues[..index], vectors);
    Ok(Spectrum { eigenvalues, index, gap, unstable })
}

/// Orientation convention for a negative eigenspace: nondegenerate vectors
/// keep their eigenvalue order; clusters of equal eigenvalues are rotated
/// onto the constant coordinate directions (in coordinate order) where they
/// contain them. Every vector is then signed so that its first nonzero
/// Fourier coefficient is positive.
fn canonical_basis<S: GradientSystem + ?Sized>(sys: &S, values: &[f64], vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = sys.dim();
    let rows = sys.rows();
    let mut out = Vec::with_capacity(vectors.len());
    let mut start = 0;
    while start < values.len() {
        let mut end = start + 1;
        while end < values.len() && (values[end] - values[start]).abs() < 1e-6 * values[start].abs().max(1.0) {
            end += 1;
        }
        let cluster = &vectors[start..end];
        if cluster.len() == 1 {
            out.push(cluster[0].clone());
        } else {
            let project = |v: &[f64]| -> Vec<f64> {
                let mut p = vec![0.0; v.len()];
                for b in cluster {
                    let c = sys.inner(v, b);
                    for (pi, bi) in p.iter_mut().zip(b) {
                        *pi += c * bi;
                    }
                }
                p
            };
            let mut chosen: Vec<Vec<f64>> = Vec::new();
            let references = (0..n).map(|k| {
                let mut e = vec![0.0; rows * n];
                for j in 0..rows {
                    e[j * n + k] = 1.0;
                }
                e
            });
            for cand in references.map(|e| project(&e)).chain(cluster.iter().cloned()) {
                if chosen.len() == cluster.len() {
                    break;
                }
                if let Some(v) = orthonormalize(sys, cand, &chosen) {
                    chosen.push(v);
                }
            }
            out.extend(chosen);
        }
        start = end;
    }
    out.into_iter().map(|v| orient(&v, n, rows)).collect()
}

fn orthonormalize<S: GradientSystem + ?Sized>(sys: &S, mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let before = sys.norm(&v);
    for b in basis {
        let c = sys.inner(&v, b);
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi -= c * bi;
        }
    }
    let after = sys.norm(&v);
    if after < 0.1 * before.max(1e-300) || after < 1e-12 {
        return None;
    }
    Some(v.into_iter().map(|x| x / after).collect())
}

fn orient(v: &[f64], n: usize, rows: usize) -> Vec<f64> {
    let sp = Spectral::shared(rows);
    let tol = 1e-8 * rows as f64;
    for k in 0..n {
        let col: Vec<f64> = v.iter().skip(k).step_by(n).copied().collect();
        let spec = sp.forward(&col);
        for c in spec.iter().take(rows / 2 + 1) {
            for part in [c.re, c.im] {
                if part.abs() > tol {
                    return if part > 0.0 { v.to_vec() } else { v.iter().map(|x| -x).collect() };
                }
            }
        }
    }
    v.to_vec()
}

/// Gram–Schmidt in place; keeps orientation (positive diagonal of R).
pub fn gram_schmidt<S: GradientSystem + ?Sized>(sys: &S, vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(i);
        let v = &mut rest[0];
        for b in done.iter() {
            let c = sys.inner(v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let nrm = sys.norm(v);
        if nrm > 0.0 {
            for vi in v.iter_mut() {
                *vi /= nrm;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_distance_ignores_full_turns() {
        let a = vec![0.1, 3.0, 0.1, 3.0];
        let b = vec![0.1 - CIRCUMFERENCE, 3.0 + 2.0 * CIRCUMFERENCE, 0.1 - CIRCUMFERENCE, 3.0 + 2.0 * CIRCUMFERENCE];
        let (d, m) = lattice_distance(&a, &b, 2);
        assert!(d < 1e-12);
        assert_eq!(m, vec![1, -2]);
    }

    #[test]
    fn normalization_window() {
        let x = vec![CIRCUMFERENCE + 0.01, -3.0];
        let y = normalize_lattice(&x, 2);
        assert!((y[0] - 0.01).abs() < 1e-12);
        assert!((y[1] - (CIRCUMFERENCE - 3.0)).abs() < 1e-12);
    }
}
