//! The ε-Floer system on a truncated cylinder [−S, S] × S¹:
//!
//! ```text
//! ∂_s u − ∂_t v − ∇V_t(u) = 0
//! ∂_s v + ε⁻²(∂_t u − v) = 0
//! ```
//!
//! `u = 2παt + y` is stored through its periodic displacement `y`. The
//! t-direction is spectral and the s-direction uses two-stage Gauss
//! collocation. At each end only the components that must decay are
//! constrained, through the spectral projectors of the linearization at the
//! asymptotic orbit. The s-translation is fixed by asking the symplectic
//! action of the s = 0 slice to equal the mean of the endpoint actions.
//! Residual and energy diagnostics use a sixth-order stencil in s so they
//! apply to any grid.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::critical_points::{CriticalPoint, LoopFunctional};
use crate::error::{Error, Result};
use crate::gradient_system::{shifted, GradientSystem};
use crate::heat_flow::FlowLine;
use crate::potentials::Potential;
use crate::spectral::Spectral;
use crate::torus_loops::{map_columns, DiscreteLoop, WindingClass, CIRCUMFERENCE};

/// Sixth-order central first-derivative weights at offsets −3..=3.
const STENCIL: [f64; 7] = [-1.0 / 60.0, 3.0 / 20.0, -3.0 / 4.0, 0.0, 3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
const HALO: usize = 3;
/// Truncation target for the linearized decay `e^{−gap·S}`.
const DECAY_TARGET: f64 = 1e-9;
const S_MARGIN: f64 = 3.0;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
const ANCHOR_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec {
    pub ns: usize,
    pub nt: usize,
    /// Half-length S; derived from the spectral gaps when absent.
    #[serde(default)]
    pub s_half: Option<f64>,
    /// Lattice translate of the target orbit; zero when absent.
    #[serde(default)]
    pub target_shift: Option<Vec<i64>>,
    pub max_newton: usize,
    pub tol: f64,
}

impl Default for CylinderSpec {
    fn default() -> Self {
        Self { ns: 400, nt: 16, s_half: None, target_shift: None, max_newton: 30, tol: 1e-9 }
    }
}

impl CylinderSpec {
    pub fn half_length(&self, source: &CriticalPoint, target: &CriticalPoint) -> f64 {
        self.s_half.unwrap_or_else(|| {
            let gap = source.gap.min(target.gap);
            (1.0 / DECAY_TARGET).ln() / gap + S_MARGIN
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CylinderGrid {
    pub alpha: WindingClass,
    pub epsilon: f64,
    pub s_half: f64,
    pub ns: usize,
    pub nt: usize,
    /// Displacement of u, `(ns + 1) × nt × n` row-major.
    #[serde(skip)]
    pub u: Vec<f64>,
    /// Fiber component, same layout.
    #[serde(skip)]
    pub v: Vec<f64>,
    pub source_action: f64,
    pub target_action: f64,
    pub newton_steps: usize,
    pub residual_norm: f64,
}

impl CylinderGrid {
    pub fn dim(&self) -> usize {
        self.alpha.dim()
    }

    pub fn ds(&self) -> f64 {
        2.0 * self.s_half / self.ns as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        -self.s_half + i as f64 * self.ds()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.nt as f64
    }

    fn slab(&self) -> usize {
        self.nt * self.dim()
    }

    pub fn u_slice(&self, i: usize) -> &[f64] {
        let m = self.slab();
        &self.u[i * m..(i + 1) * m]
    }

    pub fn v_slice(&self, i: usize) -> &[f64] {
        let m = self.slab();
        &self.v[i * m..(i + 1) * m]
    }

    pub fn slice_loop(&self, i: usize) -> Result<DiscreteLoop> {
        DiscreteLoop::new(self.alpha.clone(), self.nt, self.u_slice(i).to_vec())
    }

    pub fn middle(&self) -> usize {
        self.ns / 2
    }

    /// Rows `s,t,u_1..u_n,v_1..v_n` with u the full position `2παt + y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.dim();
        let mut header = vec!["s".to_string(), "t".to_string()];
        header.extend((1..=n).map(|k| format!("u{k}")));
        header.extend((1..=n).map(|k| format!("v{k}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..=self.ns {
            for j in 0..self.nt {
                let t = self.time(j);
                let mut row = vec![format!("{:.10e}", self.s(i)), format!("{t:.10e}")];
                let base = (i * self.nt + j) * n;
                for k in 0..n {
                    row.push(format!("{:.15e}", CIRCUMFERENCE * self.alpha.0[k] as f64 * t + self.u[base + k]));
                }
                for k in 0..n {
                    row.push(format!("{:.15e}", self.v[base + k]));
                }
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// `(∫∫ |ξ|² + ε²|η|²)^{1/2}` with rectangle quadrature in s and t.
pub fn weighted_norm(xi: &[f64], eta: &[f64], epsilon: f64, ds: f64, nt: usize) -> f64 {
    let w = ds / nt as f64;
    let s: f64 = xi.iter().map(|x| x * x).sum::<f64>() + epsilon * epsilon * eta.iter().map(|x| x * x).sum::<f64>();
    (w * s).sqrt()
}

/// Discrete operators shared by residual, Jacobian and diagnostics.
struct Ops {
    alpha: WindingClass,
    potential: Potential,
    n: usize,
    nt: usize,
    spectral: Arc<Spectral>,
    d1: DMatrix<f64>,
    /// `D² − (D¹)²`, nonzero only on the Nyquist mode of an even grid.
    nyquist: DMatrix<f64>,
}

impl Ops {
    fn new(potential: &Potential, alpha: &WindingClass, nt: usize) -> Result<Self> {
        if potential.dim() != alpha.dim() {
            return Err(Error::DimensionMismatch { expected: alpha.dim(), got: potential.dim() });
        }
        let spectral = Spectral::shared(nt);
        let d1 = spectral.derivative_matrix();
        let nyquist = spectral.second_derivative_matrix() - &d1 * &d1;
        Ok(Self { alpha: alpha.clone(), potential: potential.clone(), n: alpha.dim(), nt, spectral, d1, nyquist })
    }

    fn time(&self, j: usize) -> f64 {
        j as f64 / self.nt as f64
    }

    fn point(&self, j: usize, y: &[f64]) -> Vec<f64> {
        let t = self.time(j);
        (0..self.n).map(|k| CIRCUMFERENCE * self.alpha.0[k] as f64 * t + y[j * self.n + k]).collect()
    }

    fn dt(&self, f: &[f64]) -> Vec<f64> {
        map_columns(f, self.n, |c| self.spectral.derivative(c))
    }

    /// ∂_t u = 2πα + ∂_t y.
    fn velocity(&self, y: &[f64]) -> Vec<f64> {
        let mut d = self.dt(y);
        for (i, x) in d.iter_mut().enumerate() {
            *x += CIRCUMFERENCE * self.alpha.0[i % self.n] as f64;
        }
        d
    }

    /// `∂_t v + ∇V_t(u)`, with the Nyquist mode of y carrying the second
    /// derivative the first-order form cannot resolve.
    fn forcing(&self, y: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = self.dt(v);
        for (o, g) in out.iter_mut().zip(self.grad(y)) {
            *o += g;
        }
        for a in 0..self.nt {
            for b in 0..self.nt {
                let c = self.nyquist[(a, b)];
                if c != 0.0 {
                    for k in 0..n {
                        out[a * n + k] += c * y[b * n + k];
                    }
                }
            }
        }
        out
    }

    fn grad(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; y.len()];
        for j in 0..self.nt {
            self.potential.add_gradient(self.time(j), &self.point(j, y), &mut out[j * n..(j + 1) * n]);
        }
        out
    }

    /// `A_V(x, v) = ∫ v·ẋ − ½|v|² − V_t(x)`.
    fn action(&self, y: &[f64], v: &[f64]) -> f64 {
        let xd = self.velocity(y);
        let mut total: f64 = v.iter().zip(&xd).map(|(p, q)| p * q - 0.5 * p * p).sum();
        for j in 0..self.nt {
            total -= self.potential.value(self.time(j), &self.point(j, y));
        }
        total / self.nt as f64
    }
}

/// `A_V(x, y) = ∫ ⟨y, ẋ⟩ − ½|y|² − V_t(x)` for a loop and a fiber field on its grid.
pub fn symplectic_action(x: &DiscreteLoop, fiber: &[f64], v: &Potential) -> Result<f64> {
    if fiber.len() != x.displacement().len() {
        return Err(Error::DimensionMismatch { expected: x.displacement().len(), got: fiber.len() });
    }
    let ops = Ops::new(v, x.alpha(), x.samples())?;
    Ok(ops.action(x.displacement(), fiber))
}

fn stencil_derivative(data: &[f64], i: usize, m: usize, ds: f64) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (k, c) in STENCIL.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        let node = i + k - HALO;
        for q in 0..m {
            out[q] += c * data[node * m + q] / ds;
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FloerResidual {
    /// `∂_s u − ∂_t v − ∇V_t(u)` on every node (zero on pinned rows).
    #[serde(skip)]
    pub first: Vec<f64>,
    /// `ε²∂_s v + (∂_t u − v)`, the second component pre-multiplied by ε².
    #[serde(skip)]
    pub second_scaled: Vec<f64>,
    /// ‖·‖_{0,2,ε} of the unscaled pair.
    pub norm: f64,
}

fn residual_fields(ops: &Ops, grid: &CylinderGrid) -> (Vec<f64>, Vec<f64>) {
    let m = grid.slab();
    let ds = grid.ds();
    let e2 = grid.epsilon * grid.epsilon;
    let mut r1 = vec![0.0; grid.u.len()];
    let mut r2 = vec![0.0; grid.u.len()];
    for i in HALO..=grid.ns - HALO {
        let y = grid.u_slice(i);
        let v = grid.v_slice(i);
        let ys = stencil_derivative(&grid.u, i, m, ds);
        let vs = stencil_derivative(&grid.v, i, m, ds);
        let f = ops.forcing(y, v);
        let xd = ops.velocity(y);
        for q in 0..m {
            r1[i * m + q] = ys[q] - f[q];
            r2[i * m + q] = e2 * vs[q] + xd[q] - v[q];
        }
    }
    (r1, r2)
}

pub fn floer_residual(grid: &CylinderGrid, v: &Potential) -> Result<FloerResidual> {
    let ops = Ops::new(v, &grid.alpha, grid.nt)?;
    let (first, second_scaled) = residual_fields(&ops, grid);
    let e2 = grid.epsilon * grid.epsilon;
    let unscaled: Vec<f64> = second_scaled.iter().map(|x| x / e2).collect();
    let norm = weighted_norm(&first, &unscaled, grid.epsilon, grid.ds(), grid.nt);
    Ok(FloerResidual { first, second_scaled, norm })
}

/// `E^ε = ½∫∫ |∂_s u|² + |∂_t v + ∇V_t(u)|² + ε²|∂_s v|² + ε⁻²|∂_t u − v|²`.
pub fn energy(grid: &CylinderGrid, v: &Potential) -> Result<f64> {
    let ops = Ops::new(v, &grid.alpha, grid.nt)?;
    let m = grid.slab();
    let ds = grid.ds();
    let e2 = grid.epsilon * grid.epsilon;
    let mut total = 0.0;
    for i in 0..=grid.ns {
        let y = grid.u_slice(i);
        let p = grid.v_slice(i);
        let f = ops.forcing(y, p);
        let xd = ops.velocity(y);
        let interior = (HALO..=grid.ns - HALO).contains(&i);
        let (ys, vs) = if interior {
            (stencil_derivative(&grid.u, i, m, ds), stencil_derivative(&grid.v, i, m, ds))
        } else {
            (vec![0.0; m], vec![0.0; m])
        };
        for q in 0..m {
            let a = f[q];
            let b = xd[q] - p[q];
            total += ys[q] * ys[q] + a * a + e2 * vs[q] * vs[q] + b * b / e2;
        }
    }
    Ok(0.5 * total * ds / grid.nt as f64)
}

/// Symplectic action of every s-slice.
pub fn slice_actions(grid: &CylinderGrid, v: &Potential) -> Result<Vec<f64>> {
    let ops = Ops::new(v, &grid.alpha, grid.nt)?;
    Ok((0..=grid.ns).map(|i| ops.action(grid.u_slice(i), grid.v_slice(i))).collect())
}

/// Two-stage Gauss–Legendre collocation in s.
const GAUSS_C: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];
const GAUSS_A: [[f64; 2]; 2] = [[0.25, 0.25 - 0.288_675_134_594_812_9], [0.25 + 0.288_675_134_594_812_9, 0.25]];
const GAUSS_B: [f64; 2] = [0.5, 0.5];

/// First-order form `∂_s w = f(w)` with `w = (y, v)`. Equations for `v` are
/// multiplied by ε², so `g = (∂_t v + ∇V, v − ∂_t u)` and `S ∂_s w = g(w)`
/// with `S = diag(1, ε²)`.
struct Collocation {
    ops: Ops,
    ns: usize,
    h: f64,
    e2: f64,
    mid: usize,
    anchor: f64,
    source: Vec<f64>,
    target: Vec<f64>,
    /// Rows annihilating the stable part of `w(−S) − w⁻`.
    left: DMatrix<f64>,
    /// Rows annihilating the unstable part of `w(S) − w⁺`.
    right: DMatrix<f64>,
}

/// Nodes `(ns + 1) × [y, v]` and two stages per cell.
#[derive(Clone)]
struct State {
    nodes: Vec<f64>,
    stages: Vec<f64>,
}

struct Defects {
    stage: Vec<f64>,
    node: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    anchor: f64,
}

/// Matrix sign function by scaled Newton iteration.
fn sign_matrix(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut z = m.clone();
    for _ in 0..100 {
        let inv = z.clone().try_inverse().ok_or_else(|| Error::InvalidArgument("asymptotic linearization has imaginary spectrum".into()))?;
        let c = (inv.norm() / z.norm()).sqrt();
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if change < 1e-14 {
            return Ok(z);
        }
    }
    Err(Error::NoConvergence { iterations: 100, residual: f64::NAN })
}

/// Orthonormal rows spanning the row space of a projector.
fn projector_rows(p: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = p.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > 0.5).collect();
    DMatrix::from_fn(keep.len(), p.ncols(), |r, c| vt[(keep[r], c)])
}

impl Collocation {
    fn new(ops: Ops, ns: usize, s_half: f64, epsilon: f64, ends: &Endpoints) -> Result<Self> {
        let m = ops.nt * ops.n;
        let e2 = epsilon * epsilon;
        let mut col = Self {
            ops,
            ns,
            h: 2.0 * s_half / ns as f64,
            e2,
            mid: ns / 2,
            anchor: 0.5 * (ends.source_action + ends.target_action),
            source: [ends.source.clone(), Vec::new()].concat(),
            target: [ends.target.clone(), Vec::new()].concat(),
            left: DMatrix::zeros(0, 2 * m),
            right: DMatrix::zeros(0, 2 * m),
        };
        col.source.extend(col.ops.velocity(&ends.source));
        col.target.extend(col.ops.velocity(&ends.target));
        let id = DMatrix::<f64>::identity(2 * m, 2 * m);
        let flow = |w: &[f64]| -> DMatrix<f64> {
            // ∂_s w = S⁻¹ g(w)
            let mut j = col.g_jacobian(w);
            for r in m..2 * m {
                for c in 0..2 * m {
                    j[(r, c)] /= e2;
                }
            }
            j
        };
        let sl = sign_matrix(&flow(&col.source))?;
        let sr = sign_matrix(&flow(&col.target))?;
        col.left = projector_rows(&((&id - &sl) * 0.5));
        col.right = projector_rows(&((&id + &sr) * 0.5));
        if col.left.nrows() + col.right.nrows() + 1 != 2 * m {
            return Err(Error::InvalidArgument(format!(
                "asymptotic dimensions {} + {} do not fit an index drop of one",
                col.left.nrows(),
                col.right.nrows()
            )));
        }
        Ok(col)
    }

    fn slab(&self) -> usize {
        self.ops.nt * self.ops.n
    }

    fn width(&self) -> usize {
        2 * self.slab()
    }

    fn g(&self, w: &[f64]) -> Vec<f64> {
        let m = self.slab();
        let (y, v) = w.split_at(m);
        let mut out = self.ops.forcing(y, v);
        let xd = self.ops.velocity(y);
        out.extend(v.iter().zip(&xd).map(|(a, b)| a - b));
        out
    }

    /// `∂g/∂w = [[∇²V, D_t], [−D_t, 1]]`.
    fn g_jacobian(&self, w: &[f64]) -> DMatrix<f64> {
        let (n, nt) = (self.ops.n, self.ops.nt);
        let m = self.slab();
        let mut j = DMatrix::zeros(2 * m, 2 * m);
        let mut hess = DMatrix::zeros(n, n);
        for a in 0..nt {
            for b in 0..nt {
                let d = self.ops.d1[(a, b)];
                if d != 0.0 {
                    for c in 0..n {
                        j[(a * n + c, m + b * n + c)] = d;
                        j[(m + a * n + c, b * n + c)] = -d;
                    }
                }
            }
            for b in 0..nt {
                let c = self.ops.nyquist[(a, b)];
                if c != 0.0 {
                    for k in 0..n {
                        j[(a * n + k, b * n + k)] += c;
                    }
                }
            }
            hess.fill(0.0);
            self.ops.potential.add_hessian_block(self.ops.time(a), &self.ops.point(a, &w[..m]), &mut hess, 0);
            for r in 0..n {
                for c in 0..n {
                    j[(a * n + r, a * n + c)] += hess[(r, c)];
                }
            }
        }
        for q in m..2 * m {
            j[(q, q)] = 1.0;
        }
        j
    }

    /// Multiply the v-half by ε².
    fn scale(&self, d: &[f64]) -> Vec<f64> {
        let m = self.slab();
        d.iter().enumerate().map(|(q, x)| if q >= m { self.e2 * x } else { *x }).collect()
    }

    fn node<'a>(&self, st: &'a State, i: usize) -> &'a [f64] {
        let w = self.width();
        &st.nodes[i * w..(i + 1) * w]
    }

    fn stage<'a>(&self, st: &'a State, i: usize, a: usize) -> &'a [f64] {
        let w = self.width();
        &st.stages[(2 * i + a) * w..(2 * i + a + 1) * w]
    }

    fn anchor_defect(&self, st: &State) -> f64 {
        let m = self.slab();
        let w = self.node(st, self.mid);
        self.ops.action(&w[..m], &w[m..]) - self.anchor
    }

    fn defects(&self, st: &State) -> Defects {
        let w = self.width();
        let mut stage = vec![0.0; 2 * self.ns * w];
        let mut node = vec![0.0; self.ns * w];
        for i in 0..self.ns {
            let wi = self.node(st, i);
            let gs = [self.g(self.stage(st, i, 0)), self.g(self.stage(st, i, 1))];
            for a in 0..2 {
                let diff: Vec<f64> = self.stage(st, i, a).iter().zip(wi).map(|(p, q)| p - q).collect();
                let sd = self.scale(&diff);
                for q in 0..w {
                    stage[(2 * i + a) * w + q] = sd[q] - self.h * (GAUSS_A[a][0] * gs[0][q] + GAUSS_A[a][1] * gs[1][q]);
                }
            }
            let diff: Vec<f64> = self.node(st, i + 1).iter().zip(wi).map(|(p, q)| p - q).collect();
            let sd = self.scale(&diff);
            for q in 0..w {
                node[i * w + q] = sd[q] - self.h * (GAUSS_B[0] * gs[0][q] + GAUSS_B[1] * gs[1][q]);
            }
        }
        let d0: Vec<f64> = self.node(st, 0).iter().zip(&self.source).map(|(p, q)| p - q).collect();
        let dn: Vec<f64> = self.node(st, self.ns).iter().zip(&self.target).map(|(p, q)| p - q).collect();
        let left = (&self.left * nalgebra::DVector::from_vec(d0)).iter().copied().collect();
        let right = (&self.right * nalgebra::DVector::from_vec(dn)).iter().copied().collect();
        Defects { stage, node, left, right, anchor: self.anchor_defect(st) }
    }

    /// Weighted collocation residual: defects divided by h in ‖·‖_{0,2,ε}.
    fn residual_norm(&self, d: &Defects) -> f64 {
        let m = self.slab();
        let w = self.width();
        let mut total = 0.0;
        for chunk in d.stage.chunks(w).chain(d.node.chunks(w)) {
            for (q, x) in chunk.iter().enumerate() {
                total += if q < m { x * x } else { x * x / self.e2 };
            }
        }
        (total / (self.h * self.ops.nt as f64)).sqrt()
    }

    fn merit(&self, d: &Defects) -> f64 {
        let r = self.residual_norm(d);
        r * r + d.left.iter().chain(&d.right).map(|x| x * x).sum::<f64>() + d.anchor * d.anchor
    }

    fn anchor_gradient(&self, st: &State) -> Vec<f64> {
        let (n, nt) = (self.ops.n, self.ops.nt);
        let m = self.slab();
        let w = self.node(st, self.mid);
        let (y, v) = w.split_at(m);
        let g = self.ops.grad(y);
        let xd = self.ops.velocity(y);
        let mut out = vec![0.0; 2 * m];
        for l in 0..nt {
            for c in 0..n {
                let dty: f64 = (0..nt).map(|j| self.ops.d1[(j, l)] * v[j * n + c]).sum();
                out[l * n + c] = (dty - g[l * n + c]) / nt as f64;
                out[m + l * n + c] = (xd[l * n + c] - v[l * n + c]) / nt as f64;
            }
        }
        out
    }

    /// Newton correction with the stage unknowns eliminated cell by cell.
    fn newton_step(&self, st: &State, d: &Defects) -> Result<State> {
        let w = self.width();
        let m = self.slab();
        let h = self.h;
        let sdiag: Vec<f64> = (0..w).map(|q| if q < m { 1.0 } else { self.e2 }).collect();
        let rl = self.left.nrows();
        let unknowns = (self.ns + 1) * w;
        let band = 2 * w + 2;
        let mut a = BandMatrix::new(unknowns, band, band);
        let mut rhs = vec![0.0; unknowns];
        for r in 0..rl {
            for c in 0..w {
                a.add(r, c, self.left[(r, c)]);
            }
            rhs[r] = -d.left[r];
        }
        let row_of = |i: usize| rl + i * w + usize::from(i >= self.mid);
        // Per cell: δW = a_i + B_i δw_i.
        let mut local: Vec<(DMatrix<f64>, nalgebra::DVector<f64>)> = Vec::with_capacity(self.ns);
        let fail = || Error::NoConvergence { iterations: 0, residual: f64::INFINITY };
        for i in 0..self.ns {
            let gj = [self.g_jacobian(self.stage(st, i, 0)), self.g_jacobian(self.stage(st, i, 1))];
            let mut k = DMatrix::zeros(2 * w, 2 * w);
            for p in 0..2 {
                for q in 0..2 {
                    let blk = &gj[q] * (-h * GAUSS_A[p][q]);
                    k.view_mut((p * w, q * w), (w, w)).copy_from(&blk);
                }
                for r in 0..w {
                    k[(p * w + r, p * w + r)] += sdiag[r];
                }
            }
            let mut sblk = DMatrix::zeros(2 * w, w);
            for p in 0..2 {
                for r in 0..w {
                    sblk[(p * w + r, r)] = sdiag[r];
                }
            }
            let lu = k.lu();
            let b = lu.solve(&sblk).ok_or_else(fail)?;
            let r_stage = nalgebra::DVector::from_iterator(2 * w, d.stage[2 * i * w..(2 * i + 2) * w].iter().map(|x| -x));
            let av = lu.solve(&r_stage).ok_or_else(fail)?;
            // Node row: S δw_{i+1} − (S + C B) δw_i = −Q + C a.
            let mut c = DMatrix::zeros(w, 2 * w);
            for q in 0..2 {
                c.view_mut((0, q * w), (w, w)).copy_from(&(&gj[q] * (h * GAUSS_B[q])));
            }
            let cb = &c * &b;
            let ca = &c * &av;
            let row = row_of(i);
            for r in 0..w {
                a.add(row + r, (i + 1) * w + r, sdiag[r]);
                for col in 0..w {
                    let mut v = -cb[(r, col)];
                    if r == col {
                        v -= sdiag[r];
                    }
                    a.add(row + r, i * w + col, v);
                }
                rhs[row + r] = -d.node[i * w + r] + ca[r];
            }
            local.push((b, av));
        }
        let arow = rl + self.mid * w;
        for (c, g) in self.anchor_gradient(st).into_iter().enumerate() {
            a.add(arow, self.mid * w + c, g);
        }
        rhs[arow] = -d.anchor;
        let rr0 = unknowns - self.right.nrows();
        for r in 0..self.right.nrows() {
            for c in 0..w {
                a.add(rr0 + r, self.ns * w + c, self.right[(r, c)]);
            }
            rhs[rr0 + r] = -d.right[r];
        }
        let nodes = a.solve(rhs).ok_or_else(fail)?;
        let mut stages = Vec::with_capacity(2 * self.ns * w);
        for (i, (b, av)) in local.iter().enumerate() {
            let dw = nalgebra::DVector::from_column_slice(&nodes[i * w..(i + 1) * w]);
            stages.extend((av + b * dw).iter().copied());
        }
        Ok(State { nodes, stages })
    }

    fn apply(&self, st: &State, delta: &State, scale: f64) -> State {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + scale * y).collect();
        State { nodes: add(&st.nodes, &delta.nodes), stages: add(&st.stages, &delta.stages) }
    }

    /// Stage values from cubic Hermite interpolation of the nodes, with node
    /// derivatives from central differences.
    fn initial_state(&self, grid: &CylinderGrid) -> State {
        let w = self.width();
        let m = self.slab();
        let mut nodes = Vec::with_capacity((self.ns + 1) * w);
        for i in 0..=self.ns {
            nodes.extend_from_slice(grid.u_slice(i));
            nodes.extend_from_slice(grid.v_slice(i));
        }
        let deriv: Vec<Vec<f64>> = (0..=self.ns)
            .map(|i| {
                if (HALO..=self.ns - HALO).contains(&i) {
                    stencil_derivative(&nodes, i, w, self.h)
                } else {
                    let (lo, hi) = (i.saturating_sub(1), (i + 1).min(self.ns));
                    (0..w).map(|q| (nodes[hi * w + q] - nodes[lo * w + q]) / ((hi - lo) as f64 * self.h)).collect()
                }
            })
            .collect();
        let _ = m;
        let mut stages = Vec::with_capacity(2 * self.ns * w);
        for i in 0..self.ns {
            for c in GAUSS_C {
                let (c2, c3) = (c * c, c * c * c);
                let (h00, h10, h01, h11) = (2.0 * c3 - 3.0 * c2 + 1.0, c3 - 2.0 * c2 + c, -2.0 * c3 + 3.0 * c2, c3 - c2);
                for q in 0..w {
                    stages.push(
                        h00 * nodes[i * w + q]
                            + h10 * self.h * deriv[i][q]
                            + h01 * nodes[(i + 1) * w + q]
                            + h11 * self.h * deriv[i + 1][q],
                    );
                }
            }
        }
        State { nodes, stages }
    }

    fn store(&self, st: &State, grid: &mut CylinderGrid) {
        let w = self.width();
        let m = self.slab();
        for i in 0..=self.ns {
            grid.u[i * m..(i + 1) * m].copy_from_slice(&st.nodes[i * w..i * w + m]);
            grid.v[i * m..(i + 1) * m].copy_from_slice(&st.nodes[i * w + m..(i + 1) * w]);
        }
    }

    fn solve(&self, mut st: State, spec: &CylinderSpec) -> Result<(State, usize, f64)> {
        let mut iterations = 0;
        loop {
            let d = self.defects(&st);
            let merit = self.merit(&d);
            if merit.sqrt() < spec.tol && d.anchor.abs() < ANCHOR_TOLERANCE {
                return Ok((st, iterations, self.residual_norm(&d)));
            }
            if iterations >= spec.max_newton {
                return Err(Error::NoConvergence { iterations, residual: merit.sqrt() });
            }
            let delta = self.newton_step(&st, &d)?;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = self.apply(&st, &delta, scale);
                let mt = self.merit(&self.defects(&trial));
                if mt.is_finite() && mt < merit {
                    st = trial;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            iterations += 1;
            if !accepted {
                return Err(Error::NoConvergence { iterations, residual: merit.sqrt() });
            }
        }
    }
}

struct Endpoints {
    source: Vec<f64>,
    target: Vec<f64>,
    source_action: f64,
    target_action: f64,
}

fn endpoints(source: &CriticalPoint, target: &CriticalPoint, shift: &[i64], nt: usize) -> Result<Endpoints> {
    if (source.action - target.action).abs() < 1e-12 {
        return Err(Error::AnchorInfeasible);
    }
    if source.orbit.alpha() != target.orbit.alpha() {
        return Err(Error::InvalidArgument("endpoints lie in different classes".into()));
    }
    for p in [source, target] {
        if p.orbit.samples() != nt {
            return Err(Error::InvalidArgument(format!(
                "critical orbit has {} samples, the cylinder uses {nt}",
                p.orbit.samples()
            )));
        }
    }
    let n = source.orbit.dim();
    Ok(Endpoints {
        source: source.displacement().to_vec(),
        target: shifted(target.displacement(), n, shift),
        source_action: source.action,
        target_action: target.action,
    })
}

fn build_grid(
    ops: &Ops,
    ends: &Endpoints,
    epsilon: f64,
    s_half: f64,
    ns: usize,
    profile: impl Fn(f64) -> Vec<f64>,
) -> CylinderGrid {
    let m = ops.nt * ops.n;
    let ds = 2.0 * s_half / ns as f64;
    let mut u = vec![0.0; (ns + 1) * m];
    for i in 0..=ns {
        u[i * m..(i + 1) * m].copy_from_slice(&profile(-s_half + i as f64 * ds));
    }
    let v = (0..=ns).flat_map(|i| ops.velocity(&u[i * m..(i + 1) * m])).collect();
    CylinderGrid {
        alpha: ops.alpha.clone(),
        epsilon,
        s_half,
        ns,
        nt: ops.nt,
        u,
        v,
        source_action: ends.source_action,
        target_action: ends.target_action,
        newton_steps: 0,
        residual_norm: f64::NAN,
    }
}

fn check_spec(spec: &CylinderSpec, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    if spec.ns < 4 * HALO || spec.ns % 2 != 0 {
        return Err(Error::InvalidArgument(format!("ns must be even and at least {}", 4 * HALO)));
    }
    Ok(())
}

/// Newton solve of the ε-Floer system from `source` (s → −∞) to `target`
/// (s → +∞), started from a tanh blend of the two orbits.
pub fn solve_cylinder(
    source: &CriticalPoint,
    target: &CriticalPoint,
    v: &Potential,
    epsilon: f64,
    spec: &CylinderSpec,
) -> Result<CylinderGrid> {
    check_spec(spec, epsilon)?;
    let n = source.orbit.dim();
    let shift = spec.target_shift.clone().unwrap_or_else(|| vec![0; n]);
    let ends = endpoints(source, target, &shift, spec.nt)?;
    if source.index != target.index + 1 {
        return Err(Error::InvalidArgument(format!(
            "cylinder needs an index drop of one, got {} -> {}",
            source.index, target.index
        )));
    }
    let ops = Ops::new(v, source.orbit.alpha(), spec.nt)?;
    let s_half = spec.half_length(source, target);
    let grid = build_grid(&ops, &ends, epsilon, s_half, spec.ns, |s| {
        let w = 0.5 * (1.0 + s.tanh());
        ends.source.iter().zip(&ends.target).map(|(a, b)| a + w * (b - a)).collect()
    });
    let col = Collocation::new(ops, spec.ns, s_half, epsilon, &ends)?;
    finish(&col, grid, spec)
}

fn finish(col: &Collocation, mut grid: CylinderGrid, spec: &CylinderSpec) -> Result<CylinderGrid> {
    let (st, steps, residual) = col.solve(col.initial_state(&grid), spec)?;
    col.store(&st, &mut grid);
    grid.newton_steps = steps;
    grid.residual_norm = residual;
    if !(residual < RESIDUAL_TOLERANCE) {
        return Err(Error::NoConvergence { iterations: steps, residual });
    }
    Ok(grid)
}


/// `‖(ξ, η)‖_{1,2,ε}`: the 0-norm plus ε-weighted t- and s-derivatives
/// (weights ε², ε⁴ on ∂_t ξ, ∂_t η and ε⁴, ε⁶ on ∂_s ξ, ∂_s η).
pub fn sobolev_norm(xi: &[f64], eta: &[f64], grid: &CylinderGrid) -> Result<f64> {
    let n = grid.dim();
    let m = grid.slab();
    let ds = grid.ds();
    let e = grid.epsilon;
    let sp = Spectral::shared(grid.nt);
    let dt = |f: &[f64]| map_columns(f, n, |c| sp.derivative(c));
    let mut total = 0.0;
    for i in 0..=grid.ns {
        let x = &xi[i * m..(i + 1) * m];
        let h = &eta[i * m..(i + 1) * m];
        let (xt, ht) = (dt(x), dt(h));
        let interior = (HALO..=grid.ns - HALO).contains(&i);
        let (xs, hs) = if interior {
            (stencil_derivative(xi, i, m, ds), stencil_derivative(eta, i, m, ds))
        } else {
            (vec![0.0; m], vec![0.0; m])
        };
        for q in 0..m {
            total += x[q] * x[q]
                + e.powi(2) * h[q] * h[q]
                + e.powi(2) * xt[q] * xt[q]
                + e.powi(4) * ht[q] * ht[q]
                + e.powi(4) * xs[q] * xs[q]
                + e.powi(6) * hs[q] * hs[q];
        }
    }
    Ok((total * ds / grid.nt as f64).sqrt())
}

/// Parabolic trajectory laid onto the cylinder with `v = ∂_t u`, shifted so
/// that its action at s = 0 is the mean of the endpoint actions.
pub fn parabolic_cylinder(
    line: &FlowLine,
    source: &CriticalPoint,
    target: &CriticalPoint,
    v: &Potential,
    epsilon: f64,
    spec: &CylinderSpec,
) -> Result<CylinderGrid> {
    check_spec(spec, epsilon)?;
    if line.slices.len() < 2 {
        return Err(Error::InvalidArgument("flow line carries no recorded slices".into()));
    }
    let ends = endpoints(source, target, &line.target_shift, spec.nt)?;
    let f = LoopFunctional::new(v, source.orbit.alpha(), spec.nt)?;
    let ops = Ops::new(v, source.orbit.alpha(), spec.nt)?;
    let s_half = spec.half_length(source, target);
    let derivs: Vec<Vec<f64>> = line.slices.iter().map(|y| f.descent(y)).collect();
    let grid_s = &line.s_grid;
    let hermite = |s: f64| -> Vec<f64> {
        let k = grid_s.partition_point(|x| *x <= s).clamp(1, grid_s.len() - 1) - 1;
        let h = grid_s[k + 1] - grid_s[k];
        let tau = (s - grid_s[k]) / h;
        let (t2, t3) = (tau * tau, tau * tau * tau);
        let (h00, h10, h01, h11) = (2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + tau, -2.0 * t3 + 3.0 * t2, t3 - t2);
        (0..line.slices[k].len())
            .map(|q| {
                h00 * line.slices[k][q]
                    + h10 * h * derivs[k][q]
                    + h01 * line.slices[k + 1][q]
                    + h11 * h * derivs[k + 1][q]
            })
            .collect()
    };
    // Before the shot the trajectory follows the unstable eigendirection.
    let rate = -source.spectrum_head.first().copied().unwrap_or(0.0);
    let first = &line.slices[0];
    let s_end = *grid_s.last().expect("non-empty grid");
    let at = |s: f64| -> Vec<f64> {
        if s <= 0.0 {
            let g = (rate * s).exp();
            ends.source.iter().zip(first).map(|(a, b)| a + g * (b - a)).collect()
        } else if s >= s_end {
            ends.target.clone()
        } else {
            hermite(s)
        }
    };
    let mean = 0.5 * (source.action + target.action);
    let k = line
        .actions
        .iter()
        .position(|a| *a <= mean)
        .ok_or_else(|| Error::InvalidArgument("flow line never reaches the mean action".into()))?;
    let (mut lo, mut hi) = (if k == 0 { 0.0 } else { grid_s[k - 1] }, grid_s[k]);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f.value(&at(mid)) > mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s_star = 0.5 * (lo + hi);
    Ok(build_grid(&ops, &ends, epsilon, s_half, spec.ns, |s| at(s + s_star)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticRow {
    pub epsilon: f64,
    /// ‖F_ε(u, ∂_t u)‖_{0,2,ε} of the parabolic trajectory.
    pub residual: f64,
    /// ‖Z‖_{1,2,ε} of one Newton correction from the parabolic trajectory.
    pub correction: f64,
    /// ‖u_ε − (u, ∂_t u)‖_{1,2,ε} to the converged cylinder, when it converges.
    pub distance: Option<f64>,
}

/// Residual, one-step correction and distance to the solved cylinder for
/// the parabolic trajectory at each ε.
pub fn adiabatic_compare(
    line: &FlowLine,
    catalogue: &[CriticalPoint],
    v: &Potential,
    epsilons: &[f64],
    spec: &CylinderSpec,
) -> Result<Vec<AdiabaticRow>> {
    let source = catalogue.get(line.source_id).ok_or_else(|| Error::InvalidArgument("unknown source".into()))?;
    let target = catalogue.get(line.target_id).ok_or_else(|| Error::InvalidArgument("unknown target".into()))?;
    epsilons
        .par_iter()
        .map(|&eps| {
            let guess = parabolic_cylinder(line, source, target, v, eps, spec)?;
            let residual = floer_residual(&guess, v)?.norm;
            let ops = Ops::new(v, &guess.alpha, guess.nt)?;
            let ends = endpoints(source, target, &line.target_shift, spec.nt)?;
            let col = Collocation::new(ops, guess.ns, guess.s_half, eps, &ends)?;
            let start = col.initial_state(&guess);
            let delta = col.newton_step(&start, &col.defects(&start))?;
            let stepped = col.apply(&start, &delta, 1.0);
            let diff = |st: &State| -> Result<f64> {
                let mut g = guess.clone();
                col.store(st, &mut g);
                let xi: Vec<f64> = g.u.iter().zip(&guess.u).map(|(a, b)| a - b).collect();
                let eta: Vec<f64> = g.v.iter().zip(&guess.v).map(|(a, b)| a - b).collect();
                sobolev_norm(&xi, &eta, &guess)
            };
            let correction = diff(&stepped)?;
            let distance = match col.solve(stepped, spec) {
                Ok((solved, _, _)) => Some(diff(&solved)?),
                Err(Error::NoConvergence { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(AdiabaticRow { epsilon: eps, residual, correction, distance })
        })
        .collect()
}

/// `σ(s) = 2 arctan(e^{−s})`, the heteroclinic of `σ' = −sin σ` through π/2 at s = 0.
pub fn ansatz_sigma(s: f64) -> f64 {
    2.0 * (-s).exp().atan()
}

/// Largest pointwise deviation of the first displacement coordinate from
/// `σ(s)` and of `v` from its value `2πα` on a straight loop.
pub fn ansatz_deviation(grid: &CylinderGrid) -> f64 {
    let n = grid.dim();
    let mut worst: f64 = 0.0;
    for i in 0..=grid.ns {
        let sigma = ansatz_sigma(grid.s(i));
        for j in 0..grid.nt {
            let q = (i * grid.nt + j) * n;
            worst = worst.max((grid.u[q] - sigma).abs());
            for k in 0..n {
                worst = worst.max((grid.v[q + k] - 2.0 * PI * grid.alpha.0[k] as f64).abs());
            }
        }
    }
    worst
}

pub fn max_difference(a: &CylinderGrid, b: &CylinderGrid) -> Result<f64> {
    if a.u.len() != b.u.len() {
        return Err(Error::DimensionMismatch { expected: a.u.len(), got: b.u.len() });
    }
    Ok(a.u.iter().zip(&b.u).chain(a.v.iter().zip(&b.v)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical_points::{enumerate_critical, SeedLattice};
    use crate::potentials::pendulum_potential;
    use crate::torus_loops::action;

    fn pendulum() -> (WindingClass, Potential, Vec<CriticalPoint>) {
        let alpha = WindingClass(vec![1]);
        let v = pendulum_potential(&alpha);
        let pts = enumerate_critical(&v, &alpha, &SeedLattice::new(16)).unwrap();
        (alpha, v, pts)
    }

    #[test]
    fn symplectic_action_at_critical_orbits() {
        let (_, v, pts) = pendulum();
        for p in &pts {
            let ops = Ops::new(&v, p.orbit.alpha(), 16).unwrap();
            let fiber = ops.velocity(p.displacement());
            let a = symplectic_action(&p.orbit, &fiber, &v).unwrap();
            assert!((a - action(&p.orbit, &v).unwrap()).abs() < 1e-12);
        }
        assert!((pts[0].action - (2.0 * PI * PI - 1.0)).abs() < 1e-10);
        let zero = DiscreteLoop::straight(WindingClass(vec![0]), 16, &[0.3]).unwrap();
        assert_eq!(symplectic_action(&zero, &[0.0; 16], &Potential::zero(1)).unwrap(), 0.0);
    }

    #[test]
    fn stationary_cylinder_has_no_residual_or_energy() {
        let (_, v, pts) = pendulum();
        let ops = Ops::new(&v, pts[0].orbit.alpha(), 16).unwrap();
        let ends = Endpoints {
            source: pts[0].displacement().to_vec(),
            target: pts[0].displacement().to_vec(),
            source_action: pts[0].action,
            target_action: pts[0].action,
        };
        let grid = build_grid(&ops, &ends, 0.5, 5.0, 40, |_| ends.source.clone());
        assert!(floer_residual(&grid, &v).unwrap().norm < 1e-10);
        assert!(energy(&grid, &v).unwrap().abs() < 1e-20);
    }

    #[test]
    fn weighted_norm_is_monotone_in_epsilon() {
        let xi = vec![0.3, -0.2, 0.1];
        let eta = vec![0.5, 0.0, -1.0];
        let mut last = 0.0;
        for eps in [0.1, 0.2, 0.5, 1.0] {
            let w = weighted_norm(&xi, &eta, eps, 0.1, 1);
            assert!(w > last);
            last = w;
        }
        assert_eq!(weighted_norm(&[0.0; 3], &[0.0; 3], 0.5, 0.1, 1), 0.0);
    }

    #[test]
    fn identical_endpoints_are_rejected() {
        let (_, v, pts) = pendulum();
        let spec = CylinderSpec::default();
        assert_eq!(solve_cylinder(&pts[1], &pts[1], &v, 1.0, &spec).unwrap_err(), Error::AnchorInfeasible);
    }

    #[test]
    fn pendulum_cylinder_is_the_ansatz() {
        let (_, v, pts) = pendulum();
        let spec = CylinderSpec { ns: 200, ..CylinderSpec::default() };
        let grid = solve_cylinder(&pts[1], &pts[0], &v, 1.0, &spec).unwrap();
        assert!(grid.residual_norm < RESIDUAL_TOLERANCE);
        let dev = ansatz_deviation(&grid);
        assert!(dev < 1e-5, "deviation {dev}");
        let e = energy(&grid, &v).unwrap();
        assert!((e - 2.0).abs() < 1e-4, "energy {e}");
        let acts = slice_actions(&grid, &v).unwrap();
        assert!(acts.windows(2).all(|w| w[1] <= w[0] + 1e-6));
    }

    #[test]
    fn perturbed_pendulum_has_adiabatic_scaling() {
        use crate::heat_flow::{trace_flow_line, FlowOptions};
        use crate::potentials::Mode;
        let alpha = WindingClass(vec![1]);
        let mut modes = pendulum_potential(&alpha).modes().to_vec();
        modes.push(Mode { k: vec![1], m: 0, a: 0.1, phi: 0.0 });
        let v = Potential::new(1, modes).unwrap();
        let pts = enumerate_critical(&v, &alpha, &SeedLattice::new(16)).unwrap();
        let src = pts.iter().position(|p| p.index == 1).unwrap();
        let opts = FlowOptions { delta: 1e-6, record_every: 0.01, ..FlowOptions::default() };
        let line = trace_flow_line(&pts, src, 0, 1, &v, &opts).unwrap();
        let rows = adiabatic_compare(&line, &pts, &v, &[0.4, 0.2, 0.1], &CylinderSpec::default()).unwrap();
        for w in rows.windows(2) {
            let r = w[0].residual / w[1].residual;
            let c = w[0].correction / w[1].correction;
            assert!((r - 2.0).abs() < 0.2, "residual ratio {r}");
            assert!((2.0..=8.0).contains(&c), "correction ratio {c}");
        }
        assert!(rows.iter().all(|r| r.distance.is_some()));
    }
}
