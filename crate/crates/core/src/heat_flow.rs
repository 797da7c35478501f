//! Negative L² gradient flow of the action (the heat equation
//! `∂_s u = ∂_t² u + ∇V_t(u)`), shooting along unstable directions, and
//! characteristic signs of index-one connecting trajectories.
//!
//! Orientation convention: each unstable eigenspace carries the oriented
//! basis produced by [`crate::gradient_system::analyze`]. A trajectory
//! leaving `x` along the outward direction `d` is signed by comparing
//! `(d, ξ₂, …, ξ_k)` with the basis at `x`, and the transported `ξ`'s with
//! the basis at the target. For index one this reduces to: the line shot
//! along `+e` carries `+1`, along `−e` carries `−1`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::critical_points::{CriticalPoint, LoopFunctional};
use crate::error::{Error, Result};
use crate::gradient_system::{gram_schmidt, lattice_distance, shifted, GradientSystem};
use crate::potentials::Potential;
use crate::torus_loops::{column, DiscreteLoop};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Offset of the first slice from the source along the shooting direction.
    pub delta: f64,
    pub ds: f64,
    pub s_max: f64,
    pub grad_tol: f64,
    pub match_radius: f64,
    /// Spacing in `s` of stored slices.
    pub record_every: f64,
    /// Angular samples on the unstable circle of index-two sources.
    pub sweep_samples: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            ds: 1e-2,
            s_max: 200.0,
            grad_tol: 1e-9,
            match_radius: 1e-4,
            record_every: 0.1,
            sweep_samples: 8,
        }
    }
}

fn phi_functions(z: f64) -> (f64, f64, f64) {
    if z.abs() < 0.5 {
        // φ_k(z) = Σ z^j / (j + k)!
        let mut p = [0.0f64; 3];
        for (k, slot) in p.iter_mut().enumerate() {
            let mut fact: f64 = (1..=k + 1).map(|i| i as f64).product();
            let mut term = 1.0 / fact;
            let mut sum = term;
            for j in 1..24 {
                fact *= (j + k + 1) as f64;
                term = z.powi(j as i32) / fact;
                sum += term;
            }
            let _ = term;
            *slot = sum;
        }
        (p[0], p[1], p[2])
    } else {
        let e = z.exp();
        let p1 = (e - 1.0) / z;
        let p2 = (e - 1.0 - z) / (z * z);
        let p3 = (e - 1.0 - z - 0.5 * z * z) / (z * z * z);
        (p1, p2, p3)
    }
}

/// Per-bin weights of one ETDRK4 step of size `h`.
pub(crate) struct EtdCoefficients {
    pub(crate) h: f64,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
    c3: Vec<f64>,
}

impl EtdCoefficients {
    pub(crate) fn new(symbol: &[f64], h: f64) -> Self {
        let bins = symbol.len();
        let mut c = Self {
            h,
            e: vec![0.0; bins],
            e2: vec![0.0; bins],
            q: vec![0.0; bins],
            c1: vec![0.0; bins],
            c2: vec![0.0; bins],
            c3: vec![0.0; bins],
        };
        for (i, l) in symbol.iter().enumerate() {
            let z = h * l;
            c.e[i] = z.exp();
            c.e2[i] = (0.5 * z).exp();
            c.q[i] = 0.5 * h * phi_functions(0.5 * z).0;
            let (p1, p2, p3) = phi_functions(z);
            c.c1[i] = h * (p1 - 3.0 * p2 + 4.0 * p3);
            c.c2[i] = h * (p2 - 2.0 * p3);
            c.c3[i] = h * (4.0 * p3 - p2);
        }
        c
    }
}

/// Exponential-integrator RK4 step (Cox–Matthews form): `∂_t²` is advanced
/// exactly in Fourier space, `∇V` explicitly. Tangent fields follow the
/// linearized equation along the same stages.
pub(crate) fn etdrk4_step(f: &LoopFunctional, y: &mut Vec<f64>, tangents: &mut [Vec<f64>], h: f64) {
    let sp = f.spectral();
    let n = f.dim();
    let coeffs = f.etd_coefficients(h);
    let EtdCoefficients { e, e2, q, c1, c2, c3, .. } = &*coeffs;
    let bins = e.len();
    let block = n * bins;
    let total = (1 + tangents.len()) * block;

    // Spectra are stored flat as [field][column][bin].
    let forward = |fields: &[&[f64]], out: &mut [Complex64]| {
        for (fi, fl) in fields.iter().enumerate() {
            for k in 0..n {
                let o = &mut out[fi * block + k * bins..fi * block + (k + 1) * bins];
                for (j, c) in o.iter_mut().enumerate() {
                    *c = Complex64::new(fl[j * n + k], 0.0);
                }
                sp.forward_in_place(o);
            }
        }
    };
    let backward = |spec: &[Complex64], out: &mut [Vec<f64>], buf: &mut Vec<Complex64>| {
        let scale = 1.0 / bins as f64;
        for (fi, fl) in out.iter_mut().enumerate() {
            for k in 0..n {
                buf.clear();
                buf.extend_from_slice(&spec[fi * block + k * bins..fi * block + (k + 1) * bins]);
                sp.inverse_in_place(buf);
                for (j, c) in buf.iter().enumerate() {
                    fl[j * n + k] = c.re * scale;
                }
            }
        }
    };
    let nonlinear = |fields: &[Vec<f64>], out: &mut [Complex64]| {
        let mut phys: Vec<Vec<f64>> = Vec::with_capacity(fields.len());
        phys.push(f.potential_gradient(&fields[0]));
        for t in &fields[1..] {
            phys.push(f.potential_hessian_apply(&fields[0], t));
        }
        let refs: Vec<&[f64]> = phys.iter().map(|v| v.as_slice()).collect();
        forward(&refs, out);
    };

    let mut fields: Vec<Vec<f64>> = Vec::with_capacity(1 + tangents.len());
    fields.push(y.clone());
    fields.extend(tangents.iter().cloned());
    let mut buf = Vec::with_capacity(bins);
    let zero = Complex64::new(0.0, 0.0);
    let mut v_hat = vec![zero; total];
    {
        let refs: Vec<&[f64]> = fields.iter().map(|v| v.as_slice()).collect();
        forward(&refs, &mut v_hat);
    }
    let mut nv = vec![zero; total];
    nonlinear(&fields, &mut nv);

    let mut a_hat = vec![zero; total];
    for i in 0..total {
        let b = i % bins;
        a_hat[i] = v_hat[i] * e2[b] + nv[i] * q[b];
    }
    backward(&a_hat, &mut fields, &mut buf);
    let mut na = vec![zero; total];
    nonlinear(&fields, &mut na);

    let mut b_hat = vec![zero; total];
    for i in 0..total {
        let b = i % bins;
        b_hat[i] = v_hat[i] * e2[b] + na[i] * q[b];
    }
    backward(&b_hat, &mut fields, &mut buf);
    let mut nb = vec![zero; total];
    nonlinear(&fields, &mut nb);

    let mut c_hat = b_hat;
    for i in 0..total {
        let b = i % bins;
        c_hat[i] = a_hat[i] * e2[b] + (nb[i] * 2.0 - nv[i]) * q[b];
    }
    backward(&c_hat, &mut fields, &mut buf);
    let mut nc = a_hat;
    nonlinear(&fields, &mut nc);

    let mut next = c_hat;
    for i in 0..total {
        let b = i % bins;
        next[i] = v_hat[i] * e[b] + nv[i] * c1[b] + (na[i] + nb[i]) * (2.0 * c2[b]) + nc[i] * c3[b];
    }
    backward(&next, &mut fields, &mut buf);
    let mut out = fields.into_iter();
    *y = out.next().expect("state field");
    for (t, new) in tangents.iter_mut().zip(out) {
        *t = new;
    }
}

/// One step of the heat flow; the winding class is unchanged.
pub fn flow_step(l: &DiscreteLoop, v: &Potential, ds: f64) -> Result<DiscreteLoop> {
    if !(ds > 0.0 && ds <= 0.1) {
        return Err(Error::InvalidArgument(format!("flow step {ds} outside (0, 0.1]")));
    }
    let f = LoopFunctional::new(v, l.alpha(), l.samples())?;
    let mut y = l.displacement().to_vec();
    etdrk4_step(&f, &mut y, &mut [], ds);
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("heat flow step"));
    }
    l.with_displacement(y)
}

/// A critical configuration as seen by the shooting code.
#[derive(Clone, Copy, Debug)]
pub struct Node<'a> {
    pub state: &'a [f64],
    pub value: f64,
    pub index: usize,
    pub unstable: &'a [Vec<f64>],
}

impl<'a> From<&'a CriticalPoint> for Node<'a> {
    fn from(cp: &'a CriticalPoint) -> Self {
        Node { state: cp.displacement(), value: cp.action, index: cp.index, unstable: &cp.unstable }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stop {
    Converged,
    Saddle,
    /// Entered the basin of a local minimum (classification only).
    Basin,
}

#[derive(Clone, Debug)]
struct Shot {
    target: usize,
    shift: Vec<i64>,
    stop: Stop,
    s_grid: Vec<f64>,
    slices: Vec<Vec<f64>>,
    actions: Vec<f64>,
    tangents: Vec<Vec<f64>>,
    /// First entry into the ball of radius `ENTRY_RADIUS` around an index-one
    /// node: (node, lift, coordinate along its unstable direction).
    entry: Option<(usize, Vec<i64>, f64)>,
}

#[derive(Clone, Copy)]
enum Mode {
    /// Follow to the limit, stopping at saddles passed within the match radius.
    Trace,
    /// Only decide which local minimum (and lift) the trajectory falls into,
    /// unless it passes a saddle first.
    Classify,
}

const BASIN_RADIUS: f64 = 0.05;
const ENTRY_RADIUS: f64 = 0.5;

fn shoot<S: GradientSystem + ?Sized>(
    sys: &S,
    mut x: Vec<f64>,
    mut tangents: Vec<Vec<f64>>,
    nodes: &[Node],
    source_value: f64,
    opts: &FlowOptions,
    mode: Mode,
) -> Result<Shot> {
    let n = sys.dim();
    let mut s = 0.0;
    let mut ds = opts.ds;
    let mut value = sys.value(&x);
    let mut s_grid = vec![0.0];
    let mut slices = vec![x.clone()];
    let mut actions = vec![value];
    let mut next_record = opts.record_every;
    // (node, smallest gradient norm seen while inside the match radius)
    let mut watch: Option<(usize, f64)> = None;
    let mut steps = 0usize;
    let mut entry: Option<(usize, Vec<i64>, f64)> = None;
    loop {
        if s > opts.s_max {
            return Err(Error::MaxFlowTime { s_max: opts.s_max });
        }
        let mut trial = x.clone();
        let mut trial_t = tangents.clone();
        sys.advance(&mut trial, &mut trial_t, ds);
        if trial.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient flow"));
        }
        let trial_value = sys.value(&trial);
        if trial_value > value + 1e-11 * value.abs().max(1.0) {
            ds *= 0.5;
            if ds < 1e-10 {
                return Err(Error::NonFinite("gradient flow step size underflow"));
            }
            continue;
        }
        x = trial;
        tangents = trial_t;
        gram_schmidt(sys, &mut tangents);
        value = trial_value;
        s += ds;
        steps += 1;
        if s >= next_record {
            s_grid.push(s);
            slices.push(x.clone());
            actions.push(value);
            next_record += opts.record_every;
        }
        if matches!(mode, Mode::Classify) && entry.is_none() {
            let (best, dist, shift) = nearest(&x, nodes, n);
            let node = &nodes[best];
            if node.index == 1 && node.value < source_value - 1e-9 && dist < ENTRY_RADIUS {
                let base = shifted(node.state, n, &shift);
                let diff: Vec<f64> = x.iter().zip(&base).map(|(a, b)| a - b).collect();
                entry = Some((best, shift, sys.inner(&diff, &node.unstable[0])));
            }
        }
        let g = sys.norm(&sys.descent(&x));
        let finish = |stop: Stop, target: usize, shift: Vec<i64>, mut s_grid: Vec<f64>, mut slices: Vec<Vec<f64>>, mut actions: Vec<f64>, x: Vec<f64>, tangents: Vec<Vec<f64>>| {
            if *s_grid.last().unwrap() < s {
                s_grid.push(s);
                slices.push(x);
                actions.push(value);
            }
            Shot { target, shift, stop, s_grid, slices, actions, tangents, entry: entry.clone() }
        };
        if g < opts.grad_tol {
            let (best, dist, shift) = nearest(&x, nodes, n);
            if dist > opts.match_radius {
                return Err(Error::NoTargetMatch { distance: dist });
            }
            return Ok(finish(Stop::Converged, best, shift, s_grid, slices, actions, x, tangents));
        }
        if g < 1e-2 || matches!(mode, Mode::Classify) && steps % 5 == 0 {
            let (best, dist, shift) = nearest(&x, nodes, n);
            let node = &nodes[best];
            let below_source = node.value < source_value - 1e-9;
            if matches!(mode, Mode::Classify) && node.index == 0 && dist < BASIN_RADIUS {
                return Ok(finish(Stop::Basin, best, shift, s_grid, slices, actions, x, tangents));
            }
            if node.index >= 1 && below_source && dist < opts.match_radius {
                match watch {
                    Some((w, gmin)) if w == best => {
                        if g > 2.0 * gmin {
                            return Ok(finish(Stop::Saddle, best, shift, s_grid, slices, actions, x, tangents));
                        }
                        watch = Some((w, gmin.min(g)));
                    }
                    _ => watch = Some((best, g)),
                }
            } else if let Some((w, _)) = watch {
                // Left the neighbourhood of the saddle being watched.
                let (_, shift) = lattice_distance(&x, nodes[w].state, n);
                return Ok(finish(Stop::Saddle, w, shift, s_grid, slices, actions, x, tangents));
            }
        }
    }
}

fn nearest(x: &[f64], nodes: &[Node], n: usize) -> (usize, f64, Vec<i64>) {
    let mut best = (0, f64::INFINITY, Vec::new());
    for (i, node) in nodes.iter().enumerate() {
        let (d, m) = lattice_distance(x, node.state, n);
        if d < best.1 {
            best = (i, d, m);
        }
    }
    best
}

/// A negative-gradient trajectory between two critical points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowLine {
    pub source_id: usize,
    pub target_id: usize,
    /// Lattice translate of the target reached in the universal cover.
    pub target_shift: Vec<i64>,
    pub index_drop: usize,
    pub s_grid: Vec<f64>,
    #[serde(skip)]
    pub slices: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    /// `(direction_label, eigenvector number)` for eigenvector shots.
    pub direction_label: i8,
    pub direction_index: usize,
    /// Angle on the unstable circle, for lines found by the index-two sweep.
    pub angle: Option<f64>,
    pub orientation_sign: i8,
    pub transport_sign: i8,
    pub sign: i8,
}

impl FlowLine {
    /// The same line after reversing the orientation chosen at its source.
    pub fn with_source_orientation_flipped(&self) -> Self {
        let mut l = self.clone();
        l.orientation_sign = -l.orientation_sign;
        l.sign = -l.sign;
        l
    }

    pub fn is_isolated(&self) -> bool {
        self.index_drop == 1
    }

    /// CSV rows `s,action,sigma` where sigma is the mean displacement of the
    /// first coordinate.
    pub fn write_csv<W: Write>(&self, n: usize, mut w: W) -> std::io::Result<()> {
        writeln!(w, "s,action,sigma")?;
        for ((s, a), y) in self.s_grid.iter().zip(&self.actions).zip(&self.slices) {
            let col = column(y, n, 0);
            let sigma = col.iter().sum::<f64>() / col.len() as f64;
            writeln!(w, "{s},{a},{sigma}")?;
        }
        Ok(())
    }
}

pub fn characteristic_sign(line: &FlowLine) -> i8 {
    line.sign
}

fn transport_sign<S: GradientSystem + ?Sized>(sys: &S, tangents: &[Vec<f64>], target: &Node) -> i8 {
    if tangents.is_empty() {
        return 1;
    }
    let k = tangents.len();
    if target.unstable.len() != k {
        return 0;
    }
    let mut m = DMatrix::zeros(k, k);
    for (a, t) in tangents.iter().enumerate() {
        for (b, u) in target.unstable.iter().enumerate() {
            m[(a, b)] = sys.inner(t, u);
        }
    }
    let det = m.determinant();
    if det > 0.0 {
        1
    } else if det < 0.0 {
        -1
    } else {
        0
    }
}

fn line_from_shot<S: GradientSystem + ?Sized>(
    sys: &S,
    shot: Shot,
    nodes: &[Node],
    source: usize,
    orientation_sign: i8,
    direction: (i8, usize),
    angle: Option<f64>,
) -> FlowLine {
    let target = &nodes[shot.target];
    let index_drop = nodes[source].index.saturating_sub(target.index);
    let (transport, sign) = if index_drop == 1 {
        let t = transport_sign(sys, &shot.tangents, target);
        (t, orientation_sign * t)
    } else {
        (0, 0)
    };
    FlowLine {
        source_id: source,
        target_id: shot.target,
        target_shift: shot.shift,
        index_drop,
        s_grid: shot.s_grid,
        slices: shot.slices,
        actions: shot.actions,
        direction_label: direction.0,
        direction_index: direction.1,
        angle,
        orientation_sign,
        transport_sign: transport,
        sign,
    }
}

fn offset(base: &[f64], dir: &[f64], scale: f64) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

/// Shoot from `nodes[source]` along `sign · e_i` of its oriented unstable basis.
pub fn shoot_eigenvector<S: GradientSystem + ?Sized>(
    sys: &S,
    nodes: &[Node],
    source: usize,
    i: usize,
    sign: i8,
    opts: &FlowOptions,
) -> Result<FlowLine> {
    let src = &nodes[source];
    let basis = src.unstable;
    if i >= basis.len() {
        return Err(Error::InvalidArgument(format!("unstable direction {i} out of range (index {})", src.index)));
    }
    let start = offset(src.state, &basis[i], sign as f64 * opts.delta);
    let tangents: Vec<Vec<f64>> = basis.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b.clone()).collect();
    // det[±e_i, e_0..ê_i..] = ±(−1)^i
    let orientation = if i % 2 == 0 { sign } else { -sign };
    let shot = shoot(sys, start, tangents, nodes, src.value, opts, Mode::Trace)?;
    Ok(line_from_shot(sys, shot, nodes, source, orientation, (sign, i), None))
}

#[derive(Clone, Debug, PartialEq)]
enum Label {
    Min(usize, Vec<i64>),
    Saddle(usize),
}

/// Index-two sources: scan the unstable circle, refine every change of the
/// limiting minimum (in the universal cover) until the trajectory passes a
/// saddle of index one, and record that trajectory.
fn sweep_circle<S: GradientSystem + ?Sized>(sys: &S, nodes: &[Node], source: usize, opts: &FlowOptions) -> Result<Vec<FlowLine>> {
    let src = &nodes[source];
    let (b1, b2) = (&src.unstable[0], &src.unstable[1]);
    let dir = |theta: f64| -> (Vec<f64>, Vec<f64>) {
        let (s, c) = theta.sin_cos();
        let d: Vec<f64> = b1.iter().zip(b2).map(|(p, q)| c * p + s * q).collect();
        let dp: Vec<f64> = b1.iter().zip(b2).map(|(p, q)| -s * p + c * q).collect();
        (d, dp)
    };
    let run = |theta: f64, mode: Mode| -> Result<Shot> {
        let (d, dp) = dir(theta);
        let tangents = if matches!(mode, Mode::Trace) { vec![dp] } else { Vec::new() };
        shoot(sys, offset(src.state, &d, opts.delta), tangents, nodes, src.value, opts, mode)
    };
    let label = |shot: &Shot| -> Label {
        match shot.stop {
            Stop::Saddle => Label::Saddle(shot.target),
            _ if nodes[shot.target].index >= 1 => Label::Saddle(shot.target),
            _ => Label::Min(shot.target, shot.shift.clone()),
        }
    };
    let m = opts.sweep_samples.max(4);
    let thetas: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) * 2.0 * PI / m as f64).collect();
    let shots = thetas.iter().map(|t| run(*t, Mode::Classify)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = shots.iter().map(label).collect();

    let mut found: Vec<(f64, Shot)> = Vec::new();
    for i in 0..m {
        if let Label::Saddle(_) = labels[i] {
            found.push((thetas[i], run(thetas[i], Mode::Trace)?));
            continue;
        }
        let j = (i + 1) % m;
        if matches!(labels[j], Label::Saddle(_)) || labels[i] == labels[j] {
            continue;
        }
        let mut lo = (thetas[i], shots[i].entry.clone());
        let mut hi = (if j == 0 { thetas[0] + 2.0 * PI } else { thetas[j] }, shots[j].entry.clone());
        let lo_label = labels[i].clone();
        let mut hit = None;
        let mut stale: i8 = 0;
        for _ in 0..60 {
            // Regula falsi (Illinois) on the entry coordinate once both ends
            // pass the same saddle on opposite sides; bisection otherwise.
            let secant = match (&lo.1, &hi.1) {
                (Some((a, la, fa)), Some((b, lb, fb))) if stale.abs() < 3 && a == b && la == lb && fa * fb < 0.0 => {
                    let w = hi.0 - lo.0;
                    Some((lo.0 - fa * w / (fb - fa)).clamp(lo.0 + 1e-3 * w, hi.0 - 1e-3 * w))
                }
                _ => None,
            };
            let mid = secant.unwrap_or(0.5 * (lo.0 + hi.0));
            let shot = run(mid, Mode::Classify)?;
            let lower = match label(&shot) {
                Label::Saddle(_) => {
                    hit = Some(mid);
                    break;
                }
                l => l == lo_label,
            };
            if lower {
                lo = (mid, shot.entry);
            } else {
                hi = (mid, shot.entry);
            }
            if secant.is_none() {
                stale = 0;
                continue;
            }
            // Illinois: halve the value kept at an end retained twice in a row.
            stale = match (lower, stale > 0) {
                (true, true) => stale + 1,
                (true, false) => 1,
                (false, false) => stale - 1,
                (false, true) => -1,
            };
            let kept = if stale >= 2 { hi.1.as_mut() } else if stale <= -2 { lo.1.as_mut() } else { None };
            if let Some(e) = kept {
                e.2 *= 0.5;
            }
        }
        let theta = hit.ok_or(Error::NoTargetMatch { distance: opts.match_radius })?;
        found.push((theta, run(theta, Mode::Trace)?));
    }
    Ok(found
        .into_iter()
        .map(|(theta, shot)| line_from_shot(sys, shot, nodes, source, 1, (1, 0), Some(theta.rem_euclid(2.0 * PI))))
        .collect())
}

/// All traced trajectories out of every source of positive index: eigenvector
/// shots `±e_i`, and for index two the circle sweep. Sorted by
/// (source, direction).
pub fn connecting_lines<S: GradientSystem + ?Sized>(sys: &S, nodes: &[Node], opts: &FlowOptions) -> Result<Vec<FlowLine>> {
    let mut lines = Vec::new();
    for (source, node) in nodes.iter().enumerate() {
        match node.index {
            0 => {}
            2 => lines.extend(sweep_circle(sys, nodes, source, opts)?),
            k => {
                for i in 0..k {
                    for sign in [1i8, -1] {
                        lines.push(shoot_eigenvector(sys, nodes, source, i, sign, opts)?);
                    }
                }
            }
        }
    }
    lines.sort_by(|a, b| {
        a.source_id
            .cmp(&b.source_id)
            .then(a.direction_index.cmp(&b.direction_index))
            .then(b.direction_label.cmp(&a.direction_label))
            .then(a.angle.unwrap_or(0.0).total_cmp(&b.angle.unwrap_or(0.0)))
    });
    Ok(lines)
}

/// Trace the line leaving `catalogue[source]` along `sign · e_direction`.
pub fn trace_flow_line(
    catalogue: &[CriticalPoint],
    source: usize,
    direction: usize,
    sign: i8,
    v: &Potential,
    opts: &FlowOptions,
) -> Result<FlowLine> {
    let src = catalogue.get(source).ok_or_else(|| Error::InvalidArgument(format!("no critical point {source}")))?;
    if src.index == 0 {
        return Err(Error::InvalidArgument("source of a flow line must have positive index".into()));
    }
    let f = LoopFunctional::new(v, src.orbit.alpha(), src.orbit.samples())?;
    let nodes: Vec<Node> = catalogue.iter().map(Node::from).collect();
    shoot_eigenvector(&f, &nodes, source, direction, sign, opts)
}

/// All connecting lines of a loop-space catalogue.
pub fn loop_lines(catalogue: &[CriticalPoint], v: &Potential, opts: &FlowOptions) -> Result<Vec<FlowLine>> {
    let Some(first) = catalogue.first() else {
        return Ok(Vec::new());
    };
    let f = LoopFunctional::new(v, first.orbit.alpha(), first.orbit.samples())?;
    let nodes: Vec<Node> = catalogue.iter().map(Node::from).collect();
    connecting_lines(&f, &nodes, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical_points::{enumerate_critical, SeedLattice};
    use crate::potentials::pendulum_potential;
    use crate::torus_loops::WindingClass;

    #[test]
    fn phi_series_matches_closed_form_near_threshold() {
        for z in [-0.49, 0.3, -0.51, 0.6] {
            let e: f64 = (z as f64).exp();
            let p1 = (e - 1.0) / z;
            let p2 = (e - 1.0 - z) / (z * z);
            let (a, b, _) = phi_functions(z);
            assert!((a - p1).abs() < 1e-12 && (b - p2).abs() < 1e-11);
        }
    }

    #[test]
    fn critical_point_is_stationary() {
        let a = WindingClass(vec![1]);
        let v = pendulum_potential(&a);
        let l = DiscreteLoop::straight(a, 64, &[0.0]).unwrap();
        let next = flow_step(&l, &v, 0.05).unwrap();
        let d: f64 = next.displacement().iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(d < 1e-12);
    }

    #[test]
    fn ansatz_follows_closed_form() {
        // σ' = −sin σ with σ(0) = π/2 has tan(σ/2) = e^{−s}.
        let a = WindingClass(vec![1]);
        let v = pendulum_potential(&a);
        let mut l = DiscreteLoop::straight(a, 32, &[PI / 2.0]).unwrap();
        let ds = 0.01;
        for step in 1..=300 {
            l = flow_step(&l, &v, ds).unwrap();
            let s = step as f64 * ds;
            let ys = l.displacement();
            let sigma = ys[0];
            assert!(((sigma / 2.0).tan() - (-s).exp()).abs() < 1e-6, "s={s}");
            let spread = ys.iter().map(|y| (y - sigma).abs()).fold(0.0, f64::max);
            assert!(spread < 1e-8);
        }
    }

    #[test]
    fn linear_decay_rate() {
        let a = WindingClass(vec![0]);
        let mut l = DiscreteLoop::from_fn(a, 32, |t| vec![(2.0 * PI * t).sin()]).unwrap();
        let v = Potential::zero(1);
        for _ in 0..10 {
            l = flow_step(&l, &v, 0.01).unwrap();
        }
        let amp = l.displacement()[8]; // t = 1/4
        assert!((amp - (-4.0 * PI * PI * 0.1).exp()).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_step() {
        let a = WindingClass(vec![0]);
        let l = DiscreteLoop::straight(a, 16, &[0.0]).unwrap();
        assert!(flow_step(&l, &Potential::zero(1), 0.2).is_err());
        assert!(flow_step(&l, &Potential::zero(1), 0.0).is_err());
    }

    #[test]
    fn pendulum_lines_cancel() {
        let a = WindingClass(vec![1]);
        let v = pendulum_potential(&a);
        let pts = enumerate_critical(&v, &a, &SeedLattice::new(32)).unwrap();
        let src = pts.iter().position(|p| p.index == 1).unwrap();
        let opts = FlowOptions::default();
        let plus = trace_flow_line(&pts, src, 0, 1, &v, &opts).unwrap();
        let minus = trace_flow_line(&pts, src, 0, -1, &v, &opts).unwrap();
        assert_eq!(pts[plus.target_id].index, 0);
        assert_eq!(pts[minus.target_id].index, 0);
        assert_eq!(plus.sign, 1);
        assert_eq!(minus.sign, -1);
        assert_ne!(plus.target_shift, minus.target_shift);
        let flipped = plus.with_source_orientation_flipped();
        assert_eq!(characteristic_sign(&flipped), -1);
        // Action drop equals the difference of critical values.
        let drop = plus.actions[0] - plus.actions.last().unwrap();
        assert!((drop - (pts[src].action - pts[plus.target_id].action)).abs() < 1e-5);
        assert!(plus.actions.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
}
