//! Length spectrum of flat tori and 1-periodic orbits of radial Hamiltonians
//! h(|p|) on the cotangent bundle.
//!
//! An orbit in class α sits on the sphere bundle of radius r where h′(r)
//! equals the length ℓ of a geodesic in α; its action is r·h′(r) − h(r),
//! minus the intercept of the tangent line to h at r.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus_loops::WindingClass;

/// |h′ − ℓ| below this at a turning point counts as a tangency.
pub const TANGENCY_TOLERANCE: f64 = 1e-10;
/// Slack on the action lower bound in the existence check.
pub const ACTION_SLACK: f64 = 1e-8;

/// Lengths of closed geodesics in class α on the flat torus R^n/2πZ^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSpectrum {
    pub values: Vec<f64>,
    pub minimum: f64,
}

/// Every closed geodesic in a class is a straight line of length 2π|α|.
pub fn length_spectrum(alpha: &WindingClass) -> LengthSpectrum {
    let l = 2.0 * PI * alpha.euclidean_norm();
    LengthSpectrum { values: vec![l], minimum: l }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub r: f64,
    pub h: f64,
    pub dh: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ProfileRecord {
    knots: Vec<Knot>,
    tail_slope: f64,
    #[serde(default)]
    compact: bool,
}

/// C¹ piecewise cubic Hermite profile on [0, r_m] continued linearly with
/// slope λ = h′(r_m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRecord", into = "ProfileRecord")]
pub struct RadialHamiltonian {
    knots: Vec<Knot>,
    tail_slope: f64,
    compact: bool,
}

impl TryFrom<ProfileRecord> for RadialHamiltonian {
    type Error = Error;

    fn try_from(p: ProfileRecord) -> Result<Self> {
        let h = Self::new(p.knots, p.tail_slope)?;
        if p.compact {
            h.into_compact()
        } else {
            Ok(h)
        }
    }
}

impl From<RadialHamiltonian> for ProfileRecord {
    fn from(h: RadialHamiltonian) -> Self {
        ProfileRecord { knots: h.knots, tail_slope: h.tail_slope, compact: h.compact }
    }
}

impl RadialHamiltonian {
    pub fn new(knots: Vec<Knot>, tail_slope: f64) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidArgument("a radial profile needs at least two knots".into()));
        }
        if knots[0].r != 0.0 {
            return Err(Error::InvalidArgument("the first knot must sit at r = 0".into()));
        }
        if knots.iter().any(|k| !(k.r.is_finite() && k.h.is_finite() && k.dh.is_finite())) || !tail_slope.is_finite() {
            return Err(Error::NonFinite("radial profile"));
        }
        if knots.windows(2).any(|w| w[1].r <= w[0].r) {
            return Err(Error::InvalidArgument("knot radii must increase strictly".into()));
        }
        let last = knots[knots.len() - 1].dh;
        if (last - tail_slope).abs() > 1e-12 * last.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "tail slope {tail_slope} does not match the last knot slope {last}"
            )));
        }
        Ok(Self { knots, tail_slope, compact: false })
    }

    /// Mark as compactly supported in the open unit disc bundle.
    pub fn into_compact(mut self) -> Result<Self> {
        let last = self.knots[self.knots.len() - 1];
        if last.r >= 1.0 || last.h != 0.0 || last.dh != 0.0 || self.tail_slope != 0.0 {
            return Err(Error::InvalidArgument(
                "compact profiles must reach h = 0 with zero slope before r = 1".into(),
            ));
        }
        self.compact = true;
        Ok(self)
    }

    /// Quadratic profile h(r) = r²/2 sampled on [0, r_max].
    pub fn quadratic(r_max: f64) -> Result<Self> {
        let knots = vec![Knot { r: 0.0, h: 0.0, dh: 0.0 }, Knot { r: r_max, h: 0.5 * r_max * r_max, dh: r_max }];
        Self::new(knots, r_max)
    }

    /// Zero profile, compactly supported.
    pub fn zero() -> Self {
        let knots = vec![Knot { r: 0.0, h: 0.0, dh: 0.0 }, Knot { r: 0.5, h: 0.0, dh: 0.0 }];
        Self { knots, tail_slope: 0.0, compact: true }
    }

    /// Smoothed version of the line from (0, −ℓ) to (1, 0): all slopes stay
    /// at or below ℓ(1 − δ), so no orbit of class α exists.
    pub fn sharpness(alpha: &WindingClass, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument("sharpness offset must lie in (0, 1)".into()));
        }
        let (w, end) = (0.05, 0.99);
        let slope = length_spectrum(alpha).minimum * (1.0 - delta);
        let c = slope * (end - w);
        let knots = vec![
            Knot { r: 0.0, h: -c, dh: 0.0 },
            Knot { r: w, h: -c + 0.5 * slope * w, dh: slope },
            Knot { r: end - w, h: -0.5 * slope * w, dh: slope },
            Knot { r: end, h: 0.0, dh: 0.0 },
        ];
        Self::new(knots, 0.0)?.into_compact()
    }

    /// Random monotone compact profile with h(0) ≤ −ℓ_α − 0.1.
    pub fn random_compact<R: Rng>(rng: &mut R, alpha: &WindingClass) -> Result<Self> {
        let c = length_spectrum(alpha).minimum + 0.1 + rng.gen_range(0.0..3.0);
        let end = rng.gen_range(0.5..0.95);
        let pieces = rng.gen_range(3..8);
        let mut radii: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(0.0..end)).collect();
        radii.push(0.0);
        radii.push(end);
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        let mut rises: Vec<f64> = (1..radii.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = rises.iter().sum();
        rises.iter_mut().for_each(|d| *d *= c / total);
        let mut values = vec![-c];
        for d in &rises {
            values.push(values[values.len() - 1] + d);
        }
        let last = values.len() - 1;
        values[last] = 0.0;
        let slopes = monotone_slopes(&radii, &values);
        let knots = radii.iter().zip(&values).zip(&slopes).map(|((&r, &h), &dh)| Knot { r, h, dh }).collect();
        Self::new(knots, 0.0)?.into_compact()
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    pub fn is_compact(&self) -> bool {
        self.compact
    }

    fn piece(&self, r: f64) -> Option<(Knot, Knot)> {
        let i = self.knots.partition_point(|k| k.r <= r);
        if i == 0 || i >= self.knots.len() {
            if i == self.knots.len() && r == self.knots[i - 1].r {
                return Some((self.knots[i - 2], self.knots[i - 1]));
            }
            return None;
        }
        Some((self.knots[i - 1], self.knots[i]))
    }

    /// (h(r), h′(r)).
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let last = self.knots[self.knots.len() - 1];
        if r >= last.r {
            return (last.h + self.tail_slope * (r - last.r), self.tail_slope);
        }
        let (a, b) = self.piece(r.max(0.0)).expect("radius inside the knot range");
        let w = b.r - a.r;
        let t = (r - a.r) / w;
        let (t2, t3) = (t * t, t * t * t);
        let h = (2.0 * t3 - 3.0 * t2 + 1.0) * a.h
            + (t3 - 2.0 * t2 + t) * w * a.dh
            + (-2.0 * t3 + 3.0 * t2) * b.h
            + (t3 - t2) * w * b.dh;
        let dh = ((6.0 * t2 - 6.0 * t) * a.h + (-6.0 * t2 + 6.0 * t) * b.h) / w
            + (3.0 * t2 - 4.0 * t + 1.0) * a.dh
            + (3.0 * t2 - 2.0 * t) * b.dh;
        (h, dh)
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    pub fn slope(&self, r: f64) -> f64 {
        self.eval(r).1
    }

    /// Radii splitting [0, r_m] into intervals on which h′ is monotone.
    fn monotone_breaks(&self) -> Vec<f64> {
        let mut out = vec![self.knots[0].r];
        for w in self.knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = b.r - a.r;
            // h′(t) = p t² + q t + a.dh on the unit interval.
            let s = (b.h - a.h) / len;
            let p = 3.0 * (a.dh + b.dh - 2.0 * s);
            let q = 6.0 * s - 4.0 * a.dh - 2.0 * b.dh;
            if p.abs() > 0.0 {
                let t = -q / (2.0 * p);
                if t > 0.0 && t < 1.0 {
                    out.push(a.r + t * len);
                }
            }
            out.push(b.r);
        }
        out
    }

    /// Plotting table of (r, h, h′) on `count` equispaced radii in [0, r_max].
    pub fn write_csv<W: Write>(&self, r_max: f64, count: usize, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,h,dh")?;
        for i in 0..count {
            let r = r_max * i as f64 / (count.max(2) - 1) as f64;
            let (h, dh) = self.eval(r);
            writeln!(w, "{r:.12e},{h:.12e},{dh:.12e}")?;
        }
        Ok(())
    }
}

/// Fritsch–Carlson slopes for monotone data, zero at both ends.
fn monotone_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        m[i] = if delta[i - 1] * delta[i] <= 0.0 { 0.0 } else { 0.5 * (delta[i - 1] + delta[i]) };
    }
    for i in 0..n - 1 {
        if delta[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let (a, b) = (m[i] / delta[i], m[i + 1] / delta[i]);
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m[i] = tau * a * delta[i];
            m[i + 1] = tau * b * delta[i];
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub radius: f64,
    pub length: f64,
    pub action: f64,
    pub class: WindingClass,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadialOptions {
    /// Admit the contractible class, where ℓ = 0.
    pub allow_contractible: bool,
}

/// All radii where h′ = ℓ for ℓ in the length spectrum of α, sorted by radius.
pub fn enumerate_radial_orbits(h: &RadialHamiltonian, alpha: &WindingClass, opts: RadialOptions) -> Result<Vec<OrbitRecord>> {
    if alpha.is_zero() && !opts.allow_contractible {
        return Err(Error::InvalidArgument("the contractible class needs an explicit opt-in".into()));
    }
    let mut out = Vec::new();
    for &ell in &length_spectrum(alpha).values {
        for r in slope_roots(h, ell)? {
            let (value, slope) = h.eval(r);
            out.push(OrbitRecord { radius: r, length: ell, action: r * slope - value, class: alpha.clone() });
        }
    }
    out.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    Ok(out)
}

fn slope_roots(h: &RadialHamiltonian, ell: f64) -> Result<Vec<f64>> {
    let tangency = |r: f64| Error::TangencySlope { radius: r, slope: ell };
    if (h.tail_slope - ell).abs() <= TANGENCY_TOLERANCE {
        return Err(tangency(h.knots[h.knots.len() - 1].r));
    }
    let pts = h.monotone_breaks();
    let vals: Vec<f64> = pts.iter().map(|&r| h.slope(r) - ell).collect();
    let small = |v: f64| v.abs() <= TANGENCY_TOLERANCE;
    let mut roots = Vec::new();
    let mut i = 0;
    while i < pts.len() {
        if small(vals[i]) {
            // Run of near-zero break values, then compare signs on either side.
            let mut j = i;
            while j + 1 < pts.len() && small(vals[j + 1]) {
                j += 1;
            }
            if j > i {
                return Err(tangency(pts[i]));
            }
            let left = (i > 0).then(|| vals[i - 1].signum());
            let right = if i + 1 < pts.len() { Some(vals[i + 1].signum()) } else { Some((h.tail_slope - ell).signum()) };
            if left.is_some() && left == right {
                return Err(tangency(pts[i]));
            }
            roots.push(pts[i]);
            i += 1;
            continue;
        }
        if i + 1 < pts.len() && !small(vals[i + 1]) && vals[i].signum() != vals[i + 1].signum() {
            roots.push(bisect(|r| h.slope(r) - ell, pts[i], pts[i + 1]));
        }
        i += 1;
    }
    Ok(roots)
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m).signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    if f(a).abs() <= f(b).abs() {
        a
    } else {
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Vacuous,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Vacuous => "VACUOUS",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExistenceReport {
    /// −h(0), the depth over the zero section.
    pub c: f64,
    pub ell: f64,
    pub hypothesis: bool,
    pub orbits: Vec<OrbitRecord>,
    pub max_action: Option<f64>,
    pub verdict: Verdict,
}

/// If −h(0) ≥ ℓ_α, an orbit of class α with action at least −h(0) must exist.
pub fn check_existence_bound(h: &RadialHamiltonian, alpha: &WindingClass) -> Result<ExistenceReport> {
    if !h.is_compact() {
        return Err(Error::InvalidArgument("the existence check needs a compactly supported profile".into()));
    }
    let ell = length_spectrum(alpha).minimum;
    let c = -h.value(0.0);
    let orbits = enumerate_radial_orbits(h, alpha, RadialOptions { allow_contractible: true })?;
    let max_action = orbits.iter().map(|o| o.action).reduce(f64::max);
    let hypothesis = c >= ell;
    let verdict = if !hypothesis {
        Verdict::Vacuous
    } else if max_action.is_some_and(|a| a >= c - ACTION_SLACK) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ExistenceReport { c, ell, hypothesis, orbits, max_action, verdict })
}

impl fmt::Display for ExistenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "c = {:.12}  ell = {:.12}  hypothesis {}", self.c, self.ell, if self.hypothesis { "holds" } else { "fails" })?;
        writeln!(f, "{:>20} {:>20} {:>20}", "radius", "length", "action")?;
        for o in &self.orbits {
            writeln!(f, "{:>20.12} {:>20.12} {:>20.12}", o.radius, o.length, o.action)?;
        }
        write!(f, "verdict {}", self.verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spectrum_values() {
        assert_eq!(length_spectrum(&WindingClass(vec![1])).minimum, 2.0 * PI);
        assert!((length_spectrum(&WindingClass(vec![1, 1])).minimum - 2.0 * PI * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(length_spectrum(&WindingClass(vec![0, 0])).values, vec![0.0]);
    }

    #[test]
    fn quadratic_profile_orbit() {
        let h = RadialHamiltonian::quadratic(20.0).unwrap();
        for r in [0.0, 1.3, 7.0, 19.9] {
            let (v, d) = h.eval(r);
            assert!((v - 0.5 * r * r).abs() < 1e-12 && (d - r).abs() < 1e-12);
        }
        let orbits = enumerate_radial_orbits(&h, &WindingClass(vec![1]), RadialOptions::default()).unwrap();
        assert_eq!(orbits.len(), 1);
        assert!((orbits[0].radius - 2.0 * PI).abs() < 1e-12);
        assert!((orbits[0].action - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn contractible_class_needs_opt_in() {
        let h = RadialHamiltonian::quadratic(5.0).unwrap();
        assert!(enumerate_radial_orbits(&h, &WindingClass(vec![0]), RadialOptions::default()).is_err());
        let o = enumerate_radial_orbits(&h, &WindingClass(vec![0]), RadialOptions { allow_contractible: true }).unwrap();
        assert_eq!(o.len(), 1);
        assert_eq!(o[0].radius, 0.0);
    }

    #[test]
    fn sharpness_and_zero_are_vacuous() {
        let alpha = WindingClass(vec![1]);
        let sharp = RadialHamiltonian::sharpness(&alpha, 1e-3).unwrap();
        assert!(sharp.knots().iter().all(|k| k.dh < 2.0 * PI));
        let rep = check_existence_bound(&sharp, &alpha).unwrap();
        assert!(rep.orbits.is_empty());
        assert_eq!(rep.verdict, Verdict::Vacuous);
        let rep = check_existence_bound(&RadialHamiltonian::zero(), &alpha).unwrap();
        assert!(rep.orbits.is_empty());
        assert_eq!(rep.verdict, Verdict::Vacuous);
    }

    #[test]
    fn linear_tail_off_spectrum_has_no_orbits() {
        let knots = vec![Knot { r: 0.0, h: -1.0, dh: 3.0 }, Knot { r: 1.0, h: 2.0, dh: 3.0 }];
        let h = RadialHamiltonian::new(knots, 3.0).unwrap();
        assert!(enumerate_radial_orbits(&h, &WindingClass(vec![1]), RadialOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn tangency_is_reported() {
        // h′(r) = 2π + (r − 1)² touches 2π at r = 1.
        let l = 2.0 * PI;
        let hh = |r: f64| l * r + (r - 1.0).powi(3) / 3.0;
        let dd = |r: f64| l + (r - 1.0) * (r - 1.0);
        let knots = vec![Knot { r: 0.0, h: hh(0.0), dh: dd(0.0) }, Knot { r: 2.0, h: hh(2.0), dh: dd(2.0) }];
        let h = RadialHamiltonian::new(knots, dd(2.0)).unwrap();
        assert!(matches!(
            enumerate_radial_orbits(&h, &WindingClass(vec![1]), RadialOptions::default()),
            Err(Error::TangencySlope { .. })
        ));
    }

    #[test]
    fn random_profiles_satisfy_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let alpha = WindingClass(vec![1, 0]);
        for _ in 0..20 {
            let h = RadialHamiltonian::random_compact(&mut rng, &alpha).unwrap();
            assert!(h.value(0.0) <= -2.0 * PI - 0.1);
            let rep = check_existence_bound(&h, &alpha).unwrap();
            assert_eq!(rep.verdict, Verdict::Pass, "{rep}");
            for o in &rep.orbits {
                assert!((h.slope(o.radius) - o.length).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reknotting_preserves_orbits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let alpha = WindingClass(vec![1]);
        let h = RadialHamiltonian::random_compact(&mut rng, &alpha).unwrap();
        let mut knots = h.knots().to_vec();
        let (a, b) = (knots[0], knots[1]);
        let mid = 0.5 * (a.r + b.r);
        let (v, d) = h.eval(mid);
        knots.insert(1, Knot { r: mid, h: v, dh: d });
        let g = RadialHamiltonian::new(knots, 0.0).unwrap().into_compact().unwrap();
        let o1 = enumerate_radial_orbits(&h, &alpha, RadialOptions::default()).unwrap();
        let o2 = enumerate_radial_orbits(&g, &alpha, RadialOptions::default()).unwrap();
        assert_eq!(o1.len(), o2.len());
        for (x, y) in o1.iter().zip(&o2) {
            assert!((x.radius - y.radius).abs() < 1e-10 && (x.action - y.action).abs() < 1e-10);
        }
    }

    #[test]
    fn json_round_trip() {
        let h = RadialHamiltonian::sharpness(&WindingClass(vec![1]), 0.01).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"compact\":true"));
        let back: RadialHamiltonian = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        let bad = r#"{"knots":[{"r":0.0,"h":0.0,"dh":0.0},{"r":0.5,"h":1.0,"dh":0.0}],"tail_slope":0.0,"compact":true}"#;
        assert!(serde_json::from_str::<RadialHamiltonian>(bad).is_err());
    }
}
