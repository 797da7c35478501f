//! The acceptance suite: eleven end-to-end checks on the pendulum family,
//! the ε-Floer cylinders, the radial orbit rule and the polygon model.

use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::broken_geodesics::broken_homology;
use crate::critical_points::{enumerate_critical, CriticalPoint, SeedLattice};
use crate::error::Result;
use crate::floer_cylinder::{
    adiabatic_compare, ansatz_deviation, energy, max_difference, solve_cylinder, AdiabaticRow, CylinderSpec,
};
use crate::heat_flow::{loop_lines, trace_flow_line, FlowLine, FlowOptions};
use crate::morse_complex::{build_complex, homology, HomologyResult};
use crate::potentials::{pendulum_potential, Mode, Potential};
use crate::radial_spectrum::{
    check_existence_bound, enumerate_radial_orbits, RadialHamiltonian, RadialOptions, Verdict,
};
use crate::torus_loops::{action, DiscreteLoop, WindingClass};

pub const SUITE_SEED: u64 = 20_240_601;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:>2}] {:<34} {:>7.2}s / {:>3.0}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

pub const CRITERIA: [(usize, &str, f64); 11] = [
    (1, "pendulum critical set", 5.0),
    (2, "indices and spectra", 5.0),
    (3, "flow-line count and signs", 30.0),
    (4, "homology ranks", 60.0),
    (5, "boundary squares to zero", 60.0),
    (6, "energy identity", 60.0),
    (7, "adiabatic residual scaling", 60.0),
    (8, "ansatz identification", 30.0),
    (9, "radial orbits", 1.0),
    (10, "radial existence bound", 5.0),
    (11, "polygon oracle agreement", 60.0),
];

/// Run one criterion by number.
pub fn run_criterion(id: usize) -> Option<CriterionReport> {
    let &(_, name, budget) = CRITERIA.iter().find(|c| c.0 == id)?;
    let check: fn() -> Result<(bool, String)> = match id {
        1 => critical_set,
        2 => indices_and_spectra,
        3 => flow_lines,
        4 => homology_ranks,
        5 => square_zero_under_perturbation,
        6 => energy_identity,
        7 => adiabatic_scaling,
        8 => ansatz_identification,
        9 => radial_orbits,
        10 => existence_bound,
        11 => oracle_agreement,
        _ => return None,
    };
    let start = Instant::now();
    let outcome = check();
    let elapsed = start.elapsed();
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    let within = elapsed <= Duration::from_secs_f64(budget);
    let detail = if within { detail } else { format!("{detail}; over the time budget") };
    Some(CriterionReport {
        id,
        name: name.to_string(),
        passed: ok && within,
        detail,
        seconds: elapsed.as_secs_f64(),
        budget_seconds: budget,
    })
}

pub fn run_all() -> Vec<CriterionReport> {
    CRITERIA.iter().filter_map(|c| run_criterion(c.0)).collect()
}

fn class(a: &[i64]) -> WindingClass {
    WindingClass(a.to_vec())
}

fn pendulum_catalogue(alpha: &WindingClass, samples: usize) -> Result<(Potential, Vec<CriticalPoint>)> {
    let v = pendulum_potential(alpha);
    let pts = enumerate_critical(&v, alpha, &SeedLattice::new(samples))?;
    Ok((v, pts))
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn critical_set() -> Result<(bool, String)> {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for a in 0..=2 {
        let alpha = class(&[a]);
        let (_, pts) = pendulum_catalogue(&alpha, 128)?;
        if pts.len() != 2 {
            return Ok((false, format!("alpha = {a}: {} critical points", pts.len())));
        }
        let base = 2.0 * PI * PI * (a * a) as f64;
        let mut acts: Vec<f64> = pts.iter().map(|p| p.action).collect();
        acts.sort_by(f64::total_cmp);
        let err = (acts[0] - (base - 1.0)).abs().max((acts[1] - (base + 1.0)).abs());
        worst = worst.max(err);
        ok &= err < 1e-8;
    }
    Ok((ok, format!("2 points per class, worst action error {worst:.1e}")))
}

fn expected_spectrum(shift: f64) -> Vec<f64> {
    let mut out = vec![shift];
    for k in 1..=5 {
        let e = 4.0 * PI * PI * (k * k) as f64 + shift;
        out.extend([e, e]);
    }
    out
}

fn indices_and_spectra() -> Result<(bool, String)> {
    let (_, pts) = pendulum_catalogue(&class(&[1]), 128)?;
    let mut ok = pts.len() == 2;
    let mut worst: f64 = 0.0;
    for p in &pts {
        let up = p.action > 2.0 * PI * PI;
        ok &= p.index == usize::from(up);
        let expected = expected_spectrum(if up { -1.0 } else { 1.0 });
        if p.spectrum_head.len() < expected.len() {
            return Ok((false, "spectrum head too short".into()));
        }
        for (a, b) in p.spectrum_head.iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    ok &= worst < 1e-6;
    Ok((ok, format!("indices (1, 0), worst eigenvalue error {worst:.1e}")))
}

fn line_key(l: &FlowLine) -> (usize, usize, Vec<i64>, i8) {
    (l.source_id, l.target_id, l.target_shift.clone(), l.sign)
}

fn flow_lines() -> Result<(bool, String)> {
    let alpha = class(&[1]);
    let (v, pts) = pendulum_catalogue(&alpha, 32)?;
    let coarse = loop_lines(&pts, &v, &FlowOptions::default())?;
    let fine = loop_lines(&pts, &v, &FlowOptions { delta: 1e-4, ..FlowOptions::default() })?;
    let isolated: Vec<&FlowLine> = coarse.iter().filter(|l| l.is_isolated()).collect();
    let mut signs: Vec<i8> = isolated.iter().map(|l| l.sign).collect();
    signs.sort();
    let complex = build_complex(&pts, &coarse, None)?;
    let zero = complex.boundary.iter().all(|m| m.is_zero());
    let mut a: Vec<_> = coarse.iter().map(line_key).collect();
    let mut b: Vec<_> = fine.iter().map(line_key).collect();
    a.sort();
    b.sort();
    let robust = a == b;
    let ok = isolated.len() == 2 && signs == [-1, 1] && zero && robust;
    Ok((
        ok,
        format!("{} lines, signs {signs:?}, boundary zero {zero}, delta-robust {robust}", isolated.len()),
    ))
}

fn ranks_for(alpha: &WindingClass, samples: usize) -> Result<HomologyResult> {
    let (v, pts) = pendulum_catalogue(alpha, samples)?;
    let lines = loop_lines(&pts, &v, &FlowOptions::default())?;
    homology(&build_complex(&pts, &lines, None)?)
}

fn homology_ranks() -> Result<(bool, String)> {
    let classes: [&[i64]; 5] = [&[1], &[2], &[1, 1], &[1, 2], &[1, 1, 1]];
    let mut ok = true;
    let mut seen = Vec::new();
    for a in classes {
        let h = ranks_for(&class(a), 32)?;
        let n = a.len();
        let expected: Vec<usize> = (0..=n).map(|k| binomial(n, k)).collect();
        ok &= h.ranks() == expected && h.is_torsion_free();
        seen.push(format!("{a:?}:{:?}", h.ranks()));
    }
    Ok((ok, seen.join(" ")))
}

fn square_zero_under_perturbation() -> Result<(bool, String)> {
    let alpha = class(&[1, 1]);
    let base = pendulum_potential(&alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED);
    let mut passed = 0;
    for _ in 0..20 {
        let v = &base + &Potential::random_perturbation(2, &mut rng, 4, 1e-2);
        let pts = enumerate_critical(&v, &alpha, &SeedLattice::new(16))?;
        let lines = loop_lines(&pts, &v, &FlowOptions::default())?;
        let complex = build_complex(&pts, &lines, None)?;
        let square = complex.check_square_zero().is_ok();
        let h = homology(&complex)?;
        if square && h.ranks() == [1, 2, 1] && h.is_torsion_free() {
            passed += 1;
        }
    }
    Ok((passed == 20, format!("{passed}/20 perturbations keep d^2 = 0 and ranks [1, 2, 1]")))
}

fn pendulum_pair() -> Result<(Potential, CriticalPoint, CriticalPoint)> {
    let spec = CylinderSpec::default();
    let (v, pts) = pendulum_catalogue(&class(&[1]), spec.nt)?;
    let up = pts.iter().find(|p| p.index == 1).cloned();
    let down = pts.iter().find(|p| p.index == 0).cloned();
    match (up, down) {
        (Some(u), Some(d)) => Ok((v, u, d)),
        _ => Err(crate::Error::InvalidArgument("pendulum catalogue is incomplete".into())),
    }
}

fn energy_identity() -> Result<(bool, String)> {
    let (v, up, down) = pendulum_pair()?;
    let spec = CylinderSpec::default();
    let mut errs = Vec::new();
    for eps in [1.0, 0.25] {
        let grid = solve_cylinder(&up, &down, &v, eps, &spec)?;
        errs.push((energy(&grid, &v)? - 2.0).abs());
    }
    let ok = errs.iter().all(|e| *e < 1e-4);
    Ok((ok, format!("|E - 2| = {:.1e} (eps 1), {:.1e} (eps 0.25)", errs[0], errs[1])))
}

/// The pendulum plus `0.1 cos q`, whose connecting line depends on t.
pub fn perturbed_pendulum() -> Result<Potential> {
    let alpha = class(&[1]);
    let mut modes = pendulum_potential(&alpha).modes().to_vec();
    modes.push(Mode { k: vec![1], m: 0, a: 0.1, phi: 0.0 });
    Potential::new(1, modes)
}

pub fn adiabatic_table(epsilons: &[f64]) -> Result<Vec<AdiabaticRow>> {
    let alpha = class(&[1]);
    let v = perturbed_pendulum()?;
    let spec = CylinderSpec::default();
    let pts = enumerate_critical(&v, &alpha, &SeedLattice::new(spec.nt))?;
    let src = pts
        .iter()
        .position(|p| p.index == 1)
        .ok_or_else(|| crate::Error::InvalidArgument("no index-one orbit".into()))?;
    let opts = FlowOptions { delta: 1e-6, record_every: 0.01, ..FlowOptions::default() };
    let line = trace_flow_line(&pts, src, 0, 1, &v, &opts)?;
    adiabatic_compare(&line, &pts, &v, epsilons, &spec)
}

fn adiabatic_scaling() -> Result<(bool, String)> {
    let rows = adiabatic_table(&[0.4, 0.2, 0.1])?;
    let mut ok = true;
    let mut parts = Vec::new();
    for w in rows.windows(2) {
        let r = w[0].residual / w[1].residual;
        let c = w[0].correction / w[1].correction;
        ok &= (r - 2.0).abs() <= 0.2 && (2.0..=8.0).contains(&c);
        parts.push(format!("residual x{r:.3}, correction x{c:.2}"));
    }
    Ok((ok, parts.join("; ")))
}

fn ansatz_identification() -> Result<(bool, String)> {
    let (v, up, down) = pendulum_pair()?;
    let spec = CylinderSpec::default();
    let a = solve_cylinder(&up, &down, &v, 1.0, &spec)?;
    let b = solve_cylinder(&up, &down, &v, 0.25, &spec)?;
    let dev = ansatz_deviation(&a).max(ansatz_deviation(&b));
    let diff = max_difference(&a, &b)?;
    Ok((dev < 1e-5 && diff < 1e-5, format!("ansatz deviation {dev:.1e}, eps difference {diff:.1e}")))
}

fn radial_orbits() -> Result<(bool, String)> {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for a in [vec![1], vec![1, 2]] {
        let alpha = WindingClass(a);
        let h = RadialHamiltonian::quadratic(30.0)?;
        let orbits = enumerate_radial_orbits(&h, &alpha, RadialOptions::default())?;
        let geodesic = DiscreteLoop::straight(alpha.clone(), 16, &vec![0.0; alpha.dim()])?;
        let s = action(&geodesic, &Potential::zero(alpha.dim()))?;
        ok &= orbits.len() == 1;
        for o in &orbits {
            worst = worst.max((o.action - s).abs());
        }
        let sharp = RadialHamiltonian::sharpness(&alpha, 0.1)?;
        ok &= enumerate_radial_orbits(&sharp, &alpha, RadialOptions::default())?.is_empty();
        ok &= check_existence_bound(&sharp, &alpha)?.verdict == Verdict::Vacuous;
    }
    ok &= worst < 1e-10;
    Ok((ok, format!("quadratic action error {worst:.1e}, sharp profiles carry no orbit")))
}

fn existence_bound() -> Result<(bool, String)> {
    let alpha = class(&[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED);
    let mut passed = 0;
    for _ in 0..10 {
        let h = RadialHamiltonian::random_compact(&mut rng, &alpha)?;
        let report = check_existence_bound(&h, &alpha)?;
        let deep = report.c >= report.ell + 0.1;
        let high = report.max_action.is_some_and(|m| m >= report.c - 1e-8);
        if deep && high && report.verdict == Verdict::Pass {
            passed += 1;
        }
    }
    Ok((passed == 10, format!("{passed}/10 random profiles PASS")))
}

fn oracle_agreement() -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for a in [vec![1], vec![1, 1]] {
        let alpha = WindingClass(a);
        let morse = ranks_for(&alpha, 32)?;
        let broken = broken_homology(&pendulum_potential(&alpha), &alpha, 8)?;
        ok &= morse.degrees == broken.degrees;
        parts.push(format!("{:?}: {:?} vs {:?}", alpha.0, morse.ranks(), broken.ranks()));
    }
    Ok((ok, parts.join("; ")))
}
