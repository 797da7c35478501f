//! Experiment configuration: one JSON document, optionally overridden by flags.

use std::path::{Path, PathBuf};

use loopfloer::broken_geodesics::MIN_VERTICES;
use loopfloer::potentials::{pendulum_potential, Mode, Potential};
use loopfloer::torus_loops::WindingClass;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Critical,
    Flow,
    Complex,
    Floer,
    Radial,
    Oracle,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Critical => "critical",
            Command::Flow => "flow",
            Command::Complex => "complex",
            Command::Floer => "floer",
            Command::Radial => "radial",
            Command::Oracle => "oracle",
            Command::Verify => "verify",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialSpec {
    #[default]
    Pendulum,
    Modes(Vec<Mode>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub count: usize,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    /// Loop samples N.
    pub samples: usize,
    /// Seeds per axis for critical-point enumeration.
    pub per_axis: usize,
    pub ns: usize,
    pub nt: usize,
    pub s_half: Option<f64>,
    /// Vertices of the polygon model.
    pub r: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self { samples: 32, per_axis: 3, ns: 400, nt: 16, s_half: None, r: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSpec {
    Quadratic { r_max: f64 },
    Sharpness { delta: f64 },
    Random,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "one")]
    pub n: usize,
    /// Winding class; all ones when absent.
    #[serde(default)]
    pub alpha: Option<Vec<i64>>,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// ε values of the adiabatic comparison in `floer`.
    #[serde(default)]
    pub adiabatic: Option<Vec<f64>>,
    /// Action cutoff of the sublevel complex in `complex`.
    #[serde(default)]
    pub cutoff: Option<f64>,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
    #[serde(default)]
    pub allow_contractible: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_epsilons() -> Vec<f64> {
    vec![1.0, 0.25]
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            n: 1,
            alpha: None,
            potential: PotentialSpec::default(),
            perturbation: None,
            grid: Grid::default(),
            epsilons: default_epsilons(),
            adiabatic: None,
            cutoff: None,
            profile: None,
            allow_contractible: false,
            out: None,
            seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Profile files are resolved against the configuration's directory.
        if let Some(ProfileSpec::File(p)) = &mut cfg.profile {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn class(&self) -> WindingClass {
        WindingClass(self.alpha.clone().unwrap_or_else(|| vec![1; self.n]))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if let Some(a) = &self.alpha {
            if a.len() != self.n {
                return bad(format!("alpha has {} entries, n = {}", a.len(), self.n));
            }
        }
        if self.class().is_zero() && !self.allow_contractible && self.command == Command::Radial {
            return bad("the contractible class needs allow_contractible".into());
        }
        let g = &self.grid;
        for (name, v) in [("samples", g.samples), ("nt", g.nt)] {
            if v < 16 || !v.is_power_of_two() {
                return bad(format!("grid.{name} must be a power of two >= 16, got {v}"));
            }
        }
        if g.per_axis < 2 {
            return bad("grid.per_axis must be at least 2".into());
        }
        if g.ns < 12 || g.ns % 2 != 0 {
            return bad(format!("grid.ns must be even and at least 12, got {}", g.ns));
        }
        if let Some(s) = g.s_half {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("grid.s_half must be positive, got {s}"));
            }
        }
        if g.r < MIN_VERTICES {
            return bad(format!("grid.r must be at least {MIN_VERTICES}, got {}", g.r));
        }
        for &e in self.epsilons.iter().chain(self.adiabatic.iter().flatten()) {
            if !(e > 0.0 && e <= 1.0) {
                return bad(format!("epsilon must lie in (0, 1], got {e}"));
            }
        }
        if let Some(p) = &self.perturbation {
            if !(p.amplitude.is_finite() && p.amplitude >= 0.0) {
                return bad(format!("perturbation amplitude must be finite and non-negative, got {}", p.amplitude));
            }
        }
        if let Some(c) = self.cutoff {
            if !c.is_finite() {
                return bad("cutoff must be finite".into());
            }
        }
        match &self.profile {
            Some(ProfileSpec::Quadratic { r_max }) if !(*r_max > 0.0) => return bad("r_max must be positive".into()),
            Some(ProfileSpec::Sharpness { delta }) if !(*delta > 0.0 && *delta < 1.0) => {
                return bad("sharpness delta must lie in (0, 1)".into())
            }
            None if self.command == Command::Radial => return bad("radial needs a profile".into()),
            _ => {}
        }
        self.build_potential().map(|_| ())
    }

    pub fn build_potential(&self) -> Result<Potential, CliError> {
        let base = match &self.potential {
            PotentialSpec::Pendulum => pendulum_potential(&self.class()),
            PotentialSpec::Modes(modes) => {
                Potential::new(self.n, modes.clone()).map_err(|e| CliError::Config(format!("potential: {e}")))?
            }
        };
        Ok(match &self.perturbation {
            Some(p) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                &base + &Potential::random_perturbation(self.n, &mut rng, p.count, p.amplitude)
            }
            None => base,
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out").join(self.command.name()))
    }
}
