//! Experiment configuration: parsing, defaults and cross-field validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crystal::{lattice_gap_factor, Domain};
use crate::dynamics::{CoolingParams, ForceMethod, SdeConfig, STABILITY_LIMIT};
use crate::error::{Error, Result};
use crate::limits::GridSpec;
use crate::potential::{validate_assumption, PotentialSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Rigidity,
    Simulate,
    Analyze,
    Refbm,
    #[default]
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub potential: PotentialSpec,
    pub crystal: CrystalBlock,
    pub dynamics: DynamicsBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalBlock {
    pub dim: usize,
    /// Macroscopic scale ε.
    pub epsilon: f64,
    pub construction: Construction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Construction {
    /// Lattice points of `ε⁻¹·domain` (domain in macroscopic units).
    Lattice { domain: Domain },
    /// A single `n`-dimensional cell.
    Simplex { n: usize },
    /// A crystal JSON file, resolved relative to the config file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoolingBlock {
    pub nu: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Multiplies the scheduled β (e.g. to run deliberately hot ensembles).
    #[serde(default = "one")]
    pub beta_scale: f64,
}

fn default_p() -> f64 {
    2.0
}

fn default_margin() -> f64 {
    10.0
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl CoolingBlock {
    pub fn params(&self) -> CoolingParams {
        CoolingParams {
            nu: self.nu,
            p: self.p,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBlock {
    /// Fixed inverse temperature; exclusive with `cooling`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cooling: Option<CoolingBlock>,
    /// Defaults to the largest step allowed by the stability guard.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_micro: Option<f64>,
    pub t_final: f64,
    pub record_every: f64,
    /// Edge-sup tube width; defaults to `ε^ν` when a cooling block is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_c: Option<f64>,
    pub seed: u64,
    pub paths: usize,
    #[serde(default = "yes")]
    pub halt_on_exit: bool,
    #[serde(default)]
    pub no_noise: bool,
    #[serde(default)]
    pub force_method: ForceMethod,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub refbm: RefBmBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative tolerance on quadratic-variation rates.
    pub qv_rel: f64,
    /// Number of standard errors allowed for variance checks.
    pub sigmas: f64,
    /// Safety factor applied to the observed energy ratios.
    pub energy_bracket_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            qv_rel: 0.15,
            sigmas: 3.0,
            energy_bracket_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefBmBlock {
    pub paths: usize,
    pub dt: f64,
    /// Defaults to the dynamics horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
}

impl Default for RefBmBlock {
    fn default() -> Self {
        RefBmBlock {
            paths: 200,
            dt: 1e-3,
            t_final: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Reads a config; relative file paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if let Construction::File { path: p } = &mut cfg.crystal.construction {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn kappa(&self) -> i32 {
        self.crystal.dim as i32 + 2
    }

    /// Tube width, from `cap_c` or `ε^ν`.
    pub fn cap_c(&self) -> Option<f64> {
        self.dynamics.cap_c.or_else(|| {
            self.dynamics
                .cooling
                .as_ref()
                .map(|c| self.crystal.epsilon.powf(c.nu))
        })
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        let report = validate_assumption(&self.potential);
        for v in report.violations() {
            // Checks on a single parameter are named after it ("w < a", "k > 0").
            let field = match v.name.split_whitespace().next() {
                Some(f @ ("a" | "w" | "k")) => f,
                _ => "shape",
            };
            errs.push(format!("potential.{field}: {} fails ({})", v.name, v.detail));
        }

        let d = self.crystal.dim;
        if d == 0 {
            errs.push("crystal.dim: must be at least 1".into());
        }
        let eps = self.crystal.epsilon;
        if !(eps > 0.0 && eps <= 1.0) {
            errs.push(format!("crystal.epsilon: must lie in (0, 1], got {eps}"));
        }
        match &self.crystal.construction {
            Construction::Lattice { domain } => {
                let dd = match domain {
                    Domain::Ball { center, radius } => {
                        if !(*radius > 0.0) {
                            errs.push("crystal.construction.domain.radius: must be positive".into());
                        }
                        center.len()
                    }
                    Domain::Box { lo, hi } => {
                        if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                            errs.push("crystal.construction.domain: need lo < hi componentwise".into());
                        }
                        lo.len()
                    }
                };
                if dd != d {
                    errs.push(format!(
                        "crystal.construction.domain: dimension {dd} does not match crystal.dim {d}"
                    ));
                }
                if d > 0 && !(self.potential.b() < lattice_gap_factor(d) * self.potential.a) {
                    errs.push(format!(
                        "potential.w: range b = {} must be below {:.4}·a for the {d}-dimensional lattice",
                        self.potential.b(),
                        lattice_gap_factor(d)
                    ));
                }
            }
            Construction::Simplex { n } => {
                if *n > d {
                    errs.push(format!("crystal.construction.n: {n} exceeds crystal.dim {d}"));
                }
            }
            Construction::File { .. } => {}
        }

        let dy = &self.dynamics;
        match (&dy.beta, &dy.cooling) {
            (Some(_), Some(_)) => errs.push("dynamics: give either beta or cooling, not both".into()),
            (None, None) => errs.push("dynamics: one of beta or cooling is required".into()),
            (Some(b), None) if !(*b > 0.0) => errs.push(format!("dynamics.beta: must be positive, got {b}")),
            _ => {}
        }
        if let Some(c) = &dy.cooling {
            if !(c.nu > 0.0) {
                errs.push(format!("dynamics.cooling.nu: must be positive, got {}", c.nu));
            }
            if !(c.p > 1.0) {
                errs.push(format!("dynamics.cooling.p: must exceed 1, got {}", c.p));
            }
            if !(c.margin >= 10.0) {
                errs.push(format!("dynamics.cooling.margin: must be at least 10, got {}", c.margin));
            }
            if !(c.beta_scale > 0.0) {
                errs.push(format!("dynamics.cooling.beta_scale: must be positive, got {}", c.beta_scale));
            }
        }
        if !(dy.t_final > 0.0) {
            errs.push(format!("dynamics.t_final: must be positive, got {}", dy.t_final));
        }
        if !(dy.record_every > 0.0 && dy.record_every <= dy.t_final) {
            errs.push(format!("dynamics.record_every: must lie in (0, t_final], got {}", dy.record_every));
        }
        if dy.paths == 0 {
            errs.push("dynamics.paths: must be at least 1".into());
        }
        match self.cap_c() {
            None => errs.push("dynamics.cap_c: required when beta is fixed".into()),
            Some(c) if !(c > 0.0) => errs.push(format!("dynamics.cap_c: must be positive, got {c}")),
            _ => {}
        }
        if let Some(dt) = dy.dt_micro {
            if !(dt > 0.0) {
                errs.push(format!("dynamics.dt_micro: must be positive, got {dt}"));
            } else if let Some(b) = dy.beta {
                let guard = b * self.potential.chk() * dt;
                if guard > STABILITY_LIMIT {
                    errs.push(format!(
                        "dynamics.dt_micro: beta·chk·dt = {guard:.3e} exceeds {STABILITY_LIMIT}"
                    ));
                }
            }
        }

        let a = &self.analysis;
        if a.grid.cells_per_dim == 0 {
            errs.push("analysis.grid.cells_per_dim: must be positive".into());
        }
        if !(a.tolerances.qv_rel > 0.0) || !(a.tolerances.sigmas > 0.0) || !(a.tolerances.energy_bracket_factor >= 1.0) {
            errs.push("analysis.tolerances: qv_rel and sigmas must be positive, energy_bracket_factor ≥ 1".into());
        }
        if a.refbm.paths == 0 || !(a.refbm.dt > 0.0) {
            errs.push("analysis.refbm: paths and dt must be positive".into());
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// SDE parameters once β and the step are known.
    pub fn sde_config(&self, beta: f64) -> SdeConfig {
        let dt = self
            .dynamics
            .dt_micro
            .unwrap_or_else(|| SdeConfig::stable_dt(beta, self.potential.chk()));
        SdeConfig {
            epsilon: self.crystal.epsilon,
            beta,
            dt_micro: dt,
            t_final: self.dynamics.t_final,
            record_every: self.dynamics.record_every,
            cap_c: self.cap_c().unwrap_or(f64::NAN),
            seed: self.dynamics.seed,
            halt_on_exit: self.dynamics.halt_on_exit,
            no_noise: self.dynamics.no_noise,
            force_method: self.dynamics.force_method,
        }
    }

    /// Copy with every derived default written out. Step and tube width need
    /// β; without it they stay as given.
    pub fn resolved(&self, beta: Option<f64>) -> Self {
        let mut r = self.clone();
        if let Some(beta) = beta {
            let sde = self.sde_config(beta);
            r.dynamics.dt_micro = Some(sde.dt_micro);
            r.dynamics.cap_c = Some(sde.cap_c);
        }
        if r.analysis.refbm.t_final.is_none() {
            r.analysis.refbm.t_final = Some(self.dynamics.t_final);
        }
        r
    }
}
