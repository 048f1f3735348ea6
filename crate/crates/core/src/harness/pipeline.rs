//! The runnable pipelines and the artifacts they leave in the output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crystal::{lattice_patch, simplex_cell, validate_crystal, Crystal, CrystalReport};
use crate::dynamics::{cooling_schedule, path_seed, simulate_ensemble, splitmix64, PathRecord};
use crate::error::{Error, Result};
use crate::lie::so_pairs;
use crate::limits::{crystal_moments, extract_m, law_comparison, reference_ensemble, MacroscopicBody};
use crate::rigidity::{rigidity_report, RigidityReport};
use crate::stats;

use super::config::{Construction, ExperimentConfig, Pipeline};
use super::io::{config_hash, hashed_csv_writer, read_json, read_path_csv, write_json, write_path_csv};
use super::report::{variance_curve, EnergyBracket, ExperimentStats, StatisticsReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Eigenvalues beyond this many are summarized, not listed.
pub const MAX_LISTED_EIGENVALUES: usize = 50;

pub const CRYSTAL_FILE: &str = "crystal.json";
pub const RIGIDITY_FILE: &str = "rigidity.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const STATS_FILE: &str = "stats.json";
pub const REFBM_CSV: &str = "refbm.csv";
pub const REFBM_FILE: &str = "refbm.json";
pub const RESOLVED_FILE: &str = "config.resolved.json";

pub fn path_file_name(index: usize) -> String {
    format!("path_{index:04}.csv")
}

pub fn build_crystal(cfg: &ExperimentConfig) -> Result<Crystal> {
    let c = match &cfg.crystal.construction {
        Construction::Lattice { domain } => {
            lattice_patch(cfg.crystal.dim, &cfg.potential, domain, cfg.crystal.epsilon)?
        }
        Construction::Simplex { n } => simplex_cell(*n, cfg.crystal.dim, cfg.potential.a)?,
        Construction::File { path } => {
            let c = Crystal::from_json(&std::fs::read_to_string(path)?)?;
            if c.dim() != cfg.crystal.dim {
                return Err(Error::DimensionMismatch {
                    expected: cfg.crystal.dim,
                    found: c.dim(),
                });
            }
            if (c.spacing() - cfg.potential.a).abs() > 1e-12 * cfg.potential.a {
                return Err(Error::Config(vec![format!(
                    "crystal.construction.path: spacing {} differs from potential.a {}",
                    c.spacing(),
                    cfg.potential.a
                )]));
            }
            c.centered()
        }
    };
    validate_crystal(&c, &cfg.potential)?;
    Ok(c)
}

/// Fixed β, or the cooling schedule times `beta_scale`.
pub fn resolve_beta(cfg: &ExperimentConfig, c: &Crystal, report: &RigidityReport) -> Result<f64> {
    match (&cfg.dynamics.beta, &cfg.dynamics.cooling) {
        (Some(b), _) => Ok(*b),
        (None, Some(cool)) => {
            let beta = cooling_schedule(cfg.crystal.epsilon, &cool.params(), report, c.len(), c.dim())?;
            Ok(beta * cool.beta_scale)
        }
        (None, None) => Err(Error::Config(vec!["dynamics: one of beta or cooling is required".into()])),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityDocument {
    pub config_hash: String,
    pub crystal: CrystalReport,
    pub dim: usize,
    pub chk: f64,
    pub rigid: bool,
    pub trivial_dim: usize,
    pub zero_count: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eigenvalue_count: usize,
    /// Smallest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub max_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub index: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// Exit time from the tube; `None` for survivors.
    pub sigma: Option<f64>,
    pub steps: u64,
    pub com_identity_error: f64,
    /// Set when integration failed; such paths count as exits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub epsilon: f64,
    pub beta: f64,
    pub cap_c: f64,
    pub dt_micro: f64,
    /// Step after rounding to a whole number of steps per record.
    pub dt_micro_used: Option<f64>,
    pub n_particles: usize,
    pub survival_fraction: f64,
    pub paths: Vec<PathSummary>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefBmRate {
    pub alpha: usize,
    pub beta: usize,
    pub qv_rate: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefBmReport {
    pub config_hash: String,
    pub seed: u64,
    pub paths: usize,
    pub dt: f64,
    pub t_final: f64,
    pub body: MacroscopicBody,
    pub rates: Vec<RefBmRate>,
    /// Planar case: variance of the unwrapped terminal angle and `t/(q̄¹+q̄²)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_angle_variance: Option<(f64, f64)>,
}

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub config_hash: String,
    pub beta: Option<f64>,
    pub files: Vec<PathBuf>,
    pub rigidity: Option<RigidityDocument>,
    pub summary: Option<RunSummary>,
    pub stats: Option<StatisticsReport>,
    pub refbm: Option<RefBmReport>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    crystal: Crystal,
    report: RigidityReport,
    beta: Result<f64>,
    hash: String,
}

impl Context<'_> {
    fn beta(&self) -> Result<f64> {
        match &self.beta {
            Ok(b) => Ok(*b),
            Err(e) => Err(Error::ScheduleUndefined(e.to_string())),
        }
    }
}

/// Validates `cfg`, runs `pipeline` and writes its artifacts into `out`.
///
/// Artifacts are written as each stage completes, so a failing later stage
/// leaves the earlier ones in place.
pub fn run_experiment(cfg: &ExperimentConfig, pipeline: Pipeline, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let crystal = build_crystal(cfg)?;
    let report = rigidity_report(&crystal, cfg.potential.chk())?;
    let beta = resolve_beta(cfg, &crystal, &report);
    let resolved = cfg.resolved(beta.as_ref().ok().copied());
    let hash = config_hash(&resolved)?;
    log::info!(
        "rigidbrown {VERSION}: pipeline {pipeline:?}, master seed {}, config hash {hash}",
        cfg.dynamics.seed
    );

    let mut outcome = RunOutcome {
        config_hash: hash.clone(),
        beta: beta.as_ref().ok().copied(),
        ..RunOutcome::default()
    };
    let resolved_path = out.join(RESOLVED_FILE);
    write_json(&resolved_path, &resolved)?;
    outcome.files.push(resolved_path);

    let ctx = Context {
        cfg,
        out,
        crystal,
        report,
        beta,
        hash,
    };
    let stages: &[Pipeline] = match pipeline {
        Pipeline::Full => &[Pipeline::Rigidity, Pipeline::Simulate, Pipeline::Analyze, Pipeline::Refbm],
        ref p => std::slice::from_ref(p),
    };
    for stage in stages {
        match stage {
            Pipeline::Rigidity => stage_rigidity(&ctx, &mut outcome)?,
            Pipeline::Simulate => stage_simulate(&ctx, &resolved, &mut outcome)?,
            Pipeline::Analyze => stage_analyze(&ctx, &mut outcome)?,
            Pipeline::Refbm => stage_refbm(&ctx, &mut outcome)?,
            Pipeline::Full => unreachable!(),
        }
    }
    Ok(outcome)
}

fn stage_rigidity(ctx: &Context, outcome: &mut RunOutcome) -> Result<()> {
    let c = &ctx.crystal;
    let r = &ctx.report;
    let crystal_path = ctx.out.join(CRYSTAL_FILE);
    std::fs::write(&crystal_path, c.to_json()? + "\n")?;
    let doc = RigidityDocument {
        config_hash: ctx.hash.clone(),
        crystal: validate_crystal(c, &ctx.cfg.potential)?,
        dim: c.dim(),
        chk: ctx.cfg.potential.chk(),
        rigid: r.rigid,
        trivial_dim: r.trivial_dim,
        zero_count: r.zero_count,
        lambda1: r.lambda1,
        lambda2: r.lambda2,
        eigenvalue_count: r.eigenvalues.len(),
        eigenvalues: r.eigenvalues.iter().take(MAX_LISTED_EIGENVALUES).copied().collect(),
        max_eigenvalue: r.eigenvalues.last().copied().unwrap_or(0.0),
    };
    let rig_path = ctx.out.join(RIGIDITY_FILE);
    write_json(&rig_path, &doc)?;
    log::info!(
        "rigidity: N = {}, rigid = {}, lambda1 = {:.6e}, lambda2 = {:.6e}",
        c.len(),
        r.rigid,
        r.lambda1,
        r.lambda2
    );
    outcome.files.extend([crystal_path, rig_path]);
    outcome.rigidity = Some(doc);
    Ok(())
}

fn stage_simulate(ctx: &Context, resolved: &ExperimentConfig, outcome: &mut RunOutcome) -> Result<()> {
    if !ctx.report.rigid {
        log::warn!("crystal is not infinitesimally rigid; simulating anyway");
    }
    let beta = ctx.beta()?;
    let sde = ctx.cfg.sde_config(beta);
    let m = ctx.cfg.dynamics.paths;
    log::info!(
        "simulate: {m} paths, beta = {beta:.6e}, dt = {:.6e}, cap = {:.6e}",
        sde.dt_micro,
        sde.cap_c
    );
    let results = simulate_ensemble(&ctx.crystal, &ctx.cfg.potential, &sde, m);
    let mut paths = Vec::with_capacity(m);
    let mut dt_used = None;
    for (k, res) in results.into_iter().enumerate() {
        let seed = path_seed(sde.seed, k as u64);
        match res {
            Ok(rec) => {
                let name = path_file_name(k);
                let p = ctx.out.join(&name);
                write_path_csv(&p, &ctx.hash, &rec)?;
                outcome.files.push(p);
                dt_used.get_or_insert(rec.dt_micro_used);
                paths.push(PathSummary {
                    index: k,
                    seed,
                    file: Some(name),
                    sigma: rec.sigma,
                    steps: rec.steps,
                    com_identity_error: rec.com_identity_error,
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("path {k} failed: {e}");
                let steps = match &e {
                    Error::IntegrationFailure { step, .. } => *step,
                    _ => 0,
                };
                paths.push(PathSummary {
                    index: k,
                    seed,
                    file: None,
                    sigma: Some(0.0),
                    steps,
                    com_identity_error: f64::NAN,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let survivors = paths.iter().filter(|p| p.sigma.is_none()).count();
    let summary = RunSummary {
        version: VERSION.to_string(),
        config_hash: ctx.hash.clone(),
        master_seed: sde.seed,
        epsilon: sde.epsilon,
        beta,
        cap_c: sde.cap_c,
        dt_micro: sde.dt_micro,
        dt_micro_used: dt_used,
        n_particles: ctx.crystal.len(),
        survival_fraction: survivors as f64 / m as f64,
        paths,
        config: resolved.clone(),
    };
    log::info!("simulate: {survivors}/{m} paths stayed in the tube");
    let p = ctx.out.join(SUMMARY_FILE);
    write_json(&p, &summary)?;
    outcome.files.push(p);
    outcome.summary = Some(summary);
    Ok(())
}

/// Path records of a finished simulation, read back from `dir`.
pub fn load_paths(dir: &Path) -> Result<(RunSummary, Vec<PathRecord>)> {
    let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
    let d = summary.config.crystal.dim;
    let mut recs = Vec::new();
    for p in &summary.paths {
        let Some(file) = &p.file else { continue };
        let samples = read_path_csv(&dir.join(file), d)?;
        recs.push(PathRecord {
            dim: d,
            samples,
            sigma: p.sigma,
            brownian_mean: Vec::new(),
            com_identity_error: p.com_identity_error,
            path_seed: p.seed,
            steps: p.steps,
            dt_micro_used: summary.dt_micro_used.unwrap_or(summary.dt_micro),
        });
    }
    Ok((summary, recs))
}

fn stage_analyze(ctx: &Context, outcome: &mut RunOutcome) -> Result<()> {
    let (summary, recs) = load_paths(ctx.out)?;
    if summary.config_hash != ctx.hash {
        log::warn!(
            "analyze: simulation in {} was produced by a different config ({})",
            ctx.out.display(),
            summary.config_hash
        );
    }
    let eps = summary.epsilon;
    let body = crystal_moments(&ctx.crystal, eps)?;
    let (law, law_error) = match law_comparison(&recs, &ctx.crystal, &body, eps) {
        Ok(l) => (Some(l), None),
        Err(e @ Error::InsufficientData(_)) => {
            log::warn!("analyze: {e}");
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let survivors = summary.paths.iter().filter(|p| p.sigma.is_none()).count();
    let exp = ExperimentStats {
        epsilon: eps,
        beta: summary.beta,
        n_particles: ctx.crystal.len(),
        paths: summary.paths.len(),
        survivors,
        survival_fraction: summary.survival_fraction,
        law,
        law_error,
        variance_curve: variance_curve(&recs, eps, ctx.crystal.len()),
        energy_bracket: EnergyBracket::calibrate(
            &recs,
            ctx.report.lambda2,
            ctx.cfg.analysis.tolerances.energy_bracket_factor,
        ),
    };
    let stats = StatisticsReport {
        config_hash: ctx.hash.clone(),
        experiments: vec![exp],
    };
    let p = ctx.out.join(STATS_FILE);
    write_json(&p, &stats)?;
    outcome.files.push(p);
    outcome.stats = Some(stats);
    Ok(())
}

fn stage_refbm(ctx: &Context, outcome: &mut RunOutcome) -> Result<()> {
    let rb = &ctx.cfg.analysis.refbm;
    let eps = ctx.cfg.crystal.epsilon;
    let body = crystal_moments(&ctx.crystal, eps)?;
    let t_final = rb.t_final.unwrap_or(ctx.cfg.dynamics.t_final);
    // Kept apart from the simulation's path streams.
    let seed = splitmix64(ctx.cfg.dynamics.seed ^ 0x7265_6662_6d00_0000);
    let ens = reference_ensemble(&body, t_final, rb.dt, seed, rb.paths)?;
    let d = body.dim();
    let pairs = so_pairs(d);

    let csv_path = ctx.out.join(REFBM_CSV);
    let mut w = hashed_csv_writer(&csv_path, &ctx.hash)?;
    let mut header = vec!["path".to_string(), "time".to_string()];
    for a in 1..=d {
        for b in 1..=d {
            header.push(format!("theta_{a}{b}"));
        }
    }
    let csv_err = |e: csv::Error| Error::Malformed(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    let mut qv = vec![0.0; pairs.len()];
    let mut angles = Vec::with_capacity(ens.len());
    for (k, path) in ens.iter().enumerate() {
        for (t, th) in path.times.iter().zip(&path.thetas) {
            let mut row = vec![k.to_string(), t.to_string()];
            row.extend(th.transpose().iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        let mp = extract_m(&path.times, &path.thetas, false)?;
        for (q, v) in qv.iter_mut().zip(&mp.quadratic_variation) {
            *q += v;
        }
        if d == 2 {
            angles.push(mp.m.last().map_or(0.0, |m| m[(1, 0)]));
        }
    }
    w.flush()?;
    let horizon = t_final * ens.len() as f64;
    let rates = pairs
        .iter()
        .zip(&qv)
        .map(|(&(a, b), q)| {
            Ok(RefBmRate {
                alpha: a,
                beta: b,
                qv_rate: q / horizon,
                predicted: body.rotational_rate(a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let terminal_angle_variance = (d == 2).then(|| {
        let pred = t_final * body.rotational_rate(0, 1).unwrap_or(f64::NAN);
        (stats::variance(&angles), pred)
    });
    let rep = RefBmReport {
        config_hash: ctx.hash.clone(),
        seed,
        paths: rb.paths,
        dt: rb.dt,
        t_final,
        body,
        rates,
        terminal_angle_variance,
    };
    let p = ctx.out.join(REFBM_FILE);
    write_json(&p, &rep)?;
    outcome.files.extend([csv_path, p]);
    outcome.refbm = Some(rep);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::from_json(
            r#"{
  "schema_version": 1,
  "crystal": {
    "dim": 2,
    "epsilon": 0.5,
    "construction": {"kind": "lattice", "domain": {"shape": "ball", "center": [0.0, 0.0], "radius": 0.505}}
  },
  "dynamics": {"cooling": {"nu": 2.0}, "t_final": 0.004, "record_every": 0.001, "seed": 11, "paths": 40},
  "analysis": {"refbm": {"paths": 20, "dt": 0.001}}
}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        cfg.output_dir = PathBuf::from("unused");
        cfg
    }

    #[test]
    fn full_pipeline_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let out = run_experiment(&cfg, Pipeline::Full, dir.path()).unwrap();
        for f in [CRYSTAL_FILE, RIGIDITY_FILE, SUMMARY_FILE, STATS_FILE, REFBM_CSV, REFBM_FILE, RESOLVED_FILE] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let summary = out.summary.unwrap();
        assert_eq!(summary.paths.len(), 40);
        assert_eq!(summary.n_particles, 7);
        let stats = out.stats.unwrap();
        assert_eq!(stats.experiments.len(), 1);
        assert!(stats.experiments[0].law.is_some());
        assert!(!stats.experiments[0].variance_curve.is_empty());

        // The echoed config re-parses to the resolved config.
        let echoed = ExperimentConfig::load(&dir.path().join(RESOLVED_FILE)).unwrap();
        assert_eq!(echoed, cfg.resolved(out.beta));
        echoed.validate().unwrap();
        // And running it again reproduces the hash.
        assert_eq!(config_hash(&echoed.resolved(out.beta)).unwrap(), out.config_hash);

        let (_, recs) = load_paths(dir.path()).unwrap();
        assert_eq!(recs.len(), 40);
        assert_eq!(
            super::super::io::read_csv_hash(&dir.path().join(path_file_name(0))).unwrap(),
            Some(out.config_hash.clone())
        );
    }

    #[test]
    fn rigidity_only_skips_dynamics() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&small_config(), Pipeline::Rigidity, dir.path()).unwrap();
        let doc = out.rigidity.unwrap();
        assert!(doc.rigid);
        assert_eq!(doc.zero_count, 3);
        assert_eq!(doc.eigenvalue_count, 14);
        assert!(!dir.path().join(SUMMARY_FILE).exists());
    }

    #[test]
    fn analyze_without_simulation_fails() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&small_config(), Pipeline::Analyze, dir.path());
        assert!(matches!(r, Err(Error::Io(_))));
        // The resolved config was still written.
        assert!(dir.path().join(RESOLVED_FILE).is_file());
    }

    #[test]
    fn flexible_crystal_cannot_be_cooled() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        let square = Crystal::from_points(
            1.0,
            crate::points::Configuration::from_points(2, &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let file = dir.path().join("square.json");
        std::fs::write(&file, square.to_json().unwrap()).unwrap();
        cfg.crystal.construction = Construction::File { path: file };
        let r = run_experiment(&cfg, Pipeline::Full, &dir.path().join("out"));
        assert!(matches!(r, Err(Error::ScheduleUndefined(_))), "{r:?}");
        assert!(dir.path().join("out").join(RIGIDITY_FILE).is_file());
    }
}
