//! Statistics reports and the flat tables derived from them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{kappa, PathRecord};
use crate::error::Result;
use crate::limits::LawReport;
use crate::stats;

use super::io::{config_hash, hashed_csv_writer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub config_hash: String,
    #[serde(default)]
    pub experiments: Vec<ExperimentStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStats {
    pub epsilon: f64,
    pub beta: f64,
    pub n_particles: usize,
    pub paths: usize,
    pub survivors: usize,
    pub survival_fraction: f64,
    /// Absent when too few paths survived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law_error: Option<String>,
    #[serde(default)]
    pub variance_curve: Vec<VariancePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_bracket: Option<EnergyBracket>,
}

/// Cross-path variance of `ε(η^p(t) − η^p(0))` over surviving paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub time: f64,
    pub coord: usize,
    pub sample_variance: f64,
    pub predicted: f64,
}

/// Observed range of `G/H` along recorded tube points, with the bracket
/// constant `C` such that `λ⁽²⁾/C ≤ G/H ≤ C` held with the given safety factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBracket {
    pub lambda2: f64,
    pub samples: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Smallest `C` consistent with the observations.
    pub c_observed: f64,
    pub factor: f64,
    pub c_calibrated: f64,
}

impl EnergyBracket {
    /// Ratios `G/H` at recorded points of surviving paths with `H > 0`.
    pub fn ratios(paths: &[PathRecord]) -> Vec<f64> {
        paths
            .iter()
            .filter(|p| p.survived())
            .flat_map(|p| p.samples.iter())
            .filter(|s| s.h > 0.0 && s.g > 0.0)
            .map(|s| s.g / s.h)
            .collect()
    }

    pub fn calibrate(paths: &[PathRecord], lambda2: f64, factor: f64) -> Option<Self> {
        let r = Self::ratios(paths);
        if r.is_empty() {
            return None;
        }
        let min_ratio = r.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ratio = r.iter().copied().fold(0.0, f64::max);
        let c_observed = max_ratio.max(lambda2 / min_ratio);
        Some(EnergyBracket {
            lambda2,
            samples: r.len(),
            min_ratio,
            max_ratio,
            c_observed,
            factor,
            c_calibrated: factor * c_observed,
        })
    }

    /// Ratios of `paths` outside `[λ⁽²⁾/C, C]` for the calibrated `C`.
    pub fn violations(&self, paths: &[PathRecord]) -> usize {
        let c = self.c_calibrated;
        Self::ratios(paths)
            .into_iter()
            .filter(|&r| r > c || r < self.lambda2 / c)
            .count()
    }
}

pub fn variance_curve(paths: &[PathRecord], epsilon: f64, n: usize) -> Vec<VariancePoint> {
    let surv: Vec<&PathRecord> = paths.iter().filter(|p| p.survived()).collect();
    let Some(first) = surv.first() else {
        return Vec::new();
    };
    let d = first.dim;
    let len = surv.iter().map(|p| p.samples.len()).min().unwrap_or(0);
    let scale = epsilon.powi(2 - kappa(d)) / n as f64;
    let mut out = Vec::new();
    for k in 1..len {
        let time = first.samples[k].time;
        for p in 0..d {
            let v: Vec<f64> = surv
                .iter()
                .map(|r| epsilon * (r.samples[k].eta[p] - r.samples[0].eta[p]))
                .collect();
            out.push(VariancePoint {
                time,
                coord: p,
                sample_variance: stats::variance(&v),
                predicted: scale * time,
            });
        }
    }
    out
}

pub const VARIANCE_HEADER: &str = "epsilon,time,coord,sample_variance,predicted";
pub const QV_HEADER: &str = "epsilon,alpha,beta,qv_rate,predicted_finite_n,predicted_asymptotic,rel_err_finite_n";
pub const SURVIVAL_HEADER: &str = "epsilon,beta,paths,survivors,survival_fraction";

fn split(h: &str) -> Vec<&str> {
    h.split(',').collect()
}

/// Writes `variance_vs_t.csv`, `qv_vs_epsilon.csv` and `survival_vs_beta.csv`
/// into `dir` and returns their paths. Experiments lacking a section add no rows.
pub fn emit_plot_data(report: &StatisticsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let hash = if report.config_hash.is_empty() {
        config_hash(report)?
    } else {
        report.config_hash.clone()
    };
    if report.experiments.is_empty() {
        log::warn!("statistics report has no experiments; writing empty tables");
    }

    let var_path = dir.join("variance_vs_t.csv");
    let mut w = hashed_csv_writer(&var_path, &hash)?;
    w.write_record(split(VARIANCE_HEADER)).map_err(csv_io)?;
    for e in &report.experiments {
        if e.variance_curve.is_empty() {
            log::warn!("epsilon = {}: no variance curve (no surviving paths)", e.epsilon);
        }
        for v in &e.variance_curve {
            w.serialize((e.epsilon, v.time, v.coord + 1, v.sample_variance, v.predicted))
                .map_err(csv_io)?;
        }
    }
    w.flush()?;

    let qv_path = dir.join("qv_vs_epsilon.csv");
    let mut w = hashed_csv_writer(&qv_path, &hash)?;
    w.write_record(split(QV_HEADER)).map_err(csv_io)?;
    for e in &report.experiments {
        let Some(law) = &e.law else {
            log::warn!("epsilon = {}: no law comparison, skipped in QV table", e.epsilon);
            continue;
        };
        for r in &law.rotational {
            w.serialize((
                e.epsilon,
                r.alpha + 1,
                r.beta + 1,
                r.qv_rate,
                r.predicted_finite_n,
                r.predicted_asymptotic,
                r.rel_err_finite_n,
            ))
            .map_err(csv_io)?;
        }
    }
    w.flush()?;

    let surv_path = dir.join("survival_vs_beta.csv");
    let mut w = hashed_csv_writer(&surv_path, &hash)?;
    w.write_record(split(SURVIVAL_HEADER)).map_err(csv_io)?;
    for e in &report.experiments {
        w.serialize((e.epsilon, e.beta, e.paths, e.survivors, e.survival_fraction))
            .map_err(csv_io)?;
    }
    w.flush()?;

    Ok(vec![var_path, qv_path, surv_path])
}

fn csv_io(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Malformed(format!("csv: {e}"))
}
