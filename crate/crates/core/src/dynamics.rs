//! Overdamped Langevin dynamics of the particle system, energy functionals and
//! the cooling schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crystal::Crystal;
use crate::error::{Error, Result};
use crate::fit::fit_isometry;
use crate::points::{Configuration, DisplacementField};
use crate::potential::PotentialSpec;
use crate::rigidity::RigidityReport;

/// Largest admissible `β·č·dt_micro`.
pub const STABILITY_LIMIT: f64 = 0.1;

/// Below this many particles the direct O(N²) loop beats building a cell list.
const ALL_PAIRS_MAX: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceMethod {
    #[default]
    Auto,
    AllPairs,
    CellList,
}

/// Calls `f(i, j)` for every pair `i < j` with `|x_i − x_j|² < cutoff²`.
pub fn for_each_pair_in_range(
    x: &Configuration,
    cutoff: f64,
    method: ForceMethod,
    mut f: impl FnMut(usize, usize, f64) -> Result<()>,
) -> Result<()> {
    let n = x.len();
    let d = x.dim();
    let c2 = cutoff * cutoff;
    let use_cells = match method {
        ForceMethod::AllPairs => false,
        ForceMethod::CellList => true,
        ForceMethod::Auto => n > ALL_PAIRS_MAX,
    };
    let pts = x.as_slice();
    let r2 = |i: usize, j: usize| -> f64 {
        (0..d).map(|p| (pts[d * i + p] - pts[d * j + p]).powi(2)).sum()
    };
    if !use_cells || n < 2 {
        for i in 0..n {
            for j in i + 1..n {
                let s = r2(i, j);
                if s < c2 {
                    f(i, j, s)?;
                }
            }
        }
        return Ok(());
    }

    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in x.points() {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    // Grow the cells when the cloud is sparse so the grid stays O(N).
    let mut cell = cutoff;
    let mut extents: Vec<usize>;
    loop {
        extents = (0..d).map(|k| ((hi[k] - lo[k]) / cell).floor() as usize + 1).collect();
        let total: f64 = extents.iter().map(|&e| e as f64).product();
        if total <= (8 * n).max(64) as f64 {
            break;
        }
        cell *= 1.5;
    }
    let total: usize = extents.iter().product();
    let coord = |i: usize, k: usize| -> usize {
        (((pts[d * i + k] - lo[k]) / cell).floor() as usize).min(extents[k] - 1)
    };
    let linear = |cs: &[usize]| -> usize {
        let mut idx = 0;
        for k in (0..d).rev() {
            idx = idx * extents[k] + cs[k];
        }
        idx
    };
    let mut cell_of = vec![0usize; n];
    let mut counts = vec![0usize; total + 1];
    let mut cs = vec![0usize; d];
    for i in 0..n {
        for k in 0..d {
            cs[k] = coord(i, k);
        }
        cell_of[i] = linear(&cs);
        counts[cell_of[i] + 1] += 1;
    }
    for c in 0..total {
        counts[c + 1] += counts[c];
    }
    let starts = counts.clone();
    let mut fill = counts;
    let mut order = vec![0usize; n];
    for i in 0..n {
        order[fill[cell_of[i]]] = i;
        fill[cell_of[i]] += 1;
    }

    let n_offsets = 3usize.pow(d as u32);
    let mut nb = vec![0usize; d];
    for i in 0..n {
        for k in 0..d {
            cs[k] = coord(i, k);
        }
        'offsets: for o in 0..n_offsets {
            let mut rem = o;
            for k in 0..d {
                let delta = (rem % 3) as isize - 1;
                rem /= 3;
                let v = cs[k] as isize + delta;
                if v < 0 || v >= extents[k] as isize {
                    continue 'offsets;
                }
                nb[k] = v as usize;
            }
            let c = linear(&nb);
            for &j in &order[starts[c]..starts[c + 1]] {
                if j > i {
                    let s = r2(i, j);
                    if s < c2 {
                        f(i, j, s)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `−∇H(x)`, accumulated pairwise so that the blocks sum to zero.
pub fn total_force(
    x: &Configuration,
    spec: &PotentialSpec,
    method: ForceMethod,
) -> Result<DisplacementField> {
    let d = x.dim();
    let mut out = vec![0.0; x.as_slice().len()];
    let pts = x.as_slice();
    for_each_pair_in_range(x, spec.b(), method, |i, j, r2| {
        if r2 == 0.0 {
            return Err(Error::CoincidentPoints { i, j });
        }
        let s = spec.force_factor(r2.sqrt());
        for p in 0..d {
            let v = s * (pts[d * i + p] - pts[d * j + p]);
            out[d * i + p] += v;
            out[d * j + p] -= v;
        }
        Ok(())
    })?;
    Configuration::from_flat(d, out)
}

/// `(H(x) − H(z), ‖∇H(x)‖²)`.
pub fn energy(x: &Configuration, c: &Crystal, spec: &PotentialSpec) -> Result<(f64, f64)> {
    energy_with(x, c, spec, ForceMethod::Auto)
}

pub fn energy_with(
    x: &Configuration,
    c: &Crystal,
    spec: &PotentialSpec,
    method: ForceMethod,
) -> Result<(f64, f64)> {
    x.check_same_shape(c.positions())?;
    let mut h = 0.0;
    for &(i, j) in c.edges() {
        let r = crate::points::dist2(x.point(i), x.point(j)).sqrt();
        h += spec.excess(r);
    }
    for_each_pair_in_range(x, spec.b(), method, |i, j, r2| {
        if !c.neighbors(i).contains(&j) {
            h += spec.eval(r2.sqrt());
        }
        Ok(())
    })?;
    let f = total_force(x, spec, method)?;
    let g = f.as_slice().iter().map(|v| v * v).sum();
    Ok((h, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub dt_micro: f64,
    pub t_final: f64,
    pub record_every: f64,
    pub cap_c: f64,
    pub seed: u64,
    pub halt_on_exit: bool,
    /// Drop the noise term (deterministic gradient flow).
    pub no_noise: bool,
    pub force_method: ForceMethod,
}

impl SdeConfig {
    /// Largest step passing the stability guard.
    pub fn stable_dt(beta: f64, chk: f64) -> f64 {
        STABILITY_LIMIT / (beta * chk)
    }

    pub fn validate(&self, spec: &PotentialSpec) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            problems.push(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            problems.push(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.dt_micro > 0.0) {
            problems.push(format!("dt_micro must be positive, got {}", self.dt_micro));
        }
        if !(self.t_final > 0.0) {
            problems.push(format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.record_every > 0.0 && self.record_every <= self.t_final) {
            problems.push(format!(
                "record_every must lie in (0, t_final], got {}",
                self.record_every
            ));
        }
        if !(self.cap_c > 0.0) {
            problems.push(format!("cap_c must be positive, got {}", self.cap_c));
        }
        let guard = self.beta * spec.chk() * self.dt_micro;
        if guard > STABILITY_LIMIT * (1.0 + 1e-12) {
            problems.push(format!(
                "beta·chk·dt_micro = {guard:.3e} exceeds the stability limit {STABILITY_LIMIT}"
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSdeConfig(problems.join("; ")))
        }
    }
}

/// `κ = d + 2`.
pub fn kappa(dim: usize) -> i32 {
    dim as i32 + 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    /// Macroscopic time.
    pub time: f64,
    pub eta: Vec<f64>,
    /// Row-major.
    pub theta: Vec<f64>,
    pub h_inf: f64,
    pub gradh_inf: f64,
    pub h: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub dim: usize,
    pub samples: Vec<PathSample>,
    /// First recorded time with `gradh_inf > cap_c`; `None` if the path survived.
    pub sigma: Option<f64>,
    /// `(1/N) Σ_i w_i` at the last step.
    pub brownian_mean: Vec<f64>,
    /// Largest `|η(x(t)) − η(x(0)) − (drift-free prediction)|` seen at any micro step.
    pub com_identity_error: f64,
    pub path_seed: u64,
    pub steps: u64,
    pub dt_micro_used: f64,
}

impl PathRecord {
    pub fn survived(&self) -> bool {
        self.sigma.is_none()
    }
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` under a master seed.
pub fn path_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// One noise stream per particle so adding particles does not reshuffle the others.
fn particle_streams(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect()
}

/// Euler–Maruyama on the microscopic clock, started at the crystal.
pub fn simulate_path(c: &Crystal, spec: &PotentialSpec, cfg: &SdeConfig) -> Result<PathRecord> {
    cfg.validate(spec)?;
    let d = c.dim();
    let n = c.len();
    let time_scale = cfg.epsilon.powi(-kappa(d));
    let micro_per_record = cfg.record_every * time_scale;
    let steps_per_record = (micro_per_record / cfg.dt_micro * (1.0 - 1e-12)).ceil().max(1.0) as u64;
    let dt = micro_per_record / steps_per_record as f64;
    let n_records = (cfg.t_final / cfg.record_every * (1.0 - 1e-12)).ceil() as u64;
    let sqrt_dt = dt.sqrt();
    let drift = 0.5 * cfg.beta * dt;

    let mut streams = particle_streams(cfg.seed, n);
    let mut x = c.positions().clone();
    let eta0 = x.centroid();
    let mut noise_sum = vec![0.0; d];
    let mut com_err: f64 = 0.0;
    let mut samples = Vec::with_capacity(n_records as usize + 1);
    let mut sigma = None;
    let mut step: u64 = 0;
    let blowup = 1e6 * (c.spacing() * (n as f64) + c.positions().sup_norm());

    let record = |x: &Configuration, time: f64| -> Result<PathSample> {
        let dec = fit_isometry(x, c)?;
        let (h, g) = energy_with(x, c, spec, cfg.force_method)?;
        Ok(PathSample {
            time,
            eta: dec.eta.as_slice().to_vec(),
            theta: dec.theta.transpose().as_slice().to_vec(),
            h_inf: dec.h_inf,
            gradh_inf: dec.gradh_inf,
            h,
            g,
        })
    };
    samples.push(record(&x, 0.0)?);

    'outer: for k in 1..=n_records {
        for _ in 0..steps_per_record {
            let force = total_force(&x, spec, cfg.force_method)?;
            let last_good = x.as_slice().to_vec();
            let xs = x.as_mut_slice();
            for (v, f) in xs.iter_mut().zip(force.as_slice()) {
                *v += drift * f;
            }
            if !cfg.no_noise {
                for (i, rng) in streams.iter_mut().enumerate() {
                    for p in 0..d {
                        let xi: f64 = StandardNormal.sample(rng);
                        let inc = sqrt_dt * xi;
                        xs[d * i + p] += inc;
                        noise_sum[p] += inc;
                    }
                }
            }
            step += 1;
            if xs.iter().any(|v| !v.is_finite() || v.abs() > blowup) {
                return Err(Error::IntegrationFailure {
                    step,
                    reason: "non-finite or exploding coordinates".into(),
                    last_good,
                });
            }
            let eta = x.centroid();
            for p in 0..d {
                com_err = com_err.max((eta[p] - eta0[p] - noise_sum[p] / n as f64).abs());
            }
        }
        let time = k as f64 * cfg.record_every;
        let sample = match record(&x, time) {
            Ok(s) => s,
            Err(Error::DegenerateFit(_)) => {
                sigma.get_or_insert(time);
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        let exited = sample.gradh_inf > cfg.cap_c;
        samples.push(sample);
        if exited && sigma.is_none() {
            sigma = Some(time);
            if cfg.halt_on_exit {
                break;
            }
        }
    }

    Ok(PathRecord {
        dim: d,
        samples,
        sigma,
        brownian_mean: noise_sum.iter().map(|v| v / n as f64).collect(),
        com_identity_error: com_err,
        path_seed: cfg.seed,
        steps: step,
        dt_micro_used: dt,
    })
}

/// `m` independent paths with seeds derived from `cfg.seed`, in index order.
pub fn simulate_ensemble(
    c: &Crystal,
    spec: &PotentialSpec,
    cfg: &SdeConfig,
    m: usize,
) -> Vec<Result<PathRecord>> {
    (0..m)
        .into_par_iter()
        .map(|k| {
            let mut local = cfg.clone();
            local.seed = path_seed(cfg.seed, k as u64);
            simulate_path(c, spec, &local)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoolingParams {
    /// Tube width exponent: `c(ε) = ε^ν`.
    pub nu: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_p() -> f64 {
    2.0
}

fn default_margin() -> f64 {
    10.0
}

impl Default for CoolingParams {
    fn default() -> Self {
        CoolingParams {
            nu: 0.5,
            p: default_p(),
            margin: default_margin(),
        }
    }
}

/// The bound `(λ⁽¹⁾c²/N)^{p/(p−1)} λ⁽²⁾ ε^{κ/(p−1)}` that `β⁻¹` must be small against.
pub fn cooling_bound(
    epsilon: f64,
    params: &CoolingParams,
    report: &RigidityReport,
    n: usize,
    dim: usize,
) -> Result<f64> {
    if !report.rigid {
        return Err(Error::ScheduleUndefined(format!(
            "crystal is not infinitesimally rigid ({} zero modes, {} trivial)",
            report.zero_count, report.trivial_dim
        )));
    }
    if !(report.lambda1 > 0.0) || !(report.lambda2 > 0.0) {
        return Err(Error::ScheduleUndefined(format!(
            "spectral constants must be positive (lambda1 = {}, lambda2 = {})",
            report.lambda1, report.lambda2
        )));
    }
    if !(params.p > 1.0) {
        return Err(Error::ScheduleUndefined(format!("p must exceed 1, got {}", params.p)));
    }
    if !(params.nu > 0.0) {
        return Err(Error::ScheduleUndefined(format!("nu must be positive, got {}", params.nu)));
    }
    let c = epsilon.powf(params.nu);
    let q = params.p / (params.p - 1.0);
    Ok((report.lambda1 * c * c / n as f64).powf(q)
        * report.lambda2
        * epsilon.powf(kappa(dim) as f64 / (params.p - 1.0)))
}

/// `β = margin / bound`.
pub fn cooling_schedule(
    epsilon: f64,
    params: &CoolingParams,
    report: &RigidityReport,
    n: usize,
    dim: usize,
) -> Result<f64> {
    if !(params.margin >= 10.0) {
        return Err(Error::ScheduleUndefined(format!(
            "margin must be at least 10, got {}",
            params.margin
        )));
    }
    let beta = params.margin / cooling_bound(epsilon, params, report, n, dim)?;
    log::info!("cooling schedule: epsilon = {epsilon}, beta = {beta:.6e}");
    Ok(beta)
}
