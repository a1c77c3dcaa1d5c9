//! Monte Carlo runner, scenario families, timing and report emission.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::crlb::{crlb_joint, crlb_mapping};
use crate::dataset::Dataset;
use crate::ensemble::{calibrate_radii, ewlsnet_estimate, EnsembleConfig};
use crate::error::{Error, Result};
use crate::geometry::{Scenario, Vec3};
use crate::linalg::compensated_sum;
use crate::mapping::estimate_scatterer;
use crate::nn::{fp_estimate, lsnet_estimate, train_net, wlsnet_estimate, Split, TrainConfig, TrainedNet, WlsNetConfig};
use crate::noise::{child_rng, MappingSampler, MeasurementSampler, MeasurementSet, NoiseKind, NoiseModel};
use crate::wls::{estimate_joint, JointEstimate, DEFAULT_ITERATIONS};

/// Trials may fail; a run with more failures than this fraction is an error.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Wls,
    WlsNet,
    LsNet,
    Fp,
    EWlsNet,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Wls => "wls",
            EstimatorKind::WlsNet => "wlsnet",
            EstimatorKind::LsNet => "lsnet",
            EstimatorKind::Fp => "fp",
            EstimatorKind::EWlsNet => "ewlsnet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wls" => Ok(EstimatorKind::Wls),
            "wlsnet" => Ok(EstimatorKind::WlsNet),
            "lsnet" => Ok(EstimatorKind::LsNet),
            "fp" => Ok(EstimatorKind::Fp),
            "ewlsnet" => Ok(EstimatorKind::EWlsNet),
            other => Err(Error::InvalidInput(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Trained networks needed by the learned estimators. The first ensemble
/// member doubles as the single WLS-Net or LS-Net.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub members: Vec<TrainedNet>,
    pub fp: Option<TrainedNet>,
    /// Sub-Net 2 for scatterer mapping.
    pub subnet2: Option<TrainedNet>,
    pub ensemble: Option<EnsembleConfig>,
    pub net_cfg: WlsNetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    members: usize,
    fp: bool,
    subnet2: bool,
    ensemble: Option<EnsembleConfig>,
    net_cfg: WlsNetConfig,
}

fn member_file(k: usize) -> String {
    format!("member_{k:02}.json")
}

impl Models {
    /// Writes `manifest.json` plus one JSON file per network into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            members: self.members.len(),
            fp: self.fp.is_some(),
            subnet2: self.subnet2.is_some(),
            ensemble: self.ensemble.clone(),
            net_cfg: self.net_cfg.clone(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for (k, m) in self.members.iter().enumerate() {
            std::fs::write(dir.join(member_file(k)), m.to_json()?)?;
        }
        if let Some(fp) = &self.fp {
            std::fs::write(dir.join("fp.json"), fp.to_json()?)?;
        }
        if let Some(n) = &self.subnet2 {
            std::fs::write(dir.join("subnet2.json"), n.to_json()?)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let read = |name: &str| -> Result<TrainedNet> { TrainedNet::from_json(&std::fs::read_to_string(dir.join(name))?) };
        let members = (0..manifest.members).map(|k| read(&member_file(k))).collect::<Result<Vec<_>>>()?;
        let fp = if manifest.fp { Some(read("fp.json")?) } else { None };
        let subnet2 = if manifest.subnet2 { Some(read("subnet2.json")?) } else { None };
        if let Some(e) = &manifest.ensemble {
            e.validate()?;
        }
        Ok(Models { members, fp, subnet2, ensemble: manifest.ensemble, net_cfg: manifest.net_cfg })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    /// Number of sub-Net 1 members; member `k` is initialised from seed
    /// `training.seed + k`.
    pub members: usize,
    pub train_fp: bool,
    /// Train sub-Net 2 when the dataset carries NLoS triples.
    pub train_subnet2: bool,
    /// Validation samples used to calibrate the clustering radii.
    pub calibration_samples: usize,
    pub centers_wanted: usize,
    /// Skips calibration when set.
    pub fixed_ensemble: Option<EnsembleConfig>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan { members: 10, train_fp: false, train_subnet2: false, calibration_samples: 200, centers_wanted: 1, fixed_ensemble: None }
    }
}

/// Trains the networks described by `plan` on `ds` and calibrates the
/// ensemble radii on its validation split.
pub fn train_models(ds: &Dataset, net_cfg: &WlsNetConfig, plan: &TrainPlan) -> Result<Models> {
    let base = &net_cfg.training;
    let mut models = Models { net_cfg: net_cfg.clone(), ..Models::default() };
    if plan.members > 0 {
        let set = ds.residual_set()?;
        for k in 0..plan.members {
            let cfg = TrainConfig { seed: base.seed.wrapping_add(k as u64), ..base.clone() };
            models.members.push(train_net(&set, &cfg)?.0);
        }
    }
    if plan.train_fp {
        let cfg = TrainConfig { seed: base.seed.wrapping_add(1000), ..base.clone() };
        models.fp = Some(train_net(&ds.state_set(), &cfg)?.0);
    }
    if plan.train_subnet2 {
        let cfg = TrainConfig { seed: base.seed.wrapping_add(2000), ..base.clone() };
        models.subnet2 = Some(train_net(&ds.mapping_residual_set(net_cfg.subnet2_uses_ue)?, &cfg)?.0);
    }
    models.ensemble = match &plan.fixed_ensemble {
        Some(e) => Some(e.clone()),
        None if models.members.len() > 1 => {
            let mut pu = Vec::new();
            let mut pv = Vec::new();
            for s in ds.split(Split::Val).take(plan.calibration_samples.max(1)) {
                let est: Vec<JointEstimate> = models.members.iter().filter_map(|m| wlsnet_estimate(&s.meas, m, net_cfg, &ds.rrhs).ok()).collect();
                pu.push(est.iter().map(|e| e.u).collect::<Vec<_>>());
                pv.push(est.iter().map(|e| e.udot).collect::<Vec<_>>());
            }
            Some(EnsembleConfig {
                l: models.members.len(),
                position: calibrate_radii(&pu)?,
                velocity: calibrate_radii(&pv)?,
                centers_wanted: plan.centers_wanted,
            })
        }
        None => None,
    };
    Ok(models)
}

impl Models {
    fn primary(&self) -> Result<&TrainedNet> {
        self.members.first().ok_or_else(|| Error::InvalidInput("no trained WLS-Net available".into()))
    }
}

/// Runs one estimator on one measurement set.
pub fn run_estimator(kind: EstimatorKind, meas: &MeasurementSet, rrhs: &[Vec3], models: &Models, iterations: usize) -> Result<JointEstimate> {
    match kind {
        EstimatorKind::Wls => estimate_joint(meas, rrhs, iterations),
        EstimatorKind::WlsNet => wlsnet_estimate(meas, models.primary()?, &models.net_cfg, rrhs),
        EstimatorKind::LsNet => lsnet_estimate(meas, models.primary()?, rrhs),
        EstimatorKind::Fp => fp_estimate(meas, models.fp.as_ref().ok_or_else(|| Error::InvalidInput("no FP network available".into()))?),
        EstimatorKind::EWlsNet => {
            let cfg = models.ensemble.as_ref().ok_or_else(|| Error::InvalidInput("no ensemble configuration".into()))?;
            ewlsnet_estimate(meas, &models.members, cfg, &models.net_cfg, rrhs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Label carried into the report.
    pub scenario_name: String,
    pub estimator: EstimatorKind,
    pub trials: usize,
    /// When set, overrides the sigmas with `σ_d = 40ρ`, `σ_a = 0.1ρ`.
    pub rho: Option<f64>,
    pub na: usize,
    pub iterations: usize,
    pub seed: u64,
    pub measure_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario_name: "six-rrh".into(),
            estimator: EstimatorKind::Wls,
            trials: 1000,
            rho: None,
            na: 6,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            measure_timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be >= 1".into()));
        }
        if let Some(r) = self.rho {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::InvalidInput(format!("rho must be positive, got {r}")));
            }
        }
        Ok(())
    }

    pub fn effective_noise(&self, noise: &NoiseModel) -> NoiseModel {
        match self.rho {
            Some(rho) => NoiseModel { sigma_d: 40.0 * rho, sigma_a: 0.1 * rho, ..noise.clone() },
            None => noise.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScattererMetric {
    pub rrh_index: usize,
    pub rmse: f64,
    pub crlb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub estimator: String,
    pub scenario: String,
    pub rho: Option<f64>,
    pub na: usize,
    pub trials: usize,
    pub failures: usize,
    pub rmse_u: f64,
    pub rmse_udot: f64,
    pub rmse_s: Vec<ScattererMetric>,
    pub crlb_pos: Option<f64>,
    pub crlb_vel: Option<f64>,
    /// Mean of `x̂ - x°` over successful trials.
    pub mean_error: [f64; 6],
    /// Mean wall clock per estimate, seconds, when timing was requested.
    pub t_per_estimate: Option<f64>,
}

/// Per-trial error vectors; `None` marks a failed trial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialErrors {
    pub state: Vec<Option<[f64; 6]>>,
    pub scatterers: Vec<(usize, Vec<Option<Vec3>>)>,
}

/// `sqrt(Σ‖e_i‖² / n)` over the given error vectors, compensated.
pub fn rmse<'a, I: IntoIterator<Item = &'a [f64]>>(errors: I) -> f64 {
    let mut n = 0usize;
    let total = compensated_sum(errors.into_iter().map(|e| {
        n += 1;
        e.iter().map(|v| v * v).sum::<f64>()
    }));
    if n == 0 {
        0.0
    } else {
        (total / n as f64).sqrt()
    }
}

fn summarize(errors: &TrialErrors, base: MetricsReport) -> Result<MetricsReport> {
    let total = errors.state.len();
    let ok: Vec<&[f64; 6]> = errors.state.iter().flatten().collect();
    let failures = total - ok.len();
    if failures as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed: failures, total });
    }
    let rmse_u = rmse(ok.iter().map(|e| &e[..3]));
    let rmse_udot = rmse(ok.iter().map(|e| &e[3..]));
    let mut mean_error = [0.0; 6];
    for (k, m) in mean_error.iter_mut().enumerate() {
        *m = compensated_sum(ok.iter().map(|e| e[k])) / ok.len().max(1) as f64;
    }
    let rmse_s = errors
        .scatterers
        .iter()
        .map(|(n, errs)| {
            let good: Vec<&Vec3> = errs.iter().flatten().collect();
            let crlb = base.rmse_s.iter().find(|m| m.rrh_index == *n).and_then(|m| m.crlb);
            ScattererMetric { rrh_index: *n, rmse: rmse(good.iter().map(|v| v.as_slice())), crlb }
        })
        .collect();
    Ok(MetricsReport { failures, rmse_u, rmse_udot, rmse_s, mean_error, trials: total, ..base })
}

fn state_error(est: &JointEstimate, truth: &[f64; 6]) -> [f64; 6] {
    let x = est.state();
    std::array::from_fn(|k| x[k] - truth[k])
}

/// `L_a` independent trials at fixed geometry with fresh noise each trial.
/// Scatterers attached to the scenario are mapped from each trial's UE estimate.
pub fn monte_carlo(cfg: &RunConfig, scenario: &Scenario, noise: &NoiseModel, models: &Models) -> Result<MetricsReport> {
    Ok(monte_carlo_detailed(cfg, scenario, noise, models)?.0)
}

pub fn monte_carlo_detailed(
    cfg: &RunConfig,
    scenario: &Scenario,
    noise: &NoiseModel,
    models: &Models,
) -> Result<(MetricsReport, TrialErrors)> {
    cfg.validate()?;
    scenario.validate()?;
    let noise = cfg.effective_noise(noise);
    let sampler = MeasurementSampler::new(&noise, cfg.na)?;
    let mapping_sampler = MappingSampler::new(&noise)?;
    let mapped: Vec<(usize, Vec3)> = scenario.scatterers.iter().enumerate().filter_map(|(n, s)| s.map(|s| (n, s))).collect();
    let truth = scenario.state();
    let mut errors = TrialErrors { state: Vec::with_capacity(cfg.trials), scatterers: mapped.iter().map(|(n, _)| (*n, Vec::new())).collect() };
    let mut elapsed = 0.0;
    for t in 0..cfg.trials {
        let mut rng = child_rng(cfg.seed, t as u64);
        let meas = sampler.sample(scenario, &mut rng)?;
        let start = cfg.measure_timing.then(Instant::now);
        let est = run_estimator(cfg.estimator, &meas, &scenario.rrhs, models, cfg.iterations);
        if let Some(s) = start {
            elapsed += s.elapsed().as_secs_f64();
        }
        for (k, (n, s_true)) in mapped.iter().enumerate() {
            let ms = mapping_sampler.sample(scenario, *n, &mut rng)?;
            let err = est
                .as_ref()
                .ok()
                .and_then(|e| estimate_scatterer(&ms, &scenario.rrhs, &e.u, cfg.iterations).ok())
                .map(|s| s.s - s_true);
            errors.scatterers[k].1.push(err);
        }
        errors.state.push(est.ok().map(|e| state_error(&e, &truth)));
    }
    let q = noise.covariance(cfg.na);
    let crlb = crlb_joint(scenario, &q, cfg.na).ok();
    let q_s = noise.mapping_covariance();
    let base = MetricsReport {
        estimator: cfg.estimator.name().into(),
        scenario: cfg.scenario_name.clone(),
        rho: cfg.rho,
        na: cfg.na,
        trials: cfg.trials,
        failures: 0,
        rmse_u: 0.0,
        rmse_udot: 0.0,
        rmse_s: mapped
            .iter()
            .map(|(n, _)| ScattererMetric { rrh_index: *n, rmse: 0.0, crlb: crlb_mapping(scenario, *n, &q_s).ok().map(|c| c.1) })
            .collect(),
        crlb_pos: crlb.as_ref().map(|c| c.pos_bound),
        crlb_vel: crlb.as_ref().map(|c| c.vel_bound),
        mean_error: [0.0; 6],
        t_per_estimate: cfg.measure_timing.then(|| elapsed / cfg.trials as f64),
    };
    let report = summarize(&errors, base)?;
    Ok((report, errors))
}

/// Runs every value of `rhos` with otherwise identical settings.
pub fn rho_sweep(cfg: &RunConfig, scenario: &Scenario, noise: &NoiseModel, models: &Models, rhos: &[f64]) -> Result<Vec<MetricsReport>> {
    rhos.iter().map(|&r| monte_carlo(&RunConfig { rho: Some(r), ..cfg.clone() }, scenario, noise, models)).collect()
}

/// Evaluates an estimator on one split of a labeled dataset (each sample
/// has its own true state).
pub fn evaluate_dataset(
    ds: &Dataset,
    split: Split,
    kind: EstimatorKind,
    models: &Models,
    iterations: usize,
    label: &str,
) -> Result<(MetricsReport, TrialErrors)> {
    let mut errors = TrialErrors::default();
    let mut na = 0;
    for s in ds.split(split) {
        na = s.meas.na;
        let est = run_estimator(kind, &s.meas, &ds.rrhs, models, iterations);
        errors.state.push(est.ok().map(|e| state_error(&e, &s.state)));
    }
    if errors.state.is_empty() {
        return Err(Error::InvalidInput(format!("dataset has no {split:?} samples")));
    }
    let base = MetricsReport {
        estimator: kind.name().into(),
        scenario: label.into(),
        rho: None,
        na,
        trials: 0,
        failures: 0,
        rmse_u: 0.0,
        rmse_udot: 0.0,
        rmse_s: Vec::new(),
        crlb_pos: None,
        crlb_vel: None,
        mean_error: [0.0; 6],
        t_per_estimate: None,
    };
    let report = summarize(&errors, base)?;
    Ok((report, errors))
}

/// D0-D4: dominant-plus-fluctuating errors, dominant standard deviations
/// `(0.1, 0.01, 0.001)·10^k` for TDoA, FDoA and AoA, fluctuating parts
/// `(1e-4, 1e-3, 1e-3)` times those. P1-P3 keep the D0 dominant part and
/// raise the fluctuating share; P4 is purely Gaussian at the D0 level.
pub fn build_scenario_family(name: &str) -> Result<NoiseModel> {
    let dominant = |k: i32, ratios: [f64; 3]| {
        let s = 10f64.powi(k);
        NoiseModel {
            kind: NoiseKind::DominantPlusFluctuating,
            sigma_d: 0.1 * s,
            sigma_a: 0.001 * s,
            fdoa_factor: 0.1,
            fluctuating_ratio_tdoa: ratios[0],
            fluctuating_ratio_fdoa: ratios[1],
            fluctuating_ratio_aoa: ratios[2],
            seed: 0,
        }
    };
    let d_ratios = [1e-4, 1e-3, 1e-3];
    match name.to_ascii_uppercase().as_str() {
        "D0" => Ok(dominant(0, d_ratios)),
        "D1" => Ok(dominant(1, d_ratios)),
        "D2" => Ok(dominant(2, d_ratios)),
        "D3" => Ok(dominant(3, d_ratios)),
        "D4" => Ok(dominant(4, d_ratios)),
        "P1" => Ok(dominant(0, [1e-4, 1e-3, 1e-3])),
        "P2" => Ok(dominant(0, [1e-3, 1e-2, 1e-2])),
        "P3" => Ok(dominant(0, [1e-2, 1e-1, 1e-1])),
        "P4" => Ok(NoiseModel::gaussian(0.1, 0.001, 0)),
        _ => Err(Error::UnknownFamily(name.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_wls: f64,
    pub t_wlsnet: f64,
    pub t_ewlsnet: f64,
}

fn median_time<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.total_cmp(b));
    Ok(times[times.len() / 2])
}

/// Median wall clock per single-UE estimate over `reps` repetitions of
/// the same input.
pub fn bench_timing(meas: &MeasurementSet, rrhs: &[Vec3], models: &Models, reps: usize) -> Result<Timing> {
    let reps = reps.max(1);
    let t_wls = median_time(reps, || estimate_joint(meas, rrhs, DEFAULT_ITERATIONS).map(|_| ()))?;
    let t_wlsnet = median_time(reps, || run_estimator(EstimatorKind::WlsNet, meas, rrhs, models, 0).map(|_| ()))?;
    let t_ewlsnet = median_time(reps, || run_estimator(EstimatorKind::EWlsNet, meas, rrhs, models, 0).map(|_| ()))?;
    Ok(Timing { t_wls, t_wlsnet, t_ewlsnet })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidInput(format!("unknown format `{other}`"))),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 9] = ["estimator", "scenario", "rho", "na", "rmse_u", "rmse_udot", "crlb_pos", "crlb_vel", "t_per_estimate"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV (fixed column order, header always written) or a JSON array.
pub fn emit_report<W: Write>(reports: &[MetricsReport], format: ReportFormat, mut w: W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, reports)?;
            writeln!(w)?;
        }
        ReportFormat::Csv => {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(REPORT_COLUMNS)?;
            for r in reports {
                out.write_record([
                    r.estimator.clone(),
                    r.scenario.clone(),
                    opt(r.rho),
                    r.na.to_string(),
                    r.rmse_u.to_string(),
                    r.rmse_udot.to_string(),
                    opt(r.crlb_pos),
                    opt(r.crlb_vel),
                    opt(r.t_per_estimate),
                ])?;
            }
            out.flush()?;
        }
    }
    Ok(())
}
