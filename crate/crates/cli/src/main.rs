use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use mmloc::config::Config;
use mmloc::crlb::crlb_mapping;
use mmloc::dataset::{generate_dataset, read_mapping_csv, read_measurements_csv, write_mapping_csv, write_measurements_csv};
use mmloc::harness::{bench_timing, emit_report, rho_sweep, run_estimator, train_models, ReportFormat, TrainPlan};
use mmloc::mapping::estimate_scatterer;
use mmloc::nn::estimate_scatterer_net;
use mmloc::noise::{child_rng, MappingSampler, MeasurementSampler};
use mmloc::{crlb_joint, monte_carlo, EstimatorKind, JointEstimate, MeasurementSet, Models, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "mmloc", version, about = "Joint UE localization and environment mapping")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Measurements,
    Mapping,
    Dataset,
}

#[derive(Subcommand)]
enum Command {
    /// Draw noisy measurements (`run.trials` rows) from the configured scenario.
    Simulate {
        #[arg(long, value_enum, default_value_t = SimKind::Measurements)]
        kind: SimKind,
    },
    /// Monte Carlo run (or rho sweep) producing a metrics report.
    Run {
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Closed-form WLS estimate for every row of a measurement CSV.
    Estimate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Scatterer point cloud from NLoS triples and a UE estimate.
    Map {
        #[arg(long)]
        input: PathBuf,
        /// JSON object with a `u` field, as written by `estimate`.
        #[arg(long)]
        ue: PathBuf,
        /// Use the trained sub-Net 2 from this directory.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Cramér-Rao bounds for the configured scenario and noise.
    Crlb,
    /// Train sub-Net 1 members (and optionally FP and sub-Net 2) into `--out`.
    Train {
        #[arg(long)]
        fp: bool,
        #[arg(long)]
        subnet2: bool,
    },
    /// Learned estimate for every row of a measurement CSV.
    Infer {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "wlsnet")]
        estimator: String,
    },
    /// Fused eWLS-Net estimate for every row of a measurement CSV.
    Ensemble {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Median per-estimate wall clock of WLS, WLS-Net and eWLS-Net.
    Bench {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
    },
}

#[derive(Serialize, Deserialize)]
struct EstimateOut {
    u: [f64; 3],
    udot: [f64; 3],
    iterations: usize,
    cond: f64,
    velocity_observable: bool,
}

impl From<&JointEstimate> for EstimateOut {
    fn from(e: &JointEstimate) -> Self {
        EstimateOut { u: e.u.into(), udot: e.udot.into(), iterations: e.iterations_used, cond: e.cond, velocity_observable: e.velocity_observable }
    }
}

#[derive(Deserialize)]
struct UeIn {
    u: [f64; 3],
}

#[derive(Serialize)]
struct MappingBound {
    rrh_index: usize,
    bound: f64,
}

#[derive(Serialize)]
struct CrlbOut {
    pos_bound: f64,
    vel_bound: f64,
    cond: f64,
    mapping: Vec<MappingBound>,
}

#[derive(Serialize)]
struct PointOut {
    x: f64,
    y: f64,
    z: f64,
    rrh_index: usize,
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::from_path(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
        cfg.noise.seed = Some(s);
        cfg.dataset.seed = s;
        cfg.training.seed = s;
    }
    Ok(cfg)
}

fn output(cli: &Cli) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(p) => Box::new(io::BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn write_json<T: Serialize + ?Sized>(w: &mut dyn Write, v: &T) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *w, v)?;
    writeln!(w)?;
    Ok(())
}

fn emit_estimates(cli: &Cli, est: &[JointEstimate]) -> anyhow::Result<()> {
    let mut w = output(cli)?;
    match cli.format {
        Format::Json => {
            let rows: Vec<EstimateOut> = est.iter().map(EstimateOut::from).collect();
            if rows.len() == 1 {
                write_json(&mut *w, &rows[0])?;
            } else {
                write_json(&mut *w, &rows)?;
            }
        }
        Format::Csv => {
            writeln!(w, "x,y,z,vx,vy,vz,iterations,cond")?;
            for e in est {
                writeln!(w, "{},{},{},{},{},{},{},{}", e.u.x, e.u.y, e.u.z, e.udot.x, e.udot.y, e.udot.z, e.iterations_used, e.cond)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_input(path: &Path, cfg: &Config) -> anyhow::Result<Vec<MeasurementSet>> {
    let meas = read_measurements_csv(open(path)?, &cfg.noise()?)?;
    if meas.is_empty() {
        bail!(mmloc::Error::InvalidInput(format!("{} has no measurement rows", path.display())));
    }
    Ok(meas)
}

fn estimate_all(kind: EstimatorKind, meas: &[MeasurementSet], rrhs: &[Vec3], models: &Models, iterations: usize) -> anyhow::Result<Vec<JointEstimate>> {
    meas.iter()
        .enumerate()
        .map(|(k, m)| run_estimator(kind, m, rrhs, models, iterations).with_context(|| format!("row {}", k + 1)))
        .collect()
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let scenario = cfg.scenario()?;
    let noise = cfg.noise()?;
    match &cli.command {
        Command::Simulate { kind } => {
            let mut w = output(cli)?;
            let run = cfg.run_config(&scenario)?;
            let noise = run.effective_noise(&noise);
            match kind {
                SimKind::Measurements => {
                    let sampler = MeasurementSampler::new(&noise, run.na)?;
                    let sets = (0..run.trials)
                        .map(|t| sampler.sample(&scenario, &mut child_rng(run.seed, t as u64)))
                        .collect::<mmloc::Result<Vec<_>>>()?;
                    write_measurements_csv(&mut w, &sets)?;
                }
                SimKind::Mapping => {
                    let sampler = MappingSampler::new(&noise)?;
                    let mut rows = Vec::new();
                    for t in 0..run.trials {
                        let mut rng = child_rng(run.seed, t as u64);
                        for (n, s) in scenario.scatterers.iter().enumerate() {
                            if s.is_some() {
                                rows.push(sampler.sample(&scenario, n, &mut rng)?);
                            }
                        }
                    }
                    write_mapping_csv(&mut w, &rows)?;
                }
                SimKind::Dataset => generate_dataset(&scenario, &noise, &cfg.dataset)?.write_csv(&mut w)?,
            }
            w.flush()?;
        }
        Command::Run { models } => {
            let models = match models {
                Some(dir) => Models::load_dir(dir)?,
                None => Models { net_cfg: cfg.wlsnet_config(), ..Models::default() },
            };
            let run = cfg.run_config(&scenario)?;
            let reports = match &cfg.run.rhos {
                Some(rhos) => rho_sweep(&run, &scenario, &noise, &models, rhos)?,
                None => vec![monte_carlo(&run, &scenario, &noise, &models)?],
            };
            let format = match cli.format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            let mut w = output(cli)?;
            emit_report(&reports, format, &mut w)?;
            w.flush()?;
        }
        Command::Estimate { input } => {
            let meas = read_input(input, &cfg)?;
            let est = estimate_all(EstimatorKind::Wls, &meas, &scenario.rrhs, &Models::default(), cfg.run.iterations)?;
            emit_estimates(cli, &est)?;
        }
        Command::Map { input, ue, models } => {
            let meas = read_mapping_csv(open(input)?, &noise)?;
            let ue: UeIn = serde_json::from_reader(open(ue)?).context("reading UE estimate")?;
            let u = Vec3::from(ue.u);
            let subnet2 = match models {
                Some(dir) => {
                    let m = Models::load_dir(dir)?;
                    let net = m.subnet2.clone().ok_or_else(|| mmloc::Error::InvalidInput("model directory has no sub-Net 2".into()))?;
                    Some((net, m.net_cfg))
                }
                None => None,
            };
            let mut points = Vec::with_capacity(meas.len());
            for (k, m) in meas.iter().enumerate() {
                let est = match &subnet2 {
                    Some((net, nc)) => estimate_scatterer_net(m, &u, net, nc, &scenario.rrhs),
                    None => estimate_scatterer(m, &scenario.rrhs, &u, cfg.run.iterations),
                }
                .with_context(|| format!("row {}", k + 1))?;
                points.push(PointOut { x: est.s.x, y: est.s.y, z: est.s.z, rrh_index: est.rrh_index });
            }
            let mut w = output(cli)?;
            match cli.format {
                Format::Csv => {
                    writeln!(w, "x,y,z,rrh_index")?;
                    for p in &points {
                        writeln!(w, "{},{},{},{}", p.x, p.y, p.z, p.rrh_index)?;
                    }
                }
                Format::Json => write_json(&mut *w, &points)?,
            }
            w.flush()?;
        }
        Command::Crlb => {
            let run = cfg.run_config(&scenario)?;
            let noise = run.effective_noise(&noise);
            let c = crlb_joint(&scenario, &noise.covariance(run.na), run.na)?;
            let q_s = noise.mapping_covariance();
            let mut mapping = Vec::new();
            for (n, s) in scenario.scatterers.iter().enumerate() {
                if s.is_some() {
                    mapping.push(MappingBound { rrh_index: n, bound: crlb_mapping(&scenario, n, &q_s)?.1 });
                }
            }
            let mut w = output(cli)?;
            write_json(&mut *w, &CrlbOut { pos_bound: c.pos_bound, vel_bound: c.vel_bound, cond: c.cond, mapping })?;
            w.flush()?;
        }
        Command::Train { fp, subnet2 } => {
            let dir = cli.out.as_ref().ok_or_else(|| mmloc::Error::InvalidInput("train needs --out <directory>".into()))?;
            let mut spec = cfg.dataset.clone();
            if *subnet2 && spec.mapping_rrh.is_none() {
                spec.mapping_rrh = scenario.scatterers.iter().position(|s| s.is_some());
            }
            let ds = generate_dataset(&scenario, &noise, &spec)?;
            let plan = TrainPlan {
                members: cfg.ensemble.l,
                train_fp: *fp,
                train_subnet2: *subnet2,
                calibration_samples: cfg.ensemble.calibration_samples,
                centers_wanted: cfg.ensemble.centers_wanted,
                fixed_ensemble: cfg.ensemble.fixed()?,
            };
            train_models(&ds, &cfg.wlsnet_config(), &plan)?.save_dir(dir)?;
        }
        Command::Infer { models, input, estimator } => {
            let kind = EstimatorKind::parse(estimator)?;
            let models = Models::load_dir(models)?;
            let meas = read_input(input, &cfg)?;
            let est = estimate_all(kind, &meas, &scenario.rrhs, &models, cfg.run.iterations)?;
            emit_estimates(cli, &est)?;
        }
        Command::Ensemble { models, input } => {
            let models = Models::load_dir(models)?;
            let meas = read_input(input, &cfg)?;
            let est = estimate_all(EstimatorKind::EWlsNet, &meas, &scenario.rrhs, &models, cfg.run.iterations)?;
            emit_estimates(cli, &est)?;
        }
        Command::Bench { models, reps } => {
            let models = Models::load_dir(models)?;
            let run = cfg.run_config(&scenario)?;
            let noise = run.effective_noise(&noise);
            let meas = MeasurementSampler::new(&noise, run.na)?.sample(&scenario, &mut child_rng(run.seed, 0))?;
            let t = bench_timing(&meas, &scenario.rrhs, &models, *reps)?;
            let mut w = output(cli)?;
            write_json(&mut *w, &t)?;
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ErrorOut {
    error: String,
    message: String,
}

fn report_error(kind: &str, message: String) {
    let body = serde_json::to_string(&ErrorOut { error: kind.into(), message }).unwrap_or_default();
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.render().to_string().trim().to_string());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.chain().find_map(|c| c.downcast_ref::<mmloc::Error>()).map(|m| m.kind()).unwrap_or("io");
            report_error(kind, format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
