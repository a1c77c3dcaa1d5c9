//! Shared fixtures for the estimator benchmarks.

use mmloc::dataset::{generate_dataset, DatasetSpec};
use mmloc::geometry::preset_six_rrh;
use mmloc::harness::{build_scenario_family, train_models, TrainPlan};
use mmloc::nn::{TrainConfig, WlsNetConfig};
use mmloc::{MeasurementSet, Models, Scenario};

/// The six-RRH preset and one D1 measurement of it.
pub fn fixture_measurement() -> (Scenario, MeasurementSet) {
    let s = preset_six_rrh();
    let noise = build_scenario_family("D1").unwrap().with_seed(7);
    let m = mmloc::noise::synthesize_measurements(&s, &noise, 6).unwrap();
    (s, m)
}

/// Briefly trained networks. Accuracy is irrelevant here; inference cost
/// only depends on the layer sizes.
pub fn fixture_models(members: usize) -> Models {
    let noise = build_scenario_family("D1").unwrap().with_seed(7);
    let spec = DatasetSpec { train: 400, val: 100, test: 10, seed: 3, ..DatasetSpec::default() };
    let ds = generate_dataset(&preset_six_rrh(), &noise, &spec).unwrap();
    let cfg = WlsNetConfig { training: TrainConfig { epochs: 5, ..TrainConfig::default() }, ..WlsNetConfig::default() };
    train_models(&ds, &cfg, &TrainPlan { members, train_fp: true, calibration_samples: 50, ..TrainPlan::default() }).unwrap()
}
