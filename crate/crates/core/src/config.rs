//! TOML run configuration.
//!
//! ```toml
//! [scenario]
//! preset = "six-rrh"          # or give rrhs / ue_pos / ue_vel explicitly
//! scatterers = [{ rrh = 0, pos = [50.0, 200.0, -70.0] }]
//!
//! [noise]
//! family = "D2"               # optional; explicit fields override it
//! sigma_d = 0.1
//! seed = 7
//!
//! [run]
//! estimator = "wls"
//! trials = 1000
//! na = 6
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;
use crate::ensemble::{EnsembleConfig, Radii};
use crate::error::{Error, Result};
use crate::geometry::{preset, Scenario, Vec3, SPEED_OF_LIGHT};
use crate::harness::{build_scenario_family, EstimatorKind, RunConfig};
use crate::nn::{TrainConfig, WlsNetConfig};
use crate::noise::{NoiseKind, NoiseModel};
use crate::wls::DEFAULT_ITERATIONS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererEntry {
    pub rrh: usize,
    pub pos: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub preset: Option<String>,
    pub rrhs: Option<Vec<[f64; 3]>>,
    pub ue_pos: Option<[f64; 3]>,
    pub ue_vel: Option<[f64; 3]>,
    /// Replaces the preset's scatterers when present.
    pub scatterers: Option<Vec<ScattererEntry>>,
    pub clock_bias: Option<f64>,
    pub light_speed: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub family: Option<String>,
    pub kind: Option<NoiseKind>,
    pub sigma_d: Option<f64>,
    pub sigma_a: Option<f64>,
    pub fdoa_factor: Option<f64>,
    pub fluctuating_ratio_tdoa: Option<f64>,
    pub fluctuating_ratio_fdoa: Option<f64>,
    pub fluctuating_ratio_aoa: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub estimator: EstimatorKind,
    pub trials: usize,
    /// Defaults to every RRH of the scenario.
    pub na: Option<usize>,
    pub rho: Option<f64>,
    /// Runs one report per value instead of the single `rho`.
    pub rhos: Option<Vec<f64>>,
    pub iterations: usize,
    pub seed: u64,
    pub measure_timing: bool,
    /// Report label; defaults to the preset or noise family name.
    pub label: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            estimator: EstimatorKind::Wls,
            trials: 1000,
            na: None,
            rho: None,
            rhos: None,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            measure_timing: false,
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WlsNetSection {
    pub disturbance: f64,
    pub subnet2_uses_ue: bool,
}

impl Default for WlsNetSection {
    fn default() -> Self {
        let d = WlsNetConfig::default();
        WlsNetSection { disturbance: d.disturbance, subnet2_uses_ue: d.subnet2_uses_ue }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub l: usize,
    pub centers_wanted: usize,
    /// `[r_a, r_b]`; calibrated from validation predictions when absent.
    pub position_radii: Option<[f64; 2]>,
    pub velocity_radii: Option<[f64; 2]>,
    pub calibration_samples: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { l: 10, centers_wanted: 1, position_radii: None, velocity_radii: None, calibration_samples: 200 }
    }
}

impl EnsembleSection {
    /// Fixed radii, if both were given.
    pub fn fixed(&self) -> Result<Option<EnsembleConfig>> {
        match (self.position_radii, self.velocity_radii) {
            (Some(p), Some(v)) => {
                let cfg = EnsembleConfig { l: self.l, position: Radii::new(p[0], p[1])?, velocity: Radii::new(v[0], v[1])?, centers_wanted: self.centers_wanted };
                cfg.validate()?;
                Ok(Some(cfg))
            }
            (None, None) => Ok(None),
            _ => Err(Error::InvalidInput("give both position_radii and velocity_radii, or neither".into())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioSection,
    pub noise: NoiseSection,
    pub run: RunSection,
    pub dataset: DatasetSpec,
    pub training: TrainConfig,
    pub wlsnet: WlsNetSection,
    pub ensemble: EnsembleSection,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let sc = &self.scenario;
        let mut s = match (&sc.preset, &sc.rrhs) {
            (Some(name), _) => preset(name)?,
            (None, Some(_)) => {
                let ue = sc.ue_pos.ok_or_else(|| Error::InvalidScenario("explicit rrhs need ue_pos".into()))?;
                Scenario {
                    rrhs: Vec::new(),
                    ue_pos: v3(ue),
                    ue_vel: Vec3::zeros(),
                    scatterers: Vec::new(),
                    clock_bias: 0.0,
                    light_speed: SPEED_OF_LIGHT,
                }
            }
            (None, None) => preset("six-rrh")?,
        };
        if let Some(r) = &sc.rrhs {
            s.rrhs = r.iter().copied().map(v3).collect();
            s.scatterers = vec![None; s.rrhs.len()];
        }
        if let Some(u) = sc.ue_pos {
            s.ue_pos = v3(u);
        }
        if let Some(v) = sc.ue_vel {
            s.ue_vel = v3(v);
        }
        if let Some(list) = &sc.scatterers {
            s.scatterers = vec![None; s.rrhs.len()];
            for e in list {
                if e.rrh >= s.rrhs.len() {
                    return Err(Error::IndexOutOfRange { index: e.rrh, count: s.rrhs.len() });
                }
                s.scatterers[e.rrh] = Some(v3(e.pos));
            }
        }
        if let Some(b) = sc.clock_bias {
            s.clock_bias = b;
        }
        if let Some(c) = sc.light_speed {
            s.light_speed = c;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        let n = &self.noise;
        let mut m = match &n.family {
            Some(f) => build_scenario_family(f)?,
            None => NoiseModel::default(),
        };
        if let Some(k) = n.kind {
            m.kind = k;
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut m.sigma_d, n.sigma_d);
        set(&mut m.sigma_a, n.sigma_a);
        set(&mut m.fdoa_factor, n.fdoa_factor);
        set(&mut m.fluctuating_ratio_tdoa, n.fluctuating_ratio_tdoa);
        set(&mut m.fluctuating_ratio_fdoa, n.fluctuating_ratio_fdoa);
        set(&mut m.fluctuating_ratio_aoa, n.fluctuating_ratio_aoa);
        if let Some(s) = n.seed {
            m.seed = s;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn label(&self) -> String {
        self.run
            .label
            .clone()
            .or_else(|| self.noise.family.clone())
            .or_else(|| self.scenario.preset.clone())
            .unwrap_or_else(|| if self.scenario.rrhs.is_some() { "custom".into() } else { "six-rrh".into() })
    }

    pub fn run_config(&self, scenario: &Scenario) -> Result<RunConfig> {
        let r = &self.run;
        let cfg = RunConfig {
            scenario_name: self.label(),
            estimator: r.estimator,
            trials: r.trials,
            rho: r.rho,
            na: r.na.unwrap_or(scenario.num_rrhs()),
            iterations: r.iterations,
            seed: r.seed,
            measure_timing: r.measure_timing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn wlsnet_config(&self) -> WlsNetConfig {
        WlsNetConfig { disturbance: self.wlsnet.disturbance, subnet2_uses_ue: self.wlsnet.subnet2_uses_ue, training: self.training.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_six_rrh_gaussian() {
        let c = Config::from_toml_str("").unwrap();
        let s = c.scenario().unwrap();
        assert_eq!(s.num_rrhs(), 6);
        assert_eq!(c.noise().unwrap(), NoiseModel::default());
        assert_eq!(c.run_config(&s).unwrap().na, 6);
    }

    #[test]
    fn explicit_scenario_and_family_override() {
        let c = Config::from_toml_str(
            r#"
            [scenario]
            rrhs = [[0.0, 0.0, 0.0], [100.0, 0.0, 0.0], [0.0, 100.0, 0.0]]
            ue_pos = [30.0, 40.0, -5.0]
            ue_vel = [1.0, 0.0, 0.0]
            scatterers = [{ rrh = 2, pos = [10.0, 60.0, 0.0] }]
            [noise]
            family = "D1"
            seed = 3
            [run]
            estimator = "ewlsnet"
            trials = 10
            "#,
        )
        .unwrap();
        let s = c.scenario().unwrap();
        assert_eq!(s.num_rrhs(), 3);
        assert_eq!(s.scatterers[2], Some(Vec3::new(10.0, 60.0, 0.0)));
        let n = c.noise().unwrap();
        assert_eq!(n.kind, NoiseKind::DominantPlusFluctuating);
        assert_eq!(n.seed, 3);
        assert!((n.sigma_d - 1.0).abs() < 1e-12);
        assert_eq!(c.run.estimator, EstimatorKind::EWlsNet);
        assert_eq!(c.label(), "D1");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::from_toml_str("[run]\nbogus = 1").is_err());
        assert!(Config::from_toml_str("[scenario]\npreset = \"nope\"").unwrap().scenario().is_err());
        assert!(Config::from_toml_str("[noise]\nfamily = \"X\"").unwrap().noise().is_err());
        assert!(Config::from_toml_str("[noise]\nsigma_d = -1.0").unwrap().noise().is_err());
        let c = Config::from_toml_str("[scenario]\nscatterers = [{ rrh = 9, pos = [0.0, 0.0, 0.0] }]").unwrap();
        assert!(c.scenario().is_err());
        let e = Config::from_toml_str("[ensemble]\nposition_radii = [1.0, 2.0]").unwrap();
        assert!(e.ensemble.fixed().is_err());
    }
}
