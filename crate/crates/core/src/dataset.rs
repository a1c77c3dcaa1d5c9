//! Labeled datasets for the neural estimators, and CSV readers/writers for
//! measurement files.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{measurement_names, measurement_len, Scenario, Vec3};
use crate::nn::{mapping_residual_target, residual_target, subnet2_input, Split, TrainingSet};
use crate::noise::{child_rng, MappingMeasurement, MappingSampler, MeasurementSampler, MeasurementSet, NoiseModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub na: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// UE positions are uniform in `ue_pos ± ue_half_width`.
    pub ue_half_width: [f64; 3],
    /// UE velocities are uniform in `ue_vel ± vel_half_width`.
    pub vel_half_width: [f64; 3],
    /// When set, each sample also carries an NLoS triple for the scatterer
    /// of this RRH, with the scatterer jittered by `scatterer_half_width`.
    pub mapping_rrh: Option<usize>,
    pub scatterer_half_width: [f64; 3],
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            na: 6,
            train: 6000,
            val: 1500,
            test: 2000,
            ue_half_width: [50.0, 50.0, 10.0],
            vel_half_width: [3.0, 3.0, 3.0],
            mapping_rrh: None,
            scatterer_half_width: [10.0, 10.0, 5.0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub split: Split,
    pub state: [f64; 6],
    pub meas: MeasurementSet,
    /// NLoS triple and the true scatterer, when `mapping_rrh` is set.
    pub mapping: Option<(MappingMeasurement, Vec3)>,
}

impl LabeledSample {
    pub fn ue_pos(&self) -> Vec3 {
        Vec3::new(self.state[0], self.state[1], self.state[2])
    }

    pub fn ue_vel(&self) -> Vec3 {
        Vec3::new(self.state[3], self.state[4], self.state[5])
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub rrhs: Vec<Vec3>,
    pub noise: NoiseModel,
    pub samples: Vec<LabeledSample>,
}

fn jitter<R: Rng>(rng: &mut R, centre: &Vec3, half: &[f64; 3]) -> Vec3 {
    Vec3::from_fn(|k, _| if half[k] > 0.0 { centre[k] + rng.random_range(-half[k]..half[k]) } else { centre[k] })
}

/// Generates train, val and test samples in that order. All splits share
/// one error realisation: the dominant offset of a
/// dominant-plus-fluctuating model is fixed by `noise.seed`.
pub fn generate_dataset(base: &Scenario, noise: &NoiseModel, spec: &DatasetSpec) -> Result<Dataset> {
    base.validate()?;
    let sampler = MeasurementSampler::new(noise, spec.na)?;
    let mapping = match spec.mapping_rrh {
        Some(n) => {
            let s = base.scatterers.get(n).copied().flatten().ok_or(Error::MissingScatterer(n))?;
            Some((n, s, MappingSampler::new(noise)?))
        }
        None => None,
    };
    let total = spec.train + spec.val + spec.test;
    let mut samples = Vec::with_capacity(total);
    for k in 0..total {
        let split = if k < spec.train {
            Split::Train
        } else if k < spec.train + spec.val {
            Split::Val
        } else {
            Split::Test
        };
        let mut rng = child_rng(spec.seed, k as u64);
        let mut sc = base.clone();
        sc.ue_pos = jitter(&mut rng, &base.ue_pos, &spec.ue_half_width);
        sc.ue_vel = jitter(&mut rng, &base.ue_vel, &spec.vel_half_width);
        let mapped = match &mapping {
            Some((n, s, ms)) => {
                let s = jitter(&mut rng, s, &spec.scatterer_half_width);
                sc.scatterers[*n] = Some(s);
                sc.validate()?;
                Some((ms.sample(&sc, *n, &mut rng)?, s))
            }
            None => {
                sc.validate()?;
                None
            }
        };
        let meas = sampler.sample(&sc, &mut rng)?;
        samples.push(LabeledSample { split, state: sc.state(), meas, mapping: mapped });
    }
    Ok(Dataset { rrhs: base.rrhs.clone(), noise: noise.clone(), samples })
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Measurements to residual targets `e = h̃ - G̃x°` (sub-Net 1).
    pub fn residual_set(&self) -> Result<TrainingSet> {
        let mut t = TrainingSet::default();
        for s in &self.samples {
            t.push(s.meas.m.clone(), residual_target(&s.meas, &self.rrhs, &s.state)?, s.split);
        }
        Ok(t)
    }

    /// Measurements to the state itself (FP baseline).
    pub fn state_set(&self) -> TrainingSet {
        let mut t = TrainingSet::default();
        for s in &self.samples {
            t.push(s.meas.m.clone(), s.state.to_vec(), s.split);
        }
        t
    }

    /// NLoS triples to mapping residuals (sub-Net 2), built with the true UE position.
    pub fn mapping_residual_set(&self, uses_ue: bool) -> Result<TrainingSet> {
        let mut t = TrainingSet::default();
        for s in &self.samples {
            let (m, truth) = s.mapping.as_ref().ok_or_else(|| Error::InvalidInput("dataset has no mapping measurements".into()))?;
            let u = s.ue_pos();
            t.push(subnet2_input(m, &u, uses_ue), mapping_residual_target(m, &self.rrhs, &u, truth)?, s.split);
        }
        Ok(t)
    }

    /// CSV with the split, the true state and every measurement column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let na = self.samples.first().map(|s| s.meas.na).unwrap_or(2);
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["split", "x", "y", "z", "vx", "vy", "vz"].iter().map(|s| s.to_string()).collect();
        header.extend(measurement_names(na));
        out.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![serde_json::to_value(s.split)?.as_str().unwrap_or_default().to_string()];
            row.extend(s.state.iter().map(|v| v.to_string()));
            row.extend(s.meas.m.iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads measurement rows from a CSV whose header names the measurement
/// columns (`r21, rdot21, …, phi1, theta1, …`). Extra columns are ignored;
/// `na` is inferred from the header. Each row gets covariance `noise.covariance(na)`.
pub fn read_measurements_csv<R: Read>(r: R, noise: &NoiseModel) -> Result<Vec<MeasurementSet>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let na = (2..=64)
        .rev()
        .find(|&na| measurement_names(na).iter().all(|n| headers.iter().any(|h| h == n)))
        .ok_or_else(|| Error::InvalidInput("CSV header does not name a complete measurement vector".into()))?;
    let names = measurement_names(na);
    let cols: Vec<usize> = names.iter().map(|n| headers.iter().position(|h| h == n).unwrap()).collect();
    let q = noise.covariance(na);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut m = Vec::with_capacity(measurement_len(na));
        for (&c, name) in cols.iter().zip(&names) {
            let v: f64 = rec
                .get(c)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::InvalidInput(format!("row {}: column {name} is not a number", line + 1)))?;
            m.push(v);
        }
        out.push(MeasurementSet::new(na, m, q.clone())?);
    }
    Ok(out)
}

pub fn write_measurements_csv<W: Write>(w: W, sets: &[MeasurementSet]) -> Result<()> {
    let na = sets.first().map(|s| s.na).unwrap_or(2);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(measurement_names(na))?;
    for s in sets {
        if s.na != na {
            return Err(Error::Dimension { expected: na, got: s.na });
        }
        out.write_record(s.m.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MappingRow {
    rrh_index: usize,
    r_s: f64,
    phi_s: f64,
    theta_s: f64,
}

/// Reads NLoS triples (`rrh_index, r_s, phi_s, theta_s`); every row gets `noise.mapping_covariance()`.
pub fn read_mapping_csv<R: Read>(r: R, noise: &NoiseModel) -> Result<Vec<MappingMeasurement>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let q_s = noise.mapping_covariance();
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: MappingRow = row?;
        out.push(MappingMeasurement { rrh_index: row.rrh_index, m_s: [row.r_s, row.phi_s, row.theta_s], q_s });
    }
    Ok(out)
}

pub fn write_mapping_csv<W: Write>(w: W, meas: &[MappingMeasurement]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["rrh_index", "r_s", "phi_s", "theta_s"])?;
    for m in meas {
        out.serialize(MappingRow { rrh_index: m.rrh_index, r_s: m.m_s[0], phi_s: m.m_s[1], theta_s: m.m_s[2] })?;
    }
    out.flush()?;
    Ok(())
}
