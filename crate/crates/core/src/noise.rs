//! Measurement synthesis: `m = m° + Δm` under a Gaussian or a
//! dominant-plus-fluctuating error model.

use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, check_na, measurement_len, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// A fixed offset drawn once per dataset plus an i.i.d. Gaussian
    /// fluctuation per sample.
    DominantPlusFluctuating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// TDoA standard deviation, meters.
    pub sigma_d: f64,
    /// AoA standard deviation, radians.
    pub sigma_a: f64,
    /// FDoA standard deviation as a fraction of `sigma_d`.
    pub fdoa_factor: f64,
    pub fluctuating_ratio_tdoa: f64,
    pub fluctuating_ratio_fdoa: f64,
    pub fluctuating_ratio_aoa: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            kind: NoiseKind::Gaussian,
            sigma_d: 0.1,
            sigma_a: 0.01,
            fdoa_factor: 0.1,
            fluctuating_ratio_tdoa: 0.0,
            fluctuating_ratio_fdoa: 0.0,
            fluctuating_ratio_aoa: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn gaussian(sigma_d: f64, sigma_a: f64, seed: u64) -> Self {
        NoiseModel { sigma_d, sigma_a, seed, ..Default::default() }
    }

    /// Gaussian model scaled by `rho`: `σ_d = 40ρ`, `σ_a = 0.1ρ`.
    pub fn scaled(rho: f64, seed: u64) -> Self {
        Self::gaussian(40.0 * rho, 0.1 * rho, seed)
    }

    pub fn noiseless() -> Self {
        Self::gaussian(0.0, 0.0, 0)
    }

    /// Multiplies every standard deviation by `rho`.
    pub fn scale(&self, rho: f64) -> Self {
        NoiseModel { sigma_d: self.sigma_d * rho, sigma_a: self.sigma_a * rho, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NoiseModel { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.sigma_d,
            self.sigma_a,
            self.fdoa_factor,
            self.fluctuating_ratio_tdoa,
            self.fluctuating_ratio_fdoa,
            self.fluctuating_ratio_aoa,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidNoise("standard deviations and ratios must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// True when every standard deviation is zero. Samplers then attach an
    /// identity covariance so the weighted solvers stay defined.
    pub fn is_noiseless(&self) -> bool {
        self.sigma_d == 0.0 && self.sigma_a == 0.0
    }

    /// Nominal (TDoA, FDoA, AoA) standard deviations.
    pub fn stds(&self) -> (f64, f64, f64) {
        (self.sigma_d, self.fdoa_factor * self.sigma_d, self.sigma_a)
    }

    /// Per-component standard deviations of the measurement vector.
    fn component_stds(&self, na: usize) -> Vec<f64> {
        let (sd, sf, sa) = self.stds();
        let mut out = Vec::with_capacity(measurement_len(na));
        for _ in 1..na {
            out.push(sd);
            out.push(sf);
        }
        for _ in 0..na {
            out.push(sa);
            out.push(sa);
        }
        out
    }

    fn component_ratios(&self, na: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(measurement_len(na));
        for _ in 1..na {
            out.push(self.fluctuating_ratio_tdoa);
            out.push(self.fluctuating_ratio_fdoa);
        }
        for _ in 0..na {
            out.push(self.fluctuating_ratio_aoa);
            out.push(self.fluctuating_ratio_aoa);
        }
        out
    }

    /// `Q = blkdiag(Q_d, …, Q_d, Q_a, …, Q_a)` from the nominal standard deviations.
    pub fn covariance(&self, na: usize) -> DMatrix<f64> {
        let v: Vec<f64> = self.component_stds(na).into_iter().map(|s| s * s).collect();
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v))
    }

    /// `Q_s = diag(σ_d², σ_a², σ_a²)` for one NLoS triple.
    pub fn mapping_covariance(&self) -> Matrix3<f64> {
        let (sd, _, sa) = self.stds();
        Matrix3::from_diagonal(&nalgebra::Vector3::new(sd * sd, sa * sa, sa * sa))
    }
}

/// RNG for child stream `index` of `master`. Streams are independent, so
/// per-trial generators do not depend on the execution order.
pub fn child_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

// Stream reserved for the per-dataset dominant draw.
const DOMINANT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub na: usize,
    pub m: Vec<f64>,
    pub q: DMatrix<f64>,
}

impl MeasurementSet {
    pub fn new(na: usize, m: Vec<f64>, q: DMatrix<f64>) -> Result<Self> {
        let len = measurement_len(na);
        if na < 2 {
            return Err(Error::NaOutOfRange { na, max: usize::MAX });
        }
        if m.len() != len {
            return Err(Error::Dimension { expected: len, got: m.len() });
        }
        if q.nrows() != len || q.ncols() != len {
            return Err(Error::Dimension { expected: len, got: q.nrows() });
        }
        Ok(MeasurementSet { na, m, q })
    }

    /// Exact measurements `m°` reported with covariance `q`.
    pub fn noiseless(scenario: &Scenario, na: usize, q: DMatrix<f64>) -> Result<Self> {
        Self::new(na, geometry::true_measurements(scenario, na)?, q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingMeasurement {
    pub rrh_index: usize,
    /// `[r_{n1}^s, φ_n^s, θ_n^s]`.
    pub m_s: [f64; 3],
    pub q_s: Matrix3<f64>,
}

/// Generator for a dataset of measurement sets sharing one error
/// realisation of the dominant part.
#[derive(Debug, Clone)]
pub struct MeasurementSampler {
    na: usize,
    offset: Vec<f64>,
    fluct_std: Vec<f64>,
    q: DMatrix<f64>,
}

impl MeasurementSampler {
    pub fn new(noise: &NoiseModel, na: usize) -> Result<Self> {
        noise.validate()?;
        if na < 2 {
            return Err(Error::NaOutOfRange { na, max: usize::MAX });
        }
        let stds = noise.component_stds(na);
        let (offset, fluct_std) = match noise.kind {
            NoiseKind::Gaussian => (vec![0.0; stds.len()], stds),
            NoiseKind::DominantPlusFluctuating => {
                let mut rng = child_rng(noise.seed, DOMINANT_STREAM);
                let offset = stds.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
                let fluct = stds.iter().zip(noise.component_ratios(na)).map(|(s, r)| s * r).collect();
                (offset, fluct)
            }
        };
        let q = if noise.is_noiseless() { DMatrix::identity(measurement_len(na), measurement_len(na)) } else { noise.covariance(na) };
        Ok(MeasurementSampler { na, offset, fluct_std, q })
    }

    pub fn na(&self) -> usize {
        self.na
    }

    /// The fixed per-dataset offset (zero for the Gaussian model).
    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn sample<R: Rng + ?Sized>(&self, scenario: &Scenario, rng: &mut R) -> Result<MeasurementSet> {
        check_na(self.na, scenario.num_rrhs())?;
        let mut m = geometry::true_measurements(scenario, self.na)?;
        for ((mi, off), sd) in m.iter_mut().zip(&self.offset).zip(&self.fluct_std) {
            let z: f64 = rng.sample(StandardNormal);
            *mi += off + sd * z;
        }
        Ok(MeasurementSet { na: self.na, m, q: self.q.clone() })
    }
}

/// One-shot synthesis using `noise.seed` for both the dominant draw and the
/// per-sample fluctuation.
pub fn synthesize_measurements(scenario: &Scenario, noise: &NoiseModel, na: usize) -> Result<MeasurementSet> {
    check_na(na, scenario.num_rrhs())?;
    let sampler = MeasurementSampler::new(noise, na)?;
    sampler.sample(scenario, &mut child_rng(noise.seed, 0))
}

#[derive(Debug, Clone)]
pub struct MappingSampler {
    offset: [f64; 3],
    fluct_std: [f64; 3],
    q: Matrix3<f64>,
}

impl MappingSampler {
    pub fn new(noise: &NoiseModel) -> Result<Self> {
        noise.validate()?;
        let (sd, _, sa) = noise.stds();
        let stds = [sd, sa, sa];
        let (offset, fluct_std) = match noise.kind {
            NoiseKind::Gaussian => ([0.0; 3], stds),
            NoiseKind::DominantPlusFluctuating => {
                let mut rng = child_rng(noise.seed, DOMINANT_STREAM - 1);
                let ratios = [noise.fluctuating_ratio_tdoa, noise.fluctuating_ratio_aoa, noise.fluctuating_ratio_aoa];
                let mut off = [0.0; 3];
                let mut fl = [0.0; 3];
                for k in 0..3 {
                    off[k] = stds[k] * rng.sample::<f64, _>(StandardNormal);
                    fl[k] = stds[k] * ratios[k];
                }
                (off, fl)
            }
        };
        let q = if noise.is_noiseless() { Matrix3::identity() } else { noise.mapping_covariance() };
        Ok(MappingSampler { offset, fluct_std, q })
    }

    pub fn sample<R: Rng + ?Sized>(&self, scenario: &Scenario, n: usize, rng: &mut R) -> Result<MappingMeasurement> {
        let (r, az, el) = geometry::nlos_params(scenario, n)?;
        let mut m_s = [r, az, el];
        for ((m, off), sd) in m_s.iter_mut().zip(self.offset).zip(self.fluct_std) {
            let z: f64 = rng.sample(StandardNormal);
            *m += off + sd * z;
        }
        Ok(MappingMeasurement { rrh_index: n, m_s, q_s: self.q })
    }
}

pub fn synthesize_mapping_measurement(scenario: &Scenario, n: usize, noise: &NoiseModel) -> Result<MappingMeasurement> {
    MappingSampler::new(noise)?.sample(scenario, n, &mut child_rng(noise.seed, 0))
}
