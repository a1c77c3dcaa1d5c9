use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature min-max scaling onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    /// Fits bounds over `rows`. A constant feature gets a unit-wide window
    /// centred on its value so it maps to 0.5.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::InvalidInput("cannot fit normalization on empty data".into()))?;
        let d = first.len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::Dimension { expected: d, got: r.len() });
            }
            for k in 0..d {
                if !r[k].is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite value in feature {k}")));
                }
                min[k] = min[k].min(r[k]);
                max[k] = max[k].max(r[k]);
            }
        }
        for k in 0..d {
            let span = max[k] - min[k];
            if !(span > 1e-12 * min[k].abs().max(max[k].abs())) {
                let c = 0.5 * (min[k] + max[k]);
                let half = 0.5 * c.abs().max(1.0);
                min[k] = c - half;
                max[k] = c + half;
            }
        }
        Ok(MinMax { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, x)| (x - self.min[k]) / (self.max[k] - self.min[k])).collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(k, x)| self.min[k] + x * (self.max[k] - self.min[k])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub inputs: MinMax,
    pub targets: MinMax,
}
