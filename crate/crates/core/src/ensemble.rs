//! eWLS-Net: L independently initialised WLS-Nets fused by subtractive
//! clustering over their predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nn::{wlsnet_estimate, TrainedNet, WlsNetConfig};
use crate::noise::MeasurementSet;
use crate::wls::JointEstimate;

/// Density and suppression radii for one clustered quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub r_a: f64,
    pub r_b: f64,
}

impl Radii {
    pub fn new(r_a: f64, r_b: f64) -> Result<Self> {
        if !(r_a > 0.0) || !(r_b > r_a) || !r_b.is_finite() {
            return Err(Error::InvalidInput(format!("need r_b > r_a > 0, got r_a={r_a}, r_b={r_b}")));
        }
        Ok(Radii { r_a, r_b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub l: usize,
    /// Radii for the position predictions (meters).
    pub position: Radii,
    /// Radii for the velocity predictions (m/s).
    pub velocity: Radii,
    pub centers_wanted: usize,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.centers_wanted == 0 {
            return Err(Error::InvalidInput("ensemble needs l >= 1 and centers_wanted >= 1".into()));
        }
        Radii::new(self.position.r_a, self.position.r_b)?;
        Radii::new(self.velocity.r_a, self.velocity.r_b)?;
        Ok(())
    }
}

fn lex_order(points: &[Vec3]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&points[i], &points[j]);
        a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
    });
    idx
}

/// Initial densities `D_i = Σ_j exp(-‖u_i - u_j‖² / (r_a/2)²)`.
pub fn densities(points: &[Vec3], r_a: f64) -> Vec<f64> {
    let s = (r_a / 2.0).powi(2);
    points.iter().map(|p| points.iter().map(|q| (-(p - q).norm_squared() / s).exp()).sum()).collect()
}

/// Cluster centres in order of selection. Inputs are sorted
/// lexicographically first and density ties go to the earliest point in
/// that order, so the result does not depend on input order.
pub fn subtractive_cluster_centers(points: &[Vec3], radii: Radii, count: usize) -> Result<Vec<Vec3>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("subtractive clustering needs at least one point".into()));
    }
    let sorted: Vec<Vec3> = lex_order(points).into_iter().map(|i| points[i]).collect();
    let mut d = densities(&sorted, radii.r_a);
    let sb = (radii.r_b / 2.0).powi(2);
    let mut centers = Vec::new();
    for _ in 0..count.min(sorted.len()) {
        let mut best = 0;
        for k in 1..d.len() {
            if d[k] > d[best] {
                best = k;
            }
        }
        let c = sorted[best];
        let dc = d[best];
        centers.push(c);
        for (k, p) in sorted.iter().enumerate() {
            d[k] -= dc * (-(p - c).norm_squared() / sb).exp();
        }
    }
    Ok(centers)
}

/// The first cluster centre, i.e. the densest input point.
pub fn subtractive_cluster_select(points: &[Vec3], radii: Radii) -> Result<Vec3> {
    Ok(subtractive_cluster_centers(points, radii, 1)?[0])
}

/// Default radii from member disagreement: `r_a = 4·σ` with σ the RMS
/// spread of member predictions around their per-sample mean, `r_b = 1.5·r_a`.
pub fn calibrate_radii(predictions: &[Vec<Vec3>]) -> Result<Radii> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for set in predictions {
        if set.len() < 2 {
            continue;
        }
        let mean = set.iter().fold(Vec3::zeros(), |a, p| a + p) / set.len() as f64;
        for p in set {
            sum += (p - mean).norm_squared() / 3.0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("radius calibration needs batches of at least two predictions".into()));
    }
    let sigma = (sum / n as f64).sqrt();
    let r_a = (4.0 * sigma).max(1e-12);
    Radii::new(r_a, 1.5 * r_a)
}

/// Runs every member, then clusters positions and velocities separately.
/// A failing member is dropped.
pub fn ewlsnet_estimate(
    meas: &MeasurementSet,
    members: &[TrainedNet],
    cfg: &EnsembleConfig,
    net_cfg: &WlsNetConfig,
    rrhs: &[Vec3],
) -> Result<JointEstimate> {
    cfg.validate()?;
    let mut ok: Vec<JointEstimate> = members.iter().take(cfg.l).filter_map(|m| wlsnet_estimate(meas, m, net_cfg, rrhs).ok()).collect();
    if ok.is_empty() {
        return Err(Error::InvalidInput("no ensemble member produced an estimate".into()));
    }
    if ok.len() == 1 {
        return Ok(ok.pop().unwrap());
    }
    let us: Vec<Vec3> = ok.iter().map(|e| e.u).collect();
    let vs: Vec<Vec3> = ok.iter().map(|e| e.udot).collect();
    let u = subtractive_cluster_select(&us, cfg.position)?;
    let v = subtractive_cluster_select(&vs, cfg.velocity)?;
    let pick = ok.iter().position(|e| e.u == u).unwrap_or(0);
    let mut out = ok.swap_remove(pick);
    out.u = u;
    out.udot = v;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radii() -> Radii {
        Radii::new(1.0, 1.5).unwrap()
    }

    #[test]
    fn single_and_identical_points() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(subtractive_cluster_select(&[p], radii()).unwrap(), p);
        assert_eq!(subtractive_cluster_select(&[p; 5], radii()).unwrap(), p);
        assert!(subtractive_cluster_select(&[], radii()).is_err());
    }

    #[test]
    fn majority_cluster_wins() {
        let p = Vec3::new(5.0, -1.0, 2.0);
        let offsets = [0.001, -0.004, 0.002, 0.006, -0.003, 0.0, 0.005];
        let mut pts: Vec<Vec3> = offsets.iter().enumerate().map(|(k, o)| p + Vec3::new(*o, -o * (k as f64) / 7.0, 0.0)).collect();
        for o in [0.002, -0.001, 0.004] {
            pts.push(p + Vec3::new(100.0 + o, 0.0, o));
        }
        let chosen = subtractive_cluster_select(&pts, radii()).unwrap();
        let d = densities(&pts, 1.0);
        let best = (0..pts.len()).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        assert_eq!(chosen, pts[best]);
        assert!((chosen - p).norm() < 0.01);
    }

    #[test]
    fn permutation_invariant() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0), Vec3::new(9.0, 9.0, 9.0)];
        let a = subtractive_cluster_centers(&pts, radii(), 3).unwrap();
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(a, subtractive_cluster_centers(&rev, radii(), 3).unwrap());
        assert_eq!(a[0], Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn second_centre_is_suppressed_away_from_first() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0)];
        let c = subtractive_cluster_centers(&pts, radii(), 2).unwrap();
        assert_eq!(c[1], Vec3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn radii_validation() {
        assert!(Radii::new(1.0, 1.0).is_err());
        assert!(Radii::new(0.0, 1.0).is_err());
        let r = calibrate_radii(&[vec![Vec3::zeros(), Vec3::new(0.3, 0.0, 0.0)]]).unwrap();
        assert!(r.r_b > r.r_a);
    }
}
