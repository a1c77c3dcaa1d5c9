//! Closed-form scatterer mapping from single-bounce NLoS measurements.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aoa_basis, Vec3};
use crate::linalg::{self, COND_LIMIT};
use crate::noise::MappingMeasurement;
use crate::wls::STEP_TOLERANCE;

/// `h̃ˢ = G̃ˢ·s + eˢ` for one scatterer. Rows: range equation, azimuth, elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingSystem {
    pub h_s: Vector3<f64>,
    pub g_s: Matrix3<f64>,
    /// `J = r_{n1}^s + r_1`, the total NLoS path length.
    pub j: f64,
}

impl MappingSystem {
    pub fn residual(&self, s: &Vec3) -> Vector3<f64> {
        self.h_s - self.g_s * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScattererEstimate {
    pub s: Vec3,
    pub rrh_index: usize,
    pub iterations_used: usize,
    pub cond: f64,
}

/// Assembles the mapping system for the RRH at `rrh`, given a UE position
/// and its distance `r1_est` to the reference RRH.
pub fn build_mapping_system(meas: &MappingMeasurement, rrh: &Vec3, u_est: &Vec3, r1_est: f64) -> Result<MappingSystem> {
    if !(r1_est > 0.0) || !r1_est.is_finite() {
        return Err(Error::InvalidInput(format!("reference range must be positive, got {r1_est}")));
    }
    let [r, az, el] = meas.m_s;
    let basis = aoa_basis(az, el);
    let j = r + r1_est;
    let h0 = j * j + 2.0 * j * basis.a.dot(rrh) - u_est.dot(u_est) + rrh.dot(rrh);
    let h_s = Vector3::new(h0, basis.c.dot(rrh), basis.d.dot(rrh));
    let g0 = 2.0 * (rrh - u_est + j * basis.a);
    let g_s = Matrix3::from_rows(&[g0.transpose(), basis.c.transpose(), basis.d.transpose()]);
    Ok(MappingSystem { h_s, g_s, j })
}

/// `Bˢ = diag(2d_{n2}, d_{n1}cosθ, d_{n1})`.
pub fn build_mapping_linearization(d_n1: f64, d_n2: f64, theta_s: f64) -> Result<Matrix3<f64>> {
    if !(d_n1 > 0.0) || !(d_n2 > 0.0) {
        return Err(Error::SingularGeometry(format!("scatterer distances must be positive (d_n1={d_n1}, d_n2={d_n2})")));
    }
    Ok(Matrix3::from_diagonal(&Vector3::new(2.0 * d_n2, d_n1 * theta_s.cos(), d_n1)))
}

fn to_dyn(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

/// Weighted solve with `W = cov⁻¹`.
fn solve_cov(sys: &MappingSystem, cov: &Matrix3<f64>) -> Result<(Vec3, f64)> {
    let h = DVector::from_column_slice(sys.h_s.as_slice());
    let (a, y) = linalg::whiten(&to_dyn(cov), &to_dyn(&sys.g_s), &h, "mapping weighting covariance")?;
    let (x, cond) = linalg::solve_spd(&(a.transpose() * &a), &(a.transpose() * y), "mapping normal matrix")?;
    Ok((Vec3::new(x[0], x[1], x[2]), cond))
}

/// Closed-form `s = (GᵀWG)⁻¹GᵀWh` with an explicit weighting matrix.
pub fn mapping_solve(sys: &MappingSystem, w: &Matrix3<f64>) -> Result<(Vec3, f64)> {
    let wg = w * sys.g_s;
    let normal = to_dyn(&(sys.g_s.transpose() * wg));
    let rhs = DVector::from_column_slice((wg.transpose() * sys.h_s).as_slice());
    let (x, cond) = linalg::solve_spd(&normal, &rhs, "mapping normal matrix")?;
    Ok((Vec3::new(x[0], x[1], x[2]), cond))
}

/// Re-weighted scatterer estimate for the RRH `meas.rrh_index`, with
/// `rrhs[0]` as the reference RRH.
pub fn estimate_scatterer(meas: &MappingMeasurement, rrhs: &[Vec3], u_est: &Vec3, iterations: usize) -> Result<ScattererEstimate> {
    if iterations == 0 {
        return Err(Error::InvalidInput("iteration count must be >= 1".into()));
    }
    let n = meas.rrh_index;
    let rrh = *rrhs.get(n).ok_or(Error::IndexOutOfRange { index: n, count: rrhs.len() })?;
    if meas.q_s.cholesky().is_none() {
        return Err(Error::InvalidInput("mapping covariance is not positive definite".into()));
    }
    let sys = build_mapping_system(meas, &rrh, u_est, (u_est - rrhs[0]).norm())?;
    let mut cov = meas.q_s;
    let (mut s, mut cond) = solve_cov(&sys, &cov)?;
    let mut used = 0;
    for t in 1..=iterations {
        let d1 = (s - rrh).norm();
        let d2 = (u_est - s).norm();
        let b = build_mapping_linearization(d1, d2, meas.m_s[2])?;
        let next = b * meas.q_s * b.transpose();
        if linalg::scaled_condition(&to_dyn(&next)) <= COND_LIMIT {
            cov = next;
        }
        let (s_new, c) = solve_cov(&sys, &cov)?;
        if !s_new.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite scatterer iterate at step {t}")));
        }
        let step = (s_new - s).norm();
        s = s_new;
        cond = c;
        used = t;
        if step < STEP_TOLERANCE {
            break;
        }
    }
    Ok(ScattererEstimate { s, rrh_index: n, iterations_used: used, cond })
}

/// Runs [`estimate_scatterer`] on each entry; a failing entry does not stop the batch.
pub fn map_environment(
    measurements: &[MappingMeasurement],
    rrhs: &[Vec3],
    u_est: &Vec3,
    iterations: usize,
) -> Vec<Result<ScattererEstimate>> {
    measurements.iter().map(|m| estimate_scatterer(m, rrhs, u_est, iterations)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{nlos_params, preset_six_rrh};
    use crate::noise::NoiseModel;

    fn exact(n: usize) -> (crate::Scenario, MappingMeasurement) {
        let s = preset_six_rrh();
        let (r, az, el) = nlos_params(&s, n).unwrap();
        let q = NoiseModel::gaussian(0.4, 0.001, 0).mapping_covariance();
        (s, MappingMeasurement { rrh_index: n, m_s: [r, az, el], q_s: q })
    }

    #[test]
    fn noiseless_model_is_consistent() {
        let (s, m) = exact(0);
        let truth = s.scatterers[0].unwrap();
        let sys = build_mapping_system(&m, &s.rrhs[0], &s.ue_pos, (s.ue_pos - s.rrhs[0]).norm()).unwrap();
        let res = sys.residual(&truth);
        assert!(res[0].abs() < 1e-9 * sys.h_s[0].abs().max(1.0));
        assert!(res[1].abs() < 1e-9 && res[2].abs() < 1e-9);
        let d1 = (truth - s.rrhs[0]).norm();
        let d2 = (s.ue_pos - truth).norm();
        assert!((sys.j - d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn angle_rows() {
        let (s, m) = exact(0);
        let sys = build_mapping_system(&m, &s.rrhs[0], &s.ue_pos, 10.0).unwrap();
        let basis = aoa_basis(m.m_s[1], m.m_s[2]);
        assert_eq!(sys.h_s[1], basis.c.dot(&s.rrhs[0]));
        assert_eq!(sys.h_s[2], basis.d.dot(&s.rrhs[0]));
        for k in 0..3 {
            assert_eq!(sys.g_s[(1, k)], basis.c[k]);
            assert_eq!(sys.g_s[(2, k)], basis.d[k]);
        }
    }

    #[test]
    fn linearization_shape() {
        let b = build_mapping_linearization(1.0, 1.0, 0.0).unwrap();
        assert_eq!(b, Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0)));
        let b = build_mapping_linearization(3.0, 1.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert!(b[(1, 1)].abs() < 1e-15);
        assert!(build_mapping_linearization(0.0, 1.0, 0.0).is_err());
        assert!(build_mapping_linearization(1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn noiseless_recovery() {
        let (s, m) = exact(0);
        let est = estimate_scatterer(&m, &s.rrhs, &s.ue_pos, 5).unwrap();
        assert!((est.s - s.scatterers[0].unwrap()).norm() < 1e-6);
        assert_eq!(est.rrh_index, 0);
    }

    #[test]
    fn weight_scale_invariance() {
        let (s, m) = exact(0);
        let sys = build_mapping_system(&m, &s.rrhs[0], &s.ue_pos, (s.ue_pos - s.rrhs[0]).norm()).unwrap();
        let w = Matrix3::from_diagonal(&Vector3::new(1e-4, 3.0, 7.0));
        let (a, _) = mapping_solve(&sys, &w).unwrap();
        let (b, _) = mapping_solve(&sys, &(w * 123.0)).unwrap();
        assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn batch_keeps_going_after_failure() {
        let (s, m) = exact(0);
        let mut bad = m.clone();
        bad.rrh_index = 99;
        let out = map_environment(&[m.clone(), bad, m], &s.rrhs, &s.ue_pos, 5);
        assert_eq!(out.len(), 3);
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
        assert!(map_environment(&[], &s.rrhs, &s.ue_pos, 5).is_empty());
    }

    #[test]
    fn ue_error_propagates_boundedly() {
        let (s, m) = exact(0);
        let base = estimate_scatterer(&m, &s.rrhs, &s.ue_pos, 5).unwrap().s;
        let delta = 1e-3;
        for k in 0..3 {
            let mut u = s.ue_pos;
            u[k] += delta;
            let moved = estimate_scatterer(&m, &s.rrhs, &u, 5).unwrap().s;
            assert!((moved - base).norm() / delta < 100.0);
        }
    }
}
