//! Single-pass estimators driven by a learned residual `ê`, and the
//! direct-regression FP baseline.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::train::{TrainConfig, TrainedNet};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::linalg;
use crate::mapping::{build_mapping_system, MappingSystem, ScattererEstimate};
use crate::noise::{MappingMeasurement, MeasurementSet};
use crate::wls::{build_design, DesignSystem, JointEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WlsNetConfig {
    /// `a` in `W = (êêᵀ + aI)⁻¹`, relative to the mean of `ê²`.
    pub disturbance: f64,
    /// Feed the UE position into sub-Net 2 alongside the three NLoS measurements.
    pub subnet2_uses_ue: bool,
    pub training: TrainConfig,
}

impl Default for WlsNetConfig {
    fn default() -> Self {
        WlsNetConfig { disturbance: 1e-6, subnet2_uses_ue: false, training: TrainConfig::default() }
    }
}

/// Training target `e = h̃ - G̃x°`.
pub fn residual_target(meas: &MeasurementSet, rrhs: &[Vec3], x_true: &[f64; 6]) -> Result<Vec<f64>> {
    Ok(build_design(meas, rrhs)?.residual(x_true).as_slice().to_vec())
}

fn absolute_disturbance(e_hat: &[f64], rel: f64) -> f64 {
    let ms = e_hat.iter().map(|v| v * v).sum::<f64>() / e_hat.len().max(1) as f64;
    if ms > 0.0 {
        rel * ms
    } else {
        rel
    }
}

/// `W = (êêᵀ + aI)⁻¹` in closed form (Sherman–Morrison).
pub fn residual_weighting(e_hat: &[f64], rel_disturbance: f64) -> DMatrix<f64> {
    let a = absolute_disturbance(e_hat, rel_disturbance);
    let e = DVector::from_column_slice(e_hat);
    let n = e.len();
    (DMatrix::identity(n, n) - &e * e.transpose() / (a + e.norm_squared())) / a
}

/// Solves with `W = (êêᵀ + aI)⁻¹` through its square root
/// `W^{1/2} ∝ I - κ·n̂n̂ᵀ`, `κ = 1 - sqrt(a/(a + ‖ê‖²))`.
fn project_out(g: &DMatrix<f64>, h: &DVector<f64>, e_hat: &[f64], rel: f64) -> (DMatrix<f64>, DVector<f64>) {
    let e = DVector::from_column_slice(e_hat);
    let norm2 = e.norm_squared();
    if norm2 == 0.0 {
        return (g.clone(), h.clone());
    }
    let a = absolute_disturbance(e_hat, rel);
    let kappa = 1.0 - (a / (a + norm2)).sqrt();
    let n = e / norm2.sqrt();
    let ng = n.transpose() * g;
    let a_mat = g - kappa * &n * ng;
    let y = h - kappa * &n * n.dot(h);
    (a_mat, y)
}

fn lstsq(a: &DMatrix<f64>, y: &DVector<f64>, what: &'static str) -> Result<(DVector<f64>, f64)> {
    linalg::solve_spd(&(a.transpose() * a), &(a.transpose() * y), what)
}

/// One weighted solve of the joint design with a given residual estimate.
pub fn wlsnet_solve(design: &DesignSystem, e_hat: &[f64], rel_disturbance: f64) -> Result<JointEstimate> {
    if e_hat.len() != design.h.len() {
        return Err(Error::Dimension { expected: design.h.len(), got: e_hat.len() });
    }
    let (a, y) = project_out(&design.g, &design.h, e_hat, rel_disturbance);
    let (x, cond) = lstsq(&a, &y, "normal matrix GᵀWG")?;
    Ok(JointEstimate::from_state(&x, residual_weighting(e_hat, rel_disturbance), cond))
}

/// Unweighted solve after subtracting the residual estimate: `LS(G̃, h̃ - ê)`.
pub fn lsnet_solve(design: &DesignSystem, e_hat: &[f64]) -> Result<JointEstimate> {
    if e_hat.len() != design.h.len() {
        return Err(Error::Dimension { expected: design.h.len(), got: e_hat.len() });
    }
    let y = &design.h - DVector::from_column_slice(e_hat);
    let (x, cond) = lstsq(&design.g, &y, "normal matrix GᵀG")?;
    let n = design.h.len();
    Ok(JointEstimate::from_state(&x, DMatrix::identity(n, n), cond))
}

fn check_net(net: &TrainedNet, inputs: usize, outputs: usize) -> Result<()> {
    if net.params.input_dim() != inputs {
        return Err(Error::Dimension { expected: inputs, got: net.params.input_dim() });
    }
    if net.params.output_dim() != outputs {
        return Err(Error::Dimension { expected: outputs, got: net.params.output_dim() });
    }
    Ok(())
}

/// WLS-Net: predict `ê` from the measurements, then one weighted solve.
pub fn wlsnet_estimate(meas: &MeasurementSet, net: &TrainedNet, cfg: &WlsNetConfig, rrhs: &[Vec3]) -> Result<JointEstimate> {
    let n = meas.m.len();
    check_net(net, n, n)?;
    let design = build_design(meas, rrhs)?;
    let e_hat = net.predict(&meas.m)?;
    wlsnet_solve(&design, &e_hat, cfg.disturbance)
}

/// LS-Net: predict `ê`, subtract it from `h̃`, solve unweighted.
pub fn lsnet_estimate(meas: &MeasurementSet, net: &TrainedNet, rrhs: &[Vec3]) -> Result<JointEstimate> {
    let n = meas.m.len();
    check_net(net, n, n)?;
    let design = build_design(meas, rrhs)?;
    lsnet_solve(&design, &net.predict(&meas.m)?)
}

/// FP baseline: the network regresses `[u; u̇]` directly.
pub fn fp_estimate(meas: &MeasurementSet, net: &TrainedNet) -> Result<JointEstimate> {
    check_net(net, meas.m.len(), 6)?;
    let x = DVector::from_vec(net.predict(&meas.m)?);
    Ok(JointEstimate::from_state(&x, DMatrix::zeros(0, 0), 0.0))
}

fn mapping_system_for(meas_s: &MappingMeasurement, u: &Vec3, rrhs: &[Vec3]) -> Result<MappingSystem> {
    let n = meas_s.rrh_index;
    let rrh = rrhs.get(n).ok_or(Error::IndexOutOfRange { index: n, count: rrhs.len() })?;
    build_mapping_system(meas_s, rrh, u, (u - rrhs[0]).norm())
}

/// Training target `eˢ = h̃ˢ - G̃ˢs°` for sub-Net 2.
pub fn mapping_residual_target(meas_s: &MappingMeasurement, rrhs: &[Vec3], u: &Vec3, s_true: &Vec3) -> Result<Vec<f64>> {
    Ok(mapping_system_for(meas_s, u, rrhs)?.residual(s_true).as_slice().to_vec())
}

/// Network input for sub-Net 2.
pub fn subnet2_input(meas_s: &MappingMeasurement, u_est: &Vec3, uses_ue: bool) -> Vec<f64> {
    let mut v = meas_s.m_s.to_vec();
    if uses_ue {
        v.extend_from_slice(u_est.as_slice());
    }
    v
}

/// One weighted mapping solve with a given residual estimate.
pub fn mapping_net_solve(sys: &MappingSystem, e_hat: &[f64], rel_disturbance: f64) -> Result<(Vec3, f64)> {
    if e_hat.len() != 3 {
        return Err(Error::Dimension { expected: 3, got: e_hat.len() });
    }
    let g = DMatrix::from_column_slice(3, 3, sys.g_s.as_slice());
    let h = DVector::from_column_slice(sys.h_s.as_slice());
    let (a, y) = project_out(&g, &h, e_hat, rel_disturbance);
    let (s, cond) = lstsq(&a, &y, "mapping normal matrix")?;
    Ok((Vec3::new(s[0], s[1], s[2]), cond))
}

/// Sub-Net 2: learned `ê_n^s`, one weighted solve for the scatterer.
pub fn estimate_scatterer_net(
    meas_s: &MappingMeasurement,
    u_est: &Vec3,
    net: &TrainedNet,
    cfg: &WlsNetConfig,
    rrhs: &[Vec3],
) -> Result<ScattererEstimate> {
    let input = subnet2_input(meas_s, u_est, cfg.subnet2_uses_ue);
    check_net(net, input.len(), 3)?;
    let sys = mapping_system_for(meas_s, u_est, rrhs)?;
    let e_hat = net.predict(&input)?;
    let (s, cond) = mapping_net_solve(&sys, &e_hat, cfg.disturbance)?;
    Ok(ScattererEstimate { s, rrh_index: meas_s.rrh_index, iterations_used: 0, cond })
}

/// Explicit `W_n^s` for reporting.
pub fn mapping_residual_weighting(e_hat: &[f64; 3], rel_disturbance: f64) -> Matrix3<f64> {
    let a = absolute_disturbance(e_hat, rel_disturbance);
    let e = Vector3::from_column_slice(e_hat);
    (Matrix3::identity() - e * e.transpose() / (a + e.norm_squared())) / a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{preset_six_rrh, nlos_params};
    use crate::noise::{synthesize_measurements, NoiseModel};

    #[test]
    fn zero_residual_is_plain_ls() {
        let s = preset_six_rrh();
        let meas = synthesize_measurements(&s, &NoiseModel::gaussian(0.5, 0.01, 5), 6).unwrap();
        let design = build_design(&meas, &s.rrhs).unwrap();
        let a = wlsnet_solve(&design, &[0.0; 22], 1e-6).unwrap();
        let b = lsnet_solve(&design, &[0.0; 22]).unwrap();
        assert!((a.u - b.u).norm() < 1e-9 && (a.udot - b.udot).norm() < 1e-9);
    }

    #[test]
    fn exact_residual_recovers_truth() {
        let s = preset_six_rrh();
        let meas = synthesize_measurements(&s, &NoiseModel::gaussian(0.5, 0.01, 5), 6).unwrap();
        let design = build_design(&meas, &s.rrhs).unwrap();
        let e = residual_target(&meas, &s.rrhs, &s.state()).unwrap();
        let ls = lsnet_solve(&design, &e).unwrap();
        assert!((ls.u - s.ue_pos).norm() < 1e-6 && (ls.udot - s.ue_vel).norm() < 1e-6);
        let w = wlsnet_solve(&design, &e, 1e-6).unwrap();
        assert!((w.u - s.ue_pos).norm() < 1e-3);
    }

    #[test]
    fn weighting_is_the_inverse() {
        let e = [1.0, -2.0, 0.5];
        let a = absolute_disturbance(&e, 1e-2);
        let ev = DVector::from_column_slice(&e);
        let m = &ev * ev.transpose() + DMatrix::identity(3, 3) * a;
        let w = residual_weighting(&e, 1e-2);
        assert!((m * w - DMatrix::identity(3, 3)).amax() < 1e-9);
        let w3 = mapping_residual_weighting(&e, 1e-2);
        assert!((DMatrix::from_column_slice(3, 3, w3.as_slice()) - residual_weighting(&e, 1e-2)).amax() < 1e-9);
    }

    #[test]
    fn mapping_solve_with_zero_and_exact_residual() {
        let s = preset_six_rrh();
        let (r, az, el) = nlos_params(&s, 0).unwrap();
        let q = NoiseModel::gaussian(0.1, 0.001, 0).mapping_covariance();
        let m = MappingMeasurement { rrh_index: 0, m_s: [r + 0.3, az + 0.002, el - 0.001], q_s: q };
        let sys = mapping_system_for(&m, &s.ue_pos, &s.rrhs).unwrap();
        let (a, _) = mapping_net_solve(&sys, &[0.0; 3], 1e-6).unwrap();
        let g = DMatrix::from_column_slice(3, 3, sys.g_s.as_slice());
        let direct = g.lu().solve(&DVector::from_column_slice(sys.h_s.as_slice())).unwrap();
        assert!((a - Vec3::new(direct[0], direct[1], direct[2])).norm() < 1e-8);
        let exact = MappingMeasurement { m_s: [r, az, el], ..m };
        let sys = mapping_system_for(&exact, &s.ue_pos, &s.rrhs).unwrap();
        let (b, _) = mapping_net_solve(&sys, &[0.0; 3], 1e-6).unwrap();
        assert!((b - s.scatterers[0].unwrap()).norm() < 1e-6);
    }
}
