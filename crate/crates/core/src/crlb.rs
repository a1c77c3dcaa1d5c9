//! Cramér–Rao bound for the joint state and for a single scatterer, plus
//! the `B·B₁ = G` efficiency identity check.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, aoa_basis, aoa_pair, check_na, layout, measurement_len, Scenario, Vec3};
use crate::linalg::{self, COND_LIMIT};
use crate::noise::MeasurementSet;
use crate::wls::{build_design, build_linearization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbResult {
    pub fim_inverse: DMatrix<f64>,
    /// `sqrt(trace)` of the position block, meters.
    pub pos_bound: f64,
    /// `sqrt(trace)` of the velocity block, m/s.
    pub vel_bound: f64,
    /// Equilibrated condition number of the Fisher matrix.
    pub cond: f64,
}

fn row_into(m: &mut DMatrix<f64>, row: usize, col: usize, v: &RowVector3<f64>) {
    for k in 0..3 {
        m[(row, col + k)] = v[k];
    }
}

/// `B₁ = ∂m°/∂x°ᵀ` evaluated at the true state, rows ordered as `m°`.
pub fn jacobian_b1(scenario: &Scenario, na: usize) -> Result<DMatrix<f64>> {
    check_na(na, scenario.num_rrhs())?;
    let u = scenario.ue_pos;
    let v = scenario.ue_vel;
    let mut out = DMatrix::zeros(measurement_len(na), 6);
    let d1 = u - scenario.rrhs[0];
    let r1 = d1.norm();
    let rd1 = v.dot(&d1) / r1;
    for i in 1..na {
        let di = u - scenario.rrhs[i];
        let ri = di.norm();
        let rdi = v.dot(&di) / ri;
        let unit_diff = (di / ri - d1 / r1).transpose();
        row_into(&mut out, layout::tdoa(i), 0, &unit_diff);
        let pos = (rd1 * d1 / (r1 * r1) - rdi * di / (ri * ri) + v / ri - v / r1).transpose();
        row_into(&mut out, layout::fdoa(i), 0, &pos);
        row_into(&mut out, layout::fdoa(i), 3, &unit_diff);
    }
    for j in 0..na {
        let d = u - scenario.rrhs[j];
        let r = d.norm();
        let cos_el = d.x.hypot(d.y) / r;
        if cos_el == 0.0 {
            return Err(Error::SingularGeometry(format!("UE at zenith/nadir of RRH {j}")));
        }
        let (az, el) = aoa_pair(&scenario.rrhs[j], &u)?;
        let basis = aoa_basis(az, el);
        row_into(&mut out, layout::azimuth(na, j), 0, &(basis.c / (r * cos_el)).transpose());
        row_into(&mut out, layout::elevation(na, j), 0, &(basis.d / r).transpose());
    }
    Ok(out)
}

/// Inverse Fisher information `(B₁ᵀQ⁻¹B₁)⁻¹` under Gaussian measurement noise.
pub fn crlb_joint(scenario: &Scenario, q: &DMatrix<f64>, na: usize) -> Result<CrlbResult> {
    let b1 = jacobian_b1(scenario, na)?;
    if q.nrows() != b1.nrows() || q.ncols() != b1.nrows() {
        return Err(Error::Dimension { expected: b1.nrows(), got: q.nrows() });
    }
    let (a, _) = linalg::whiten(q, &b1, &DVector::zeros(b1.nrows()), "measurement covariance Q")?;
    let fim = a.transpose() * a;
    let fim_inverse = invert_fisher(&fim)?;
    let cond = linalg::scaled_condition(&fim);
    let pos = (0..3).map(|k| fim_inverse[(k, k)]).sum::<f64>().sqrt();
    let vel = (3..6).map(|k| fim_inverse[(k, k)]).sum::<f64>().sqrt();
    Ok(CrlbResult { fim_inverse, pos_bound: pos, vel_bound: vel, cond })
}

fn invert_fisher(fim: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = linalg::scaled_condition(fim);
    if !(cond <= COND_LIMIT) {
        return Err(Error::Unobservable { cond });
    }
    let s = fim.diagonal().map(|d| 1.0 / d.sqrt());
    let scaled = DMatrix::from_fn(fim.nrows(), fim.ncols(), |i, j| fim[(i, j)] * s[i] * s[j]);
    let inv = scaled.cholesky().ok_or(Error::Unobservable { cond })?.inverse();
    Ok(DMatrix::from_fn(inv.nrows(), inv.ncols(), |i, j| inv[(i, j)] * s[i] * s[j]))
}

/// `max |B·B₁ - G|` with every term evaluated at the true geometry.
pub fn verify_efficiency_identity(scenario: &Scenario, na: usize) -> Result<f64> {
    let b1 = jacobian_b1(scenario, na)?;
    let b = build_linearization(&scenario.ue_pos, &scenario.ue_vel, &scenario.rrhs, na)?.b;
    // Any covariance works here; G does not depend on it.
    let meas = MeasurementSet::noiseless(scenario, na, DMatrix::identity(b.nrows(), b.nrows()))?;
    let g = build_design(&meas, &scenario.rrhs)?.g;
    Ok(linalg::max_abs(&(b * b1 - g)))
}

/// Residual of the TDoA-row identity
/// `r_i[(u-b_i)/r_i - (u-b_1)/r_1] = (b_1-b_i) - r_{i1}a_1`, max over components and `i`.
pub fn tdoa_identity_residual(scenario: &Scenario, na: usize) -> Result<f64> {
    check_na(na, scenario.num_rrhs())?;
    let u = scenario.ue_pos;
    let b1 = scenario.rrhs[0];
    let d1 = u - b1;
    let r1 = d1.norm();
    let a1 = d1 / r1;
    let mut worst = 0.0f64;
    for i in 1..na {
        let bi = scenario.rrhs[i];
        let di = u - bi;
        let ri = di.norm();
        let lhs = ri * (di / ri - d1 / r1);
        let rhs = (b1 - bi) - (ri - r1) * a1;
        worst = worst.max((lhs - rhs).amax());
    }
    Ok(worst)
}

/// Residual of the FDoA-row identity
/// `ṙ_i ∂r_{i1}/∂u + r_i ∂ṙ_{i1}/∂u + r_{i1}φ̇_1 cosθ_1 c_1 + r_{i1}θ̇_1 d_1 = -ṙ_{i1}a_1`.
pub fn fdoa_identity_residual(scenario: &Scenario, na: usize) -> Result<f64> {
    check_na(na, scenario.num_rrhs())?;
    let u = scenario.ue_pos;
    let v = scenario.ue_vel;
    let d1 = u - scenario.rrhs[0];
    let r1 = d1.norm();
    let rd1 = v.dot(&d1) / r1;
    let (az, el) = aoa_pair(&scenario.rrhs[0], &u)?;
    let basis = aoa_basis(az, el);
    let cos1 = el.cos();
    let az_rate = basis.c.dot(&v) / (r1 * cos1);
    let el_rate = basis.d.dot(&v) / r1;
    let mut worst = 0.0f64;
    for i in 1..na {
        let di = u - scenario.rrhs[i];
        let ri = di.norm();
        let rdi = v.dot(&di) / ri;
        let ri1 = ri - r1;
        let lhs = rdi * (di / ri - d1 / r1)
            + ri * (rd1 * d1 / (r1 * r1) - rdi * di / (ri * ri) + v / ri - v / r1)
            + ri1 * az_rate * cos1 * basis.c
            + ri1 * el_rate * basis.d;
        let rhs = -(rdi - rd1) * basis.a;
        worst = worst.max((lhs - rhs).amax());
    }
    Ok(worst)
}

/// `∂m_s°/∂s°ᵀ` for the scatterer attached to RRH `n`, UE position held at truth.
pub fn mapping_jacobian(scenario: &Scenario, n: usize) -> Result<Matrix3<f64>> {
    let s = scenario.scatterers.get(n).copied().flatten().ok_or(Error::MissingScatterer(n))?;
    mapping_jacobian_at(&s, &scenario.rrhs[n], &scenario.ue_pos)
}

pub(crate) fn mapping_jacobian_at(s: &Vec3, rrh: &Vec3, ue: &Vec3) -> Result<Matrix3<f64>> {
    let to_s = s - rrh;
    let to_ue = s - ue;
    let d1 = to_s.norm();
    let d2 = to_ue.norm();
    let cos_el = to_s.x.hypot(to_s.y) / d1;
    if d1 == 0.0 || d2 == 0.0 || cos_el == 0.0 {
        return Err(Error::SingularGeometry("degenerate scatterer geometry".into()));
    }
    let (az, el) = aoa_pair(rrh, s)?;
    let basis = aoa_basis(az, el);
    let range_row = (to_ue / d2 + to_s / d1).transpose();
    let az_row = (basis.c / (d1 * cos_el)).transpose();
    let el_row = (basis.d / d1).transpose();
    Ok(Matrix3::from_rows(&[range_row, az_row, el_row]))
}

/// Scatterer bound `(B₁ˢᵀ Q_s⁻¹ B₁ˢ)⁻¹` and its `sqrt(trace)`.
pub fn crlb_mapping(scenario: &Scenario, n: usize, q_s: &Matrix3<f64>) -> Result<(Matrix3<f64>, f64)> {
    let j = mapping_jacobian(scenario, n)?;
    let q_inv = q_s.try_inverse().ok_or(Error::Singular { what: "mapping covariance", cond: f64::INFINITY })?;
    let fim = j.transpose() * q_inv * j;
    let fim_d = DMatrix::from_column_slice(3, 3, fim.as_slice());
    let inv = invert_fisher(&fim_d)?;
    let inv = Matrix3::from_column_slice(inv.as_slice());
    Ok((inv, inv.trace().sqrt()))
}

/// Noise-free `m_s° = [r_{n1}^s, φ_n^s, θ_n^s]` as a function of scatterer
/// position, for finite-difference checks.
pub fn mapping_params_at(scenario: &Scenario, n: usize, s: &Vec3) -> Result<[f64; 3]> {
    let mut sc = scenario.clone();
    sc.scatterers[n] = Some(*s);
    let (r, az, el) = geometry::nlos_params(&sc, n)?;
    Ok([r, az, el])
}
