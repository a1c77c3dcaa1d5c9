//! Pseudo-linear model `h̃ = G̃x° + e` and the iteratively re-weighted
//! closed-form joint position/velocity estimator.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aoa_basis, layout, measurement_len, Vec3};
use crate::linalg::{self, COND_LIMIT};
use crate::noise::MeasurementSet;

/// Default number of re-weighting iterations.
pub const DEFAULT_ITERATIONS: usize = 5;
/// Early exit once successive iterates move less than this (Euclidean, SI units).
pub const STEP_TOLERANCE: f64 = 1e-9;
/// Velocity needs at least three FDoA rows.
pub const MIN_RRHS_FOR_VELOCITY: usize = 4;

/// Stacked `h` (length `4N_a - 2`) and `G` (`(4N_a - 2) × 6`).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSystem {
    pub na: usize,
    pub h: DVector<f64>,
    pub g: DMatrix<f64>,
}

impl DesignSystem {
    /// Model residual `h - G·x`.
    pub fn residual(&self, x: &[f64; 6]) -> DVector<f64> {
        &self.h - &self.g * DVector::from_column_slice(x)
    }
}

/// First-order map from measurement noise to model error, `e ≈ B·Δm`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationB {
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEstimate {
    pub u: Vec3,
    pub udot: Vec3,
    pub iterations_used: usize,
    /// Final weighting matrix `W`.
    pub weighting: DMatrix<f64>,
    /// Equilibrated condition number of the final normal matrix.
    pub cond: f64,
    /// False when fewer than four LoS RRHs were used; `udot` is then the
    /// minimum-norm completion and carries no information.
    pub velocity_observable: bool,
    /// Set when a re-weighting step was skipped because `BQBᵀ` was ill-conditioned.
    pub reweight_fallback: bool,
}

impl JointEstimate {
    pub fn state(&self) -> [f64; 6] {
        [self.u.x, self.u.y, self.u.z, self.udot.x, self.udot.y, self.udot.z]
    }

    pub(crate) fn from_state(x: &DVector<f64>, weighting: DMatrix<f64>, cond: f64) -> Self {
        JointEstimate {
            u: Vec3::new(x[0], x[1], x[2]),
            udot: Vec3::new(x[3], x[4], x[5]),
            iterations_used: 0,
            weighting,
            cond,
            velocity_observable: true,
            reweight_fallback: false,
        }
    }
}

/// Assembles `h̃` and `G̃` with the measured parameters in place of the true ones.
pub fn build_design(meas: &MeasurementSet, rrhs: &[Vec3]) -> Result<DesignSystem> {
    let na = meas.na;
    if na < 2 {
        return Err(Error::UnderDetermined(format!("need at least 2 LoS RRHs, got {na}")));
    }
    if rrhs.len() < na {
        return Err(Error::Dimension { expected: na, got: rrhs.len() });
    }
    let len = measurement_len(na);
    if meas.m.len() != len {
        return Err(Error::Dimension { expected: len, got: meas.m.len() });
    }
    let m = &meas.m;
    let mut h = DVector::zeros(len);
    let mut g = DMatrix::zeros(len, 6);

    let a1 = aoa_basis(m[layout::azimuth(na, 0)], m[layout::elevation(na, 0)]).a;
    let b1 = rrhs[0];
    for i in 1..na {
        let bi = rrhs[i];
        let r = m[layout::tdoa(i)];
        let rd = m[layout::fdoa(i)];
        let lever = (b1 - bi) - r * a1;

        let row = layout::tdoa(i);
        h[row] = r * r - 2.0 * r * a1.dot(&b1) - bi.dot(&bi) + b1.dot(&b1);
        set_row3(&mut g, row, 0, &(2.0 * lever));

        let row = layout::fdoa(i);
        h[row] = rd * r - rd * a1.dot(&b1);
        set_row3(&mut g, row, 0, &(-rd * a1));
        set_row3(&mut g, row, 3, &lever);
    }
    for j in 0..na {
        let basis = aoa_basis(m[layout::azimuth(na, j)], m[layout::elevation(na, j)]);
        let bj = rrhs[j];
        let row = layout::azimuth(na, j);
        h[row] = basis.c.dot(&bj);
        set_row3(&mut g, row, 0, &basis.c);
        let row = layout::elevation(na, j);
        h[row] = basis.d.dot(&bj);
        set_row3(&mut g, row, 0, &basis.d);
    }
    Ok(DesignSystem { na, h, g })
}

fn set_row3(g: &mut DMatrix<f64>, row: usize, col: usize, v: &Vec3) {
    g[(row, col)] = v.x;
    g[(row, col + 1)] = v.y;
    g[(row, col + 2)] = v.z;
}

/// Builds `B` from a (current or true) state: every range, range rate and
/// angle inside `B` is recomputed from `u`, `u̇`.
pub fn build_linearization(u: &Vec3, udot: &Vec3, rrhs: &[Vec3], na: usize) -> Result<LinearizationB> {
    if rrhs.len() < na || na < 2 {
        return Err(Error::Dimension { expected: na.max(2), got: rrhs.len() });
    }
    let len = measurement_len(na);
    let mut ranges = Vec::with_capacity(na);
    let mut rates = Vec::with_capacity(na);
    let mut cos_el = Vec::with_capacity(na);
    for (j, b) in rrhs.iter().take(na).enumerate() {
        let d = u - b;
        let r = d.norm();
        let horiz = d.x.hypot(d.y);
        if !(r > 0.0) {
            return Err(Error::SingularGeometry(format!("UE coincides with RRH {j}")));
        }
        if horiz == 0.0 {
            return Err(Error::SingularGeometry(format!("UE is at the zenith/nadir of RRH {j}")));
        }
        ranges.push(r);
        rates.push(udot.dot(&d) / r);
        cos_el.push(horiz / r);
    }
    let d1 = u - rrhs[0];
    let basis1 = aoa_basis(d1.y.atan2(d1.x), (d1.z / ranges[0]).asin());
    let r1 = ranges[0];
    let az_rate = basis1.c.dot(udot) / (r1 * cos_el[0]);
    let el_rate = basis1.d.dot(udot) / r1;

    let mut b = DMatrix::zeros(len, len);
    let az1 = layout::azimuth(na, 0);
    let el1 = layout::elevation(na, 0);
    for i in 1..na {
        let ri1 = ranges[i] - r1;
        let (t, f) = (layout::tdoa(i), layout::fdoa(i));
        b[(t, t)] = 2.0 * ranges[i];
        b[(f, t)] = rates[i];
        b[(f, f)] = ranges[i];
        b[(f, az1)] = r1 * ri1 * az_rate * cos_el[0] * cos_el[0];
        b[(f, el1)] = r1 * ri1 * el_rate;
    }
    for j in 0..na {
        let (a, e) = (layout::azimuth(na, j), layout::elevation(na, j));
        b[(a, a)] = ranges[j] * cos_el[j];
        b[(e, e)] = ranges[j];
    }
    Ok(LinearizationB { b })
}

/// Closed-form `x = (G̃ᵀWG̃)⁻¹G̃ᵀWh̃`.
pub fn wls_solve(design: &DesignSystem, w: &DMatrix<f64>) -> Result<JointEstimate> {
    let len = design.h.len();
    if w.nrows() != len || w.ncols() != len {
        return Err(Error::Dimension { expected: len, got: w.nrows() });
    }
    let wg = w * &design.g;
    let normal = design.g.transpose() * &wg;
    let rhs = wg.transpose() * &design.h;
    let (x, cond) = linalg::solve_spd(&normal, &rhs, "normal matrix GᵀWG")?;
    Ok(JointEstimate::from_state(&x, w.clone(), cond))
}

/// Weighted solve with `W = cov⁻¹`, via whitening rather than an explicit inverse.
pub(crate) fn solve_with_covariance(design: &DesignSystem, cov: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let (a, y) = linalg::whiten(cov, &design.g, &design.h, "weighting covariance")?;
    let normal = a.transpose() * &a;
    let rhs = a.transpose() * y;
    linalg::solve_spd(&normal, &rhs, "normal matrix GᵀWG")
}

/// Same as [`solve_with_covariance`] but tolerates the rank-deficient
/// velocity block of `N_a < 4`: position is unique, velocity is the
/// minimum-norm completion.
fn solve_partial(design: &DesignSystem, cov: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let (a, y) = linalg::whiten(cov, &design.g, &design.h, "weighting covariance")?;
    let x = linalg::min_norm_lstsq(&a, &y)?;
    let normal = a.transpose() * &a;
    let npp = normal.view((0, 0), (3, 3)).into_owned();
    let npv = normal.view((0, 3), (3, 3)).into_owned();
    let nvv: Matrix3<f64> = normal.fixed_view::<3, 3>(3, 3).into_owned();
    let nvv_pinv = nvv.pseudo_inverse(1e-12 * nvv.norm()).unwrap_or_else(|_| Matrix3::zeros());
    let nvv_pinv = DMatrix::from_column_slice(3, 3, nvv_pinv.as_slice());
    let schur = &npp - &npv * nvv_pinv * npv.transpose();
    let cond = linalg::scaled_condition(&schur);
    if !(cond <= COND_LIMIT) {
        return Err(Error::Singular { what: "position normal matrix", cond });
    }
    Ok((x, cond))
}

/// Iteratively re-weighted joint estimator: an initial solve with
/// `W = Q⁻¹`, then `iterations` updates with `W = (BQBᵀ)⁻¹`, `B` rebuilt
/// from the current estimate each time.
pub fn estimate_joint(meas: &MeasurementSet, rrhs: &[Vec3], iterations: usize) -> Result<JointEstimate> {
    if iterations == 0 {
        return Err(Error::InvalidInput("iteration count must be >= 1".into()));
    }
    let na = meas.na;
    let design = build_design(meas, rrhs)?;
    if meas.q.clone().cholesky().is_none() {
        return Err(Error::InvalidInput("measurement covariance Q is not positive definite".into()));
    }
    let observable = na >= MIN_RRHS_FOR_VELOCITY;
    let solve = |cov: &DMatrix<f64>| if observable { solve_with_covariance(&design, cov) } else { solve_partial(&design, cov) };

    let mut cov = meas.q.clone();
    let (mut x, mut cond) = solve(&cov)?;
    check_finite(&x, 0)?;
    let mut used = 0;
    let mut fallback = false;
    for t in 1..=iterations {
        let u = Vec3::new(x[0], x[1], x[2]);
        let v = Vec3::new(x[3], x[4], x[5]);
        let b = build_linearization(&u, &v, rrhs, na)?.b;
        let next_cov = &b * &meas.q * b.transpose();
        if linalg::scaled_condition(&next_cov) > COND_LIMIT {
            fallback = true;
        } else {
            cov = next_cov;
        }
        let (x_new, c) = solve(&cov)?;
        check_finite(&x_new, t)?;
        let step = (&x_new - &x).norm();
        x = x_new;
        cond = c;
        used = t;
        if step < STEP_TOLERANCE {
            break;
        }
    }
    let weighting = cov
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::Singular { what: "weighting covariance", cond: linalg::scaled_condition(&cov) })?;
    let mut est = JointEstimate::from_state(&x, weighting, cond);
    est.iterations_used = used;
    est.velocity_observable = observable;
    est.reweight_fallback = fallback;
    Ok(est)
}

fn check_finite(x: &DVector<f64>, t: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged(format!("non-finite iterate at step {t}")))
    }
}
