//! World geometry and the noise-free location parameters it induces.
//!
//! RRH indices are zero-based throughout the crate; RRH 0 is the TDoA/FDoA
//! reference. Ranges are in meters, range rates in m/s, angles in radians.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub rrhs: Vec<Vec3>,
    pub ue_pos: Vec3,
    pub ue_vel: Vec3,
    /// One optional scatterer per RRH index (single-bounce NLoS path of that RRH).
    pub scatterers: Vec<Option<Vec3>>,
    /// Clock bias between the network and the UE, seconds.
    pub clock_bias: f64,
    pub light_speed: f64,
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl Scenario {
    /// Builds a scenario with no scatterers, zero clock bias and the vacuum
    /// speed of light, validating the geometry.
    pub fn new(rrhs: Vec<Vec3>, ue_pos: Vec3, ue_vel: Vec3) -> Result<Self> {
        let n = rrhs.len();
        let s = Scenario {
            rrhs,
            ue_pos,
            ue_vel,
            scatterers: vec![None; n],
            clock_bias: 0.0,
            light_speed: SPEED_OF_LIGHT,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_scatterer(mut self, n: usize, pos: Vec3) -> Result<Self> {
        if n >= self.rrhs.len() {
            return Err(Error::IndexOutOfRange { index: n, count: self.rrhs.len() });
        }
        self.scatterers[n] = Some(pos);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rrhs.len();
        if n < 2 {
            return Err(Error::InvalidScenario(format!("need at least 2 RRHs, got {n}")));
        }
        if self.scatterers.len() != n {
            return Err(Error::InvalidScenario(format!(
                "scatterer list has {} entries for {n} RRHs",
                self.scatterers.len()
            )));
        }
        let all_points = self
            .rrhs
            .iter()
            .chain([&self.ue_pos, &self.ue_vel])
            .chain(self.scatterers.iter().flatten());
        if !all_points.into_iter().all(finite) {
            return Err(Error::InvalidScenario("non-finite coordinate".into()));
        }
        if !(self.light_speed.is_finite() && self.light_speed > 0.0) || !self.clock_bias.is_finite() {
            return Err(Error::InvalidScenario("light speed must be positive and clock bias finite".into()));
        }
        for i in 0..n {
            for j in i + 1..n {
                if self.rrhs[i] == self.rrhs[j] {
                    return Err(Error::InvalidScenario(format!("RRHs {i} and {j} coincide")));
                }
            }
            if (self.ue_pos - self.rrhs[i]).norm() == 0.0 {
                return Err(Error::InvalidScenario(format!("UE coincides with RRH {i}")));
            }
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            if let Some(s) = s {
                if (self.ue_pos - s).norm() == 0.0 || (self.rrhs[i] - s).norm() == 0.0 {
                    return Err(Error::InvalidScenario(format!("scatterer {i} coincides with UE or its RRH")));
                }
            }
        }
        Ok(())
    }

    pub fn num_rrhs(&self) -> usize {
        self.rrhs.len()
    }

    /// The joint state `[u; u̇]`.
    pub fn state(&self) -> [f64; 6] {
        let u = self.ue_pos;
        let v = self.ue_vel;
        [u.x, u.y, u.z, v.x, v.y, v.z]
    }

    fn check_index(&self, n: usize) -> Result<()> {
        if n >= self.rrhs.len() {
            Err(Error::IndexOutOfRange { index: n, count: self.rrhs.len() })
        } else {
            Ok(())
        }
    }
}

/// `r_n = ||u - b_n||`.
pub fn los_range(scenario: &Scenario, n: usize) -> Result<f64> {
    scenario.check_index(n)?;
    Ok((scenario.ue_pos - scenario.rrhs[n]).norm())
}

/// Time of arrival of the LoS path at RRH `n`, including the clock bias.
pub fn toa(scenario: &Scenario, n: usize) -> Result<f64> {
    Ok(los_range(scenario, n)? / scenario.light_speed + scenario.clock_bias)
}

/// TDoA-related parameter `r_{n1} = r_n - r_1` (meters). The clock bias is
/// common to both arrivals and cancels.
pub fn tdoa_related(scenario: &Scenario, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("TDoA is defined against the reference RRH; n must be >= 1".into()));
    }
    Ok(los_range(scenario, n)? - los_range(scenario, 0)?)
}

/// `ṙ_n = u̇ᵀ(u - b_n) / r_n`.
pub fn range_rate(scenario: &Scenario, n: usize) -> Result<f64> {
    scenario.check_index(n)?;
    let d = scenario.ue_pos - scenario.rrhs[n];
    Ok(scenario.ue_vel.dot(&d) / d.norm())
}

/// FDoA-related parameter `ṙ_{n1} = ṙ_n - ṙ_1`.
pub fn range_rate_diff(scenario: &Scenario, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("FDoA is defined against the reference RRH; n must be >= 1".into()));
    }
    Ok(range_rate(scenario, n)? - range_rate(scenario, 0)?)
}

/// Azimuth and elevation of `to` as seen from `from`. Azimuth uses the
/// full-quadrant arctangent.
pub fn aoa_pair(from: &Vec3, to: &Vec3) -> Result<(f64, f64)> {
    let d = to - from;
    let range = d.norm();
    if range == 0.0 {
        return Err(Error::ZeroRange);
    }
    let az = d.y.atan2(d.x);
    let el = (d.z / range).clamp(-1.0, 1.0).asin();
    Ok((az, el))
}

/// Single-bounce NLoS parameters for RRH `n`: TDoA-related delay against
/// the reference LoS path, and the AoA pair at RRH `n` toward the scatterer.
pub fn nlos_params(scenario: &Scenario, n: usize) -> Result<(f64, f64, f64)> {
    scenario.check_index(n)?;
    let s = scenario.scatterers[n].ok_or(Error::MissingScatterer(n))?;
    let b = scenario.rrhs[n];
    let u = scenario.ue_pos;
    let r = (u - s).norm() + (s - b).norm() - (u - scenario.rrhs[0]).norm();
    let (az, el) = aoa_pair(&b, &s)?;
    Ok((r, az, el))
}

/// Orthonormal frame attached to an arrival direction: `a` points along the
/// arrival, `c` is the horizontal normal, `d` the elevation normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoaBasis {
    pub a: Vec3,
    pub c: Vec3,
    pub d: Vec3,
}

pub fn aoa_basis(azimuth: f64, elevation: f64) -> AoaBasis {
    let (sp, cp) = azimuth.sin_cos();
    let (st, ct) = elevation.sin_cos();
    AoaBasis {
        a: Vec3::new(ct * cp, ct * sp, st),
        c: Vec3::new(-sp, cp, 0.0),
        d: Vec3::new(-st * cp, -st * sp, ct),
    }
}

/// Wraps an angle difference to the nearest representative in (-π, π].
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

/// Noise-free measurement vector `m°` for the first `na` RRHs, ordered
/// `[r_21, ṙ_21, …, r_{na,1}, ṙ_{na,1}, φ_1, θ_1, …, φ_na, θ_na]`.
pub fn true_measurements(scenario: &Scenario, na: usize) -> Result<Vec<f64>> {
    check_na(na, scenario.num_rrhs())?;
    let mut m = Vec::with_capacity(4 * na - 2);
    for i in 1..na {
        m.push(tdoa_related(scenario, i)?);
        m.push(range_rate_diff(scenario, i)?);
    }
    for j in 0..na {
        let (az, el) = aoa_pair(&scenario.rrhs[j], &scenario.ue_pos)?;
        m.push(az);
        m.push(el);
    }
    Ok(m)
}

pub(crate) fn check_na(na: usize, max: usize) -> Result<()> {
    if na < 2 || na > max {
        Err(Error::NaOutOfRange { na, max })
    } else {
        Ok(())
    }
}

/// Length of the measurement vector for `na` LoS RRHs.
pub fn measurement_len(na: usize) -> usize {
    4 * na - 2
}

/// Positions inside the measurement vector.
pub mod layout {
    /// Row of `r_{i1}` for zero-based RRH `i >= 1`.
    pub fn tdoa(i: usize) -> usize {
        2 * (i - 1)
    }
    pub fn fdoa(i: usize) -> usize {
        2 * (i - 1) + 1
    }
    /// Row of `φ_j` for zero-based RRH `j`.
    pub fn azimuth(na: usize, j: usize) -> usize {
        2 * (na - 1) + 2 * j
    }
    pub fn elevation(na: usize, j: usize) -> usize {
        2 * (na - 1) + 2 * j + 1
    }
}

/// Column names matching the measurement ordering (1-based RRH labels).
pub fn measurement_names(na: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(measurement_len(na));
    for i in 2..=na {
        names.push(format!("r{i}1"));
        names.push(format!("rdot{i}1"));
    }
    for j in 1..=na {
        names.push(format!("phi{j}"));
        names.push(format!("theta{j}"));
    }
    names
}

/// The six-RRH evaluation layout with the UE at [300, -20, -100] m moving at
/// [-9, 7, 5] m/s. A scatterer at [50, 200, -70] m is attached to RRH 0.
pub fn preset_six_rrh() -> Scenario {
    let rrhs = vec![
        Vec3::new(-400.0, 0.0, 0.0),
        Vec3::new(400.0, 0.0, 0.0),
        Vec3::new(200.0, 350.0, 0.0),
        Vec3::new(-200.0, 350.0, 0.0),
        Vec3::new(-200.0, -350.0, 0.0),
        Vec3::new(200.0, -350.0, 0.0),
    ];
    Scenario::new(rrhs, Vec3::new(300.0, -20.0, -100.0), Vec3::new(-9.0, 7.0, 5.0))
        .and_then(|s| s.with_scatterer(0, Vec3::new(50.0, 200.0, -70.0)))
        .expect("preset geometry is valid")
}

/// The 18-RRH urban street layout (RRHs mounted at 6 m). The UE walks along
/// the street between the two RRH columns at handset height.
pub fn preset_urban_18() -> Scenario {
    const XS: [f64; 18] = [
        235.5042, 287.5042, 235.5042, 287.5042, 235.5042, 287.5042, 235.5042, 287.5042, 235.5042,
        287.5042, 235.5042, 287.5042, 38.0751, 38.0751, 188.0751, 188.0751, 338.0751, 338.0751,
    ];
    const YS: [f64; 18] = [
        389.5038, 389.5038, 489.5038, 489.5038, 589.5038, 589.5038, 851.5038, 851.5038, 651.5038,
        651.5038, 751.5038, 751.5038, 594.7361, 646.7361, 594.7361, 646.7361, 594.7361, 646.7361,
    ];
    let rrhs = XS.iter().zip(YS.iter()).map(|(&x, &y)| Vec3::new(x, y, 6.0)).collect();
    Scenario::new(rrhs, Vec3::new(261.5, 540.0, 1.5), Vec3::new(0.3, 1.4, 0.0)).expect("preset geometry is valid")
}

pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "six-rrh" => Ok(preset_six_rrh()),
        "urban-18" => Ok(preset_urban_18()),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}
