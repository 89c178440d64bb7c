//! Solar geometry, irradiance on a sun-tracking vertical surface, window
//! gains, and the time-of-day one-hot encoding of vertical irradiance.

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

/// Elevation below which the cot(β) projection is considered singular and
/// the vertical irradiance is zeroed.
pub const BETA_MIN_DEG: f64 = 5.0;

/// Upper clamp on vertical irradiance (solar constant, W/m²).
pub const SOLAR_CONSTANT: f64 = 1367.0;

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolarGeometry {
    pub latitude: f64,
    pub longitude: f64,
    /// Azimuth in degrees clockwise from north, `[0, 360)`.
    pub alpha: f64,
    /// Elevation above the horizon in degrees, `[-90, 90]`.
    pub beta: f64,
}

/// Sun position from the NOAA declination / equation-of-time approximation.
/// Good to well under a degree for the 21st century; atmospheric refraction
/// is ignored.
pub fn solar_position(time: DateTime<Utc>, latitude: f64, longitude: f64) -> SolarGeometry {
    let doy = f64::from(time.ordinal());
    let hours = f64::from(time.hour())
        + f64::from(time.minute()) / 60.0
        + (f64::from(time.second()) + f64::from(time.nanosecond()) * 1e-9) / 3600.0;
    let days_in_year = if chrono::NaiveDate::from_ymd_opt(time.year(), 2, 29).is_some() {
        366.0
    } else {
        365.0
    };
    let g = 2.0 * PI / days_in_year * (doy - 1.0 + (hours - 12.0) / 24.0);

    let eqtime = 229.18
        * (0.000075 + 0.001868 * g.cos()
            - 0.032077 * g.sin()
            - 0.014615 * (2.0 * g).cos()
            - 0.040849 * (2.0 * g).sin());
    let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
        + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();

    let true_solar_minutes = hours * 60.0 + eqtime + 4.0 * longitude;
    let hour_angle = (true_solar_minutes / 4.0 - 180.0).to_radians();

    let lat = latitude.to_radians();
    let cos_zenith = (lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    let beta = 90.0 - cos_zenith.acos().to_degrees();

    let az_from_south = hour_angle
        .sin()
        .atan2(hour_angle.cos() * lat.sin() - decl.tan() * lat.cos());
    let alpha = (az_from_south.to_degrees() + 180.0).rem_euclid(360.0);

    SolarGeometry {
        latitude,
        longitude,
        alpha,
        beta,
    }
}

/// Irradiance on a vertical surface facing the sun, `cot(β)·I_hor`.
pub fn vertical_irradiance(i_hor: f64, beta_deg: f64) -> f64 {
    if beta_deg < BETA_MIN_DEG || i_hor <= 0.0 {
        return 0.0;
    }
    let b = beta_deg.to_radians();
    (b.cos() / b.sin() * i_hor).min(SOLAR_CONSTANT)
}

/// Physical window gain `A_win·max(0, sin(α−α0))·I_vert` in W.
pub fn window_gain(i_hor: f64, geometry: &SolarGeometry, a_win: f64, alpha0: f64) -> f64 {
    let facing = (geometry.alpha - alpha0).to_radians().sin().max(0.0);
    a_win * facing * vertical_irradiance(i_hor, geometry.beta)
}

/// Splits the day into `tau` equal bins starting at 00:00.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHotSolarConfig {
    pub tau: usize,
}

impl OneHotSolarConfig {
    pub fn new(tau: usize) -> Self {
        assert!(tau >= 1, "one-hot solar encoding needs at least one bin");
        Self { tau }
    }

    /// Bin index for a time of day given in seconds since midnight.
    pub fn bin(&self, time_of_day: f64) -> usize {
        let tod = time_of_day.rem_euclid(SECONDS_PER_DAY);
        ((tod / SECONDS_PER_DAY * self.tau as f64) as usize).min(self.tau - 1)
    }

    pub fn encode_into(&self, i_vert: f64, time_of_day: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.tau);
        out.fill(0.0);
        out[self.bin(time_of_day)] = i_vert;
    }
}

pub fn onehot_encode(i_vert: f64, time_of_day: f64, config: &OneHotSolarConfig) -> Vec<f64> {
    let mut v = vec![0.0; config.tau];
    config.encode_into(i_vert, time_of_day, &mut v);
    v
}
