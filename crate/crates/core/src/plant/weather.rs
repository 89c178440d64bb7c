use chrono::{DateTime, Datelike, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{TimeSeries, Unit};
use crate::error::{Error, Result};
use crate::features::Site;
use crate::solar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherConfig {
    /// Annual mean ambient temperature, °C.
    pub mean_temperature: f64,
    /// Half peak-to-peak of the seasonal swing; the minimum falls on `coldest_day`.
    pub seasonal_amplitude: f64,
    pub coldest_day: f64,
    pub diurnal_amplitude: f64,
    /// Hour of the diurnal maximum (solar time is not used here).
    pub warmest_hour: f64,
    /// Stationary standard deviation of the AR(1) deviation, K.
    pub noise_std: f64,
    /// Correlation time of the AR(1) deviation, hours.
    pub noise_hours: f64,
    pub clear_sky_peak: f64,
    pub cloud_min: f64,
    pub cloud_max: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            mean_temperature: 10.0,
            seasonal_amplitude: 9.0,
            coldest_day: 15.0,
            diurnal_amplitude: 4.0,
            warmest_hour: 15.0,
            noise_std: 2.0,
            noise_hours: 18.0,
            clear_sky_peak: 1000.0,
            cloud_min: 0.2,
            cloud_max: 1.0,
        }
    }
}

/// One-minute synthetic weather with default climate settings.
pub fn synth_weather(days: usize, start: DateTime<Utc>, seed: u64, latitude: f64, longitude: f64) -> Result<TimeSeries> {
    synth_weather_with(
        &WeatherConfig::default(),
        days,
        start,
        60,
        seed,
        Site { latitude, longitude },
    )
}

/// Ambient temperature is seasonal + diurnal sinusoid + AR(1) deviation;
/// horizontal irradiance is a clear-sky envelope scaled by a per-day
/// cloudiness factor.
pub fn synth_weather_with(
    cfg: &WeatherConfig,
    days: usize,
    start: DateTime<Utc>,
    step_secs: i64,
    seed: u64,
    site: Site,
) -> Result<TimeSeries> {
    if days == 0 {
        return Err(Error::invalid("weather needs at least one day"));
    }
    if step_secs <= 0 || 86_400 % step_secs != 0 {
        return Err(Error::invalid(format!("weather step {step_secs}s must divide a day")));
    }
    if !(0.0..=cfg.cloud_max).contains(&cfg.cloud_min) || cfg.cloud_max > 1.0 {
        return Err(Error::invalid("cloudiness bounds must satisfy 0 ≤ min ≤ max ≤ 1"));
    }
    let per_day = (86_400 / step_secs) as usize;
    let n = days * per_day;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = (-(step_secs as f64) / (cfg.noise_hours * 3600.0)).exp();
    let innovation = Normal::new(0.0, cfg.noise_std * (1.0 - phi * phi).sqrt()).expect("finite std");
    let mut deviation = Normal::new(0.0, cfg.noise_std).expect("finite std").sample(&mut rng);

    let mut t_amb = Vec::with_capacity(n);
    let mut i_hor = Vec::with_capacity(n);
    let mut cloud = 1.0;
    let two_pi = 2.0 * std::f64::consts::PI;
    for k in 0..n {
        if k % per_day == 0 {
            cloud = rng.gen_range(cfg.cloud_min..=cfg.cloud_max);
        }
        let t = start + Duration::seconds(k as i64 * step_secs);
        let mid = t + Duration::milliseconds(step_secs * 500);
        let doy = f64::from(t.ordinal()) - 1.0;
        let hour = (t - t.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc()).num_seconds() as f64 / 3600.0;
        let seasonal = -cfg.seasonal_amplitude * (two_pi * (doy - cfg.coldest_day) / 365.25).cos();
        let diurnal = cfg.diurnal_amplitude * (two_pi * (hour - cfg.warmest_hour) / 24.0).cos();
        deviation = phi * deviation + innovation.sample(&mut rng);
        t_amb.push(cfg.mean_temperature + seasonal + diurnal + deviation);

        let beta = solar::solar_position(mid, site.latitude, site.longitude).beta;
        let clear = if beta > 0.0 {
            cfg.clear_sky_peak * beta.to_radians().sin().powf(1.15)
        } else {
            0.0
        };
        i_hor.push(clear * cloud);
    }
    TimeSeries::builder(start, step_secs)
        .channel("T_amb", Unit::Celsius, t_amb)
        .channel("I_hor", Unit::WattPerSquareMeter, i_hor)
        .build()
}
