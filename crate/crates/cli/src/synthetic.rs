//! Synthetic PV plant with co-generated weather.
//!
//! Power follows a clear-sky bell whose width and height vary with the
//! season, attenuated by a bounded AR(1) cloud factor. Radiation tracks the
//! attenuated irradiance with observation noise; humidity falls as radiation
//! rises. Everything is a deterministic function of the seed.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use solarprob::dataset::{parse_timestamp, RawSeries, WeatherColumn, STEP_MINUTES, WEATHER_COLUMNS};
use solarprob::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// First timestamp, `YYYY-MM-DDTHH:MM`.
    pub start: String,
    pub days: u32,
    /// Plant rating in MW.
    pub nominal_power: f64,
    /// Clear-sky irradiance at summer noon, W/m².
    pub peak_irradiance: f64,
    /// Day length in hours at the equinox and its seasonal swing (±).
    pub day_length_hours: f64,
    pub day_length_swing: f64,
    /// Hour of solar noon on the wall clock.
    pub solar_noon: f64,
    /// Relative drop of peak irradiance in winter.
    pub winter_dimming: f64,
    /// Disable to obtain a pure clear-sky series.
    pub clouds: bool,
    /// Long-run mean of the cloud transmission factor.
    pub cloud_mean: f64,
    /// AR(1) coefficient per 15-minute step.
    pub cloud_persistence: f64,
    /// Innovation standard deviation per step.
    pub cloud_noise: f64,
    /// Radiation measurement noise, W/m².
    pub radiation_noise: f64,
    /// Extra weather columns of pure Gaussian noise, named `noise_1`, ….
    pub noise_features: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            start: "2020-01-01T00:00".into(),
            days: 670,
            nominal_power: 10.0,
            peak_irradiance: 1000.0,
            day_length_hours: 12.0,
            day_length_swing: 3.5,
            solar_noon: 13.0,
            winter_dimming: 0.35,
            clouds: true,
            cloud_mean: 0.7,
            cloud_persistence: 0.97,
            cloud_noise: 0.06,
            radiation_noise: 15.0,
            noise_features: 0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        parse_timestamp(&self.start)?;
        if self.days == 0 {
            return Err(Error::Domain("synthetic series needs at least one day".into()));
        }
        if !(self.nominal_power > 0.0 && self.peak_irradiance > 0.0) {
            return Err(Error::Domain("nominal power and peak irradiance must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.cloud_persistence) || !(0.0..=1.0).contains(&self.cloud_mean) {
            return Err(Error::Domain("cloud persistence must lie in [0, 1) and mean in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.winter_dimming) || self.day_length_swing >= self.day_length_hours {
            return Err(Error::Domain("invalid seasonal shape parameters".into()));
        }
        Ok(())
    }
}

/// Seasonal position in [-1, 1]: +1 at the June solstice, -1 in December.
fn season(t: &NaiveDateTime) -> f64 {
    (2.0 * PI * (t.ordinal() as f64 - 172.0) / 365.25).cos()
}

/// Clear-sky shape in [0, 1] at wall-clock time `t`.
pub fn clear_sky_shape(spec: &SyntheticSpec, t: &NaiveDateTime) -> f64 {
    let s = season(t);
    let length = spec.day_length_hours + spec.day_length_swing * s;
    let sunrise = spec.solar_noon - 0.5 * length;
    let h = t.hour() as f64 + t.minute() as f64 / 60.0;
    let phase = (h - sunrise) / length;
    if !(0.0..=1.0).contains(&phase) {
        return 0.0;
    }
    let height = 1.0 - spec.winter_dimming * 0.5 * (1.0 - s);
    height * (PI * phase).sin().powf(1.2)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<RawSeries> {
    spec.validate()?;
    let start = parse_timestamp(&spec.start)?;
    let n = spec.days as usize * (24 * 60 / STEP_MINUTES as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rain = Exp::new(1.0).expect("positive rate");
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut times = Vec::with_capacity(n);
    let mut power = Vec::with_capacity(n);
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); WEATHER_COLUMNS.len() + spec.noise_features];

    let mut cloud = spec.cloud_mean;
    let mut temp_anomaly = 0.0;
    let mut wind = 3.0;
    for k in 0..n {
        let t = start + Duration::minutes(STEP_MINUTES * k as i64);
        let shape = clear_sky_shape(spec, &t);
        // Draw every innovation each step so the stream stays aligned.
        let (e_cloud, e_rad, e_temp, e_hum, e_wind) = (
            gauss(&mut rng),
            gauss(&mut rng),
            gauss(&mut rng),
            gauss(&mut rng),
            gauss(&mut rng),
        );
        let u_rain: f64 = rng.random();
        let rain_amount = rain.sample(&mut rng);
        let noise: Vec<f64> = (0..spec.noise_features).map(|_| gauss(&mut rng)).collect();

        if spec.clouds {
            let phi = spec.cloud_persistence;
            cloud = (phi * cloud + (1.0 - phi) * spec.cloud_mean + spec.cloud_noise * e_cloud).clamp(0.0, 1.0);
        } else {
            cloud = 1.0;
        }
        let irradiance = spec.peak_irradiance * shape * cloud;
        let radiation = if shape > 0.0 {
            (irradiance + spec.radiation_noise * e_rad).max(0.0)
        } else {
            0.0
        };
        temp_anomaly = 0.995 * temp_anomaly + 0.1 * e_temp;
        let temperature = 10.0 + 8.0 * season(&t) + 6.0 * irradiance / spec.peak_irradiance + temp_anomaly;
        let humidity =
            (75.0 - 40.0 * irradiance / spec.peak_irradiance - 0.5 * (temperature - 10.0) + 4.0 * e_hum)
                .clamp(5.0, 100.0);
        let precipitation = if cloud < 0.35 && u_rain < 0.3 { 0.5 * rain_amount } else { 0.0 };
        wind = (0.98 * wind + 0.02 * 3.5 + 0.3 * e_wind).max(0.0);

        let derate = 1.0 - 0.004 * (temperature - 25.0).max(0.0);
        let p = (spec.nominal_power * irradiance / spec.peak_irradiance * derate).clamp(0.0, spec.nominal_power);

        times.push(t);
        power.push(p);
        for (c, v) in cols
            .iter_mut()
            .zip([temperature, humidity, precipitation, wind, radiation].into_iter().chain(noise))
        {
            c.push(v);
        }
    }

    let names = WEATHER_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=spec.noise_features).map(|k| format!("noise_{k}")));
    let weather = names
        .zip(cols)
        .map(|(name, values)| WeatherColumn { name, values })
        .collect();
    RawSeries::new(times, power, weather)
}
