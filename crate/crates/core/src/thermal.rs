//! Steady-state conductor heat balance and weather-dependent line ratings.
//!
//! The balance `q_c + q_r = q_s + I^2 R(T)` uses the IEEE 738 convective,
//! radiative and solar terms in SI units. Weather is assumed uniform along
//! the line, so results are per metre of conductor.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const KELVIN: f64 = 273.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductorParams {
    /// Outer diameter in m.
    pub diameter: f64,
    /// AC resistance in Ω/m at `t_low`.
    pub resistance_at_t_low: f64,
    /// AC resistance in Ω/m at `t_high`.
    pub resistance_at_t_high: f64,
    /// °C
    pub t_low: f64,
    /// °C
    pub t_high: f64,
    pub emissivity: f64,
    pub absorptivity: f64,
    /// Maximum allowed conductor temperature in °C.
    pub max_temperature: f64,
    /// Elevation above sea level in m.
    pub elevation: f64,
}

impl ConductorParams {
    /// 26/7 ACSR "Drake".
    pub fn drake() -> Self {
        ConductorParams {
            diameter: 0.02814,
            resistance_at_t_low: 7.283e-5,
            resistance_at_t_high: 8.688e-5,
            t_low: 25.0,
            t_high: 75.0,
            emissivity: 0.8,
            absorptivity: 0.8,
            max_temperature: 100.0,
            elevation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.diameter,
            self.resistance_at_t_low,
            self.resistance_at_t_high,
            self.t_low,
            self.t_high,
            self.emissivity,
            self.absorptivity,
            self.max_temperature,
            self.elevation,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(invalid("conductor parameters must be finite"));
        }
        if self.diameter <= 0.0 {
            return Err(invalid("conductor diameter must be positive"));
        }
        if self.resistance_at_t_low <= 0.0 || self.resistance_at_t_high <= 0.0 {
            return Err(invalid("conductor resistances must be positive"));
        }
        if self.t_high <= self.t_low {
            return Err(invalid("resistance reference temperatures must be increasing"));
        }
        if self.resistance_at_t_high < self.resistance_at_t_low {
            return Err(invalid("resistance must be nondecreasing in temperature"));
        }
        if !(0.0..=1.0).contains(&self.emissivity) || !(0.0..=1.0).contains(&self.absorptivity) {
            return Err(invalid("emissivity and absorptivity must lie in [0, 1]"));
        }
        if self.max_temperature <= -KELVIN {
            return Err(invalid("maximum temperature below absolute zero"));
        }
        Ok(())
    }

    /// Resistance at `t` °C, linear through the two reference points.
    pub fn resistance(&self, t: f64) -> f64 {
        let slope = (self.resistance_at_t_high - self.resistance_at_t_low) / (self.t_high - self.t_low);
        self.resistance_at_t_low + slope * (t - self.t_low)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    /// m/s
    pub wind_speed: f64,
    /// Degrees between wind direction and line axis; 0 is parallel.
    pub wind_angle: f64,
    /// °C
    pub ambient_temperature: f64,
    /// Effective irradiance on the conductor in W/m².
    pub solar_irradiance: f64,
}

impl WeatherSample {
    /// Conservative assumptions behind the nominal rating.
    pub fn nominal_default() -> Self {
        WeatherSample { wind_speed: 0.5, wind_angle: 22.5, ambient_temperature: 30.0, solar_irradiance: 900.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.wind_speed, self.wind_angle, self.ambient_temperature, self.solar_irradiance];
        if f.iter().any(|v| !v.is_finite()) {
            return Err(invalid("weather values must be finite"));
        }
        if self.wind_speed < 0.0 {
            return Err(invalid("wind speed must be nonnegative"));
        }
        if self.solar_irradiance < 0.0 {
            return Err(invalid("solar irradiance must be nonnegative"));
        }
        if self.ambient_temperature <= -KELVIN {
            return Err(invalid("ambient temperature below absolute zero"));
        }
        Ok(())
    }

    /// Wind angle folded into [0, 90] degrees.
    pub fn normalized_angle(&self) -> f64 {
        let a = self.wind_angle.abs() % 180.0;
        if a > 90.0 {
            180.0 - a
        } else {
            a
        }
    }
}

/// Heat flows per metre of conductor, W/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatTerms {
    pub convection: f64,
    pub radiation: f64,
    pub solar: f64,
}

/// Air properties at the boundary-layer film temperature.
struct Film {
    viscosity: f64,
    density: f64,
    conductivity: f64,
}

fn film(t_film: f64, elevation: f64) -> Film {
    Film {
        viscosity: 1.458e-6 * (t_film + 273.0).powf(1.5) / (t_film + 383.4),
        density: (1.293 - 1.525e-4 * elevation + 6.379e-9 * elevation * elevation) / (1.0 + 0.00367 * t_film),
        conductivity: 2.424e-2 + 7.477e-5 * t_film - 4.407e-9 * t_film * t_film,
    }
}

fn wind_direction_factor(angle_deg: f64) -> f64 {
    let phi = angle_deg.to_radians();
    1.194 - phi.cos() + 0.194 * (2.0 * phi).cos() + 0.368 * (2.0 * phi).sin()
}

/// Convective, radiative and solar terms at conductor temperature `t_conductor`.
pub fn heat_terms(w: &WeatherSample, c: &ConductorParams, t_conductor: f64) -> Result<HeatTerms> {
    w.validate()?;
    c.validate()?;
    if !t_conductor.is_finite() || t_conductor <= -KELVIN {
        return Err(invalid("conductor temperature must be finite and above absolute zero"));
    }
    let dt = t_conductor - w.ambient_temperature;
    let d = c.diameter;

    let air = film(0.5 * (t_conductor + w.ambient_temperature), c.elevation);
    let reynolds = d * air.density * w.wind_speed / air.viscosity;
    let k_angle = wind_direction_factor(w.normalized_angle());
    let forced_low = k_angle * (1.01 + 1.35 * reynolds.powf(0.52)) * air.conductivity * dt;
    let forced_high = k_angle * 0.754 * reynolds.powf(0.6) * air.conductivity * dt;
    let natural = 3.645 * air.density.sqrt() * d.powf(0.75) * dt.abs().powf(1.25) * dt.signum();
    // The dominant mechanism applies whatever the sign of the temperature difference.
    let convection =
        if dt >= 0.0 { forced_low.max(forced_high).max(natural) } else { forced_low.min(forced_high).min(natural) };

    let tc = (t_conductor + 273.0) / 100.0;
    let ta = (w.ambient_temperature + 273.0) / 100.0;
    let radiation = 17.8 * d * c.emissivity * (tc.powi(4) - ta.powi(4));

    let solar = c.absorptivity * w.solar_irradiance * d;

    Ok(HeatTerms { convection, radiation, solar })
}

/// Steady-state ampacity in A at the conductor's maximum temperature.
/// Weather that heats the conductor past its limit with no current gives 0.
pub fn ampacity(w: &WeatherSample, c: &ConductorParams) -> Result<f64> {
    let t = c.max_temperature;
    let q = heat_terms(w, c, t)?;
    let r = c.resistance(t);
    if r <= 0.0 {
        return Err(invalid("resistance at maximum temperature is not positive"));
    }
    Ok(((q.convection + q.radiation - q.solar).max(0.0) / r).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineRatingSpec {
    pub conductor: ConductorParams,
    /// Line-to-line voltage in kV.
    pub voltage_kv: f64,
    /// Nominal (static) rating in MW.
    pub nominal_rating_mw: f64,
    /// Weather behind the nominal rating.
    pub nlr_weather: WeatherSample,
}

/// Tolerance between the nominal rating and the rating implied by the
/// conductor at nominal weather.
pub const NOMINAL_CONSISTENCY_TOL: f64 = 0.005;

/// Three-phase power in MW carried at `amps` and `voltage_kv` at unity power factor.
pub fn power_mw(amps: f64, voltage_kv: f64) -> f64 {
    3f64.sqrt() * voltage_kv * amps / 1000.0
}

impl LineRatingSpec {
    /// A spec whose nominal rating is exactly the conductor's rating at `nlr_weather`.
    pub fn calibrated(conductor: ConductorParams, voltage_kv: f64, nlr_weather: WeatherSample) -> Result<Self> {
        let amps = ampacity(&nlr_weather, &conductor)?;
        let spec = LineRatingSpec { conductor, voltage_kv, nominal_rating_mw: power_mw(amps, voltage_kv), nlr_weather };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.conductor.validate()?;
        self.nlr_weather.validate()?;
        if !(self.voltage_kv > 0.0) || !self.voltage_kv.is_finite() {
            return Err(invalid("voltage must be positive"));
        }
        if !(self.nominal_rating_mw > 0.0) || !self.nominal_rating_mw.is_finite() {
            return Err(invalid("nominal rating must be positive"));
        }
        let implied = power_mw(ampacity(&self.nlr_weather, &self.conductor)?, self.voltage_kv);
        let rel = (implied - self.nominal_rating_mw).abs() / self.nominal_rating_mw;
        if rel > NOMINAL_CONSISTENCY_TOL {
            return Err(invalid(format!(
                "nominal rating {:.2} MW disagrees with {:.2} MW implied by the conductor at nominal weather",
                self.nominal_rating_mw, implied
            )));
        }
        Ok(())
    }

    pub fn nominal_ampacity(&self) -> Result<f64> {
        ampacity(&self.nlr_weather, &self.conductor)
    }
}

/// Rating under `w` relative to the nominal rating; exactly 1 at nominal weather.
pub fn rating_pu(w: &WeatherSample, spec: &LineRatingSpec) -> Result<f64> {
    let base = spec.nominal_ampacity()?;
    if base <= 0.0 {
        return Err(Error::DegenerateSpec("zero ampacity at nominal weather".into()));
    }
    Ok(ampacity(w, &spec.conductor)? / base)
}

/// Which weather quantity a sensitivity sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeatherAxis {
    WindSpeed,
    WindAngle,
    AmbientTemperature,
    SolarIrradiance,
}

/// Ratings in p.u. when one quantity of the nominal weather is varied.
pub fn sensitivity_sweep(spec: &LineRatingSpec, axis: WeatherAxis, values: &[f64]) -> Result<Vec<(f64, f64)>> {
    values
        .iter()
        .map(|&v| {
            let mut w = spec.nlr_weather;
            match axis {
                WeatherAxis::WindSpeed => w.wind_speed = v,
                WeatherAxis::WindAngle => w.wind_angle = v,
                WeatherAxis::AmbientTemperature => w.ambient_temperature = v,
                WeatherAxis::SolarIrradiance => w.solar_irradiance = v,
            }
            Ok((v, rating_pu(&w, spec)?))
        })
        .collect()
}

/// Synthetic weather: a clamped Gaussian around a mean state. It stands in
/// for measured station data when fitting rating forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWeather {
    pub mean: WeatherSample,
    pub wind_speed_sd: f64,
    pub ambient_sd: f64,
    pub irradiance_sd: f64,
}

impl SyntheticWeather {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WeatherSample {
        let draw = |rng: &mut R, m: f64, sd: f64| -> f64 {
            if sd > 0.0 {
                Normal::new(m, sd).map(|n| n.sample(rng)).unwrap_or(m)
            } else {
                m
            }
        };
        WeatherSample {
            wind_speed: draw(rng, self.mean.wind_speed, self.wind_speed_sd).max(0.0),
            wind_angle: self.mean.wind_angle,
            ambient_temperature: draw(rng, self.mean.ambient_temperature, self.ambient_sd),
            solar_irradiance: draw(rng, self.mean.solar_irradiance, self.irradiance_sd).max(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn calm() -> WeatherSample {
        WeatherSample { wind_speed: 0.61, wind_angle: 90.0, ambient_temperature: 40.0, solar_irradiance: 0.0 }
    }

    #[test]
    fn no_radiation_without_temperature_difference() {
        let w = calm();
        let q = heat_terms(&w, &ConductorParams::drake(), w.ambient_temperature).unwrap();
        assert_eq!(q.radiation, 0.0);
        assert_eq!(q.convection, 0.0);
    }

    #[test]
    fn solar_gain_is_linear_in_irradiance() {
        let c = ConductorParams::drake();
        let mut w = calm();
        w.solar_irradiance = 450.0;
        let a = heat_terms(&w, &c, 80.0).unwrap().solar;
        w.solar_irradiance = 900.0;
        let b = heat_terms(&w, &c, 80.0).unwrap().solar;
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
    }

    #[test]
    fn solar_gain_ignores_conductor_temperature() {
        let c = ConductorParams::drake();
        let w = WeatherSample::nominal_default();
        let a = heat_terms(&w, &c, 50.0).unwrap().solar;
        let b = heat_terms(&w, &c, 120.0).unwrap().solar;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_radicand_gives_zero_ampacity() {
        let mut c = ConductorParams::drake();
        c.max_temperature = 60.0;
        let mut w = calm();
        let q = heat_terms(&w, &c, c.max_temperature).unwrap();
        // Irradiance that exactly cancels the cooling at the limit temperature.
        w.solar_irradiance = (q.convection + q.radiation) / (c.absorptivity * c.diameter);
        let amps = ampacity(&w, &c).unwrap();
        assert!(amps < 1e-5, "{amps}");
        w.solar_irradiance *= 2.0;
        assert_eq!(ampacity(&w, &c).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut w = calm();
        w.wind_speed = f64::NAN;
        assert!(heat_terms(&w, &ConductorParams::drake(), 80.0).is_err());
        assert!(heat_terms(&calm(), &ConductorParams::drake(), f64::INFINITY).is_err());
    }

    #[test]
    fn angle_normalization() {
        let mut w = calm();
        for (raw, folded) in [(0.0, 0.0), (90.0, 90.0), (135.0, 45.0), (-30.0, 30.0), (200.0, 20.0)] {
            w.wind_angle = raw;
            assert_relative_eq!(w.normalized_angle(), folded, epsilon = 1e-12);
        }
        assert_relative_eq!(wind_direction_factor(90.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(wind_direction_factor(0.0), 0.388, epsilon = 1e-12);
    }

    #[test]
    fn nominal_weather_rates_exactly_one() {
        let spec =
            LineRatingSpec::calibrated(ConductorParams::drake(), 230.0, WeatherSample::nominal_default()).unwrap();
        assert_eq!(rating_pu(&spec.nlr_weather, &spec).unwrap(), 1.0);
        let mut w = spec.nlr_weather;
        w.wind_speed += 1e-9;
        assert!((rating_pu(&w, &spec).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inconsistent_nominal_rating_is_rejected() {
        let mut spec =
            LineRatingSpec::calibrated(ConductorParams::drake(), 230.0, WeatherSample::nominal_default()).unwrap();
        spec.nominal_rating_mw *= 1.01;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn degenerate_spec_is_an_error() {
        let spec = LineRatingSpec {
            conductor: ConductorParams::drake(),
            voltage_kv: 230.0,
            nominal_rating_mw: 100.0,
            nlr_weather: WeatherSample {
                wind_speed: 0.0,
                wind_angle: 0.0,
                ambient_temperature: 99.0,
                solar_irradiance: 5000.0,
            },
        };
        assert!(matches!(rating_pu(&calm(), &spec), Err(Error::DegenerateSpec(_))));
    }

    #[test]
    fn synthetic_weather_respects_physical_ranges() {
        use rand::SeedableRng;
        let gen = SyntheticWeather {
            mean: WeatherSample::nominal_default(),
            wind_speed_sd: 3.0,
            ambient_sd: 5.0,
            irradiance_sd: 600.0,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let w = gen.sample(&mut rng);
            w.validate().unwrap();
        }
    }
}
