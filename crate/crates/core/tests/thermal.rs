use dlr_core::thermal::{
    ampacity, heat_terms, rating_pu, sensitivity_sweep, ConductorParams, LineRatingSpec, WeatherAxis, WeatherSample,
};
use proptest::prelude::*;

/// Drake at 100 °C, 0.61 m/s perpendicular wind, 40 °C air, 1000 W/m² sun.
fn worked_example() -> WeatherSample {
    WeatherSample { wind_speed: 0.61, wind_angle: 90.0, ambient_temperature: 40.0, solar_irradiance: 1000.0 }
}

/// Hand evaluation of the same heat balance, term by term, with the film
/// properties written out at T_film = 70 °C.
fn hand_ampacity() -> f64 {
    let d: f64 = 0.02814;
    let t_film: f64 = 70.0;
    let mu_f = 1.458e-6 * (t_film + 273.0).powf(1.5) / (t_film + 383.4);
    let rho_f = 1.293 / (1.0 + 0.00367 * t_film);
    let k_f = 2.424e-2 + 7.477e-5 * t_film - 4.407e-9 * t_film * t_film;
    let re = d * rho_f * 0.61 / mu_f;
    // Perpendicular wind: K_angle = 1.194 - cos 90° + 0.194 cos 180° + 0.368 sin 180° = 1.0.
    let qc1 = (1.01 + 1.35 * re.powf(0.52)) * k_f * 60.0;
    let qc2 = 0.754 * re.powf(0.6) * k_f * 60.0;
    let qc = qc1.max(qc2);
    let qr = 17.8 * d * 0.8 * ((373.0_f64 / 100.0).powi(4) - (313.0_f64 / 100.0).powi(4));
    let qs = 0.8 * 1000.0 * d;
    let r100 = 7.283e-5 + (8.688e-5 - 7.283e-5) / 50.0 * 75.0;
    ((qc + qr - qs) / r100).sqrt()
}

#[test]
fn drake_worked_example_matches_hand_evaluation() {
    let c = ConductorParams::drake();
    let i = ampacity(&worked_example(), &c).unwrap();
    let hand = hand_ampacity();
    assert!((i - hand).abs() / hand < 0.01, "{i} vs {hand}");
    // The published value for this case is about 1025 A.
    assert!((i - 1025.0).abs() / 1025.0 < 0.01, "{i}");
}

#[test]
fn heat_balance_closes_at_ampacity() {
    let c = ConductorParams::drake();
    for w in [worked_example(), WeatherSample::nominal_default()] {
        let i = ampacity(&w, &c).unwrap();
        let q = heat_terms(&w, &c, c.max_temperature).unwrap();
        let joule = i * i * c.resistance(c.max_temperature);
        let residual = (q.convection + q.radiation - q.solar - joule).abs();
        assert!(residual <= 1e-9 * (q.convection + q.radiation), "{residual}");
    }
}

#[test]
fn wind_raises_rating_past_twice_nominal() {
    let spec = LineRatingSpec::calibrated(ConductorParams::drake(), 230.0, WeatherSample::nominal_default()).unwrap();
    let winds: Vec<f64> = (0..=19).map(|i| 0.5 + 0.5 * i as f64).collect();
    let s = sensitivity_sweep(&spec, WeatherAxis::WindSpeed, &winds).unwrap();
    assert!(s.windows(2).all(|w| w[1].1 > w[0].1));
    assert!(s.last().unwrap().1 > 2.0, "{:?}", s.last());
    let temps: Vec<f64> = (0..=8).map(|i| -10.0 + 5.0 * i as f64).collect();
    let s = sensitivity_sweep(&spec, WeatherAxis::AmbientTemperature, &temps).unwrap();
    assert!(s.windows(2).all(|w| w[1].1 < w[0].1));
    let sun: Vec<f64> = (0..=10).map(|i| 100.0 * i as f64).collect();
    let s = sensitivity_sweep(&spec, WeatherAxis::SolarIrradiance, &sun).unwrap();
    assert!(s.windows(2).all(|w| w[1].1 < w[0].1));
}

#[test]
fn invalid_weather_is_rejected() {
    let c = ConductorParams::drake();
    let mut w = worked_example();
    w.wind_speed = -1.0;
    assert!(ampacity(&w, &c).is_err());
    let mut w = worked_example();
    w.solar_irradiance = f64::NAN;
    assert!(ampacity(&w, &c).is_err());
}

proptest! {
    #[test]
    fn rating_moves_with_weather(
        v in 0.1..15.0f64,
        dv in 0.01..2.0f64,
        ta in -20.0..45.0f64,
        dta in 0.1..5.0f64,
        angle in 0.0..90.0f64,
    ) {
        let spec = LineRatingSpec::calibrated(ConductorParams::drake(), 230.0, WeatherSample::nominal_default()).unwrap();
        let w = WeatherSample { wind_speed: v, wind_angle: angle, ambient_temperature: ta, solar_irradiance: 500.0 };
        let base = rating_pu(&w, &spec).unwrap();
        let windier = rating_pu(&WeatherSample { wind_speed: v + dv, ..w }, &spec).unwrap();
        let hotter = rating_pu(&WeatherSample { ambient_temperature: ta + dta, ..w }, &spec).unwrap();
        prop_assert!(windier >= base);
        prop_assert!(hotter < base);
    }
}
