//! Readers and writers for the plain-text inputs: conductor and weather
//! records (CSV or JSON, columns named as the struct fields) and rating
//! forecasts (JSON).

use std::path::Path;

use crate::error::{Error, Result};
use crate::thermal::{ampacity, power_mw, rating_pu, ConductorParams, LineRatingSpec, WeatherSample};
use crate::uncertainty::RatingForecast;

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn schema(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Schema(format!("{}: {what}", path.display()))
}

/// Weather rows from CSV with header
/// `wind_speed,wind_angle,ambient_temperature,solar_irradiance`, or from a
/// JSON array of objects with those fields. Errors name the 1-based data
/// row.
pub fn read_weather(path: impl AsRef<Path>) -> Result<Vec<WeatherSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<WeatherSample> = if is_json(path) {
        serde_json::from_str(&text).map_err(|e| schema(path, e))?
    } else {
        parse_weather_csv(&text).map_err(|e| match e {
            Error::Schema(m) => schema(path, m),
            other => other,
        })?
    };
    for (i, w) in rows.iter().enumerate() {
        w.validate().map_err(|e| schema(path, format!("row {}: {e}", i + 1)))?;
    }
    Ok(rows)
}

pub fn parse_weather_csv(text: &str) -> Result<Vec<WeatherSample>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<WeatherSample>().enumerate() {
        out.push(rec.map_err(|e| Error::Schema(format!("row {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// A conductor from JSON (one object) or CSV (header plus one row).
pub fn read_conductor(path: impl AsRef<Path>) -> Result<ConductorParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let c: ConductorParams = if is_json(path) {
        serde_json::from_str(&text).map_err(|e| schema(path, e))?
    } else {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut it = rdr.deserialize::<ConductorParams>();
        let first = it.next().ok_or_else(|| schema(path, "no conductor row"))?;
        let c = first.map_err(|e| schema(path, format!("row 1: {e}")))?;
        if it.next().is_some() {
            return Err(schema(path, "expected exactly one conductor row"));
        }
        c
    };
    c.validate()?;
    Ok(c)
}

pub fn read_weather_sample(path: impl AsRef<Path>) -> Result<WeatherSample> {
    let rows = read_weather(path.as_ref())?;
    match rows.as_slice() {
        [w] => Ok(*w),
        _ => Err(schema(path.as_ref(), "expected exactly one weather row")),
    }
}

pub fn read_forecast(path: impl AsRef<Path>) -> Result<RatingForecast> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let f: RatingForecast = serde_json::from_str(&text).map_err(|e| schema(path, e))?;
    f.validate()?;
    Ok(f)
}

/// Ampacity in A, rating in p.u. of the nominal rating, and rating in MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingRow {
    pub ampacity_a: f64,
    pub rating_pu: f64,
    pub rating_mw: f64,
}

pub fn rate_rows(weather: &[WeatherSample], spec: &LineRatingSpec) -> Result<Vec<RatingRow>> {
    weather
        .iter()
        .map(|w| {
            let pu = rating_pu(w, spec)?;
            let a = ampacity(w, &spec.conductor)?;
            Ok(RatingRow { ampacity_a: a, rating_pu: pu, rating_mw: pu * spec.nominal_rating_mw })
        })
        .collect()
}

pub fn write_ratings_csv<W: std::io::Write>(rows: &[RatingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "ampacity_a", "rating_pu", "rating_mw"])?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            format!("{:.6}", r.ampacity_a),
            format!("{:.9}", r.rating_pu),
            format!("{:.6}", r.rating_mw),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Nominal rating in MW implied by a conductor at nominal weather.
pub fn nominal_mw(c: &ConductorParams, voltage_kv: f64, nlr: &WeatherSample) -> Result<f64> {
    Ok(power_mw(ampacity(nlr, c)?, voltage_kv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weather_csv_roundtrip_and_row_numbers() {
        let ok = "wind_speed,wind_angle,ambient_temperature,solar_irradiance\n0.5,22.5,30,900\n2, 90, 20, 0\n";
        let rows = parse_weather_csv(ok).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].wind_angle, 90.0);
        let bad = "wind_speed,wind_angle,ambient_temperature,solar_irradiance\n0.5,22.5,30,900\nx,1,2,3\n";
        let err = parse_weather_csv(bad).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(parse_weather_csv("").unwrap().is_empty());
    }

    #[test]
    fn nominal_row_rates_one() {
        let spec =
            LineRatingSpec::calibrated(ConductorParams::drake(), 230.0, WeatherSample::nominal_default()).unwrap();
        let rows = rate_rows(&[WeatherSample::nominal_default()], &spec).unwrap();
        assert_eq!(rows[0].rating_pu, 1.0);
        assert!((rows[0].rating_mw - spec.nominal_rating_mw).abs() < 1e-9);
    }
}
