//! Ground-motion records: parsing, unit conversion and resampling.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity expressed in mm/s².
pub const G_MM_PER_S2: f64 = 9806.65;

/// The loop rate of the controller, 2048 Hz.
pub const CONTROLLER_DT: f64 = 1.0 / 2048.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "g")]
    G,
    #[serde(rename = "m/s2")]
    MetersPerSecond2,
    #[serde(rename = "mm/s2")]
    MillimetersPerSecond2,
}

impl Units {
    /// Factor converting a sample in these units to mm/s².
    pub fn to_mm_per_s2(self) -> f64 {
        match self {
            Units::G => G_MM_PER_S2,
            Units::MetersPerSecond2 => 1000.0,
            Units::MillimetersPerSecond2 => 1.0,
        }
    }

    pub fn parse(s: &str) -> Option<Units> {
        match s.trim().to_ascii_lowercase().as_str() {
            "g" => Some(Units::G),
            "m/s2" | "m/s^2" | "m/s²" => Some(Units::MetersPerSecond2),
            "mm/s2" | "mm/s^2" | "mm/s²" => Some(Units::MillimetersPerSecond2),
            _ => None,
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Units::G => "g",
            Units::MetersPerSecond2 => "m/s2",
            Units::MillimetersPerSecond2 => "mm/s2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    At2,
}

impl RecordFormat {
    /// Guess from the file extension; anything but `.at2` is read as CSV.
    pub fn from_path(path: &Path) -> RecordFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("at2") => RecordFormat::At2,
            _ => RecordFormat::Csv,
        }
    }
}

/// Uniformly sampled ground acceleration, stored in mm/s².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundMotion {
    pub name: String,
    pub dt: f64,
    pub accel: Vec<f64>,
    pub source_units: Units,
    pub scale_factor: f64,
}

impl GroundMotion {
    pub fn from_mm_per_s2(name: impl Into<String>, dt: f64, accel: Vec<f64>) -> Result<Self> {
        let gm = GroundMotion {
            name: name.into(),
            dt,
            accel,
            source_units: Units::MillimetersPerSecond2,
            scale_factor: 1.0,
        };
        gm.validate()?;
        Ok(gm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Parse {
                line: 0,
                reason: format!("time step must be positive, got {}", self.dt),
            });
        }
        if self.accel.len() < 2 {
            return Err(Error::Parse {
                line: 0,
                reason: format!("record needs at least 2 samples, got {}", self.accel.len()),
            });
        }
        if let Some(i) = self.accel.iter().position(|a| !a.is_finite()) {
            return Err(Error::NonFinite {
                what: "ground acceleration",
                step: i,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.accel.len() - 1) as f64 * self.dt
    }

    /// Multiplies every sample by `factor`, tracking the cumulative scale.
    pub fn scaled(&self, factor: f64) -> GroundMotion {
        GroundMotion {
            accel: self.accel.iter().map(|a| a * factor).collect(),
            scale_factor: self.scale_factor * factor,
            ..self.clone()
        }
    }

    /// Keeps the first `floor(duration / dt) + 1` samples.
    pub fn truncated(&self, duration: f64) -> Result<GroundMotion> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Resample(format!("duration must be positive, got {duration}")));
        }
        let n = tick_count(duration, self.dt);
        if n > self.accel.len() {
            return Err(Error::Resample(format!(
                "requested {duration} s but record `{}` lasts {} s",
                self.name,
                self.duration()
            )));
        }
        Ok(GroundMotion {
            accel: self.accel[..n].to_vec(),
            ..self.clone()
        })
    }

    pub fn rms(&self) -> f64 {
        (self.accel.iter().map(|a| a * a).sum::<f64>() / self.accel.len() as f64).sqrt()
    }
}

/// Number of samples covering `[0, duration]` on a grid of `dt`:
/// `floor(duration / dt) + 1`, tolerant of round-off in the quotient.
pub fn tick_count(duration: f64, dt: f64) -> usize {
    let q = duration / dt;
    let nearest = q.round();
    let whole = if (q - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        q.floor()
    };
    whole as usize + 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseOptions {
    pub format: RecordFormat,
    /// Units of the samples. Required for CSV; for AT2 the header is
    /// consulted when absent.
    pub units: Option<Units>,
    /// Sample interval for single-column CSV.
    pub dt: Option<f64>,
    pub name: String,
}

pub fn read_record(path: &Path, options: &ParseOptions) -> Result<GroundMotion> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_record(&text, options)
}

pub fn parse_record(text: &str, options: &ParseOptions) -> Result<GroundMotion> {
    let (dt, raw, header_units) = match options.format {
        RecordFormat::Csv => {
            let (dt, raw) = parse_csv(text, options.dt)?;
            (dt, raw, None)
        }
        RecordFormat::At2 => parse_at2(text)?,
    };
    let units = options.units.or(header_units).ok_or(Error::MissingUnits)?;
    let factor = units.to_mm_per_s2();
    let gm = GroundMotion {
        name: options.name.clone(),
        dt,
        accel: raw.into_iter().map(|a| a * factor).collect(),
        source_units: units,
        scale_factor: 1.0,
    };
    gm.validate()?;
    Ok(gm)
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    token.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        reason: format!("cannot parse `{}` as a number", token.trim()),
    })
}

fn parse_csv(text: &str, dt_hint: Option<f64>) -> Result<(f64, Vec<f64>)> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut columns = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        // A header row is tolerated once, before any data.
        if values.is_empty() && columns.is_none() && fields[0].trim().parse::<f64>().is_err() {
            columns = Some(fields.len());
            continue;
        }
        match fields.len() {
            1 => values.push(parse_number(fields[0], lineno)?),
            2 => {
                times.push(parse_number(fields[0], lineno)?);
                values.push(parse_number(fields[1], lineno)?);
            }
            n => {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("expected 1 or 2 columns, found {n}"),
                })
            }
        }
    }
    if !times.is_empty() && times.len() != values.len() {
        return Err(Error::Parse {
            line: 0,
            reason: "mixed single-column and `t,a` rows".into(),
        });
    }
    let dt = if times.len() >= 2 {
        let dt = times[1] - times[0];
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.abs().max(1e-12) {
                return Err(Error::Parse {
                    line: i + 2,
                    reason: "time column is not uniformly spaced".into(),
                });
            }
        }
        dt
    } else {
        dt_hint.ok_or_else(|| Error::Parse {
            line: 0,
            reason: "single-column CSV needs an explicit time step".into(),
        })?
    };
    Ok((dt, values))
}

/// Reads the value following `key` on a header line such as
/// `NPTS=  3995, DT=   .0200 SEC`.
fn header_field(line: &str, key: &str) -> Option<String> {
    let upper = line.to_ascii_uppercase();
    let start = upper.find(key)? + key.len();
    let rest = line[start..].trim_start().strip_prefix('=')?.trim_start();
    let end = rest.find(|c: char| c == ',' || c.is_whitespace()).unwrap_or(rest.len());
    Some(rest[..end].to_string())
}

fn parse_at2(text: &str) -> Result<(f64, Vec<f64>, Option<Units>)> {
    let lines: Vec<&str> = text.lines().collect();
    let (header_idx, header) = lines
        .iter()
        .enumerate()
        .find(|(_, l)| l.to_ascii_uppercase().contains("NPTS"))
        .ok_or_else(|| Error::Parse {
            line: 0,
            reason: "no NPTS/DT header line".into(),
        })?;
    let lineno = header_idx + 1;
    let (npts, dt) = match (header_field(header, "NPTS"), header_field(header, "DT")) {
        (Some(n), Some(d)) => (n, d),
        _ => {
            // Older layout: "3995   .0200   NPTS, DT"
            let mut it = header.split_whitespace();
            match (it.next(), it.next()) {
                (Some(n), Some(d)) => (n.to_string(), d.to_string()),
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        reason: "cannot read NPTS and DT".into(),
                    })
                }
            }
        }
    };
    let npts = npts.parse::<usize>().map_err(|_| Error::Parse {
        line: lineno,
        reason: format!("NPTS `{npts}` is not an integer"),
    })?;
    let dt = parse_number(&dt, lineno)?;

    let units = lines[..header_idx].iter().find_map(|l| {
        let u = l.to_ascii_uppercase();
        if u.contains("UNITS OF G") || u.contains("UNITS: G") {
            Some(Units::G)
        } else {
            None
        }
    });

    let mut values = Vec::with_capacity(npts);
    for (offset, line) in lines[header_idx + 1..].iter().enumerate() {
        for token in line.split_whitespace() {
            values.push(parse_number(token, lineno + offset + 1)?);
        }
    }
    if values.len() != npts {
        return Err(Error::SampleCount {
            declared: npts,
            found: values.len(),
        });
    }
    Ok((dt, values, units))
}

/// Linear interpolation onto a finer grid, preserving both endpoints of the
/// covered span. The output length is `floor(duration / target_dt) + 1`.
pub fn resample(gm: &GroundMotion, target_dt: f64) -> Result<GroundMotion> {
    if !(target_dt.is_finite() && target_dt > 0.0) {
        return Err(Error::Resample(format!("target dt must be positive, got {target_dt}")));
    }
    if target_dt > gm.dt * (1.0 + 1e-12) {
        return Err(Error::Resample(format!(
            "target dt {target_dt} is coarser than the source dt {}",
            gm.dt
        )));
    }
    let n = tick_count(gm.duration(), target_dt);
    let ratio = target_dt / gm.dt;
    let last = gm.accel.len() - 1;
    let accel = (0..n)
        .map(|j| {
            let p = j as f64 * ratio;
            let i = (p.floor() as usize).min(last);
            if i >= last {
                return gm.accel[last];
            }
            let w = p - i as f64;
            if w == 0.0 {
                gm.accel[i]
            } else {
                gm.accel[i] * (1.0 - w) + gm.accel[i + 1] * w
            }
        })
        .collect();
    Ok(GroundMotion {
        dt: target_dt,
        accel,
        ..gm.clone()
    })
}

/// The bundled 1940 El Centro NS record (AT2 layout, units of g, dt 0.02 s).
pub const EL_CENTRO_AT2: &str = include_str!("../data/elcentro_ns.at2");

pub fn el_centro() -> GroundMotion {
    parse_record(
        EL_CENTRO_AT2,
        &ParseOptions {
            format: RecordFormat::At2,
            units: Some(Units::G),
            dt: None,
            name: "el-centro-ns".into(),
        },
    )
    .expect("bundled record parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn csv_opts(units: Option<Units>, dt: Option<f64>) -> ParseOptions {
        ParseOptions {
            format: RecordFormat::Csv,
            units,
            dt,
            name: "t".into(),
        }
    }

    fn at2_opts() -> ParseOptions {
        ParseOptions {
            format: RecordFormat::At2,
            units: Some(Units::G),
            dt: None,
            name: "t".into(),
        }
    }

    #[test]
    fn csv_single_column_in_m_per_s2() {
        let gm = parse_record("0.0\n1.0\n0.0", &csv_opts(Some(Units::MetersPerSecond2), Some(0.02))).unwrap();
        assert_eq!(gm.dt, 0.02);
        assert_eq!(gm.accel, vec![0.0, 1000.0, 0.0]);
    }

    #[test]
    fn csv_time_value_pairs() {
        let gm = parse_record("t,a\n0.0,0.1\n0.01,0.2\n0.02,0.3\n", &csv_opts(Some(Units::G), None)).unwrap();
        assert_relative_eq!(gm.dt, 0.01, max_relative = 1e-12);
        assert_relative_eq!(gm.accel[2], 0.3 * G_MM_PER_S2, max_relative = 1e-12);
    }

    #[test]
    fn csv_without_units_is_rejected() {
        let err = parse_record("0\n1\n", &csv_opts(None, Some(0.02))).unwrap_err();
        assert!(matches!(err, Error::MissingUnits));
    }

    #[test]
    fn csv_bad_number_reports_line() {
        let err = parse_record("0\n1\nabc\n", &csv_opts(Some(Units::G), Some(0.02))).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn at2_header_and_body() {
        let text = "TITLE\nEVENT\nACCELERATION TIME SERIES IN UNITS OF G\nNPTS= 4, DT= .02 SEC\n 0.1 0.2\n 0.3 0.4\n";
        let gm = parse_record(text, &at2_opts()).unwrap();
        assert_eq!(gm.dt, 0.02);
        assert_eq!(gm.len(), 4);
        assert_relative_eq!(gm.accel[3], 0.4 * G_MM_PER_S2);
    }

    #[test]
    fn at2_units_come_from_header_when_unhinted() {
        let text = "A\nB\nACCELERATION TIME SERIES IN UNITS OF G\nNPTS= 2, DT= .02 SEC\n 1 2\n";
        let mut opts = at2_opts();
        opts.units = None;
        let gm = parse_record(text, &opts).unwrap();
        assert_eq!(gm.source_units, Units::G);
    }

    #[test]
    fn at2_legacy_header() {
        let text = "A\nB\nC\n    3    .0100    NPTS, DT\n1 2 3\n";
        let gm = parse_record(text, &at2_opts()).unwrap();
        assert_eq!(gm.dt, 0.01);
        assert_eq!(gm.len(), 3);
    }

    #[test]
    fn at2_count_mismatch() {
        let text = "A\nB\nC\nNPTS= 5, DT= .02 SEC\n 0.1 0.2 0.3 0.4\n";
        match parse_record(text, &at2_opts()).unwrap_err() {
            Error::SampleCount { declared, found } => {
                assert_eq!((declared, found), (5, 4));
            }
            other => panic!("unexpected {other}"),
        }
        let msg = parse_record(text, &at2_opts()).unwrap_err().to_string();
        assert!(msg.contains('5') && msg.contains('4'));
    }

    #[test]
    fn bundled_record() {
        let gm = el_centro();
        assert_eq!(gm.len(), 3995);
        assert_eq!(gm.dt, 0.02);
        let pga = gm.accel.iter().fold(0.0f64, |m, a| m.max(a.abs())) / G_MM_PER_S2;
        assert!((pga - 0.3129).abs() < 1e-3, "pga {pga}");
    }

    #[test]
    fn resample_identity() {
        let gm = el_centro();
        let same = resample(&gm, gm.dt).unwrap();
        assert_eq!(same.accel, gm.accel);
    }

    #[test]
    fn resample_two_samples() {
        let gm = GroundMotion::from_mm_per_s2("r", 1.0, vec![0.0, 1.0]).unwrap();
        let r = resample(&gm, 0.25).unwrap();
        assert_eq!(r.accel, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn resample_rejects_coarser_grid() {
        let gm = GroundMotion::from_mm_per_s2("r", 0.01, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(resample(&gm, 0.02).is_err());
    }

    #[test]
    fn resampled_rms_close_to_source() {
        let gm = el_centro();
        let r = resample(&gm, CONTROLLER_DT).unwrap();
        assert_relative_eq!(r.accel[0], gm.accel[0]);
        let rel = (r.rms() - gm.rms()).abs() / gm.rms();
        assert!(rel < 0.01, "rms drift {rel}");
    }

    #[test]
    fn truncation_follows_floor_rule() {
        let r = resample(&el_centro(), CONTROLLER_DT).unwrap();
        assert_eq!(r.truncated(0.1).unwrap().len(), 205);
        assert_eq!(r.truncated(10.0).unwrap().len(), 20481);
        assert!(r.truncated(1000.0).is_err());
    }

    proptest! {
        // Interpolation reproduces a straight line exactly (to round-off).
        #[test]
        fn resample_is_exact_on_lines(slope in -100.0f64..100.0, icpt in -10.0f64..10.0, factor in 1usize..16) {
            let dt = 0.02;
            let src: Vec<f64> = (0..50).map(|i| icpt + slope * i as f64 * dt).collect();
            let gm = GroundMotion::from_mm_per_s2("l", dt, src).unwrap();
            let r = resample(&gm, dt / factor as f64).unwrap();
            prop_assert_eq!(r.len(), 49 * factor + 1);
            for (j, a) in r.accel.iter().enumerate() {
                let t = j as f64 * r.dt;
                prop_assert!((a - (icpt + slope * t)).abs() < 1e-9 * (1.0 + slope.abs()));
            }
        }
    }
}
