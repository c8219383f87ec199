//! Files written by runs: per-tick history CSV, JSON reports, SVG overlays
//! and the compensator coefficient trace.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::history::{CoefficientSample, RunHistory, StepRecord};

pub const HISTORY_HEADER: [&str; 7] = [
    "tick",
    "t",
    "gm_accel",
    "command_x",
    "compensated_x",
    "measured_x",
    "force",
];

/// History as CSV text. Floats use the shortest representation that reads
/// back to the same value.
pub fn history_to_csv(history: &RunHistory) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTORY_HEADER).expect("in-memory write");
    for r in &history.records {
        w.serialize((
            r.tick,
            r.t,
            r.gm_accel,
            r.command_x,
            r.compensated_x,
            r.measured_x,
            r.force,
        ))
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn write_history_csv(path: &Path, history: &RunHistory) -> Result<()> {
    write_atomic(path, history_to_csv(history).as_bytes())
}

pub fn read_history_csv(path: &Path) -> Result<RunHistory> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HISTORY_HEADER) {
        return Err(Error::Parse {
            line: 1,
            reason: format!(
                "{}: expected header {}, found {}",
                path.display(),
                HISTORY_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let (tick, t, gm_accel, command_x, compensated_x, measured_x, force): (usize, f64, f64, f64, f64, f64, f64) =
            row.map_err(csv_err)?;
        records.push(StepRecord {
            tick,
            t,
            gm_accel,
            command_x,
            compensated_x,
            measured_x,
            force,
        });
    }
    let dt = if records.len() > 1 {
        records[1].t - records[0].t
    } else {
        0.0
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(RunHistory::new(id, dt, records))
}

pub fn coefficient_trace_csv(trace: &[CoefficientSample]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tick", "a0", "a1", "a2", "held"])
        .expect("in-memory write");
    for s in trace {
        w.serialize((s.tick, s.a0, s.a1, s.a2, s.held))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Pretty JSON with struct fields in declaration order.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: "serializing report".into(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value)?.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

/// Writes through a temporary sibling so a failed run never leaves a
/// truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

const SVG_W: f64 = 900.0;
const SVG_H: f64 = 320.0;
const MARGIN: f64 = 40.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
/// Points per polyline; longer series are decimated by striding.
const MAX_POINTS: usize = 4000;

/// Line plot of several displacement series against time.
pub fn overlay_svg(title: &str, dt: f64, series: &[(&str, &[f64])]) -> String {
    let n = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    let peak = series
        .iter()
        .flat_map(|(_, s)| s.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let duration = (n.max(2) - 1) as f64 * dt;
    let px = |i: usize| MARGIN + (SVG_W - 2.0 * MARGIN) * (i as f64 * dt) / duration;
    let py = |v: f64| SVG_H / 2.0 - (SVG_H / 2.0 - MARGIN) * v / peak;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<line x1="{MARGIN}" y1="{y}" x2="{x2}" y2="{y}" stroke="#999" stroke-width="0.5"/>"##,
        y = SVG_H / 2.0,
        x2 = SVG_W - MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{y}" font-family="sans-serif" font-size="10">±{peak:.3} mm, {duration:.2} s</text>"#,
        y = SVG_H - 10.0
    );
    for (k, (label, s)) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let stride = s.len().div_ceil(MAX_POINTS).max(1);
        let points: Vec<String> = s
            .iter()
            .enumerate()
            .step_by(stride)
            .map(|(i, v)| format!("{:.2},{:.2}", px(i), py(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" fill="{colour}">{}</text>"#,
            escape(label),
            x = SVG_W - 220.0,
            y = 20.0 + 14.0 * k as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn history(values: &[f64]) -> RunHistory {
        let records = values
            .iter()
            .enumerate()
            .map(|(i, &v)| StepRecord {
                tick: i,
                t: i as f64 / 2048.0,
                gm_accel: -v * 3.7,
                command_x: v,
                compensated_x: v * 1.01,
                measured_x: v / 3.0,
                force: v * 622.537_7,
            })
            .collect();
        RunHistory::new("h", 1.0 / 2048.0, records)
    }

    #[test]
    fn header_is_fixed() {
        let csv = history_to_csv(&history(&[1.0]));
        assert!(csv.starts_with("tick,t,gm_accel,command_x,compensated_x,measured_x,force\n"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.csv");
        let h = history(&[0.1, -1e-300, 1.0 / 3.0, 12_345.678_9, 0.0]);
        write_history_csv(&p, &h).unwrap();
        let back = read_history_csv(&p).unwrap();
        assert_eq!(back.records, h.records);
        assert!(!dir.path().join("run.csv.partial").exists());
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_history_csv(&p).is_err());
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let a = [0.0, 1.0, -1.0];
        let b = [0.0, 0.5, -0.5];
        let svg = overlay_svg("a<b", 0.1, &[("ref", &a), ("test", &b)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn json_keeps_field_order() {
        #[derive(Serialize)]
        struct R {
            zeta: u8,
            alpha: u8,
        }
        let s = to_json_string(&R { zeta: 1, alpha: 2 }).unwrap();
        assert!(s.find("zeta").unwrap() < s.find("alpha").unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn any_finite_values_round_trip(v in prop::collection::vec(-1e12f64..1e12, 1..50)) {
            let h = history(&v);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.csv");
            write_history_csv(&p, &h).unwrap();
            prop_assert_eq!(read_history_csv(&p).unwrap().records, h.records);
        }
    }
}
