//! Plain-text artifacts: field and table CSVs, JSON sidecars and PPM heatmaps.
//!
//! Files are written to a sibling temporary and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::critical::PhaseRow;
use crate::error::{Error, Result};
use crate::grid::{GridDomain, NodeKind, ScalarField};
use crate::micro::{DegreeAssignment, GammaReport, MicroProblem};

pub const FIELD_HEADER: &str = "ix,iy,x,y,value";
pub const DEGREE_HEADER: &str = "j,ix,iy,d";
pub const GAMMA_HEADER: &str =
    "epsilon,holes,micro_energy,limit_energy,gap,relative_gap,vorticity_error,degree_bound,moves";

/// Writes `contents` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:e}")
    }
}

/// Long-format CSV, one row per grid node in row-major order.
/// Exterior nodes hold `nan`.
pub fn field_to_csv(field: &ScalarField) -> String {
    let domain = field.domain();
    let n = domain.n();
    let mut out = String::with_capacity(n * n * 32);
    out.push_str(FIELD_HEADER);
    out.push('\n');
    for iy in 0..n {
        for ix in 0..n {
            let node = domain.index(ix, iy);
            let (x, y) = domain.coords(node);
            let v = match domain.kind(node) {
                NodeKind::Exterior => f64::NAN,
                _ => field.at(node),
            };
            let _ = writeln!(out, "{ix},{iy},{x},{y},{}", fmt_value(v));
        }
    }
    out
}

pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    write_atomic(path, field_to_csv(field).as_bytes())
}

/// Parses a field CSV written by [`field_to_csv`] onto `domain`.
pub fn field_from_csv(domain: &Arc<GridDomain>, text: &str) -> Result<ScalarField> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().trim();
    if header != FIELD_HEADER {
        return Err(Error::Parse(format!("expected header `{FIELD_HEADER}`, found `{header}`")));
    }
    let n = domain.n();
    let mut values = vec![f64::NAN; domain.len()];
    let mut seen = vec![false; domain.len()];
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Parse(format!("line {}: expected 5 columns", lineno + 2)));
        }
        let parse_idx = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
        };
        let (ix, iy) = (parse_idx(parts[0])?, parse_idx(parts[1])?);
        if ix >= n || iy >= n {
            return Err(Error::Parse(format!("line {}: node ({ix}, {iy}) outside an {n}×{n} grid", lineno + 2)));
        }
        let v: f64 = parts[4]
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
        let node = domain.index(ix, iy);
        values[node] = v;
        seen[node] = true;
    }
    for &node in domain.interior() {
        if !seen[node] {
            let (ix, iy) = (node % n, node / n);
            return Err(Error::Parse(format!("missing value for interior node ({ix}, {iy})")));
        }
    }
    for (node, kind) in domain.kinds().iter().enumerate() {
        match kind {
            NodeKind::Exterior => values[node] = f64::NAN,
            NodeKind::Boundary if !values[node].is_finite() => values[node] = 0.0,
            _ => {}
        }
    }
    ScalarField::new(domain.clone(), values)
}

pub fn read_field_csv(domain: &Arc<GridDomain>, path: &Path) -> Result<ScalarField> {
    field_from_csv(domain, &fs::read_to_string(path)?)
}

pub fn degrees_to_csv(problem: &MicroProblem, degrees: &DegreeAssignment) -> String {
    let mut out = String::from(DEGREE_HEADER);
    out.push('\n');
    for (j, (hole, d)) in problem.holes().iter().zip(&degrees.d).enumerate() {
        let _ = writeln!(out, "{j},{},{},{d}", hole.cell.0, hole.cell.1);
    }
    out
}

/// Phase table; the area columns are padded to the deepest level of any row.
pub fn phase_to_csv(rows: &[PhaseRow]) -> String {
    let depth = rows.iter().map(|r| r.omega_areas.len()).max().unwrap_or(0).max(1);
    let mut out = String::from("lambda,J,scenario");
    for k in 1..=depth {
        let _ = write!(out, ",area_omega_{k}");
    }
    for k in 1..=depth {
        let _ = write!(out, ",area_band_{k}");
    }
    out.push_str(",max_abs_f,valid\n");
    for row in rows {
        let scenario = row.scenario.map_or("none", |s| s.as_str());
        let _ = write!(out, "{},{},{scenario}", row.lambda, row.levels);
        for k in 0..depth {
            let _ = write!(out, ",{}", row.omega_areas.get(k).copied().unwrap_or(0.0));
        }
        for k in 0..depth {
            let _ = write!(out, ",{}", row.band_areas.get(k).copied().unwrap_or(0.0));
        }
        let _ = writeln!(out, ",{},{}", row.max_abs_f, row.valid);
    }
    out
}

pub fn gamma_to_csv(report: &GammaReport) -> String {
    let mut out = String::from(GAMMA_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epsilon,
            r.holes,
            r.micro_energy,
            r.limit_energy,
            r.gap,
            r.relative_gap,
            r.vorticity_error,
            r.degree_bound,
            r.moves
        );
    }
    out
}

/// Blue–white–red ramp with 256 entries.
pub fn color_ramp() -> [[u8; 3]; 256] {
    let mut ramp = [[0u8; 3]; 256];
    for (i, c) in ramp.iter_mut().enumerate() {
        let t = i as f64 / 255.0;
        let (r, g, b) = if t < 0.5 {
            let s = t / 0.5;
            (s, s, 1.0)
        } else {
            let s = (1.0 - t) / 0.5;
            (1.0, s, s)
        };
        *c = [(255.0 * r).round() as u8, (255.0 * g).round() as u8, (255.0 * b).round() as u8];
    }
    ramp
}

/// Plain PPM (P3) heatmap of the interior values; other nodes are black.
/// The image's top row is the grid's largest `y`.
pub fn heatmap_ppm(field: &ScalarField) -> String {
    let domain = field.domain();
    let n = domain.n();
    let ramp = color_ramp();
    let (lo, hi) = field
        .interior_values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P3\n{n} {n}\n255\n");
    for iy in (0..n).rev() {
        let mut line = Vec::with_capacity(n);
        for ix in 0..n {
            let node = domain.index(ix, iy);
            let rgb = if domain.is_interior(node) {
                let t = ((field.at(node) - lo) / span).clamp(0.0, 1.0);
                ramp[(t * 255.0).round() as usize]
            } else {
                [0, 0, 0]
            };
            line.push(format!("{} {} {}", rgb[0], rgb[1], rgb[2]));
        }
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_heatmap(path: &Path, field: &ScalarField) -> Result<()> {
    write_atomic(path, heatmap_ppm(field).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainShape;

    #[test]
    fn field_csv_round_trip() {
        let d = GridDomain::build(&DomainShape::UnitDisk, 17).unwrap();
        let f = ScalarField::from_fn(&d, |x, y| x * x - 0.3 * y);
        let text = field_to_csv(&f);
        assert!(text.starts_with("ix,iy,x,y,value\n"));
        assert!(text.contains(",nan\n"));
        assert_eq!(text.lines().count(), 17 * 17 + 1);
        let back = field_from_csv(&d, &text).unwrap();
        for &node in d.interior() {
            assert_eq!(back.at(node), f.at(node));
        }
    }

    #[test]
    fn field_csv_rejects_bad_input() {
        let d = GridDomain::build(&DomainShape::UnitSquare, 9).unwrap();
        assert!(field_from_csv(&d, "a,b\n").is_err());
        assert!(field_from_csv(&d, "ix,iy,x,y,value\n0,0,0,0,1\n").is_err());
    }

    #[test]
    fn ramp_and_heatmap_shape() {
        let ramp = color_ramp();
        assert_eq!(ramp[0], [0, 0, 255]);
        assert_eq!(ramp[255], [255, 0, 0]);
        let d = GridDomain::build(&DomainShape::UnitSquare, 9).unwrap();
        let f = ScalarField::from_fn(&d, |x, _| x);
        let ppm = heatmap_ppm(&f);
        let mut lines = ppm.lines();
        assert_eq!(lines.next(), Some("P3"));
        assert_eq!(lines.next(), Some("9 9"));
        assert_eq!(lines.next(), Some("255"));
        assert_eq!(lines.count(), 9);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_json(&path, &serde_json::json!({"a": 1})).unwrap();
        write_json(&path, &serde_json::json!({"a": 2})).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"a\": 2"));
        assert!(!dir.path().join("x.json.tmp").exists());
    }
}
