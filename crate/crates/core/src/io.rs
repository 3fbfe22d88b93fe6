//! File formats: curves, vector fields, metric configs, paths and CSV tables.
//!
//! Curve files look like `{"ambient": {"kind": "euclidean", "dim": 2},
//! "nodes": [[x, y], ...]}` with nodes in increasing θ. Path files hold
//! `times`, `curves` and optionally `velocities`, plus the diagnostics as CSV
//! text.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geodesic::{GeodesicPath, RawPath};
use crate::geometry::Immersion;
use crate::metrics::MetricSpec;
use crate::{Ambient, Vec3};

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Number of stored coordinates per node.
fn coords(amb: &Ambient) -> usize {
    match amb {
        Ambient::Euclidean { dim } => *dim,
        Ambient::Sphere { .. } => 3,
    }
}

/// Parses an array of points, naming the first bad entry.
fn parse_points(value: &Value, dims: usize, what: &str) -> Result<Vec<Vec3>> {
    let arr = value
        .as_array()
        .ok_or_else(|| Error::Parse(format!("{what} must be an array of points")))?;
    arr.iter()
        .enumerate()
        .map(|(j, p)| {
            let comps = p
                .as_array()
                .ok_or_else(|| Error::Parse(format!("{what}[{j}] is not an array")))?;
            if comps.len() != dims {
                return Err(Error::Parse(format!(
                    "{what}[{j}] has {} coordinates, expected {dims}",
                    comps.len()
                )));
            }
            let mut v = Vec3::zeros();
            for (d, c) in comps.iter().enumerate() {
                v[d] = c
                    .as_f64()
                    .ok_or_else(|| Error::Parse(format!("{what}[{j}][{d}] is not a number: {c}")))?;
            }
            Ok(v)
        })
        .collect()
}

fn points_json(points: &[Vec3], dims: usize) -> Vec<Vec<f64>> {
    points.iter().map(|v| v.iter().take(dims).copied().collect()).collect()
}

fn parse_ambient(value: &Value) -> Result<Ambient> {
    let amb: Ambient = serde_json::from_value(value.clone()).map_err(|e| Error::Parse(format!("ambient: {e}")))?;
    amb.validate()?;
    Ok(amb)
}

pub fn curve_from_json(value: &Value) -> Result<Immersion> {
    let amb = parse_ambient(value.get("ambient").ok_or_else(|| Error::Parse("missing \"ambient\"".into()))?)?;
    let nodes = parse_points(
        value.get("nodes").ok_or_else(|| Error::Parse("missing \"nodes\"".into()))?,
        coords(&amb),
        "nodes",
    )?;
    Immersion::new(amb, nodes)
}

pub fn curve_to_json(f: &Immersion) -> Value {
    serde_json::json!({
        "ambient": f.ambient(),
        "nodes": points_json(f.nodes(), coords(f.ambient())),
    })
}

pub fn read_curve(path: &Path) -> Result<Immersion> {
    curve_from_json(&read_json(path)?)
}

pub fn write_curve(path: &Path, f: &Immersion) -> Result<()> {
    write_json(path, &curve_to_json(f))
}

/// Vector field along `f` from `{"field": [[...], ...]}`, projected to TN.
pub fn read_field(path: &Path, f: &Immersion) -> Result<Vec<Vec3>> {
    let value = read_json(path)?;
    let field = value.get("field").unwrap_or(&value);
    let v = parse_points(field, coords(f.ambient()), "field")?;
    if v.len() != f.len() {
        return Err(Error::Shape {
            expected: f.len(),
            got: v.len(),
        });
    }
    Ok(f.project_field(&v))
}

pub fn write_field(path: &Path, f: &Immersion, field: &[Vec3]) -> Result<()> {
    write_json(path, &serde_json::json!({ "field": points_json(field, coords(f.ambient())) }))
}

/// Metric from `{"metric": {...}}` or a bare spec.
pub fn metric_from_json(value: &Value) -> Result<MetricSpec> {
    let spec = value.get("metric").unwrap_or(value);
    let spec: MetricSpec = serde_json::from_value(spec.clone()).map_err(|e| Error::Parse(format!("metric: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

pub fn read_metric(path: &Path) -> Result<MetricSpec> {
    metric_from_json(&read_json(path)?)
}

/// SHA-256 of the given bytes as lowercase hex.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// CSV text with a leading `# config_hash=...` comment, then a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, hash: &str) -> String {
        let mut out = format!("# config_hash={hash}\n{}\n", self.columns.join(","));
        for r in &self.rows {
            out += &r.join(",");
            out.push('\n');
        }
        out
    }
}

/// Shortest round-trip formatting for CSV cells; `None` prints empty.
pub fn cell(x: impl Into<Option<f64>>) -> String {
    x.into().map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Per-time diagnostics of a shot.
pub fn diagnostics_table(path: &GeodesicPath) -> CsvTable {
    let mut t = CsvTable::new(&[
        "time",
        "energy",
        "linear_x",
        "linear_y",
        "linear_z",
        "angular_x",
        "angular_y",
        "angular_z",
        "reparam_max",
    ]);
    for d in &path.diagnostics {
        let lin = d.linear_momentum;
        let ang = d.angular_momentum;
        let rep = d.reparam_momentum.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        t.push(vec![
            cell(d.time),
            cell(d.energy),
            cell(lin.map(|v| v.x)),
            cell(lin.map(|v| v.y)),
            cell(lin.map(|v| v.z)),
            cell(ang.map(|v| v.x)),
            cell(ang.map(|v| v.y)),
            cell(ang.map(|v| v.z)),
            cell(rep),
        ]);
    }
    t
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PathFile {
    ambient: Ambient,
    times: Vec<f64>,
    curves: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    velocities: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
    #[serde(default)]
    diagnostics_csv: String,
}

pub fn write_path(path: &Path, geo: &GeodesicPath, hash: &str) -> Result<()> {
    let amb = *geo.states[0].f.ambient();
    let dims = coords(&amb);
    let file = PathFile {
        ambient: amb,
        times: geo.times.clone(),
        curves: geo.states.iter().map(|s| points_json(s.f.nodes(), dims)).collect(),
        velocities: Some(geo.states.iter().map(|s| points_json(&s.velocity, dims)).collect()),
        warning: geo.warning.clone(),
        diagnostics_csv: diagnostics_table(geo).render(hash),
    };
    write_json(path, &file)
}

pub fn write_raw_path(path: &Path, raw: &RawPath) -> Result<()> {
    let amb = *raw.curves[0].ambient();
    let dims = coords(&amb);
    let file = PathFile {
        ambient: amb,
        times: raw.times.clone(),
        curves: raw.curves.iter().map(|c| points_json(c.nodes(), dims)).collect(),
        velocities: raw
            .velocities
            .as_ref()
            .map(|v| v.iter().map(|x| points_json(x, dims)).collect()),
        warning: None,
        diagnostics_csv: String::new(),
    };
    write_json(path, &file)
}

pub fn read_path(path: &Path) -> Result<RawPath> {
    let value = read_json(path)?;
    let amb = parse_ambient(value.get("ambient").ok_or_else(|| Error::Parse("missing \"ambient\"".into()))?)?;
    let dims = coords(&amb);
    let times: Vec<f64> = serde_json::from_value(value.get("times").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Parse(format!("times: {e}")))?;
    let list = |key: &str| -> Result<Option<Vec<Vec<Vec3>>>> {
        let Some(v) = value.get(key) else { return Ok(None) };
        let arr = v
            .as_array()
            .ok_or_else(|| Error::Parse(format!("{key} must be an array")))?;
        arr.iter()
            .enumerate()
            .map(|(k, c)| parse_points(c, dims, &format!("{key}[{k}]")))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    };
    let curves = list("curves")?
        .ok_or_else(|| Error::Parse("missing \"curves\"".into()))?
        .into_iter()
        .map(|nodes| Immersion::new(amb, nodes))
        .collect::<Result<Vec<_>>>()?;
    Ok(RawPath {
        times,
        curves,
        velocities: list("velocities")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::shoot_momentum;

    #[test]
    fn curve_round_trip_and_bad_node() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let f = Immersion::circle(12, 1.5).unwrap();
        write_curve(&p, &f).unwrap();
        assert_eq!(read_curve(&p).unwrap(), f);
        std::fs::write(&p, r#"{"ambient": {"kind": "euclidean", "dim": 2}, "nodes": [[1, 0], [0, "x"], [-1, 0], [0, -1]]}"#).unwrap();
        let err = read_curve(&p).unwrap_err().to_string();
        assert!(err.contains("nodes[1][1]"), "{err}");
    }

    #[test]
    fn path_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        let f = Immersion::circle(16, 1.0).unwrap();
        let u: Vec<Vec3> = f.nodes().iter().map(|x| x * 0.2).collect();
        let shot = shoot_momentum(&MetricSpec::h0(), &f, &u, 0.1, 4).unwrap();
        write_path(&p, &shot, "abc").unwrap();
        let raw = read_path(&p).unwrap();
        assert_eq!(raw.times, shot.times);
        assert_eq!(raw.curves[4], shot.last().f);
        assert_eq!(raw.velocities.unwrap()[4], shot.last().velocity);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("# config_hash=abc"));
    }

    #[test]
    fn metric_configs() {
        let v: Value = serde_json::from_str(r#"{"metric": {"kind": "scale_invariant_sobolev", "p": 1}}"#).unwrap();
        assert_eq!(metric_from_json(&v).unwrap(), MetricSpec::ScaleInvariantSobolev { p: 1, m: 1 });
        let bad: Value = serde_json::from_str(r#"{"kind": "curvature_weighted", "A": -1}"#).unwrap();
        assert!(matches!(metric_from_json(&bad), Err(Error::Spec(_))));
        assert_eq!(config_hash(b"").len(), 64);
    }
}
