//! CSV and JSON wire formats for the library's data objects.
//!
//! CSV layouts:
//! - empirical measure: header `x1,..,xd`, one point per row
//! - trajectory bundle: `t,particle,x1,..,xd`
//! - marginal path: `t,slot,x1,..,xd` (slots are unordered per time)
//! - superposition curves: `curve,t,x1,..,xd`
//! - gamma table: `n,value,reference,relative_error,seconds,converged`
//! - convergence history: `start,iteration,value`
//!
//! Controls (ordinary and relaxed) travel as JSON.

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::dynamics::{PiecewiseConstantControl, TimeGrid, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::optimize::{GammaTable, ValueReport};
use crate::relaxed::{Atom, RelaxedControl};
use crate::superposition::{MarginalPath, SuperpositionMeasure};
use crate::transport::EmpiricalMeasure;

fn fmt(v: f64) -> String {
    // shortest round-trip decimal form; stable across runs
    format!("{v}")
}

// ---------------------------------------------------------------- measures

pub fn measure_to_csv(mu: &EmpiricalMeasure) -> String {
    let d = mu.dim();
    let mut out = String::new();
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..mu.len() {
        let row: Vec<String> = mu.point(i).iter().map(|&v| fmt(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn measure_from_csv(text: &str) -> Result<EmpiricalMeasure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let row: Vec<f64> = record
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    EmpiricalMeasure::from_rows(&rows)
}

pub fn write_measure_csv(mu: &EmpiricalMeasure, path: &Path) -> Result<()> {
    write_atomic(path, measure_to_csv(mu).as_bytes())
}

pub fn read_measure_csv(path: &Path) -> Result<EmpiricalMeasure> {
    measure_from_csv(&std::fs::read_to_string(path)?)
}

// -------------------------------------------------------------- trajectories

pub fn bundle_to_csv(bundle: &TrajectoryBundle) -> String {
    let d = bundle.dim();
    let mut out = String::from("t,particle");
    for j in 1..=d {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for k in 0..=bundle.grid().cells() {
        let t = bundle.grid().node(k);
        let state = bundle.state_at(k);
        for i in 0..bundle.particles() {
            out.push_str(&fmt(t));
            out.push_str(&format!(",{i}"));
            for j in 0..d {
                out.push(',');
                out.push_str(&fmt(state[(i, j)]));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_bundle_csv(bundle: &TrajectoryBundle, path: &Path) -> Result<()> {
    write_atomic(path, bundle_to_csv(bundle).as_bytes())
}

// ------------------------------------------------------------ marginal paths

pub fn marginal_path_to_csv(path: &MarginalPath) -> String {
    let d = path.dim();
    let mut out = String::from("t,slot");
    for j in 1..=d {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for s in 0..path.len() {
        let t = path.time(s);
        let mu = path.measure(s);
        for i in 0..mu.len() {
            out.push_str(&fmt(t));
            out.push_str(&format!(",{i}"));
            for j in 0..d {
                out.push(',');
                out.push_str(&fmt(mu.point(i)[j]));
            }
            out.push('\n');
        }
    }
    out
}

/// Parse a marginal path. Rows are grouped by their exact time value; the
/// slot column only separates records and carries no labelling meaning.
pub fn marginal_path_from_csv(text: &str) -> Result<MarginalPath> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let fields: Vec<&str> = record.iter().collect();
        if fields.len() < 3 {
            return Err(Error::Csv("marginal path rows need t, slot, x1..".into()));
        }
        let t: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| Error::Csv(format!("bad time {:?}: {e}", fields[0])))?;
        if !t.is_finite() {
            return Err(Error::Csv(format!("non-finite time {t}")));
        }
        let point: Vec<f64> = fields[2..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        rows.push((t, point));
    }
    if rows.is_empty() {
        return Err(Error::Csv("empty marginal path".into()));
    }
    let mut times: Vec<f64> = rows.iter().map(|(t, _)| *t).collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times.dedup();
    let horizon = *times.last().expect("nonempty");
    let mut slices: Vec<Vec<Vec<f64>>> = vec![Vec::new(); times.len()];
    for (t, point) in rows {
        let idx = times
            .binary_search_by(|probe| probe.partial_cmp(&t).expect("finite times"))
            .map_err(|_| Error::Csv("time lookup failed".into()))?;
        slices[idx].push(point);
    }
    let measures = slices
        .into_iter()
        .map(|rows| EmpiricalMeasure::from_rows(&rows))
        .collect::<Result<Vec<_>>>()?;
    MarginalPath::new(horizon, measures)
}

pub fn write_marginal_path_csv(path: &MarginalPath, file: &Path) -> Result<()> {
    write_atomic(file, marginal_path_to_csv(path).as_bytes())
}

pub fn read_marginal_path_csv(file: &Path) -> Result<MarginalPath> {
    marginal_path_from_csv(&std::fs::read_to_string(file)?)
}

// ------------------------------------------------------------------- curves

pub fn curves_to_csv(eta: &SuperpositionMeasure) -> String {
    let d = eta.dim();
    let mut out = String::from("curve,t");
    for j in 1..=d {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for i in 0..eta.particles() {
        let curve = eta.curve(i);
        for s in 0..eta.vertex_count() {
            out.push_str(&format!("{i},"));
            out.push_str(&fmt(eta.time(s)));
            for j in 0..d {
                out.push(',');
                out.push_str(&fmt(curve[(s, j)]));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_curves_csv(eta: &SuperpositionMeasure, path: &Path) -> Result<()> {
    write_atomic(path, curves_to_csv(eta).as_bytes())
}

/// Overlay plot of the reconstructed curves. One-dimensional states plot
/// (t, x); higher dimensions plot the first two coordinates.
pub fn curves_to_svg(eta: &SuperpositionMeasure) -> String {
    let one_d = eta.dim() == 1;
    let points_of = |i: usize| -> Vec<(f64, f64)> {
        let c = eta.curve(i);
        (0..eta.vertex_count())
            .map(|s| {
                if one_d {
                    (eta.time(s), c[(s, 0)])
                } else {
                    (c[(s, 0)], c[(s, 1)])
                }
            })
            .collect()
    };
    let all: Vec<(f64, f64)> = (0..eta.particles()).flat_map(points_of).collect();
    let polylines: Vec<Vec<(f64, f64)>> = (0..eta.particles()).map(points_of).collect();
    svg_polylines(
        &polylines,
        &all,
        if one_d { "t" } else { "x1" },
        if one_d { "x" } else { "x2" },
    )
}

pub fn write_curves_svg(eta: &SuperpositionMeasure, path: &Path) -> Result<()> {
    write_atomic(path, curves_to_svg(eta).as_bytes())
}

/// Value-vs-N plot of a convergence table, with the continuum reference as
/// a horizontal rule when the benchmark has one.
pub fn gamma_to_svg(table: &GammaTable) -> String {
    let mut series: Vec<Vec<(f64, f64)>> = Vec::new();
    let values: Vec<(f64, f64)> = table.rows.iter().map(|r| (r.n as f64, r.value)).collect();
    let references: Vec<(f64, f64)> = table
        .rows
        .iter()
        .map(|r| (r.n as f64, r.reference))
        .collect();
    series.push(values);
    series.push(references);
    if let Some(c) = table.continuum_reference {
        let n0 = table.rows.first().map(|r| r.n as f64).unwrap_or(0.0);
        let n1 = table.rows.last().map(|r| r.n as f64).unwrap_or(1.0);
        series.push(vec![(n0, c), (n1, c)]);
    }
    let all: Vec<(f64, f64)> = series.iter().flatten().copied().collect();
    svg_polylines(&series, &all, "N", "value")
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const SVG_MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn svg_polylines(
    series: &[Vec<(f64, f64)>],
    extent: &[(f64, f64)],
    x_label: &str,
    y_label: &str,
) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in extent {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if !y0.is_finite() || y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = (SVG_W - 2.0 * SVG_MARGIN) / (x1 - x0);
    let sy = (SVG_H - 2.0 * SVG_MARGIN) / (y1 - y0);
    let px = |x: f64| SVG_MARGIN + (x - x0) * sx;
    let py = |y: f64| SVG_H - SVG_MARGIN - (y - y0) * sy;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = SVG_MARGIN,
        b = SVG_H - SVG_MARGIN,
        r = SVG_W - SVG_MARGIN
    ));
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = SVG_MARGIN,
        t = SVG_MARGIN,
        b = SVG_H - SVG_MARGIN
    ));
    out.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"12\">{x_label}</text>\n",
        x = SVG_W - SVG_MARGIN,
        y = SVG_H - SVG_MARGIN / 3.0
    ));
    out.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"12\">{y_label}</text>\n",
        x = SVG_MARGIN / 4.0,
        y = SVG_MARGIN
    ));
    for (idx, line) in series.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let color = PALETTE[idx % PALETTE.len()];
        let pts: Vec<String> = line
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }
    out.push_str("</svg>\n");
    out
}

// ----------------------------------------------------------------- controls

#[derive(Serialize, Deserialize)]
struct ControlFile {
    horizon: f64,
    cells: usize,
    particles: usize,
    control_dim: usize,
    /// values[cell][particle][component]
    values: Vec<Vec<Vec<f64>>>,
}

pub fn control_to_json(control: &PiecewiseConstantControl) -> String {
    let (cells, n, m) = control.values().dim();
    let values = (0..cells)
        .map(|k| {
            (0..n)
                .map(|i| (0..m).map(|j| control.values()[(k, i, j)]).collect())
                .collect()
        })
        .collect();
    let file = ControlFile {
        horizon: control.grid().horizon(),
        cells,
        particles: n,
        control_dim: m,
        values,
    };
    serde_json::to_string_pretty(&file).expect("control serializes")
}

pub fn control_from_json(text: &str) -> Result<PiecewiseConstantControl> {
    let file: ControlFile =
        serde_json::from_str(text).map_err(|e| Error::InvalidControl(e.to_string()))?;
    let grid = TimeGrid::new(file.horizon, file.cells)?;
    let mut values = Array3::zeros((file.cells, file.particles, file.control_dim));
    if file.values.len() != file.cells {
        return Err(Error::InvalidControl(
            "cell count does not match values".into(),
        ));
    }
    for (k, cell) in file.values.iter().enumerate() {
        if cell.len() != file.particles {
            return Err(Error::InvalidControl(
                "particle count does not match values".into(),
            ));
        }
        for (i, row) in cell.iter().enumerate() {
            if row.len() != file.control_dim {
                return Err(Error::InvalidControl(
                    "control dimension does not match values".into(),
                ));
            }
            for (j, &v) in row.iter().enumerate() {
                values[(k, i, j)] = v;
            }
        }
    }
    PiecewiseConstantControl::new(grid, values)
}

#[derive(Serialize, Deserialize)]
struct AtomFile {
    u: Vec<f64>,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct RelaxedFile {
    horizon: f64,
    cells: usize,
    particles: usize,
    /// atoms[cell][particle] is the list of weighted atoms of that entry
    atoms: Vec<Vec<Vec<AtomFile>>>,
}

pub fn relaxed_to_json(sigma: &RelaxedControl) -> String {
    let atoms = (0..sigma.grid().cells())
        .map(|k| {
            (0..sigma.particles())
                .map(|i| {
                    sigma
                        .entry(k, i)
                        .iter()
                        .map(|a| AtomFile {
                            u: a.point.clone(),
                            w: a.weight,
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let file = RelaxedFile {
        horizon: sigma.grid().horizon(),
        cells: sigma.grid().cells(),
        particles: sigma.particles(),
        atoms,
    };
    serde_json::to_string_pretty(&file).expect("relaxed control serializes")
}

pub fn relaxed_from_json(text: &str) -> Result<RelaxedControl> {
    let file: RelaxedFile =
        serde_json::from_str(text).map_err(|e| Error::InvalidControl(e.to_string()))?;
    let grid = TimeGrid::new(file.horizon, file.cells)?;
    let entries = file
        .atoms
        .into_iter()
        .map(|cell| {
            cell.into_iter()
                .map(|mixture| {
                    mixture
                        .into_iter()
                        .map(|a| Atom {
                            point: a.u,
                            weight: a.w,
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    RelaxedControl::new(grid, entries)
}

// ------------------------------------------------------------------- tables

/// Timing lives in [`GammaTable`] rows but stays out of the CSV: artifact
/// bytes must be identical across identical runs.
pub fn gamma_to_csv(table: &GammaTable) -> String {
    let mut out = String::from("n,value,reference,relative_error,converged\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            fmt(r.value),
            fmt(r.reference),
            fmt(r.relative_error),
            r.converged
        ));
    }
    out
}

pub fn history_to_csv(report: &ValueReport) -> String {
    let mut out = String::from("start,iteration,value\n");
    for (s, h) in report.histories.iter().enumerate() {
        for (i, v) in h.values.iter().enumerate() {
            out.push_str(&format!("{s},{i},{}\n", fmt(*v)));
        }
    }
    out
}

// -------------------------------------------------------------------- files

/// Write via a temporary file in the same directory plus rename, so readers
/// never observe partial artifacts.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_csv_round_trip() {
        let mu = EmpiricalMeasure::from_rows(&[vec![0.5, -1.25], vec![3.0, 0.125]]).unwrap();
        let text = measure_to_csv(&mu);
        let back = measure_from_csv(&text).unwrap();
        assert_eq!(mu.points(), back.points());
    }

    #[test]
    fn marginal_path_round_trip() {
        let slices = vec![
            EmpiricalMeasure::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            EmpiricalMeasure::from_rows(&[vec![0.5], vec![1.5]]).unwrap(),
            EmpiricalMeasure::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
        ];
        let path = MarginalPath::new(2.0, slices).unwrap();
        let text = marginal_path_to_csv(&path);
        let back = marginal_path_from_csv(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.horizon(), 2.0);
        assert_eq!(back.measure(1).point(1)[0], 1.5);
    }

    #[test]
    fn control_json_round_trip() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let control = PiecewiseConstantControl::constant(grid, 3, &[0.25, -0.5]);
        let text = control_to_json(&control);
        let back = control_from_json(&text).unwrap();
        assert_eq!(control, back);
    }

    #[test]
    fn relaxed_json_round_trip() {
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let sigma = RelaxedControl::uniform_mixture(
            grid,
            2,
            vec![
                Atom {
                    point: vec![1.0],
                    weight: 0.25,
                },
                Atom {
                    point: vec![-1.0],
                    weight: 0.75,
                },
            ],
        )
        .unwrap();
        let back = relaxed_from_json(&relaxed_to_json(&sigma)).unwrap();
        assert_eq!(sigma, back);
    }

    #[test]
    fn malformed_relaxed_json_is_rejected() {
        assert!(relaxed_from_json("{").is_err());
        // weights not summing to one
        let bad = r#"{"horizon":1.0,"cells":1,"particles":1,
                      "atoms":[[[{"u":[0.0],"w":0.5}]]]}"#;
        assert!(relaxed_from_json(bad).is_err());
    }
}
