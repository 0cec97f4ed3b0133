//! CSV and JSON writers for solve and simulate results, and the controls reader.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Labels, TimeGrid};
use crate::moments::Iterate;
use crate::montecarlo::{EnsembleSummary, RNG_ALGORITHM};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, OutputError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), OutputError> {
    let mut w = create(path)?;
    let go = || -> io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()
    };
    go().map_err(io_err(path))
}

/// `iteration,node,t,<x>,<z>,<u>,trace_sigma`; controls are empty on the last node.
pub fn write_iterates_csv(
    path: &Path,
    labels: &Labels,
    history: &[Iterate],
    grid: &TimeGrid,
) -> Result<(), OutputError> {
    let mut header = vec!["iteration".to_string(), "node".into(), "t".into()];
    header.extend(labels.x.iter().cloned());
    header.extend(labels.z.iter().cloned());
    header.extend(labels.u.iter().cloned());
    header.push("trace_sigma".into());
    let m = labels.u.len();
    let rows = history.iter().enumerate().flat_map(|(k, it)| {
        (0..grid.nodes()).map(move |i| {
            let mut r = vec![k.to_string(), i.to_string(), fmt_f64(grid.time(i))];
            r.extend(it.mu[i].iter().map(|v| fmt_f64(*v)));
            r.extend(it.z[i].iter().map(|v| fmt_f64(*v)));
            match it.u.get(i) {
                Some(u) => r.extend(u.iter().map(|v| fmt_f64(*v))),
                None => r.extend(std::iter::repeat_n(String::new(), m)),
            }
            r.push(fmt_f64(it.trace(i)));
            r
        })
    });
    write_rows(path, &header, rows)
}

/// `node,t,<u>` for the `N−1` control nodes.
pub fn write_controls_csv(
    path: &Path,
    labels: &Labels,
    controls: &[DVector<f64>],
    grid: &TimeGrid,
) -> Result<(), OutputError> {
    let mut header = vec!["node".to_string(), "t".into()];
    header.extend(labels.u.iter().cloned());
    let rows = controls.iter().enumerate().map(|(i, u)| {
        let mut r = vec![i.to_string(), fmt_f64(grid.time(i))];
        r.extend(u.iter().map(|v| fmt_f64(*v)));
        r
    });
    write_rows(path, &header, rows)
}

/// Reads a controls file written by [`write_controls_csv`], checking it against the grid and
/// control dimension.
pub fn read_controls_csv(path: &Path, m: usize, grid: &TimeGrid) -> Result<Vec<DVector<f64>>, OutputError> {
    let fmt = |message: String| OutputError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let width = rdr.headers().map_err(|e| fmt(e.to_string()))?.len();
    if width != m + 2 {
        return Err(fmt(format!("expected {} columns (node, t and {m} controls), found {width}", m + 2)));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let vals: Result<Vec<f64>, _> = rec.iter().skip(2).map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| fmt(format!("row {}: {e}", line + 2)))?;
        out.push(DVector::from_vec(vals));
    }
    if out.len() != grid.stages() {
        return Err(fmt(format!(
            "expected {} control rows for a {}-node grid, found {}",
            grid.stages(),
            grid.nodes(),
            out.len()
        )));
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(io::Error::from)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

/// One JSON document per line.
pub fn write_json_lines<T: Serialize>(path: &Path, values: &[T]) -> Result<(), OutputError> {
    let mut w = create(path)?;
    let mut go = || -> io::Result<()> {
        for v in values {
            serde_json::to_writer(&mut w, v)?;
            writeln!(w)?;
        }
        w.flush()
    };
    go().map_err(io_err(path))
}

/// `node,t,mean_<x>…,var_<x>…,<z>…,first_collisions`.
pub fn write_ensemble_csv(
    path: &Path,
    labels: &Labels,
    summary: &EnsembleSummary,
    grid: &TimeGrid,
) -> Result<(), OutputError> {
    let mut header = vec!["node".to_string(), "t".into()];
    header.extend(labels.x.iter().map(|l| format!("mean_{l}")));
    header.extend(labels.x.iter().map(|l| format!("var_{l}")));
    header.extend(labels.z.iter().cloned());
    header.push("first_collisions".into());
    let n_x = labels.x.len();
    let rows = (0..grid.nodes()).map(|i| {
        let mut r = vec![i.to_string(), fmt_f64(grid.time(i))];
        match &summary.moments {
            Some(mo) => {
                r.extend(mo.mean[i].iter().map(|v| fmt_f64(*v)));
                r.extend((0..n_x).map(|a| fmt_f64(mo.cov[i][(a, a)])));
            }
            None => {
                // A single path: its state is the mean and the variance is undefined.
                match summary.kept.first() {
                    Some(p) => r.extend(p[i * n_x..(i + 1) * n_x].iter().map(|v| fmt_f64(*v))),
                    None => r.extend(std::iter::repeat_n(String::new(), n_x)),
                }
                r.extend(std::iter::repeat_n(String::new(), n_x));
            }
        }
        r.extend(summary.z[i].iter().map(|v| fmt_f64(*v)));
        r.push(summary.first_collision[i].to_string());
        r
    });
    write_rows(path, &header, rows)
}

/// `path,node,t,<x>` for the kept paths.
pub fn write_paths_csv(
    path: &Path,
    labels: &Labels,
    summary: &EnsembleSummary,
    grid: &TimeGrid,
) -> Result<(), OutputError> {
    let mut header = vec!["path".to_string(), "node".into(), "t".into()];
    header.extend(labels.x.iter().cloned());
    let n_x = labels.x.len();
    let rows = summary.kept.iter().enumerate().flat_map(|(k, p)| {
        (0..grid.nodes()).map(move |i| {
            let mut r = vec![k.to_string(), i.to_string(), fmt_f64(grid.time(i))];
            r.extend(p[i * n_x..(i + 1) * n_x].iter().map(|v| fmt_f64(*v)));
            r
        })
    });
    write_rows(path, &header, rows)
}

#[derive(Debug, Serialize)]
pub struct SimulationStats {
    pub paths: usize,
    pub seed: u64,
    pub rng: &'static str,
    pub collision_rate: f64,
    pub collisions: usize,
    pub final_mean: Vec<f64>,
    /// Row-major; omitted for a single path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_covariance: Option<Vec<f64>>,
    /// The whole trajectory, one state per node, when only one path was simulated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_path: Option<Vec<Vec<f64>>>,
}

impl SimulationStats {
    pub fn from_summary(s: &EnsembleSummary, n_x: usize) -> Self {
        let (final_mean, final_covariance) = match &s.moments {
            Some(m) => {
                let last = m.mean.len() - 1;
                let cov = &m.cov[last];
                (
                    m.mean[last].iter().copied().collect(),
                    Some((0..n_x).flat_map(|a| (0..n_x).map(move |b| cov[(a, b)])).collect()),
                )
            }
            None => {
                let last = s.kept.first().map(|p| p[p.len() - n_x..].to_vec());
                (last.unwrap_or_default(), None)
            }
        };
        Self {
            paths: s.paths,
            seed: s.seed,
            rng: RNG_ALGORITHM,
            collision_rate: s.collision_rate,
            collisions: s.collisions,
            single_path: s
                .kept
                .first()
                .filter(|_| s.paths == 1)
                .map(|p| p.chunks(n_x).map(<[f64]>::to_vec).collect()),
            final_mean,
            final_covariance,
        }
    }
}
