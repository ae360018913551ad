//! On-disk formats: trajectories, fitted predictors, metrics tables and run
//! summaries. Every writer has a matching reader so outputs can be checked
//! by parsing them back.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ergolip_core::harness::{Fitted, RunMetrics};
use ergolip_core::lipschitz::spectral::Layer;
use ergolip_core::lipschitz::{LipschitzFn, SpectralMlp};
use ergolip_core::processes::{SourceDescriptor, Trajectory};
use ergolip_core::Matrix;

use crate::LabError;

type Result<T, E = LabError> = std::result::Result<T, E>;

pub const PREDICTOR_MAGIC: &str = "ergolip-predictor";
pub const PREDICTOR_VERSION: u32 = 1;

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> LabError {
    LabError::Format { path: path.to_path_buf(), line, message: message.into() }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| LabError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

pub fn trajectory_file_name(seed: u64) -> String {
    format!("traj_{seed}.csv")
}

/// `t,x_1,…,x_n` with one row per observation, 17 significant digits.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::from("t")];
    header.extend((1..=traj.dim()).map(|i| format!("x_{i}")));
    w.write_record(&header).expect("writing to memory");
    for (t, x) in traj.iter().enumerate() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(x.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&row).expect("writing to memory");
    }
    write_file(path, &w.into_inner().expect("writing to memory"))
}

pub fn read_trajectory(path: &Path, seed: u64) -> Result<Trajectory> {
    let text = read_file(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| format_err(path, 1, e.to_string()))?.clone();
    let dim = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("t".to_string()).chain((1..=dim).map(|i| format!("x_{i}"))).collect();
    if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(format_err(path, 1, "header must be t,x_1,...,x_n"));
    }
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(path, line, e.to_string()))?;
        if rec.get(0).and_then(|t| t.parse::<usize>().ok()) != Some(i + 1) {
            return Err(format_err(path, line, format!("expected t = {}", i + 1)));
        }
        for field in rec.iter().skip(1) {
            values.push(field.parse::<f64>().map_err(|_| format_err(path, line, format!("bad value `{field}`")))?);
        }
    }
    Trajectory::from_values(dim, values, seed, SourceDescriptor::External)
        .map_err(|e| format_err(path, 1, e.to_string()))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

/// Versioned flat text: a header with kind, budget, input dimension `m_eff`
/// and output dimension, then either anchors (`x… v…` per line) or, per
/// layer, a shape line followed by the weight rows and the bias row.
pub fn predictor_to_string(f: &Fitted) -> String {
    let mut s = format!("{PREDICTOR_MAGIC} {PREDICTOR_VERSION}\n");
    match f {
        Fitted::Envelope(e) => {
            let out = e.values().len() / e.len().max(1);
            s += &format!("kind envelope\nL {:e}\nm_eff {}\nout {}\nanchors {}\n", e.budget(), e.dim(), out, e.len());
            for i in 0..e.len() {
                s += &format!("{} {}\n", join(e.point(i)), join(e.value(i)));
            }
        }
        Fitted::Mlp(m) => {
            let out = m.layers().last().map_or(0, |l| l.weights.rows());
            s += &format!(
                "kind mlp\nL {:e}\nm_eff {}\nout {}\nlayers {}\n",
                m.budget(),
                m.input_dim(),
                out,
                m.layers().len()
            );
            for l in m.layers() {
                s += &format!("layer {} {} {:e}\n", l.weights.rows(), l.weights.cols(), l.cap);
                for r in 0..l.weights.rows() {
                    s += &join(l.weights.row(r));
                    s.push('\n');
                }
                s += &join(&l.bias);
                s.push('\n');
            }
        }
    }
    s
}

pub fn write_predictor(path: &Path, f: &Fitted) -> Result<()> {
    write_file(path, predictor_to_string(f).as_bytes())
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(format_err(self.path, self.line + 1, "unexpected end of file")),
        }
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let l = self.next()?;
        let value = l.strip_prefix(key).and_then(|r| r.strip_prefix(' '));
        value
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| format_err(self.path, self.line, format!("expected `{key} <value>`")))
    }

    fn numbers(&mut self, count: usize) -> Result<Vec<f64>> {
        let l = self.next()?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format_err(self.path, self.line, "bad number"))?;
        if v.len() != count {
            return Err(format_err(self.path, self.line, format!("expected {count} numbers, found {}", v.len())));
        }
        Ok(v)
    }
}

pub fn parse_predictor(path: &Path, text: &str) -> Result<Fitted> {
    let mut lines = Lines { path, inner: text.lines().enumerate(), line: 0 };
    let version: u32 = lines.keyed(PREDICTOR_MAGIC)?;
    if version != PREDICTOR_VERSION {
        return Err(format_err(path, 1, format!("unsupported version {version}")));
    }
    let kind: String = lines.keyed("kind")?;
    let budget: f64 = lines.keyed("L")?;
    let dim: usize = lines.keyed("m_eff")?;
    let out: usize = lines.keyed("out")?;
    match kind.as_str() {
        "envelope" => {
            let n: usize = lines.keyed("anchors")?;
            let (mut points, mut values) = (Vec::with_capacity(n * dim), Vec::with_capacity(n * out));
            for _ in 0..n {
                let row = lines.numbers(dim + out)?;
                points.extend_from_slice(&row[..dim]);
                values.extend_from_slice(&row[dim..]);
            }
            let f = LipschitzFn::from_anchors(dim, out, budget, points, values)
                .map_err(|e| format_err(path, lines.line, e.to_string()))?;
            Ok(Fitted::Envelope(f))
        }
        "mlp" => {
            let k: usize = lines.keyed("layers")?;
            let mut layers = Vec::with_capacity(k);
            for _ in 0..k {
                let shape = lines.next()?;
                let parts: Vec<&str> = shape.split_whitespace().collect();
                let (rows, cols, cap) = match parts.as_slice() {
                    ["layer", r, c, cap] => match (r.parse::<usize>(), c.parse::<usize>(), cap.parse::<f64>()) {
                        (Ok(r), Ok(c), Ok(cap)) => (r, c, cap),
                        _ => return Err(format_err(path, lines.line, "bad layer shape")),
                    },
                    _ => return Err(format_err(path, lines.line, "expected `layer <rows> <cols> <cap>`")),
                };
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    data.extend(lines.numbers(cols)?);
                }
                let bias = lines.numbers(rows)?;
                layers.push(Layer { weights: Matrix::from_vec(rows, cols, data), bias, cap });
            }
            let m =
                SpectralMlp::from_layers(layers, budget).map_err(|e| format_err(path, lines.line, e.to_string()))?;
            if m.input_dim() != dim {
                return Err(format_err(path, 3, "m_eff does not match the first layer"));
            }
            Ok(Fitted::Mlp(m))
        }
        other => Err(format_err(path, 2, format!("unknown predictor kind `{other}`"))),
    }
}

pub fn read_predictor(path: &Path) -> Result<Fitted> {
    parse_predictor(path, &read_file(path)?)
}

pub const METRICS_HEADER: [&str; 5] = ["checkpoint", "avg_loss", "gap", "L_budget", "retrained"];

pub fn metrics_file_name(strategy: &str, seed: u64) -> String {
    format!("metrics_{strategy}_{seed}.csv")
}

/// One row per checkpoint. `gap` is empty when `L*` is unknown and
/// `L_budget` is empty for strategies without a budget.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub checkpoint: usize,
    pub avg_loss: f64,
    pub gap: Option<f64>,
    pub budget: Option<f64>,
    pub retrained: bool,
}

pub fn metrics_rows(metrics: &RunMetrics, optimal: Option<f64>) -> Vec<MetricsRow> {
    metrics
        .checkpoints
        .iter()
        .map(|c| MetricsRow {
            checkpoint: c.t,
            avg_loss: c.avg_loss,
            gap: optimal.map(|o| c.avg_loss - o),
            budget: c.budget,
            retrained: c.retrained,
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).expect("writing to memory");
    for r in rows {
        w.write_record([
            r.checkpoint.to_string(),
            format!("{:e}", r.avg_loss),
            opt(r.gap),
            opt(r.budget),
            u8::from(r.retrained).to_string(),
        ])
        .expect("writing to memory");
    }
    write_file(path, &w.into_inner().expect("writing to memory"))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = read_file(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| format_err(path, 1, e.to_string()))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(format_err(path, 1, format!("header must be {}", METRICS_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(path, line, e.to_string()))?;
        let num = |k: usize| -> Result<Option<f64>> {
            match rec.get(k).unwrap_or("") {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| format_err(path, line, format!("bad {}", METRICS_HEADER[k]))),
            }
        };
        rows.push(MetricsRow {
            checkpoint: rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format_err(path, line, "bad checkpoint"))?,
            avg_loss: num(1)?.ok_or_else(|| format_err(path, line, "missing avg_loss"))?,
            gap: num(2)?,
            budget: num(3)?,
            retrained: match rec.get(4) {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(format_err(path, line, "retrained must be 0 or 1")),
            },
        });
    }
    Ok(rows)
}

pub fn steps_file_name(strategy: &str, seed: u64) -> String {
    format!("steps_{strategy}_{seed}.csv")
}

/// Per-round losses, `t,loss`.
pub fn write_steps(path: &Path, metrics: &RunMetrics) -> Result<()> {
    let mut buf = Vec::with_capacity(metrics.losses.len() * 24);
    writeln!(buf, "t,loss").expect("writing to memory");
    for (i, l) in metrics.losses.iter().enumerate() {
        writeln!(buf, "{},{l:e}", metrics.memory + 1 + i).expect("writing to memory");
    }
    write_file(path, &buf)
}

pub fn read_steps(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = read_file(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, i + 2, e.to_string()))?;
        match (rec.get(0).and_then(|s| s.parse().ok()), rec.get(1).and_then(|s| s.parse().ok())) {
            (Some(t), Some(l)) => out.push((t, l)),
            _ => return Err(format_err(path, i + 2, "expected t,loss")),
        }
    }
    Ok(out)
}

pub const SUMMARY_HEADER: [&str; 5] = ["strategy", "seeds", "median_final_avg_loss", "median_final_gap", "L_star"];
pub const CURVE_HEADER: [&str; 3] = ["strategy", "checkpoint", "median_avg_loss"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub seeds: usize,
    pub median_final_avg_loss: f64,
    pub median_final_gap: Option<f64>,
    pub optimal: Option<f64>,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("writing to memory");
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.seeds.to_string(),
            format!("{:e}", r.median_final_avg_loss),
            opt(r.median_final_gap),
            opt(r.optimal),
        ])
        .expect("writing to memory");
    }
    write_file(path, &w.into_inner().expect("writing to memory"))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = read_file(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format_err(path, line, e.to_string()))?;
        let num = |k: usize| -> Result<Option<f64>> {
            match rec.get(k).unwrap_or("") {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| format_err(path, line, format!("bad {}", SUMMARY_HEADER[k]))),
            }
        };
        rows.push(SummaryRow {
            strategy: rec.get(0).unwrap_or("").to_string(),
            seeds: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| format_err(path, line, "bad seeds"))?,
            median_final_avg_loss: num(2)?.ok_or_else(|| format_err(path, line, "missing average"))?,
            median_final_gap: num(3)?,
            optimal: num(4)?,
        });
    }
    Ok(rows)
}

/// Median curve table, the data behind the chart.
pub fn write_curve(path: &Path, curves: &[(String, Vec<(usize, f64)>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_HEADER).expect("writing to memory");
    for (name, points) in curves {
        for (t, v) in points {
            w.write_record([name.clone(), t.to_string(), format!("{v:e}")]).expect("writing to memory");
        }
    }
    write_file(path, &w.into_inner().expect("writing to memory"))
}

pub fn read_curve(path: &Path) -> Result<Vec<(String, usize, f64)>> {
    let text = read_file(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, i + 2, e.to_string()))?;
        match (rec.get(0), rec.get(1).and_then(|s| s.parse().ok()), rec.get(2).and_then(|s| s.parse().ok())) {
            (Some(n), Some(t), Some(v)) => out.push((n.to_string(), t, v)),
            _ => return Err(format_err(path, i + 2, "expected strategy,checkpoint,median_avg_loss")),
        }
    }
    Ok(out)
}

/// `(strategy, seed)` for every metrics file in `dir`, sorted.
pub fn list_metrics(dir: &Path) -> Result<Vec<(String, u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| LabError::io(dir, e))? {
        let path = entry.map_err(|e| LabError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_prefix("metrics_").and_then(|n| n.strip_suffix(".csv")) else { continue };
        if let Some((strategy, seed)) = stem.rsplit_once('_') {
            if let Ok(seed) = seed.parse() {
                out.push((strategy.to_string(), seed, path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}
