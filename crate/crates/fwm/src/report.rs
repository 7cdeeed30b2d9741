//! Result tables: one row per (predictor, m), one column per k.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fwm_core::envsim::EnvId;
use fwm_core::observation::Observation;
use fwm_core::safety::{confusion_stats, SafetyVerdict};
use serde::{Deserialize, Serialize};

use crate::config::PredictorId;
use crate::episode_io::{self, encode_png, read_corpus_manifest, read_predicted_frames};
use crate::harness::{ResultRecord, ResultsHeader, WindowRecord, RESULTS_FORMAT};

pub const UNDEFINED: &str = "n/a";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub header: ResultsHeader,
    pub records: Vec<ResultRecord>,
}

pub fn parse_results(text: &str) -> anyhow::Result<ResultsFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, first)) = lines.next() else { bail!("results file is empty") };
    let header: ResultsHeader = serde_json::from_str(first).context("line 1: results header")?;
    if header.format != RESULTS_FORMAT {
        bail!("unsupported results format '{}'", header.format);
    }
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
        .collect::<anyhow::Result<Vec<ResultRecord>>>()?;
    Ok(ResultsFile { header, records })
}

pub fn serialize_results(file: &ResultsFile) -> String {
    let mut out = serde_json::to_string(&file.header).expect("header serializes");
    out.push('\n');
    for r in &file.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn load_results(path: &Path) -> anyhow::Result<ResultsFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_results(&text).with_context(|| path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    /// Windows contributing to the cell.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub predictor: PredictorId,
    pub m: usize,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub env: EnvId,
    /// `cd:<label>` (objects kept in at least one window), `angle`, `mse`,
    /// `ssim`, `f1` or `fpr`.
    pub metric: String,
    /// `all`, or `upright` / `falling` for cart-pole.
    pub subset: String,
    pub ks: Vec<usize>,
    pub rows: Vec<Row>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn metric_value(metric: &str, windows: &[&WindowRecord]) -> Cell {
    let n = windows.len();
    let scalar = |f: &dyn Fn(&WindowRecord) -> Option<f64>| {
        let v: Vec<f64> = windows.iter().filter_map(|w| f(w)).collect();
        Cell { value: mean(&v), n: v.len() }
    };
    match metric {
        "mse" => scalar(&|w| Some(w.metrics.mse)),
        "ssim" => scalar(&|w| Some(w.metrics.ssim)),
        "angle" => scalar(&|w| w.metrics.angle_error_deg),
        "f1" | "fpr" => {
            let verdicts: Vec<SafetyVerdict> = windows
                .iter()
                .map(|w| SafetyVerdict {
                    predicted_safe: w.predicted_safe,
                    actual_safe: w.actual_safe,
                    per_step_predicted: Vec::new(),
                    per_step_actual: Vec::new(),
                    horizon: 0,
                    input_length: 0,
                })
                .collect();
            let stats = confusion_stats(&verdicts).ok();
            let value = stats.and_then(|s| if metric == "f1" { s.f1 } else { s.fpr });
            Cell { value, n }
        }
        cd => {
            let label = cd.strip_prefix("cd:").unwrap_or(cd);
            scalar(&|w| w.metrics.per_object_cd.get(label).copied())
        }
    }
}

fn subsets(env: EnvId) -> &'static [&'static str] {
    match env {
        EnvId::CartPole => &["all", "upright", "falling"],
        EnvId::Lander => &["all"],
    }
}

fn in_subset(w: &WindowRecord, subset: &str) -> bool {
    match subset {
        "upright" => !w.falling,
        "falling" => w.falling,
        _ => true,
    }
}

/// Builds every table for the environments present in `records`.
pub fn build_tables(records: &[ResultRecord]) -> anyhow::Result<Vec<Table>> {
    if records.is_empty() {
        bail!("no result records to report");
    }
    let envs: BTreeSet<EnvId> = records.iter().map(|r| r.env).collect();
    let mut tables = Vec::new();
    for env in envs {
        let recs: Vec<&ResultRecord> = records.iter().filter(|r| r.env == env).collect();
        let ks: Vec<usize> = recs.iter().map(|r| r.k).collect::<BTreeSet<_>>().into_iter().collect();
        let row_keys: Vec<(PredictorId, usize)> = recs.iter().map(|r| (r.predictor, r.m)).collect::<BTreeSet<_>>().into_iter().collect();
        let mut cells: BTreeMap<(PredictorId, usize, usize), Vec<&WindowRecord>> = BTreeMap::new();
        let mut labels = BTreeSet::new();
        for r in &recs {
            let bucket = cells.entry((r.predictor, r.m, r.k)).or_default();
            for w in &r.windows {
                labels.extend(w.kept.iter().cloned());
                bucket.push(w);
            }
        }
        let mut metrics: Vec<String> = labels.into_iter().map(|l| format!("cd:{l}")).collect();
        if env == EnvId::CartPole {
            metrics.push("angle".into());
        }
        metrics.extend(["mse", "ssim", "f1", "fpr"].map(String::from));

        for subset in subsets(env) {
            for metric in &metrics {
                let rows = row_keys
                    .iter()
                    .map(|&(predictor, m)| Row {
                        predictor,
                        m,
                        cells: ks
                            .iter()
                            .map(|&k| {
                                let ws: Vec<&WindowRecord> = cells
                                    .get(&(predictor, m, k))
                                    .map(|v| v.iter().copied().filter(|w| in_subset(w, subset)).collect())
                                    .unwrap_or_default();
                                metric_value(metric, &ws)
                            })
                            .collect(),
                    })
                    .collect();
                tables.push(Table { env, metric: metric.clone(), subset: (*subset).into(), ks: ks.clone(), rows });
            }
        }
    }
    Ok(tables)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.4}"))
}

pub fn render_text(tables: &[Table]) -> String {
    let mut out = String::new();
    for t in tables {
        let _ = writeln!(out, "[{}] {} ({})", t.env.name(), t.metric, t.subset);
        let _ = write!(out, "{:<12} {:>3}", "predictor", "m");
        for k in &t.ks {
            let _ = write!(out, " {:>10}", format!("k={k}"));
        }
        out.push('\n');
        for r in &t.rows {
            let _ = write!(out, "{:<12} {:>3}", r.predictor.name(), r.m);
            for c in &r.cells {
                let _ = write!(out, " {:>10}", fmt_value(c.value));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Long format: one line per cell. Undefined values are left empty.
pub fn render_csv(tables: &[Table]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["env", "subset", "metric", "predictor", "m", "k", "value", "n"])?;
    for t in tables {
        for r in &t.rows {
            for (k, c) in t.ks.iter().zip(&r.cells) {
                w.write_record([
                    t.env.name(),
                    t.subset.as_str(),
                    t.metric.as_str(),
                    r.predictor.name(),
                    &r.m.to_string(),
                    &k.to_string(),
                    &c.value.map(|v| v.to_string()).unwrap_or_default(),
                    &c.n.to_string(),
                ])?;
            }
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Stacks two frame sequences (true above, predicted below) into one image
/// with a `gap`-pixel white border between tiles.
pub fn frame_strip(top: &[Observation], bottom: &[Observation], gap: usize) -> anyhow::Result<Observation> {
    let Some(first) = top.first().or(bottom.first()) else { bail!("no frames for strip") };
    let (w, h) = first.dims();
    if top.iter().chain(bottom).any(|o| o.dims() != (w, h)) {
        bail!("strip frames differ in size");
    }
    let cols = top.len().max(bottom.len());
    let mut strip = Observation::filled(cols * (w + gap) + gap, 2 * (h + gap) + gap, [255, 255, 255]);
    for (row, frames) in [top, bottom].into_iter().enumerate() {
        for (col, f) in frames.iter().enumerate() {
            let (x0, y0) = (gap + col * (w + gap), gap + row * (h + gap));
            for r in 0..h {
                for c in 0..w {
                    strip.set(y0 + r, x0 + c, f.get(r, c));
                }
            }
        }
    }
    Ok(strip)
}

fn pick(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * (n - 1) / (max - 1)).collect()
    }
}

/// Writes one true-vs-predicted strip per saved prediction; returns the
/// written paths. Windows without saved predictions are skipped.
pub fn write_strips(file: &ResultsFile, results_dir: &Path, out: &Path, max_frames: usize) -> anyhow::Result<Vec<PathBuf>> {
    let corpus = read_corpus_manifest(&file.header.corpus)?;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for r in &file.records {
        let Some(entry) = corpus.episodes.iter().find(|e| e.index == r.episode) else { continue };
        let mut stored = None;
        for w in &r.windows {
            let Some(rel) = &w.prediction_dir else { continue };
            if stored.is_none() {
                stored = Some(episode_io::read_corpus_episode(&file.header.corpus, entry)?);
            }
            let ep = &stored.as_ref().expect("loaded above").episode;
            let (_, predicted) = read_predicted_frames(&results_dir.join(rel))?;
            let first = w.start + r.m + 1;
            let idx = pick(predicted.len(), max_frames.max(2));
            let truth: Vec<Observation> = idx.iter().filter_map(|&i| ep.observations.get(first + i).cloned()).collect();
            let pred: Vec<Observation> = idx.iter().map(|&i| predicted[i].clone()).collect();
            let strip = frame_strip(&truth, &pred, 2)?;
            let name = rel.rsplit('/').next().unwrap_or(rel);
            let path = out.join(format!("{}_{name}.png", r.predictor));
            fs::write(&path, encode_png(&strip))?;
            written.push(path);
        }
    }
    Ok(written)
}
