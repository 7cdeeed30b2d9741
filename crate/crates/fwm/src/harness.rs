//! Corpus generation and evaluation runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use fwm_core::envsim::{rollout, EnvId, Episode};
use fwm_core::error::Error as CoreError;
use fwm_core::metrics::{report, MetricConfig, MetricReport, Norm};
use fwm_core::predictor::{ConstVelocity, Oracle, Persistence, Predictor};
use fwm_core::reconstruct::{closed_loop_rollout, PredictedTrajectory, RolloutSetup};
use fwm_core::safety::{horizon_verdict, is_falling, SafetySpec};
use fwm_core::segment::{extract_latent, LatentState};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PredictorId, RunConfig};
use crate::episode_io::{
    self, episode_dir_name, read_corpus_episode, read_corpus_manifest, sha256_hex, write_corpus_manifest, write_episode,
    CorpusEntry, CorpusManifest, PredictedInfo, StoredEpisode, CORPUS_FORMAT,
};
use crate::llm::LlmPredictor;

pub const RESULTS_FORMAT: &str = "fwm-results/1";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";

/// Per-episode seeds, all drawn from one generator seeded with `master`.
pub fn episode_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Simulates episode `index` of the corpus described by `cfg`.
pub fn generate_episode(cfg: &RunConfig, index: usize, seed: u64) -> Result<Episode, CoreError> {
    let controllers = cfg.controllers();
    let controller = &controllers[index % controllers.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = cfg.init.sample(cfg.env, &mut rng);
    rollout(init, controller, cfg.episode_length, &cfg.env_params, &cfg.palette(), seed)
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("building worker pool")
}

fn clear_stale_episodes(out: &Path) -> anyhow::Result<()> {
    if !out.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(out).with_context(|| format!("listing {}", out.display()))? {
        let entry = entry?;
        let name = entry.file_name();
        if entry.file_type()?.is_dir() && name.to_string_lossy().starts_with("episode_") {
            fs::remove_dir_all(entry.path()).with_context(|| format!("removing {}", entry.path().display()))?;
        }
    }
    Ok(())
}

/// Writes `cfg.episodes` episodes plus `corpus.json` into `cfg.out`.
/// Re-running with the same config reproduces the directory byte for byte.
pub fn cmd_generate(cfg: &RunConfig) -> anyhow::Result<CorpusManifest> {
    cfg.validate()?;
    let out = &cfg.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    clear_stale_episodes(out)?;
    let palette = cfg.palette();
    let seeds = episode_seeds(cfg.seed, cfg.episodes);
    let entries: Vec<CorpusEntry> = pool(cfg.worker_count())?.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(index, &seed)| -> anyhow::Result<CorpusEntry> {
                let episode = generate_episode(cfg, index, seed).with_context(|| format!("episode {index}"))?;
                let dir = episode_dir_name(index);
                write_episode(&out.join(&dir), &episode, &palette, &cfg.env_params)?;
                let manifest_bytes = fs::read(out.join(&dir).join("manifest.json"))?;
                Ok(CorpusEntry { index, dir, seed, manifest_sha256: sha256_hex(&manifest_bytes) })
            })
            .collect::<anyhow::Result<_>>()
    })?;
    let manifest = CorpusManifest {
        format: CORPUS_FORMAT.into(),
        env: cfg.env,
        seed: cfg.seed,
        episode_length: cfg.episode_length,
        episodes: entries,
    };
    write_corpus_manifest(out, &manifest)?;
    log::info!("wrote {} episodes to {}", manifest.episodes.len(), out.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub format: String,
    /// Seconds since the Unix epoch; the only non-deterministic field.
    pub created_unix: u64,
    pub env: EnvId,
    pub predictor: PredictorId,
    pub norm: Norm,
    pub m: Vec<usize>,
    pub k: Vec<usize>,
    pub corpus: PathBuf,
    pub corpus_seed: u64,
    pub episodes: usize,
}

/// One evaluation window: `m + 1` observed frames and `k` predicted steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    /// Index of the first observed frame.
    pub start: usize,
    /// `|θ|` exceeded the falling threshold at the first predicted step.
    pub falling: bool,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    /// Scores at predicted step `k`.
    pub metrics: MetricReport,
    pub predicted_safe: bool,
    pub actual_safe: bool,
    pub attempts: usize,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub episode: usize,
    pub episode_dir: String,
    pub seed: u64,
    pub env: EnvId,
    pub controller: String,
    pub predictor: PredictorId,
    pub m: usize,
    pub k: usize,
    pub windows: Vec<WindowRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub episode: usize,
    pub predictor: PredictorId,
    pub m: usize,
    pub k: usize,
    pub window_start: Option<usize>,
    /// Horizon step that failed, when known.
    pub step: Option<usize>,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub results_path: PathBuf,
    pub errors_path: PathBuf,
    pub records: usize,
    pub windows: usize,
    pub errors: usize,
}

/// Window start indices: non-overlapping, stride `m + k + 1`.
pub fn window_starts(frames: usize, m: usize, k: usize) -> Vec<usize> {
    let span = m + k + 1;
    (0..).map(|i| i * span).take_while(|t| t + span <= frames).collect()
}

/// Everything produced for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub record: WindowRecord,
    pub trajectory: PredictedTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowFailure {
    pub step: Option<usize>,
    pub error: CoreError,
}

impl From<CoreError> for WindowFailure {
    fn from(error: CoreError) -> Self {
        Self { step: error.step(), error }
    }
}

/// Ground-truth latents for every frame of an episode.
pub fn true_latents(stored: &StoredEpisode) -> Result<Vec<LatentState>, CoreError> {
    let palette = &stored.manifest.palette;
    stored
        .episode
        .observations
        .iter()
        .enumerate()
        .map(|(t, o)| extract_latent(o, palette, t).map_err(|e| e.at_step(t)))
        .collect()
}

pub struct WindowSpec<'a> {
    pub m: usize,
    pub k: usize,
    pub start: usize,
    pub cfg: &'a RunConfig,
}

/// Runs one closed-loop window with `predictor` and scores step `k`.
pub fn evaluate_window(
    stored: &StoredEpisode,
    truth: &[LatentState],
    predictor: &mut dyn Predictor,
    spec: &WindowSpec<'_>,
) -> Result<WindowOutcome, WindowFailure> {
    let WindowSpec { m, k, start, cfg } = *spec;
    let ep = &stored.episode;
    let man = &stored.manifest;
    let last = start + m;
    let mut setup = RolloutSetup::new(ep.env, &man.palette, &man.env_params, &ep.controller);
    setup.seed = ep.seed;
    setup.fragments = cfg.predictor.fragments.clone();
    setup.sampling = cfg.predictor.sampling;
    setup.static_eps = cfg.static_eps;

    let traj = closed_loop_rollout(&ep.observations[start..=last], &ep.actions[start..=last], predictor, k, &setup)
        .map_err(|f| WindowFailure { step: Some(f.step), error: f.error })?;

    let metric_cfg = MetricConfig::for_env(ep.env, &man.env_params, cfg.norm);
    let metrics = report(&truth[last + k], &traj.latents[k - 1], &ep.observations[last + k], &traj.observations[k - 1], &metric_cfg)
        .map_err(|e| WindowFailure { step: Some(k), error: e })?;
    let mut predicted = Vec::with_capacity(k + 1);
    predicted.push(truth[last].clone());
    predicted.extend(traj.latents.iter().cloned());
    let verdict = horizon_verdict(&ep.states[last..=last + k], &predicted, &SafetySpec::for_env(ep.env), &man.env_params, k, m)?;

    let record = WindowRecord {
        start,
        falling: is_falling(&ep.states[last + 1], cfg.falling_threshold),
        kept: traj.kept.clone(),
        dropped: traj.dropped.clone(),
        metrics,
        predicted_safe: verdict.predicted_safe,
        actual_safe: verdict.actual_safe,
        attempts: traj.attempts.iter().sum(),
        fallback: traj.fallback,
        prediction_dir: None,
    };
    Ok(WindowOutcome { record, trajectory: traj })
}

/// Oracle continuation for a window: true latents and frames after the prefix.
pub fn oracle_for(stored: &StoredEpisode, truth: &[LatentState], last: usize, k: usize) -> Oracle {
    Oracle::new((last + 1..=last + k).map(|j| (truth[j].clone(), stored.episode.observations[j].clone())).collect())
}

fn make_predictor(
    cfg: &RunConfig,
    stored: &StoredEpisode,
    truth: &[LatentState],
    last: usize,
    k: usize,
) -> Result<Box<dyn Predictor>, CoreError> {
    Ok(match cfg.predictor.id {
        PredictorId::Oracle => Box::new(oracle_for(stored, truth, last, k)),
        PredictorId::Persistence => Box::new(Persistence),
        PredictorId::Constvel => Box::new(ConstVelocity),
        PredictorId::Llm => Box::new(LlmPredictor::from_config(&cfg.predictor.llm)?),
    })
}

fn error_record(cfg: &RunConfig, episode: usize, m: usize, k: usize, start: Option<usize>, f: &WindowFailure) -> ErrorRecord {
    ErrorRecord {
        episode,
        predictor: cfg.predictor.id,
        m,
        k,
        window_start: start,
        step: f.step,
        kind: f.error.kind().into(),
        message: f.error.to_string(),
    }
}

fn evaluate_episode(
    cfg: &RunConfig,
    corpus: &Path,
    entry: &CorpusEntry,
    horizons: &[usize],
) -> (Vec<ResultRecord>, Vec<ErrorRecord>) {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let combos: Vec<(usize, usize)> = cfg.m.iter().flat_map(|&m| horizons.iter().map(move |&k| (m, k))).collect();
    let fail_all = |errors: &mut Vec<ErrorRecord>, kind: &str, message: String| {
        for &(m, k) in &combos {
            errors.push(ErrorRecord {
                episode: entry.index,
                predictor: cfg.predictor.id,
                m,
                k,
                window_start: None,
                step: None,
                kind: kind.into(),
                message: message.clone(),
            });
        }
    };
    let stored = match read_corpus_episode(corpus, entry) {
        Ok(s) => s,
        Err(e) => {
            fail_all(&mut errors, "corpus_io", e.to_string());
            return (records, errors);
        }
    };
    let truth = match true_latents(&stored) {
        Ok(t) => t,
        Err(e) => {
            fail_all(&mut errors, e.kind(), e.to_string());
            return (records, errors);
        }
    };

    for &(m, k) in &combos {
        let mut windows = Vec::new();
        let mut failed = false;
        for start in window_starts(stored.episode.observations.len(), m, k) {
            let spec = WindowSpec { m, k, start, cfg };
            let outcome = make_predictor(cfg, &stored, &truth, start + m, k)
                .map_err(WindowFailure::from)
                .and_then(|mut p| evaluate_window(&stored, &truth, p.as_mut(), &spec));
            match outcome {
                Ok(mut o) => {
                    if cfg.save_predictions {
                        match save_prediction(cfg, &stored, entry, &spec, &o.trajectory) {
                            Ok(dir) => o.record.prediction_dir = Some(dir),
                            Err(e) => log::warn!("could not save prediction: {e:#}"),
                        }
                    }
                    windows.push(o.record);
                }
                Err(f) => {
                    log::warn!("episode {} m={m} k={k} window {start}: {}", entry.index, f.error);
                    errors.push(error_record(cfg, entry.index, m, k, Some(start), &f));
                    failed = true;
                }
            }
        }
        if !failed {
            records.push(ResultRecord {
                episode: entry.index,
                episode_dir: entry.dir.clone(),
                seed: entry.seed,
                env: stored.episode.env,
                controller: stored.manifest.controller_id.clone(),
                predictor: cfg.predictor.id,
                m,
                k,
                windows,
            });
        }
    }
    (records, errors)
}

fn save_prediction(
    cfg: &RunConfig,
    stored: &StoredEpisode,
    entry: &CorpusEntry,
    spec: &WindowSpec<'_>,
    traj: &PredictedTrajectory,
) -> anyhow::Result<String> {
    let rel = format!("predictions/{}/{}_m{}_k{}_t{:04}", cfg.predictor.id, entry.dir, spec.m, spec.k, spec.start);
    let info = PredictedInfo {
        predictor: cfg.predictor.id.name().into(),
        source_episode: entry.index as u64,
        window_start: spec.start,
        m: spec.m,
        k: spec.k,
        kept: traj.kept.clone(),
        dropped: traj.dropped.clone(),
    };
    episode_io::write_predicted(&cfg.out.join(&rel), traj, info, &stored.manifest)?;
    Ok(rel)
}

fn write_jsonl<T: Serialize>(path: &Path, header: Option<&ResultsHeader>, rows: &[T]) -> anyhow::Result<()> {
    let mut text = String::new();
    if let Some(h) = header {
        text.push_str(&serde_json::to_string(h)?);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Evaluates every episode of the corpus for each `(m, k)` and writes
/// `results.jsonl` and `errors.jsonl` into `cfg.out`.
pub fn cmd_evaluate(cfg: &RunConfig) -> anyhow::Result<EvalSummary> {
    let corpus_dir = cfg.corpus_dir();
    let corpus = read_corpus_manifest(&corpus_dir)?;
    let mut cfg = cfg.clone();
    if cfg.env != corpus.env {
        log::info!("corpus holds {} episodes; evaluating as {}", corpus.env.name(), corpus.env.name());
        cfg.env = corpus.env;
    }
    cfg.episode_length = corpus.episode_length;
    cfg.validate()?;
    if corpus.episodes.is_empty() {
        bail!("corpus {} has no episodes", corpus_dir.display());
    }
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    if cfg.save_predictions {
        let dir = cfg.out.join("predictions").join(cfg.predictor.id.name());
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
        }
    }
    let horizons = cfg.horizons();

    let per_episode: Vec<(Vec<ResultRecord>, Vec<ErrorRecord>)> = pool(cfg.worker_count())?
        .install(|| corpus.episodes.par_iter().map(|e| evaluate_episode(&cfg, &corpus_dir, e, &horizons)).collect());
    let (mut records, mut errors): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
    for (r, e) in per_episode {
        records.extend(r);
        errors.extend(e);
    }
    records.sort_by_key(|r| (r.m, r.k, r.episode));
    errors.sort_by_key(|e| (e.m, e.k, e.episode, e.window_start));

    let header = ResultsHeader {
        format: RESULTS_FORMAT.into(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        env: cfg.env,
        predictor: cfg.predictor.id,
        norm: cfg.norm,
        m: cfg.m.clone(),
        k: horizons,
        corpus: corpus_dir.clone(),
        corpus_seed: corpus.seed,
        episodes: corpus.episodes.len(),
    };
    let results_path = cfg.out.join(RESULTS_FILE);
    let errors_path = cfg.out.join(ERRORS_FILE);
    write_jsonl(&results_path, Some(&header), &records)?;
    write_jsonl(&errors_path, None, &errors)?;
    Ok(EvalSummary {
        windows: records.iter().map(|r| r.windows.len()).sum(),
        records: records.len(),
        errors: errors.len(),
        results_path,
        errors_path,
    })
}
