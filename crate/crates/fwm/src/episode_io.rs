//! On-disk episode format.
//!
//! ```text
//! <episode dir>/
//!   manifest.json      env, seed, length, palette hash, controller, frame hashes
//!   frames/000000.png  8-bit RGB, one per observation
//!   states.csv         t + one column per state field
//!   actions.csv        t,action
//! ```
//!
//! A corpus directory holds `corpus.json` and one `episode_NNNNNN/` per
//! episode. Writers are deterministic: the same episode always produces the
//! same bytes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use fwm_core::envsim::{Action, CartPoleState, ControllerConfig, EnvId, EnvParams, Episode, LanderState, SimState};
use fwm_core::observation::Observation;
use fwm_core::reconstruct::PredictedTrajectory;
use fwm_core::render::Palette;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const EPISODE_FORMAT: &str = "fwm-episode/1";
pub const CORPUS_FORMAT: &str = "fwm-corpus/1";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: invalid CSV: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: PNG decode failed: {detail}")]
    Png { path: PathBuf, detail: String },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
    #[error("{path}: sha256 mismatch (manifest {expected}, file {found})")]
    HashMismatch { path: PathBuf, expected: String, found: String },
}

type Result<T> = std::result::Result<T, IoError>;

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

fn invalid(path: &Path, detail: impl Into<String>) -> IoError {
    IoError::Invalid { path: path.to_path_buf(), detail: detail.into() }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Hash of the palette's canonical JSON form.
pub fn palette_hash(palette: &Palette) -> String {
    sha256_hex(&serde_json::to_vec(palette).expect("palette serializes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file: String,
    pub sha256: String,
    pub time_index: usize,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub format: String,
    pub env: EnvId,
    pub seed: u64,
    /// Number of actions; there is one more frame and state.
    pub length: usize,
    pub width: usize,
    pub height: usize,
    pub palette_hash: String,
    pub palette: Palette,
    pub env_params: EnvParams,
    pub controller_id: String,
    pub controller: ControllerConfig,
    pub frames: Vec<FrameEntry>,
    /// Present on surrogate rollouts; absent on simulator episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<PredictedInfo>,
}

/// Marker and provenance for a predicted trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedInfo {
    pub predictor: String,
    pub source_episode: u64,
    pub window_start: usize,
    pub m: usize,
    pub k: usize,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub env: EnvId,
    pub seed: u64,
    pub episode_length: usize,
    pub episodes: Vec<CorpusEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub index: usize,
    pub dir: String,
    pub seed: u64,
    pub manifest_sha256: String,
}

pub fn episode_dir_name(index: usize) -> String {
    format!("episode_{index:06}")
}

pub fn encode_png(obs: &Observation) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, obs.width as u32, obs.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(&obs.pixels).expect("in-memory PNG data");
    }
    out
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Observation> {
    let png_err = |e: png::DecodingError| IoError::Png { path: path.to_path_buf(), detail: e.to_string() };
    let mut reader = png::Decoder::new(bytes).read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(invalid(path, format!("expected 8-bit RGB, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Observation::from_pixels(info.width as usize, info.height as usize, buf).map_err(|e| invalid(path, e.to_string()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(fs_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(fs_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

fn state_header(env: EnvId) -> &'static [&'static str] {
    match env {
        EnvId::CartPole => &["t", "cart_pos", "cart_vel", "pole_angle", "pole_angvel"],
        EnvId::Lander => &["t", "px", "py", "vx", "vy", "tilt", "tilt_vel"],
    }
}

fn write_states(path: &Path, env: EnvId, states: &[SimState]) -> Result<()> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(fs_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(state_header(env)).map_err(csv_err)?;
    for (t, s) in states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(s.values().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(fs_err(path))
}

fn read_states(path: &Path, env: EnvId) -> Result<Vec<SimState>> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != state_header(env) {
        return Err(invalid(path, format!("unexpected header {header:?}")));
    }
    let mut states = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| invalid(path, format!("row {i}: {e}")))?;
        if rec.get(0) != Some(i.to_string().as_str()) {
            return Err(invalid(path, format!("row {i} has time index {:?}", rec.get(0))));
        }
        states.push(match env {
            EnvId::CartPole => SimState::CartPole(CartPoleState { cart_pos: v[0], cart_vel: v[1], pole_angle: v[2], pole_angvel: v[3] }),
            EnvId::Lander => SimState::Lander(LanderState { px: v[0], py: v[1], vx: v[2], vy: v[3], tilt: v[4], tilt_vel: v[5] }),
        });
    }
    Ok(states)
}

fn write_actions(path: &Path, actions: &[Action]) -> Result<()> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(fs_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["t", "action"]).map_err(csv_err)?;
    for (t, a) in actions.iter().enumerate() {
        w.write_record([t.to_string().as_str(), a.name()]).map_err(csv_err)?;
    }
    w.flush().map_err(fs_err(path))
}

fn read_actions(path: &Path, env: EnvId) -> Result<Vec<Action>> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut actions = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let name = rec.get(1).unwrap_or_default();
        let action = env
            .actions()
            .iter()
            .copied()
            .find(|a| a.name() == name)
            .ok_or_else(|| invalid(path, format!("row {i}: unknown {} action '{name}'", env.name())))?;
        actions.push(action);
    }
    Ok(actions)
}

fn write_frames(dir: &Path, observations: &[Observation]) -> Result<Vec<FrameEntry>> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(fs_err(&frames_dir))?;
    observations
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let file = format!("frames/{i:06}.png");
            let bytes = encode_png(obs);
            write_bytes(&dir.join(&file), &bytes)?;
            Ok(FrameEntry { file, sha256: sha256_hex(&bytes), time_index: obs.time_index, clipped: obs.clipped })
        })
        .collect()
}

/// Writes `episode` into `dir`, creating it if needed; returns the manifest.
pub fn write_episode(dir: &Path, episode: &Episode, palette: &Palette, params: &EnvParams) -> Result<EpisodeManifest> {
    episode.validate().map_err(|e| invalid(dir, e.to_string()))?;
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let frames = write_frames(dir, &episode.observations)?;
    write_states(&dir.join("states.csv"), episode.env, &episode.states)?;
    write_actions(&dir.join("actions.csv"), &episode.actions)?;
    let manifest = EpisodeManifest {
        format: EPISODE_FORMAT.into(),
        env: episode.env,
        seed: episode.seed,
        length: episode.len(),
        width: params.width,
        height: params.height,
        palette_hash: palette_hash(palette),
        palette: palette.clone(),
        env_params: *params,
        controller_id: episode.controller.id().into(),
        controller: episode.controller.clone(),
        frames,
        predicted: None,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A loaded episode with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEpisode {
    pub manifest: EpisodeManifest,
    pub episode: Episode,
}

fn read_frames(dir: &Path, manifest: &EpisodeManifest) -> Result<Vec<Observation>> {
    manifest
        .frames
        .iter()
        .map(|f| {
            let path = dir.join(&f.file);
            let bytes = fs::read(&path).map_err(fs_err(&path))?;
            let found = sha256_hex(&bytes);
            if found != f.sha256 {
                return Err(IoError::HashMismatch { path, expected: f.sha256.clone(), found });
            }
            let mut obs = decode_png(&bytes, &path)?;
            if obs.dims() != (manifest.width, manifest.height) {
                return Err(invalid(&path, format!("frame is {}x{}, manifest says {}x{}", obs.width, obs.height, manifest.width, manifest.height)));
            }
            obs.time_index = f.time_index;
            obs.clipped = f.clipped;
            Ok(obs)
        })
        .collect()
}

/// Reads an episode, verifying frame hashes, palette hash and counts.
pub fn read_episode(dir: &Path) -> Result<StoredEpisode> {
    let manifest_path = dir.join("manifest.json");
    let manifest: EpisodeManifest = read_json(&manifest_path)?;
    if manifest.format != EPISODE_FORMAT {
        return Err(invalid(&manifest_path, format!("unsupported format '{}'", manifest.format)));
    }
    if palette_hash(&manifest.palette) != manifest.palette_hash {
        return Err(invalid(&manifest_path, "palette does not match palette_hash"));
    }
    let observations = read_frames(dir, &manifest)?;
    let states = read_states(&dir.join("states.csv"), manifest.env)?;
    let actions = read_actions(&dir.join("actions.csv"), manifest.env)?;
    let episode = Episode {
        env: manifest.env,
        seed: manifest.seed,
        controller: manifest.controller.clone(),
        states,
        observations,
        actions,
    };
    episode.validate().map_err(|e| invalid(dir, e.to_string()))?;
    if episode.len() != manifest.length {
        return Err(invalid(&manifest_path, format!("manifest length {} but {} actions on disk", manifest.length, episode.len())));
    }
    Ok(StoredEpisode { manifest, episode })
}

/// Writes a surrogate rollout in the episode layout. States are unknown for
/// predicted frames, so `states.csv` is omitted; `actions.csv` holds the
/// controller's actions on the predicted frames.
pub fn write_predicted(
    dir: &Path,
    traj: &PredictedTrajectory,
    info: PredictedInfo,
    source: &EpisodeManifest,
) -> Result<EpisodeManifest> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let frames = write_frames(dir, &traj.observations)?;
    write_actions(&dir.join("actions.csv"), &traj.actions)?;
    write_json(&dir.join("latents.json"), &traj.latents)?;
    let manifest = EpisodeManifest {
        format: EPISODE_FORMAT.into(),
        length: traj.actions.len(),
        frames,
        predicted: Some(info),
        ..source.clone()
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads the frames of a predicted trajectory written by [`write_predicted`].
pub fn read_predicted_frames(dir: &Path) -> Result<(EpisodeManifest, Vec<Observation>)> {
    let manifest_path = dir.join("manifest.json");
    let manifest: EpisodeManifest = read_json(&manifest_path)?;
    if manifest.predicted.is_none() {
        return Err(invalid(&manifest_path, "not a predicted trajectory"));
    }
    let frames = read_frames(dir, &manifest)?;
    Ok((manifest, frames))
}

pub fn write_corpus_manifest(dir: &Path, manifest: &CorpusManifest) -> Result<()> {
    write_json(&dir.join("corpus.json"), manifest)
}

pub fn read_corpus_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join("corpus.json");
    let manifest: CorpusManifest = read_json(&path)?;
    if manifest.format != CORPUS_FORMAT {
        return Err(invalid(&path, format!("unsupported format '{}'", manifest.format)));
    }
    Ok(manifest)
}

/// Loads one corpus entry and checks it against the corpus manifest.
pub fn read_corpus_episode(corpus: &Path, entry: &CorpusEntry) -> Result<StoredEpisode> {
    let dir = corpus.join(&entry.dir);
    let manifest_path = dir.join("manifest.json");
    let bytes = fs::read(&manifest_path).map_err(fs_err(&manifest_path))?;
    let found = sha256_hex(&bytes);
    if found != entry.manifest_sha256 {
        return Err(IoError::HashMismatch { path: manifest_path, expected: entry.manifest_sha256.clone(), found });
    }
    read_episode(&dir)
}
