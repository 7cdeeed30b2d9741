//! Run configuration: a JSON document whose sections mirror the CLI.
//!
//! Every field has a default, so `{}` is a valid cart-pole config. Unknown
//! fields are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use fwm_core::envsim::{CartPoleState, ControllerConfig, EnvId, EnvParams, HeuristicGains, LanderState, SimState};
use fwm_core::metrics::Norm;
use fwm_core::predictor::{PromptFragments, SamplingParams};
use fwm_core::render::Palette;
use fwm_core::safety::FALLING_THRESHOLD;
use fwm_core::segment::STATIC_EPS;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const ALLOWED_M: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictorId {
    Oracle,
    Persistence,
    Constvel,
    Llm,
}

impl PredictorId {
    pub fn name(self) -> &'static str {
        match self {
            PredictorId::Oracle => "oracle",
            PredictorId::Persistence => "persistence",
            PredictorId::Constvel => "constvel",
            PredictorId::Llm => "llm",
        }
    }
}

impl fmt::Display for PredictorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    /// Falls back to `FWM_LLM_ENDPOINT`.
    pub endpoint: Option<String>,
    /// Falls back to `FWM_LLM_MODEL`.
    pub model: Option<String>,
    pub max_retries: usize,
    /// Upper bound on in-flight requests across workers.
    pub concurrency: usize,
    pub timeout_secs: u64,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self { endpoint: None, model: None, max_retries: 3, concurrency: 4, timeout_secs: 60, backoff_ms: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub id: PredictorId,
    pub fragments: PromptFragments,
    pub sampling: SamplingParams,
    pub llm: LlmConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            id: PredictorId::Oracle,
            fragments: PromptFragments::default(),
            sampling: SamplingParams::default(),
            llm: LlmConfig::default(),
        }
    }
}

/// Closed intervals `[lo, hi]` for initial states, sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleInit {
    pub cart_pos: [f64; 2],
    pub cart_vel: [f64; 2],
    pub pole_angle: [f64; 2],
    pub pole_angvel: [f64; 2],
}

impl Default for CartPoleInit {
    fn default() -> Self {
        Self { cart_pos: [-1.0, 1.0], cart_vel: [-0.5, 0.5], pole_angle: [-0.4, 0.4], pole_angvel: [-1.0, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LanderInit {
    pub px: [f64; 2],
    pub py: [f64; 2],
    pub vx: [f64; 2],
    pub vy: [f64; 2],
    pub tilt: [f64; 2],
    pub tilt_vel: [f64; 2],
}

impl Default for LanderInit {
    fn default() -> Self {
        Self { px: [4.0, 16.0], py: [14.0, 19.0], vx: [-0.5, 0.5], vy: [-0.5, 0.0], tilt: [-0.2, 0.2], tilt_vel: [0.0, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitRanges {
    pub cartpole: CartPoleInit,
    pub lander: LanderInit,
}

fn draw<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

impl InitRanges {
    pub fn sample<R: Rng>(&self, env: EnvId, rng: &mut R) -> SimState {
        match env {
            EnvId::CartPole => {
                let r = &self.cartpole;
                SimState::CartPole(CartPoleState {
                    cart_pos: draw(rng, r.cart_pos),
                    cart_vel: draw(rng, r.cart_vel),
                    pole_angle: draw(rng, r.pole_angle),
                    pole_angvel: draw(rng, r.pole_angvel),
                })
            }
            EnvId::Lander => {
                let r = &self.lander;
                SimState::Lander(LanderState {
                    px: draw(rng, r.px),
                    py: draw(rng, r.py),
                    vx: draw(rng, r.vx),
                    vy: draw(rng, r.vy),
                    tilt: draw(rng, r.tilt),
                    tilt_vel: draw(rng, r.tilt_vel),
                })
            }
        }
    }

    fn ranges(&self, env: EnvId) -> Vec<(&'static str, [f64; 2])> {
        match env {
            EnvId::CartPole => {
                let r = &self.cartpole;
                vec![("cart_pos", r.cart_pos), ("cart_vel", r.cart_vel), ("pole_angle", r.pole_angle), ("pole_angvel", r.pole_angvel)]
            }
            EnvId::Lander => {
                let r = &self.lander;
                vec![("px", r.px), ("py", r.py), ("vx", r.vx), ("vy", r.vy), ("tilt", r.tilt), ("tilt_vel", r.tilt_vel)]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvId,
    pub episodes: usize,
    /// Actions per episode.
    pub episode_length: usize,
    pub m: Vec<usize>,
    /// Empty selects the per-environment default.
    pub k: Vec<usize>,
    pub predictor: PredictorConfig,
    pub seed: u64,
    pub out: PathBuf,
    /// Corpus read by `evaluate`; defaults to `out`.
    pub corpus: Option<PathBuf>,
    /// Empty selects the per-environment default.
    pub palette: Option<Palette>,
    pub env_params: EnvParams,
    /// Episode `i` uses `controllers[i % len]`. Empty selects the default mix.
    pub controllers: Vec<ControllerConfig>,
    pub init: InitRanges,
    /// Episode-level parallelism; 0 means one per core.
    pub workers: usize,
    pub norm: Norm,
    pub static_eps: f64,
    /// `|θ|` at the first predicted step above which a window counts as falling.
    pub falling_threshold: f64,
    /// Write every predicted trajectory next to the results.
    pub save_predictions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvId::CartPole,
            episodes: 200,
            episode_length: 100,
            m: vec![1, 2],
            k: Vec::new(),
            predictor: PredictorConfig::default(),
            seed: 0,
            out: PathBuf::from("fwm-out"),
            corpus: None,
            palette: None,
            env_params: EnvParams::default(),
            controllers: Vec::new(),
            init: InitRanges::default(),
            workers: 0,
            norm: Norm::L2,
            static_eps: STATIC_EPS,
            falling_threshold: FALLING_THRESHOLD,
            save_predictions: false,
        }
    }
}

pub fn default_horizons(env: EnvId) -> Vec<usize> {
    match env {
        EnvId::CartPole => vec![10, 20, 30],
        EnvId::Lander => vec![10, 20, 30, 40, 50, 60],
    }
}

pub fn default_controllers(env: EnvId) -> Vec<ControllerConfig> {
    match env {
        EnvId::CartPole => vec![ControllerConfig::Heuristic(HeuristicGains::default()), ControllerConfig::Random],
        EnvId::Lander => vec![ControllerConfig::Heuristic(HeuristicGains::default())],
    }
}

/// Field-level validation failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config:\n  {}", .problems.join("\n  "))]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn horizons(&self) -> Vec<usize> {
        if self.k.is_empty() {
            default_horizons(self.env)
        } else {
            self.k.clone()
        }
    }

    pub fn palette(&self) -> Palette {
        self.palette.clone().unwrap_or_else(|| Palette::for_env(self.env))
    }

    pub fn controllers(&self) -> Vec<ControllerConfig> {
        if self.controllers.is_empty() {
            default_controllers(self.env)
        } else {
            self.controllers.clone()
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.out.clone())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let mut bad = |field: &str, msg: String| problems.push(format!("{field}: {msg}"));

        if self.episodes == 0 {
            bad("episodes", "must be at least 1".into());
        }
        if self.episode_length == 0 {
            bad("episode_length", "must be at least 1".into());
        }
        if self.m.is_empty() {
            bad("m", "needs at least one input length".into());
        }
        for &m in &self.m {
            if !ALLOWED_M.contains(&m) {
                bad("m", format!("{m} is not one of {ALLOWED_M:?}"));
            }
        }
        let horizons = self.horizons();
        for &k in &horizons {
            if k == 0 {
                bad("k", "horizons must be at least 1".into());
            }
        }
        if let (Some(&m), Some(&k)) = (self.m.iter().max(), horizons.iter().max()) {
            if m + k + 1 > self.episode_length + 1 {
                bad("episode_length", format!("{} frames cannot hold a window with m={m}, k={k}", self.episode_length + 1));
            }
        }
        if let Err(e) = self.env_params.validate() {
            bad("env_params", e.to_string());
        }
        let palette = self.palette();
        if let Err(e) = palette.validate() {
            bad("palette", e.to_string());
        }
        if let Some(p) = &self.palette {
            let expected = Palette::for_env(self.env);
            let mut want: Vec<&str> = expected.labels().collect();
            let mut have: Vec<&str> = p.labels().collect();
            want.sort_unstable();
            have.sort_unstable();
            if want != have {
                bad("palette", format!("labels {have:?} do not match the {} scene {want:?}", self.env.name()));
            }
        }
        for (i, c) in self.controllers.iter().enumerate() {
            if let ControllerConfig::Replay { actions } = c {
                if let Some(a) = actions.iter().find(|a| a.env() != self.env) {
                    bad(&format!("controllers[{i}]"), format!("action {} does not belong to {}", a.name(), self.env.name()));
                }
            }
        }
        for (name, [lo, hi]) in self.init.ranges(self.env) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                bad(&format!("init.{}.{name}", self.env.name()), format!("[{lo}, {hi}] is not a finite interval"));
            }
        }
        if let Err(e) = self.predictor.sampling.validate() {
            bad("predictor.sampling", e.to_string());
        }
        let llm = &self.predictor.llm;
        if llm.concurrency == 0 {
            bad("predictor.llm.concurrency", "must be at least 1".into());
        }
        if llm.max_retries == 0 {
            bad("predictor.llm.max_retries", "must be at least 1".into());
        }
        if !(self.static_eps >= 0.0) {
            bad("static_eps", "must be non-negative".into());
        }
        if !(self.falling_threshold.is_finite() && self.falling_threshold > 0.0) {
            bad("falling_threshold", "must be a positive angle in radians".into());
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems })
        }
    }

    /// Effective worker count, capped by the LLM concurrency bound.
    pub fn worker_count(&self) -> usize {
        let n = if self.workers == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { self.workers };
        if self.predictor.id == PredictorId::Llm {
            n.min(self.predictor.llm.concurrency)
        } else {
            n
        }
    }
}
