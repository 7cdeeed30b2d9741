//! Surrogate dynamics `P`: prompt assembly, reply parsing and deterministic
//! baseline predictors.
//!
//! Language-model backends live outside this crate and plug in through the
//! [`Predictor`] trait.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::envsim::Action;
use crate::error::{Error, ParseError, ParseErrorKind, Result};
use crate::observation::Observation;
use crate::segment::{Centroid, LatentEntry, LatentState};

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PromptFragments {
    /// Task instruction, placed first.
    pub r1: String,
    /// Lead-in for each observed timestep.
    pub r2: String,
    /// Prediction order; the arity statement is appended to it.
    pub r3: String,
}

impl Default for PromptFragments {
    fn default() -> Self {
        Self {
            r1: "Suppose I have a sequence of actions and states of a system, please predict the next step's state given the following information.".into(),
            r2: "The time, states and the action for this step are:".into(),
            r3: "Can you predict the state for the next moment? Please only give me your prediction values as a list.".into(),
        }
    }
}

/// Top-p decoding parameters forwarded to the language model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 0.7, top_p: 0.9 }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::InvalidParams(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidParams(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

/// Inputs of `P(z_{t:t+m}, u_{t:t+m})`: `m + 1` latents restricted to the
/// kept labels and the matching actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    pub latents: Vec<LatentState>,
    pub actions: Vec<Action>,
    pub fragments: PromptFragments,
    pub sampling: SamplingParams,
}

impl PredictionRequest {
    pub fn validate(&self) -> Result<()> {
        let first = self.latents.first().ok_or(Error::Empty("request latents"))?;
        if self.latents.len() != self.actions.len() {
            return Err(Error::InvalidRequest(format!(
                "{} latents but {} actions",
                self.latents.len(),
                self.actions.len()
            )));
        }
        let labels = first.label_vec();
        if let Some(z) = self.latents.iter().find(|z| z.label_vec() != labels) {
            let mut differing: Vec<String> = z
                .labels()
                .filter(|l| !labels.iter().any(|x| x == l))
                .map(String::from)
                .chain(labels.iter().filter(|l| z.get(l).is_none()).cloned())
                .collect();
            if differing.is_empty() {
                differing = labels.clone();
            }
            return Err(Error::InconsistentLabels(differing));
        }
        Ok(())
    }

    /// The input length `m`.
    pub fn input_length(&self) -> usize {
        self.latents.len().saturating_sub(1)
    }

    pub fn labels(&self) -> Vec<String> {
        self.latents.first().map(LatentState::label_vec).unwrap_or_default()
    }

    pub fn last(&self) -> Result<&LatentState> {
        self.latents.last().ok_or(Error::Empty("request latents"))
    }
}

/// Predicted latent `ẑ_{t+m+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub latent: LatentState,
    /// Backend reply; empty for deterministic predictors.
    pub raw_text: String,
    pub attempts: usize,
    /// Exact next frame, when the predictor knows it (ground-truth oracle).
    pub observation: Option<Observation>,
    /// Set when a predictor had to fall back to a simpler rule.
    pub fallback: bool,
}

impl Prediction {
    /// A prediction made without a backend: one attempt, no reply text.
    pub fn deterministic(latent: LatentState) -> Self {
        Self { latent, raw_text: String::new(), attempts: 1, observation: None, fallback: false }
    }
}

pub trait Predictor {
    fn id(&self) -> &str;

    /// Predicts the latent `step` steps past the initial window (1-based).
    ///
    /// When every object was static the request carries no labels; the
    /// answer is then an empty latent (and optionally a frame).
    fn predict(&mut self, req: &PredictionRequest, step: usize) -> Result<Prediction>;
}

/// Builds the prompt for `req` and returns it with the flattened centroids
/// it contains.
pub fn assemble_prompt(req: &PredictionRequest) -> Result<(String, Vec<f64>)> {
    req.validate()?;
    let labels = req.labels();
    if labels.is_empty() {
        return Err(Error::NothingToPredict);
    }
    let f = &req.fragments;
    if f.r3.trim().is_empty() {
        return Err(Error::InvalidRequest("prediction fragment r3 is empty".into()));
    }
    let mut prompt = String::new();
    let mut flat = Vec::with_capacity(req.latents.len() * labels.len() * 2);
    prompt.push_str(&f.r1);
    for (z, action) in req.latents.iter().zip(&req.actions) {
        let _ = write!(prompt, "\n{} step {}: ", f.r2, z.time_index);
        for (i, e) in z.entries.iter().enumerate() {
            if i > 0 {
                prompt.push_str(", ");
            }
            let _ = write!(prompt, "({}: {:.2}, {:.2})", e.label, e.centroid.cx, e.centroid.cy);
            flat.extend([e.centroid.cx, e.centroid.cy]);
        }
        let _ = write!(prompt, "; action: {}", action.name());
    }
    let order: Vec<String> = labels.iter().flat_map(|l| [format!("{l}_x"), format!("{l}_y")]).collect();
    let _ = write!(
        prompt,
        "\n{} Return exactly {} numbers as a list: [{}].",
        f.r3,
        2 * labels.len(),
        order.join(", ")
    );
    Ok((prompt, flat))
}

/// Renders a latent the way a well-behaved model should answer: `[x0, y0, ...]`.
pub fn format_latent_list(latent: &LatentState) -> String {
    let values: Vec<String> = latent.flat().iter().map(|v| format!("{v:.2}")).collect();
    format!("[{}]", values.join(", "))
}

fn numeric_list(body: &str) -> Option<Vec<f64>> {
    let cleaned: String = body.chars().filter(|c| !matches!(c, '[' | ']' | '(' | ')')).collect();
    if cleaned.trim().is_empty() {
        return None;
    }
    cleaned.split(',').map(|s| s.trim().parse::<f64>().ok()).collect()
}

/// Reads the first bracketed list of numbers in `text` and pairs its values
/// as `(cx, cy)` in `labels` order.
pub fn parse_prediction(text: &str, expected_arity: usize, labels: &[String]) -> Result<LatentState> {
    if expected_arity != 2 * labels.len() {
        return Err(Error::InvalidRequest(format!(
            "expected arity {expected_arity} does not match {} labels",
            labels.len()
        )));
    }
    let fail = |kind| Error::Parse(ParseError { kind, raw: text.to_string() });
    let bytes = text.as_bytes();
    let mut values = None;
    for (open, _) in text.char_indices().filter(|&(_, c)| c == '[') {
        let mut depth = 0usize;
        let close = bytes[open..].iter().position(|&b| {
            match b {
                b'[' => depth += 1,
                b']' => depth -= 1,
                _ => {}
            }
            depth == 0
        });
        if let Some(list) = close.and_then(|len| numeric_list(&text[open + 1..open + len])) {
            values = Some(list);
            break;
        }
    }
    let values = values.ok_or_else(|| fail(ParseErrorKind::NoList))?;
    if values.len() != expected_arity {
        return Err(fail(ParseErrorKind::Arity { expected: expected_arity, found: values.len() }));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(fail(ParseErrorKind::NonFinite));
    }
    Ok(LatentState {
        time_index: 0,
        entries: labels
            .iter()
            .zip(values.chunks_exact(2))
            .map(|(l, xy)| LatentEntry { label: l.clone(), centroid: Centroid::new(xy[0], xy[1]) })
            .collect(),
    })
}

/// `ẑ = z_{t+m}`.
pub fn predict_persistence(req: &PredictionRequest) -> Result<Prediction> {
    req.validate()?;
    let mut latent = req.last()?.clone();
    latent.time_index += 1;
    Ok(Prediction::deterministic(latent))
}

/// `ẑ = z_{t+m} + (z_{t+m} - z_{t+m-1})`; with `m = 0` falls back to
/// persistence and sets [`Prediction::fallback`].
pub fn predict_const_velocity(req: &PredictionRequest) -> Result<Prediction> {
    req.validate()?;
    if req.latents.len() < 2 {
        let mut p = predict_persistence(req)?;
        p.fallback = true;
        return Ok(p);
    }
    let last = &req.latents[req.latents.len() - 1];
    let prev = &req.latents[req.latents.len() - 2];
    let entries = last
        .entries
        .iter()
        .zip(&prev.entries)
        .map(|(a, b)| LatentEntry {
            label: a.label.clone(),
            centroid: Centroid::new(2.0 * a.centroid.cx - b.centroid.cx, 2.0 * a.centroid.cy - b.centroid.cy),
        })
        .collect();
    Ok(Prediction::deterministic(LatentState { time_index: last.time_index + 1, entries }))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Persistence;

impl Predictor for Persistence {
    fn id(&self) -> &str {
        "persistence"
    }

    fn predict(&mut self, req: &PredictionRequest, _step: usize) -> Result<Prediction> {
        predict_persistence(req)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstVelocity;

impl Predictor for ConstVelocity {
    fn id(&self) -> &str {
        "constvel"
    }

    fn predict(&mut self, req: &PredictionRequest, _step: usize) -> Result<Prediction> {
        predict_const_velocity(req)
    }
}

/// Upper-bound predictor replaying the true continuation of an episode:
/// entry `j - 1` holds the true latent and frame `j` steps past the window.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    pub continuation: Vec<(LatentState, Observation)>,
}

impl Oracle {
    pub fn new(continuation: Vec<(LatentState, Observation)>) -> Self {
        Self { continuation }
    }
}

/// `ẑ` = the true next latent, restricted to the requested labels.
pub fn predict_oracle(
    req: &PredictionRequest,
    truth: Option<&(LatentState, Observation)>,
    step: usize,
) -> Result<Prediction> {
    req.validate()?;
    let (latent, obs) = truth.ok_or(Error::MissingGroundTruth(step))?;
    let latent = latent.select(&req.labels())?;
    Ok(Prediction { observation: Some(obs.clone()), ..Prediction::deterministic(latent) })
}

impl Predictor for Oracle {
    fn id(&self) -> &str {
        "oracle"
    }

    fn predict(&mut self, req: &PredictionRequest, step: usize) -> Result<Prediction> {
        predict_oracle(req, step.checked_sub(1).and_then(|i| self.continuation.get(i)), step)
    }
}
