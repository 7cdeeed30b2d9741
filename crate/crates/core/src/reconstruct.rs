//! Output disassembly: rebuilds the next frame by moving each object's pixels
//! by its predicted centroid displacement, and the closed-loop rollout that
//! feeds rebuilt frames back to the controller.

use alloc::string::String;
use alloc::vec::Vec;

use crate::envsim::{control, Action, ControlContext, ControllerConfig, EnvId, EnvParams};
use crate::error::{Error, Result};
use crate::observation::Observation;
use crate::predictor::{Prediction, PredictionRequest, Predictor, PromptFragments, SamplingParams};
use crate::render::Palette;
use crate::segment::{extract_latent, filter_static, segment, LatentEntry, LatentState, STATIC_EPS};

/// Integer pixel shift applied to one object.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Displacement {
    pub label: String,
    pub dx: i64,
    pub dy: i64,
    /// Some destination fell outside the frame and its swap was skipped.
    pub clipped: bool,
}

/// Moves every object of `cur_obs` by `round(pred - cur)`.
///
/// Objects are processed in `pred` order. Each object's mask is taken from
/// the working frame at the time it is processed, and each of its pixels is
/// swapped with the pixel `δ` away, leading edge first. Swaps whose
/// destination lies outside the frame are skipped.
pub fn disassemble(
    pred: &LatentState,
    cur: &LatentState,
    cur_obs: &Observation,
    palette: &Palette,
) -> Result<(Observation, Vec<Displacement>)> {
    let mut missing: Vec<String> = pred
        .labels()
        .filter(|l| cur.get(l).is_none())
        .chain(cur.labels().filter(|l| pred.get(l).is_none()))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::InconsistentLabels(missing));
    }

    let mut frame = cur_obs.clone();
    let mut log = Vec::with_capacity(pred.entries.len());
    for entry in &pred.entries {
        let from = cur.get(&entry.label).expect("label sets checked");
        let dx = libm::round(entry.centroid.cx - from.cx);
        let dy = libm::round(entry.centroid.cy - from.cy);
        if !(dx.is_finite() && dy.is_finite()) {
            return Err(Error::NonFinite("predicted centroid"));
        }
        let (dx, dy) = (dx as i64, dy as i64);
        let mut clipped = false;
        if dx != 0 || dy != 0 {
            let mask = segment(&frame, palette)?
                .into_iter()
                .find(|m| m.label == entry.label)
                .ok_or_else(|| Error::MissingObject(entry.label.clone()))?;
            let mut pixels: Vec<(usize, usize)> = mask.pixels().collect();
            pixels.sort_by_key(|&(r, c)| core::cmp::Reverse(c as i64 * dx + r as i64 * dy));
            for (r, c) in pixels {
                let (tr, tc) = (r as i64 + dy, c as i64 + dx);
                if tr < 0 || tc < 0 || tr >= frame.height as i64 || tc >= frame.width as i64 {
                    clipped = true;
                    continue;
                }
                frame.swap((r, c), (tr as usize, tc as usize));
            }
        }
        log.push(Displacement { label: entry.label.clone(), dx, dy, clipped });
    }
    Ok((frame, log))
}

/// Fixed inputs of a closed-loop rollout.
#[derive(Debug, Clone)]
pub struct RolloutSetup<'a> {
    pub env: EnvId,
    pub palette: &'a Palette,
    pub params: &'a EnvParams,
    pub controller: &'a ControllerConfig,
    pub seed: u64,
    pub fragments: PromptFragments,
    pub sampling: SamplingParams,
    pub static_eps: f64,
}

impl<'a> RolloutSetup<'a> {
    pub fn new(env: EnvId, palette: &'a Palette, params: &'a EnvParams, controller: &'a ControllerConfig) -> Self {
        Self {
            env,
            palette,
            params,
            controller,
            seed: 0,
            fragments: PromptFragments::default(),
            sampling: SamplingParams::default(),
            static_eps: STATIC_EPS,
        }
    }
}

/// `k` predicted steps following an observed window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictedTrajectory {
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    /// Full predicted latents. Dropped objects carry their last position
    /// unless the predictor supplied whole frames.
    pub latents: Vec<LatentState>,
    pub observations: Vec<Observation>,
    /// Controller action on each predicted frame.
    pub actions: Vec<Action>,
    pub displacements: Vec<Vec<Displacement>>,
    pub attempts: Vec<usize>,
    pub raw_texts: Vec<String>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutFailure {
    /// 1-based horizon step that failed (0 = setup).
    pub step: usize,
    pub error: Error,
    pub partial: PredictedTrajectory,
}

/// Rolls the surrogate forward `k` steps from `prefix_obs` (`m + 1` frames)
/// and `prefix_actions` (the `m + 1` actions taken on them).
///
/// The kept/dropped split is computed once on the observed window. With a
/// single observed frame nothing can be shown static and every object is kept.
pub fn closed_loop_rollout<P: Predictor + ?Sized>(
    prefix_obs: &[Observation],
    prefix_actions: &[Action],
    predictor: &mut P,
    k: usize,
    setup: &RolloutSetup<'_>,
) -> core::result::Result<PredictedTrajectory, RolloutFailure> {
    let mut traj = PredictedTrajectory::default();
    let fail = |step: usize, error: Error, partial: &PredictedTrajectory| RolloutFailure {
        step,
        error,
        partial: partial.clone(),
    };
    if prefix_obs.is_empty() || prefix_obs.len() != prefix_actions.len() || k == 0 {
        let err = Error::InvalidRequest(alloc::format!(
            "prefix of {} frames / {} actions with horizon {k}",
            prefix_obs.len(),
            prefix_actions.len()
        ));
        return Err(fail(0, err, &traj));
    }
    let window = prefix_obs.len();
    let mut frames: Vec<Observation> = prefix_obs.to_vec();
    let mut actions: Vec<Action> = prefix_actions.to_vec();
    let mut latents = frames
        .iter()
        .map(|o| extract_latent(o, setup.palette, o.time_index))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| fail(0, e, &traj))?;
    let (kept, dropped) = if window >= 2 {
        filter_static(&latents, setup.static_eps).map_err(|e| fail(0, e, &traj))?
    } else {
        (latents[0].label_vec(), Vec::new())
    };
    traj.kept = kept.clone();
    traj.dropped = dropped;

    let ctx = ControlContext {
        env: setup.env,
        config: setup.controller,
        palette: setup.palette,
        params: setup.params,
        seed: setup.seed,
    };
    for j in 1..=k {
        let mut step = || -> Result<(LatentState, Observation, Vec<Displacement>, Prediction)> {
            let cur = latents.last().expect("window is non-empty");
            let cur_obs = frames.last().expect("window is non-empty");
            let req = PredictionRequest {
                latents: latents[latents.len() - window..]
                    .iter()
                    .map(|z| z.select(&kept))
                    .collect::<Result<Vec<_>>>()?,
                actions: actions[actions.len() - window..].to_vec(),
                fragments: setup.fragments.clone(),
                sampling: setup.sampling,
            };
            let prediction = predictor.predict(&req, j)?;
            if prediction.latent.label_vec() != kept {
                return Err(Error::InconsistentLabels(prediction.latent.label_vec()));
            }
            let full = LatentState {
                time_index: cur.time_index + 1,
                entries: cur
                    .entries
                    .iter()
                    .map(|e| LatentEntry {
                        label: e.label.clone(),
                        centroid: *prediction.latent.get(&e.label).unwrap_or(&e.centroid),
                    })
                    .collect(),
            };
            let (full, mut obs, log) = match &prediction.observation {
                // A supplied frame is authoritative for every object, kept or not.
                Some(obs) => (extract_latent(obs, setup.palette, full.time_index)?, obs.clone(), Vec::new()),
                None => {
                    let (obs, log) = disassemble(&full, cur, cur_obs, setup.palette)?;
                    (full, obs, log)
                }
            };
            obs.time_index = full.time_index;
            Ok((full, obs, log, prediction))
        };
        let (full, obs, log, prediction) = step().map_err(|e| fail(j, e, &traj))?;
        let observed = extract_latent(&obs, setup.palette, obs.time_index).map_err(|e| fail(j, e, &traj))?;
        frames.push(obs.clone());
        let action = control(&frames, &ctx).map_err(|e| fail(j, e, &traj))?;
        latents.push(observed);
        actions.push(action);

        traj.latents.push(full);
        traj.observations.push(obs);
        traj.actions.push(action);
        traj.displacements.push(log);
        traj.attempts.push(prediction.attempts);
        traj.raw_texts.push(prediction.raw_text);
        traj.fallback |= prediction.fallback;
    }
    Ok(traj)
}
