//! Safety predicates `φ`, horizon verdicts and confusion statistics.
//!
//! The positive class is "safe": a false positive is an unsafe run that was
//! predicted safe.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, PI};

use crate::envsim::{wrap_angle, EnvId, EnvParams, SimState};
use crate::error::{Error, Result};
use crate::metrics::angle_from_centroids;
use crate::render::{self, labels};
use crate::segment::LatentState;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "env", rename_all = "lowercase"))]
pub enum SafetySpec {
    /// Safe iff `|θ| < angle_limit` (radians).
    CartPole { angle_limit: f64 },
    /// Safe iff `x_min < d_x < x_max` (world units).
    Lander { x_min: f64, x_max: f64 },
}

impl SafetySpec {
    pub fn for_env(env: EnvId) -> Self {
        match env {
            EnvId::CartPole => SafetySpec::CartPole { angle_limit: FRAC_PI_4 },
            EnvId::Lander => SafetySpec::Lander { x_min: 8.0, x_max: 12.0 },
        }
    }

    pub fn env(&self) -> EnvId {
        match self {
            SafetySpec::CartPole { .. } => EnvId::CartPole,
            SafetySpec::Lander { .. } => EnvId::Lander,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SafetySpec::CartPole { angle_limit } if !(angle_limit > 0.0) => {
                Err(Error::InvalidParams("angle_limit must be positive".into()))
            }
            SafetySpec::Lander { x_min, x_max } if !(x_min < x_max) => {
                Err(Error::InvalidParams("x_min must be below x_max".into()))
            }
            _ => Ok(()),
        }
    }
}

/// State-based predicate on the ground truth.
pub fn phi_state(state: &SimState, spec: &SafetySpec) -> Result<bool> {
    match (state, spec) {
        (SimState::CartPole(s), SafetySpec::CartPole { angle_limit }) => {
            Ok(wrap_angle(s.pole_angle).abs() < *angle_limit)
        }
        (SimState::Lander(s), SafetySpec::Lander { x_min, x_max }) => Ok(*x_min < s.px && s.px < *x_max),
        _ => Err(Error::EnvMismatch { expected: spec.env(), found: state.env() }),
    }
}

/// Latent-based predicate: pole angle from the cart and pole centroids, or
/// the lander centroid mapped back to world units.
pub fn phi_latent(latent: &LatentState, spec: &SafetySpec, params: &EnvParams) -> Result<bool> {
    let need = |label: &str| latent.get(label).ok_or_else(|| Error::MissingObject(label.into()));
    match spec {
        SafetySpec::CartPole { angle_limit } => {
            let angle = angle_from_centroids(need(labels::CART)?, need(labels::POLE)?)?;
            Ok(angle.to_radians().abs() < *angle_limit)
        }
        SafetySpec::Lander { x_min, x_max } => {
            let (x, _) = render::pixel_to_world(need(labels::LANDER)?, params);
            Ok(*x_min < x && x < *x_max)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SafetyVerdict {
    pub predicted_safe: bool,
    pub actual_safe: bool,
    /// Steps `t+m ..= t+m+k`.
    pub per_step_predicted: Vec<bool>,
    pub per_step_actual: Vec<bool>,
    pub horizon: usize,
    pub input_length: usize,
}

/// Conjunction of `φ` over steps `t+m ..= t+m+k`: ground truth from states,
/// prediction from latents. `true_states` and `predicted` both hold `k+1`
/// entries, the first being the last observed step.
pub fn horizon_verdict(
    true_states: &[SimState],
    predicted: &[LatentState],
    spec: &SafetySpec,
    params: &EnvParams,
    k: usize,
    m: usize,
) -> Result<SafetyVerdict> {
    if true_states.len() < k + 1 || predicted.len() < k + 1 {
        return Err(Error::InvalidRequest(alloc::format!(
            "horizon {k} needs {} steps, got {} true and {} predicted",
            k + 1,
            true_states.len(),
            predicted.len()
        )));
    }
    let per_step_actual = true_states[..=k]
        .iter()
        .enumerate()
        .map(|(i, s)| phi_state(s, spec).map_err(|e| e.at_step(i)))
        .collect::<Result<Vec<_>>>()?;
    let per_step_predicted = predicted[..=k]
        .iter()
        .enumerate()
        .map(|(i, z)| phi_latent(z, spec, params).map_err(|e| e.at_step(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SafetyVerdict {
        predicted_safe: per_step_predicted.iter().all(|&b| b),
        actual_safe: per_step_actual.iter().all(|&b| b),
        per_step_predicted,
        per_step_actual,
        horizon: k,
        input_length: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// `None` when `2TP + FP + FN = 0`.
    pub f1: Option<f64>,
    /// `None` when there are no actually-unsafe cases.
    pub fpr: Option<f64>,
}

pub fn confusion_stats(verdicts: &[SafetyVerdict]) -> Result<ConfusionStats> {
    if verdicts.is_empty() {
        return Err(Error::Empty("verdicts"));
    }
    let mut s = ConfusionStats::default();
    for v in verdicts {
        match (v.predicted_safe, v.actual_safe) {
            (true, true) => s.tp += 1,
            (true, false) => s.fp += 1,
            (false, true) => s.fn_ += 1,
            (false, false) => s.tn += 1,
        }
    }
    let f1_den = 2 * s.tp + s.fp + s.fn_;
    s.f1 = (f1_den > 0).then(|| 2.0 * s.tp as f64 / f1_den as f64);
    s.fpr = (s.fp + s.tn > 0).then(|| s.fp as f64 / (s.fp + s.tn) as f64);
    Ok(s)
}

/// Default `|θ|` above which a cart-pole window counts as "falling".
pub const FALLING_THRESHOLD: f64 = PI / 12.0;

pub fn is_falling(state: &SimState, threshold: f64) -> bool {
    match state {
        SimState::CartPole(s) => wrap_angle(s.pole_angle).abs() > threshold,
        SimState::Lander(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{rollout, Action, CartPoleState, ControllerConfig, LanderState};
    use crate::render::{render, Palette};
    use crate::segment::{extract_latent, Centroid};
    use alloc::string::String;
    use alloc::vec;
    use proptest::prelude::*;

    fn cp(theta: f64) -> SimState {
        SimState::CartPole(CartPoleState { pole_angle: theta, ..Default::default() })
    }

    fn lander_at(px: f64) -> SimState {
        SimState::Lander(LanderState { px, py: 10.0, ..Default::default() })
    }

    fn verdict(predicted: bool, actual: bool) -> SafetyVerdict {
        SafetyVerdict {
            predicted_safe: predicted,
            actual_safe: actual,
            per_step_predicted: vec![predicted],
            per_step_actual: vec![actual],
            horizon: 0,
            input_length: 1,
        }
    }

    #[test]
    fn thresholds_are_strict() {
        let spec = SafetySpec::for_env(EnvId::CartPole);
        assert!(phi_state(&cp(0.0), &spec).unwrap());
        assert!(!phi_state(&cp(FRAC_PI_4), &spec).unwrap());
        assert!(!phi_state(&cp(-FRAC_PI_4), &spec).unwrap());
        assert!(phi_state(&cp(FRAC_PI_4 - 1e-12), &spec).unwrap());
        assert!(phi_state(&cp(2.0 * PI), &spec).unwrap());

        let spec = SafetySpec::for_env(EnvId::Lander);
        assert!(phi_state(&lander_at(10.0), &spec).unwrap());
        assert!(!phi_state(&lander_at(8.0), &spec).unwrap());
        assert!(!phi_state(&lander_at(12.0), &spec).unwrap());
        assert!(phi_state(&lander_at(11.999), &spec).unwrap());
        assert!(phi_state(&cp(0.0), &spec).is_err());
    }

    #[test]
    fn latent_phi_agrees_on_a_rendered_frame() {
        let (p, pal) = (EnvParams::default(), Palette::cartpole());
        let spec = SafetySpec::for_env(EnvId::CartPole);
        for theta in [0.1, -0.6, 0.9] {
            let z = extract_latent(&render(&cp(theta), &p, &pal, 0).unwrap(), &pal, 0).unwrap();
            assert_eq!(phi_latent(&z, &spec, &p).unwrap(), phi_state(&cp(theta), &spec).unwrap());
        }
        let cart_only = LatentState::new(0, [(String::from("cart"), Centroid::new(1.0, 1.0))]);
        assert!(matches!(phi_latent(&cart_only, &spec, &p), Err(Error::MissingObject(l)) if l == "pole"));
    }

    #[test]
    fn one_unsafe_intermediate_step_makes_the_horizon_unsafe() {
        let p = EnvParams::default();
        let pal = Palette::cartpole();
        let spec = SafetySpec::for_env(EnvId::CartPole);
        let states = [cp(0.0), cp(1.0), cp(0.0)];
        let latents: Vec<LatentState> =
            states.iter().map(|s| extract_latent(&render(s, &p, &pal, 0).unwrap(), &pal, 0).unwrap()).collect();
        let v = horizon_verdict(&states, &latents, &spec, &p, 2, 1).unwrap();
        assert!(!v.predicted_safe && !v.actual_safe);
        assert_eq!(v.per_step_actual, [true, false, true]);
        assert_eq!(v.per_step_predicted.len(), 3);

        let safe = [cp(0.0), cp(0.1), cp(0.0)];
        let v = horizon_verdict(&safe, &latents, &spec, &p, 1, 1).unwrap();
        assert!(v.actual_safe && !v.predicted_safe);
        assert!(horizon_verdict(&safe, &latents, &spec, &p, 3, 1).is_err());
    }

    #[test]
    fn lander_excursion_past_the_corridor_is_unsafe() {
        let (p, pal) = (EnvParams::default(), Palette::lander());
        let init = SimState::Lander(LanderState { px: 11.8, py: 15.0, vx: 0.4, ..Default::default() });
        let cfg = ControllerConfig::Replay { actions: vec![Action::FireRight; 80] };
        let ep = rollout(init, &cfg, 80, &p, &pal, 0).unwrap();
        let spec = SafetySpec::for_env(EnvId::Lander);
        let per_step: Vec<bool> = ep.states.iter().map(|s| phi_state(s, &spec).unwrap()).collect();
        let first_bad = per_step.iter().position(|&b| !b).expect("crosses 12");
        assert!(per_step[first_bad..].iter().any(|&b| b), "returns inside the corridor");
        assert!(per_step[0] && *per_step.last().unwrap());
        let latents: Vec<LatentState> = ep.observations.iter().map(|o| extract_latent(o, &pal, 0).unwrap()).collect();
        let v = horizon_verdict(&ep.states, &latents, &spec, &p, 80, 0).unwrap();
        assert!(!v.actual_safe);
    }

    #[test]
    fn confusion_counts() {
        let mut vs = Vec::new();
        vs.extend((0..8).map(|_| verdict(true, true)));
        vs.extend((0..2).map(|_| verdict(true, false)));
        vs.push(verdict(false, true));
        vs.extend((0..9).map(|_| verdict(false, false)));
        let s = confusion_stats(&vs).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_, s.tn), (8, 2, 1, 9));
        assert!((s.f1.unwrap() - 16.0 / 19.0).abs() < 1e-15);
        assert!((s.fpr.unwrap() - 2.0 / 11.0).abs() < 1e-15);

        let perfect = confusion_stats(&[verdict(true, true), verdict(false, false)]).unwrap();
        assert_eq!((perfect.f1, perfect.fpr), (Some(1.0), Some(0.0)));

        let always_safe = confusion_stats(&[verdict(true, true), verdict(true, false)]).unwrap();
        assert_eq!(always_safe.fpr, Some(1.0));

        let no_unsafe = confusion_stats(&[verdict(true, true)]).unwrap();
        assert_eq!(no_unsafe.fpr, None);
        let no_positive = confusion_stats(&[verdict(false, false)]).unwrap();
        assert_eq!(no_positive.f1, None);
        assert!(confusion_stats(&[]).is_err());
    }

    #[test]
    fn falling_split() {
        assert!(!is_falling(&cp(0.2), FALLING_THRESHOLD));
        assert!(is_falling(&cp(-0.3), FALLING_THRESHOLD));
        assert!(!is_falling(&lander_at(3.0), FALLING_THRESHOLD));
    }

    #[test]
    fn spec_validation() {
        assert!(SafetySpec::CartPole { angle_limit: 0.0 }.validate().is_err());
        assert!(SafetySpec::Lander { x_min: 12.0, x_max: 8.0 }.validate().is_err());
        assert!(SafetySpec::for_env(EnvId::Lander).validate().is_ok());
    }

    proptest! {
        #[test]
        fn predicted_safety_is_monotone_in_k(thetas in proptest::collection::vec(-1.2f64..1.2, 2..12)) {
            let p = EnvParams::default();
            let spec = SafetySpec::for_env(EnvId::CartPole);
            let states: Vec<SimState> = thetas.iter().map(|&t| cp(t)).collect();
            let latents: Vec<LatentState> = thetas
                .iter()
                .map(|&t| LatentState::new(0, [
                    (String::from("cart"), Centroid::new(0.0, 0.0)),
                    (String::from("pole"), Centroid::new(libm::sin(t), -libm::cos(t))),
                ]))
                .collect();
            for k in 0..states.len() - 1 {
                let short = horizon_verdict(&states, &latents, &spec, &p, k, 1).unwrap();
                let long = horizon_verdict(&states, &latents, &spec, &p, k + 1, 1).unwrap();
                prop_assert!(!long.predicted_safe || short.predicted_safe);
                prop_assert!(!long.actual_safe || short.actual_safe);
            }
        }

        #[test]
        fn confusion_stats_ignore_order(flags in proptest::collection::vec(any::<(bool, bool)>(), 1..40), seed in any::<u64>()) {
            let vs: Vec<SafetyVerdict> = flags.iter().map(|&(a, b)| verdict(a, b)).collect();
            let mut shuffled = vs.clone();
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(confusion_stats(&vs).unwrap(), confusion_stats(&shuffled).unwrap());
        }
    }
}
