//! Desk-scale dynamics for the two benchmark systems, image-based controllers
//! and closed-loop episode generation.
//!
//! Cart-pole integrates the classical inverted-pendulum equations with
//! semi-implicit Euler (velocities first, positions from the new velocities).
//! The lander is a planar point mass with tilt, integrated velocity-first with
//! positions advanced by the previous velocity. Both are deterministic: all
//! transcendental functions come from `libm`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::angle_from_centroids;
use crate::observation::Observation;
use crate::render::{self, labels, Palette};
use crate::segment::extract_latent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum EnvId {
    CartPole,
    Lander,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::CartPole => "cartpole",
            EnvId::Lander => "lander",
        }
    }

    pub fn actions(self) -> &'static [Action] {
        match self {
            EnvId::CartPole => &[Action::PushLeft, Action::PushRight],
            EnvId::Lander => &[Action::Noop, Action::FireLeft, Action::FireMain, Action::FireRight],
        }
    }
}

impl core::str::FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" | "cart-pole" | "cart_pole" => Ok(EnvId::CartPole),
            "lander" | "lunar-lander" | "lunar_lander" => Ok(EnvId::Lander),
            other => Err(Error::InvalidParams(alloc::format!("unknown environment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CartPoleState {
    /// meters
    pub cart_pos: f64,
    pub cart_vel: f64,
    /// radians, 0 = upright, positive = clockwise (leaning right)
    pub pole_angle: f64,
    pub pole_angvel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LanderState {
    /// world units in [0, 20]
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    /// radians, positive = clockwise
    pub tilt: f64,
    pub tilt_vel: f64,
}

/// Ground-truth physical state `x_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "env", rename_all = "lowercase"))]
pub enum SimState {
    CartPole(CartPoleState),
    Lander(LanderState),
}

impl SimState {
    pub fn env(&self) -> EnvId {
        match self {
            SimState::CartPole(_) => EnvId::CartPole,
            SimState::Lander(_) => EnvId::Lander,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            SimState::CartPole(s) => alloc::vec![s.cart_pos, s.cart_vel, s.pole_angle, s.pole_angvel],
            SimState::Lander(s) => alloc::vec![s.px, s.py, s.vx, s.vy, s.tilt, s.tilt_vel],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Discrete action `u_t`. Each environment uses its own subset, in the
/// order given by [`EnvId::actions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Action {
    PushLeft,
    PushRight,
    Noop,
    /// Left-side thruster: pushes the lander right and spins it clockwise.
    FireLeft,
    FireMain,
    /// Right-side thruster: pushes the lander left and spins it anticlockwise.
    FireRight,
}

impl Action {
    pub fn env(self) -> EnvId {
        match self {
            Action::PushLeft | Action::PushRight => EnvId::CartPole,
            _ => EnvId::Lander,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::PushLeft => "PushLeft",
            Action::PushRight => "PushRight",
            Action::Noop => "Noop",
            Action::FireLeft => "FireLeft",
            Action::FireMain => "FireMain",
            Action::FireRight => "FireRight",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub force: f64,
    pub dt: f64,
    /// The cart stops dead at `±track_limit` meters.
    pub track_limit: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            dt: 0.02,
            track_limit: 2.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LanderParams {
    /// Downward acceleration magnitude, wu/s².
    pub gravity: f64,
    pub main_thrust: f64,
    pub side_tilt_accel: f64,
    pub side_lateral_accel: f64,
    pub dt: f64,
    /// World x of the landing pad flag.
    pub pad_x: f64,
}

impl Default for LanderParams {
    fn default() -> Self {
        Self {
            gravity: 1.0,
            main_thrust: 2.0,
            side_tilt_accel: 0.6,
            side_lateral_accel: 0.2,
            dt: 0.05,
            pad_x: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EnvParams {
    pub cartpole: CartPoleParams,
    pub lander: LanderParams,
    /// Frame width `W` in pixels.
    pub width: usize,
    /// Frame height `L` in pixels.
    pub height: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            cartpole: CartPoleParams::default(),
            lander: LanderParams::default(),
            width: 96,
            height: 96,
        }
    }
}

/// Smallest frame side that fits every sprite.
pub const MIN_FRAME: usize = 32;

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let dts = [("cartpole.dt", self.cartpole.dt), ("lander.dt", self.lander.dt)];
        for (name, dt) in dts {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::InvalidParams(alloc::format!("{name} must be positive, got {dt}")));
            }
        }
        if self.width < MIN_FRAME || self.height < MIN_FRAME {
            return Err(Error::InvalidParams(alloc::format!(
                "frame must be at least {MIN_FRAME}x{MIN_FRAME} pixels, got {}x{}",
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    pub fn dt(&self, env: EnvId) -> f64 {
        match env {
            EnvId::CartPole => self.cartpole.dt,
            EnvId::Lander => self.lander.dt,
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = libm::fmod(theta, 2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// One transition `x_{t+1} = f(x_t, u_t)`.
pub fn step(state: &SimState, action: Action, params: &EnvParams) -> Result<SimState> {
    if action.env() != state.env() {
        return Err(Error::EnvMismatch { expected: state.env(), found: action.env() });
    }
    if !state.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    params.validate()?;
    let next = match *state {
        SimState::CartPole(s) => SimState::CartPole(step_cartpole(s, action, &params.cartpole)),
        SimState::Lander(s) => SimState::Lander(step_lander(s, action, &params.lander)),
    };
    if !next.is_finite() {
        return Err(Error::NonFinite("next state"));
    }
    Ok(next)
}

fn step_cartpole(s: CartPoleState, action: Action, p: &CartPoleParams) -> CartPoleState {
    let force = if action == Action::PushRight { p.force } else { -p.force };
    let total_mass = p.cart_mass + p.pole_mass;
    let (sin, cos) = (libm::sin(s.pole_angle), libm::cos(s.pole_angle));

    let temp = (force + p.pole_mass * p.half_length * s.pole_angvel * s.pole_angvel * sin) / total_mass;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
    let x_acc = temp - p.pole_mass * p.half_length * theta_acc * cos / total_mass;

    let mut cart_vel = s.cart_vel + p.dt * x_acc;
    let mut cart_pos = s.cart_pos + p.dt * cart_vel;
    let pole_angvel = s.pole_angvel + p.dt * theta_acc;
    let pole_angle = s.pole_angle + p.dt * pole_angvel;

    if cart_pos.abs() > p.track_limit {
        cart_pos = cart_pos.signum() * p.track_limit;
        if cart_vel * cart_pos > 0.0 {
            cart_vel = 0.0;
        }
    }
    CartPoleState { cart_pos, cart_vel, pole_angle, pole_angvel }
}

fn step_lander(s: LanderState, action: Action, p: &LanderParams) -> LanderState {
    let (mut ax, mut ay, mut tilt_acc) = (0.0, -p.gravity, 0.0);
    match action {
        Action::FireMain => {
            ax += p.main_thrust * libm::sin(s.tilt);
            ay += p.main_thrust * libm::cos(s.tilt);
        }
        Action::FireLeft => {
            ax += p.side_lateral_accel;
            tilt_acc += p.side_tilt_accel;
        }
        Action::FireRight => {
            ax -= p.side_lateral_accel;
            tilt_acc -= p.side_tilt_accel;
        }
        _ => {}
    }
    let mut next = LanderState {
        vx: s.vx + ax * p.dt,
        vy: s.vy + ay * p.dt,
        tilt_vel: s.tilt_vel + tilt_acc * p.dt,
        px: s.px + s.vx * p.dt,
        py: s.py + s.vy * p.dt,
        tilt: s.tilt + s.tilt_vel * p.dt,
    };
    clamp_axis(&mut next.px, &mut next.vx);
    clamp_axis(&mut next.py, &mut next.vy);
    next
}

fn clamp_axis(pos: &mut f64, vel: &mut f64) {
    if *pos < 0.0 {
        *pos = 0.0;
        *vel = vel.max(0.0);
    } else if *pos > render::WORLD_SIZE {
        *pos = render::WORLD_SIZE;
        *vel = vel.min(0.0);
    }
}

/// Gains of the built-in image-based controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HeuristicGains {
    pub k_theta: f64,
    pub k_omega: f64,
    /// The lander fires its main engine while descending faster than this (wu/s, negative).
    pub v_limit: f64,
    pub target_x: f64,
    /// Half-width of the band around `target_x` where side thrusters stay off.
    pub deadband: f64,
}

impl Default for HeuristicGains {
    fn default() -> Self {
        Self { k_theta: 1.0, k_omega: 0.2, v_limit: -0.3, target_x: 10.0, deadband: 0.5 }
    }
}

/// Image-based controller `h`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum ControllerConfig {
    /// PD rule for cart-pole, descent limiter plus steering for the lander.
    Heuristic(HeuristicGains),
    Replay { actions: Vec<Action> },
    /// Uniform draws from a generator keyed on (seed, step).
    Random,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig::Heuristic(HeuristicGains::default())
    }
}

impl ControllerConfig {
    pub fn id(&self) -> &'static str {
        match self {
            ControllerConfig::Heuristic(_) => "heuristic",
            ControllerConfig::Replay { .. } => "replay",
            ControllerConfig::Random => "random",
        }
    }
}

/// Everything a controller needs besides the frames.
#[derive(Debug, Clone, Copy)]
pub struct ControlContext<'a> {
    pub env: EnvId,
    pub config: &'a ControllerConfig,
    pub palette: &'a Palette,
    pub params: &'a EnvParams,
    pub seed: u64,
}

/// `u_t = h(y_0..y_t)`; only the last two frames are inspected.
pub fn control(history: &[Observation], ctx: &ControlContext<'_>) -> Result<Action> {
    let current = history.last().ok_or(Error::Empty("observation history"))?;
    let t = history.len() - 1;
    match ctx.config {
        ControllerConfig::Replay { actions } => {
            let action = *actions.get(t).ok_or(Error::ReplayExhausted(t))?;
            if action.env() != ctx.env {
                return Err(Error::EnvMismatch { expected: ctx.env, found: action.env() });
            }
            Ok(action)
        }
        ControllerConfig::Random => {
            let actions = ctx.env.actions();
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            Ok(actions[(rng.next_u32() as usize) % actions.len()])
        }
        ControllerConfig::Heuristic(gains) => {
            let previous = (history.len() >= 2).then(|| &history[history.len() - 2]);
            match ctx.env {
                EnvId::CartPole => cartpole_pd(current, previous, gains, ctx),
                EnvId::Lander => lander_heuristic(current, previous, gains, ctx),
            }
        }
    }
}

fn estimate_pole_angle(obs: &Observation, palette: &Palette) -> Result<f64> {
    let latent = extract_latent(obs, palette, obs.time_index)?;
    let cart = latent.get(labels::CART).ok_or_else(|| Error::MissingObject(labels::CART.into()))?;
    let pole = latent.get(labels::POLE).ok_or_else(|| Error::MissingObject(labels::POLE.into()))?;
    Ok(angle_from_centroids(cart, pole)?.to_radians())
}

fn cartpole_pd(
    current: &Observation,
    previous: Option<&Observation>,
    gains: &HeuristicGains,
    ctx: &ControlContext<'_>,
) -> Result<Action> {
    let theta = estimate_pole_angle(current, ctx.palette)?;
    let omega = match previous {
        Some(prev) => wrap_angle(theta - estimate_pole_angle(prev, ctx.palette)?) / ctx.params.cartpole.dt,
        None => 0.0,
    };
    let drive = gains.k_theta * theta + gains.k_omega * omega;
    Ok(if drive > 0.0 { Action::PushRight } else { Action::PushLeft })
}

fn lander_position(obs: &Observation, ctx: &ControlContext<'_>) -> Result<(f64, f64)> {
    let latent = extract_latent(obs, ctx.palette, obs.time_index)?;
    let c = latent
        .get(labels::LANDER)
        .ok_or_else(|| Error::MissingObject(labels::LANDER.into()))?;
    Ok(render::pixel_to_world(c, ctx.params))
}

fn lander_heuristic(
    current: &Observation,
    previous: Option<&Observation>,
    gains: &HeuristicGains,
    ctx: &ControlContext<'_>,
) -> Result<Action> {
    let (x, y) = lander_position(current, ctx)?;
    let vy = match previous {
        Some(prev) => (y - lander_position(prev, ctx)?.1) / ctx.params.lander.dt,
        None => 0.0,
    };
    Ok(if vy < gains.v_limit {
        Action::FireMain
    } else if x < gains.target_x - gains.deadband {
        Action::FireLeft
    } else if x > gains.target_x + gains.deadband {
        Action::FireRight
    } else {
        Action::Noop
    })
}

/// A recorded closed-loop trajectory: `states.len() == observations.len() == actions.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub env: EnvId,
    pub seed: u64,
    pub controller: ControllerConfig,
    pub states: Vec<SimState>,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.observations.len() || self.states.len() != self.actions.len() + 1 {
            return Err(Error::InvalidParams(alloc::format!(
                "episode has {} states, {} observations, {} actions",
                self.states.len(),
                self.observations.len(),
                self.actions.len()
            )));
        }
        if let Some(bad) = self.states.iter().find(|s| s.env() != self.env) {
            return Err(Error::EnvMismatch { expected: self.env, found: bad.env() });
        }
        if let Some(bad) = self.actions.iter().find(|a| a.env() != self.env) {
            return Err(Error::EnvMismatch { expected: self.env, found: bad.env() });
        }
        Ok(())
    }
}

/// Runs `render -> control -> step` for `steps` transitions.
pub fn rollout(
    init: SimState,
    controller: &ControllerConfig,
    steps: usize,
    params: &EnvParams,
    palette: &Palette,
    seed: u64,
) -> Result<Episode> {
    if steps == 0 {
        return Err(Error::InvalidParams("rollout needs at least one step".into()));
    }
    params.validate()?;
    let env = init.env();
    let ctx = ControlContext { env, config: controller, palette, params, seed };
    let mut states = Vec::with_capacity(steps + 1);
    let mut observations = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    let mut state = init;
    for t in 0..steps {
        observations.push(render::render(&state, params, palette, t).map_err(|e| e.at_step(t))?);
        states.push(state);
        let action = control(&observations, &ctx).map_err(|e| e.at_step(t))?;
        state = step(&state, action, params).map_err(|e| e.at_step(t))?;
        actions.push(action);
    }
    observations.push(render::render(&state, params, palette, steps).map_err(|e| e.at_step(steps))?);
    states.push(state);
    Ok(Episode { env, seed, controller: controller.clone(), states, observations, actions })
}
