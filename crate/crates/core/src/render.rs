//! Observation model `g`: rasterises a [`SimState`] into a solid-colour frame.
//!
//! Every pixel receives exactly one palette colour (no anti-aliasing), so the
//! exact-colour segmenter recovers each object's mask.
//!
//! Pixel coordinates are continuous `(x = column, y = row)` with integer values
//! at pixel indices. A `w`-wide axis-aligned box centred at `c` covers the
//! indices `c - w/2 <= j < c + w/2`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::envsim::{CartPoleState, EnvId, EnvParams, LanderState, SimState};
use crate::error::{Error, Result};
use crate::observation::{Observation, Rgb};
use crate::segment::Centroid;

/// Side length of the lander's square world, in world units.
pub const WORLD_SIZE: f64 = 20.0;
/// Cart positions in `[-CART_RANGE, CART_RANGE]` map onto the drawable track.
pub const CART_RANGE: f64 = 2.4;

pub const CART_WIDTH: f64 = 14.0;
pub const CART_HEIGHT: f64 = 8.0;
pub const POLE_WIDTH: f64 = 3.0;
pub const POLE_LENGTH: f64 = 30.0;
pub const LANDER_SIZE: f64 = 8.0;
pub const FLAG_WIDTH: f64 = 2.0;
pub const FLAG_HEIGHT: f64 = 8.0;

pub mod labels {
    pub const CART: &str = "cart";
    pub const POLE: &str = "pole";
    pub const LANDER: &str = "lander";
    pub const FLAG: &str = "flag";
    pub const UPPER_BG: &str = "upper_bg";
    pub const LOWER_BG: &str = "lower_bg";
}

/// Minimum channel-wise L∞ distance between any two palette colours.
pub const MIN_COLOR_DISTANCE: u8 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PaletteEntry {
    pub label: String,
    pub color: Rgb,
}

/// Object colours in canonical order; segmentation output follows this order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Palette {
    pub entries: Vec<PaletteEntry>,
}

impl Palette {
    pub fn new(entries: &[(&str, Rgb)]) -> Result<Self> {
        let palette = Palette {
            entries: entries
                .iter()
                .map(|(label, color)| PaletteEntry { label: (*label).into(), color: *color })
                .collect(),
        };
        palette.validate()?;
        Ok(palette)
    }

    pub fn cartpole() -> Self {
        Palette::new(&[
            (labels::CART, [40, 40, 40]),
            (labels::POLE, [200, 120, 40]),
            (labels::UPPER_BG, [255, 255, 255]),
            (labels::LOWER_BG, [90, 170, 90]),
        ])
        .expect("built-in palette is valid")
    }

    pub fn lander() -> Self {
        Palette::new(&[
            (labels::LANDER, [180, 60, 200]),
            (labels::FLAG, [240, 220, 0]),
            (labels::UPPER_BG, [10, 10, 40]),
            (labels::LOWER_BG, [150, 150, 150]),
        ])
        .expect("built-in palette is valid")
    }

    pub fn for_env(env: EnvId) -> Self {
        match env {
            EnvId::CartPole => Palette::cartpole(),
            EnvId::Lander => Palette::lander(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                if a.label == b.label {
                    return Err(Error::InvalidParams(alloc::format!("duplicate palette label '{}'", a.label)));
                }
                let dist = a.color.iter().zip(&b.color).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0);
                if dist < MIN_COLOR_DISTANCE {
                    return Err(Error::InvalidParams(alloc::format!(
                        "palette colours '{}' and '{}' are only {dist} apart",
                        a.label,
                        b.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn color(&self, label: &str) -> Option<Rgb> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.color)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    fn require(&self, label: &str) -> Result<Rgb> {
        self.color(label)
            .ok_or_else(|| Error::InvalidParams(alloc::format!("palette has no '{label}' colour")))
    }
}

/// First row of the lower background band (bottom 20% of the frame).
pub fn ground_row(height: usize) -> usize {
    height * 4 / 5
}

/// Horizontal pixel coordinate of the cart centre.
pub fn cart_center_x(cart_pos: f64, width: usize) -> f64 {
    let margin = width as f64 / 12.0;
    margin + (cart_pos + CART_RANGE) / (2.0 * CART_RANGE) * (width as f64 - 2.0 * margin)
}

/// Pixel rows reachable by the lander centre: `y = 20` puts the square on
/// the top row, `y = 0` rests it just above the flag.
pub fn lander_row_span(height: usize) -> (f64, f64) {
    let top = LANDER_SIZE / 2.0 - 0.5;
    let bottom = ground_row(height) as f64 - FLAG_HEIGHT - LANDER_SIZE / 2.0 - 0.5;
    (top, bottom)
}

/// Maps lander world coordinates onto continuous pixel coordinates.
/// Horizontally `[0, 20]` spans `[0, W-1]`; vertically it spans
/// [`lander_row_span`], world up being image up.
pub fn world_to_pixel(x: f64, y: f64, params: &EnvParams) -> (f64, f64) {
    let (sx, sy) = world_scale(params);
    let (top, _) = lander_row_span(params.height);
    (x * sx, top + (WORLD_SIZE - y) * sy)
}

/// Inverse of [`world_to_pixel`].
pub fn pixel_to_world(c: &Centroid, params: &EnvParams) -> (f64, f64) {
    let (sx, sy) = world_scale(params);
    let (top, _) = lander_row_span(params.height);
    (c.cx / sx, WORLD_SIZE - (c.cy - top) / sy)
}

/// Pixels per world unit along x and y.
pub fn world_scale(params: &EnvParams) -> (f64, f64) {
    let (top, bottom) = lander_row_span(params.height);
    ((params.width as f64 - 1.0) / WORLD_SIZE, (bottom - top) / WORLD_SIZE)
}

/// `y_t = g(x_t)`.
pub fn render(state: &SimState, params: &EnvParams, palette: &Palette, time_index: usize) -> Result<Observation> {
    if !state.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    params.validate()?;
    let mut canvas = Canvas::new(params.width, params.height);
    match state {
        SimState::CartPole(s) => draw_cartpole(&mut canvas, s, palette)?,
        SimState::Lander(s) => draw_lander(&mut canvas, s, params, palette)?,
    }
    let mut obs = canvas.obs;
    obs.time_index = time_index;
    obs.clipped = canvas.clipped;
    Ok(obs)
}

struct Canvas {
    obs: Observation,
    clipped: bool,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self { obs: Observation::filled(width, height, [0, 0, 0]), clipped: false }
    }

    fn put(&mut self, row: i64, col: i64, color: Rgb) {
        if row < 0 || col < 0 || row >= self.obs.height as i64 || col >= self.obs.width as i64 {
            self.clipped = true;
        } else {
            self.obs.set(row as usize, col as usize, color);
        }
    }

    fn rows(&mut self, from: usize, to: usize, color: Rgb) {
        for row in from..to.min(self.obs.height) {
            for col in 0..self.obs.width {
                self.obs.set(row, col, color);
            }
        }
    }

    /// Fills the box centred at `(cx, cy)`; returns its first (col, row).
    fn boxed(&mut self, cx: f64, cy: f64, w: f64, h: f64, color: Rgb) -> (i64, i64) {
        let col0 = libm::ceil(cx - w / 2.0) as i64;
        let row0 = libm::ceil(cy - h / 2.0) as i64;
        for row in row0..row0 + h as i64 {
            for col in col0..col0 + w as i64 {
                self.put(row, col, color);
            }
        }
        (col0, row0)
    }
}

fn draw_backgrounds(canvas: &mut Canvas, palette: &Palette) -> Result<usize> {
    let ground = ground_row(canvas.obs.height);
    canvas.rows(0, ground, palette.require(crate::render::labels::UPPER_BG)?);
    canvas.rows(ground, canvas.obs.height, palette.require(labels::LOWER_BG)?);
    Ok(ground)
}

fn draw_cartpole(canvas: &mut Canvas, s: &CartPoleState, palette: &Palette) -> Result<()> {
    let cart_color = palette.require(labels::CART)?;
    let pole_color = palette.require(labels::POLE)?;
    let ground = draw_backgrounds(canvas, palette)? as f64;

    let cx = cart_center_x(s.cart_pos, canvas.obs.width);
    let cy = ground - CART_HEIGHT / 2.0;
    let col0 = libm::ceil(cx - CART_WIDTH / 2.0);
    let row0 = libm::ceil(cy - CART_HEIGHT / 2.0);
    // The pole pivots about the cart's pixel centroid so that the
    // cart-to-pole centroid vector points along the pole.
    let pivot = (col0 + (CART_WIDTH - 1.0) / 2.0, row0 + (CART_HEIGHT - 1.0) / 2.0);
    let dir = (libm::sin(s.pole_angle), -libm::cos(s.pole_angle));
    let reach = POLE_LENGTH + POLE_WIDTH;
    let (c_min, c_max) = (libm::floor(pivot.0 - reach) as i64, libm::ceil(pivot.0 + reach) as i64);
    let (r_min, r_max) = (libm::floor(pivot.1 - reach) as i64, libm::ceil(pivot.1 + reach) as i64);
    for row in r_min..=r_max {
        for col in c_min..=c_max {
            let (vx, vy) = (col as f64 - pivot.0, row as f64 - pivot.1);
            let along = vx * dir.0 + vy * dir.1;
            let across = vx * -dir.1 + vy * dir.0;
            if (0.0..=POLE_LENGTH).contains(&along) && across.abs() <= POLE_WIDTH / 2.0 {
                canvas.put(row, col, pole_color);
            }
        }
    }
    canvas.boxed(cx, cy, CART_WIDTH, CART_HEIGHT, cart_color);
    Ok(())
}

fn draw_lander(canvas: &mut Canvas, s: &LanderState, params: &EnvParams, palette: &Palette) -> Result<()> {
    let lander_color = palette.require(labels::LANDER)?;
    let flag_color = palette.require(labels::FLAG)?;
    let ground = draw_backgrounds(canvas, palette)? as f64;

    let (flag_x, _) = world_to_pixel(params.lander.pad_x, 0.0, params);
    canvas.boxed(flag_x, ground - FLAG_HEIGHT / 2.0, FLAG_WIDTH, FLAG_HEIGHT, flag_color);
    let (x, y) = world_to_pixel(s.px, s.py, params);
    canvas.boxed(x, y, LANDER_SIZE, LANDER_SIZE, lander_color);
    Ok(())
}
