//! State- and image-level prediction metrics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::envsim::{EnvId, EnvParams};
use crate::error::{Error, Result};
use crate::observation::Observation;
use crate::render::{self, labels};
use crate::segment::{Centroid, LatentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl core::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(Norm::L1),
            "l2" | "L2" => Ok(Norm::L2),
            other => Err(Error::InvalidParams(alloc::format!("unknown norm '{other}'"))),
        }
    }
}

/// Centroid distance `‖b - a‖`.
pub fn centroid_distance(a: &Centroid, b: &Centroid, norm: Norm) -> f64 {
    let (dx, dy) = (b.cx - a.cx, b.cy - a.cy);
    match norm {
        Norm::L1 => dx.abs() + dy.abs(),
        Norm::L2 => libm::hypot(dx, dy),
    }
}

/// Mean squared difference over all pixels and channels, intensities in `[0, 1]`.
pub fn image_mse(y: &Observation, y_hat: &Observation) -> Result<f64> {
    y.same_dims(y_hat)?;
    let sum: f64 = y
        .pixels
        .iter()
        .zip(&y_hat.pixels)
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64) / 255.0;
            d * d
        })
        .sum();
    Ok(sum / y.pixels.len() as f64)
}

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn luma(obs: &Observation) -> impl Iterator<Item = f64> + '_ {
    obs.pixels
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
}

/// Single-window SSIM over the whole frame, on Rec. 601 luma in `[0, 1]`.
pub fn ssim_global(y: &Observation, y_hat: &Observation) -> Result<f64> {
    y.same_dims(y_hat)?;
    let n = (y.width * y.height) as f64;
    if n == 0.0 {
        return Err(Error::Empty("frame"));
    }
    let (mut sa, mut sb) = (0.0, 0.0);
    for (a, b) in luma(y).zip(luma(y_hat)) {
        sa += a;
        sb += b;
    }
    let (mu_a, mu_b) = (sa / n, sb / n);
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in luma(y).zip(luma(y_hat)) {
        var_a += (a - mu_a) * (a - mu_a);
        var_b += (b - mu_b) * (b - mu_b);
        cov += (a - mu_a) * (b - mu_b);
    }
    let (var_a, var_b, cov) = (var_a / n, var_b / n, cov / n);
    let ssim = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
    Ok(ssim.clamp(-1.0, 1.0))
}

/// Signed angle in degrees between the cart→pole vector and the upward
/// vertical, clockwise positive, in `(-180, 180]`. Image rows grow downward.
pub fn angle_from_centroids(cart: &Centroid, pole: &Centroid) -> Result<f64> {
    let (dx, dy) = (pole.cx - cart.cx, pole.cy - cart.cy);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    let deg = libm::atan2(dx, -dy).to_degrees();
    Ok(if deg <= -180.0 { deg + 360.0 } else { deg })
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(d: f64) -> f64 {
    let mut a = libm::fmod(d, 360.0);
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricConfig {
    pub norm: Norm,
    /// World units per pixel along (x, y); `[1, 1]` keeps pixel units.
    pub scale: [f64; 2],
    /// (cart, pole) labels for the angle error, when the scene has a pole.
    pub angle_pair: Option<(String, String)>,
}

impl MetricConfig {
    pub fn for_env(env: EnvId, params: &EnvParams, norm: Norm) -> Self {
        match env {
            EnvId::CartPole => MetricConfig {
                norm,
                scale: [1.0, 1.0],
                angle_pair: Some((labels::CART.into(), labels::POLE.into())),
            },
            EnvId::Lander => {
                let (sx, sy) = render::world_scale(params);
                MetricConfig { norm, scale: [1.0 / sx, 1.0 / sy], angle_pair: None }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub per_object_cd: BTreeMap<String, f64>,
    /// Absolute scaled (horizontal, vertical) centroid errors.
    pub per_object_axis: BTreeMap<String, [f64; 2]>,
    pub mse: f64,
    pub ssim: f64,
    pub angle_error_deg: Option<f64>,
    pub norm_used: Norm,
    pub scale: [f64; 2],
}

/// Scores one predicted step against ground truth.
pub fn report(
    true_latent: &LatentState,
    pred_latent: &LatentState,
    true_obs: &Observation,
    pred_obs: &Observation,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let mut differing: Vec<String> = true_latent
        .labels()
        .filter(|l| pred_latent.get(l).is_none())
        .chain(pred_latent.labels().filter(|l| true_latent.get(l).is_none()))
        .map(String::from)
        .collect();
    if !differing.is_empty() {
        differing.sort();
        return Err(Error::InconsistentLabels(differing));
    }

    let mut per_object_cd = BTreeMap::new();
    let mut per_object_axis = BTreeMap::new();
    for entry in &true_latent.entries {
        let t = entry.centroid;
        let p = pred_latent.get(&entry.label).expect("label sets checked");
        let scaled = |c: &Centroid| Centroid::new(c.cx * cfg.scale[0], c.cy * cfg.scale[1]);
        let (ts, ps) = (scaled(&t), scaled(p));
        per_object_cd.insert(entry.label.clone(), centroid_distance(&ts, &ps, cfg.norm));
        per_object_axis.insert(entry.label.clone(), [(ps.cx - ts.cx).abs(), (ps.cy - ts.cy).abs()]);
    }

    let angle_error_deg = match &cfg.angle_pair {
        Some((cart, pole)) => {
            let angle = |z: &LatentState| -> Result<f64> {
                let c = z.get(cart).ok_or_else(|| Error::MissingObject(cart.clone()))?;
                let p = z.get(pole).ok_or_else(|| Error::MissingObject(pole.clone()))?;
                angle_from_centroids(c, p)
            };
            Some(wrap_degrees(angle(pred_latent)? - angle(true_latent)?).abs())
        }
        None => None,
    };

    Ok(MetricReport {
        per_object_cd,
        per_object_axis,
        mse: image_mse(true_obs, pred_obs)?,
        ssim: ssim_global(true_obs, pred_obs)?,
        angle_error_deg,
        norm_used: cfg.norm,
        scale: cfg.scale,
    })
}
