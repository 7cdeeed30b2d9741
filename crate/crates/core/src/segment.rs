//! Segmentation `Ω` and centroid latents.
//!
//! The segmenter assigns each pixel to the palette entry with exactly its
//! colour. Masks come out in palette order, are pairwise disjoint and cover
//! the frame.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::observation::{Observation, Rgb};
use crate::render::Palette;

/// Boolean object mask `ω`, row-major, same size as its source frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMask {
    pub label: String,
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl SegmentMask {
    /// Builds a mask, rejecting wrong buffer sizes and masks with no set pixel.
    pub fn new(label: impl Into<String>, width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        let label = label.into();
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (bits.len() / height.max(1), height),
            });
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::EmptyMask(label));
        }
        Ok(Self { label, width, height, bits })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `(row, col)` of every set pixel in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }
}

/// Centre of mass of a mask in pixel index units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Centroid {
    /// column axis
    pub cx: f64,
    /// row axis
    pub cy: f64,
}

impl Centroid {
    pub fn new(cx: f64, cy: f64) -> Self {
        Self { cx, cy }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentEntry {
    pub label: String,
    pub centroid: Centroid,
}

/// Latent state `z_t`: labelled centroids in canonical palette order.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentState {
    pub time_index: usize,
    pub entries: Vec<LatentEntry>,
}

impl LatentState {
    pub fn new(time_index: usize, entries: impl IntoIterator<Item = (String, Centroid)>) -> Self {
        Self {
            time_index,
            entries: entries.into_iter().map(|(label, centroid)| LatentEntry { label, centroid }).collect(),
        }
    }

    pub fn get(&self, label: &str) -> Option<&Centroid> {
        self.entries.iter().find(|e| e.label == label).map(|e| &e.centroid)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    pub fn label_vec(&self) -> Vec<String> {
        self.labels().map(String::from).collect()
    }

    /// Restricts the latent to `labels`, in the order given.
    pub fn select(&self, labels: &[String]) -> Result<LatentState> {
        let entries = labels
            .iter()
            .map(|l| {
                self.get(l)
                    .map(|c| LatentEntry { label: l.clone(), centroid: *c })
                    .ok_or_else(|| Error::MissingObject(l.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LatentState { time_index: self.time_index, entries })
    }

    /// Flattened `[cx0, cy0, cx1, cy1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| [e.centroid.cx, e.centroid.cy]).collect()
    }
}

/// Calls `f(row, col, palette_index)` for every pixel in row-major order.
fn classify(obs: &Observation, palette: &Palette, mut f: impl FnMut(usize, usize, usize)) -> Result<()> {
    let colors: Vec<Rgb> = palette.entries.iter().map(|e| e.color).collect();
    let mut last = 0usize;
    let mut pixels = obs.pixels.chunks_exact(3);
    for row in 0..obs.height {
        for col in 0..obs.width {
            let px = pixels.next().expect("buffer holds width * height pixels");
            let color = [px[0], px[1], px[2]];
            if colors.get(last) != Some(&color) {
                last = colors.iter().position(|&c| c == color).ok_or(Error::UnknownColor { row, col, color })?;
            }
            f(row, col, last);
        }
    }
    Ok(())
}

/// Exact-colour segmentation of a rendered frame.
pub fn segment(obs: &Observation, palette: &Palette) -> Result<Vec<SegmentMask>> {
    let n = obs.width * obs.height;
    let mut bits: Vec<Vec<bool>> = vec![Vec::new(); palette.entries.len()];
    classify(obs, palette, |row, col, idx| {
        if bits[idx].is_empty() {
            bits[idx] = vec![false; n];
        }
        bits[idx][row * obs.width + col] = true;
    })?;
    Ok(palette
        .entries
        .iter()
        .zip(bits)
        .filter(|(_, b)| !b.is_empty())
        .map(|(e, b)| SegmentMask { label: e.label.clone(), width: obs.width, height: obs.height, bits: b })
        .collect())
}

/// Mean column and row index of the set pixels.
pub fn centroid(mask: &SegmentMask) -> Result<Centroid> {
    let (mut sx, mut sy, mut count) = (0.0f64, 0.0f64, 0usize);
    for (row, col) in mask.pixels() {
        sx += col as f64;
        sy += row as f64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask(mask.label.clone()));
    }
    Ok(Centroid { cx: sx / count as f64, cy: sy / count as f64 })
}

/// `segment` followed by `centroid` on each mask, without building the masks.
pub fn extract_latent(obs: &Observation, palette: &Palette, time_index: usize) -> Result<LatentState> {
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); palette.entries.len()];
    classify(obs, palette, |row, col, idx| {
        let s = &mut sums[idx];
        s.0 += col as f64;
        s.1 += row as f64;
        s.2 += 1;
    })?;
    let entries = palette
        .entries
        .iter()
        .zip(sums)
        .filter(|(_, s)| s.2 > 0)
        .map(|(e, (sx, sy, n))| LatentEntry {
            label: e.label.clone(),
            centroid: Centroid { cx: sx / n as f64, cy: sy / n as f64 },
        })
        .collect();
    Ok(LatentState { time_index, entries })
}

/// Default tolerance for "centroid never moved", pixels.
pub const STATIC_EPS: f64 = 0.5;

/// Splits labels into (kept, dropped): a label is dropped when its centroid
/// never leaves the L∞ ball of radius `eps` around its first position.
pub fn filter_static(latents: &[LatentState], eps: f64) -> Result<(Vec<String>, Vec<String>)> {
    let first = latents.first().ok_or(Error::Empty("latent sequence"))?;
    if latents.len() < 2 {
        return Err(Error::InvalidRequest("filter_static needs at least two latents".into()));
    }
    let labels = first.label_vec();
    let mut differing: Vec<String> = Vec::new();
    for z in &latents[1..] {
        for l in z.labels().filter(|l| !labels.iter().any(|x| x == l)) {
            differing.push(l.into());
        }
        for l in labels.iter().filter(|l| z.get(l).is_none()) {
            differing.push(l.clone());
        }
    }
    if !differing.is_empty() {
        differing.sort();
        differing.dedup();
        return Err(Error::InconsistentLabels(differing));
    }

    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for entry in &first.entries {
        let origin = entry.centroid;
        let moved = latents[1..].iter().any(|z| {
            let c = z.get(&entry.label).expect("labels checked above");
            (c.cx - origin.cx).abs().max((c.cy - origin.cy).abs()) > eps
        });
        if moved { &mut kept } else { &mut dropped }.push(entry.label.clone());
    }
    Ok((kept, dropped))
}
