//! Run-length encoded mask container for segmentations produced outside
//! the renderer. Layout is described in `docs/mask-format.md`.

use std::path::Path;

use fwm_core::error::Error as CoreError;
use fwm_core::segment::{centroid, Centroid, LatentState, SegmentMask};
use serde::{Deserialize, Serialize};

pub const MASK_FORMAT: &str = "fwm-masks/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskContainer {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub masks: Vec<EncodedMask>,
}

/// Each row alternates false/true runs, starting with a (possibly empty)
/// false run; the runs of a row sum to `width`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedMask {
    pub label: String,
    pub rows: Vec<Vec<usize>>,
}

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("cannot read mask file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed mask container: {0}")]
    Malformed(String),
    #[error("mask '{label}': {detail}")]
    Dimension { label: String, detail: String },
    #[error("mask '{0}' has no true pixels")]
    Empty(String),
}

impl MaskError {
    pub fn kind(&self) -> &'static str {
        match self {
            MaskError::Io(_) => "io",
            MaskError::Malformed(_) => "malformed",
            MaskError::Dimension { .. } => "dimension_mismatch",
            MaskError::Empty(_) => "empty_mask",
        }
    }
}

pub fn encode_row(bits: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &b in bits {
        if b != current {
            runs.push(len);
            current = b;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

fn decode_row(runs: &[usize], width: usize, label: &str, row: usize) -> Result<Vec<bool>, MaskError> {
    let total: usize = runs.iter().sum();
    if total != width {
        return Err(MaskError::Dimension { label: label.into(), detail: format!("row {row} covers {total} columns, expected {width}") });
    }
    let mut bits = Vec::with_capacity(width);
    for (i, &n) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat(i % 2 == 1).take(n));
    }
    Ok(bits)
}

pub fn encode(masks: &[SegmentMask]) -> Result<MaskContainer, MaskError> {
    let (width, height) = masks.first().map_or((0, 0), |m| (m.width, m.height));
    let masks = masks
        .iter()
        .map(|m| {
            if (m.width, m.height) != (width, height) {
                return Err(MaskError::Dimension {
                    label: m.label.clone(),
                    detail: format!("is {}x{}, container is {width}x{height}", m.width, m.height),
                });
            }
            let rows = m.bits().chunks(width.max(1)).map(encode_row).collect();
            Ok(EncodedMask { label: m.label.clone(), rows })
        })
        .collect::<Result<_, _>>()?;
    Ok(MaskContainer { format: MASK_FORMAT.into(), width, height, masks })
}

pub fn decode(container: &MaskContainer) -> Result<Vec<SegmentMask>, MaskError> {
    if container.format != MASK_FORMAT {
        return Err(MaskError::Malformed(format!("unsupported format '{}'", container.format)));
    }
    if container.width == 0 || container.height == 0 {
        return Err(MaskError::Malformed("width and height must be positive".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    container
        .masks
        .iter()
        .map(|m| {
            if !seen.insert(m.label.as_str()) {
                return Err(MaskError::Malformed(format!("label '{}' appears twice", m.label)));
            }
            if m.rows.len() != container.height {
                return Err(MaskError::Dimension {
                    label: m.label.clone(),
                    detail: format!("{} rows, expected {}", m.rows.len(), container.height),
                });
            }
            let mut bits = Vec::with_capacity(container.width * container.height);
            for (r, runs) in m.rows.iter().enumerate() {
                bits.extend(decode_row(runs, container.width, &m.label, r)?);
            }
            SegmentMask::new(m.label.clone(), container.width, container.height, bits).map_err(|e| match e {
                CoreError::EmptyMask(label) => MaskError::Empty(label),
                other => MaskError::Malformed(other.to_string()),
            })
        })
        .collect()
}

pub fn parse(text: &str) -> Result<Vec<SegmentMask>, MaskError> {
    let container: MaskContainer = serde_json::from_str(text).map_err(|e| MaskError::Malformed(e.to_string()))?;
    decode(&container)
}

pub fn import_masks(path: &Path) -> Result<Vec<SegmentMask>, MaskError> {
    parse(&std::fs::read_to_string(path)?)
}

/// Compact single-line JSON followed by a newline.
pub fn to_string(masks: &[SegmentMask]) -> Result<String, MaskError> {
    let mut s = serde_json::to_string(&encode(masks)?).expect("container serializes");
    s.push('\n');
    Ok(s)
}

pub fn export_masks(path: &Path, masks: &[SegmentMask]) -> Result<(), MaskError> {
    std::fs::write(path, to_string(masks)?)?;
    Ok(())
}

/// Latent state from imported masks, in container order.
pub fn latent_from_masks(masks: &[SegmentMask], time_index: usize) -> Result<LatentState, MaskError> {
    let entries = masks
        .iter()
        .map(|m| Ok((m.label.clone(), centroid(m).map_err(|e| MaskError::Malformed(e.to_string()))?)))
        .collect::<Result<Vec<(String, Centroid)>, MaskError>>()?;
    Ok(LatentState::new(time_index, entries))
}
