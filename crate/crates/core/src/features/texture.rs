//! Texture maps: gray-level co-occurrence, gray-level difference and HOG.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

/// GLCM displacement angle. Angles are measured counter-clockwise from the
/// positive x axis, so 90° pairs a pixel with the one above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlcmAngle {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl GlcmAngle {
    pub const ALL: [GlcmAngle; 4] = [
        GlcmAngle::Deg0,
        GlcmAngle::Deg45,
        GlcmAngle::Deg90,
        GlcmAngle::Deg135,
    ];

    /// (row, column) offset for a displacement of `d` pixels.
    pub fn offset(self, d: usize) -> (isize, isize) {
        let d = d as isize;
        match self {
            GlcmAngle::Deg0 => (0, d),
            GlcmAngle::Deg45 => (-d, d),
            GlcmAngle::Deg90 => (-d, 0),
            GlcmAngle::Deg135 => (-d, -d),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GlcmAngle::Deg0 => "0deg",
            GlcmAngle::Deg45 => "45deg",
            GlcmAngle::Deg90 => "90deg",
            GlcmAngle::Deg135 => "135deg",
        }
    }
}

/// Normalized gray-level co-occurrence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoocMatrix {
    levels: usize,
    distance: usize,
    angle: GlcmAngle,
    probs: Vec<f64>,
}

impl CoocMatrix {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn angle(&self) -> GlcmAngle {
        self.angle
    }

    /// Row-major `levels × levels` probabilities.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.levels + j]
    }
}

#[inline]
fn quantize(v: f64, levels: usize) -> usize {
    ((v * levels as f64) as usize).min(levels - 1)
}

/// Symmetric, normalized GLCM of a `[0, 1]` image quantized to `levels` gray levels.
pub fn glcm(
    img: &GrayImage,
    levels: usize,
    distance: usize,
    angle: GlcmAngle,
) -> Result<CoocMatrix> {
    if levels < 2 {
        return Err(Error::invalid("GLCM needs at least 2 gray levels"));
    }
    if distance == 0 {
        return Err(Error::invalid("GLCM distance must be at least 1"));
    }
    if img.pixels().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("GLCM expects values in [0, 1]"));
    }
    let (h, w) = (img.height() as isize, img.width() as isize);
    let (dy, dx) = angle.offset(distance);
    if dy.abs() >= h || dx.abs() >= w {
        return Err(Error::invalid(format!(
            "{h}x{w} image is smaller than the GLCM displacement ({dy}, {dx})"
        )));
    }
    let q: Vec<usize> = img.pixels().iter().map(|&v| quantize(v, levels)).collect();
    let mut counts = vec![0u64; levels * levels];
    for y in 0..h {
        let ny = y + dy;
        if ny < 0 || ny >= h {
            continue;
        }
        for x in 0..w {
            let nx = x + dx;
            if nx < 0 || nx >= w {
                continue;
            }
            let a = q[(y * w + x) as usize];
            let b = q[(ny * w + nx) as usize];
            counts[a * levels + b] += 1;
            counts[b * levels + a] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(CoocMatrix {
        levels,
        distance,
        angle,
        probs,
    })
}

/// The four GLDM displacements as (row, column) steps.
pub const GLDM_DIRECTIONS: [(usize, isize); 4] = [(0, 1), (1, 1), (1, 0), (1, -1)];

/// Absolute-difference map `|I(p) - I(p + direction)|` over every pixel `p`
/// whose displaced partner lies inside the image. Returned row-major with
/// its (height, width).
pub fn gldm(img: &GrayImage, direction: (usize, isize)) -> Result<(Vec<f64>, usize, usize)> {
    let (dy, dx) = direction;
    if !GLDM_DIRECTIONS.contains(&direction) {
        return Err(Error::invalid(format!(
            "unsupported GLDM direction {direction:?}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let adx = dx.unsigned_abs();
    if dy >= h || adx >= w {
        return Err(Error::invalid(format!(
            "{h}x{w} image too small for GLDM direction {direction:?}"
        )));
    }
    let (oh, ow) = (h - dy, w - adx);
    // Columns with a valid partner start at |dx| when stepping left.
    let x_start = if dx < 0 { adx } else { 0 };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in x_start..x_start + ow {
            let nx = (x as isize + dx) as usize;
            out.push((img.get(y, x) - img.get(y + dy, nx)).abs());
        }
    }
    Ok((out, oh, ow))
}

/// HOG geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogParams {
    /// Cell size in pixels as (rows, columns).
    pub cell: (usize, usize),
    /// Block size in cells as (rows, columns).
    pub block: (usize, usize),
    /// Unsigned orientation bins over [0°, 180°).
    pub bins: usize,
    pub epsilon: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams {
            cell: (16, 16),
            block: (2, 2),
            bins: 9,
            epsilon: 1e-5,
        }
    }
}

/// L2-Hys clipping threshold.
const HYS_CLIP: f64 = 0.2;

impl HogParams {
    fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::invalid("HOG needs at least 2 orientation bins"));
        }
        if self.cell.0 == 0 || self.cell.1 == 0 || self.block.0 == 0 || self.block.1 == 0 {
            return Err(Error::invalid("HOG cell and block sizes must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("HOG epsilon must be positive"));
        }
        Ok(())
    }

    /// Number of (rows, columns) of overlapping blocks with a one-cell stride.
    pub fn block_grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (cy, cx) = (height / self.cell.0, width / self.cell.1);
        if cy < self.block.0 || cx < self.block.1 {
            return Err(Error::invalid(format!(
                "{height}x{width} image is smaller than one HOG block"
            )));
        }
        Ok((cy - self.block.0 + 1, cx - self.block.1 + 1))
    }

    pub fn descriptor_len(&self, height: usize, width: usize) -> Result<usize> {
        let (by, bx) = self.block_grid(height, width)?;
        Ok(by * bx * self.block.0 * self.block.1 * self.bins)
    }
}

/// Per-cell orientation histograms, laid out `[cell_row][cell_col][bin]`.
///
/// Gradients are `[-1, 0, 1]` central differences (zero on the border rows
/// and columns). Orientation is folded into [0°, 180°); bin `k` is centred
/// on `k × 180° / bins` and each pixel splits its magnitude linearly between
/// the two nearest bin centres. Pixels beyond the last full cell are ignored.
pub fn cell_histograms(img: &GrayImage, params: &HogParams) -> Result<(Vec<f64>, usize, usize)> {
    params.validate()?;
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = (h / params.cell.0, w / params.cell.1);
    if cy == 0 || cx == 0 {
        return Err(Error::invalid("image smaller than one HOG cell"));
    }
    let bins = params.bins;
    let bin_width = 180.0 / bins as f64;
    let mut hist = vec![0.0; cy * cx * bins];
    for y in 0..cy * params.cell.0 {
        for x in 0..cx * params.cell.1 {
            let gx = if x > 0 && x + 1 < w {
                img.get(y, x + 1) - img.get(y, x - 1)
            } else {
                0.0
            };
            let gy = if y > 0 && y + 1 < h {
                img.get(y + 1, x) - img.get(y - 1, x)
            } else {
                0.0
            };
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx).to_degrees();
            if theta < 0.0 {
                theta += 180.0;
            }
            if theta >= 180.0 {
                theta -= 180.0;
            }
            let pos = theta / bin_width;
            let lo = (pos.floor() as usize) % bins;
            let hi = (lo + 1) % bins;
            let frac = pos - pos.floor();
            let cell = ((y / params.cell.0) * cx + x / params.cell.1) * bins;
            hist[cell + lo] += mag * (1.0 - frac);
            hist[cell + hi] += mag * frac;
        }
    }
    Ok((hist, cy, cx))
}

/// Block-normalized HOG descriptor. Blocks step one cell at a time and are
/// normalized with L2-Hys (L2, clip at 0.2, L2 again), so every entry lies
/// in `[0, 1]`.
pub fn hog_descriptor(img: &GrayImage, params: &HogParams) -> Result<Vec<f64>> {
    let (by, bx) = params.block_grid(img.height(), img.width())?;
    let (hist, _, cx) = cell_histograms(img, params)?;
    let bins = params.bins;
    let eps2 = params.epsilon * params.epsilon;
    let block_len = params.block.0 * params.block.1 * bins;
    let mut out = Vec::with_capacity(by * bx * block_len);
    let mut block = Vec::with_capacity(block_len);
    for r in 0..by {
        for c in 0..bx {
            block.clear();
            for dr in 0..params.block.0 {
                for dc in 0..params.block.1 {
                    let start = ((r + dr) * cx + c + dc) * bins;
                    block.extend_from_slice(&hist[start..start + bins]);
                }
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + eps2).sqrt();
            block
                .iter_mut()
                .for_each(|v| *v = (*v / norm).min(HYS_CLIP));
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + eps2).sqrt();
            out.extend(block.iter().map(|v| v / norm));
        }
    }
    Ok(out)
}
