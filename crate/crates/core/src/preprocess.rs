//! Stage one: resize, min-max normalization and CLAHE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::IMAGE_SIDE;

/// Closed interval that every pixel of a [`GrayImage`] lies in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub const UNIT: ValueRange = ValueRange { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!("bad value range [{lo}, {hi}]")));
        }
        Ok(ValueRange { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Row-major grayscale image with real-valued intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    range: ValueRange,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, range: ValueRange) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image must be non-empty"));
        }
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "expected {} pixels for a {height}x{width} image, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !range.contains(**v)) {
            return Err(Error::invalid(format!(
                "pixel value {v} outside declared range [{}, {}]",
                range.lo, range.hi
            )));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
            range,
        })
    }

    /// Builds an image from nested rows; the declared range is the tightest
    /// interval covering the data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged rows"));
        }
        let pixels: Vec<f64> = rows.iter().flatten().copied().collect();
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite pixel"));
        }
        let lo = pixels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if pixels.is_empty() {
            ValueRange::UNIT
        } else {
            ValueRange::new(lo, hi)?
        };
        GrayImage::new(height, width, pixels, range)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        range: ValueRange,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        GrayImage::new(height, width, pixels, range)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        GrayImage::new(
            height,
            width,
            vec![value; height * width],
            ValueRange::new(value, value)?,
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.pixels.chunks_exact(self.width)
    }

    fn check_unit_range(&self, what: &str) -> Result<()> {
        match self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(v) => Err(Error::invalid(format!(
                "{what} expects values in [0, 1], found {v}"
            ))),
            None => Ok(()),
        }
    }
}

/// Smallest target side accepted by [`resize`] when it actually resamples.
pub const MIN_SIDE: usize = 8;

/// Bilinear resize with corner-aligned sampling: output corners coincide with
/// input corners.
///
/// Resizing to the input's own dimensions returns the image unchanged,
/// whatever its size.
pub fn resize(img: &GrayImage, target_h: usize, target_w: usize) -> Result<GrayImage> {
    if target_h == img.height && target_w == img.width {
        return Ok(img.clone());
    }
    if target_h < MIN_SIDE || target_w < MIN_SIDE {
        return Err(Error::invalid(format!(
            "resize target {target_h}x{target_w} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    let scale = |src: usize, dst: usize| {
        if dst > 1 {
            (src - 1) as f64 / (dst - 1) as f64
        } else {
            0.0
        }
    };
    let sy = scale(img.height, target_h);
    let sx = scale(img.width, target_w);

    // Horizontal sample positions are shared by every output row.
    let cols: Vec<(usize, usize, f64)> = (0..target_w)
        .map(|x| sample_pos(x as f64 * sx, img.width))
        .collect();

    let mut pixels = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        let (y0, y1, fy) = sample_pos(y as f64 * sy, img.height);
        let r0 = &img.pixels[y0 * img.width..(y0 + 1) * img.width];
        let r1 = &img.pixels[y1 * img.width..(y1 + 1) * img.width];
        for &(x0, x1, fx) in &cols {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            let v = top + (bottom - top) * fy;
            pixels.push(v.clamp(img.range.lo, img.range.hi));
        }
    }
    GrayImage::new(target_h, target_w, pixels, img.range)
}

fn sample_pos(pos: f64, len: usize) -> (usize, usize, f64) {
    let i0 = (pos.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Rescales intensities to `[0, 1]`. A constant image maps to all zeros.
pub fn min_max_normalize(img: &GrayImage) -> GrayImage {
    let lo = img.pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = if span > 0.0 {
        img.pixels.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.0; img.pixels.len()]
    };
    GrayImage {
        height: img.height,
        width: img.width,
        pixels,
        range: ValueRange::UNIT,
    }
}

/// CLAHE configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    /// Histogram bins are clipped at `clip_limit × tile_pixels / bins`.
    pub clip_limit: f64,
    /// Tile grid as (rows, columns).
    pub tiles: (usize, usize),
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            clip_limit: 2.0,
            tiles: (8, 8),
            bins: 256,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_limit.is_finite() && self.clip_limit > 0.0) {
            return Err(Error::invalid("clip limit must be a positive real"));
        }
        if self.tiles.0 == 0 || self.tiles.1 == 0 {
            return Err(Error::invalid("tile counts must be positive"));
        }
        if self.bins < 2 {
            return Err(Error::invalid("CLAHE needs at least 2 bins"));
        }
        Ok(())
    }
}

/// Tile boundaries along one axis; the last tile absorbs the remainder.
fn tile_bounds(len: usize, tiles: usize) -> Vec<(usize, usize)> {
    let step = len / tiles;
    (0..tiles)
        .map(|t| {
            let start = t * step;
            let end = if t + 1 == tiles { len } else { start + step };
            (start, end)
        })
        .collect()
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Equalization lookup table for one tile.
fn tile_mapping(hist: &[f64], clip: Option<f64>) -> Vec<f64> {
    let bins = hist.len();
    let mut h = hist.to_vec();
    if let Some(limit) = clip {
        let mut excess = 0.0;
        for c in h.iter_mut() {
            if *c > limit {
                excess += *c - limit;
                *c = limit;
            }
        }
        let share = excess / bins as f64;
        for c in h.iter_mut() {
            *c += share;
        }
    }
    let total: f64 = h.iter().sum();
    let mut cdf = Vec::with_capacity(bins);
    let mut acc = 0.0;
    for c in &h {
        acc += c;
        cdf.push(acc);
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0.0).unwrap_or(0.0);
    let denom = total - cdf_min;
    cdf.iter()
        .map(|&c| {
            if denom > 0.0 {
                ((c - cdf_min) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Interpolation neighbours along one axis: (lower tile, upper tile, weight of upper).
fn axis_weights(len: usize, bounds: &[(usize, usize)]) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = bounds
        .iter()
        .map(|&(s, e)| (s + e - 1) as f64 / 2.0)
        .collect();
    let last = centers.len() - 1;
    (0..len)
        .map(|p| {
            let p = p as f64;
            if p <= centers[0] {
                (0, 0, 0.0)
            } else if p >= centers[last] {
                (last, last, 0.0)
            } else {
                let i = centers.partition_point(|&c| c <= p) - 1;
                let w = (p - centers[i]) / (centers[i + 1] - centers[i]);
                (i, i + 1, w)
            }
        })
        .collect()
}

/// Contrast Limited Adaptive Histogram Equalization on a `[0, 1]` image.
///
/// Each tile's histogram is clipped, the excess spread evenly over all bins,
/// and the resulting CDF used as that tile's mapping. Pixels blend the
/// mappings of the four nearest tile centres bilinearly.
pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    params.validate()?;
    img.check_unit_range("clahe")?;
    let (ty, tx) = params.tiles;
    if ty > img.height || tx > img.width {
        return Err(Error::invalid(format!(
            "{ty}x{tx} tiles do not fit a {}x{} image",
            img.height, img.width
        )));
    }
    let bins = params.bins;
    let ybounds = tile_bounds(img.height, ty);
    let xbounds = tile_bounds(img.width, tx);

    let mut maps = Vec::with_capacity(ty * tx);
    for &(y0, y1) in &ybounds {
        for &(x0, x1) in &xbounds {
            let mut hist = vec![0.0; bins];
            for y in y0..y1 {
                for &v in &img.pixels[y * img.width + x0..y * img.width + x1] {
                    hist[bin_of(v, bins)] += 1.0;
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let limit = params.clip_limit * count / bins as f64;
            maps.push(tile_mapping(&hist, Some(limit)));
        }
    }

    Ok(blend_tile_maps(img, &maps, &ybounds, &xbounds, bins))
}

fn blend_tile_maps(
    img: &GrayImage,
    maps: &[Vec<f64>],
    ybounds: &[(usize, usize)],
    xbounds: &[(usize, usize)],
    bins: usize,
) -> GrayImage {
    let tx = xbounds.len();
    let wy = axis_weights(img.height, ybounds);
    let wx = axis_weights(img.width, xbounds);
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for (y, &(ta, tb, fy)) in wy.iter().enumerate() {
        for (x, &(la, lb, fx)) in wx.iter().enumerate() {
            let b = bin_of(img.get(y, x), bins);
            let m = |t: usize, l: usize| maps[t * tx + l][b];
            let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
            let top = lerp(m(ta, la), m(ta, lb), fx);
            let bottom = lerp(m(tb, la), m(tb, lb), fx);
            pixels.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
        }
    }
    GrayImage {
        height: img.height,
        width: img.width,
        pixels,
        range: ValueRange::UNIT,
    }
}

/// Full stage-one pipeline: resize to 512×512, normalize, CLAHE.
pub fn preprocess_pipeline(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    let resized = resize(img, IMAGE_SIDE, IMAGE_SIDE)?;
    let normalized = min_max_normalize(&resized);
    clahe(&normalized, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, hi: f64, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let range = ValueRange::new(0.0, hi).unwrap();
        GrayImage::from_fn(h, w, range, |_, _| rng.gen_range(0.0..=hi)).unwrap()
    }

    /// Reference bilinear sampler written directly from the corner-aligned formula.
    fn bilinear_oracle(img: &GrayImage, th: usize, tw: usize) -> Vec<f64> {
        let (h, w) = (img.height() as f64, img.width() as f64);
        let mut out = Vec::new();
        for i in 0..th {
            for j in 0..tw {
                let sy = i as f64 * (h - 1.0) / (th as f64 - 1.0);
                let sx = j as f64 * (w - 1.0) / (tw as f64 - 1.0);
                let y0 = sy.floor();
                let x0 = sx.floor();
                let (dy, dx) = (sy - y0, sx - x0);
                let px = |y: f64, x: f64| {
                    let y = (y as usize).min(img.height() - 1);
                    let x = (x as usize).min(img.width() - 1);
                    img.get(y, x)
                };
                let v = (1.0 - dy) * (1.0 - dx) * px(y0, x0)
                    + (1.0 - dy) * dx * px(y0, x0 + 1.0)
                    + dy * (1.0 - dx) * px(y0 + 1.0, x0)
                    + dy * dx * px(y0 + 1.0, x0 + 1.0);
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn identity_resize_of_tiny_image() {
        let img = GrayImage::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(resize(&img, 2, 2).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = GrayImage::constant(13, 21, 0.5).unwrap();
        let out = resize(&img, 40, 9).unwrap();
        assert_eq!((out.height(), out.width()), (40, 9));
        assert!(out.pixels().iter().all(|&v| v == 0.5));
        assert_eq!(out.range(), img.range());
    }

    #[test]
    fn resize_matches_bilinear_oracle() {
        let img = random_image(64, 64, 1.0, 7);
        let out = resize(&img, 512, 512).unwrap();
        let oracle = bilinear_oracle(&img, 512, 512);
        for (a, b) in out.pixels().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn resize_rejects_small_targets() {
        let img = random_image(16, 16, 1.0, 1);
        assert!(matches!(resize(&img, 4, 16), Err(Error::InvalidInput(_))));
        assert!(GrayImage::new(0, 0, vec![], ValueRange::UNIT).is_err());
    }

    #[test]
    fn normalize_examples() {
        let img = GrayImage::from_rows(&[vec![0.0, 5.0], vec![10.0, 20.0]]).unwrap();
        let n = min_max_normalize(&img);
        assert_eq!(n.pixels(), &[0.0, 0.25, 0.5, 1.0]);
        assert_eq!(n.range(), ValueRange::UNIT);

        let c = GrayImage::constant(4, 4, 3.0).unwrap();
        assert!(min_max_normalize(&c).pixels().iter().all(|&v| v == 0.0));

        let r = random_image(16, 16, 255.0, 3);
        let n = min_max_normalize(&r);
        let lo = n.pixels().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = n.pixels().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn clahe_constant_image_stays_constant() {
        for v in [0.0, 0.37, 1.0] {
            let img = GrayImage::constant(64, 48, v).unwrap();
            let out = clahe(&img, &ClaheParams::default()).unwrap();
            let first = out.pixels()[0];
            assert!(out.pixels().iter().all(|&p| p == first));
        }
    }

    #[test]
    fn clahe_rejects_out_of_range_values() {
        let img = GrayImage::from_rows(&vec![vec![0.0, 2.0]; 8]).unwrap();
        assert!(matches!(
            clahe(&img, &ClaheParams::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    /// Unclipped adaptive histogram equalization with one row of tiles,
    /// written without the shared helpers.
    fn ahe_reference(img: &GrayImage, tiles_x: usize, bins: usize) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        let tw = w / tiles_x;
        let mut maps = vec![];
        let mut centers = vec![];
        for t in 0..tiles_x {
            let x0 = t * tw;
            let x1 = if t + 1 == tiles_x { w } else { x0 + tw };
            centers.push((x0 + x1 - 1) as f64 / 2.0);
            let mut hist = vec![0usize; bins];
            for y in 0..h {
                for x in x0..x1 {
                    let b = ((img.get(y, x) * bins as f64).floor() as usize).min(bins - 1);
                    hist[b] += 1;
                }
            }
            let total = (h * (x1 - x0)) as f64;
            let mut cum = 0usize;
            let mut cdf = vec![];
            for c in hist {
                cum += c;
                cdf.push(cum as f64);
            }
            let first = *cdf.iter().find(|c| **c > 0.0).unwrap();
            maps.push(
                cdf.iter()
                    .map(|c| {
                        if total > first {
                            (c - first) / (total - first)
                        } else {
                            0.0
                        }
                    })
                    .collect::<Vec<_>>(),
            );
        }
        let mut out = vec![];
        for y in 0..h {
            for x in 0..w {
                let b = ((img.get(y, x) * bins as f64).floor() as usize).min(bins - 1);
                let xf = x as f64;
                let v = if xf <= centers[0] {
                    maps[0][b]
                } else if xf >= centers[tiles_x - 1] {
                    maps[tiles_x - 1][b]
                } else {
                    let i = (0..tiles_x - 1)
                        .find(|&i| xf >= centers[i] && xf < centers[i + 1])
                        .unwrap();
                    let t = (xf - centers[i]) / (centers[i + 1] - centers[i]);
                    maps[i][b] * (1.0 - t) + maps[i + 1][b] * t
                };
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn clahe_without_clipping_is_plain_ahe() {
        let img = random_image(8, 8, 1.0, 11);
        let params = ClaheParams {
            clip_limit: 1e6,
            tiles: (1, 2),
            bins: 16,
        };
        let out = clahe(&img, &params).unwrap();
        let reference = ahe_reference(&img, 2, 16);
        for (a, b) in out.pixels().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pipeline_on_constant_image() {
        let img = GrayImage::constant(100, 100, 42.0).unwrap();
        let out = preprocess_pipeline(&img, &ClaheParams::default()).unwrap();
        assert_eq!((out.height(), out.width()), (512, 512));
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let img = random_image(37, 53, 255.0, 5);
        let a = preprocess_pipeline(&img, &ClaheParams::default()).unwrap();
        let b = preprocess_pipeline(&img, &ClaheParams::default()).unwrap();
        assert_eq!((a.height(), a.width()), (512, 512));
        assert!(a
            .pixels()
            .iter()
            .zip(b.pixels())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn image_strategy() -> impl Strategy<Value = GrayImage> {
            (8usize..24, 8usize..24).prop_flat_map(|(h, w)| {
                proptest::collection::vec(0.0f64..=1.0, h * w)
                    .prop_map(move |px| GrayImage::new(h, w, px, ValueRange::UNIT).unwrap())
            })
        }

        proptest! {
            #[test]
            fn clahe_keeps_shape_and_range(
                img in image_strategy(),
                clip in 0.5f64..8.0,
                ty in 1usize..5,
                tx in 1usize..5,
            ) {
                let params = ClaheParams { clip_limit: clip, tiles: (ty, tx), bins: 32 };
                let out = clahe(&img, &params).unwrap();
                prop_assert_eq!((out.height(), out.width()), (img.height(), img.width()));
                prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            }

            #[test]
            fn normalization_is_idempotent(img in image_strategy()) {
                let once = min_max_normalize(&img);
                let lo = once.pixels().iter().copied().fold(f64::INFINITY, f64::min);
                let hi = once.pixels().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assume!(hi > lo);
                let twice = min_max_normalize(&once);
                prop_assert_eq!(once.pixels(), twice.pixels());
            }

            #[test]
            fn same_size_resize_is_identity(img in image_strategy()) {
                let out = resize(&img, img.height(), img.width()).unwrap();
                prop_assert_eq!(out, img);
            }
        }
    }
}
