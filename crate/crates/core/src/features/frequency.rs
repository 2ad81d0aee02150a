//! Frequency maps: centred FFT magnitude and the Haar LL3 subband.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

/// 2D DFT magnitudes `|F(u, v)|`, shifted so the DC term sits at
/// `(height / 2, width / 2)`. Row-major.
pub fn fft_raw_magnitude(img: &GrayImage) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut planner = FftPlanner::<f64>::new();
    let mut data: Vec<Complex64> = img
        .pixels()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();

    let row_fft = planner.plan_fft_forward(w);
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }

    let col_fft = planner.plan_fft_forward(h);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }

    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let sy = (y + h / 2) % h;
        for x in 0..w {
            let sx = (x + w / 2) % w;
            out[sy * w + sx] = data[y * w + x].norm();
        }
    }
    out
}

/// Centred log-magnitude spectrum `ln(1 + |F|)`.
pub fn fft_magnitude(img: &GrayImage) -> Vec<f64> {
    let mut m = fft_raw_magnitude(img);
    m.iter_mut().for_each(|v| *v = v.ln_1p());
    m
}

/// A single-channel coefficient map.
#[derive(Debug, Clone, PartialEq)]
pub struct Subband {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// One level of 2D orthonormal Haar analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarLevel {
    pub ll: Subband,
    pub lh: Subband,
    pub hl: Subband,
    pub hh: Subband,
}

/// Splits an even-sized map into its four Haar subbands. Each 2×2 block
/// `[a b; c d]` yields `(a+b+c+d)/2`, `(a+b-c-d)/2`, `(a-b+c-d)/2` and
/// `(a-b-c+d)/2`.
pub fn haar_level(band: &Subband) -> Result<HaarLevel> {
    if band.height % 2 != 0 || band.width % 2 != 0 || band.height == 0 || band.width == 0 {
        return Err(Error::invalid(format!(
            "Haar analysis needs even dimensions, got {}x{}",
            band.height, band.width
        )));
    }
    let (oh, ow) = (band.height / 2, band.width / 2);
    let mut ll = Vec::with_capacity(oh * ow);
    let mut lh = Vec::with_capacity(oh * ow);
    let mut hl = Vec::with_capacity(oh * ow);
    let mut hh = Vec::with_capacity(oh * ow);
    let w = band.width;
    for y in 0..oh {
        for x in 0..ow {
            let a = band.data[2 * y * w + 2 * x];
            let b = band.data[2 * y * w + 2 * x + 1];
            let c = band.data[(2 * y + 1) * w + 2 * x];
            let d = band.data[(2 * y + 1) * w + 2 * x + 1];
            ll.push((a + b + c + d) * 0.5);
            lh.push((a + b - c - d) * 0.5);
            hl.push((a - b + c - d) * 0.5);
            hh.push((a - b - c + d) * 0.5);
        }
    }
    let sub = |data| Subband {
        height: oh,
        width: ow,
        data,
    };
    Ok(HaarLevel {
        ll: sub(ll),
        lh: sub(lh),
        hl: sub(hl),
        hh: sub(hh),
    })
}

/// Multi-level decomposition: the final approximation plus the detail
/// subbands of every level, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarDecomposition {
    pub approximation: Subband,
    pub details: Vec<[Subband; 3]>,
}

pub fn haar_decompose(img: &GrayImage, levels: usize) -> Result<HaarDecomposition> {
    let factor = 1usize << levels;
    if img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::invalid(format!(
            "{}x{} image is not divisible by {factor} for a {levels}-level Haar transform",
            img.height(),
            img.width()
        )));
    }
    let mut current = Subband {
        height: img.height(),
        width: img.width(),
        data: img.pixels().to_vec(),
    };
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let level = haar_level(&current)?;
        details.push([level.lh, level.hl, level.hh]);
        current = level.ll;
    }
    Ok(HaarDecomposition {
        approximation: current,
        details,
    })
}

/// Level-3 approximation subband, `(H/8) × (W/8)`.
pub fn dwt_ll3(img: &GrayImage) -> Result<Subband> {
    Ok(haar_decompose(img, 3)?.approximation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::ValueRange;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_image(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(h, w, ValueRange::UNIT, |_, _| rng.gen::<f64>()).unwrap()
    }

    #[test]
    fn fft_of_constant() {
        let img = GrayImage::constant(8, 8, 0.25).unwrap();
        let m = fft_raw_magnitude(&img);
        for (i, &v) in m.iter().enumerate() {
            if i == 4 * 8 + 4 {
                assert!((v - 0.25 * 64.0).abs() < 1e-12);
            } else {
                assert!(v.abs() < 1e-12);
            }
        }
        let logm = fft_magnitude(&img);
        assert!((logm[36] - 17.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn odd_sizes_center_dc() {
        let img = GrayImage::constant(5, 7, 1.0).unwrap();
        let m = fft_raw_magnitude(&img);
        assert!((m[2 * 7 + 3] - 35.0).abs() < 1e-12);
    }

    #[test]
    fn haar_of_constant() {
        let img = GrayImage::constant(64, 32, 0.5).unwrap();
        let ll3 = dwt_ll3(&img).unwrap();
        assert_eq!((ll3.height, ll3.width), (8, 4));
        assert!(ll3.data.iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn haar_rejects_bad_dims() {
        let img = GrayImage::constant(12, 16, 0.5).unwrap();
        assert!(matches!(dwt_ll3(&img), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ll3_of_8x8_is_eight_times_mean() {
        let img = random_unit_image(8, 8, 21);
        let ll3 = dwt_ll3(&img).unwrap();
        let mean = img.pixels().iter().sum::<f64>() / 64.0;
        assert_eq!(ll3.data.len(), 1);
        assert!((ll3.data[0] - 8.0 * mean).abs() < 1e-12);
    }

    #[test]
    fn haar_level_energy() {
        let img = random_unit_image(16, 24, 2);
        let d = haar_decompose(&img, 3).unwrap();
        let mut e: f64 = d.approximation.data.iter().map(|v| v * v).sum();
        for level in &d.details {
            for band in level {
                e += band.data.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let e0: f64 = img.pixels().iter().map(|v| v * v).sum();
        assert!((e - e0).abs() <= 1e-12 * e0);
    }
}
