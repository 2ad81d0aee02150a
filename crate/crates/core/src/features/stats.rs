//! The 14-statistic summary applied to every feature map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Histogram resolution used by entropy and uniformity.
pub const HISTOGRAM_BINS: usize = 256;

/// Names of the statistics, in [`StatBlock::to_array`] order.
pub const STAT_NAMES: [&str; 14] = [
    "area",
    "mean",
    "std",
    "skewness",
    "kurtosis",
    "energy",
    "entropy",
    "max",
    "min",
    "mad",
    "median",
    "range",
    "rms",
    "uniformity",
];

/// Summary statistics of a collection of reals.
///
/// * `area`: number of strictly positive entries
/// * `std`: population standard deviation
/// * `skewness`, `kurtosis`: biased third and fourth standardized moments
///   (kurtosis is not excess); both are 0 when the variance is 0
/// * `energy`: sum of squares
/// * `entropy` (base 2) and `uniformity` (sum of squared probabilities) use a
///   256-bin histogram spanning `[min, max]`
/// * `mad`: mean absolute deviation from the mean
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatBlock {
    pub area: f64,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub energy: f64,
    pub entropy: f64,
    pub max: f64,
    pub min: f64,
    pub mad: f64,
    pub median: f64,
    pub range: f64,
    pub rms: f64,
    pub uniformity: f64,
}

impl StatBlock {
    pub fn to_array(&self) -> [f64; 14] {
        [
            self.area,
            self.mean,
            self.std,
            self.skewness,
            self.kurtosis,
            self.energy,
            self.entropy,
            self.max,
            self.min,
            self.mad,
            self.median,
            self.range,
            self.rms,
            self.uniformity,
        ]
    }
}

pub fn stat_block(values: &[f64]) -> Result<StatBlock> {
    if values.is_empty() {
        return Err(Error::invalid("statistics of an empty collection"));
    }
    let n = values.len() as f64;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum, mut energy, mut area) = (0.0, 0.0, 0usize);
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        energy += v * v;
        if v > 0.0 {
            area += 1;
        }
    }
    let constant = max == min;
    let mean = if constant { min } else { sum / n };

    let (mut m2, mut m3, mut m4, mut abs_dev) = (0.0, 0.0, 0.0, 0.0);
    if !constant {
        for &v in values {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
            abs_dev += d.abs();
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        abs_dev /= n;
    }
    let std = m2.sqrt();
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / (m2 * std), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };

    let (entropy, uniformity) = if constant {
        (0.0, 1.0)
    } else {
        let mut hist = [0usize; HISTOGRAM_BINS];
        let span = max - min;
        for &v in values {
            let b = (((v - min) / span) * HISTOGRAM_BINS as f64) as usize;
            hist[b.min(HISTOGRAM_BINS - 1)] += 1;
        }
        hist.iter()
            .filter(|&&c| c > 0)
            .fold((0.0, 0.0), |(e, u), &c| {
                let p = c as f64 / n;
                (e - p * p.log2(), u + p * p)
            })
    };

    Ok(StatBlock {
        area: area as f64,
        mean,
        std,
        skewness,
        kurtosis,
        energy,
        entropy,
        max,
        min,
        mad: abs_dev,
        median: median(values),
        range: max - min,
        rms: (energy / n).sqrt(),
        uniformity,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_sequence() {
        let s = stat_block(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!((s.max, s.min, s.range), (4.0, 1.0, 3.0));
        assert_eq!(s.energy, 30.0);
        assert!((s.rms - 7.5f64.sqrt()).abs() < 1e-15);
        assert!((s.rms - 2.7386).abs() < 1e-4);
        assert_eq!(s.mad, 1.0);
        assert!(s.skewness.abs() < 1e-15);
        assert_eq!(s.area, 4.0);
        // Each value lands in its own histogram bin.
        assert!((s.entropy - 2.0).abs() < 1e-12);
        assert!((s.uniformity - 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_sequence() {
        let s = stat_block(&[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.skewness, 0.0);
        assert_eq!(s.kurtosis, 0.0);
        assert_eq!(s.range, 0.0);
        assert_eq!(s.uniformity, 1.0);
        assert_eq!(s.entropy, 0.0);
        assert_eq!(s.area, 3.0);
        assert_eq!(s.mean, 0.1);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(stat_block(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kurtosis_is_not_excess() {
        // Two-point symmetric distribution has kurtosis exactly 1.
        let s = stat_block(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert!((s.kurtosis - 1.0).abs() < 1e-15);
        assert_eq!(s.area, 2.0);
    }
}
