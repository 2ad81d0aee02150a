//! Stage two: the 168-element texture + frequency feature vector.
//!
//! Layout (each block is the 14 statistics of [`StatBlock`], in order):
//!
//! | index     | map                                   |
//! |-----------|---------------------------------------|
//! | 0..14     | preprocessed image                    |
//! | 14..70    | GLCM at 0°, 45°, 90°, 135°            |
//! | 70..126   | GLDM along E, SE, S, SW               |
//! | 126..140  | HOG descriptor                        |
//! | 140..154  | FFT log-magnitude                     |
//! | 154..168  | Haar LL3 coefficients                 |
//!
//! The first 140 entries are texture features, the last 28 frequency features.

mod frequency;
mod stats;
mod texture;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

pub use frequency::{
    dwt_ll3, fft_magnitude, fft_raw_magnitude, haar_decompose, haar_level, HaarDecomposition,
    HaarLevel, Subband,
};
pub use stats::{stat_block, StatBlock, HISTOGRAM_BINS, STAT_NAMES};
pub use texture::{
    cell_histograms, glcm, gldm, hog_descriptor, CoocMatrix, GlcmAngle, HogParams, GLDM_DIRECTIONS,
};

pub const STATS_PER_MAP: usize = 14;
pub const TEXTURE_LEN: usize = 140;
pub const FREQUENCY_LEN: usize = 28;
pub const FEATURE_LEN: usize = TEXTURE_LEN + FREQUENCY_LEN;

const GLDM_NAMES: [&str; 4] = ["e", "se", "s", "sw"];
const LAYOUT_TAG: &str = "covelm-feature-layout/1";

/// Feature-extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub glcm_levels: usize,
    pub glcm_distance: usize,
    pub hog: HogParams,
    /// Summarize `ln(1 + |F|)` rather than raw `|F|`.
    pub fft_log: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            glcm_levels: 32,
            glcm_distance: 1,
            hog: HogParams::default(),
            fft_log: true,
        }
    }
}

/// Which slice of the feature vector to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSubset {
    Texture,
    Frequency,
    Combined,
}

impl FeatureSubset {
    pub const ALL: [FeatureSubset; 3] = [
        FeatureSubset::Frequency,
        FeatureSubset::Texture,
        FeatureSubset::Combined,
    ];

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            FeatureSubset::Texture => 0..TEXTURE_LEN,
            FeatureSubset::Frequency => TEXTURE_LEN..FEATURE_LEN,
            FeatureSubset::Combined => 0..FEATURE_LEN,
        }
    }

    pub fn len(self) -> usize {
        self.range().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSubset::Texture => "texture",
            FeatureSubset::Frequency => "frequency",
            FeatureSubset::Combined => "combined",
        }
    }
}

impl fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "texture" => Ok(FeatureSubset::Texture),
            "frequency" => Ok(FeatureSubset::Frequency),
            "combined" => Ok(FeatureSubset::Combined),
            _ => Err(Error::invalid(format!("unknown feature subset {s:?}"))),
        }
    }
}

/// A complete 168-element feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_LEN {
            return Err(Error::invalid(format!(
                "feature vector must have {FEATURE_LEN} entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite feature value".into()));
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn texture(&self) -> &[f64] {
        &self.0[..TEXTURE_LEN]
    }

    pub fn frequency(&self) -> &[f64] {
        &self.0[TEXTURE_LEN..]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn select_subset(v: &FeatureVector, subset: FeatureSubset) -> &[f64] {
    &v.0[subset.range()]
}

/// Column names, `family.orientation.statistic`, in vector order.
pub fn feature_names() -> Vec<String> {
    let mut maps: Vec<(String, String)> = vec![("spatial".into(), "all".into())];
    maps.extend(
        GlcmAngle::ALL
            .iter()
            .map(|a| ("glcm".into(), a.name().into())),
    );
    maps.extend(GLDM_NAMES.iter().map(|d| ("gldm".into(), (*d).into())));
    maps.push(("hog".into(), "all".into()));
    maps.push(("fft".into(), "all".into()));
    maps.push(("dwt_ll3".into(), "all".into()));
    maps.iter()
        .flat_map(|(family, orient)| {
            STAT_NAMES
                .iter()
                .map(move |stat| format!("{family}.{orient}.{stat}"))
        })
        .collect()
}

/// Short digest identifying the feature ordering of a subset.
pub fn layout_digest(subset: FeatureSubset) -> String {
    let names = feature_names();
    let mut hasher = Sha256::new();
    hasher.update(LAYOUT_TAG.as_bytes());
    hasher.update(subset.as_str().as_bytes());
    for name in &names[subset.range()] {
        hasher.update(b"\n");
        hasher.update(name.as_bytes());
    }
    hasher.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Subset whose layout digest equals `digest`, if any.
pub fn subset_for_digest(digest: &str) -> Option<FeatureSubset> {
    FeatureSubset::ALL
        .into_iter()
        .find(|s| layout_digest(*s) == digest)
}

/// Builds the feature vector of a preprocessed `[0, 1]` image.
pub fn extract_features(img: &GrayImage, config: &FeatureConfig) -> Result<FeatureVector> {
    let mut out = Vec::with_capacity(FEATURE_LEN);
    let mut push = |values: &[f64]| -> Result<()> {
        out.extend_from_slice(&stat_block(values)?.to_array());
        Ok(())
    };

    push(img.pixels())?;
    for angle in GlcmAngle::ALL {
        let m = glcm(img, config.glcm_levels, config.glcm_distance, angle)?;
        push(m.probabilities())?;
    }
    for dir in GLDM_DIRECTIONS {
        let (map, _, _) = gldm(img, dir)?;
        push(&map)?;
    }
    push(&hog_descriptor(img, &config.hog)?)?;
    let spectrum = if config.fft_log {
        fft_magnitude(img)
    } else {
        fft_raw_magnitude(img)
    };
    push(&spectrum)?;
    push(&dwt_ll3(img)?.data)?;

    FeatureVector::new(out)
}
