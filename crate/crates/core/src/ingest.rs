//! Manifest-driven corpus loading and the feature cache file.
//!
//! The cache is comma-separated text. Its header row is
//! `<meta>,label,<168 feature names>`, where `<meta>` is
//! `covelm-features;layout=<digest>;<extraction settings>`. Each following row
//! holds the image identifier, its label and the 168 feature values written
//! in shortest round-trip decimal form.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    extract_features, feature_names, layout_digest, FeatureConfig, FeatureSubset, FEATURE_LEN,
};
use crate::linalg::Matrix;
use crate::preprocess::{preprocess_pipeline, ClaheParams, GrayImage, ValueRange};
use crate::CLASS_ORDER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Covid,
    Normal,
    Pneumonia,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Covid, Label::Normal, Label::Pneumonia];

    /// Position in [`CLASS_ORDER`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        CLASS_ORDER[self.index()]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "covid" => Ok(Label::Covid),
            "normal" => Ok(Label::Normal),
            "pneumonia" => Ok(Label::Pneumonia),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Class names in [`CLASS_ORDER`], as owned strings.
pub fn class_order() -> Vec<String> {
    CLASS_ORDER.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    pub view: String,
}

const MANIFEST_HEADER: [&str; 3] = ["path", "label", "view"];

/// Reads a `path,label,view` manifest. Line numbers in errors are 1-based
/// and count the header.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file)
}

pub fn parse_manifest(reader: impl std::io::Read) -> Result<Vec<ManifestRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let names: Vec<String> = header
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    if names != MANIFEST_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `path,label,view`, found `{}`",
                names.join(",")
            ),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let path = row[0].trim();
        if path.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty path".into(),
            });
        }
        let label = row[1]
            .parse::<Label>()
            .map_err(|message| Error::Parse { line, message })?;
        records.push(ManifestRecord {
            path: path.to_string(),
            label,
            view: row[2].trim().to_string(),
        });
    }
    Ok(records)
}

/// Keeps PA and AP views (case-insensitive), preserving order. Returns the
/// kept records and the number dropped.
pub fn filter_frontal(records: &[ManifestRecord]) -> (Vec<ManifestRecord>, usize) {
    let kept: Vec<ManifestRecord> = records
        .iter()
        .filter(|r| {
            let v = r.view.to_ascii_uppercase();
            v == "PA" || v == "AP"
        })
        .cloned()
        .collect();
    let dropped = records.len() - kept.len();
    if dropped > 0 {
        warn!("dropped {dropped} non-frontal record(s)");
    }
    (kept, dropped)
}

/// Decodes a raster file to a `[0, 1]` grayscale image. Integer samples are
/// divided by their type maximum; colour is reduced with
/// `0.299 R + 0.587 G + 0.114 B`.
pub fn decode_image(path: &Path) -> Result<GrayImage> {
    let bad = |msg: String| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, msg),
        )
    };
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => bad(other.to_string()),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = if img.color().has_color() {
        img.to_rgb32f()
            .pixels()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    } else {
        match &img {
            image::DynamicImage::ImageLuma8(buf) => {
                buf.pixels().map(|p| p[0] as f64 / u8::MAX as f64).collect()
            }
            image::DynamicImage::ImageLuma16(buf) => buf
                .pixels()
                .map(|p| p[0] as f64 / u16::MAX as f64)
                .collect(),
            image::DynamicImage::ImageLumaA8(buf) => {
                buf.pixels().map(|p| p[0] as f64 / u8::MAX as f64).collect()
            }
            image::DynamicImage::ImageLumaA16(buf) => buf
                .pixels()
                .map(|p| p[0] as f64 / u16::MAX as f64)
                .collect(),
            other => other.to_luma32f().pixels().map(|p| p[0] as f64).collect(),
        }
    };
    let pixels = pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    GrayImage::new(h, w, pixels, ValueRange::UNIT).map_err(|e| bad(e.to_string()))
}

/// Settings that determine cached feature values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractSettings {
    pub clahe: ClaheParams,
    pub features: FeatureConfig,
}

impl ExtractSettings {
    fn header_cell(&self) -> String {
        let c = &self.clahe;
        let f = &self.features;
        format!(
            "covelm-features;layout={};clahe={}:{}x{}:{};glcm={}:{};fft={}",
            layout_digest(FeatureSubset::Combined),
            c.clip_limit,
            c.tiles.0,
            c.tiles.1,
            c.bins,
            f.glcm_levels,
            f.glcm_distance,
            if f.fft_log { "log" } else { "raw" },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub rows: usize,
    /// Rows per class in [`CLASS_ORDER`].
    pub counts: Vec<usize>,
    pub layout_digest: String,
    pub errors: Vec<CacheError>,
}

fn resolve(base: Option<&Path>, path: &str) -> PathBuf {
    let p = Path::new(path);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

/// Decodes, preprocesses and featurizes every record, then writes the cache
/// in record order. Relative record paths are resolved against `base_dir`.
///
/// With `strict`, the first failing image aborts the build; otherwise the
/// failure is logged in the summary and the row skipped.
pub fn build_feature_cache(
    records: &[ManifestRecord],
    base_dir: Option<&Path>,
    out_path: &Path,
    settings: &ExtractSettings,
    strict: bool,
) -> Result<CacheSummary> {
    settings.clahe.validate()?;
    let results: Vec<Result<Vec<f64>>> = records
        .par_iter()
        .map(|r| {
            let img = decode_image(&resolve(base_dir, &r.path))?;
            let pre = preprocess_pipeline(&img, &settings.clahe)?;
            Ok(extract_features(&pre, &settings.features)?.into_inner())
        })
        .collect();

    let mut rows = Vec::with_capacity(records.len());
    let mut errors = Vec::new();
    for (record, result) in records.iter().zip(results) {
        match result {
            Ok(values) => rows.push((record, values)),
            Err(e) if strict => return Err(e),
            Err(e) => {
                warn!("skipping {}: {e}", record.path);
                errors.push(CacheError {
                    path: record.path.clone(),
                    message: e.to_string(),
                });
            }
        }
    }

    let mut counts = vec![0; CLASS_ORDER.len()];
    for (r, _) in &rows {
        counts[r.label.index()] += 1;
    }
    let table: Vec<(String, Label, Vec<f64>)> = rows
        .into_iter()
        .map(|(r, v)| (r.path.clone(), r.label, v))
        .collect();
    write_feature_cache(out_path, &table, settings)?;
    Ok(CacheSummary {
        rows: table.len(),
        counts,
        layout_digest: layout_digest(FeatureSubset::Combined),
        errors,
    })
}

pub fn write_feature_cache(
    out_path: &Path,
    rows: &[(String, Label, Vec<f64>)],
    settings: &ExtractSettings,
) -> Result<()> {
    let file = File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(out_path, io),
        other => Error::io(out_path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut header = vec![settings.header_cell(), "label".to_string()];
    header.extend(feature_names());
    wtr.write_record(&header).map_err(csv_err)?;
    for (id, label, values) in rows {
        if values.len() != FEATURE_LEN {
            return Err(Error::invalid(format!(
                "row {id} has {} features, expected {FEATURE_LEN}",
                values.len()
            )));
        }
        let mut record = vec![id.clone(), label.to_string()];
        record.extend(values.iter().map(|v| v.to_string()));
        wtr.write_record(&record).map_err(csv_err)?;
    }
    let mut inner = wtr
        .into_inner()
        .map_err(|e| Error::io(out_path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(out_path, e))
}

/// A loaded feature cache.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    /// `N × 168`.
    pub features: Matrix,
    /// First header cell, with the layout digest and extraction settings.
    pub meta: String,
    pub layout_digest: String,
}

impl FeatureTable {
    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index()).collect()
    }

    /// CLAHE settings recorded in the header, if parseable.
    pub fn clahe(&self) -> Option<ClaheParams> {
        let field = self
            .meta
            .split(';')
            .find_map(|p| p.strip_prefix("clahe="))?;
        let mut parts = field.split(':');
        let clip_limit = parts.next()?.parse().ok()?;
        let (ty, tx) = parts.next()?.split_once('x')?;
        let bins = parts.next()?.parse().ok()?;
        Some(ClaheParams {
            clip_limit,
            tiles: (ty.parse().ok()?, tx.parse().ok()?),
            bins,
        })
    }
}

/// Loads a feature cache, checking its layout digest against this build.
pub fn read_feature_cache(path: &Path) -> Result<FeatureTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let parse_err = |e: csv::Error| Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    };
    let header = rdr.headers().map_err(parse_err)?.clone();
    let meta = header.get(0).unwrap_or_default().to_string();
    let found = meta
        .split(';')
        .find_map(|p| p.strip_prefix("layout="))
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "first header cell carries no layout digest".into(),
        })?
        .to_string();
    let expected = layout_digest(FeatureSubset::Combined);
    if found != expected {
        return Err(Error::LayoutMismatch { expected, found });
    }
    if header.len() != FEATURE_LEN + 2 {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected {} columns, found {}",
                FEATURE_LEN + 2,
                header.len()
            ),
        });
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(parse_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        ids.push(row[0].to_string());
        labels.push(
            row[1]
                .parse::<Label>()
                .map_err(|message| Error::Parse { line, message })?,
        );
        for cell in row.iter().skip(2) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number {cell:?}"),
            })?;
            values.push(v);
        }
    }
    let features = Matrix::from_row_slice(ids.len(), FEATURE_LEN, &values);
    Ok(FeatureTable {
        ids,
        labels,
        features,
        meta,
        layout_digest: found,
    })
}

/// Builds manifest records from a folder tree whose first-level directories
/// are named after the classes (`covid/`, `normal/`, `pneumonia/`, any case).
/// Files are listed in sorted order with paths relative to `root`.
pub fn scan_class_folders(root: &Path, view: &str) -> Result<Vec<ManifestRecord>> {
    const EXTENSIONS: [&str; 7] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff", "pgm"];
    let mut records = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let Some(label) = dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<Label>().ok())
        else {
            continue;
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            records.push(ManifestRecord {
                path: rel.to_string_lossy().replace('\\', "/"),
                label,
                view: view.to_string(),
            });
        }
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    wtr.write_record(MANIFEST_HEADER).map_err(to_err)?;
    for r in records {
        wtr.write_record([r.path.as_str(), r.label.as_str(), r.view.as_str()])
            .map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}
