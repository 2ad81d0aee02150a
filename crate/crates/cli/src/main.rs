//! `covelm` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use covelm_core::elm::{self, Activation, TrainConfig};
use covelm_core::eval::{self, CvConfig, CvReport};
use covelm_core::features::{layout_digest, subset_for_digest, FeatureConfig, FeatureSubset};
use covelm_core::ingest::{self, ExtractSettings, FeatureTable};
use covelm_core::persist;
use covelm_core::preprocess::ClaheParams;
use covelm_core::Matrix;

const EXIT_RUNTIME: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Chest X-ray classification with texture/frequency features and an
/// Extreme Learning Machine.
///
/// Exit codes: 0 success, 1 runtime failure, 2 partial success, 64 usage error.
/// The COVELM_THREADS environment variable caps worker threads.
#[derive(Debug, Parser)]
#[command(name = "covelm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Preprocess every manifest image and write the feature cache.
    Extract(ExtractArgs),
    /// Stratified k-fold cross-validation on a feature cache.
    Crossval(CrossvalArgs),
    /// Train on an entire feature cache and save the model.
    Train(TrainArgs),
    /// Score a feature cache with a saved model.
    Predict(PredictArgs),
    /// Cross-validated accuracy for a list of hidden-layer sizes.
    Sweep(SweepArgs),
    /// Cross-validated fold sensitivities for the frequency, texture and combined subsets.
    Ablate(AblateArgs),
    /// Generate a manifest from a folder tree with covid/, normal/ and pneumonia/ subfolders.
    Manifest(ManifestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SubsetArg {
    Texture,
    Frequency,
    Combined,
}

impl From<SubsetArg> for FeatureSubset {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::Texture => FeatureSubset::Texture,
            SubsetArg::Frequency => FeatureSubset::Frequency,
            SubsetArg::Combined => FeatureSubset::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActivationArg {
    #[value(name = "rbf_l2", alias = "rbf-l2")]
    RbfL2,
    Sigmoid,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::RbfL2 => Activation::RbfL2,
            ActivationArg::Sigmoid => Activation::Sigmoid,
        }
    }
}

fn parse_tiles(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| format!("bad tile count {v:?}"))
    };
    Ok((parse(h)?, parse(w)?))
}

fn parse_positive_real(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Manifest with header `path,label,view`; relative paths resolve against its folder.
    #[arg(long)]
    manifest: PathBuf,
    /// Output feature cache.
    #[arg(long)]
    out: PathBuf,
    /// CLAHE clip limit, as a multiple of the mean bin count.
    #[arg(long, default_value = "2.0", value_parser = parse_positive_real)]
    clip_limit: f64,
    /// CLAHE tile grid as ROWSxCOLS.
    #[arg(long, default_value = "8x8", value_parser = parse_tiles)]
    tiles: (usize, usize),
    /// CLAHE histogram bins.
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(usize))]
    bins: usize,
    /// GLCM quantization levels.
    #[arg(long, default_value_t = 32)]
    glcm_levels: usize,
    /// GLCM pixel displacement.
    #[arg(long, default_value_t = 1)]
    glcm_distance: usize,
    /// Summarize raw FFT magnitudes instead of ln(1 + |F|).
    #[arg(long)]
    raw_fft: bool,
    /// Keep every view instead of only PA/AP.
    #[arg(long)]
    all_views: bool,
    /// Abort on the first unreadable image instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Hidden neurons (L).
    #[arg(long, default_value_t = 350, value_parser = parse_hidden)]
    hidden: usize,
    /// Hidden-node activation.
    #[arg(long, value_enum, default_value = "rbf_l2")]
    activation: ActivationArg,
    /// Seed for fold assignment and hidden-layer initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature columns to use: texture (first 140), frequency (last 28) or both.
    #[arg(long, value_enum, default_value = "combined")]
    subset: SubsetArg,
}

#[derive(Debug, Args)]
struct FoldArgs {
    /// Number of folds.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Plain (unstratified) k-fold.
    #[arg(long)]
    no_stratify: bool,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    /// Feature cache written by `extract`.
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    folds: FoldArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Output JSON report.
    #[arg(long)]
    report: PathBuf,
    /// Record wall-clock timing in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Feature cache written by `extract`.
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    model_args: ModelArgs,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Feature cache written by `extract`.
    #[arg(long)]
    features: PathBuf,
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Output CSV: id, true label, predicted label, one score per class.
    #[arg(long)]
    out: PathBuf,
}

fn parse_hidden(v: &str) -> Result<usize, String> {
    v.trim()
        .parse::<usize>()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("bad hidden size {v:?}"))
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Feature cache written by `extract`.
    #[arg(long)]
    features: PathBuf,
    /// Comma-separated hidden sizes (default 10, 20, ..., 500).
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_hidden,
        hide_default_value = true,
        default_values_t = (1..=50).map(|i| i * 10).collect::<Vec<usize>>()
    )]
    l_values: Vec<usize>,
    #[command(flatten)]
    folds: FoldArgs,
    /// Hidden-node activation.
    #[arg(long, value_enum, default_value = "rbf_l2")]
    activation: ActivationArg,
    /// Seed for fold assignment and hidden-layer initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature columns to use: texture (first 140), frequency (last 28) or both.
    #[arg(long, value_enum, default_value = "combined")]
    subset: SubsetArg,
    /// Output JSON report.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Feature cache written by `extract`.
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    folds: FoldArgs,
    /// Hidden neurons (L).
    #[arg(long, default_value_t = 350, value_parser = parse_hidden)]
    hidden: usize,
    /// Hidden-node activation.
    #[arg(long, value_enum, default_value = "rbf_l2")]
    activation: ActivationArg,
    /// Seed for fold assignment and hidden-layer initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON report.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    /// Folder containing covid/, normal/ and pneumonia/ subfolders.
    #[arg(long)]
    root: PathBuf,
    /// Output manifest. Paths are written relative to its folder when it sits in the root.
    #[arg(long)]
    out: PathBuf,
    /// View tag written for every record.
    #[arg(long, default_value = "PA")]
    view: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    let outcome = match cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::Crossval(a) => cmd_crossval(a).map(|_| 0),
        Command::Train(a) => cmd_train(a).map(|_| 0),
        Command::Predict(a) => cmd_predict(a).map(|_| 0),
        Command::Sweep(a) => cmd_sweep(a).map(|_| 0),
        Command::Ablate(a) => cmd_ablate(a).map(|_| 0),
        Command::Manifest(a) => cmd_manifest(a).map(|_| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

/// Joins the error chain, skipping causes whose text the previous layer already shows.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("COVELM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("COVELM_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_table(path: &Path) -> Result<FeatureTable> {
    Ok(ingest::read_feature_cache(path)?)
}

fn cmd_extract(a: ExtractArgs) -> Result<u8> {
    let records = ingest::load_manifest(&a.manifest)?;
    let records = if a.all_views {
        records
    } else {
        let (kept, dropped) = ingest::filter_frontal(&records);
        if dropped > 0 {
            eprintln!("skipped {dropped} non-frontal record(s)");
        }
        kept
    };
    let settings = ExtractSettings {
        clahe: ClaheParams {
            clip_limit: a.clip_limit,
            tiles: a.tiles,
            bins: a.bins,
        },
        features: FeatureConfig {
            glcm_levels: a.glcm_levels,
            glcm_distance: a.glcm_distance,
            fft_log: !a.raw_fft,
            ..FeatureConfig::default()
        },
    };
    let base = a.manifest.parent();
    let summary = ingest::build_feature_cache(&records, base, &a.out, &settings, a.strict)?;
    println!("wrote {} rows to {}", summary.rows, a.out.display());
    println!("layout digest {}", summary.layout_digest);
    for (name, count) in ingest::class_order().iter().zip(&summary.counts) {
        println!("  {name:<10} {count}");
    }
    if summary.errors.is_empty() {
        Ok(0)
    } else {
        for e in &summary.errors {
            eprintln!("failed: {}: {}", e.path, e.message);
        }
        Ok(EXIT_PARTIAL)
    }
}

fn plan_for(table: &FeatureTable, folds: &FoldArgs, seed: u64) -> Result<eval::FoldPlan> {
    Ok(eval::kfold_split(
        &table.label_indices(),
        folds.k,
        seed,
        !folds.no_stratify,
    )?)
}

#[derive(Serialize)]
struct RunReport<'a> {
    command: &'static str,
    features: String,
    #[serde(flatten)]
    cv: &'a CvReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing_seconds: Option<f64>,
}

fn print_cv_summary(report: &CvReport) {
    let pooled = &report.pooled;
    println!(
        "{:<10} {:>9} {:>9} {:>9} {:>15}",
        "class", "precision", "recall", "f1", "sensitivity CI"
    );
    for (i, name) in pooled.class_order.iter().enumerate() {
        let c = &pooled.per_class[i];
        println!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>15}",
            name, c.precision, c.recall, c.f1, report.sensitivity_ci.per_class[i]
        );
    }
    println!("accuracy   {:.4}", pooled.accuracy);
    println!("macro F1   {:.4}", pooled.macro_f1);
    println!("overall sensitivity {}", report.sensitivity_ci.overall);
    let aucs: Vec<String> = report
        .pooled_roc
        .iter()
        .map(|r| r.as_ref().map_or("n/a".into(), |r| format!("{:.4}", r.auc)))
        .collect();
    println!("pooled one-vs-rest AUC {}", aucs.join(" "));
}

fn cmd_crossval(a: CrossvalArgs) -> Result<()> {
    let started = Instant::now();
    let table = load_table(&a.features)?;
    let plan = plan_for(&table, &a.folds, a.model.seed)?;
    let config = CvConfig {
        hidden: a.model.hidden,
        activation: a.model.activation.into(),
        seed: a.model.seed,
        subset: a.model.subset.into(),
    };
    let mut report = eval::cross_validate(
        &table.features,
        &table.label_indices(),
        &ingest::class_order(),
        &plan,
        &config,
    )?;
    report.config.layout_digest = Some(table.layout_digest.clone());
    report.config.clahe = table.clahe();
    let elapsed = started.elapsed().as_secs_f64();
    write_json(
        &a.report,
        &RunReport {
            command: "crossval",
            features: a.features.display().to_string(),
            cv: &report,
            timing_seconds: a.timing.then_some(elapsed),
        },
    )?;
    print_cv_summary(&report);
    info!("crossval finished in {elapsed:.2}s");
    Ok(())
}

fn subset_matrix(features: &Matrix, subset: FeatureSubset) -> Matrix {
    let r = subset.range();
    features.columns(r.start, r.len()).into_owned()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let table = load_table(&a.features)?;
    let subset: FeatureSubset = a.model_args.subset.into();
    let config = TrainConfig {
        hidden: a.model_args.hidden,
        activation: a.model_args.activation.into(),
        seed: a.model_args.seed,
    };
    let x = subset_matrix(&table.features, subset);
    let mut model = elm::train(&x, &table.label_indices(), &ingest::class_order(), &config)?;
    model.layout_digest = Some(layout_digest(subset));
    persist::save_model(&model, &a.model)?;
    let (_, predicted) = model.predict(&x)?;
    let hits = predicted
        .iter()
        .zip(table.label_indices())
        .filter(|(p, t)| **p == *t)
        .count();
    println!(
        "trained on {} rows ({} features, L={}); training accuracy {:.4}",
        x.nrows(),
        x.ncols(),
        model.n_hidden(),
        hits as f64 / x.nrows() as f64
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let table = load_table(&a.features)?;
    let model = persist::load_model(&a.model)?;
    let subset = match &model.layout_digest {
        Some(d) => subset_for_digest(d).context("model has an unknown feature layout")?,
        None if model.n_features() == FeatureSubset::Combined.len() => FeatureSubset::Combined,
        None => bail!("model has no feature layout and does not take 168 features"),
    };
    let x = subset_matrix(&table.features, subset);
    let (scores, predicted) = model.predict(&x)?;

    let mut out =
        csv::Writer::from_path(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut header = vec![
        "id".to_string(),
        "label".to_string(),
        "predicted".to_string(),
    ];
    header.extend(model.class_order.iter().map(|c| format!("score_{c}")));
    out.write_record(&header)?;
    for (i, id) in table.ids.iter().enumerate() {
        let mut row = vec![
            id.clone(),
            table.labels[i].to_string(),
            model.class_order[predicted[i]].clone(),
        ];
        row.extend(scores.row(i).iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    println!(
        "wrote {} predictions to {}",
        table.ids.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepReport {
    command: &'static str,
    features: String,
    k: usize,
    stratified: bool,
    activation: Activation,
    seed: u64,
    subset: FeatureSubset,
    layout_digest: String,
    rows: Vec<eval::SweepRow>,
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let table = load_table(&a.features)?;
    let plan = plan_for(&table, &a.folds, a.seed)?;
    let config = CvConfig {
        hidden: 1,
        activation: a.activation.into(),
        seed: a.seed,
        subset: a.subset.into(),
    };
    let rows = eval::sweep_hidden(
        &table.features,
        &table.label_indices(),
        &ingest::class_order(),
        &plan,
        &a.l_values,
        &config,
    )?;
    println!("{:>6} {:>9} {:>9}", "L", "accuracy", "macro F1");
    for r in &rows {
        println!("{:>6} {:>9.4} {:>9.4}", r.hidden, r.accuracy, r.macro_f1);
    }
    write_json(
        &a.report,
        &SweepReport {
            command: "sweep",
            features: a.features.display().to_string(),
            k: plan.k,
            stratified: plan.stratified,
            activation: config.activation,
            seed: a.seed,
            subset: config.subset,
            layout_digest: table.layout_digest.clone(),
            rows,
        },
    )
}

#[derive(Serialize)]
struct AblationReport {
    command: &'static str,
    features: String,
    k: usize,
    stratified: bool,
    hidden: usize,
    activation: Activation,
    seed: u64,
    layout_digest: String,
    subsets: Vec<eval::AblationEntry>,
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let table = load_table(&a.features)?;
    let plan = plan_for(&table, &a.folds, a.seed)?;
    let config = CvConfig {
        hidden: a.hidden,
        activation: a.activation.into(),
        seed: a.seed,
        subset: FeatureSubset::Combined,
    };
    let subsets = eval::ablate_subsets(
        &table.features,
        &table.label_indices(),
        &ingest::class_order(),
        &plan,
        &config,
    )?;
    println!("{:<10} {:>16} {:>9}", "subset", "median recall", "accuracy");
    for e in &subsets {
        println!(
            "{:<10} {:>16.4} {:>9.4}",
            e.subset.as_str(),
            e.median,
            e.accuracy
        );
    }
    write_json(
        &a.report,
        &AblationReport {
            command: "ablate",
            features: a.features.display().to_string(),
            k: plan.k,
            stratified: plan.stratified,
            hidden: a.hidden,
            activation: config.activation,
            seed: a.seed,
            layout_digest: table.layout_digest.clone(),
            subsets,
        },
    )
}

fn cmd_manifest(a: ManifestArgs) -> Result<()> {
    let mut records = ingest::scan_class_folders(&a.root, &a.view)?;
    // Manifest paths resolve against the manifest's own folder.
    let out_dir = a
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let same_dir = match (fs::canonicalize(out_dir), fs::canonicalize(&a.root)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    if !same_dir {
        let root = fs::canonicalize(&a.root).unwrap_or(a.root.clone());
        for r in &mut records {
            r.path = root.join(&r.path).to_string_lossy().into_owned();
        }
    }
    ingest::write_manifest(&a.out, &records)?;
    println!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}
