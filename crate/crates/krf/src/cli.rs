//! Command-line pipeline: simulate, preprocess, fit-variogram, train,
//! predict, evaluate, importance.
//!
//! Each command reads one config file (`--config`), never mutates its
//! inputs, writes its outputs atomically, and exits 0 on success, 1 on a
//! validation or processing failure (single-line `error: ...` on stderr) and
//! 2 on usage errors.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SillMode};
use crate::datagen::{generate_tunnel, strata_rows};
use crate::error::{KrfError, Result};
use crate::eval::{
    classification_metrics, micro_pairs, permutation_importance, pr_curve, roc_auc, roc_curve,
    average_precision, kfold_grid_search,
};
use crate::forest::{fit_forest, Dataset, Forest};
use crate::fusion::{run_krf, FusionConfig};
use crate::preprocess::{
    clean_records, encode_ground, normalize_for_kriging, three_sigma_mask, GroundVector,
    Transform, ALL_CLASSES, FEATURE_NAMES,
};
use crate::table;
use crate::variogram::{empirical_semivariogram, fit_model, VariogramModel};

#[derive(Parser)]
#[command(
    name = "krf",
    version,
    about = "Ground-class prediction ahead of an EPB shield",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tunnel: telemetry, strata, truth and borehole tables.
    Simulate(CommonArgs),
    /// Clean telemetry and attach ground labels from the strata table.
    Preprocess(CommonArgs),
    /// Fit a semivariogram model to the regional scalar series.
    FitVariogram(CommonArgs),
    /// Train the random forest on the preprocessed dataset.
    Train(CommonArgs),
    /// Run the fused rolling prediction over the dataset stream.
    Predict(PredictArgs),
    /// Score predictions against dataset labels and write the metrics report.
    Evaluate(CommonArgs),
    /// Permutation importance of the operating parameters.
    Importance(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the pipeline config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Kriging system convention: "ordinary" or "paper-literal".
    #[arg(long)]
    mode: Option<String>,
    /// Number of prior predictions used for extrapolation.
    #[arg(long)]
    window: Option<usize>,
}

/// Entry point used by both the binary and the integration tests. Returns
/// the process exit code.
pub fn run(args: &[String]) -> i32 {
    let mut argv = Vec::with_capacity(args.len() + 1);
    argv.push("krf".to_string());
    argv.extend_from_slice(args);
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => with_config(&args, simulate),
        Command::Preprocess(args) => with_config(&args, preprocess),
        Command::FitVariogram(args) => with_config(&args, fit_variogram),
        Command::Train(args) => with_config(&args, train),
        Command::Predict(args) => predict_command(&args),
        Command::Evaluate(args) => with_config(&args, evaluate),
        Command::Importance(args) => with_config(&args, importance),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            // one machine-parseable line, whatever the source error looks like
            let message: String = e
                .to_string()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!("error: {message}");
            1
        }
    }
}

struct Ctx {
    config: PipelineConfig,
    base: PathBuf,
    seed: u64,
}

impl Ctx {
    fn path(&self, relative: &str) -> PathBuf {
        self.config.resolve(&self.base, relative)
    }

    fn require(&self, relative: &str, produced_by: &str) -> Result<PathBuf> {
        let path = self.path(relative);
        if !path.exists() {
            return Err(KrfError::MissingArtifact(format!(
                "{} (produced by `krf {produced_by}`)",
                path.display()
            )));
        }
        Ok(path)
    }
}

fn with_config(args: &CommonArgs, f: fn(&Ctx) -> Result<()>) -> Result<()> {
    let (config, base) = PipelineConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(config.seed);
    f(&Ctx { config, base, seed })
}

fn warn_extra_columns(extra: &[String], path: &Path) {
    if !extra.is_empty() {
        eprintln!(
            "warning: ignoring unknown columns [{}] in {}",
            extra.join(", "),
            path.display()
        );
    }
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let spec = ctx.config.simulate.to_spec(ctx.seed)?;
    let tunnel = generate_tunnel(&spec)?;
    table::write_telemetry(&ctx.path(&ctx.config.paths.telemetry), &tunnel.records, None, ctx.seed)?;
    let mut strata = Vec::new();
    for (x, g) in tunnel.ring_chainage.iter().zip(&tunnel.ground_truth) {
        for (class, thickness) in strata_rows(g, spec.face_diameter_m) {
            strata.push((*x, class, thickness));
        }
    }
    table::write_strata(&ctx.path(&ctx.config.paths.strata), &strata, ctx.seed)?;
    let truth: Vec<(f64, GroundVector)> = tunnel
        .ring_chainage
        .iter()
        .copied()
        .zip(tunnel.ground_truth.iter().copied())
        .collect();
    table::write_truth(&ctx.path(&ctx.config.paths.truth), &truth, ctx.seed)?;
    table::write_samples(&ctx.path(&ctx.config.paths.borehole), &tunnel.borehole, ctx.seed)?;
    println!(
        "simulated {} rings / {} records (region {:?}, seed {})",
        tunnel.ring_chainage.len(),
        tunnel.records.len(),
        spec.region,
        ctx.seed
    );
    Ok(())
}

fn preprocess(ctx: &Ctx) -> Result<()> {
    let telemetry_path = ctx.require(&ctx.config.paths.telemetry, "simulate")?;
    let strata_path = ctx.require(&ctx.config.paths.strata, "simulate")?;
    let telemetry = table::read_telemetry(&telemetry_path)?;
    warn_extra_columns(&telemetry.extra_columns, &telemetry_path);
    let strata = table::read_strata(&strata_path)?;
    let groups = table::group_strata(&strata);
    if groups.is_empty() {
        return Err(KrfError::InsufficientData("strata table is empty".into()));
    }
    let spec_diameter = ctx.config.simulate.face_diameter_m;
    let faces: Vec<(f64, GroundVector)> = groups
        .iter()
        .map(|(x, rows)| Ok((*x, encode_ground(rows, spec_diameter)?)))
        .collect::<Result<_>>()?;

    let report = clean_records(&telemetry.records, ctx.config.preprocess.tukey_k)?;
    let labels: Vec<GroundVector> = report
        .kept
        .iter()
        .map(|r| nearest_face(&faces, r.chainage))
        .collect();
    table::write_telemetry(
        &ctx.path(&ctx.config.paths.dataset),
        &report.kept,
        Some(&labels),
        ctx.seed,
    )?;
    println!(
        "kept {} of {} records ({} non-working, {} outliers)",
        report.kept.len(),
        telemetry.records.len(),
        report.dropped_nonworking,
        report.dropped_outliers
    );
    Ok(())
}

/// Ground vector of the face whose chainage is closest to `x` (earlier face
/// wins ties).
fn nearest_face(faces: &[(f64, GroundVector)], x: f64) -> GroundVector {
    let mut best = 0;
    let mut best_distance = f64::INFINITY;
    for (i, (chainage, _)) in faces.iter().enumerate() {
        let d = (chainage - x).abs();
        if d < best_distance {
            best_distance = d;
            best = i;
        }
    }
    faces[best].1
}

/// Serialized form of the fitted variogram artifact.
#[derive(Debug, Serialize, Deserialize)]
struct VariogramArtifact {
    model: ModelSection,
    eda: EdaSection,
    bins: Vec<BinSection>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelSection {
    kind: String,
    nugget: f64,
    partial_sill: f64,
    range_m: f64,
    weighted_sse: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdaSection {
    samples_in: usize,
    removed_outliers: usize,
    ks_statistic: f64,
    ks_normal: bool,
    transform: String,
    log_shift: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BinSection {
    h: f64,
    gamma: f64,
    n_pairs: usize,
}

fn fit_variogram(ctx: &Ctx) -> Result<()> {
    let borehole_path = ctx.require(&ctx.config.paths.borehole, "simulate")?;
    let samples = table::read_samples(&borehole_path)?;
    let values: Vec<f64> = samples.iter().map(|(_, v)| *v).collect();
    let mask = three_sigma_mask(&values)?;
    let kept: Vec<(f64, f64)> = samples
        .iter()
        .zip(&mask)
        .filter(|(_, &keep)| keep)
        .map(|(s, _)| *s)
        .collect();
    let removed_outliers = samples.len() - kept.len();

    let kept_values: Vec<f64> = kept.iter().map(|(_, v)| *v).collect();
    let alpha = ctx.config.variogram.alpha;
    let (ks_statistic, ks_normal) = if kept_values.len() >= 20 {
        crate::preprocess::ks_normality(&kept_values, alpha)?
    } else {
        (0.0, true)
    };
    let (transformed, transform) = normalize_for_kriging(&kept_values, alpha)?;
    let pairs: Vec<(f64, f64)> = kept
        .iter()
        .map(|(x, _)| *x)
        .zip(transformed.iter().copied())
        .collect();

    let extent = pairs.iter().map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max)
        - pairs.iter().map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
    let max_lag = if ctx.config.variogram.max_lag_m > 0.0 {
        ctx.config.variogram.max_lag_m
    } else {
        extent / 2.0
    };
    let bins = empirical_semivariogram(&pairs, ctx.config.variogram.lag_width_m, max_lag)?;
    let kinds = ctx.config.variogram.parsed_kinds()?;
    let fit = fit_model(&bins, &kinds)?;

    let artifact = VariogramArtifact {
        model: ModelSection {
            kind: fit.model.kind.to_string(),
            nugget: fit.model.nugget,
            partial_sill: fit.model.partial_sill,
            range_m: fit.model.range,
            weighted_sse: fit.weighted_sse,
        },
        eda: EdaSection {
            samples_in: samples.len(),
            removed_outliers,
            ks_statistic,
            ks_normal,
            transform: match transform {
                Transform::Identity => "identity".into(),
                Transform::Log { .. } => "log".into(),
            },
            log_shift: match transform {
                Transform::Identity => 0.0,
                Transform::Log { shift } => shift,
            },
        },
        bins: bins
            .iter()
            .map(|b| BinSection {
                h: b.h,
                gamma: b.gamma_star,
                n_pairs: b.n_pairs,
            })
            .collect(),
    };
    let body = toml::to_string(&artifact)
        .map_err(|e| KrfError::Config(format!("serialize variogram artifact: {e}")))?;
    table::write_atomic(
        &ctx.path(&ctx.config.paths.variogram_model),
        &format!("# seed = {}\n{body}", ctx.seed),
    )?;
    println!(
        "fitted {} model: nugget {:.4}, partial sill {:.4}, range {:.2} m (sse {:.3e})",
        fit.model.kind, fit.model.nugget, fit.model.partial_sill, fit.model.range, fit.weighted_sse
    );
    Ok(())
}

fn load_variogram_artifact(path: &Path) -> Result<VariogramModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| KrfError::io(path.display().to_string(), e))?;
    let artifact: VariogramArtifact = toml::from_str(&text)
        .map_err(|e| KrfError::Config(format!("{}: {e}", path.display())))?;
    VariogramModel::new(
        artifact.model.kind.parse()?,
        artifact.model.nugget,
        artifact.model.partial_sill,
        artifact.model.range_m,
    )
}

fn load_dataset(ctx: &Ctx) -> Result<(Vec<crate::preprocess::OperatingRecord>, Option<Vec<GroundVector>>)> {
    let dataset_path = ctx.require(&ctx.config.paths.dataset, "preprocess")?;
    let dataset = table::read_telemetry(&dataset_path)?;
    warn_extra_columns(&dataset.extra_columns, &dataset_path);
    Ok((dataset.records, dataset.labels))
}

fn labeled_dataset(ctx: &Ctx) -> Result<Dataset> {
    let (records, labels) = load_dataset(ctx)?;
    let labels = labels.ok_or_else(|| {
        KrfError::InvalidInput(format!(
            "{} has no f_I..f_VI label columns; run `krf preprocess` with a strata table",
            ctx.config.paths.dataset
        ))
    })?;
    Dataset::new(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        records.iter().map(|r| r.features().to_vec()).collect(),
        labels,
    )
}

fn train(ctx: &Ctx) -> Result<()> {
    let dataset = labeled_dataset(ctx)?;
    let hp = if ctx.config.train.grid_search {
        let grid = ctx.config.train.grid(ctx.seed);
        let outcome = kfold_grid_search(&dataset, &grid, ctx.config.train.cv_folds, ctx.seed)?;
        for (hp, score) in grid.iter().zip(&outcome.mean_scores) {
            println!(
                "cv trees={} depth={} split={} leaf={} -> accuracy {:.4}",
                hp.n_trees, hp.max_depth, hp.min_samples_split, hp.min_samples_leaf, score
            );
        }
        outcome.best
    } else {
        ctx.config.train.hyperparams(ctx.seed)
    };
    let forest = fit_forest(&dataset, &hp)?;
    forest.save(&ctx.path(&ctx.config.paths.forest))?;
    println!(
        "trained {} trees (depth<={}, leaf>={}) on {} rows",
        hp.n_trees,
        hp.max_depth,
        hp.min_samples_leaf,
        dataset.len()
    );
    Ok(())
}

fn predict_command(args: &PredictArgs) -> Result<()> {
    let (config, base) = PipelineConfig::load(&args.common.config)?;
    let seed = args.common.seed.unwrap_or(config.seed);
    let ctx = Ctx { config, base, seed };

    let forest_path = ctx.require(&ctx.config.paths.forest, "train")?;
    let forest = Forest::load(&forest_path)?;
    let (records, _) = load_dataset(&ctx)?;

    let base_model = if ctx.config.fusion.model_kind.is_empty() {
        let model_path = ctx.require(&ctx.config.paths.variogram_model, "fit-variogram")?;
        load_variogram_artifact(&model_path)?
    } else {
        VariogramModel::new(
            ctx.config.fusion.model_kind.parse()?,
            ctx.config.fusion.nugget,
            ctx.config.fusion.partial_sill,
            ctx.config.fusion.range_m,
        )?
    };
    let model = match ctx.config.fusion.parsed_sill_mode()? {
        SillMode::Off => base_model,
        SillMode::Fixed => base_model.with_sill(ctx.config.fusion.sill_value)?,
        SillMode::Auto => {
            if forest.label_component_variance <= 0.0 {
                return Err(KrfError::Config(
                    "sill_mode = \"auto\" needs a forest trained on varying labels; \
                     use \"fixed\" or \"off\""
                        .into(),
                ));
            }
            base_model.with_sill(forest.label_component_variance)?
        }
    };

    let mode = match &args.mode {
        Some(text) => text.parse()?,
        None => ctx.config.fusion.kriging_mode()?,
    };
    let window = args.window.unwrap_or(ctx.config.fusion.window);
    let fusion = FusionConfig::new(window, mode, model)?;
    let predictions = run_krf(&records, &forest, &fusion)?;
    table::write_predictions(&ctx.path(&ctx.config.paths.predictions), &predictions, ctx.seed)?;
    println!(
        "predicted {} records ({} mode, window {})",
        predictions.len(),
        mode,
        window
    );
    Ok(())
}

fn evaluate(ctx: &Ctx) -> Result<()> {
    let predictions_path = ctx.require(&ctx.config.paths.predictions, "predict")?;
    let predictions = table::read_predictions(&predictions_path)?;
    let dataset = labeled_dataset(ctx)?;
    if predictions.len() != dataset.len() {
        return Err(KrfError::LengthMismatch(format!(
            "{} predictions vs {} dataset rows",
            predictions.len(),
            dataset.len()
        )));
    }
    let actual: Vec<_> = dataset
        .labels
        .iter()
        .map(|g| g.main_class())
        .collect::<Result<_>>()?;
    let predicted: Vec<_> = predictions.iter().map(|p| p.main).collect();
    let scores: Vec<[f64; 6]> = predictions.iter().map(|p| p.fractions).collect();

    let report = classification_metrics(&actual, &predicted)?;
    let roc = roc_auc(&scores, &actual)?;
    let (pooled_scores, pooled_labels) = micro_pairs(&scores, &actual);
    let pr_auc_micro = average_precision(&pooled_scores, &pooled_labels)?;

    let mut out = format!("# seed = {}\n# krf metrics report\n", ctx.seed);
    out.push_str(&format!("samples = {}\n", actual.len()));
    out.push_str(&format!("accuracy = {}\n", report.accuracy));
    out.push_str(&format!("f1_macro = {}\n", report.macro_f1));
    match roc.macro_auc {
        Some(auc) => out.push_str(&format!("roc_auc_macro = {auc}\n")),
        None => out.push_str("roc_auc_macro = undefined\n"),
    }
    out.push_str(&format!("pr_auc_micro = {pr_auc_micro}\n"));
    if !roc.excluded.is_empty() {
        let excluded: Vec<&str> = roc.excluded.iter().map(|c| c.as_str()).collect();
        out.push_str(&format!(
            "# notice: ROC AUC undefined for classes without both positives and negatives: {}\n",
            excluded.join(",")
        ));
    }

    out.push_str("\n[per_class]\nclass,precision,recall,f1,support,roc_auc\n");
    for class in ALL_CLASSES {
        let i = class.index();
        let auc = roc.per_class[i]
            .map(|a| a.to_string())
            .unwrap_or_else(|| "undefined".into());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            class,
            report.precision[i],
            report.recall[i],
            report.f1[i],
            report.confusion.row_sum(class),
            auc
        ));
    }

    out.push_str("\n[confusion]\nactual_vs_predicted");
    for class in ALL_CLASSES {
        out.push_str(&format!(",{class}"));
    }
    out.push('\n');
    for actual_class in ALL_CLASSES {
        out.push_str(actual_class.as_str());
        for predicted_class in ALL_CLASSES {
            out.push_str(&format!(",{}", report.confusion.count(actual_class, predicted_class)));
        }
        out.push('\n');
    }

    for class in ALL_CLASSES {
        let i = class.index();
        if roc.per_class[i].is_none() {
            continue;
        }
        let column: Vec<f64> = scores.iter().map(|s| s[i]).collect();
        let labels: Vec<bool> = actual.iter().map(|&a| a == class).collect();
        out.push_str(&format!("\n[roc_curve {class}]\nthreshold,fpr,tpr\n"));
        for p in roc_curve(&column, &labels) {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.x, p.y));
        }
    }

    out.push_str("\n[pr_curve_micro]\nthreshold,recall,precision\n");
    for p in pr_curve(&pooled_scores, &pooled_labels) {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.x, p.y));
    }

    table::write_atomic(&ctx.path(&ctx.config.paths.metrics), &out)?;
    println!(
        "accuracy {:.4}, macro F1 {:.4}, PR AUC {:.4} over {} samples",
        report.accuracy,
        report.macro_f1,
        pr_auc_micro,
        actual.len()
    );
    Ok(())
}

fn importance(ctx: &Ctx) -> Result<()> {
    let forest_path = ctx.require(&ctx.config.paths.forest, "train")?;
    let forest = Forest::load(&forest_path)?;
    let dataset = labeled_dataset(ctx)?;
    let report = permutation_importance(&forest, &dataset, ctx.seed)?;
    let mut out = format!("# seed = {}\n", ctx.seed);
    if report.uniform_fallback {
        out.push_str("# warning: all permutation drops were zero; uniform fallback\n");
    }
    out.push_str("feature,importance\n");
    for (name, score) in forest.feature_names.iter().zip(&report.scores) {
        out.push_str(&format!("{name},{score}\n"));
    }
    table::write_atomic(&ctx.path(&ctx.config.paths.importance), &out)?;
    println!("wrote importance for {} features", report.scores.len());
    Ok(())
}
