use std::path::{Path, PathBuf};

use fewshot_core::baselines::{crossval_eval, Baseline, CvScheme};
use fewshot_core::checkpoint::Checkpoint;
use fewshot_core::data::{
    filter_invalid, generate_synthetic, normalize_scores, Dataset, GroupStructure, Rejection, SynthConfig,
};
use fewshot_core::experiment::{prepare, run_experiment, ExperimentConfig, ExperimentError, Seeds};
use fewshot_core::metrics::MetricReport;
use fewshot_core::shapley::{ranking, shapley_impact_each};
use fewshot_core::trainer::{evaluate, EvalReport, TrainError};
use serde::Serialize;
use serde_json::json;

use crate::args::{CompareArgs, ImpactArgs, SweepArgs, SynthArgs, TrainArgs};
use crate::config::{check_features, out_dir, required_path, resolve_run, FileConfig};
use crate::error::CliError;
use crate::output::{file_digest, DataRef, Run};

pub const DEFAULT_K_VALUES: [usize; 5] = [1, 3, 5, 10, 60];
pub const DEFAULT_SAMPLES: usize = 200;

/// Published reference rows: method, protocol, MAE (%), SD.
pub const REFERENCE_ROWS: [(&str, &str, f64, f64); 5] = [
    ("least squares", "4-fold participant-level", 12.04, 0.0618),
    ("least squares", "leave-one-out", 16.90, 0.0851),
    ("bayesian ridge", "leave-one-out", 15.42, 0.0759),
    ("multi-task joint learning", "published", 4.91, 0.9400),
    ("proposed", "published", 4.02, 0.0344),
];

struct Loaded {
    ds: Dataset,
    input: DataRef,
    rejections: Vec<Rejection>,
}

/// Load, drop incomplete subjects, normalise, and optionally keep only the
/// base features.
fn load_data(path: &Path, features: Option<usize>) -> Result<Loaded, CliError> {
    let sha256 = file_digest(path)?;
    let raw = Dataset::load_detect(path)?;
    let (clean, rejections) = filter_invalid(&raw);
    if clean.is_empty() {
        return Err(CliError::Data(format!("{}: no complete subjects left after cleaning", path.display())));
    }
    let mut ds = normalize_scores(&clean)?;
    match (features, ds.dim()) {
        (Some(19), 22) => ds = ds.base_features_only(),
        (Some(want), have) if want != have => {
            return Err(CliError::Data(format!(
                "{} has {have} features, {want} requested",
                path.display()
            )))
        }
        _ => {}
    }
    Ok(Loaded {
        input: DataRef {
            path: path.display().to_string(),
            sha256,
            subjects: ds.subject_ids().len(),
            records: ds.len(),
            rejected_rows: rejections.len(),
        },
        ds,
        rejections,
    })
}

fn load_checkpoint(flag: &Option<PathBuf>, file: &FileConfig) -> Result<Checkpoint, CliError> {
    let path = required_path(flag, &file.checkpoint, "checkpoint")?;
    if !path.exists() {
        return Err(CliError::usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(&path)?)
}

fn warn_on_digest(ck: &Checkpoint, input: &DataRef) {
    if let Some(d) = &ck.data_digest {
        if d != &input.sha256 {
            eprintln!("warning: {} differs from the data this checkpoint was trained on", input.path);
        }
    }
}

#[derive(Serialize)]
struct PredictionCsvRow<'a> {
    split: &'a str,
    episode_id: usize,
    test_id: u32,
    subject_id: u32,
    shift: usize,
    predicted: f64,
    actual: f64,
}

const PREDICTION_HEADER: [&str; 7] = ["split", "episode_id", "test_id", "subject_id", "shift", "predicted", "actual"];

/// Predictions are clamped to the score range here only; metrics use the raw
/// model output.
fn prediction_rows<'a>(split: &'a str, report: &EvalReport) -> Vec<PredictionCsvRow<'a>> {
    report
        .rows
        .iter()
        .map(|r| PredictionCsvRow {
            split,
            episode_id: r.episode_id,
            test_id: r.test_id,
            subject_id: r.subject_id,
            shift: r.shift,
            predicted: r.prediction.clamp(0.0, 1.0) * 100.0,
            actual: r.truth * 100.0,
        })
        .collect()
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let base = SynthConfig::default();
    let structure = match args.group_block.or(file.group_block) {
        Some(0) => return Err(CliError::usage("--group-block must be at least 1")),
        Some(block_size) => Some(GroupStructure {
            block_size,
            strength: args
                .group_strength
                .or(file.group_strength)
                .unwrap_or(GroupStructure::default().strength),
        }),
        None => None,
    };
    let cfg = SynthConfig {
        subjects: args.subjects.or(file.subjects).unwrap_or(base.subjects),
        tests: args.tests.or(file.tests).unwrap_or(base.tests),
        features: check_features(args.features.or(file.features))?.unwrap_or(base.features),
        seed: args.common.seed.or(file.seed).unwrap_or(base.seed),
        noise: args.noise.or(file.noise).unwrap_or(base.noise),
        nonlinearity: args.nonlinearity.or(file.nonlinearity).unwrap_or(base.nonlinearity),
        structure,
    };
    if cfg.subjects < 2 || cfg.tests < 1 {
        return Err(CliError::usage("need at least 2 subjects and 1 test"));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite() && cfg.nonlinearity.is_finite()) {
        return Err(CliError::usage("--noise must be a non-negative number"));
    }
    let name = args.output.or(file.output.clone()).unwrap_or_else(|| "synthetic.csv".into());

    let dir = out_dir(&args.common, &file);
    let mut run = Run::start(&dir, "synth", &cfg, json!({ "generator": cfg.seed }), vec![])?;
    let ds = run.time("generate", || generate_synthetic(&cfg))?;
    let path = run.artifact(&name);
    ds.save(&path)?;
    println!("wrote {} records ({} subjects × {} tests) to {}", ds.len(), cfg.subjects, cfg.tests, path.display());
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    strategy: String,
    cv_mode: String,
    train: MetricReport,
    test: MetricReport,
    final_loss: f64,
    epochs: usize,
    train_subjects: Vec<u32>,
    test_subjects: Vec<u32>,
    passthrough_features: Vec<usize>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let settings = resolve_run(&args.common, &args.run, &file)?;
    let cfg = settings.experiment;
    let data = load_data(&settings.data, settings.features)?;
    let dir = out_dir(&args.common, &file);

    let mut run = Run::start(
        &dir,
        "train",
        &cfg,
        serde_json::to_value(Seeds::from_base(cfg.seed))?,
        vec![data.input.clone()],
    )?;
    run.write_csv("rejections.csv", &data.rejections, &["subject_id", "test_id", "reason"])?;
    let out = run.time("train", || run_experiment(&data.ds, &cfg))?;

    let mut ck = Checkpoint::from_outcome(&out);
    ck.data_digest = Some(data.input.sha256.clone());
    ck.save(&run.artifact("checkpoint.json"))?;

    let metrics = TrainMetrics {
        strategy: label(&cfg.strategy),
        cv_mode: label(&cfg.train.cv_mode),
        train: out.report.train.metrics,
        test: out.test.metrics,
        final_loss: out.report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        epochs: out.report.epoch_losses.len(),
        train_subjects: out.train_subjects.clone(),
        test_subjects: out.test_subjects.clone(),
        passthrough_features: out.passthrough_features.clone(),
        warnings: out.report.warnings.clone(),
    };
    run.write_json("metrics.json", &metrics)?;
    let losses: Vec<LossRow> = out
        .report
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(i, &loss)| LossRow { epoch: i + 1, loss })
        .collect();
    run.write_csv("loss.csv", &losses, &["epoch", "loss"])?;
    run.write_csv("predictions_train.csv", &prediction_rows("train", &out.report.train), &PREDICTION_HEADER)?;
    run.write_csv("predictions_test.csv", &prediction_rows("test", &out.test), &PREDICTION_HEADER)?;

    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "train MAE {:.2}% SD {:.4} | test MAE {:.2}% SD {:.4} ({} predictions)",
        metrics.train.mae, metrics.train.sd, metrics.test.mae, metrics.test.sd, metrics.test.count
    );
    let manifest = run.finish()?;
    println!("manifest: {}", manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct ComparisonRow {
    method: String,
    protocol: String,
    source: &'static str,
    mae: f64,
    sd: f64,
    count: Option<usize>,
}

pub fn compare(args: CompareArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let ck = load_checkpoint(&args.checkpoint, &file)?;
    let data_path = required_path(&args.data, &file.data, "data")?;
    let data = load_data(&data_path, Some(ck.shape.input_dim))?;
    warn_on_digest(&ck, &data.input);
    let seed = args.common.seed.or(file.seed).unwrap_or(ck.config.seed);
    let dir = out_dir(&args.common, &file);

    let mut run = Run::start(
        &dir,
        "compare",
        &json!({ "checkpoint_config": ck.config, "fold_seed": seed }),
        json!({ "folds": seed, "run": ck.seeds }),
        vec![data.input.clone()],
    )?;

    let mut rows = Vec::new();
    let measured = [
        (Baseline::LeastSquares, CvScheme::KFold(4), "least squares", "4-fold participant-level"),
        (Baseline::LeastSquares, CvScheme::LeaveOneOut, "least squares", "leave-one-out"),
        (Baseline::BayesianRidge, CvScheme::LeaveOneOut, "bayesian ridge", "leave-one-out"),
    ];
    for (baseline, scheme, method, protocol) in measured {
        let report = run
            .time(&format!("{method} {protocol}"), || crossval_eval(baseline, &data.ds, scheme, seed))
            .map_err(|e| CliError::Data(format!("{method} ({protocol}): {e}")))?;
        rows.push(ComparisonRow {
            method: method.into(),
            protocol: protocol.into(),
            source: "measured",
            mae: report.metrics.mae,
            sd: report.metrics.sd,
            count: Some(report.metrics.count),
        });
    }

    let episodes = ck.test_episodes(&data.ds).map_err(TrainError::from)?;
    let proposed = run.time("proposed", || evaluate(&ck.model, &episodes, ck.config.train.cv_mode))?;
    rows.push(ComparisonRow {
        method: "proposed".into(),
        protocol: format!(
            "held-out split r={} k={} cv={}",
            ck.config.r,
            ck.config.k,
            label(&ck.config.train.cv_mode)
        ),
        source: "measured",
        mae: proposed.metrics.mae,
        sd: proposed.metrics.sd,
        count: Some(proposed.metrics.count),
    });
    for (method, protocol, mae, sd) in REFERENCE_ROWS {
        rows.push(ComparisonRow {
            method: method.into(),
            protocol: protocol.into(),
            source: "reference",
            mae,
            sd,
            count: None,
        });
    }

    run.write_csv("comparison.csv", &rows, &["method", "protocol", "source", "mae", "sd", "count"])?;
    for r in rows.iter().filter(|r| r.source == "measured") {
        println!("{:<16} {:<40} MAE {:>6.2}% SD {:.4}", r.method, r.protocol, r.mae, r.sd);
    }
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct ImpactRow {
    rank: usize,
    feature: String,
    mean_abs_phi: f64,
}

pub fn impact(args: ImpactArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let ck = load_checkpoint(&args.checkpoint, &file)?;
    let data_path = required_path(&args.data, &file.data, "data")?;
    let data = load_data(&data_path, Some(ck.shape.input_dim))?;
    warn_on_digest(&ck, &data.input);
    let samples = args.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES);
    if samples == 0 {
        return Err(CliError::usage("--samples must be at least 1"));
    }
    let seed = args.common.seed.or(file.seed).unwrap_or(ck.config.seed);
    let dir = out_dir(&args.common, &file);
    let mut run = Run::start(
        &dir,
        "impact",
        &json!({ "checkpoint_config": ck.config, "samples": samples }),
        json!({ "shapley": seed }),
        vec![data.input.clone()],
    )?;

    let prepared = prepare(&data.ds, ck.stats.as_ref());
    let background: Vec<Vec<f64>> = prepared.records_of(&ck.train_subjects).map(|r| r.features.clone()).collect();
    let episodes = ck.test_episodes(&data.ds).map_err(TrainError::from)?;
    let model = &ck.model;
    // Each point varies the target's features and keeps its episode's support.
    let points: Vec<_> = episodes
        .iter()
        .map(|e| {
            let f = move |x: &[f64]| {
                let mut probe = e.clone();
                probe.members.last_mut().expect("non-empty").features = x.to_vec();
                model.predict(&probe).map_or(f64::NAN, |p| p * 100.0)
            };
            (f, e.target().features.clone())
        })
        .collect();
    let report = run.time("shapley", || shapley_impact_each(&points, &background, samples, seed));

    let names = &prepared.schema.names;
    let rows: Vec<ImpactRow> = ranking(&report)
        .into_iter()
        .enumerate()
        .map(|(i, j)| ImpactRow {
            rank: i + 1,
            feature: names[j].clone(),
            mean_abs_phi: report.mean_abs[j],
        })
        .collect();
    run.write_csv("impact.csv", &rows, &["rank", "feature", "mean_abs_phi"])?;
    for r in rows.iter().take(5) {
        println!("{:>2}. {:<10} {:.4}", r.rank, r.feature, r.mean_abs_phi);
    }
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    k: usize,
    status: &'static str,
    train_mae: Option<f64>,
    train_sd: Option<f64>,
    test_mae: Option<f64>,
    test_sd: Option<f64>,
    test_predictions: Option<usize>,
    message: String,
}

pub fn sweep_k(args: SweepArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let settings = resolve_run(&args.common, &args.run, &file)?;
    let k_values = args
        .k_values
        .or(file.k_values.clone())
        .unwrap_or_else(|| DEFAULT_K_VALUES.to_vec());
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(CliError::usage("--k-values needs positive episode sizes"));
    }
    let data = load_data(&settings.data, settings.features)?;
    let dir = out_dir(&args.common, &file);
    let base = settings.experiment;
    let mut run = Run::start(
        &dir,
        "sweep-k",
        &json!({ "base": base, "k_values": k_values }),
        serde_json::to_value(Seeds::from_base(base.seed))?,
        vec![data.input.clone()],
    )?;

    let mut rows = Vec::new();
    for &k in &k_values {
        let cfg = ExperimentConfig { k, ..base };
        let result = run.time(&format!("k={k}"), || run_experiment(&data.ds, &cfg));
        let row = match result {
            Ok(out) => SweepRow {
                k,
                status: "ok",
                train_mae: Some(out.report.train.metrics.mae),
                train_sd: Some(out.report.train.metrics.sd),
                test_mae: Some(out.test.metrics.mae),
                test_sd: Some(out.test.metrics.sd),
                test_predictions: Some(out.test.metrics.count),
                message: out.report.warnings.join("; "),
            },
            Err(
                e @ (ExperimentError::Episode(_)
                | ExperimentError::TestSplit { .. }
                | ExperimentError::Train(TrainError::Divergence { .. })),
            ) => SweepRow {
                k,
                status: "error",
                train_mae: None,
                train_sd: None,
                test_mae: None,
                test_sd: None,
                test_predictions: None,
                message: e.to_string(),
            },
            Err(e) => return Err(e.into()),
        };
        match row.test_mae {
            Some(m) => println!("k={k:<3} test MAE {m:.2}%"),
            None => println!("k={k:<3} error: {}", row.message),
        }
        rows.push(row);
    }
    if let Some(best) = best_k(&rows) {
        println!("best k = {best}");
    }
    run.write_csv(
        "sweep_k.csv",
        &rows,
        &["k", "status", "train_mae", "train_sd", "test_mae", "test_sd", "test_predictions", "message"],
    )?;
    run.finish()?;
    Ok(())
}

fn best_k(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .filter_map(|r| r.test_mae.map(|m| (r.k, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}
