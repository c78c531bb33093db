use std::path::{Path, PathBuf};

use actf_core::bench::{fidelity, mann_whitney_z, FidelityRow};
use actf_core::checkpoint::{load_checkpoint, save_checkpoint};
use actf_core::data::{generate, load_dataset, Sample};
use actf_core::gradcheck::{audit, CheckResult};
use actf_core::model::VIDEO_CHANNELS;
use actf_core::train::{evaluate, fit, TrainReport};
use actf_core::{ModelParams, Variant};

use crate::config::{ExperimentConfig, Split};
use crate::output::{float, header, out_dir, write, Table};
use crate::CliError;

pub const CHECKPOINT: &str = "checkpoint.actk";

/// Final numbers of one trained variant.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub params: usize,
    pub final_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub report: TrainReport,
}

pub struct Datasets {
    pub train: Vec<Sample<f64>>,
    pub test: Vec<Sample<f64>>,
}

pub fn datasets(cfg: &ExperimentConfig) -> Result<Datasets, CliError> {
    Ok(Datasets {
        train: generate(&cfg.task(Split::Train))?,
        test: generate(&cfg.task(Split::Test))?,
    })
}

/// Trains `variant` from the configured initialization.
pub fn train_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    data: &Datasets,
) -> Result<(ModelParams<f64>, VariantResult), CliError> {
    let mut model = ModelParams::<f64>::init(cfg.model_config().with_variant(variant))?;
    let report = fit(&mut model, &data.train, Some(&data.test), &cfg.train_config())?;
    let train_acc = evaluate(&model, &data.train)?.accuracy;
    let test_acc = evaluate(&model, &data.test)?.accuracy;
    for e in &report.epochs {
        eprintln!(
            "[{variant}] epoch {} lr {:e} loss {:.4} train {:.3} test {}",
            e.epoch,
            e.lr,
            e.loss,
            e.train_acc,
            e.eval_acc.map_or("-".into(), |a| format!("{a:.3}"))
        );
    }
    let result = VariantResult {
        variant,
        params: model.num_params(),
        final_loss: report.epochs.last().map_or(f64::NAN, |e| e.loss),
        train_acc,
        test_acc,
        report,
    };
    Ok((model, result))
}

const METRIC_COLUMNS: [&str; 5] = ["variant", "params", "final_loss", "train_acc", "test_acc"];

fn metric_row(r: &VariantResult) -> Vec<String> {
    vec![
        r.variant.to_string(),
        r.params.to_string(),
        float(r.final_loss),
        float(r.train_acc),
        float(r.test_acc),
    ]
}

pub struct TrainOutcome {
    pub result: VariantResult,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub metrics: PathBuf,
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let dir = out_dir(cfg)?;
    let data = datasets(cfg)?;
    let (model, result) = train_variant(cfg, cfg.variant, &data)?;
    let checkpoint = dir.join(CHECKPOINT);
    save_checkpoint(&checkpoint, &model, &cfg.hash())?;
    let variant = [("variant", cfg.variant.to_string())];
    write(&dir, "config.toml", &cfg.to_toml())?;
    let report = write(&dir, "report.tsv", &(header("train", cfg, &variant) + &result.report.to_tsv()))?;
    let mut table = Table::new(header("train", cfg, &variant), &METRIC_COLUMNS);
    table.row(&metric_row(&result));
    let metrics = write(&dir, "metrics.tsv", &table.into_string())?;
    Ok(TrainOutcome {
        result,
        checkpoint,
        report,
        metrics,
    })
}

pub struct EvalOutcome {
    pub accuracy: f64,
    pub per_class: PathBuf,
    pub final_weights: PathBuf,
}

/// Evaluates a checkpoint on a manifest, or on the configured test split.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, dataset: Option<&Path>) -> Result<EvalOutcome, CliError> {
    let (model, ck) = load_checkpoint::<f64>(checkpoint)?;
    let samples = match dataset {
        Some(m) => load_dataset::<f64>(m)?,
        None => generate(&cfg.task(Split::Test))?,
    };
    let mc = &model.config;
    let expected = [mc.frames, VIDEO_CHANNELS, mc.height, mc.width];
    for (i, s) in samples.iter().enumerate() {
        if s.video.dims() != expected {
            return Err(CliError::Usage(format!(
                "checkpoint expects videos of dims {expected:?} but sample {i} has {:?}",
                s.video.dims()
            )));
        }
        if s.label >= mc.n_classes {
            return Err(CliError::Usage(format!(
                "checkpoint has {} classes but sample {i} is labelled {}",
                mc.n_classes, s.label
            )));
        }
    }
    let ev = evaluate(&model, &samples)?;
    let dir = out_dir(cfg)?;
    let extra = [
        ("variant", mc.variant.to_string()),
        ("checkpoint_config_hash", ck.config_hash.clone()),
    ];

    let mut table = Table::new(header("eval", cfg, &extra), &["class", "correct", "total", "accuracy"]);
    for (c, &(right, total)) in ev.per_class.iter().enumerate() {
        let acc = if total == 0 { f64::NAN } else { right as f64 / total as f64 };
        table.row(&[c.to_string(), right.to_string(), total.to_string(), float(acc)]);
    }
    table.row(&[
        "all".into(),
        ev.per_class.iter().map(|p| p.0).sum::<usize>().to_string(),
        samples.len().to_string(),
        float(ev.accuracy),
    ]);
    let per_class = write(&dir, "per_class.tsv", &table.into_string())?;

    // delta weighs the ACTF vector and epsilon the pooled spatial vector, after softmax
    let mut table = Table::new(
        header("eval", cfg, &extra),
        &["video", "label", "predicted", "delta_post_softmax", "epsilon_post_softmax"],
    );
    for (i, (s, p)) in samples.iter().zip(&ev.predictions).enumerate() {
        let [d, e] = p.final_weights.unwrap_or([f64::NAN; 2]);
        table.row(&[i.to_string(), s.label.to_string(), p.class.to_string(), float(d), float(e)]);
    }
    let final_weights = write(&dir, "final_weights.tsv", &table.into_string())?;
    Ok(EvalOutcome {
        accuracy: ev.accuracy,
        per_class,
        final_weights,
    })
}

pub struct BenchOutcome {
    pub rows: Vec<FidelityRow>,
    /// Mann–Whitney z of each row's errors against the previous row's;
    /// positive when the previous dimension is worse.
    pub z_vs_previous: Vec<Option<f64>>,
    pub table: PathBuf,
}

pub fn sketchbench(cfg: &ExperimentConfig) -> Result<BenchOutcome, CliError> {
    let dir = out_dir(cfg)?;
    let seed = cfg.seeds().bench;
    let mut rows = Vec::new();
    let mut zs = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for &d in &cfg.bench_dims {
        let (row, errs) = fidelity(cfg.bench_c, d, cfg.bench_trials, seed)?;
        zs.push(prev.as_ref().map(|p| mann_whitney_z(p, &errs)));
        eprintln!("[sketchbench] C={} d={d} median {:.4}", row.c, row.median);
        rows.push(row);
        prev = Some(errs);
    }
    let mut table = Table::new(
        header("sketchbench", cfg, &[]),
        &["c", "d", "trials", "median", "q25", "q75", "q90", "mean", "z_vs_previous"],
    );
    for (r, z) in rows.iter().zip(&zs) {
        table.row(&[
            r.c.to_string(),
            r.d.to_string(),
            r.trials.to_string(),
            float(r.median),
            float(r.q25),
            float(r.q75),
            float(r.q90),
            float(r.mean),
            z.map_or("nan".into(), float),
        ]);
    }
    let table = write(&dir, "sketchbench.tsv", &table.into_string())?;
    Ok(BenchOutcome {
        rows,
        z_vs_previous: zs,
        table,
    })
}

pub struct GradcheckOutcome {
    pub results: Vec<CheckResult>,
    pub table: PathBuf,
}

impl GradcheckOutcome {
    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed()).collect()
    }
}

/// Runs the audit and writes its table. Failures are reported by the caller.
pub fn gradcheck(cfg: &ExperimentConfig) -> Result<GradcheckOutcome, CliError> {
    let dir = out_dir(cfg)?;
    let results = audit(cfg.seed, cfg.gradcheck_seeds)?;
    let mut table = Table::new(
        header("gradcheck", cfg, &[]),
        &["name", "seed", "rel_err", "tol", "coords", "passed"],
    );
    for r in &results {
        table.row(&[
            r.name.clone(),
            r.seed.to_string(),
            format!("{:.3e}", r.rel_err),
            format!("{:e}", r.tol),
            r.coords.to_string(),
            r.passed().to_string(),
        ]);
    }
    let table = write(&dir, "gradcheck.tsv", &table.into_string())?;
    Ok(GradcheckOutcome { results, table })
}

pub struct AblateOutcome {
    pub results: Vec<VariantResult>,
    pub table: PathBuf,
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<AblateOutcome, CliError> {
    let dir = out_dir(cfg)?;
    let data = datasets(cfg)?;
    let mut results = Vec::new();
    for &v in &cfg.ablate_variants {
        let (_, r) = train_variant(cfg, v, &data)?;
        let extra = [("variant", v.to_string())];
        write(&dir, &format!("report_{v}.tsv"), &(header("ablate", cfg, &extra) + &r.report.to_tsv()))?;
        results.push(r);
    }
    let mut table = Table::new(header("ablate", cfg, &[]), &METRIC_COLUMNS);
    for r in &results {
        table.row(&metric_row(r));
    }
    let table = write(&dir, "ablation.tsv", &table.into_string())?;
    Ok(AblateOutcome { results, table })
}
