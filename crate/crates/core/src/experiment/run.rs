use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::io::{prepare_dir, Manifest};
use crate::data::synthetic::blob_dataset;
use crate::data::{split_dataset, Label, LabeledDataset, Sample, Split};
use crate::error::{config_err, format_err, value_err, Error, Result};
use crate::eval::{
    confusion, confusion_svg, emit_plots, emit_report, metrics, performance_svg, roc, roc_svg, ConfusionMatrix, Metrics,
    ReportFiles, ReportRow, RocCurve,
};
use crate::rng::Rng;
use crate::train::{evaluate_samples, train, TrainingHistory, THRESHOLD};
use crate::zoo::{build, build_vgg_feature_extractor, Family, ModelSpec, WeightContainer};

use super::{DataSource, DatasetConfig, ExperimentConfig};

/// Loads, crops and splits the configured dataset.
pub fn load_dataset(cfg: &DatasetConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let path = || cfg.path.clone().expect("validated");
    match cfg.source {
        DataSource::Synthetic => {
            let mut syn = cfg.synthetic.clone();
            if let Some(size) = cfg.input_size {
                syn.size = size;
            }
            split_dataset(blob_dataset(&syn, cfg.seed)?, cfg.ratios, cfg.seed, cfg.stratified)
        }
        DataSource::Directory => {
            let mut crops = cfg.crops.clone();
            if let Some(size) = cfg.input_size {
                crops.output_size = size;
            }
            Ok(prepare_dir(&path(), &crops, cfg.ratios, cfg.seed, cfg.stratified)?.0)
        }
        DataSource::Manifest => {
            let p = path();
            let mut manifest = Manifest::load(&p)?;
            if let Some(size) = cfg.input_size {
                manifest.output_size = size;
            }
            let root = match &manifest.root {
                Some(r) => r.clone(),
                None => p.parent().unwrap_or(Path::new(".")).to_path_buf(),
            };
            manifest.materialize(&root)
        }
    }
}

/// Test-split evaluation of one set of weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TestEval {
    pub probabilities: Vec<f64>,
    pub labels: Vec<Label>,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// `None` when the split holds a single class.
    pub roc: Option<RocCurve>,
}

impl TestEval {
    pub fn auc(&self) -> Option<f64> {
        self.roc.as_ref().map(|r| r.auc)
    }
}

fn sample_shape(samples: &[Sample]) -> Result<[usize; 3]> {
    match samples.first().map(|s| s.image.shape()) {
        Some(&[c, h, w]) => Ok([c, h, w]),
        _ => Err(value_err!("dataset is empty")),
    }
}

/// Builds the network of `spec` and loads `weights` into it.
fn network_for(spec: &ModelSpec, weights: &WeightContainer) -> Result<crate::nn::Network> {
    let mut net = build(spec, 0)?;
    weights.apply(&mut net)?;
    Ok(net)
}

/// Scores `samples` with `weights` loaded into a fresh `spec` network.
pub fn evaluate_weights(
    spec: &ModelSpec,
    weights: &WeightContainer,
    samples: &[Sample],
    batch_size: usize,
) -> Result<TestEval> {
    let net = network_for(spec, weights)?;
    let (loss, _, probabilities) = evaluate_samples(&net, samples, batch_size)?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let cm = confusion(&probabilities, &labels, THRESHOLD)?;
    let both = labels.contains(&Label::Polyp) && labels.contains(&Label::Normal);
    let roc = if both { Some(roc(&probabilities, &labels)?) } else { None };
    Ok(TestEval {
        metrics: metrics(&cm)?,
        probabilities,
        labels,
        loss,
        confusion: cm,
        roc,
    })
}

/// Summary stored as `run.toml` in every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub model: String,
    pub description: String,
    pub dropout: Vec<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stop_reason: String,
    pub elapsed_minutes: f64,
    pub overfit_flag: bool,
    pub overfit_window: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub history: TrainingHistory,
    pub best: WeightContainer,
    pub final_weights: WeightContainer,
    pub final_eval: TestEval,
    pub best_eval: TestEval,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

const METRICS_HEADER: &str =
    "model,tn,fp,fn,tp,accuracy,misclassification,sensitivity,precision,specificity,f1,auc,loss";

fn metrics_csv(rows: &[(&str, &TestEval)]) -> String {
    let mut s = format!("# positive=polyp threshold>={THRESHOLD} split=test\n{METRICS_HEADER}\n");
    for (name, e) in rows {
        let (cm, m) = (e.confusion, e.metrics);
        s.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            cm.tn,
            cm.fp,
            cm.fn_,
            cm.tp,
            m.accuracy,
            m.misclassification,
            opt(m.sensitivity),
            opt(m.precision),
            opt(m.specificity),
            opt(m.f1),
            opt(e.auc()),
            e.loss
        ));
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_plots(history: Option<&TrainingHistory>, cm: &ConfusionMatrix, roc: Option<&RocCurve>, dir: &Path) -> Result<()> {
    match (history, roc) {
        (Some(h), Some(r)) => emit_plots(h, cm, r, dir).map(|_| ()),
        _ => {
            if let Some(h) = history {
                write(&dir.join("performance.svg"), &performance_svg(h))?;
            }
            write(&dir.join("confusion.svg"), &confusion_svg(cm))?;
            if let Some(r) = roc {
                write(&dir.join("roc.svg"), &roc_svg(r))?;
            }
            Ok(())
        }
    }
}

/// Writes `metrics.csv`, `roc.csv`, `confusion.svg` and `roc.svg` for one
/// evaluation into `dir`.
pub fn write_evaluation(name: &str, eval: &TestEval, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("metrics.csv"), &metrics_csv(&[(name, eval)]))?;
    if let Some(r) = &eval.roc {
        write(&dir.join("roc.csv"), &r.to_csv())?;
    }
    write_plots(None, &eval.confusion, eval.roc.as_ref(), dir)
}

/// Trains model `name` of `cfg` on `data` and writes the run directory:
/// `history.csv`, `<name>.best.pnw`, `<name>.final.pnw`, `metrics.csv`
/// (test split, final and `-Best` rows), `roc.csv`, `roc.best.csv`, the SVG
/// plots, `run.toml` and a single-model `experiment.toml`.
pub fn run_model(cfg: &ExperimentConfig, name: &str, data: &LabeledDataset, out: &Path) -> Result<RunResult> {
    cfg.validate()?;
    let entry = cfg.model(name)?;
    let mut spec = entry.resolve_spec()?;
    spec.input_shape = sample_shape(data.samples())?;
    let seed = cfg.train.seed.wrapping_add(entry.seed_offset);
    let init_seed = Rng::new(seed).fork(2).seed();
    let mut net = match (&entry.backbone_weights, spec.family) {
        (Some(path), Family::VggFeatureExtractor) => {
            build_vgg_feature_extractor(&spec, Some(&WeightContainer::load(path)?), init_seed)?
        }
        (Some(_), Family::SimpleCnn) => {
            return Err(config_err!("model `{name}`: backbone_weights needs a VGG model"));
        }
        (None, _) => build(&spec, init_seed)?,
    };
    let test = data.subset(Split::Test);
    if test.is_empty() {
        return Err(value_err!("test split is empty"));
    }
    let train_cfg = crate::train::TrainConfig { seed, ..cfg.train.clone() };
    let augment: Option<&AugmentConfig> = spec.augment.then_some(&cfg.augment);
    let outcome = train(&mut net, data, &train_cfg, augment)?;

    let final_eval = evaluate_weights(&spec, &outcome.final_weights, &test, cfg.train.batch_size)?;
    let best_eval = evaluate_weights(&spec, &outcome.best, &test, cfg.train.batch_size)?;
    let history = outcome.history;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    history.save(&out.join("history.csv"))?;
    outcome.best.save(&out.join(format!("{name}.best.pnw")))?;
    outcome.final_weights.save(&out.join(format!("{name}.final.pnw")))?;
    let best_name = format!("{name}-Best");
    write(&out.join("metrics.csv"), &metrics_csv(&[(name, &final_eval), (&best_name, &best_eval)]))?;
    if let Some(r) = &final_eval.roc {
        write(&out.join("roc.csv"), &r.to_csv())?;
    }
    if let Some(r) = &best_eval.roc {
        write(&out.join("roc.best.csv"), &r.to_csv())?;
    }
    write_plots(Some(&history), &final_eval.confusion, final_eval.roc.as_ref(), out)?;

    let record = RunRecord {
        model: name.to_string(),
        description: spec.describe(),
        dropout: spec.dropout_rates.clone(),
        seed,
        epochs: history.epochs(),
        best_epoch: history.best_epoch,
        stop_reason: history.stop_reason.to_string(),
        elapsed_minutes: history.elapsed_minutes,
        overfit_flag: history.overfit_flag,
        overfit_window: cfg.train.overfit_window,
        train_size: data.count(Split::Train),
        val_size: data.count(Split::Val),
        test_size: test.len(),
        fingerprint: net.fingerprint(),
    };
    let text = toml::to_string(&record).map_err(|e| config_err!("cannot serialise run record: {e}"))?;
    write(&out.join("run.toml"), &text)?;
    let mut single = cfg.single(name)?;
    single.models[0].spec = Some(spec);
    single.save(&out.join("experiment.toml"))?;

    Ok(RunResult {
        dir: out.to_path_buf(),
        record,
        history,
        best: outcome.best,
        final_weights: outcome.final_weights,
        final_eval,
        best_eval,
    })
}

/// Runs every model in order into `out/<model>/`, then writes the report
/// into `out/report/`.
pub fn run_grid(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    let mut results = Vec::with_capacity(cfg.models.len());
    for m in &cfg.models {
        results.push(run_model(cfg, &m.name, &data, &out.join(&m.name))?);
    }
    report_runs(out, &out.join("report"))?;
    Ok(results)
}

/// A finished run read back from its directory.
#[derive(Debug, Clone)]
pub struct CollectedRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub history: TrainingHistory,
    pub final_cm: ConfusionMatrix,
    pub final_auc: Option<f64>,
    pub best_cm: ConfusionMatrix,
    pub best_auc: Option<f64>,
    pub roc: Option<RocCurve>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Chunk {
    Text(String),
    Num(u64),
}

/// Sort key that orders `M3-4` before `M3-10`.
fn natural_key(s: &str) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(c) = rest.chars().next() {
        let digit = c.is_ascii_digit();
        let end = rest
            .find(|ch: char| ch.is_ascii_digit() != digit)
            .unwrap_or(rest.len());
        let (head, tail) = rest.split_at(end);
        out.push(match head.parse() {
            Ok(n) if digit => Chunk::Num(n),
            _ => Chunk::Text(head.to_string()),
        });
        rest = tail;
    }
    out
}

fn parse_metrics_row(text: &str, model: &str, path: &Path) -> Result<(ConfusionMatrix, Option<f64>)> {
    let missing = || format_err!("{}: no row for `{model}`", path.display());
    let line = text
        .lines()
        .find(|l| l.split(',').next() == Some(model))
        .ok_or_else(missing)?;
    let f: Vec<&str> = line.split(',').collect();
    let bad = || format_err!("{}: malformed row `{line}`", path.display());
    if f.len() != METRICS_HEADER.split(',').count() {
        return Err(bad());
    }
    let count = |i: usize| f[i].parse::<u64>().map_err(|_| bad());
    let cm = ConfusionMatrix::new(count(1)?, count(2)?, count(3)?, count(4)?);
    let auc = match f[11] {
        "undefined" => None,
        v => Some(v.parse().map_err(|_| bad())?),
    };
    Ok((cm, auc))
}

/// Reads every run directory (one holding `run.toml`) directly under
/// `runs_dir`, ordered by model name with numbers compared numerically.
pub fn collect_runs(runs_dir: &Path) -> Result<Vec<CollectedRun>> {
    let mut runs = Vec::new();
    for entry in fs::read_dir(runs_dir).map_err(|e| Error::io(runs_dir, e))? {
        let dir = entry.map_err(|e| Error::io(runs_dir, e))?.path();
        let record_path = dir.join("run.toml");
        if !record_path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&record_path).map_err(|e| Error::io(&record_path, e))?;
        let record: RunRecord = toml::from_str(&text)
            .map_err(|e| format_err!("{}: {}", record_path.display(), e.message().trim_end()))?;
        let mut history = TrainingHistory::load(&dir.join("history.csv"), record.overfit_window)?;
        history.elapsed_minutes = record.elapsed_minutes;
        let metrics_path = dir.join("metrics.csv");
        let text = fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let (final_cm, final_auc) = parse_metrics_row(&text, &record.model, &metrics_path)?;
        let (best_cm, best_auc) = parse_metrics_row(&text, &format!("{}-Best", record.model), &metrics_path)?;
        let roc_path = dir.join("roc.csv");
        let roc = if roc_path.is_file() {
            Some(RocCurve::parse(&fs::read_to_string(&roc_path).map_err(|e| Error::io(&roc_path, e))?)?)
        } else {
            None
        };
        runs.push(CollectedRun {
            dir,
            record,
            history,
            final_cm,
            final_auc,
            best_cm,
            best_auc,
            roc,
        });
    }
    if runs.is_empty() {
        return Err(value_err!("no run directories (with run.toml) under {}", runs_dir.display()));
    }
    runs.sort_by(|a, b| match natural_key(&a.record.model).cmp(&natural_key(&b.record.model)) {
        Ordering::Equal => a.dir.cmp(&b.dir),
        o => o,
    });
    Ok(runs)
}

/// Writes the four tables and the summary into `out`, plus per-model plots
/// under `out/plots/<model>/`.
pub fn report_runs(runs_dir: &Path, out: &Path) -> Result<ReportFiles> {
    let runs = collect_runs(runs_dir)?;
    let mut rows = Vec::with_capacity(2 * runs.len());
    for r in &runs {
        rows.extend(ReportRow::final_and_best(
            &r.record.model,
            &r.record.description,
            &r.record.dropout,
            &r.history,
            r.final_cm,
            r.final_auc,
            r.best_cm,
            r.best_auc,
        ));
    }
    let files = emit_report(&rows, out)?;
    for r in &runs {
        let dir = out.join("plots").join(&r.record.model);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_plots(Some(&r.history), &r.final_cm, r.roc.as_ref(), &dir)?;
    }
    Ok(files)
}
