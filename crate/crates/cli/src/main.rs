//! `polypnet`: prepare data, train models, evaluate checkpoints and build
//! report tables from the command line.

use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};

use clap::{Args, Parser, Subcommand};

use polypnet::data::io::{parse_size, prepare_dir, save_image, save_mask};
use polypnet::data::synthetic::{raw_pairs, SyntheticConfig};
use polypnet::experiment::{
    evaluate_weights, load_dataset, report_runs, run_grid, run_model, write_evaluation, ExperimentConfig, Overrides,
};
use polypnet::{Error, Split, WeightContainer};

#[derive(Parser)]
#[command(name = "polypnet", version, about = "Polyp/normal CNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone, Default)]
struct OverrideArgs {
    /// Training seed (overrides `train.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Sample size as HxW (overrides the dataset output size).
    #[arg(long, value_parser = size_arg)]
    input_size: Option<(usize, usize)>,
    /// Mini-batch size (overrides `train.batch_size`).
    #[arg(long)]
    batch_size: Option<usize>,
}

impl OverrideArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            input_size: self.input_size,
            batch_size: self.batch_size,
        }
    }

    fn to_args(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(s) = self.seed {
            out.extend(["--seed".into(), s.to_string()]);
        }
        if let Some((h, w)) = self.input_size {
            out.extend(["--input-size".into(), format!("{h}x{w}")]);
        }
        if let Some(b) = self.batch_size {
            out.extend(["--batch-size".into(), b.to_string()]);
        }
        out
    }
}

fn size_arg(s: &str) -> Result<(usize, usize), String> {
    parse_size(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Cmd {
    /// Crop and split image/mask pairs under DATA_ROOT; writes OUT/manifest.csv.
    Prepare {
        data_root: PathBuf,
        out: PathBuf,
        /// Take crop and split settings from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Split without preserving class proportions.
        #[arg(long)]
        no_stratify: bool,
        /// Crop placement and split seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sample size as HxW after resizing.
        #[arg(long, value_parser = size_arg)]
        input_size: Option<(usize, usize)>,
    },
    /// Train one model of CONFIG; DATASET is a manifest, a data directory or `-` for the config's dataset.
    Train {
        config: PathBuf,
        dataset: String,
        out: PathBuf,
        /// Model to train (required when the config lists several).
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        o: OverrideArgs,
    },
    /// Score WEIGHTS on the test split of DATASET.
    Evaluate {
        weights: PathBuf,
        dataset: String,
        out: PathBuf,
        /// Experiment config (default: experiment.toml next to WEIGHTS).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        o: OverrideArgs,
    },
    /// Train every model of CONFIG into OUT/<model>/ and write OUT/report/.
    Grid {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Number of models trained at once, each in its own process.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[command(flatten)]
        o: OverrideArgs,
    },
    /// Build the four tables, the summary and plots from finished runs.
    Report { runs_dir: PathBuf, out: PathBuf },
    /// Write synthetic image/mask pairs (OUT/images, OUT/masks) for trying the pipeline.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value = "96x96", value_parser = size_arg)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

type CliResult = Result<(), String>;

fn err(e: Error) -> String {
    e.to_string()
}

fn load_config(path: &Path, o: &OverrideArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::load(path).map_err(err)?;
    cfg.apply(&o.overrides());
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn pick_model(cfg: &ExperimentConfig, model: Option<String>) -> Result<String, String> {
    match (model, cfg.models.as_slice()) {
        (Some(m), _) => Ok(m),
        (None, [only]) => Ok(only.name.clone()),
        (None, many) => Err(format!(
            "config lists {} models; choose one with --model ({})",
            many.len(),
            many.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join(", ")
        )),
    }
}

fn prepare(
    data_root: &Path,
    out: &Path,
    config: Option<&Path>,
    no_stratify: bool,
    seed: Option<u64>,
    input_size: Option<(usize, usize)>,
) -> CliResult {
    let mut dataset = match config {
        Some(p) => ExperimentConfig::load(p).map_err(err)?.dataset,
        None => Default::default(),
    };
    if let Some(seed) = seed {
        dataset.seed = seed;
    }
    if let Some(size) = input_size.or(dataset.input_size) {
        dataset.crops.output_size = size;
    }
    let stratified = dataset.stratified && !no_stratify;
    let (data, manifest) =
        prepare_dir(data_root, &dataset.crops, dataset.ratios, dataset.seed, stratified).map_err(err)?;
    std::fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    let path = out.join("manifest.csv");
    manifest.save(&path).map_err(err)?;
    println!(
        "prepared {} samples (train {}, val {}, test {}) -> {}",
        data.len(),
        data.count(Split::Train),
        data.count(Split::Val),
        data.count(Split::Test),
        path.display()
    );
    Ok(())
}

fn train(config: &Path, dataset: &str, out: &Path, model: Option<String>, o: &OverrideArgs) -> CliResult {
    let mut cfg = load_config(config, o)?;
    let name = pick_model(&cfg, model)?;
    cfg.dataset = cfg.dataset.with_location(dataset);
    let data = load_dataset(&cfg.dataset).map_err(err)?;
    let r = run_model(&cfg, &name, &data, out).map_err(err)?;
    let m = r.final_eval.metrics;
    println!(
        "{name}: {} epochs ({}), best epoch {}, test accuracy {:.4} (best checkpoint {:.4}) -> {}",
        r.record.epochs,
        r.record.stop_reason,
        r.record.best_epoch,
        m.accuracy,
        r.best_eval.metrics.accuracy,
        out.display()
    );
    Ok(())
}

/// `M1-4.best.pnw` -> `M1-4-Best`, `M1-4.final.pnw` -> `M1-4`.
fn row_name(weights: &Path) -> String {
    let stem = weights.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    if let Some(base) = stem.strip_suffix(".best") {
        format!("{base}-Best")
    } else {
        stem.strip_suffix(".final").unwrap_or(stem).to_string()
    }
}

fn evaluate(
    weights: &Path,
    dataset: &str,
    out: &Path,
    config: Option<PathBuf>,
    model: Option<String>,
    o: &OverrideArgs,
) -> CliResult {
    let config = config.unwrap_or_else(|| weights.parent().unwrap_or(Path::new(".")).join("experiment.toml"));
    if !config.is_file() {
        return Err(format!(
            "no experiment config at {}; pass --config",
            config.display()
        ));
    }
    let mut cfg = load_config(&config, o)?;
    let name = match model {
        Some(m) => m,
        None => pick_model(&cfg, None).or_else(|e| {
            let base = row_name(weights);
            let base = base.strip_suffix("-Best").unwrap_or(&base).to_string();
            cfg.model(&base).map(|_| base).map_err(|_| e)
        })?,
    };
    let mut spec = cfg.model(&name).map_err(err)?.resolve_spec().map_err(err)?;
    cfg.dataset = cfg.dataset.with_location(dataset);
    let data = load_dataset(&cfg.dataset).map_err(err)?;
    let test = data.subset(Split::Test);
    if let Some(&[c, h, w]) = test.first().map(|s| s.image.shape()) {
        spec.input_shape = [c, h, w];
    }
    let w = WeightContainer::load(weights).map_err(err)?;
    let eval = evaluate_weights(&spec, &w, &test, cfg.train.batch_size).map_err(err)?;
    let row = row_name(weights);
    write_evaluation(&row, &eval, out).map_err(err)?;
    let cm = eval.confusion;
    println!(
        "{row}: tn {} fp {} fn {} tp {}, accuracy {:.4}, auc {} -> {}",
        cm.tn,
        cm.fp,
        cm.fn_,
        cm.tp,
        eval.metrics.accuracy,
        eval.auc().map_or("undefined".to_string(), |a| format!("{a:.4}")),
        out.display()
    );
    Ok(())
}

fn grid(config: &Path, out: &Path, parallel: usize, o: &OverrideArgs) -> CliResult {
    let cfg = load_config(config, o)?;
    if parallel <= 1 {
        let results = run_grid(&cfg, out).map_err(err)?;
        for r in &results {
            println!("{}: test accuracy {:.4}", r.record.model, r.final_eval.metrics.accuracy);
        }
    } else {
        let exe = std::env::current_exe().map_err(|e| format!("cannot locate own executable: {e}"))?;
        let mut pending: Vec<&str> = cfg.models.iter().map(|m| m.name.as_str()).rev().collect();
        let mut running: Vec<(String, Child)> = Vec::new();
        let mut failed = Vec::new();
        while !pending.is_empty() || !running.is_empty() {
            while running.len() < parallel {
                let Some(name) = pending.pop() else { break };
                let child = Command::new(&exe)
                    .arg("train")
                    .arg(config)
                    .arg("-")
                    .arg(out.join(name))
                    .args(["--model", name])
                    .args(o.to_args())
                    .spawn()
                    .map_err(|e| format!("cannot start run for {name}: {e}"))?;
                running.push((name.to_string(), child));
            }
            // wait on the oldest child; the others keep running meanwhile
            let (name, mut child) = running.remove(0);
            let status = child.wait().map_err(|e| format!("waiting for {name}: {e}"))?;
            if !status.success() {
                failed.push(name);
            }
        }
        if !failed.is_empty() {
            return Err(format!("grid runs failed: {}", failed.join(", ")));
        }
        report_runs(out, &out.join("report")).map_err(err)?;
    }
    println!("report -> {}", out.join("report").display());
    Ok(())
}

fn report(runs_dir: &Path, out: &Path) -> CliResult {
    let files = report_runs(runs_dir, out).map_err(err)?;
    println!("tables and summary -> {}", files.summary.parent().unwrap_or(out).display());
    Ok(())
}

fn synth(out: &Path, count: usize, size: (usize, usize), seed: u64) -> CliResult {
    let cfg = SyntheticConfig {
        count,
        size,
        ..SyntheticConfig::default()
    };
    let pairs = raw_pairs(&cfg, seed).map_err(err)?;
    for sub in ["images", "masks"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| format!("cannot create {}: {e}", d.display()))?;
    }
    for p in &pairs {
        save_image(&p.image, &out.join("images").join(format!("{}.png", p.id))).map_err(err)?;
        save_mask(&p.mask, &out.join("masks").join(format!("{}.png", p.id))).map_err(err)?;
    }
    println!("wrote {} image/mask pairs -> {}", pairs.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("polypnet: {} (see --help)", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Cmd::Prepare {
            data_root,
            out,
            config,
            no_stratify,
            seed,
            input_size,
        } => prepare(&data_root, &out, config.as_deref(), no_stratify, seed, input_size),
        Cmd::Train {
            config,
            dataset,
            out,
            model,
            o,
        } => train(&config, &dataset, &out, model, &o),
        Cmd::Evaluate {
            weights,
            dataset,
            out,
            config,
            model,
            o,
        } => evaluate(&weights, &dataset, &out, config, model, &o),
        Cmd::Grid {
            config,
            out,
            parallel,
            o,
        } => grid(&config, &out, parallel, &o),
        Cmd::Report { runs_dir, out } => report(&runs_dir, &out),
        Cmd::Synth {
            out,
            count,
            size,
            seed,
        } => synth(&out, count, size, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            let one_line: Vec<&str> = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("polypnet: {}", one_line.join("; "));
            ExitCode::FAILURE
        }
    }
}
