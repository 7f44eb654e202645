//! `dawn`: dataset generation, training, evaluation and ablation sweeps.

mod manifest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use dawn_core::eval::{self, EvalOptions, MetricsReport};
use dawn_core::model::checkpoint::Checkpoint;
use dawn_core::model::{Ablation, ModelConfig};
use dawn_core::sim::{generate_dataset, DatasetBundle, ScenarioConfig, Split, SplitCounts};
use dawn_core::training::{self, Threshold, TrainConfig, TrainReport};
use dawn_core::{Checkpoint64, Model64, WaveletBank64};

use manifest::{sha256_file, unix_now, RunManifest, MANIFEST_FILE};

const CHECKPOINT_FILE: &str = "checkpoint.dawm";
const THRESHOLD_FILE: &str = "threshold.json";
const RUN_FILE: &str = "run.json";

#[derive(Parser)]
#[command(name = "dawn", version, about = "Satellite interference detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled dataset file and its JSON sidecar.
    GenData(GenDataArgs),
    /// Train one model variant and calibrate its detection threshold.
    Train(TrainArgs),
    /// Score the test split with a trained checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate all four ablation variants.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Preset {
    Desk,
    Large,
}

impl Preset {
    fn counts(self) -> SplitCounts {
        match self {
            Preset::Desk => SplitCounts::DESK,
            Preset::Large => SplitCounts::LARGE,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct GenDataArgs {
    /// Dataset file to write; the sidecar gets `.json` appended.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// TOML file with optional [scenario] and [counts] tables.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: dawn_core::Error| e.to_string())
}

/// Training flags shared by `train` and `ablate`.
#[derive(Args, Debug, Serialize)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Comma-separated wavelet scales, e.g. 4,8,16.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train the wavelet taps jointly with the network.
    #[arg(long)]
    learnable_bank: Option<bool>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint, threshold and run metadata.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    #[command(flatten)]
    flags: TrainFlags,
    /// TOML file with an optional [train] table.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvalFlags {
    /// Batch size used for the latency measurement.
    #[arg(long)]
    timing_batch: Option<usize>,
    #[arg(long)]
    timing_repeats: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Checkpoint file, or a training output directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: EvalFlags,
    /// TOML file with an optional [eval] table.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    eval: EvalFlags,
    /// TOML file with optional [train] and [eval] tables.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Invalid invocation detected by the CLI itself.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsFile {
    train: Option<usize>,
    val: Option<usize>,
    test_per_class: Option<usize>,
    preset: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    timing_batch: Option<usize>,
    timing_repeats: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<ScenarioConfig>,
    counts: Option<CountsFile>,
    train: Option<TrainConfig>,
    eval: Option<EvalFile>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn config_paths(config: Option<&Path>) -> Vec<String> {
    config.map(|p| vec![p.display().to_string()]).unwrap_or_default()
}

fn resolve_counts(args: &GenDataArgs, file: &FileConfig) -> Result<SplitCounts> {
    let file_counts = file.counts.as_ref();
    let file_preset = match file_counts.and_then(|c| c.preset.as_deref()) {
        None => None,
        Some(s) => Some(Preset::from_str(s, true).map_err(|_| usage(format!("unknown preset {s:?}")))?),
    };
    let base = args.preset.or(file_preset).unwrap_or(Preset::Desk).counts();
    let pick = |flag: Option<usize>, file: Option<usize>, default: usize| flag.or(file).unwrap_or(default);
    Ok(SplitCounts {
        train: pick(args.train, file_counts.and_then(|c| c.train), base.train),
        val: pick(args.val, file_counts.and_then(|c| c.val), base.val),
        test_per_class: pick(
            args.test_per_class,
            file_counts.and_then(|c| c.test_per_class),
            base.test_per_class,
        ),
    })
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let started = unix_now();
    let file = load_config(args.config.as_deref())?;
    let mut scenario = file.scenario.clone().unwrap_or_default();
    if let Some(seed) = args.seed {
        scenario.rng_seed = seed;
    }
    let counts = resolve_counts(&args, &file)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let t0 = Instant::now();
    let bundle = generate_dataset(&scenario, counts)?;
    bundle.write(&args.out)?;
    let sidecar = DatasetBundle::sidecar_path(&args.out);
    eprintln!(
        "wrote {} ({} train, {} val, {} test) in {:.1}s",
        args.out.display(),
        bundle.train.len(),
        bundle.validation.len(),
        bundle.test.len(),
        t0.elapsed().as_secs_f64()
    );

    let mut m = RunManifest::new("gen-data", started);
    m.config_paths = config_paths(args.config.as_deref());
    m.seeds = json!({ "rng_seed": scenario.rng_seed });
    m.config = json!({ "scenario": scenario, "counts": counts, "flags": args });
    m.write(&manifest_path_for(&args.out), &[], &[args.out.clone(), sidecar])
}

/// `<dataset>.manifest.json`, so several datasets can share a directory.
fn manifest_path_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn resolve_train(flags: &TrainFlags, ablation: Option<Ablation>, file: &FileConfig) -> TrainConfig {
    let mut cfg = file.train.clone().unwrap_or_default();
    macro_rules! set {
        ($flag:expr, $field:ident) => {
            if let Some(v) = $flag.clone() {
                cfg.$field = v;
            }
        };
    }
    set!(flags.epochs, epochs);
    set!(flags.batch, batch_size);
    set!(flags.lr, learning_rate);
    set!(flags.lambda1, lambda1);
    set!(flags.lambda2, lambda2);
    set!(flags.scales, wavelet_scales);
    set!(flags.seed, seed);
    set!(flags.learnable_bank, learnable_bank);
    set!(ablation, ablation);
    cfg
}

fn resolve_eval(flags: &EvalFlags, file: &FileConfig) -> EvalOptions {
    let d = EvalOptions::default();
    let f = file.eval.as_ref();
    EvalOptions {
        timing_batch: flags.timing_batch.or(f.and_then(|e| e.timing_batch)).unwrap_or(d.timing_batch),
        timing_repeats: flags
            .timing_repeats
            .or(f.and_then(|e| e.timing_repeats))
            .unwrap_or(d.timing_repeats),
        ..d
    }
}

fn model_config_for(bundle: &DatasetBundle, ablation: Ablation) -> Result<ModelConfig> {
    if bundle.sample_count != bundle.fft_bins {
        return Err(dawn_core::Error::Config(format!(
            "model needs equal time and frequency lengths, dataset has {} and {}",
            bundle.sample_count, bundle.fft_bins
        ))
        .into());
    }
    let cfg = ModelConfig {
        input_len: bundle.sample_count,
        ..ModelConfig::default()
    }
    .with_ablation(ablation);
    cfg.validate()?;
    Ok(cfg)
}

struct Trained {
    checkpoint: Checkpoint64,
    report: TrainReport,
    calibrate_s: f64,
}

fn train_variant(bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let model_cfg = model_config_for(bundle, cfg.ablation)?;
    let mut model = Model64::new(model_cfg, cfg.seed)?;
    let mut bank = WaveletBank64::new(&cfg.wavelet_scales, cfg.learnable_bank)?;
    let train_in = bundle.inputs::<f64>(Split::Train)?;
    let epochs = cfg.epochs;
    let report = training::train_with_progress(&train_in, &mut model, &mut bank, cfg, |e, loss| {
        eprintln!("[{}] epoch {:>3}/{epochs}  loss {loss:.6}", cfg.ablation, e + 1);
    })?;
    let t0 = Instant::now();
    let val_in = bundle.inputs::<f64>(Split::Validation)?;
    let threshold = training::calibrate_threshold(&model, &bank, &val_in, cfg.lambda1, cfg.lambda2)?;
    Ok(Trained {
        checkpoint: Checkpoint {
            model,
            bank,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            threshold: Some(threshold),
        },
        report,
        calibrate_s: t0.elapsed().as_secs_f64(),
    })
}

/// Writes checkpoint, threshold and run metadata into `dir`; returns the
/// written paths.
fn write_trained(
    dir: &Path,
    trained: &Trained,
    cfg: &TrainConfig,
    data: &Path,
    flags: serde_json::Value,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let ck = dir.join(CHECKPOINT_FILE);
    trained.checkpoint.save(&ck)?;
    let threshold = trained.checkpoint.threshold.expect("calibrated");
    let th = dir.join(THRESHOLD_FILE);
    write_json(&th, &threshold)?;
    let run = dir.join(RUN_FILE);
    write_json(
        &run,
        &json!({
            "flags": flags,
            "train_config": cfg,
            "effective_lambda2": cfg.effective_lambda2(),
            "model_config": trained.checkpoint.model.config(),
            "seed": cfg.seed,
            "dataset": { "path": data.display().to_string(), "sha256": sha256_file(data)? },
            "loss_history": trained.report.loss_history,
            "steps": trained.report.steps,
            "threshold": threshold,
            "timings_s": { "train": trained.report.wall_time_s, "calibrate": trained.calibrate_s },
        }),
    )?;
    Ok(vec![ck, th, run])
}

fn load_dataset(path: &Path) -> Result<DatasetBundle> {
    require_file(path, "dataset")?;
    DatasetBundle::read(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let started = unix_now();
    let file = load_config(args.config.as_deref())?;
    let cfg = resolve_train(&args.flags, args.ablation, &file);
    cfg.validate()?;
    let bundle = load_dataset(&args.data)?;
    let trained = train_variant(&bundle, &cfg)?;
    let flags = serde_json::to_value(&args)?;
    let outputs = write_trained(&args.out, &trained, &cfg, &args.data, flags)?;
    let t = trained.checkpoint.threshold.expect("calibrated");
    eprintln!(
        "threshold {:.6} (mu {:.6}, sigma {:.6}); wrote {}",
        t.value,
        t.mu,
        t.sigma,
        args.out.display()
    );
    let mut m = RunManifest::new("train", started);
    m.config_paths = config_paths(args.config.as_deref());
    m.seeds = json!({ "train_seed": cfg.seed });
    m.config = json!({ "train": cfg, "flags": args });
    m.write(&args.out.join(MANIFEST_FILE), &[args.data.clone()], &outputs)
}

fn checkpoint_path(model: &Path) -> PathBuf {
    if model.is_dir() {
        model.join(CHECKPOINT_FILE)
    } else {
        model.to_path_buf()
    }
}

fn evaluate_checkpoint(ck: &Checkpoint64, bundle: &DatasetBundle, opts: EvalOptions) -> Result<MetricsReport> {
    let cfg = ck.model.config();
    if cfg.input_len != bundle.sample_count || cfg.input_len != bundle.fft_bins {
        return Err(dawn_core::Error::Config(format!(
            "checkpoint expects inputs of length {}, dataset has {} time samples and {} bins",
            cfg.input_len, bundle.sample_count, bundle.fft_bins
        ))
        .into());
    }
    let threshold: Threshold = ck
        .threshold
        .ok_or_else(|| dawn_core::Error::Config("checkpoint has no calibrated threshold".into()))?;
    let opts = EvalOptions {
        lambda1: ck.lambda1,
        lambda2: ck.lambda2,
        ..opts
    };
    let test = bundle.inputs::<f64>(Split::Test)?;
    Ok(eval::evaluate(&ck.model, &ck.bank, &threshold, &test, &opts)?)
}

fn report_paths(dir: &Path) -> Vec<PathBuf> {
    [eval::REPORT_FILE, eval::ROC_FILE, eval::CONFUSION_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let started = unix_now();
    let file = load_config(args.config.as_deref())?;
    let opts = resolve_eval(&args.flags, &file);
    let ck_path = checkpoint_path(&args.model);
    require_file(&ck_path, "checkpoint")?;
    let ck = Checkpoint64::load(&ck_path).with_context(|| format!("loading checkpoint {}", ck_path.display()))?;
    let bundle = load_dataset(&args.data)?;
    let report = evaluate_checkpoint(&ck, &bundle, opts)?;
    report.write_files(&args.out_dir)?;
    println!("{}", MetricsReport::summary_header());
    println!("{}", report.summary_row());

    let mut m = RunManifest::new("eval", started);
    m.config_paths = config_paths(args.config.as_deref());
    m.config = json!({
        "timing_batch": opts.timing_batch,
        "timing_repeats": opts.timing_repeats,
        "flags": args,
    });
    m.write(
        &args.out_dir.join(MANIFEST_FILE),
        &[ck_path, args.data.clone()],
        &report_paths(&args.out_dir),
    )
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    label: String,
    accuracy: f64,
    f1: f64,
    auc: f64,
    time_s: f64,
    checkpoint: String,
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let started = unix_now();
    let file = load_config(args.config.as_deref())?;
    let opts = resolve_eval(&args.eval, &file);
    let bundle = load_dataset(&args.data)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let flags = serde_json::to_value(&args)?;

    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    let mut seed = None;
    for ablation in Ablation::ALL {
        let cfg = resolve_train(&args.train, Some(ablation), &file);
        seed = Some(cfg.seed);
        let dir = args.out_dir.join(ablation.cli_name());
        let trained = train_variant(&bundle, &cfg)?;
        outputs.extend(write_trained(&dir, &trained, &cfg, &args.data, flags.clone())?);
        let report = evaluate_checkpoint(&trained.checkpoint, &bundle, opts)?;
        report.write_files(&dir)?;
        outputs.extend(report_paths(&dir));
        rows.push(AblationRow {
            variant: ablation.cli_name().into(),
            label: ablation.label().into(),
            accuracy: report.accuracy,
            f1: report.f1,
            auc: report.auc,
            time_s: report.median_batch_time_s,
            checkpoint: dir.join(CHECKPOINT_FILE).display().to_string(),
        });
    }

    let table = args.out_dir.join("ablation.csv");
    let mut csv = String::from("variant,label,accuracy,f1,auc,time_s\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant, r.label, r.accuracy, r.f1, r.auc, r.time_s
        ));
    }
    fs::write(&table, csv).with_context(|| format!("writing {}", table.display()))?;
    let table_json = args.out_dir.join("ablation.json");
    write_json(&table_json, &rows)?;
    outputs.push(table);
    outputs.push(table_json);

    println!("{:<24} {:>8} {:>8} {:>8} {:>10}", "variant", "accuracy", "f1", "auc", "time_s");
    for r in &rows {
        println!(
            "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>10.4}",
            r.label, r.accuracy, r.f1, r.auc, r.time_s
        );
    }

    let mut m = RunManifest::new("ablate", started);
    m.config_paths = config_paths(args.config.as_deref());
    m.seeds = json!({ "train_seed": seed });
    m.config = json!({
        "train": resolve_train(&args.train, None, &file),
        "timing_batch": opts.timing_batch,
        "timing_repeats": opts.timing_repeats,
        "flags": args,
    });
    m.write(&args.out_dir.join(MANIFEST_FILE), &[args.data.clone()], &outputs)
}

/// 2 for invalid input, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dawn_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
        if cause.is::<UsageError>() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
