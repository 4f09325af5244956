use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use scfnet::augment::{augment_window, AugmentConfig};
use scfnet::metrics::{micro_roc_curve, predict_all, report_from_probs, roc_csv};
use scfnet::model::checkpoint::encode_checkpoint;
use scfnet::model::{load_checkpoint, Arch, ModelConfig};
use scfnet::preprocess::{prepare, PreprocessConfig};
use scfnet::synth::{generate, SynthConfig};
use scfnet::train::{patient_kfold, train_model, transfer_from, TrainConfig};
use scfnet::{load_dataset, rng, save_dataset, Dataset, Segment};

#[derive(Parser)]
#[command(name = "scfnet", version, about = "Channel-decoupled EEG classification pipeline")]
struct Cli {
    /// Validate inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Resample, select leads, re-window, filter by votes, oversample.
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resample: Option<f64>,
        #[arg(long)]
        window_seconds: Option<f64>,
        /// Comma-separated lead names, in output order.
        #[arg(long)]
        channels: Option<String>,
        #[arg(long)]
        min_votes: Option<i64>,
        #[arg(long)]
        oversample: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Config file whose `preprocess` section supplies defaults for
        /// the flags above.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Patient-grouped K-fold training from scratch.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        arch: Arch,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Head-only fine-tune on top of a checkpoint's frozen extractor.
    Transfer {
        #[arg(long)]
        extractor: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Pooled one-vs-rest ROC curve as `fpr,tpr` lines.
        #[arg(long)]
        roc_csv: Option<PathBuf>,
    },
    /// Print a checkpoint's tensors, shapes and extractor fingerprint.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Write augmented copies of the first N segments.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preview: usize,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    /// Bad input: exit 1.
    Invalid(String),
    /// The command itself failed: exit 2.
    Runtime(String),
}

type CliResult<T = ()> = Result<T, Failure>;

impl From<scfnet::Error> for Failure {
    fn from(e: scfnet::Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn invalid(msg: impl Display) -> Failure {
    Failure::Invalid(msg.to_string())
}

fn runtime(msg: impl Display) -> Failure {
    Failure::Runtime(msg.to_string())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    augment: Option<AugmentConfig>,
    preprocess: Option<PreprocessConfig>,
}

impl ConfigFile {
    fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    /// The training section with the top-level augment section folded in.
    fn train_config(&self) -> CliResult<TrainConfig> {
        let mut train = self.train.clone().unwrap_or_default();
        if let Some(aug) = &self.augment {
            if self.train.as_ref().is_some_and(|t| t.augment != AugmentConfig::default()) {
                return Err(invalid(
                    "augmentation is configured both in `augment` and in `train.augment`",
                ));
            }
            train.augment = aug.clone();
        }
        Ok(train)
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!("{what} directory {} does not exist", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} file {} does not exist", path.display())))
    }
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    require_dir(path, "dataset")?;
    Ok(load_dataset(path)?)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Model configuration for `dataset`: the config file's model section with
/// the data-dependent fields filled in.
fn model_for(file: &ConfigFile, dataset: &Dataset, arch: Arch) -> ModelConfig {
    ModelConfig {
        arch,
        n_channels: dataset.n_channels(),
        window_samples: dataset.window_samples,
        n_classes: dataset.n_classes(),
        ..file.model.clone().unwrap_or_default()
    }
}

fn cmd_synth(
    dry_run: bool,
    out: &Path,
    overrides: [Option<usize>; 5],
    seed: u64,
) -> CliResult {
    let d = SynthConfig::default();
    let [classes, channels, patients, segments, window] = overrides;
    let n_classes = classes.unwrap_or(d.n_classes);
    let class_freqs_hz = if n_classes == d.n_classes {
        d.class_freqs_hz.clone()
    } else {
        // Evenly spaced below 45 Hz keeps every class under Nyquist at 200 Hz.
        (0..n_classes).map(|k| 2.0 + k as f64 * 43.0 / n_classes as f64).collect()
    };
    let cfg = SynthConfig {
        n_classes,
        n_channels: channels.unwrap_or(d.n_channels),
        n_patients: patients.unwrap_or(d.n_patients),
        segments_per_patient: segments.unwrap_or(d.segments_per_patient),
        window_samples: window.unwrap_or(d.window_samples),
        class_freqs_hz,
        seed,
        ..d
    };
    cfg.validate()?;
    if dry_run {
        println!(
            "would write {} segments of {} channels x {} samples ({} classes) to {}",
            cfg.n_patients * cfg.segments_per_patient,
            cfg.n_channels,
            cfg.window_samples,
            cfg.n_classes,
            out.display()
        );
        return Ok(());
    }
    let ds = generate(&cfg)?;
    save_dataset(&ds, out)?;
    println!("wrote {} segments to {}", ds.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_prepare(
    dry_run: bool,
    input: &Path,
    out: &Path,
    resample: Option<f64>,
    window_seconds: Option<f64>,
    channels: Option<&str>,
    min_votes: Option<i64>,
    oversample: bool,
    seed: Option<u64>,
    config: Option<&Path>,
) -> CliResult {
    let d = match config {
        Some(path) => {
            require_file(path, "config")?;
            ConfigFile::load(path)?.preprocess.unwrap_or_default()
        }
        None => PreprocessConfig::default(),
    };
    let cfg = PreprocessConfig {
        target_rate_hz: resample.unwrap_or(d.target_rate_hz),
        window_seconds: window_seconds.unwrap_or(d.window_seconds),
        channel_selection: channels
            .map(|c| c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or(d.channel_selection),
        min_expert_votes: min_votes.unwrap_or(d.min_expert_votes),
        oversample: oversample || d.oversample,
        seed: seed.unwrap_or(d.seed),
    };
    cfg.validate()?;
    let ds = load_data(input)?;
    let prepared = prepare(&ds, &cfg)?;
    if dry_run {
        println!(
            "would write {} of {} input segments ({} channels x {} samples) to {}",
            prepared.len(),
            ds.len(),
            prepared.n_channels(),
            prepared.window_samples,
            out.display()
        );
        return Ok(());
    }
    save_dataset(&prepared, out)?;
    println!("wrote {} segments to {}", prepared.len(), out.display());
    Ok(())
}

fn print_plan(ds: &Dataset, model: &ModelConfig, train: &TrainConfig, n_params: usize) -> CliResult {
    let folds = patient_kfold(ds, train.k_folds, train.seed)?;
    println!(
        "{} architecture, {} parameters, {} segments, {} folds",
        model.arch, n_params, ds.len(), train.k_folds
    );
    for (i, f) in folds.folds.iter().enumerate() {
        println!("fold {i}: {} patients, {} segments held out", f.patients.len(), f.segments.len());
    }
    Ok(())
}

fn print_summary(record: &scfnet::train::RunRecord, out: &Path) {
    for f in &record.folds {
        println!(
            "fold {}: {} epochs, best epoch {}, validation micro TPR {:.4}",
            f.fold, f.epochs_run, f.best_epoch, f.report.micro_tpr
        );
    }
    println!(
        "total epochs {}, mean micro TPR {:.4}; results in {}",
        record.total_epochs,
        record.mean_micro_tpr,
        out.display()
    );
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    dry_run: bool,
    data: &Path,
    config: &Path,
    arch: Arch,
    out: &Path,
    folds: Option<usize>,
    seed: Option<u64>,
    jobs: usize,
) -> CliResult {
    require_file(config, "config")?;
    let file = ConfigFile::load(config)?;
    let ds = load_data(data)?;
    let model = model_for(&file, &ds, arch);
    let mut train = file.train_config()?;
    train.k_folds = folds.unwrap_or(train.k_folds);
    train.seed = seed.unwrap_or(train.seed);
    train.jobs = jobs;
    train.validate()?;
    model.validate()?;
    if dry_run {
        let n = scfnet::model::init_params::<f32>(&model, 0)?.n_parameters();
        return print_plan(&ds, &model, &train, n);
    }
    let mut run = train_model(&ds, &model, &train)?;
    run.save(out)?;
    print_summary(&run.record, out);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_transfer(
    dry_run: bool,
    extractor: &Path,
    data: &Path,
    config: &Path,
    out: &Path,
    folds: Option<usize>,
    seed: Option<u64>,
    jobs: usize,
) -> CliResult {
    require_file(extractor, "checkpoint")?;
    require_file(config, "config")?;
    let file = ConfigFile::load(config)?;
    let source = load_checkpoint(extractor)?;
    let ds = load_data(data)?;
    let model = ModelConfig {
        n_channels: ds.n_channels(),
        window_samples: ds.window_samples,
        n_classes: ds.n_classes(),
        ..source.config.clone()
    };
    let mut train = file.train_config()?;
    train.k_folds = folds.unwrap_or(train.k_folds);
    train.seed = seed.unwrap_or(train.seed);
    train.jobs = jobs;
    train.validate()?;
    let probe = scfnet::model::checkpoint::transplant_extractor(&source, &model, 0)?;
    if dry_run {
        let trainable: usize = probe.trainable().iter().map(|n| probe.get(n).len()).sum();
        println!("extractor from {} stays frozen; {trainable} trainable parameters", extractor.display());
        return print_plan(&ds, &model, &train, probe.n_parameters());
    }
    let mut run = transfer_from(&source, &ds, &model, &train)?;
    run.save(out)?;
    print_summary(&run.record, out);
    Ok(())
}

fn cmd_eval(dry_run: bool, ckpt: &Path, data: &Path, report: &Path, roc: Option<&Path>) -> CliResult {
    require_file(ckpt, "checkpoint")?;
    let params = load_checkpoint(ckpt)?;
    let ds = load_data(data)?;
    if dry_run {
        println!(
            "would evaluate {} on {} segments and write {}",
            ckpt.display(),
            ds.len(),
            report.display()
        );
        return Ok(());
    }
    let (probs, labels) = predict_all(&params, &ds)?;
    let rep = report_from_probs(&probs, &labels, &ds.class_names)?;
    let json = serde_json::to_string_pretty(&rep).map_err(runtime)?;
    write_file(report, json)?;
    if let Some(path) = roc {
        write_file(path, roc_csv(&micro_roc_curve(&probs, &labels)?))?;
    }
    println!("micro TPR {:.4} on {} segments", rep.micro_tpr, rep.n_samples);
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_inspect(ckpt: &Path) -> CliResult {
    require_file(ckpt, "checkpoint")?;
    let params = load_checkpoint(ckpt)?;
    // Re-encoding is bit-exact, so this digest identifies the file contents.
    let digest = Sha256::digest(encode_checkpoint(&params)?);
    println!("arch: {}", params.config.arch);
    println!("fingerprint: {}", params.config.extractor_fingerprint());
    println!("config: {}", serde_json::to_string(&params.config).map_err(runtime)?);
    println!("parameters: {}", params.n_parameters());
    println!("sha256: {}", hex(&digest));
    for (name, t) in &params.tensors {
        let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let h = Sha256::digest(&bytes);
        println!("{name}\t{:?}\t{}", t.shape, &hex(&h)[..16]);
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_augment(dry_run: bool, data: &Path, out: &Path, preview: usize, config: &Path, seed: u64) -> CliResult {
    require_file(config, "config")?;
    let file = ConfigFile::load(config)?;
    let ds = load_data(data)?;
    let cfg = file
        .augment
        .clone()
        .unwrap_or_default()
        .resolve(ds.n_channels(), ds.window_samples);
    cfg.validate(ds.n_channels(), ds.window_samples)?;
    let n = preview.min(ds.len());
    if dry_run {
        println!("would write {n} augmented segments to {}", out.display());
        return Ok(());
    }
    let mut segments = Vec::with_capacity(n);
    for (i, seg) in ds.segments.iter().take(n).enumerate() {
        let mut r = rng::seeded(rng::derive_idx(seed, "preview", i as u64));
        segments.push(Segment {
            id: format!("{}~aug", seg.id),
            data: augment_window(&seg.data, &cfg, &mut r)?,
            ..seg.clone()
        });
    }
    let preview_ds = Dataset {
        segments,
        ..ds.subset(&[])
    };
    save_dataset(&preview_ds, out)?;
    println!("wrote {n} augmented segments to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let dry = cli.dry_run;
    match cli.command {
        Command::Synth {
            out,
            classes,
            channels,
            patients,
            segments,
            window,
            seed,
        } => cmd_synth(dry, &out, [classes, channels, patients, segments, window], seed),
        Command::Prepare {
            input,
            out,
            resample,
            window_seconds,
            channels,
            min_votes,
            oversample,
            seed,
            config,
        } => cmd_prepare(
            dry,
            &input,
            &out,
            resample,
            window_seconds,
            channels.as_deref(),
            min_votes,
            oversample,
            seed,
            config.as_deref(),
        ),
        Command::Train {
            data,
            config,
            arch,
            out,
            folds,
            seed,
            jobs,
        } => cmd_train(dry, &data, &config, arch, &out, folds, seed, jobs),
        Command::Transfer {
            extractor,
            data,
            config,
            out,
            folds,
            seed,
            jobs,
        } => cmd_transfer(dry, &extractor, &data, &config, &out, folds, seed, jobs),
        Command::Eval {
            ckpt,
            data,
            report,
            roc_csv,
        } => cmd_eval(dry, &ckpt, &data, &report, roc_csv.as_deref()),
        Command::Inspect { ckpt } => cmd_inspect(&ckpt),
        Command::Augment {
            data,
            out,
            preview,
            config,
            seed,
        } => cmd_augment(dry, &data, &out, preview, &config, seed),
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(2)
        }
    }
}
