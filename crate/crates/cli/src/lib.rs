//! Command-line front end: argument parsing and the subcommand drivers.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use foundpad::checkpoint::{Checkpoint, CheckpointHeader};
use foundpad::data::{
    load_manifest_with_root, load_samples, synth_generate, AugmentationConfig, DatasetManifest, Preprocess, ProtocolSpec,
    SynthSpec, DATA_ROOT_ENV,
};
use foundpad::eval::{embed_samples, evaluate};
use foundpad::experiment::{missing_domain, protocol_run, ExperimentConfig};
use foundpad::metrics::{read_scores, report, write_scores, ThresholdPolicy};
use foundpad::model::is_lora_tensor;
use foundpad::train::{fit, initial_model};
use foundpad::zero_shot::{ti_record, ti_score, PromptEmbeddingPair};
use serde::Serialize;

pub use config::{EncoderSpec, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] foundpad::Error),
    #[error("invalid config: {0}")]
    Schema(String),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Schema(_) => "schema",
            CliError::Output(_) => "output",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "foundpad", version, about = "Face presentation-attack detection with adapted ViT encoders")]
pub struct Cli {
    /// Overrides the seed from the config or command defaults.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Decision threshold policy: eer, fixed (0.5) or fixed:<t>.
    #[arg(long, global = true, value_parser = parse_policy)]
    pub policy: Option<ThresholdPolicy>,

    /// Write the command's JSON report here.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Root for relative image paths inside manifests.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    pub data_root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

fn parse_policy(s: &str) -> Result<ThresholdPolicy, String> {
    s.parse().map_err(|e: foundpad::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a detector from a run config.
    Train(ConfigArgs),
    /// Score a manifest with a checkpoint.
    Eval(EvalArgs),
    /// Zero-shot scoring against prompt embeddings.
    Zeroshot(ZeroshotArgs),
    /// Fold adapters into the base projections.
    Merge(MergeArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train and evaluate one cross-domain protocol.
    Protocol(ProtocolArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "from_scores")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_scores")]
    pub manifest: Option<PathBuf>,
    /// Report on an existing JSON-Lines score file instead of running a model.
    #[arg(long, conflicts_with_all = ["checkpoint", "manifest", "config", "scores"])]
    pub from_scores: Option<PathBuf>,
    /// Run config whose augmentation section sets the input and crop sizes.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write per-sample scores as JSON Lines.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub domains: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Protocol name, e.g. "O&C&I→M" or "D1&D2->D3".
    pub name: String,
    #[arg(long)]
    pub config: PathBuf,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Context {
        seed: cli.seed,
        policy: cli.policy,
        out: cli.out,
        data_root: cli.data_root,
    };
    match cli.command {
        Command::Train(a) => cmd_train(&ctx, &a, stdout),
        Command::Eval(a) => cmd_eval(&ctx, &a, stdout),
        Command::Zeroshot(a) => cmd_zeroshot(&ctx, &a, stdout),
        Command::Merge(a) => cmd_merge(&ctx, &a, stdout),
        Command::Synth(a) => cmd_synth(&ctx, &a, stdout),
        Command::Protocol(a) => cmd_protocol(&ctx, &a, stdout),
    }
}

struct Context {
    seed: Option<u64>,
    policy: Option<ThresholdPolicy>,
    out: Option<PathBuf>,
    data_root: Option<PathBuf>,
}

impl Context {
    fn load_config(&self, path: &Path) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(policy) = self.policy {
            cfg.policy = policy;
        }
        Ok(cfg)
    }

    fn manifest(&self, paths: &[PathBuf]) -> Result<DatasetManifest, CliError> {
        if paths.is_empty() {
            return Err(CliError::Schema("no manifests configured".into()));
        }
        let loaded = paths
            .iter()
            .map(|p| load_manifest_with_root(p, self.data_root.as_deref()))
            .collect::<foundpad::Result<Vec<_>>>()?;
        Ok(DatasetManifest::merge(loaded))
    }

    fn emit<T: Serialize>(&self, stdout: &mut dyn Write, summary: &str, value: &T) -> Result<(), CliError> {
        writeln!(stdout, "{summary}")?;
        if let Some(path) = &self.out {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, serde_json::to_string_pretty(value).map_err(foundpad::Error::from)?)?;
        }
        Ok(())
    }
}

fn base_encoder(cfg: &RunConfig) -> Result<Option<foundpad::vit::Encoder<f32>>, CliError> {
    let Some(path) = &cfg.base_checkpoint else {
        return Ok(None);
    };
    let base = Checkpoint::load(path)?;
    Ok(Some(base.model.encoder))
}

fn preprocess_for(config: Option<&Path>, ctx: &Context, encoder: &foundpad::vit::EncoderConfig) -> Result<Preprocess, CliError> {
    let augmentation = match config {
        Some(p) => ctx.load_config(p)?.augmentation,
        None => AugmentationConfig::default(),
    };
    Ok(Preprocess::new(encoder, augmentation))
}

#[derive(Serialize)]
struct TrainSummary {
    mode: String,
    seed: u64,
    samples: usize,
    initial_loss: f64,
    final_loss: Option<f64>,
    best_epoch: usize,
    final_checkpoint: PathBuf,
    best_checkpoint: PathBuf,
    loss_log: PathBuf,
}

fn cmd_train(ctx: &Context, args: &ConfigArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ctx.load_config(&args.config)?;
    let encoder = cfg.encoder.resolve()?;
    let mut manifest = ctx.manifest(&cfg.manifests)?;
    if let Some(name) = &cfg.protocol {
        let spec = ProtocolSpec::parse(name)?;
        if let Some(d) = missing_domain(&spec, &manifest) {
            return Err(foundpad::Error::MissingDomain(d.as_str().to_string()).into());
        }
        manifest = manifest.filter_domains(&spec.train_domains);
    }
    let samples = load_samples(&manifest)?;
    let base = base_encoder(&cfg)?;
    let model = initial_model(&encoder, &cfg.adapter, base.as_ref(), &cfg.train)?;
    let preprocess = Preprocess::new(&encoder, cfg.augmentation.clone());

    fs::create_dir_all(&cfg.output_dir)?;
    let log_path = cfg.output_dir.join("loss.jsonl");
    let mut log = fs::File::create(&log_path)?;
    let mut log_err = None;
    let outcome = fit(model, &samples, &cfg.train, &preprocess, |entry| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }

    let preset = cfg.encoder.preset_name();
    let save = |model: &foundpad::model::PadModel<f32>, epoch: usize, name: &str| -> Result<PathBuf, CliError> {
        let path = cfg.output_dir.join(name);
        let header = CheckpointHeader::new(model, preset.clone(), cfg.train.mode, cfg.train.seed, epoch);
        Checkpoint { header, model: model.clone() }.save(&path)?;
        Ok(path)
    };
    let final_checkpoint = save(&outcome.final_model, cfg.train.epochs, "final.fpad")?;
    let best_checkpoint = save(&outcome.best_model, outcome.best_epoch, "best.fpad")?;
    let summary = TrainSummary {
        mode: cfg.train.mode.as_str().into(),
        seed: cfg.train.seed,
        samples: samples.len(),
        initial_loss: outcome.initial_loss,
        final_loss: outcome.history.last().map(|h| h.mean_loss),
        best_epoch: outcome.best_epoch,
        final_checkpoint,
        best_checkpoint,
        loss_log: log_path,
    };
    let line = format!(
        "trained {} on {} samples: loss {:.4} -> {}",
        summary.mode,
        summary.samples,
        summary.initial_loss,
        summary.final_loss.map_or("n/a".into(), |l| format!("{l:.4}"))
    );
    ctx.emit(stdout, &line, &summary)
}

fn cmd_eval(ctx: &Context, args: &EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let policy = ctx.policy.unwrap_or_default();
    if let Some(path) = &args.from_scores {
        let report = report(&read_scores(path)?, policy)?;
        return ctx.emit(stdout, &report.to_string(), &report);
    }
    let (Some(checkpoint), Some(manifest)) = (&args.checkpoint, &args.manifest) else {
        return Err(CliError::Schema("eval needs --checkpoint and --manifest".into()));
    };
    let checkpoint = Checkpoint::load(checkpoint)?;
    let manifest = ctx.manifest(std::slice::from_ref(manifest))?;
    let preprocess = preprocess_for(args.config.as_deref(), ctx, &checkpoint.header.encoder)?;
    let samples = load_samples(&manifest)?;
    let (report, scores) = evaluate(&checkpoint.model, &samples, &preprocess, policy)?;
    if let Some(path) = &args.scores {
        write_scores(&scores, path)?;
    }
    ctx.emit(stdout, &report.to_string(), &report)
}

fn cmd_zeroshot(ctx: &Context, args: &ZeroshotArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let prompts = PromptEmbeddingPair::load(&args.prompts)?;
    let manifest = ctx.manifest(std::slice::from_ref(&args.manifest))?;
    let preprocess = preprocess_for(args.config.as_deref(), ctx, &checkpoint.header.encoder)?;
    let samples = load_samples(&manifest)?;
    let encoder = checkpoint.model.encoder.merged()?;
    let features = embed_samples(&encoder, &samples, &preprocess)?;
    let records = samples
        .iter()
        .zip(&features)
        .map(|(s, f)| {
            let emb = prompts.embed(f.mapv(f64::from).view())?;
            Ok(ti_record(ti_score(emb.view(), &prompts)?, s.label, s.domain.clone()))
        })
        .collect::<foundpad::Result<Vec<_>>>()?;
    let report = report(&records, ctx.policy.unwrap_or_default())?;
    ctx.emit(stdout, &report.to_string(), &report)
}

#[derive(Serialize)]
struct MergeSummary {
    input: PathBuf,
    output: PathBuf,
    tensors: usize,
}

fn cmd_merge(ctx: &Context, args: &MergeArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let merged = checkpoint.merged()?;
    let archive = merged.to_archive()?;
    debug_assert!(archive.names().all(|n| !is_lora_tensor(n)));
    archive.write(&args.output)?;
    let summary = MergeSummary {
        input: args.checkpoint.clone(),
        output: args.output.clone(),
        tensors: archive.tensors.len(),
    };
    let line = format!("merged {} -> {} ({} tensors)", args.checkpoint.display(), args.output.display(), summary.tensors);
    ctx.emit(stdout, &line, &summary)
}

#[derive(Serialize)]
struct SynthSummary {
    spec: SynthSpec,
    manifest: PathBuf,
    images: usize,
    domains: std::collections::BTreeMap<foundpad::data::Domain, foundpad::data::DomainSummary>,
}

fn cmd_synth(ctx: &Context, args: &SynthArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = SynthSpec {
        domains: args.domains,
        per_class: args.per_class,
        seed: ctx.seed.unwrap_or(0),
    };
    let out = synth_generate(&spec, &args.out_dir)?;
    let summary = SynthSummary {
        spec,
        manifest: args.out_dir.join("manifest.jsonl"),
        images: out.manifest.len(),
        domains: out.summary,
    };
    let line = format!("wrote {} images to {}", summary.images, args.out_dir.display());
    ctx.emit(stdout, &line, &summary)
}

fn cmd_protocol(ctx: &Context, args: &ProtocolArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ctx.load_config(&args.config)?;
    let spec = ProtocolSpec::parse(&args.name)?;
    let manifest = ctx.manifest(&cfg.manifests)?;
    if let Some(d) = missing_domain(&spec, &manifest) {
        return Err(foundpad::Error::MissingDomain(d.as_str().to_string()).into());
    }
    let base = base_encoder(&cfg)?;
    let experiment = ExperimentConfig {
        encoder: cfg.encoder.resolve()?,
        adapter: cfg.adapter.clone(),
        train: cfg.train.clone(),
        augmentation: cfg.augmentation.clone(),
        policy: cfg.policy,
    };
    let (report, _) = protocol_run(&spec, &manifest, &experiment, base.as_ref(), |_| {})?;
    let line = format!("{} [{}] {}", report.protocol, report.mode, report.row());
    ctx.emit(stdout, &line, &report)
}
