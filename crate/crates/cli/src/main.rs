//! Command-line front end: dataset generation, training stages, evaluation,
//! saliency dumps and the full experiment.
//!
//! Every subcommand accepts `--config <file>`, a JSON object whose keys are
//! the long flag names with dashes replaced by underscores. Flags given on
//! the command line take precedence over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use camalign::{
    datagen::{generate_to_dir, load_manifest, Dataset, Split, Stage, SynthConfig, ANNOTATED_OBJECTIVE},
    harness::{self, ExperimentPlan, Recipe, StageSettings},
    model::{init_model, load_checkpoint, save_checkpoint, swap_head, ConvBlock, ModelConfig, LAST_CONV},
    saliency::{saliency, CamMethod},
    train::train,
};

#[derive(Parser)]
#[command(name = "camalign", version, about = "Class-balanced training and saliency alignment scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write its manifest and images.
    Datagen(DatagenArgs),
    /// Train a multi-objective model from scratch on a proxy dataset.
    Pretrain(TrainArgs),
    /// Train on a target dataset, optionally starting from a checkpoint.
    Finetune(TrainArgs),
    /// Score a checkpoint: AUROC and proportional energy.
    Evaluate(EvaluateArgs),
    /// Dump saliency maps for every sample of a split.
    Saliency(SaliencyArgs),
    /// Run the five-model experiment described by a plan file.
    Experiment(ExperimentArgs),
    /// Print the summary table of one or more run directories.
    Report(ReportArgs),
}

/// Reads the `--config` file if one was given.
fn file_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.with_context(|| format!("missing --{flag} (or `{}` in the config file)", flag.replace('-', "_")))
}

/// `--balanced` / `--unbalanced`; `balanced: bool` in config files.
#[derive(Args, Clone, Copy, Default)]
struct BalanceFlag {
    /// Weight the loss per objective by the inverse class ratio.
    #[arg(long, conflicts_with = "unbalanced")]
    balanced: bool,
    /// Unit loss weights.
    #[arg(long)]
    unbalanced: bool,
}

impl BalanceFlag {
    fn resolve(self, file: Option<bool>) -> Result<bool> {
        match (self.balanced, self.unbalanced) {
            (true, _) => Ok(true),
            (_, true) => Ok(false),
            _ => required(file, "balanced"),
        }
    }
}

#[derive(Args)]
struct DatagenArgs {
    /// Generator config; may also carry `out`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a built-in config instead: proxy, target or external.
    #[arg(long)]
    preset: Option<String>,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct DatagenFile {
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(flatten)]
    synth: SynthConfig,
}

fn preset(name: &str) -> Result<SynthConfig> {
    Ok(match name {
        "proxy" => SynthConfig::proxy_default(),
        "target" => SynthConfig::target_default(),
        "external" => SynthConfig::external_default(),
        other => bail!("unknown preset `{other}`; expected proxy, target or external"),
    })
}

fn datagen(args: DatagenArgs) -> Result<()> {
    let (mut synth, file_out) = match (&args.config, &args.preset) {
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (Some(p), None) => {
            let f: DatagenFile = serde_json::from_str(&std::fs::read_to_string(p)?)
                .with_context(|| format!("parsing {}", p.display()))?;
            (f.synth, f.out)
        }
        (None, Some(name)) => (preset(name)?, None),
        (None, None) => bail!("give --config <file> or --preset <name>"),
    };
    if let Some(seed) = args.seed {
        synth.seed = seed;
    }
    let out = required(args.out.or(file_out), "out")?;
    let ds = generate_to_dir(&synth, &out)?;
    println!(
        "wrote {} samples ({} objectives) to {}",
        ds.samples.len(),
        ds.objectives(),
        out.display()
    );
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest (file or directory).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to start from, or `none` (finetune only).
    #[arg(long)]
    from: Option<String>,
    #[command(flatten)]
    balance: BalanceFlag,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoint.bin and trainlog.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    data: Option<PathBuf>,
    from: Option<String>,
    balanced: Option<bool>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    /// Architecture for models trained from scratch.
    blocks: Option<Vec<ConvBlock>>,
}

fn run_training(args: TrainArgs, stage: Stage) -> Result<()> {
    let file: TrainFile = file_config(args.config.as_deref())?;
    let data_path = required(args.data.or(file.data), "data")?;
    let balanced = args.balance.resolve(file.balanced)?;
    let seed = required(args.seed.or(file.seed), "seed")?;
    let out = required(args.out.or(file.out), "out")?;
    let data = load_manifest(&data_path)?;

    let from = args.from.or(file.from);
    let start = match (stage, from.as_deref()) {
        (Stage::Proxy, Some(_)) => bail!("pretrain always starts from scratch; drop --from"),
        (Stage::Target, None) => bail!("finetune needs --from <checkpoint|none>"),
        (_, Some(path)) if path != "none" => {
            let base = load_checkpoint(Path::new(path))?;
            swap_head(&base, data.objectives(), seed)?
        }
        _ => {
            let (h, w) = data.image_size;
            let mut cfg = ModelConfig::desk_default(data.objectives());
            cfg.input = [h, w];
            if let Some(blocks) = file.blocks {
                cfg.blocks = blocks;
            }
            init_model(&cfg, seed)?
        }
    };

    let settings = StageSettings::defaults(stage);
    let mut cfg = settings.train_config(stage, balanced, seed);
    if let Some(v) = args.epochs.or(file.epochs) {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.batch_size.or(file.batch_size) {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate.or(file.learning_rate) {
        cfg.adam.learning_rate = v;
    }
    let (state, log) = train(&start, &data, &cfg)?;
    std::fs::create_dir_all(&out)?;
    save_checkpoint(&state, &out.join("checkpoint.bin"))?;
    let mut text = serde_json::to_string_pretty(&log)?;
    text.push('\n');
    std::fs::write(out.join("trainlog.json"), text)?;
    match log.selected_epoch {
        Some(e) => println!(
            "selected epoch {} of {} (val loss {:.5}); wrote {}",
            e + 1,
            log.epochs.len(),
            log.epochs[e].val_loss,
            out.display()
        ),
        None => println!("no epochs run; wrote initial model to {}", out.display()),
    }
    Ok(())
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Target manifest; the test split is scored.
    #[arg(long)]
    target: Option<PathBuf>,
    /// External manifest; every sample is scored.
    #[arg(long)]
    external: Option<PathBuf>,
    /// Report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CAM layer.
    #[arg(long)]
    layer: Option<String>,
    /// Model name recorded in the report.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EvaluateFile {
    model: Option<PathBuf>,
    target: Option<PathBuf>,
    external: Option<PathBuf>,
    out: Option<PathBuf>,
    layer: Option<String>,
    name: Option<String>,
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let file: EvaluateFile = file_config(args.config.as_deref())?;
    let model_path = required(args.model.or(file.model), "model")?;
    let state = load_checkpoint(&model_path)?;
    let target = load_manifest(&required(args.target.or(file.target), "target")?)?;
    let external = load_manifest(&required(args.external.or(file.external), "external")?)?;
    let out = required(args.out.or(file.out), "out")?;
    let layer = args.layer.or(file.layer).unwrap_or_else(|| LAST_CONV.into());
    let name = args.name.or(file.name).unwrap_or_else(|| {
        model_path
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| "model".into(), |n| n.to_string_lossy().into_owned())
    });
    let report = harness::evaluate_model(&name, &state, &target, &external, &layer)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(&out, text)?;
    print!("{}", harness::summary_table(&harness::summarize(&[report])));
    Ok(())
}

#[derive(Args)]
struct SaliencyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// gradcam, hirescam or scorecam.
    #[arg(long)]
    method: Option<CamMethod>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    layer: Option<String>,
    #[arg(long)]
    objective: Option<usize>,
    /// train, validation or test.
    #[arg(long)]
    split: Option<String>,
    /// Also render an overlay PNG per sample.
    #[arg(long)]
    overlay: bool,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SaliencyFile {
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    method: Option<CamMethod>,
    out: Option<PathBuf>,
    layer: Option<String>,
    objective: Option<usize>,
    split: Option<String>,
    overlay: Option<bool>,
}

fn parse_split(s: &str) -> Result<Split> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).with_context(|| format!("unknown split `{s}`"))
}

fn dump_saliency(args: SaliencyArgs) -> Result<()> {
    let file: SaliencyFile = file_config(args.config.as_deref())?;
    let state = load_checkpoint(&required(args.model.or(file.model), "model")?)?;
    let data: Dataset = load_manifest(&required(args.data.or(file.data), "data")?)?;
    let method = required(args.method.or(file.method), "method")?;
    let out = required(args.out.or(file.out), "out")?;
    let layer = args.layer.or(file.layer).unwrap_or_else(|| LAST_CONV.into());
    let objective = args.objective.or(file.objective).unwrap_or(ANNOTATED_OBJECTIVE);
    let split = parse_split(&args.split.or(file.split).unwrap_or_else(|| "test".into()))?;
    let overlay = args.overlay || file.overlay.unwrap_or(false);
    let mut n = 0;
    for s in data.split(split) {
        let map = saliency(method, &state, &s.image, objective, &layer)?.with_id(&s.id);
        map.write_dump(&out)?;
        if overlay {
            harness::render_overlay(&s.image, &map, &s.boxes, &out.join(format!("{}.{method}.png", s.id)))?;
        }
        n += 1;
    }
    println!("wrote {n} {method} maps to {}", out.display());
    Ok(())
}

#[derive(Args)]
struct ExperimentArgs {
    /// Plan file; omitted keys take their defaults.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated subset of M_U, M_B, M_UU, M_UB, M_BB.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut plan: ExperimentPlan = file_config(args.plan.as_deref())?;
    if let Some(seeds) = args.seeds {
        plan.seeds = seeds;
    }
    if let Some(models) = args.models {
        plan.models = models
            .iter()
            .map(|m| m.parse::<Recipe>())
            .collect::<camalign::Result<_>>()?;
    }
    if let Some(out) = args.out {
        plan.out_dir = out;
    }
    let outcome = harness::run_experiment(&plan)?;
    for run in &outcome.runs {
        println!("seed {} -> {}", run.seed, run.dir.display());
        for m in &run.models {
            if let Some(e) = &m.error {
                println!("  {} failed: {e}", m.model);
            }
        }
    }
    print!("{}", harness::summary_table(&outcome.summary));
    Ok(())
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory, or a directory of run directories.
    #[arg(long)]
    run: PathBuf,
}

fn report(args: ReportArgs) -> Result<()> {
    let reports = harness::collect_reports(&args.run)?;
    if reports.is_empty() {
        bail!("no report.json found under {}", args.run.display());
    }
    print!("{}", harness::summary_table(&harness::summarize(&reports)));
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Datagen(a) => datagen(a),
        Command::Pretrain(a) => run_training(a, Stage::Proxy),
        Command::Finetune(a) => run_training(a, Stage::Target),
        Command::Evaluate(a) => evaluate(a),
        Command::Saliency(a) => dump_saliency(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report(a),
    }
}
