//! The five-recipe experiment: optional proxy pre-training, target
//! fine-tuning, evaluation, overlays and summary tables.
//!
//! Every seed of a plan gets its own run directory
//! `<out_dir>/<hash>/<model>/{checkpoint.bin, trainlog.json, report.json, overlays/}`
//! where `<hash>` digests the plan contents together with that seed, so
//! the same (plan, seed) pair always lands in the same place.

mod overlay;
mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use self::overlay::{heat_color, overlay_rgb, render_overlay, BOX_COLOR, OVERLAY_ALPHA, OVERLAY_THRESHOLD};
pub use self::report::{collect_reports, summarize, summary_table, SummaryRow};

use crate::{
    datagen::{load_manifest, Augmentation, Dataset, Split, Stage, SynthConfig, ANNOTATED_OBJECTIVE},
    metrics::{auroc, proportional_energy, MethodEnergy, MetricsReport, PropEnergy, Provenance, StageRecord},
    model::{checkpoint, init_model, swap_head, ConvBlock, ModelConfig, ModelState, LAST_CONV},
    saliency::{saliency, CamMethod},
    train::{train, TrainConfig, TrainLog},
    util::{config_hash, create_dir, write_json},
    Error, Result,
};

/// One row of the experiment matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Recipe {
    /// Target only, unbalanced.
    #[serde(rename = "M_U")]
    U,
    /// Target only, balanced.
    #[serde(rename = "M_B")]
    B,
    /// Unbalanced proxy, then unbalanced target.
    #[serde(rename = "M_UU")]
    UU,
    /// Unbalanced proxy, then balanced target.
    #[serde(rename = "M_UB")]
    UB,
    /// Balanced proxy, then balanced target.
    #[serde(rename = "M_BB")]
    BB,
}

impl Recipe {
    pub const ALL: [Recipe; 5] = [Recipe::U, Recipe::B, Recipe::UU, Recipe::UB, Recipe::BB];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::U => "M_U",
            Recipe::B => "M_B",
            Recipe::UU => "M_UU",
            Recipe::UB => "M_UB",
            Recipe::BB => "M_BB",
        }
    }

    /// Balancing of the proxy stage, or `None` for target-only recipes.
    pub fn proxy_balanced(self) -> Option<bool> {
        match self {
            Recipe::U | Recipe::B => None,
            Recipe::UU | Recipe::UB => Some(false),
            Recipe::BB => Some(true),
        }
    }

    pub fn target_balanced(self) -> bool {
        !matches!(self, Recipe::U | Recipe::UU)
    }
}

impl std::fmt::Display for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model recipe `{s}`")))
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// A manifest file or a directory containing `manifest.json`.
    Manifest(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(cfg) => crate::datagen::generate_synthetic(cfg),
            DataSource::Manifest(path) => load_manifest(path),
        }
    }
}

/// Per-stage training settings; the seed and balancing come from the
/// recipe and the plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub augmentation: Augmentation,
}

/// Learning rate of the default plan. Ten times the optimizer default: at
/// 1e-4 the small models on 64x64 inputs stay near the prior for most of
/// the epoch budget.
pub const PLAN_LEARNING_RATE: f64 = 1e-3;

impl StageSettings {
    pub fn defaults(stage: Stage) -> Self {
        let cfg = TrainConfig::new(stage, false, 0);
        StageSettings {
            learning_rate: PLAN_LEARNING_RATE,
            batch_size: cfg.batch_size,
            max_epochs: cfg.max_epochs,
            augmentation: cfg.augmentation,
        }
    }

    pub fn train_config(&self, stage: Stage, balanced: bool, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(stage, balanced, seed);
        cfg.adam.learning_rate = self.learning_rate;
        cfg.batch_size = self.batch_size;
        cfg.max_epochs = self.max_epochs;
        cfg.augmentation = self.augmentation.clone();
        cfg
    }
}

impl Default for StageSettings {
    fn default() -> Self {
        StageSettings::defaults(Stage::Target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// Recipes to run, a subset of [`Recipe::ALL`].
    pub models: Vec<Recipe>,
    pub proxy: DataSource,
    pub target: DataSource,
    pub external: DataSource,
    pub seeds: Vec<u64>,
    /// Convolutional blocks shared by every model; the last is the CAM layer
    /// unless `layer` says otherwise.
    pub blocks: Vec<ConvBlock>,
    pub proxy_training: StageSettings,
    pub target_training: StageSettings,
    pub layer: String,
    /// Number of lowest-scoring test positives rendered as overlays.
    pub overlays: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            models: Recipe::ALL.to_vec(),
            proxy: DataSource::Synthetic(SynthConfig::proxy_default()),
            target: DataSource::Synthetic(SynthConfig::target_default()),
            external: DataSource::Synthetic(SynthConfig::external_default()),
            seeds: vec![0, 1, 2],
            blocks: ModelConfig::desk_default(1).blocks,
            proxy_training: StageSettings::defaults(Stage::Proxy),
            target_training: StageSettings::defaults(Stage::Target),
            layer: LAST_CONV.into(),
            overlays: 5,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("plan selects no models".into()));
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return Err(Error::Config("plan lists a model twice".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("plan needs at least one seed".into()));
        }
        for s in [&self.proxy_training, &self.target_training] {
            s.train_config(Stage::Target, false, 0).validate()?;
        }
        let probe = self.model_config(64, 64, 1);
        probe.validate_structure()?;
        probe.layer_index(&self.layer)?;
        Ok(())
    }

    pub fn model_config(&self, h: usize, w: usize, objectives: usize) -> ModelConfig {
        ModelConfig {
            input: [h, w],
            blocks: self.blocks.clone(),
            objectives,
        }
    }

    /// The single-seed plan with no output location: everything that
    /// determines the run for `seed`.
    pub fn for_seed(&self, seed: u64) -> ExperimentPlan {
        ExperimentPlan {
            seeds: vec![seed],
            out_dir: PathBuf::new(),
            ..self.clone()
        }
    }

    /// Digest of [`ExperimentPlan::for_seed`].
    pub fn run_hash(&self, seed: u64) -> String {
        config_hash(&self.for_seed(seed))
    }

    fn needs_proxy(&self) -> bool {
        self.models.iter().any(|r| r.proxy_balanced().is_some())
    }
}

/// Datasets used by a plan, loaded once and shared by all seeds.
#[derive(Clone, Debug)]
pub struct PlanData {
    pub proxy: Option<Dataset>,
    pub target: Dataset,
    pub external: Dataset,
}

impl PlanData {
    pub fn load(plan: &ExperimentPlan) -> Result<Self> {
        let proxy = if plan.needs_proxy() {
            Some(plan.proxy.load()?)
        } else {
            None
        };
        let data = PlanData {
            proxy,
            target: plan.target.load()?,
            external: plan.external.load()?,
        };
        if let Some(p) = &data.proxy {
            if p.image_size != data.target.image_size {
                return Err(Error::Config(format!(
                    "proxy images are {:?}, target images are {:?}",
                    p.image_size, data.target.image_size
                )));
            }
        }
        if data.external.image_size != data.target.image_size {
            return Err(Error::Config("external and target image sizes differ".into()));
        }
        Ok(data)
    }
}

/// Outcome of one recipe under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: Recipe,
    pub report: Option<MetricsReport>,
    /// Set when a stage failed; the other recipes still ran.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub hash: String,
    pub dir: PathBuf,
    pub models: Vec<ModelOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub runs: Vec<SeedRun>,
    /// Median over seeds per model.
    pub summary: Vec<SummaryRow>,
}

/// Runs every seed of `plan`, writing artifacts under `plan.out_dir`, and
/// saves the median-of-seeds summary next to the run directories.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let data = PlanData::load(plan)?;
    let mut runs = Vec::with_capacity(plan.seeds.len());
    for &seed in &plan.seeds {
        runs.push(run_seed(plan, &data, seed)?);
    }
    let reports: Vec<MetricsReport> = runs
        .iter()
        .flat_map(|r| r.models.iter().filter_map(|m| m.report.clone()))
        .collect();
    let summary = summarize(&reports);
    let tag = config_hash(&plan_without_output(plan));
    write_json(&plan.out_dir.join(format!("summary-{tag}.json")), &summary)?;
    let table = summary_table(&summary);
    let path = plan.out_dir.join(format!("summary-{tag}.txt"));
    std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    Ok(ExperimentOutcome { runs, summary })
}

fn plan_without_output(plan: &ExperimentPlan) -> ExperimentPlan {
    ExperimentPlan {
        out_dir: PathBuf::new(),
        ..plan.clone()
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    seed: u64,
    plan: ExperimentPlan,
    models: Vec<RunStatus<'a>>,
}

#[derive(Serialize)]
struct RunStatus<'a> {
    model: Recipe,
    status: &'static str,
    error: Option<&'a str>,
}

struct Pretrained {
    state: ModelState,
    record: StageRecord,
}

/// Runs all selected recipes of `plan` for one seed. Stage failures are
/// recorded per recipe; only I/O on the run directory itself is fatal.
pub fn run_seed(plan: &ExperimentPlan, data: &PlanData, seed: u64) -> Result<SeedRun> {
    let hash = plan.run_hash(seed);
    let dir = plan.out_dir.join(&hash);
    create_dir(&dir)?;

    // shared proxy checkpoints, one per balancing mode actually needed
    let mut proxies: Vec<(bool, std::result::Result<Pretrained, String>)> = Vec::new();
    for balanced in [false, true] {
        if plan.models.iter().any(|r| r.proxy_balanced() == Some(balanced)) {
            let out = pretrain_stage(plan, data, seed, balanced, &dir).map_err(|e| e.to_string());
            proxies.push((balanced, out));
        }
    }

    let mut models = Vec::with_capacity(plan.models.len());
    for &recipe in &plan.models {
        let proxy = recipe
            .proxy_balanced()
            .map(|b| &proxies.iter().find(|(pb, _)| *pb == b).expect("proxy stage ran").1);
        let outcome = match run_recipe(plan, data, seed, recipe, proxy, &dir.join(recipe.name())) {
            Ok(report) => ModelOutcome {
                model: recipe,
                report: Some(report),
                error: None,
            },
            Err(error) => ModelOutcome {
                model: recipe,
                report: None,
                error: Some(error),
            },
        };
        models.push(outcome);
    }

    let record = RunRecord {
        seed,
        plan: plan.for_seed(seed),
        models: models
            .iter()
            .map(|m| RunStatus {
                model: m.model,
                status: if m.error.is_none() { "ok" } else { "failed" },
                error: m.error.as_deref(),
            })
            .collect(),
    };
    write_json(&dir.join("run.json"), &record)?;
    Ok(SeedRun {
        seed,
        hash,
        dir,
        models,
    })
}

fn stage_record(stage: &str, data: &Dataset, log: &TrainLog) -> StageRecord {
    StageRecord {
        stage: stage.into(),
        dataset: data.provenance.clone(),
        balanced: log.config.balanced,
        seed: log.config.seed,
        config_hash: config_hash(&log.config),
        selected_epoch: log.selected_epoch,
        weights_used: log.weights_used.clone(),
    }
}

fn pretrain_stage(plan: &ExperimentPlan, data: &PlanData, seed: u64, balanced: bool, run_dir: &Path) -> Result<Pretrained> {
    let proxy = data
        .proxy
        .as_ref()
        .ok_or_else(|| Error::Config("plan has no proxy dataset".into()))?;
    let (h, w) = proxy.image_size;
    let model = init_model(&plan.model_config(h, w, proxy.objectives()), seed)?;
    let cfg = plan.proxy_training.train_config(Stage::Proxy, balanced, seed);
    let (state, log) = train(&model, proxy, &cfg)?;
    let dir = run_dir.join(if balanced { "proxy-balanced" } else { "proxy-unbalanced" });
    checkpoint::save_checkpoint(&state, &dir.join("checkpoint.bin"))?;
    write_json(&dir.join("trainlog.json"), &log)?;
    Ok(Pretrained {
        state,
        record: stage_record("proxy", proxy, &log),
    })
}

fn run_recipe(
    plan: &ExperimentPlan,
    data: &PlanData,
    seed: u64,
    recipe: Recipe,
    proxy: Option<&std::result::Result<Pretrained, String>>,
    dir: &Path,
) -> std::result::Result<MetricsReport, String> {
    let target = &data.target;
    let mut stages = Vec::new();
    let start = match proxy {
        Some(Ok(p)) => {
            stages.push(p.record.clone());
            swap_head(&p.state, target.objectives(), seed).map_err(|e| e.to_string())?
        }
        Some(Err(e)) => return Err(format!("proxy pre-training failed: {e}")),
        None => {
            let (h, w) = target.image_size;
            init_model(&plan.model_config(h, w, target.objectives()), seed).map_err(|e| e.to_string())?
        }
    };
    let inner = || -> Result<MetricsReport> {
        let cfg = plan
            .target_training
            .train_config(Stage::Target, recipe.target_balanced(), seed);
        let (state, log) = train(&start, target, &cfg)?;
        checkpoint::save_checkpoint(&state, &dir.join("checkpoint.bin"))?;
        write_json(&dir.join("trainlog.json"), &log)?;
        stages.push(stage_record("target", target, &log));

        let mut report = evaluate_model(recipe.name(), &state, target, &data.external, &plan.layer)?;
        report.provenance.stages = stages;
        write_json(&dir.join("report.json"), &report)?;
        if plan.overlays > 0 {
            write_overlays(&state, target, &report, &plan.layer, plan.overlays, &dir.join("overlays"))?;
        }
        Ok(report)
    };
    inner().map_err(|e| e.to_string())
}

/// Short digest of a model's checkpoint encoding.
pub fn checkpoint_hash(state: &ModelState) -> String {
    hex::encode(&Sha256::digest(checkpoint::encode(state))[..6])
}

/// AUROC of the annotated objective on the target test split and on every
/// external sample, plus proportional energy of all three CAM methods at
/// `layer` over target test positives that carry boxes.
pub fn evaluate_model(
    name: &str,
    state: &ModelState,
    target: &Dataset,
    external: &Dataset,
    layer: &str,
) -> Result<MetricsReport> {
    let objective = ANNOTATED_OBJECTIVE;
    state.config.layer_index(layer)?;
    let score = |s: &crate::datagen::Sample| -> Result<f64> {
        Ok(crate::model::forward(state, &s.image)?[objective])
    };

    let test: Vec<_> = target.split(Split::Test).collect();
    let scores = test.iter().map(|s| score(s)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = test.iter().map(|s| s.labels[objective]).collect();
    let auroc_target = auroc(&scores, &labels)?;

    let scores = external.samples.iter().map(score).collect::<Result<Vec<_>>>()?;
    let labels: Vec<u8> = external.samples.iter().map(|s| s.labels[objective]).collect();
    let auroc_external = auroc(&scores, &labels)?;

    let mut per_method: Vec<Vec<_>> = vec![Vec::new(); CamMethod::ALL.len()];
    for s in test.iter().filter(|s| s.is_positive(objective) && !s.boxes.is_empty()) {
        for (m, &method) in CamMethod::ALL.iter().enumerate() {
            let map = saliency(method, state, &s.image, objective, layer)?.with_id(&s.id);
            per_method[m].push(proportional_energy(&map, &s.boxes)?);
        }
    }
    let mut it = per_method.into_iter().map(MethodEnergy::from_scores);
    let prop_energy = PropEnergy {
        gradcam: it.next().expect("three methods"),
        hirescam: it.next().expect("three methods"),
        scorecam: it.next().expect("three methods"),
    };

    Ok(MetricsReport {
        model: name.into(),
        auroc_target,
        auroc_external,
        prop_energy,
        provenance: Provenance {
            checkpoint_hash: checkpoint_hash(state),
            layer: layer.into(),
            objective,
            target_dataset: target.provenance.clone(),
            external_dataset: external.provenance.clone(),
            stages: Vec::new(),
        },
    })
}

/// Ids of the `k` smallest scores, ties broken by id.
pub fn rank_lowest(scores: &[crate::metrics::EnergyScore], k: usize) -> Vec<String> {
    let mut order: Vec<&crate::metrics::EnergyScore> = scores.iter().collect();
    order.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.id.cmp(&b.id)));
    order.into_iter().take(k).map(|s| s.id.clone()).collect()
}

/// Overlays for the `k` test positives with the lowest HiResCAM energy,
/// one PNG per method: `<id>.<method>.png`.
fn write_overlays(
    state: &ModelState,
    target: &Dataset,
    report: &MetricsReport,
    layer: &str,
    k: usize,
    dir: &Path,
) -> Result<()> {
    let ids = rank_lowest(&report.prop_energy.hirescam.per_sample, k);
    for id in ids {
        let s = target
            .samples
            .iter()
            .find(|s| s.id == id)
            .expect("scored ids come from the dataset");
        for method in CamMethod::ALL {
            let map = saliency(method, state, &s.image, ANNOTATED_OBJECTIVE, layer)?.with_id(&s.id);
            render_overlay(&s.image, &map, &s.boxes, &dir.join(format!("{id}.{method}.png")))?;
        }
    }
    Ok(())
}
