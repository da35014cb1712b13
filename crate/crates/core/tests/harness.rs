//! End-to-end plumbing of the experiment harness on a miniature plan.

mod common;

use std::path::Path;

use camalign::{
    datagen::{LesionKind, LesionSpec, ObjectiveSpec, SplitSizes, SynthConfig},
    harness::{collect_reports, run_experiment, summarize, DataSource, ExperimentPlan, Recipe, StageSettings},
    model::ConvBlock,
};

fn shrink(mut cfg: SynthConfig, train: usize, validation: usize, test: usize) -> SynthConfig {
    cfg.image_size = [32, 32];
    cfg.splits = SplitSizes { train, validation, test };
    cfg
}

fn blob(name: &str, rate: f64) -> ObjectiveSpec {
    ObjectiveSpec {
        name: name.into(),
        positive_rate: rate,
        lesion: LesionSpec {
            kind: LesionKind::Blob,
            count: [1, 1],
            sigma: [1.2, 2.0],
            amplitude: [0.2, 0.3],
        },
    }
}

fn tiny_plan(out: &Path) -> ExperimentPlan {
    let mut proxy = shrink(SynthConfig::proxy_default(), 24, 8, 4);
    proxy.objectives = vec![blob("a", 0.25), blob("b", 0.5)];
    let mut target = shrink(SynthConfig::target_default(), 24, 8, 12);
    target.objectives = vec![blob("active", 0.3)];
    let mut external = shrink(SynthConfig::external_default(), 0, 0, 10);
    external.objectives = vec![blob("active", 0.5)];
    let settings = StageSettings {
        learning_rate: 1e-3,
        batch_size: 8,
        max_epochs: 2,
        ..StageSettings::default()
    };
    ExperimentPlan {
        proxy: DataSource::Synthetic(proxy),
        target: DataSource::Synthetic(target),
        external: DataSource::Synthetic(external),
        seeds: vec![3],
        blocks: vec![ConvBlock::new("conv1", 4, true), ConvBlock::new("last_conv", 4, true)],
        proxy_training: settings.clone(),
        target_training: settings,
        overlays: 2,
        out_dir: out.to_path_buf(),
        ..ExperimentPlan::default()
    }
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn single_model_plan_writes_one_checkpoint_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan {
        models: vec![Recipe::U],
        ..tiny_plan(dir.path())
    };
    let out = run_experiment(&plan).unwrap();
    assert_eq!(out.runs.len(), 1);
    let files = files_under(dir.path());
    let named = |n: &str| files.iter().filter(|p| p.file_name().unwrap() == n).count();
    assert_eq!(named("checkpoint.bin"), 1);
    assert_eq!(named("report.json"), 1);
    let run = &out.runs[0];
    assert!(run.dir.join("M_U/trainlog.json").exists());
    assert!(run.dir.join("run.json").exists());
    assert!(!run.dir.join("proxy-unbalanced").exists());
    let report = run.models[0].report.as_ref().unwrap();
    assert_eq!(report.model, "M_U");
    assert_eq!(report.provenance.stages.len(), 1);
    let overlays = std::fs::read_dir(run.dir.join("M_U/overlays")).unwrap().count();
    assert_eq!(overlays, 2 * 3);
}

#[test]
fn full_plan_is_deterministic_and_shares_proxy_checkpoints() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&tiny_plan(a.path())).unwrap();
    let rb = run_experiment(&tiny_plan(b.path())).unwrap();
    assert_eq!(ra.runs[0].hash, rb.runs[0].hash);
    let fa = files_under(a.path());
    let fb = files_under(b.path());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }

    let run = &ra.runs[0];
    assert!(run.models.iter().all(|m| m.error.is_none()));
    assert_eq!(run.models.len(), 5);
    let proxies: Vec<_> = run
        .models
        .iter()
        .map(|m| m.report.as_ref().unwrap().provenance.stages.first().unwrap().clone())
        .collect();
    // M_UU and M_UB start from the same proxy checkpoint
    assert_eq!(proxies[2], proxies[3]);
    assert!(proxies[4].balanced);
    assert_eq!(proxies[4].stage, "proxy");
    assert_eq!(proxies[0].stage, "target");

    let reports = collect_reports(&run.dir).unwrap();
    assert_eq!(reports.len(), 5);
    let rows = summarize(&reports);
    let names: Vec<_> = rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["M_U", "M_B", "M_UU", "M_UB", "M_BB"]);
}

#[test]
fn failing_recipe_does_not_stop_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = tiny_plan(dir.path());
    if let DataSource::Synthetic(proxy) = &mut plan.proxy {
        // no positives at all: balanced pre-training has undefined weights
        proxy.objectives[1].positive_rate = 0.0;
    }
    let out = run_experiment(&plan).unwrap();
    let run = &out.runs[0];
    for m in &run.models {
        if m.model == Recipe::BB {
            let err = m.error.as_deref().unwrap();
            assert!(err.contains("proxy pre-training failed"), "{err}");
        } else {
            assert!(m.error.is_none(), "{}: {:?}", m.model, m.error);
        }
    }
    let record = std::fs::read_to_string(run.dir.join("run.json")).unwrap();
    assert!(record.contains("\"failed\""));
    assert_eq!(out.summary.len(), 4);
}

#[test]
fn plan_round_trips_through_json_with_defaults() {
    let plan: ExperimentPlan = serde_json::from_str(r#"{"seeds": [4], "models": ["M_U", "M_BB"]}"#).unwrap();
    assert_eq!(plan.seeds, [4]);
    assert_eq!(plan.models, [Recipe::U, Recipe::BB]);
    assert_eq!(plan.layer, "last_conv");
    let text = serde_json::to_string(&plan).unwrap();
    let back: ExperimentPlan = serde_json::from_str(&text).unwrap();
    assert_eq!(back, plan);
}
