use std::{fmt::Write as _, path::Path};

use serde::{Deserialize, Serialize};

use super::Recipe;
use crate::{
    metrics::{median, MetricsReport},
    saliency::CamMethod,
    util::read_json,
    Error, Result,
};

/// Median over runs of one model's metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub runs: usize,
    pub auroc_target: f64,
    pub auroc_external: f64,
    /// Median over runs of each run's median energy, in
    /// [`CamMethod::ALL`] order; `None` when no run scored any sample.
    pub prop_energy: [Option<f64>; 3],
}

impl SummaryRow {
    pub fn energy(&self, method: CamMethod) -> Option<f64> {
        let i = CamMethod::ALL.iter().position(|&m| m == method).expect("known method");
        self.prop_energy[i]
    }
}

fn model_order(name: &str) -> (usize, String) {
    let rank = Recipe::ALL
        .iter()
        .position(|r| r.name() == name)
        .unwrap_or(Recipe::ALL.len());
    (rank, name.to_string())
}

/// Groups reports by model name and takes medians over the group.
pub fn summarize(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let mut names: Vec<&str> = reports.iter().map(|r| r.model.as_str()).collect();
    names.sort_by_key(|n| model_order(n));
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let group: Vec<&MetricsReport> = reports.iter().filter(|r| r.model == name).collect();
            let med = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
                let v: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
                median(&v).ok()
            };
            let mut prop_energy = [None; 3];
            for (slot, method) in prop_energy.iter_mut().zip(CamMethod::ALL) {
                *slot = med(&|r| r.prop_energy.get(method).median);
            }
            SummaryRow {
                model: name.to_string(),
                runs: group.len(),
                auroc_target: med(&|r| Some(r.auroc_target)).expect("group is nonempty"),
                auroc_external: med(&|r| Some(r.auroc_external)).expect("group is nonempty"),
                prop_energy,
            }
        })
        .collect()
}

/// Plain-text table with one row per model.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:>4} {:>8} {:>8} {:>9} {:>9} {:>9}",
        "model", "runs", "AUROC", "AUROC", "PE", "PE", "PE"
    );
    let _ = writeln!(
        out,
        "{:<6} {:>4} {:>8} {:>8} {:>9} {:>9} {:>9}",
        "", "", "target", "external", "Grad-CAM", "HiResCAM", "Score-CAM"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6} {:>4} {:>8.3} {:>8.3} {:>9} {:>9} {:>9}",
            r.model,
            r.runs,
            r.auroc_target,
            r.auroc_external,
            fmt(r.prop_energy[0]),
            fmt(r.prop_energy[1]),
            fmt(r.prop_energy[2]),
        );
    }
    out
}

/// Every `report.json` found at most three directory levels below `dir`,
/// in sorted path order.
pub fn collect_reports(dir: &Path) -> Result<Vec<MetricsReport>> {
    fn walk(dir: &Path, depth: usize, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() && depth > 0 {
                walk(&p, depth - 1, out)?;
            } else if p.file_name().is_some_and(|n| n == "report.json") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, 3, &mut paths)?;
    paths.iter().map(|p| read_json(p)).collect()
}
