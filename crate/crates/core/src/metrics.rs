//! Proportional energy, AUROC and median aggregation, plus the per-model
//! report they feed.

use serde::{Deserialize, Serialize};

use crate::{
    balance::ObjectiveWeights,
    datagen::BoundingBox,
    saliency::{CamMethod, SaliencyMap},
    Error, Result,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyScore {
    pub id: String,
    pub method: CamMethod,
    pub value: f64,
    /// The map was zero everywhere; `value` is 0 by convention.
    pub all_zero: bool,
}

/// Boolean union of `boxes` over an `h`x`w` grid.
pub fn box_mask(boxes: &[BoundingBox], h: usize, w: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; h * w];
    for b in boxes {
        if !b.fits(h, w) {
            return Err(Error::Metric(format!(
                "box {:?} does not fit a {h}x{w} map",
                <[u32; 4]>::from(*b)
            )));
        }
        for y in b.y as usize..(b.y + b.h) as usize {
            mask[y * w + b.x as usize..y * w + (b.x + b.w) as usize].fill(true);
        }
    }
    Ok(mask)
}

/// Fraction of a map's total mass inside the union of `boxes`, plus a flag
/// for all-zero maps (which score 0).
pub fn energy_fraction(values: &[f64], h: usize, w: usize, boxes: &[BoundingBox]) -> Result<(f64, bool)> {
    if boxes.is_empty() {
        return Err(Error::Metric(
            "proportional energy needs at least one box".into(),
        ));
    }
    if values.len() != h * w {
        return Err(Error::LengthMismatch {
            what: "map values",
            expected: h * w,
            got: values.len(),
        });
    }
    let mask = box_mask(boxes, h, w)?;
    let (mut inside, mut total) = (0.0, 0.0);
    for (&v, &m) in values.iter().zip(&mask) {
        total += v;
        if m {
            inside += v;
        }
    }
    if total <= 0.0 {
        return Ok((0.0, true));
    }
    Ok(((inside / total).clamp(0.0, 1.0), false))
}

pub fn proportional_energy(map: &SaliencyMap, boxes: &[BoundingBox]) -> Result<EnergyScore> {
    let (value, all_zero) = energy_fraction(&map.values, map.height, map.width, boxes)?;
    Ok(EnergyScore {
        id: map.sample_id.clone(),
        method: map.method,
        value,
        all_zero,
    })
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
/// Computed from midranks in `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs scores",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("AUROC scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, kept integral so ties are exact.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share the midrank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    // U = R - n+(n+ + 1)/2, doubled
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Middle value; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Metric("median of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodEnergy {
    /// `None` when no scored sample exists.
    pub median: Option<f64>,
    pub per_sample: Vec<EnergyScore>,
}

impl MethodEnergy {
    pub fn from_scores(per_sample: Vec<EnergyScore>) -> Self {
        let values: Vec<f64> = per_sample.iter().map(|s| s.value).collect();
        MethodEnergy {
            median: median(&values).ok(),
            per_sample,
        }
    }

    pub fn all_zero_count(&self) -> usize {
        self.per_sample.iter().filter(|s| s.all_zero).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropEnergy {
    pub gradcam: MethodEnergy,
    pub hirescam: MethodEnergy,
    pub scorecam: MethodEnergy,
}

impl PropEnergy {
    pub fn get(&self, method: CamMethod) -> &MethodEnergy {
        match method {
            CamMethod::GradCam => &self.gradcam,
            CamMethod::HiResCam => &self.hirescam,
            CamMethod::ScoreCam => &self.scorecam,
        }
    }
}

/// One training stage that produced the evaluated weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub dataset: String,
    pub balanced: bool,
    pub seed: u64,
    pub config_hash: String,
    pub selected_epoch: Option<usize>,
    pub weights_used: ObjectiveWeights,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_hash: String,
    pub layer: String,
    pub objective: usize,
    pub target_dataset: String,
    pub external_dataset: String,
    #[serde(default)]
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub auroc_target: f64,
    pub auroc_external: f64,
    pub prop_energy: PropEnergy,
    pub provenance: Provenance,
}
