//! Per-objective class weights and the weighted binary cross-entropy.
//!
//! For each binary objective the majority class is down-weighted by the
//! minority/majority count ratio and the minority class keeps weight 1, so
//! both classes carry the same total mass in the loss. Weights multiply the
//! per-objective loss terms; they are not used as sampling probabilities.

use serde::{Deserialize, Serialize};

use crate::{datagen::Sample, Error, Result};

/// Predictions are clamped to `[EPSILON, 1 - EPSILON]` before taking logs.
pub const EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: u64,
    pub negative: u64,
}

impl ClassCounts {
    pub fn new(positive: u64, negative: u64) -> Self {
        ClassCounts { positive, negative }
    }

    pub fn total(&self) -> u64 {
        self.positive + self.negative
    }
}

/// Counts positives and negatives per objective over `samples`.
pub fn count_classes<'a>(samples: impl IntoIterator<Item = &'a Sample>, objectives: usize) -> Vec<ClassCounts> {
    let mut counts = vec![ClassCounts::new(0, 0); objectives];
    for s in samples {
        for (c, &l) in counts.iter_mut().zip(&s.labels) {
            if l == 1 {
                c.positive += 1;
            } else {
                c.negative += 1;
            }
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeight {
    pub positive: f64,
    pub negative: f64,
}

impl ObjectiveWeight {
    pub const ONE: ObjectiveWeight = ObjectiveWeight {
        positive: 1.0,
        negative: 1.0,
    };

    /// Weight applied to a sample whose label is `target`.
    #[inline]
    pub fn for_target(&self, target: u8) -> f64 {
        if target == 1 {
            self.positive
        } else {
            self.negative
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveWeights(pub Vec<ObjectiveWeight>);

impl ObjectiveWeights {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ObjectiveWeight> {
        self.0.iter()
    }
}

impl std::ops::Index<usize> for ObjectiveWeights {
    type Output = ObjectiveWeight;

    fn index(&self, i: usize) -> &ObjectiveWeight {
        &self.0[i]
    }
}

/// Balanced weights from per-objective class counts.
///
/// `w+ = 1` if `S- > S+`, else `S-/S+`; `w- = 1` if `S+ > S-`, else `S+/S-`.
pub fn compute_weights(counts: &[ClassCounts]) -> Result<ObjectiveWeights> {
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.positive == 0 {
                return Err(Error::EmptyClass {
                    objective: i,
                    class: "positive",
                });
            }
            if c.negative == 0 {
                return Err(Error::EmptyClass {
                    objective: i,
                    class: "negative",
                });
            }
            let (sp, sn) = (c.positive as f64, c.negative as f64);
            Ok(ObjectiveWeight {
                positive: if c.negative > c.positive { 1.0 } else { sn / sp },
                negative: if c.positive > c.negative { 1.0 } else { sp / sn },
            })
        })
        .collect::<Result<_>>()
        .map(ObjectiveWeights)
}

/// All-ones weights for `objectives` objectives (plain BCE).
pub fn unbalanced_weights(objectives: usize) -> ObjectiveWeights {
    ObjectiveWeights(vec![ObjectiveWeight::ONE; objectives])
}

fn check_lengths(predictions: usize, targets: usize, weights: usize) -> Result<()> {
    if targets != predictions {
        return Err(Error::LengthMismatch {
            what: "targets vs predictions",
            expected: predictions,
            got: targets,
        });
    }
    if weights != predictions {
        return Err(Error::LengthMismatch {
            what: "weights vs predictions",
            expected: predictions,
            got: weights,
        });
    }
    Ok(())
}

/// Weighted BCE of one sample:
/// `J = -sum_i w_i^{t_i} [t_i ln f_i + (1 - t_i) ln(1 - f_i)]`.
pub fn weighted_bce(predictions: &[f64], targets: &[u8], weights: &ObjectiveWeights) -> Result<f64> {
    check_lengths(predictions.len(), targets.len(), weights.len())?;
    Ok(predictions
        .iter()
        .zip(targets)
        .zip(weights.iter())
        .map(|((&f, &t), w)| {
            let f = f.clamp(EPSILON, 1.0 - EPSILON);
            let term = if t == 1 { f.ln() } else { (1.0 - f).ln() };
            -w.for_target(t) * term
        })
        .sum())
}

/// Mean of [`weighted_bce`] over a batch.
pub fn weighted_bce_batch(
    predictions: &[Vec<f64>],
    targets: &[Vec<u8>],
    weights: &ObjectiveWeights,
) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "batch targets vs predictions",
            expected: predictions.len(),
            got: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        total += weighted_bce(p, t, weights)?;
    }
    Ok(total / predictions.len() as f64)
}

/// Gradient of [`weighted_bce`] with respect to the predictions. Zero where
/// the clamp is active.
pub fn weighted_bce_grad(predictions: &[f64], targets: &[u8], weights: &ObjectiveWeights) -> Result<Vec<f64>> {
    check_lengths(predictions.len(), targets.len(), weights.len())?;
    Ok(predictions
        .iter()
        .zip(targets)
        .zip(weights.iter())
        .map(|((&f, &t), w)| {
            if !(EPSILON..=1.0 - EPSILON).contains(&f) {
                return 0.0;
            }
            let d = if t == 1 { -1.0 / f } else { 1.0 / (1.0 - f) };
            w.for_target(t) * d
        })
        .collect())
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss and its gradient with respect to the pre-sigmoid logits, with the
/// sigmoid fused into the loss: `dJ/dz_i = w_i^{t_i} (sigmoid(z_i) - t_i)`.
pub fn weighted_bce_logits(logits: &[f64], targets: &[u8], weights: &ObjectiveWeights) -> Result<(f64, Vec<f64>)> {
    check_lengths(logits.len(), targets.len(), weights.len())?;
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let loss = weighted_bce(&probs, targets, weights)?;
    let grad = probs
        .iter()
        .zip(targets)
        .zip(weights.iter())
        .map(|((&f, &t), w)| {
            if !(EPSILON..=1.0 - EPSILON).contains(&f) {
                0.0
            } else {
                w.for_target(t) * (f - f64::from(t))
            }
        })
        .collect();
    Ok((loss, grad))
}
