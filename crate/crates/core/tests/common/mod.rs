//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use camalign::{
    datagen::{BoundingBox, Dataset, Image, Sample, Split},
    model::{init_model, ConvBlock, ModelConfig, ModelState, ParamSet, StageTag, Tensor},
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 8x8 input, 2 -> 3 -> 4 channels, pooling only after the first block:
/// 199 parameters.
pub fn micro_config(objectives: usize) -> ModelConfig {
    ModelConfig {
        input: [8, 8],
        blocks: vec![
            ConvBlock::new("conv1", 2, true),
            ConvBlock::new("conv2", 3, false),
            ConvBlock::new("conv3", 4, false),
        ],
        objectives,
    }
}

/// Parameters drawn uniformly from `[-0.5, 0.5]`, biases included, so that
/// ReLUs are mixed on typical inputs.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ParamSet<f64> {
    let mut r = rng(seed);
    ParamSet {
        tensors: cfg
            .parameter_layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                Tensor {
                    name,
                    shape,
                    data: (0..n).map(|_| r.gen_range(-0.5..0.5)).collect(),
                }
            })
            .collect(),
    }
}

pub fn random_state(cfg: &ModelConfig, seed: u64) -> ModelState {
    ModelState::from_parameters(cfg.clone(), StageTag::Scratch, random_params(cfg, seed).cast()).unwrap()
}

pub fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    Image::new(h, w, (0..h * w).map(|_| r.gen::<f32>()).collect()).unwrap()
}

/// Random map with roughly half its pixels zero.
pub fn random_map(h: usize, w: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..h * w)
        .map(|_| if r.gen_bool(0.5) { 0.0 } else { r.gen_range(0.0..1.0) })
        .collect()
}

pub fn random_box(h: usize, w: usize, r: &mut impl Rng) -> BoundingBox {
    let bw = r.gen_range(1..=w as u32);
    let bh = r.gen_range(1..=h as u32);
    BoundingBox::new(r.gen_range(0..=w as u32 - bw), r.gen_range(0..=h as u32 - bh), bw, bh)
}

/// Brute-force Mann-Whitney statistic over all positive/negative pairs.
pub fn auroc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut sum, mut pairs) = (0.0, 0u64);
    for (i, &sp) in scores.iter().enumerate().filter(|(i, _)| labels[*i] == 1) {
        let _ = i;
        for (j, &sn) in scores.iter().enumerate() {
            if labels[j] == 0 {
                sum += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
                pairs += 1;
            }
        }
    }
    sum / pairs as f64
}

/// Pixel-by-pixel energy inside the union of boxes.
pub fn energy_oracle(values: &[f64], h: usize, w: usize, boxes: &[BoundingBox]) -> f64 {
    let (mut inside, mut total) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = values[y * w + x];
            total += v;
            let hit = boxes.iter().any(|b| {
                x >= b.x as usize && x < (b.x + b.w) as usize && y >= b.y as usize && y < (b.y + b.h) as usize
            });
            if hit {
                inside += v;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// A tiny separable dataset: positives carry a bright square in the
/// middle, negatives do not. `n` samples per split.
pub fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut samples = Vec::new();
    for (si, split) in [Split::Train, Split::Validation, Split::Test].into_iter().enumerate() {
        for i in 0..n {
            let positive = i % 2 == 0;
            let mut px: Vec<f32> = (0..64).map(|_| r.gen_range(0.0..0.3)).collect();
            let mut boxes = Vec::new();
            if positive {
                for y in 3..5 {
                    for x in 3..5 {
                        px[y * 8 + x] = 0.9;
                    }
                }
                boxes.push(BoundingBox::new(3, 3, 2, 2));
            }
            samples.push(Sample {
                id: format!("toy-{si}-{i:03}"),
                image: Image::new(8, 8, px).unwrap(),
                labels: vec![u8::from(positive)],
                boxes,
                split,
            });
        }
    }
    Dataset {
        objective_names: vec!["bright".into()],
        image_size: (8, 8),
        samples,
        provenance: "toy".into(),
    }
}

/// A model for the toy dataset, initialised like a real one.
pub fn toy_model(seed: u64) -> ModelState {
    let cfg = ModelConfig {
        input: [8, 8],
        blocks: vec![ConvBlock::new("conv1", 4, false), ConvBlock::new("conv2", 4, false)],
        objectives: 1,
    };
    init_model(&cfg, seed).unwrap()
}

pub fn write_png(dir: &Path, name: &str, h: usize, w: usize) {
    Image::zeros(h, w).save_png(&dir.join(name)).unwrap();
}

/// Three samples, each breaking exactly one invariant.
pub fn write_bad_manifest(dir: &Path) -> PathBuf {
    write_png(dir, "a.png", 8, 8);
    write_png(dir, "b.png", 8, 8);
    let manifest = r#"{
  "objective_names": ["active", "other"],
  "image_size": [8, 8],
  "samples": [
    {"id": "bad-box", "path": "a.png", "labels": [1, 0], "boxes": [[6, 2, 4, 3]], "split": "train"},
    {"id": "bad-labels", "path": "b.png", "labels": [1], "boxes": [], "split": "train"},
    {"id": "missing-file", "path": "nope.png", "labels": [0, 1], "boxes": [], "split": "test"}
  ]
}"#;
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest).unwrap();
    path
}
