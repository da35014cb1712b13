use std::path::Path;

use rand::{seq::SliceRandom, Rng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{gaussian_smooth, BoundingBox, Dataset, Image, Sample, Split, ANNOTATED_OBJECTIVE};
use crate::{
    util::{config_hash, rng_stream},
    Error, Result,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionKind {
    /// Isotropic Gaussian blob.
    Blob,
    /// Thin annulus of radius 1.5 sigma.
    Ring,
    /// Elongated anisotropic Gaussian at a random orientation.
    Streak,
    /// Smooth opacity over the lower part of one lung field.
    Haze,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub kind: LesionKind,
    /// Inclusive range of lesions drawn per positive sample.
    pub count: [u32; 2],
    /// Range of the Gaussian width in pixels.
    pub sigma: [f64; 2],
    /// Range of the peak intensity change; negative values darken.
    pub amplitude: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub name: String,
    pub positive_rate: f64,
    pub lesion: LesionSpec,
}

/// Corner marker burned into the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortcutSpec {
    /// Fraction of annotated-objective positives carrying the marker.
    /// Negatives never carry it.
    pub strength: f64,
    /// Fraction of all samples, regardless of label, carrying the marker in
    /// the opposite (top-right) corner.
    #[serde(default)]
    pub distractor_rate: f64,
    /// Side length in pixels.
    pub size: usize,
    pub intensity: f64,
}

/// Acquisition style: global intensity transform, noise and anatomy jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub background: f64,
    pub body: f64,
    pub lung: f64,
    pub contrast: f64,
    pub brightness: f64,
    pub noise_std: f64,
    pub texture_amplitude: f64,
    pub texture_sigma: f64,
    /// Relative jitter of lung position and size.
    pub geometry_jitter: f64,
}

impl Default for StyleSpec {
    fn default() -> Self {
        StyleSpec {
            background: 0.06,
            body: 0.22,
            lung: 0.48,
            contrast: 1.0,
            brightness: 0.0,
            noise_std: 0.015,
            texture_amplitude: 0.05,
            texture_sigma: 1.5,
            geometry_jitter: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Prefix of generated sample ids.
    pub name: String,
    pub seed: u64,
    /// `[height, width]`
    pub image_size: [usize; 2],
    pub splits: SplitSizes,
    pub objectives: Vec<ObjectiveSpec>,
    pub shortcut: ShortcutSpec,
    pub style: StyleSpec,
}

impl SynthConfig {
    /// Binary target task: one annotated objective, 14.2% positives, with
    /// a corner shortcut on positives.
    pub fn target_default() -> Self {
        SynthConfig {
            name: "target".into(),
            seed: 11,
            image_size: [64, 64],
            splits: SplitSizes {
                train: 1400,
                validation: 350,
                test: 475,
            },
            objectives: vec![ObjectiveSpec {
                name: "active".into(),
                positive_rate: 630.0 / 4430.0,
                lesion: LesionSpec {
                    kind: LesionKind::Blob,
                    count: [1, 2],
                    sigma: [2.2, 3.4],
                    amplitude: [0.24, 0.36],
                },
            }],
            shortcut: ShortcutSpec {
                strength: 0.9,
                distractor_rate: 0.0,
                size: 4,
                intensity: 0.2,
            },
            style: StyleSpec::default(),
        }
    }

    /// Style-shifted, unpartitioned (all test) version of the target task
    /// with balanced classes and no shortcut.
    pub fn external_default() -> Self {
        let mut cfg = SynthConfig::target_default();
        cfg.name = "external".into();
        cfg.seed = 13;
        cfg.splits = SplitSizes {
            train: 0,
            validation: 0,
            test: 300,
        };
        cfg.objectives[0].positive_rate = 0.5;
        cfg.shortcut.strength = 0.0;
        cfg.style = StyleSpec {
            contrast: 0.85,
            brightness: 0.04,
            noise_std: 0.03,
            geometry_jitter: 0.05,
            ..StyleSpec::default()
        };
        cfg
    }

    /// Multi-objective proxy task with eight imbalanced findings.
    pub fn proxy_default() -> Self {
        let obj = |name: &str, rate: f64, kind, count, sigma, amplitude| ObjectiveSpec {
            name: name.into(),
            positive_rate: rate,
            lesion: LesionSpec {
                kind,
                count,
                sigma,
                amplitude,
            },
        };
        use LesionKind::*;
        SynthConfig {
            name: "proxy".into(),
            seed: 7,
            image_size: [64, 64],
            splits: SplitSizes {
                train: 4000,
                validation: 500,
                test: 500,
            },
            objectives: vec![
                obj("nodule", 0.05, Blob, [1, 2], [1.4, 2.6], [0.14, 0.26]),
                obj("mass", 0.06, Blob, [1, 1], [3.5, 5.0], [0.10, 0.18]),
                obj("cavity", 0.04, Ring, [1, 1], [1.8, 2.6], [0.15, 0.25]),
                obj("fibrosis", 0.08, Streak, [1, 3], [1.0, 1.6], [0.12, 0.20]),
                obj("emphysema", 0.10, Blob, [1, 2], [2.0, 3.5], [-0.22, -0.12]),
                obj("effusion", 0.18, Haze, [1, 1], [3.0, 5.0], [0.12, 0.22]),
                obj("infiltration", 0.12, Blob, [3, 6], [1.0, 1.6], [0.08, 0.15]),
                obj("atelectasis", 0.03, Streak, [1, 1], [1.8, 2.4], [0.12, 0.2]),
            ],
            shortcut: ShortcutSpec {
                strength: 0.0,
                distractor_rate: 0.0,
                size: 4,
                intensity: 1.0,
            },
            style: StyleSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [h, w] = self.image_size;
        if h < 8 || w < 8 {
            return bad(format!("image size {h}x{w} is too small"));
        }
        if self.splits.total() == 0 {
            return bad("at least one sample is required".into());
        }
        if self.objectives.is_empty() {
            return bad("at least one objective is required".into());
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.shortcut.strength) || !prob(self.shortcut.distractor_rate) {
            return bad("shortcut probabilities must lie in [0,1]".into());
        }
        if self.shortcut.size == 0 || self.shortcut.size + 2 > h.min(w) / 2 {
            return bad(format!("shortcut size {} does not fit", self.shortcut.size));
        }
        for o in &self.objectives {
            let l = &o.lesion;
            if !prob(o.positive_rate) {
                return bad(format!("positive rate of `{}` outside [0,1]", o.name));
            }
            if l.count[0] == 0 || l.count[0] > l.count[1] {
                return bad(format!("lesion count range of `{}` is empty", o.name));
            }
            if !(l.sigma[0] > 0.0 && l.sigma[0] <= l.sigma[1]) {
                return bad(format!("lesion sigma range of `{}` is invalid", o.name));
            }
            if l.amplitude[0] > l.amplitude[1] {
                return bad(format!("lesion amplitude range of `{}` is invalid", o.name));
            }
            let extent = 2 * support_radius(l.kind, l.sigma[1]) + 1;
            if extent > h.min(w) / 2 {
                return bad(format!(
                    "lesions of `{}` span {extent} px, larger than a lung field of a {h}x{w} image",
                    o.name
                ));
            }
        }
        Ok(())
    }
}

fn support_radius(kind: LesionKind, sigma: f64) -> usize {
    let r = match kind {
        LesionKind::Blob | LesionKind::Ring => 2.5 * sigma,
        LesionKind::Streak => 2.5 * 2.5 * sigma,
        LesionKind::Haze => 0.0,
    };
    r.ceil() as usize
}

/// Deterministic quota draw: exactly `round(rate * n)` of `n` slots set.
fn quota(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = (rate * n as f64).round() as usize;
    let mut slots: Vec<bool> = (0..n).map(|i| i < k).collect();
    slots.shuffle(rng);
    slots
}

const LABEL_STREAM: u64 = 1 << 16;
const SHORTCUT_STREAM: u64 = 2 << 16;
const DISTRACTOR_STREAM: u64 = 3 << 16;
const SAMPLE_STREAM: u64 = 1 << 32;

struct Plan {
    split: Split,
    labels: Vec<u8>,
    marker: bool,
    distractor: bool,
}

fn plan_samples(cfg: &SynthConfig) -> Vec<Plan> {
    let mut plans = Vec::with_capacity(cfg.splits.total());
    for (si, split) in Split::ALL.into_iter().enumerate() {
        let n = cfg.splits.get(split);
        let per_objective: Vec<Vec<bool>> = cfg
            .objectives
            .iter()
            .enumerate()
            .map(|(oi, o)| {
                let mut rng = rng_stream(cfg.seed, LABEL_STREAM + (oi as u64) * 8 + si as u64);
                quota(n, o.positive_rate, &mut rng)
            })
            .collect();
        let positives: Vec<usize> = (0..n)
            .filter(|&i| per_objective[ANNOTATED_OBJECTIVE][i])
            .collect();
        let marked = quota(
            positives.len(),
            cfg.shortcut.strength,
            &mut rng_stream(cfg.seed, SHORTCUT_STREAM + si as u64),
        );
        let distractors = quota(
            n,
            cfg.shortcut.distractor_rate,
            &mut rng_stream(cfg.seed, DISTRACTOR_STREAM + si as u64),
        );
        let mut marker = vec![false; n];
        for (&i, &m) in positives.iter().zip(&marked) {
            marker[i] = m;
        }
        for i in 0..n {
            plans.push(Plan {
                split,
                labels: per_objective.iter().map(|o| u8::from(o[i])).collect(),
                marker: marker[i],
                distractor: distractors[i],
            });
        }
    }
    plans
}

/// Generates the dataset described by `cfg`. Pure function of the config:
/// each sample depends only on the config and its index.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let plans = plan_samples(cfg);
    let samples = plans
        .iter()
        .enumerate()
        .map(|(i, plan)| {
            let mut rng = rng_stream(cfg.seed, SAMPLE_STREAM + i as u64);
            let (image, boxes) = render(cfg, plan, &mut rng);
            Sample {
                id: format!("{}-{:05}", cfg.name, i),
                image,
                labels: plan.labels.clone(),
                boxes,
                split: plan.split,
            }
        })
        .collect();
    Ok(Dataset {
        objective_names: cfg.objectives.iter().map(|o| o.name.clone()).collect(),
        image_size: (cfg.image_size[0], cfg.image_size[1]),
        samples,
        provenance: config_hash(cfg),
    })
}

/// Generates the dataset and writes its manifest and PNG images to `dir`.
pub fn generate_to_dir(cfg: &SynthConfig, dir: &Path) -> Result<Dataset> {
    let ds = generate_synthetic(cfg)?;
    super::write_manifest(&ds, dir)?;
    Ok(ds)
}

#[derive(Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
}

impl Ellipse {
    fn radius(&self, y: f64, x: f64) -> f64 {
        (((y - self.cy) / self.ay).powi(2) + ((x - self.cx) / self.ax).powi(2)).sqrt()
    }

    /// 1 inside, falling linearly to 0 across a thin rim.
    fn weight(&self, y: f64, x: f64) -> f64 {
        ((1.0 - self.radius(y, x)) / 0.12).clamp(0.0, 1.0)
    }
}

fn render(cfg: &SynthConfig, plan: &Plan, rng: &mut ChaCha8Rng) -> (Image, Vec<BoundingBox>) {
    let [h, w] = cfg.image_size;
    let (hf, wf) = (h as f64, w as f64);
    let st = &cfg.style;
    let j = st.geometry_jitter;
    let mut jitter = |scale: f64| rng.gen_range(-1.0..=1.0) * scale;

    let body = Ellipse {
        cy: (0.55 + jitter(j)) * hf,
        cx: (0.5 + jitter(j)) * wf,
        ay: 0.5 * hf,
        ax: 0.43 * wf,
    };
    let lungs: Vec<Ellipse> = [-1.0, 1.0]
        .iter()
        .map(|side| Ellipse {
            cy: (0.47 + jitter(j)) * hf,
            cx: (0.5 + side * 0.19 + jitter(j)) * wf,
            ay: (0.30 + jitter(j / 2.0)) * hf,
            ax: (0.135 + jitter(j / 2.0)) * wf,
        })
        .collect();

    let lung_weight: Vec<f64> = (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as f64 + 0.5, (p % w) as f64 + 0.5);
            lungs.iter().map(|l| l.weight(y, x)).fold(0.0, f64::max)
        })
        .collect();

    let white: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
    let texture = gaussian_smooth(&white, h, w, st.texture_sigma);
    // Smoothing white noise by a Gaussian of width s scales its std by 1/(2 sqrt(pi) s).
    let texture_gain = st.texture_amplitude * 2.0 * std::f64::consts::PI.sqrt() * st.texture_sigma;

    let mut field: Vec<f64> = (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as f64 + 0.5, (p % w) as f64 + 0.5);
            let wb = body.weight(y, x);
            let wl = lung_weight[p];
            st.background
                + (st.body - st.background) * wb
                + (st.lung - st.body) * wl
                + texture_gain * texture[p] * (0.4 * wb + 0.6 * wl)
        })
        .collect();

    let mut boxes = Vec::new();
    for (oi, spec) in cfg.objectives.iter().enumerate() {
        if plan.labels[oi] == 0 {
            continue;
        }
        let l = &spec.lesion;
        let count = rng.gen_range(l.count[0]..=l.count[1]);
        for _ in 0..count {
            let sigma = rng.gen_range(l.sigma[0]..=l.sigma[1]);
            let amp = rng.gen_range(l.amplitude[0]..=l.amplitude[1]);
            let lung = lungs[rng.gen_range(0..2)];
            let drawn = draw_lesion(&mut field, h, w, l.kind, sigma, amp, &lung, &lung_weight, rng);
            if oi == ANNOTATED_OBJECTIVE {
                if let Some(b) = drawn {
                    boxes.push(b);
                }
            }
        }
    }

    let mut img = Image::zeros(h, w);
    for (p, v) in field.iter().enumerate() {
        let styled = (v - 0.5) * st.contrast + 0.5 + st.brightness;
        let noisy = styled + st.noise_std * rng.sample::<f64, _>(StandardNormal);
        img.pixels_mut()[p] = noisy.clamp(0.0, 1.0) as f32;
    }
    let s = cfg.shortcut.size;
    let v = cfg.shortcut.intensity.clamp(0.0, 1.0) as f32;
    if plan.marker {
        fill_square(&mut img, 2, 2, s, v);
    }
    if plan.distractor {
        fill_square(&mut img, 2, w - 2 - s, s, v);
    }
    img.quantize_u8();
    (img, boxes)
}

fn fill_square(img: &mut Image, y0: usize, x0: usize, size: usize, v: f32) {
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            img.set(y, x, v);
        }
    }
}

/// Adds one lesion to `field` and returns the tight box around the pixels
/// it changed.
#[allow(clippy::too_many_arguments)]
fn draw_lesion(
    field: &mut [f64],
    h: usize,
    w: usize,
    kind: LesionKind,
    sigma: f64,
    amp: f64,
    lung: &Ellipse,
    lung_weight: &[f64],
    rng: &mut ChaCha8Rng,
) -> Option<BoundingBox> {
    if kind == LesionKind::Haze {
        // lower part of the chosen lung, soft upper boundary
        let top = lung.cy + rng.gen_range(0.0..0.5) * lung.ay;
        for p in 0..h * w {
            let y = (p / w) as f64 + 0.5;
            let x = (p % w) as f64 + 0.5;
            let inside = lung.weight(y, x);
            if inside > 0.0 {
                let ramp = ((y - top) / sigma).clamp(0.0, 1.0);
                field[p] += amp * ramp * inside.min(lung_weight[p]);
            }
        }
        return None;
    }

    let radius = support_radius(kind, sigma) as i64;
    // centre uniformly inside the inner 60% of the lung ellipse
    let (cy, cx) = loop {
        let u: f64 = rng.gen_range(-1.0..=1.0);
        let v: f64 = rng.gen_range(-1.0..=1.0);
        if u * u + v * v <= 1.0 {
            break (lung.cy + 0.6 * u * lung.ay, lung.cx + 0.6 * v * lung.ax);
        }
    };
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (sin, cos) = theta.sin_cos();
    let (cyi, cxi) = (cy.floor() as i64, cx.floor() as i64);

    let profile = |dy: f64, dx: f64| -> f64 {
        match kind {
            LesionKind::Blob => {
                let cut = (-3.125f64).exp();
                let g = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                ((g - cut) / (1.0 - cut)).max(0.0)
            }
            LesionKind::Ring => {
                let d = (dy * dy + dx * dx).sqrt();
                if d > 2.5 * sigma {
                    return 0.0;
                }
                let s = 0.4 * sigma;
                (-(d - 1.5 * sigma).powi(2) / (2.0 * s * s)).exp()
            }
            LesionKind::Streak => {
                let along = dx * cos + dy * sin;
                let across = -dx * sin + dy * cos;
                let (sl, ss) = (2.5 * sigma, 0.6 * sigma);
                let q = (along / sl).powi(2) + (across / ss).powi(2);
                if q >= 6.25 {
                    return 0.0;
                }
                let cut = (-3.125f64).exp();
                (((-q / 2.0).exp() - cut) / (1.0 - cut)).max(0.0)
            }
            LesionKind::Haze => unreachable!(),
        }
    };

    let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for py in (cyi - radius).max(0)..=(cyi + radius).min(h as i64 - 1) {
        for px in (cxi - radius).max(0)..=(cxi + radius).min(w as i64 - 1) {
            let dy = py as f64 + 0.5 - cy;
            let dx = px as f64 + 0.5 - cx;
            let value = profile(dy, dx);
            if value > 0.0 {
                let (py, px) = (py as usize, px as usize);
                field[py * w + px] += amp * value;
                y0 = y0.min(py);
                x0 = x0.min(px);
                y1 = y1.max(py);
                x1 = x1.max(px);
            }
        }
    }
    (y0 != usize::MAX).then(|| {
        BoundingBox::new(
            x0 as u32,
            y0 as u32,
            (x1 - x0 + 1) as u32,
            (y1 - y0 + 1) as u32,
        )
    })
}
