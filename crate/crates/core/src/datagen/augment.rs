use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{gaussian_smooth, sample_bilinear, Image, Sample};

/// Training stage, which selects the augmentation applied to each sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Multi-objective pre-training: random horizontal flips.
    Proxy,
    /// Binary target task: random elastic deformation.
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub flip_probability: f64,
    pub elastic_probability: f64,
    /// Displacement amplitude in pixels before smoothing.
    pub elastic_alpha: f64,
    /// Width of the Gaussian smoothing the displacement field, in pixels.
    pub elastic_sigma: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation {
            flip_probability: 0.5,
            elastic_probability: 0.8,
            elastic_alpha: 8.0,
            elastic_sigma: 4.0,
        }
    }
}

impl Augmentation {
    /// Returns an augmented copy; labels are never touched. The branch coin
    /// is always drawn first, so a rejected coin consumes one draw only.
    pub fn apply<R: RngCore + ?Sized>(&self, sample: &Sample, stage: Stage, rng: &mut R) -> Sample {
        let mut out = sample.clone();
        match stage {
            Stage::Proxy => {
                if rng.gen::<f64>() < self.flip_probability {
                    let w = sample.image.width();
                    out.image = sample.image.flip_horizontal();
                    out.boxes = sample.boxes.iter().map(|b| b.flip_horizontal(w)).collect();
                }
            }
            Stage::Target => {
                if rng.gen::<f64>() < self.elastic_probability {
                    out.image = elastic_deform(&sample.image, self.elastic_alpha, self.elastic_sigma, rng);
                }
            }
        }
        out
    }
}

/// Stage-appropriate augmentation with the default probabilities.
pub fn augment<R: RngCore + ?Sized>(sample: &Sample, stage: Stage, rng: &mut R) -> Sample {
    Augmentation::default().apply(sample, stage, rng)
}

/// Elastic deformation: per-pixel uniform displacements in `[-alpha, alpha]`
/// smoothed by a Gaussian of width `sigma`, applied with bilinear
/// resampling and clamped borders. Output stays in `[0, 1]`.
pub fn elastic_deform<R: RngCore + ?Sized>(img: &Image, alpha: f64, sigma: f64, rng: &mut R) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut draw = || -> Vec<f64> {
        (0..h * w)
            .map(|_| alpha * rng.gen_range(-1.0..=1.0))
            .collect()
    };
    let dy = gaussian_smooth(&draw(), h, w, sigma);
    let dx = gaussian_smooth(&draw(), h, w, sigma);
    let mut out = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let v = sample_bilinear(img.pixels(), h, w, y as f64 + dy[p], x as f64 + dx[p]);
            out.set(y, x, v.clamp(0.0, 1.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{BoundingBox, Split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Always returns the largest value, so every coin lands on "skip".
    struct NoOp;

    impl RngCore for NoOp {
        fn next_u32(&mut self) -> u32 {
            u32::MAX
        }
        fn next_u64(&mut self) -> u64 {
            u64::MAX
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            dest.fill(0xff)
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
            dest.fill(0xff);
            Ok(())
        }
    }

    fn sample() -> Sample {
        let data: Vec<f32> = (0..64).map(|i| (i as f32) / 63.0).collect();
        Sample {
            id: "s".into(),
            image: Image::new(8, 8, data).unwrap(),
            labels: vec![1],
            boxes: vec![BoundingBox::new(1, 2, 3, 2)],
            split: Split::Train,
        }
    }

    #[test]
    fn noop_branch_is_identity() {
        let s = sample();
        assert_eq!(augment(&s, Stage::Proxy, &mut NoOp), s);
        assert_eq!(augment(&s, Stage::Target, &mut NoOp), s);
    }

    #[test]
    fn zero_amplitude_elastic_is_identity() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(elastic_deform(&s.image, 0.0, 4.0, &mut rng), s.image);
    }

    #[test]
    fn flip_mirrors_boxes() {
        let s = sample();
        let aug = Augmentation {
            flip_probability: 1.0,
            ..Default::default()
        };
        let out = aug.apply(&s, Stage::Proxy, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.boxes, vec![BoundingBox::new(8 - 1 - 3, 2, 3, 2)]);
        assert_eq!(out.image.get(0, 0), s.image.get(0, 7));
        assert_eq!(out.labels, s.labels);
        let back = aug.apply(&out, Stage::Proxy, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(back, s);
    }

    #[test]
    fn elastic_keeps_unit_range_and_changes_pixels() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = elastic_deform(&s.image, 8.0, 1.0, &mut rng);
        assert!(out.in_unit_range());
        assert_ne!(out, s.image);
    }

    #[test]
    fn flip_rate_is_about_half() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flips = (0..2000)
            .filter(|_| augment(&s, Stage::Proxy, &mut rng).boxes != s.boxes)
            .count();
        assert!((900..1100).contains(&flips), "{flips}");
    }
}
