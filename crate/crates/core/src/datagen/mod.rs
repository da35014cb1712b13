//! Datasets: synthetic generation, manifest I/O, splitting and augmentation.
//!
//! Objective 0 is the annotated objective: boxes, when present, mark the
//! regions that corroborate a positive label for that objective, and only
//! samples positive for it may carry boxes.

mod augment;
mod image;
mod manifest;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

pub use self::augment::{augment, elastic_deform, Augmentation, Stage};
pub use self::image::{upsample_bilinear, Image};
pub use self::manifest::{load_manifest, write_manifest, MANIFEST_FILE};
pub use self::split::stratified_split;
pub use self::synth::{
    generate_synthetic, generate_to_dir, LesionKind, LesionSpec, ObjectiveSpec, ShortcutSpec,
    SplitSizes, StyleSpec, SynthConfig,
};
pub(crate) use self::image::{gaussian_smooth, sample_bilinear, to_u8};

use crate::{error::IssueKind, Error, Result};

/// Index of the objective whose positives carry bounding boxes.
pub const ANNOTATED_OBJECTIVE: usize = 0;

/// Axis-aligned pixel box; covers `x <= px < x + w`, `y <= py < y + h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.w >= 1
            && self.h >= 1
            && (self.x + self.w) as usize <= width
            && (self.y + self.h) as usize <= height
    }

    #[inline]
    pub fn contains(&self, py: usize, px: usize) -> bool {
        let (x, y) = (self.x as usize, self.y as usize);
        px >= x && px < x + self.w as usize && py >= y && py < y + self.h as usize
    }

    /// Mirror across the vertical axis of an image `width` pixels wide.
    pub fn flip_horizontal(&self, width: usize) -> Self {
        BoundingBox {
            x: width as u32 - self.x - self.w,
            ..*self
        }
    }
}

impl From<[u32; 4]> for BoundingBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        BoundingBox { x, y, w, h }
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    /// One 0/1 entry per objective.
    pub labels: Vec<u8>,
    pub boxes: Vec<BoundingBox>,
    pub split: Split,
}

impl Sample {
    pub fn is_positive(&self, objective: usize) -> bool {
        self.labels.get(objective) == Some(&1)
    }

    /// Checks every per-sample invariant against `objectives` labels and an
    /// `h`x`w` image, returning all violations found.
    pub fn issues(&self, objectives: usize, h: usize, w: usize) -> Vec<IssueKind> {
        let mut out = Vec::new();
        if self.image.height() != h || self.image.width() != w {
            out.push(IssueKind::ImageSize {
                h,
                w,
                got_h: self.image.height(),
                got_w: self.image.width(),
            });
        }
        if !self.image.in_unit_range() {
            out.push(IssueKind::IntensityRange);
        }
        if self.labels.len() != objectives {
            out.push(IssueKind::LabelLength {
                expected: objectives,
                got: self.labels.len(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l > 1) {
            out.push(IssueKind::LabelValue(i64::from(bad)));
        }
        for b in &self.boxes {
            if !b.fits(h, w) {
                out.push(IssueKind::BoxOutOfBounds {
                    x: i64::from(b.x),
                    y: i64::from(b.y),
                    w: i64::from(b.w),
                    h: i64::from(b.h),
                    img_h: h,
                    img_w: w,
                });
            }
        }
        if !self.boxes.is_empty() && !self.is_positive(ANNOTATED_OBJECTIVE) {
            out.push(IssueKind::BoxWithoutPositive);
        }
        out
    }
}

/// An in-memory dataset: the decoded form of a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub objective_names: Vec<String>,
    /// `(height, width)`
    pub image_size: (usize, usize),
    pub samples: Vec<Sample>,
    /// Generator config hash, or `"external"` for ingested data.
    pub provenance: String,
}

impl Dataset {
    pub fn objectives(&self) -> usize {
        self.objective_names.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    /// Validates the dataset-level and per-sample invariants.
    pub fn validate(&self) -> Result<()> {
        if self.objective_names.is_empty() {
            return Err(Error::Manifest("at least one objective is required".into()));
        }
        let (h, w) = self.image_size;
        let mut issues = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                issues.push(crate::error::SampleIssue {
                    id: s.id.clone(),
                    kind: IssueKind::DuplicateId,
                });
            }
            for kind in s.issues(self.objectives(), h, w) {
                issues.push(crate::error::SampleIssue {
                    id: s.id.clone(),
                    kind,
                });
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSamples(issues))
        }
    }
}
