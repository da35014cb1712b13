use std::{
    collections::HashSet,
    path::{Path, PathBuf},
};

use serde::{Deserialize, Serialize};

use super::{BoundingBox, Dataset, Image, Sample, Split, ANNOTATED_OBJECTIVE};
use crate::{
    error::{IssueKind, SampleIssue},
    util::{create_dir, read_json, write_json},
    Error, Result,
};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    objective_names: Vec<String>,
    image_size: [usize; 2],
    samples: Vec<ManifestSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

/// Boxes and labels are read as signed integers so that malformed values are
/// reported per sample instead of failing the whole parse.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestSample {
    id: String,
    path: PathBuf,
    labels: Vec<i64>,
    boxes: Vec<[i64; 4]>,
    split: Split,
}

/// Writes `manifest.json` and one 8-bit PNG per sample under `dir/images/`.
pub fn write_manifest(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    create_dir(&images)?;
    let mut samples = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let rel = PathBuf::from("images").join(format!("{}.png", s.id));
        s.image.save_png(&dir.join(&rel))?;
        samples.push(ManifestSample {
            id: s.id.clone(),
            path: rel,
            labels: s.labels.iter().map(|&l| i64::from(l)).collect(),
            boxes: s
                .boxes
                .iter()
                .map(|b| [b.x, b.y, b.w, b.h].map(i64::from))
                .collect(),
            split: s.split,
        });
    }
    let file = ManifestFile {
        objective_names: ds.objective_names.clone(),
        image_size: [ds.image_size.0, ds.image_size.1],
        samples,
        provenance: Some(ds.provenance.clone()),
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &file)?;
    Ok(path)
}

/// Loads a manifest (or a directory containing `manifest.json`) and every
/// image it references. All sample-level violations are collected and
/// returned together, each naming its sample id.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_owned()
    };
    let file: ManifestFile = read_json(&path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let m = file.objective_names.len();
    if m == 0 {
        return Err(Error::Manifest("objective_names must not be empty".into()));
    }
    let [h, w] = file.image_size;

    let mut issues = Vec::new();
    let mut samples = Vec::with_capacity(file.samples.len());
    let mut seen = HashSet::new();
    for rec in file.samples {
        let mut report = |kind| {
            issues.push(SampleIssue {
                id: rec.id.clone(),
                kind,
            })
        };
        if !seen.insert(rec.id.clone()) {
            report(IssueKind::DuplicateId);
        }
        if rec.labels.len() != m {
            report(IssueKind::LabelLength {
                expected: m,
                got: rec.labels.len(),
            });
        }
        if let Some(&v) = rec.labels.iter().find(|&&l| l != 0 && l != 1) {
            report(IssueKind::LabelValue(v));
        }
        let mut boxes = Vec::with_capacity(rec.boxes.len());
        for [x, y, bw, bh] in rec.boxes.iter().copied() {
            let ok = x >= 0
                && y >= 0
                && bw >= 1
                && bh >= 1
                && x + bw <= w as i64
                && y + bh <= h as i64;
            if ok {
                boxes.push(BoundingBox::new(x as u32, y as u32, bw as u32, bh as u32));
            } else {
                report(IssueKind::BoxOutOfBounds {
                    x,
                    y,
                    w: bw,
                    h: bh,
                    img_h: h,
                    img_w: w,
                });
            }
        }
        if !rec.boxes.is_empty() && rec.labels.get(ANNOTATED_OBJECTIVE) != Some(&1) {
            report(IssueKind::BoxWithoutPositive);
        }
        let image_path = root.join(&rec.path);
        let image = if !image_path.is_file() {
            report(IssueKind::MissingImage(rec.path.clone()));
            None
        } else {
            match Image::load_png(&image_path) {
                Ok(img) if img.height() != h || img.width() != w => {
                    report(IssueKind::ImageSize {
                        h,
                        w,
                        got_h: img.height(),
                        got_w: img.width(),
                    });
                    None
                }
                Ok(img) => Some(img),
                Err(e) => {
                    report(IssueKind::UndecodableImage(e.to_string()));
                    None
                }
            }
        };
        if let Some(image) = image {
            samples.push(Sample {
                id: rec.id,
                image,
                labels: rec.labels.iter().map(|&l| l.clamp(0, 1) as u8).collect(),
                boxes,
                split: rec.split,
            });
        }
    }
    if !issues.is_empty() {
        return Err(Error::InvalidSamples(issues));
    }
    let ds = Dataset {
        objective_names: file.objective_names,
        image_size: (h, w),
        samples,
        provenance: file.provenance.unwrap_or_else(|| "external".into()),
    };
    ds.validate()?;
    Ok(ds)
}
