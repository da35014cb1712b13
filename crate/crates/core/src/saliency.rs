//! Grad-CAM, HiResCAM and Score-CAM at a named conv layer.
//!
//! Each method first builds a raw map at layer resolution, then applies
//! ReLU to the aggregated map, upsamples it bilinearly (cell centres
//! aligned) to input resolution and divides by its maximum. A map that is
//! zero everywhere stays zero.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{
    datagen::{upsample_bilinear, Image},
    model::{ActivationRecord, ModelState, Network, Real},
    util::{create_dir, write_json},
    Error, Result,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CamMethod {
    #[serde(rename = "gradcam")]
    GradCam,
    #[serde(rename = "hirescam")]
    HiResCam,
    #[serde(rename = "scorecam")]
    ScoreCam,
}

impl CamMethod {
    pub const ALL: [CamMethod; 3] = [CamMethod::GradCam, CamMethod::HiResCam, CamMethod::ScoreCam];

    pub fn as_str(&self) -> &'static str {
        match self {
            CamMethod::GradCam => "gradcam",
            CamMethod::HiResCam => "hirescam",
            CamMethod::ScoreCam => "scorecam",
        }
    }
}

impl std::fmt::Display for CamMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CamMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CamMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown saliency method `{s}`")))
    }
}

/// Nonnegative relevance at input resolution, max-normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub method: CamMethod,
    pub sample_id: String,
    pub objective: usize,
}

impl SaliencyMap {
    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = id.into();
        self
    }

    /// Writes `<id>.<method>.f32` (little-endian row-major grid) and a JSON
    /// sidecar `<id>.<method>.json`.
    pub fn write_dump(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        let stem = format!("{}.{}", self.sample_id, self.method);
        let bytes: Vec<u8> = self
            .values
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        let bin = dir.join(format!("{stem}.f32"));
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        write_json(
            &dir.join(format!("{stem}.json")),
            &serde_json::json!({
                "id": self.sample_id,
                "method": self.method,
                "objective": self.objective,
                "H": self.height,
                "W": self.width,
            }),
        )
    }
}

/// `alpha_k = mean(G_k)`, `m = sum_k alpha_k A_k`.
pub fn grad_cam_raw(rec: &ActivationRecord) -> Vec<f64> {
    let n = rec.height * rec.width;
    let mut m = vec![0.0; n];
    for k in 0..rec.channels {
        let alpha = rec.channel_grad(k).iter().sum::<f64>() / n as f64;
        for (o, a) in m.iter_mut().zip(rec.channel(k)) {
            *o += alpha * a;
        }
    }
    m
}

/// `m = sum_k G_k * A_k` elementwise.
pub fn hires_cam_raw(rec: &ActivationRecord) -> Vec<f64> {
    let n = rec.height * rec.width;
    let mut m = vec![0.0; n];
    for k in 0..rec.channels {
        for ((o, a), g) in m.iter_mut().zip(rec.channel(k)).zip(rec.channel_grad(k)) {
            *o += g * a;
        }
    }
    m
}

/// ReLU, upsample from `h`x`w` to `out_h`x`out_w`, max-normalise.
pub fn finalize_map(raw: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let rectified: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
    let mut up = upsample_bilinear(&rectified, h, w, out_h, out_w);
    let max = up.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        up.iter_mut().for_each(|v| *v /= max);
    }
    up
}

fn input_of<T: Real>(image: &Image) -> Vec<T> {
    image.pixels().iter().map(|&v| T::of_f32(v)).collect()
}

fn build(raw: &[f64], rec: &ActivationRecord, image: &Image, method: CamMethod, objective: usize) -> SaliencyMap {
    SaliencyMap {
        height: image.height(),
        width: image.width(),
        values: finalize_map(raw, rec.height, rec.width, image.height(), image.width()),
        method,
        sample_id: String::new(),
        objective,
    }
}

/// Gradient-based CAM in the network's precision.
pub fn gradient_cam_in<T: Real>(
    net: &Network<'_, T>,
    image: &Image,
    objective: usize,
    layer: &str,
    method: CamMethod,
) -> Result<SaliencyMap> {
    let (_, rec) = net.record(&input_of::<T>(image), layer, objective)?;
    let raw = match method {
        CamMethod::GradCam => grad_cam_raw(&rec),
        CamMethod::HiResCam => hires_cam_raw(&rec),
        CamMethod::ScoreCam => {
            return Err(Error::Config("Score-CAM is not gradient based".into()));
        }
    };
    Ok(build(&raw, &rec, image, method, objective))
}

/// Per-channel Score-CAM intermediates.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCamDetail {
    /// `logit(masked) - logit(zero image)` per channel; `None` for constant
    /// channels, which are skipped.
    pub scores: Vec<Option<f64>>,
    /// Softmax weights over retained channels, 0 for skipped ones.
    pub weights: Vec<f64>,
    pub map: SaliencyMap,
}

/// Score-CAM, running the masked forwards in chunks of `batch` channels.
pub fn score_cam_in<T: Real>(
    net: &Network<'_, T>,
    image: &Image,
    objective: usize,
    layer: &str,
    batch: usize,
) -> Result<ScoreCamDetail> {
    let x = input_of::<T>(image);
    let (_, rec) = net.record(&x, layer, objective)?;
    let (h, w) = (image.height(), image.width());
    let zero = vec![T::zero(); h * w];
    let baseline = net.logits_raw(&zero)?[objective].as_f64();

    let masked_score = |k: usize| -> Result<Option<f64>> {
        let mut up = upsample_bilinear(rec.channel(k), rec.height, rec.width, h, w);
        let lo = up.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = up.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Ok(None);
        }
        up.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        let masked: Vec<T> = x
            .iter()
            .zip(&up)
            .map(|(&p, &m)| T::of_f64(p.as_f64() * m))
            .collect();
        Ok(Some(net.logits_raw(&masked)?[objective].as_f64() - baseline))
    };

    let channels: Vec<usize> = (0..rec.channels).collect();
    let mut scores = Vec::with_capacity(rec.channels);
    for chunk in channels.chunks(batch.max(1)) {
        if chunk.len() == 1 {
            scores.push(masked_score(chunk[0])?);
            continue;
        }
        let results: Vec<Result<Option<f64>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&k| scope.spawn(move || masked_score(k)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("score-cam worker panicked"))
                .collect()
        });
        for r in results {
            scores.push(r?);
        }
    }

    let max = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores
        .iter()
        .map(|s| s.map_or(0.0, |v| (v - max).exp()))
        .collect();
    let total: f64 = exp.iter().sum();
    let weights: Vec<f64> = exp
        .iter()
        .map(|&e| if total > 0.0 { e / total } else { 0.0 })
        .collect();
    let n = rec.height * rec.width;
    let mut raw = vec![0.0; n];
    for (k, &wk) in weights.iter().enumerate() {
        if wk > 0.0 {
            for (o, a) in raw.iter_mut().zip(rec.channel(k)) {
                *o += wk * a;
            }
        }
    }
    Ok(ScoreCamDetail {
        map: build(&raw, &rec, image, CamMethod::ScoreCam, objective),
        scores,
        weights,
    })
}

/// Default number of Score-CAM masked forwards issued together.
pub const SCORE_CAM_BATCH: usize = 8;

pub fn grad_cam(state: &ModelState, image: &Image, objective: usize, layer: &str) -> Result<SaliencyMap> {
    gradient_cam_in(&state.network(), image, objective, layer, CamMethod::GradCam)
}

pub fn hires_cam(state: &ModelState, image: &Image, objective: usize, layer: &str) -> Result<SaliencyMap> {
    gradient_cam_in(&state.network(), image, objective, layer, CamMethod::HiResCam)
}

pub fn score_cam(state: &ModelState, image: &Image, objective: usize, layer: &str) -> Result<SaliencyMap> {
    Ok(score_cam_in(&state.network(), image, objective, layer, SCORE_CAM_BATCH)?.map)
}

pub fn saliency(
    method: CamMethod,
    state: &ModelState,
    image: &Image,
    objective: usize,
    layer: &str,
) -> Result<SaliencyMap> {
    match method {
        CamMethod::GradCam => grad_cam(state, image, objective, layer),
        CamMethod::HiResCam => hires_cam(state, image, objective, layer),
        CamMethod::ScoreCam => score_cam(state, image, objective, layer),
    }
}
