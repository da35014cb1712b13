//! Small convolutional classifier with named layers and hand-written
//! backward passes.
//!
//! Architecture: a stack of conv blocks (3x3 conv, padding 1, ReLU,
//! optional 2x2 max-pool), then global average pooling and a linear head
//! producing one logit per objective. Activations recorded at a block are
//! the post-ReLU, pre-pool outputs.

pub(crate) mod checkpoint;
mod engine;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use self::engine::Real;
use self::engine::{
    conv_relu_backward, conv_relu_forward, im2col, maxpool_backward, maxpool_forward, BlockGeometry,
};
use crate::{balance::ObjectiveWeights, datagen::Image, util::rng_stream, Error, Result};

/// Alias resolving to the final conv block whatever its name.
pub const LAST_CONV: &str = "last_conv";
pub const HEAD: &str = "head";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub name: String,
    pub out_channels: usize,
    pub stride: usize,
    pub pool: bool,
}

impl ConvBlock {
    pub fn new(name: &str, out_channels: usize, pool: bool) -> Self {
        ConvBlock {
            name: name.into(),
            out_channels,
            stride: 1,
            pool,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `[height, width]` of the single-channel input.
    pub input: [usize; 2],
    pub blocks: Vec<ConvBlock>,
    pub objectives: usize,
}

impl ModelConfig {
    /// 8-16-32-32 channels, pooling after the first three blocks.
    pub fn desk_default(objectives: usize) -> Self {
        ModelConfig {
            input: [64, 64],
            blocks: vec![
                ConvBlock::new("conv1", 8, true),
                ConvBlock::new("conv2", 16, true),
                ConvBlock::new("conv3", 32, true),
                ConvBlock::new(LAST_CONV, 32, false),
            ],
            objectives,
        }
    }

    pub(crate) fn geometry(&self) -> Vec<BlockGeometry> {
        let (mut c, mut h, mut w) = (1, self.input[0], self.input[1]);
        self.blocks
            .iter()
            .map(|b| {
                let s = b.stride.max(1);
                let g = BlockGeometry {
                    cin: c,
                    hin: h,
                    win: w,
                    cout: b.out_channels,
                    stride: s,
                    hout: (h + 2 - 3) / s + 1,
                    wout: (w + 2 - 3) / s + 1,
                    pool: b.pool,
                };
                (h, w) = g.out_hw();
                c = b.out_channels;
                g
            })
            .collect()
    }

    /// Structural consistency: every layer has a positive size.
    pub fn validate_structure(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.blocks.is_empty() {
            return bad("at least one conv block is required".into());
        }
        if self.objectives == 0 {
            return bad("at least one objective is required".into());
        }
        if self.input[0] == 0 || self.input[1] == 0 {
            return bad("input size must be positive".into());
        }
        let mut names = std::collections::HashSet::new();
        for b in &self.blocks {
            if b.out_channels == 0 || b.stride == 0 {
                return bad(format!("block `{}` has zero channels or stride", b.name));
            }
            if b.name == HEAD || !names.insert(b.name.as_str()) {
                return bad(format!("block name `{}` is reserved or repeated", b.name));
            }
        }
        for (b, g) in self.blocks.iter().zip(self.geometry()) {
            let (h, w) = g.out_hw();
            if h == 0 || w == 0 {
                return bad(format!("block `{}` shrinks the feature map to nothing", b.name));
            }
        }
        Ok(())
    }

    /// Full check used by [`init_model`]: at least two blocks and a last
    /// conv layer with at least 4 channels on a grid of at least 4x4.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.blocks.len() < 2 {
            return Err(Error::Config("at least two conv blocks are required".into()));
        }
        let last = self.geometry().pop().expect("nonempty");
        if last.cout < 4 || last.hout < 4 || last.wout < 4 {
            return Err(Error::Config(format!(
                "last conv layer is {}x{}x{}; needs >= 4 channels on >= 4x4",
                last.cout, last.hout, last.wout
            )));
        }
        Ok(())
    }

    /// Index of the block called `name` (or the final block for
    /// [`LAST_CONV`]).
    pub fn layer_index(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.blocks.iter().position(|b| b.name == name) {
            return Ok(i);
        }
        if name == LAST_CONV && !self.blocks.is_empty() {
            return Ok(self.blocks.len() - 1);
        }
        Err(Error::UnknownLayer(name.into()))
    }

    pub fn last_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.out_channels)
    }

    /// Parameter names and shapes in storage order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = 1;
        for b in &self.blocks {
            out.push((format!("{}.weight", b.name), vec![b.out_channels, cin, 3, 3]));
            out.push((format!("{}.bias", b.name), vec![b.out_channels]));
            cin = b.out_channels;
        }
        out.push((format!("{HEAD}.weight"), vec![self.objectives, cin]));
        out.push((format!("{HEAD}.bias"), vec![self.objectives]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named parameter tensors in [`ModelConfig::parameter_layout`] order.
/// Also used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ParamSet {
            tensors: cfg
                .parameter_layout()
                .into_iter()
                .map(|(name, shape)| Tensor {
                    data: vec![T::zero(); shape.iter().product()],
                    name,
                    shape,
                })
                .collect(),
        }
    }

    pub fn zeros_like<U: Real>(other: &ParamSet<U>) -> Self {
        ParamSet {
            tensors: other
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    fn matches(&self, cfg: &ModelConfig) -> bool {
        let layout = cfg.parameter_layout();
        layout.len() == self.tensors.len()
            && layout
                .iter()
                .zip(&self.tensors)
                .all(|((n, s), t)| *n == t.name && *s == t.shape && t.data.len() == s.iter().product::<usize>())
    }
}

/// Provenance of a model's weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTag {
    Scratch,
    Pretrained,
    FineTune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub stage: StageTag,
    pub params: ParamSet<f32>,
}

impl ModelState {
    /// Wraps hand-set parameters. Only structural consistency is checked,
    /// so tiny fixtures below the [`ModelConfig::validate`] minimums are
    /// accepted.
    pub fn from_parameters(config: ModelConfig, stage: StageTag, params: ParamSet<f32>) -> Result<Self> {
        config.validate_structure()?;
        if !params.matches(&config) {
            return Err(Error::Shape("parameter tensors do not match the config".into()));
        }
        if !params.all_finite() {
            return Err(Error::Config("parameters must be finite".into()));
        }
        Ok(ModelState {
            config,
            stage,
            params,
        })
    }

    pub fn network(&self) -> Network<'_, f32> {
        Network::new(&self.config, &self.params)
    }

    pub fn backbone_equals(&self, other: &ModelState) -> bool {
        let n = 2 * self.config.blocks.len();
        self.config.blocks == other.config.blocks
            && self.params.tensors[..n] == other.params.tensors[..n]
    }
}

fn init_tensor(t: &mut Tensor<f32>, bound: f32, rng: &mut impl Rng) {
    for v in &mut t.data {
        *v = rng.gen_range(-bound..=bound);
    }
}

const HEAD_INIT_STREAM: u64 = 0xbeef;

fn init_head(params: &mut ParamSet<f32>, cfg: &ModelConfig, seed: u64) {
    let mut rng = rng_stream(seed, HEAD_INIT_STREAM);
    let n = params.tensors.len();
    let bound = 1.0 / (cfg.last_channels() as f32).sqrt();
    init_tensor(&mut params.tensors[n - 2], bound, &mut rng);
    params.tensors[n - 1].data.iter_mut().for_each(|v| *v = 0.0);
}

/// Seeded initialisation: conv weights uniform in `±sqrt(6 / fan_in)`, head
/// weights uniform in `±1/sqrt(C)`, zero biases.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelState> {
    config.validate()?;
    let mut params = ParamSet::<f32>::zeros(config);
    let mut rng = rng_stream(seed, 0);
    for (i, g) in config.geometry().iter().enumerate() {
        let bound = (6.0 / g.k() as f32).sqrt();
        init_tensor(&mut params.tensors[2 * i], bound, &mut rng);
    }
    init_head(&mut params, config, seed);
    Ok(ModelState {
        config: config.clone(),
        stage: StageTag::Scratch,
        params,
    })
}

/// Replaces the head with a freshly initialised one for `objectives`
/// outputs; every backbone tensor is kept bit-exactly.
pub fn swap_head(state: &ModelState, objectives: usize, seed: u64) -> Result<ModelState> {
    if objectives == 0 {
        return Err(Error::Config("new head needs at least one objective".into()));
    }
    let mut config = state.config.clone();
    config.objectives = objectives;
    let mut params = ParamSet::<f32>::zeros(&config);
    let n = 2 * config.blocks.len();
    params.tensors[..n].clone_from_slice(&state.params.tensors[..n]);
    init_head(&mut params, &config, seed);
    Ok(ModelState {
        config,
        stage: StageTag::FineTune,
        params,
    })
}

/// Activations of one layer for one input and the gradient of a chosen
/// logit with respect to them, both `C x h x w` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub activations: Vec<f64>,
    pub gradients: Vec<f64>,
}

impl ActivationRecord {
    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.activations[k * n..(k + 1) * n]
    }

    pub fn channel_grad(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.gradients[k * n..(k + 1) * n]
    }
}

/// Cached intermediate values of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace<T> {
    cols: Vec<Vec<T>>,
    acts: Vec<Vec<T>>,
    pooled: Vec<Vec<T>>,
    argmax: Vec<Vec<u32>>,
    gap: Vec<T>,
    pub logits: Vec<T>,
}

/// Borrowed view of a config and parameter set for computation in `T`.
pub struct Network<'a, T> {
    cfg: &'a ModelConfig,
    params: &'a ParamSet<T>,
    geometry: Vec<BlockGeometry>,
}

impl<'a, T: Real> Network<'a, T> {
    pub fn new(cfg: &'a ModelConfig, params: &'a ParamSet<T>) -> Self {
        Network {
            cfg,
            params,
            geometry: cfg.geometry(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    fn check_input(&self, pixels: usize, h: usize, w: usize) -> Result<()> {
        let [ih, iw] = self.cfg.input;
        if h != ih || w != iw || pixels != h * w {
            return Err(Error::Shape(format!("input is {h}x{w}, model expects {ih}x{iw}")));
        }
        Ok(())
    }

    /// Forward pass over a row-major input plane, keeping what backward
    /// needs.
    pub fn forward_trace(&self, input: &[T]) -> Trace<T> {
        let nb = self.geometry.len();
        let mut trace = Trace {
            cols: vec![Vec::new(); nb],
            acts: vec![Vec::new(); nb],
            pooled: vec![Vec::new(); nb],
            argmax: vec![Vec::new(); nb],
            gap: Vec::new(),
            logits: Vec::new(),
        };
        for (i, g) in self.geometry.iter().enumerate() {
            let x: &[T] = if i == 0 {
                input
            } else if self.geometry[i - 1].pool {
                &trace.pooled[i - 1]
            } else {
                &trace.acts[i - 1]
            };
            let mut col = std::mem::take(&mut trace.cols[i]);
            im2col(x, g, &mut col);
            let w = &self.params.tensors[2 * i].data;
            let b = &self.params.tensors[2 * i + 1].data;
            conv_relu_forward(&col, g, w, b, &mut trace.acts[i]);
            trace.cols[i] = col;
            if g.pool {
                let (mut out, mut arg) = (Vec::new(), Vec::new());
                maxpool_forward(&trace.acts[i], g.cout, g.hout, g.wout, &mut out, &mut arg);
                trace.pooled[i] = out;
                trace.argmax[i] = arg;
            }
        }
        let last = self.geometry[nb - 1];
        let feat: &[T] = if last.pool { &trace.pooled[nb - 1] } else { &trace.acts[nb - 1] };
        let (gap, logits) = self.head(feat);
        trace.gap = gap;
        trace.logits = logits;
        trace
    }

    /// Global average pooling of the final feature map and the linear head.
    fn head(&self, feat: &[T]) -> (Vec<T>, Vec<T>) {
        let nb = self.geometry.len();
        let last = self.geometry[nb - 1];
        let (fh, fw) = last.out_hw();
        let n = T::of_f64((fh * fw) as f64);
        let gap: Vec<T> = feat
            .chunks(fh * fw)
            .map(|ch| ch.iter().copied().sum::<T>() / n)
            .collect();
        let hw = &self.params.tensors[2 * nb].data;
        let hb = &self.params.tensors[2 * nb + 1].data;
        let c = last.cout;
        let logits = (0..self.cfg.objectives)
            .map(|m| {
                hb[m]
                    + hw[m * c..(m + 1) * c]
                        .iter()
                        .zip(&gap)
                        .map(|(a, b)| *a * *b)
                        .sum::<T>()
            })
            .collect();
        (gap, logits)
    }

    /// Logits computed from given post-ReLU activations of `layer`, running
    /// only the part of the network after it.
    pub fn logits_from(&self, layer: &str, activations: &[T]) -> Result<Vec<T>> {
        let li = self.cfg.layer_index(layer)?;
        let g = self.geometry[li];
        if activations.len() != g.cout * g.conv_pixels() {
            return Err(Error::LengthMismatch {
                what: "layer activations",
                expected: g.cout * g.conv_pixels(),
                got: activations.len(),
            });
        }
        let pool = |g: &BlockGeometry, acts: Vec<T>| {
            if g.pool {
                let (mut out, mut arg) = (Vec::new(), Vec::new());
                maxpool_forward(&acts, g.cout, g.hout, g.wout, &mut out, &mut arg);
                out
            } else {
                acts
            }
        };
        let mut x = pool(&g, activations.to_vec());
        let mut col = Vec::new();
        for (i, g) in self.geometry.iter().enumerate().skip(li + 1) {
            im2col(&x, g, &mut col);
            let mut acts = Vec::new();
            conv_relu_forward(&col, g, &self.params.tensors[2 * i].data, &self.params.tensors[2 * i + 1].data, &mut acts);
            x = pool(g, acts);
        }
        Ok(self.head(&x).1)
    }

    /// Backpropagates `dlogits` through the network.
    ///
    /// Parameter gradients accumulate into `grads` when given. When
    /// `record` names a block, the gradient with respect to that block's
    /// post-ReLU activations is returned and propagation stops there.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        dlogits: &[T],
        mut grads: Option<&mut ParamSet<T>>,
        record: Option<usize>,
    ) -> Option<Vec<T>> {
        let nb = self.geometry.len();
        let last = self.geometry[nb - 1];
        let c = last.cout;
        let hw = &self.params.tensors[2 * nb].data;
        if let Some(g) = grads.as_deref_mut() {
            let dw = &mut g.tensors[2 * nb].data;
            for (m, &dz) in dlogits.iter().enumerate() {
                for (k, &f) in trace.gap.iter().enumerate() {
                    dw[m * c + k] = dw[m * c + k] + dz * f;
                }
            }
            let db = &mut g.tensors[2 * nb + 1].data;
            for (d, &dz) in db.iter_mut().zip(dlogits) {
                *d = *d + dz;
            }
        }
        let (fh, fw) = last.out_hw();
        let n = T::of_f64((fh * fw) as f64);
        // gradient with respect to the final block's output feature map
        let mut dfeat: Vec<T> = Vec::with_capacity(c * fh * fw);
        for k in 0..c {
            let dg = dlogits
                .iter()
                .enumerate()
                .map(|(m, &dz)| hw[m * c + k] * dz)
                .sum::<T>()
                / n;
            dfeat.extend(std::iter::repeat_n(dg, fh * fw));
        }

        let stop = record.unwrap_or(0);
        let mut dcol = Vec::new();
        for i in (stop..nb).rev() {
            let g = self.geometry[i];
            let mut dact = if g.pool {
                let mut d = vec![T::zero(); g.cout * g.conv_pixels()];
                maxpool_backward(&dfeat, &trace.argmax[i], &mut d);
                d
            } else {
                dfeat
            };
            if record == Some(i) {
                return Some(dact);
            }
            let w = &self.params.tensors[2 * i].data;
            let layer_grads = grads.as_deref_mut().map(|gs| {
                let (lo, hi) = gs.tensors.split_at_mut(2 * i + 1);
                (lo[2 * i].data.as_mut_slice(), hi[0].data.as_mut_slice())
            });
            let mut dinput = vec![T::zero(); if i > 0 { g.cin * g.hin * g.win } else { 0 }];
            let want_input = i > 0;
            conv_relu_backward(
                &trace.cols[i],
                &trace.acts[i],
                &mut dact,
                &g,
                w,
                layer_grads,
                want_input.then_some((dinput.as_mut_slice(), &mut dcol)),
            );
            dfeat = dinput;
        }
        None
    }

    pub fn logits(&self, image: &Image) -> Result<Vec<T>> {
        self.check_input(image.pixels().len(), image.height(), image.width())?;
        let x: Vec<T> = image.pixels().iter().map(|&v| T::of_f32(v)).collect();
        Ok(self.forward_trace(&x).logits)
    }

    pub fn logits_raw(&self, input: &[T]) -> Result<Vec<T>> {
        let [h, w] = self.cfg.input;
        self.check_input(input.len(), h, w)?;
        Ok(self.forward_trace(input).logits)
    }

    /// Weighted BCE of one sample, accumulating parameter gradients of that
    /// loss into `grads`.
    pub fn loss_and_grad(
        &self,
        input: &[T],
        targets: &[u8],
        weights: &ObjectiveWeights,
        grads: &mut ParamSet<T>,
    ) -> Result<f64> {
        let [h, w] = self.cfg.input;
        self.check_input(input.len(), h, w)?;
        let trace = self.forward_trace(input);
        let z: Vec<f64> = trace.logits.iter().map(|v| v.as_f64()).collect();
        let (loss, dz) = crate::balance::weighted_bce_logits(&z, targets, weights)?;
        let dz: Vec<T> = dz.into_iter().map(T::of_f64).collect();
        self.backward(&trace, &dz, Some(grads), None);
        Ok(loss)
    }

    pub fn loss(&self, input: &[T], targets: &[u8], weights: &ObjectiveWeights) -> Result<f64> {
        let z: Vec<f64> = self.logits_raw(input)?.iter().map(|v| v.as_f64()).collect();
        let probs: Vec<f64> = z.iter().map(|&v| crate::balance::sigmoid(v)).collect();
        crate::balance::weighted_bce(&probs, targets, weights)
    }

    /// Activations at `layer` and the gradient of `objective`'s pre-sigmoid
    /// logit with respect to them.
    pub fn record(&self, input: &[T], layer: &str, objective: usize) -> Result<(Vec<T>, ActivationRecord)> {
        let [h, w] = self.cfg.input;
        self.check_input(input.len(), h, w)?;
        let li = self.cfg.layer_index(layer)?;
        if objective >= self.cfg.objectives {
            return Err(Error::UnknownObjective {
                index: objective,
                count: self.cfg.objectives,
            });
        }
        let trace = self.forward_trace(input);
        let mut dz = vec![T::zero(); self.cfg.objectives];
        dz[objective] = T::one();
        let grad = self
            .backward(&trace, &dz, None, Some(li))
            .expect("record index is within the network");
        let g = self.geometry[li];
        let rec = ActivationRecord {
            channels: g.cout,
            height: g.hout,
            width: g.wout,
            activations: trace.acts[li].iter().map(|v| v.as_f64()).collect(),
            gradients: grad.iter().map(|v| v.as_f64()).collect(),
        };
        Ok((trace.logits, rec))
    }
}

fn to_probabilities<T: Real>(logits: &[T]) -> Vec<f64> {
    logits
        .iter()
        .map(|z| crate::balance::sigmoid(z.as_f64()))
        .collect()
}

/// Per-objective probabilities `sigmoid(logit_i)`.
pub fn forward(state: &ModelState, image: &Image) -> Result<Vec<f64>> {
    Ok(to_probabilities(&state.network().logits(image)?))
}

/// Probabilities plus the activation record at `layer` for `objective`.
pub fn forward_with_record(
    state: &ModelState,
    image: &Image,
    layer: &str,
    objective: usize,
) -> Result<(Vec<f64>, ActivationRecord)> {
    let net = state.network();
    net.check_input(image.pixels().len(), image.height(), image.width())?;
    let (logits, rec) = net.record(image.pixels(), layer, objective)?;
    Ok((to_probabilities(&logits), rec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input: [8, 8],
            blocks: vec![ConvBlock::new("conv1", 2, true), ConvBlock::new(LAST_CONV, 4, false)],
            objectives: 2,
        }
    }

    fn image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rng_stream(seed, 1);
        Image::new(h, w, (0..h * w).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn default_layout_and_size() {
        let cfg = ModelConfig::desk_default(1);
        cfg.validate().unwrap();
        let g = cfg.geometry();
        assert_eq!((g[3].hout, g[3].wout, g[3].cout), (8, 8, 32));
        let names: Vec<String> = cfg.parameter_layout().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "conv1.weight");
        assert_eq!(names[7], "last_conv.bias");
        assert_eq!(names[9], "head.bias");
    }

    #[test]
    fn config_minimums_enforced() {
        let mut cfg = tiny_config();
        cfg.blocks.truncate(1);
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.blocks[1].out_channels = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.input = [6, 6];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let cfg = tiny_config();
        let a = init_model(&cfg, 3).unwrap();
        assert_eq!(a, init_model(&cfg, 3).unwrap());
        assert_ne!(a.params, init_model(&cfg, 4).unwrap().params);
        assert_eq!(a.stage, StageTag::Scratch);
    }

    #[test]
    fn zero_head_gives_half() {
        let mut s = init_model(&tiny_config(), 1).unwrap();
        s.params.get_mut("head.weight").unwrap().data.fill(0.0);
        let p = forward(&s, &image(8, 8, 2)).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let s = init_model(&tiny_config(), 1).unwrap();
        assert!(matches!(forward(&s, &image(7, 8, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn unknown_layer_and_objective() {
        let s = init_model(&tiny_config(), 1).unwrap();
        let img = image(8, 8, 2);
        assert!(matches!(
            forward_with_record(&s, &img, "conv9", 0),
            Err(Error::UnknownLayer(_))
        ));
        assert!(matches!(
            forward_with_record(&s, &img, LAST_CONV, 2),
            Err(Error::UnknownObjective { .. })
        ));
    }

    #[test]
    fn gap_head_gradient_is_uniform() {
        let s = init_model(&tiny_config(), 5).unwrap();
        let (_, rec) = forward_with_record(&s, &image(8, 8, 6), LAST_CONV, 1).unwrap();
        let hw = &s.params.get("head.weight").unwrap().data;
        let n = (rec.height * rec.width) as f64;
        for k in 0..rec.channels {
            let expected = f64::from(hw[4 + k]) / n;
            for &g in rec.channel_grad(k) {
                assert!((g - expected).abs() < 1e-9, "{g} vs {expected}");
            }
        }
    }

    #[test]
    fn swap_head_preserves_backbone() {
        let s = init_model(&ModelConfig::desk_default(8), 1).unwrap();
        let t = swap_head(&s, 1, 2).unwrap();
        assert!(s.backbone_equals(&t));
        assert_eq!(t.config.objectives, 1);
        assert_eq!(t.stage, StageTag::FineTune);
        let same = swap_head(&s, 8, 9).unwrap();
        assert!(s.backbone_equals(&same));
        assert_ne!(same.params, s.params);
        assert!(swap_head(&s, 0, 1).is_err());
    }
}
