//! Static and spatio-temporal gaze regressors.
//!
//! All variants share the residual backbone: a stride-2 3x3 stem followed by
//! three stages of two basic blocks and adaptive average pooling to a 4x4
//! grid, giving a `64 * 4 * 4 = 1024` feature vector per frame. Static
//! variants regress gaze from one frame's features; `S1_LSTM` runs the
//! backbone on every frame of a window, feeds the features to an LSTM, and
//! regresses the gaze of the last frame from its final hidden state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    relu_backward_inplace, relu_inplace, AdaptiveAvgPool2d, BatchNorm2d, Conv2d, Lstm, Mlp, Module,
    Param, Real, Tensor,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelKind {
    Static1,
    Static2,
    S1Lstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Static1 => "STATIC1",
            ModelKind::Static2 => "STATIC2",
            ModelKind::S1Lstm => "S1_LSTM",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '+'], "_").as_str() {
            "STATIC1" | "S1" => Ok(ModelKind::Static1),
            "STATIC2" | "S2" => Ok(ModelKind::Static2),
            "S1_LSTM" => Ok(ModelKind::S1Lstm),
            _ => Err(Error::invalid(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Model kind plus window length (1 for the static kinds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: ModelKind,
    pub window: usize,
}

impl ModelVariant {
    pub const STATIC1: ModelVariant = ModelVariant {
        kind: ModelKind::Static1,
        window: 1,
    };
    pub const STATIC2: ModelVariant = ModelVariant {
        kind: ModelKind::Static2,
        window: 1,
    };

    pub fn temporal(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("window length must be at least 1"));
        }
        Ok(Self {
            kind: ModelKind::S1Lstm,
            window,
        })
    }

    pub fn is_temporal(&self) -> bool {
        self.kind == ModelKind::S1Lstm
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Static1 | ModelKind::Static2 if self.window != 1 => {
                Err(Error::invalid(format!("{} requires window 1, got {}", self.kind, self.window)))
            }
            _ if self.window == 0 => Err(Error::invalid("window length must be at least 1")),
            _ => Ok(()),
        }
    }

    /// Short label used in reports, e.g. `S1_LSTM10`.
    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::S1Lstm => format!("S1_LSTM{}", self.window),
            k => k.to_string(),
        }
    }
}

/// Layer sizes. [`ModelConfig::default`] is the full-size network; tests use
/// shrunken configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// output channels of the three residual stages; the stem uses the first
    pub stage_channels: [usize; 3],
    pub stage_strides: [usize; 3],
    pub blocks_per_stage: usize,
    pub pool_size: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub static2_hidden: usize,
    /// the final linear layer predicts gaze in units of this many degrees
    #[serde(default = "default_output_scale")]
    pub output_scale_deg: f64,
}

fn default_output_scale() -> f64 {
    20.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_height: 100,
            input_width: 160,
            stage_channels: [16, 32, 64],
            stage_strides: [1, 2, 2],
            blocks_per_stage: 2,
            pool_size: 4,
            lstm_hidden: 32,
            head_hidden: 32,
            static2_hidden: 128,
            output_scale_deg: default_output_scale(),
        }
    }
}

impl ModelConfig {
    pub fn feature_len(&self) -> usize {
        self.stage_channels[2] * self.pool_size * self.pool_size
    }

    /// Number of 3x3 convolutions in the backbone (projection shortcuts are
    /// 1x1 and not included).
    pub fn conv3x3_count(&self) -> usize {
        1 + 3 * self.blocks_per_stage * 2
    }

    fn head_widths(&self, kind: ModelKind) -> Vec<usize> {
        match kind {
            ModelKind::Static1 => vec![self.feature_len(), self.head_hidden, 2],
            ModelKind::Static2 => vec![self.feature_len(), self.head_hidden, self.static2_hidden, 2],
            ModelKind::S1Lstm => vec![self.lstm_hidden, self.head_hidden, 2],
        }
    }
}

struct Projection<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

/// Two 3x3 convolutions with batch norm and a residual connection.
pub struct BasicBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    projection: Option<Projection<T>>,
    mid: Option<Tensor<T>>,
    out: Option<Tensor<T>>,
}

impl<T: Real> BasicBlock<T> {
    fn new(name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let projection = (stride != 1 || cin != cout).then(|| Projection {
            conv: Conv2d::new(&format!("{name}.proj.conv"), cin, cout, 1, stride, 0),
            bn: BatchNorm2d::new(&format!("{name}.proj.bn"), cout),
        });
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, stride, 1),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), cout),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), cout),
            projection,
            mid: None,
            out: None,
        }
    }

    fn init(&mut self, rng: &mut impl rand::Rng) {
        self.conv1.init(rng);
        self.conv2.init(rng);
        if let Some(p) = &mut self.projection {
            p.conv.init(rng);
        }
    }

    fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let mut h = self.bn1.forward(&self.conv1.forward(x, train)?, train)?;
        relu_inplace(&mut h.data);
        let mut y = self.bn2.forward(&self.conv2.forward(&h, train)?, train)?;
        match &mut self.projection {
            Some(p) => {
                let s = p.bn.forward(&p.conv.forward(x, train)?, train)?;
                y.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a += *b);
            }
            None => y.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a += *b),
        }
        relu_inplace(&mut y.data);
        if train {
            self.mid = Some(h);
            self.out = Some(y.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.out.take().ok_or_else(|| Error::shape("block backward without forward"))?;
        let mid = self.mid.take().ok_or_else(|| Error::shape("block backward without forward"))?;
        let mut d = dy.clone();
        relu_backward_inplace(&mut d.data, &out.data);
        let mut dh = self.conv2.backward(&self.bn2.backward(&d)?)?;
        relu_backward_inplace(&mut dh.data, &mid.data);
        let mut dx = self.conv1.backward(&self.bn1.backward(&dh)?)?;
        let skip = match &mut self.projection {
            Some(p) => p.conv.backward(&p.bn.backward(&d)?)?,
            None => d,
        };
        dx.data.iter_mut().zip(&skip.data).for_each(|(a, b)| *a += *b);
        Ok(dx)
    }
}

impl<T: Real> Module<T> for BasicBlock<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        if let Some(p) = &self.projection {
            p.conv.visit_params(f);
            p.bn.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_params_mut(f);
        self.bn1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
        if let Some(p) = &mut self.projection {
            p.conv.visit_params_mut(f);
            p.bn.visit_params_mut(f);
        }
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        self.bn1.visit_buffers_mut(f);
        self.bn2.visit_buffers_mut(f);
        if let Some(p) = &mut self.projection {
            p.bn.visit_buffers_mut(f);
        }
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Vec<T>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
        if let Some(p) = &self.projection {
            p.bn.visit_buffers(f);
        }
    }
}

/// The per-frame feature extractor.
pub struct Backbone<T> {
    stem_conv: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    blocks: Vec<BasicBlock<T>>,
    pool: AdaptiveAvgPool2d,
    stem_out: Option<Tensor<T>>,
}

impl<T: Real> Backbone<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c0 = cfg.stage_channels[0];
        let mut blocks = Vec::new();
        let mut cin = c0;
        for (stage, (&cout, &stride)) in cfg.stage_channels.iter().zip(&cfg.stage_strides).enumerate() {
            for b in 0..cfg.blocks_per_stage {
                let s = if b == 0 { stride } else { 1 };
                blocks.push(BasicBlock::new(&format!("backbone.layer{}.{b}", stage + 1), cin, cout, s));
                cin = cout;
            }
        }
        Self {
            stem_conv: Conv2d::new("backbone.stem.conv", 1, c0, 3, 2, 1),
            stem_bn: BatchNorm2d::new("backbone.stem.bn", c0),
            blocks,
            pool: AdaptiveAvgPool2d::new(cfg.pool_size),
            stem_out: None,
        }
    }

    fn init(&mut self, rng: &mut impl rand::Rng) {
        self.stem_conv.init(rng);
        self.blocks.iter_mut().for_each(|b| b.init(rng));
    }

    /// `(N, 1, H, W)` images in `[0, 1]` to `(N, feature_len)` features.
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (_, c, _, _) = x.dims4()?;
        if c != 1 {
            return Err(Error::shape(format!("backbone expects single-channel images, got {c} channels")));
        }
        let mut h = self.stem_bn.forward(&self.stem_conv.forward(x, train)?, train)?;
        relu_inplace(&mut h.data);
        if train {
            self.stem_out = Some(h.clone());
        }
        for block in &mut self.blocks {
            h = block.forward(&h, train)?;
        }
        self.pool.forward(&h)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.pool.backward(dy)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        let stem_out = self.stem_out.take().ok_or_else(|| Error::shape("backbone backward without forward"))?;
        relu_backward_inplace(&mut g.data, &stem_out.data);
        self.stem_conv.backward(&self.stem_bn.backward(&g)?)
    }

    pub fn conv3x3_count(&self) -> usize {
        let mut n = usize::from(self.stem_conv.kernel == 3);
        for b in &self.blocks {
            n += usize::from(b.conv1.kernel == 3) + usize::from(b.conv2.kernel == 3);
        }
        n
    }
}

impl<T: Real> Module<T> for Backbone<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.stem_conv.visit_params(f);
        self.stem_bn.visit_params(f);
        self.blocks.iter().for_each(|b| b.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem_conv.visit_params_mut(f);
        self.stem_bn.visit_params_mut(f);
        self.blocks.iter_mut().for_each(|b| b.visit_params_mut(f));
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        self.stem_bn.visit_buffers_mut(f);
        self.blocks.iter_mut().for_each(|b| b.visit_buffers_mut(f));
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Vec<T>)) {
        self.stem_bn.visit_buffers(f);
        self.blocks.iter().for_each(|b| b.visit_buffers(f));
    }
}

/// Which frames (rows of the frame tensor) make up each window of a batch.
///
/// `indices[b * window + t]` is frame `t` of window `b`; the last entry of
/// each window is the frame whose gaze is regressed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowBatch {
    pub window: usize,
    pub indices: Vec<usize>,
}

impl WindowBatch {
    /// One single-frame window per frame.
    pub fn per_frame(n: usize) -> Self {
        Self {
            window: 1,
            indices: (0..n).collect(),
        }
    }

    /// All stride-1 windows of `window` frames over `n` contiguous frames.
    pub fn sliding(n: usize, window: usize) -> Self {
        let mut indices = Vec::new();
        if window >= 1 && window <= n {
            for start in 0..=n - window {
                indices.extend(start..start + window);
            }
        }
        Self { window, indices }
    }

    pub fn len(&self) -> usize {
        if self.window == 0 {
            0
        } else {
            self.indices.len() / self.window
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A gaze regressor of any variant.
pub struct GazeModel<T> {
    pub variant: ModelVariant,
    pub config: ModelConfig,
    pub backbone: Backbone<T>,
    pub lstm: Option<Lstm<T>>,
    pub head: Mlp<T>,
    cache: Option<(usize, WindowBatch)>,
}

/// Builds a freshly initialized model: conv and FC weights uniform in
/// `±1/sqrt(fan_in)`, LSTM input weights Xavier-uniform, recurrent weights
/// orthogonal, biases zero. Deterministic in `seed`.
pub fn init_parameters<T: Real>(variant: ModelVariant, config: &ModelConfig, seed: u64) -> Result<GazeModel<T>> {
    let mut model = GazeModel::new(variant, config.clone())?;
    model.backbone.init(&mut seed::rng(seed, &[seed::INIT, 0]));
    model.init_temporal_and_head(seed);
    Ok(model)
}

/// Exact trainable parameter count of a variant.
pub fn count_parameters(variant: ModelVariant, config: &ModelConfig) -> Result<usize> {
    Ok(GazeModel::<f32>::new(variant, config.clone())?.param_count())
}

impl<T: Real> GazeModel<T> {
    /// Zero-initialized model of the given shape.
    pub fn new(variant: ModelVariant, config: ModelConfig) -> Result<Self> {
        variant.validate()?;
        if !(config.output_scale_deg.is_finite() && config.output_scale_deg > 0.0) {
            return Err(Error::invalid("output scale must be positive"));
        }
        let lstm = variant
            .is_temporal()
            .then(|| Lstm::new("lstm", config.feature_len(), config.lstm_hidden));
        Ok(Self {
            variant,
            backbone: Backbone::new(&config),
            lstm,
            head: Mlp::new("head", &config.head_widths(variant.kind)),
            config,
            cache: None,
        })
    }

    /// Fresh initialization of the recurrent module and regression head.
    pub fn init_temporal_and_head(&mut self, seed: u64) {
        if let Some(lstm) = &mut self.lstm {
            lstm.init(&mut seed::rng(seed, &[seed::INIT, 1]));
        }
        self.head.init(&mut seed::rng(seed, &[seed::INIT, 2]));
    }

    /// Gaze estimates `(B, 2)` (yaw, pitch in degrees) for each window.
    ///
    /// `frames` is `(N, 1, H, W)`; `batch` indexes into its rows.
    pub fn forward(&mut self, frames: &Tensor<T>, batch: &WindowBatch, train: bool) -> Result<Tensor<T>> {
        let (n, _, _, _) = frames.dims4()?;
        if batch.window != self.variant.window {
            return Err(Error::shape(format!(
                "{} expects windows of {} frames, got {}",
                self.variant.label(),
                self.variant.window,
                batch.window
            )));
        }
        if batch.is_empty() || batch.indices.iter().any(|&i| i >= n) {
            return Err(Error::shape("window indices out of range or empty batch"));
        }
        let feats = self.backbone.forward(frames, train)?;
        let f = feats.dims[1];
        let b = batch.len();
        let gather = |t: usize| -> Tensor<T> {
            let mut x = Tensor::zeros(&[b, f]);
            for r in 0..b {
                let src = batch.indices[r * batch.window + t];
                x.data[r * f..(r + 1) * f].copy_from_slice(feats.row(src));
            }
            x
        };
        let out = match &mut self.lstm {
            None => {
                let x = gather(0);
                self.head.forward(&x, train)?
            }
            Some(lstm) => {
                let xs: Vec<Tensor<T>> = (0..batch.window).map(gather).collect();
                let h = lstm.forward(&xs, train)?;
                self.head.forward(&h, train)?
            }
        };
        self.cache = if train { Some((n, batch.clone())) } else { None };
        Ok(out.scaled(T::lit(self.config.output_scale_deg)))
    }

    /// Accumulates parameter gradients for `dout = dL/d(output)` and
    /// returns the gradient with respect to the input frames.
    pub fn backward(&mut self, dout: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, batch) = self.cache.take().ok_or_else(|| Error::shape("backward without training forward"))?;
        let f = self.config.feature_len();
        let dh = self.head.backward(&dout.scaled(T::lit(self.config.output_scale_deg)))?;
        let per_step = match &mut self.lstm {
            None => vec![dh],
            Some(lstm) => lstm.backward(&dh)?,
        };
        let mut dfeats = Tensor::zeros(&[n, f]);
        for (t, dx) in per_step.iter().enumerate() {
            for r in 0..batch.len() {
                let dst = batch.indices[r * batch.window + t];
                for (a, b) in dfeats.data[dst * f..(dst + 1) * f].iter_mut().zip(dx.row(r)) {
                    *a += *b;
                }
            }
        }
        self.backbone.backward(&dfeats)
    }

    /// Eval-mode estimates for every frame of a contiguous run; entry `i` is
    /// `None` when fewer than `window` frames end at `i`.
    pub fn predict_frames(&mut self, frames: &[&[u8]]) -> Result<Vec<Option<[f64; 2]>>> {
        let s = self.variant.window;
        let mut out = vec![None; frames.len()];
        if frames.len() < s {
            return Ok(out);
        }
        let x = frames_to_tensor::<T>(frames, self.config.input_height, self.config.input_width)?;
        let y = self.forward(&x, &WindowBatch::sliding(frames.len(), s), false)?;
        for (r, slot) in out[s - 1..].iter_mut().enumerate() {
            let row = y.row(r);
            *slot = Some([row[0].to_f64().unwrap_or(f64::NAN), row[1].to_f64().unwrap_or(f64::NAN)]);
        }
        Ok(out)
    }

    /// Named copies of every parameter and buffer, in a fixed order.
    pub fn state(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push((p.name.clone(), p.dims.clone(), p.value.clone())));
        self.visit_buffers(&mut |name, v| out.push((name.to_string(), vec![v.len()], v.clone())));
        out
    }

    /// Overwrites parameters and buffers whose names start with `prefix`
    /// from `entries`; every matching tensor must be present.
    pub fn load_state(&mut self, entries: &[(String, Vec<usize>, Vec<T>)], prefix: &str) -> Result<usize> {
        let lookup: std::collections::HashMap<&str, &Vec<T>> =
            entries.iter().map(|(n, _, v)| (n.as_str(), v)).collect();
        let mut missing = Vec::new();
        let mut loaded = 0;
        let mut copy = |name: &str, dst: &mut Vec<T>| {
            if !name.starts_with(prefix) {
                return;
            }
            match lookup.get(name) {
                Some(src) if src.len() == dst.len() => {
                    dst.copy_from_slice(src);
                    loaded += 1;
                }
                _ => missing.push(name.to_string()),
            }
        };
        self.visit_params_mut(&mut |p| {
            let name = p.name.clone();
            copy(&name, &mut p.value)
        });
        self.visit_buffers_mut(&mut |name, v| copy(name, v));
        if !missing.is_empty() {
            return Err(Error::Data(format!("checkpoint lacks or mis-sizes tensors: {}", missing.join(", "))));
        }
        Ok(loaded)
    }
}

impl<T: Real> Module<T> for GazeModel<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.backbone.visit_params(f);
        if let Some(l) = &self.lstm {
            l.visit_params(f);
        }
        self.head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.backbone.visit_params_mut(f);
        if let Some(l) = &mut self.lstm {
            l.visit_params_mut(f);
        }
        self.head.visit_params_mut(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        self.backbone.visit_buffers_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Vec<T>)) {
        self.backbone.visit_buffers(f);
    }
}

/// Packs 8-bit frames into an `(N, 1, H, W)` tensor scaled to `[0, 1]`.
pub fn frames_to_tensor<T: Real>(frames: &[&[u8]], height: usize, width: usize) -> Result<Tensor<T>> {
    let px = height * width;
    let mut data = Vec::with_capacity(frames.len() * px);
    let scale = T::lit(1.0 / 255.0);
    for f in frames {
        if f.len() != px {
            return Err(Error::shape(format!("frame has {} pixels, expected {px}", f.len())));
        }
        data.extend(f.iter().map(|&v| T::lit(v as f64) * scale));
    }
    Tensor::from_vec(&[frames.len(), 1, height, width], data)
}
