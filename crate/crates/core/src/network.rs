//! The CNN-LSTM classifier: an AlexNet-style convolutional stack applied to
//! every window with shared weights, global average pooling, an LSTM across
//! windows, and a dense head. The temporal stage either flattens all hidden
//! states or compresses them with single-headed additive attention.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    conv_out_dim, glorot_uniform, he_uniform, lstm_cell, Graph, LrnParams, LstmCellParams, ParamId, Parameters, Tensor,
    Var,
};
use crate::error::{Error, Result};
use crate::features::{FeatureTensor, WindowPlan, CHANNELS};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    #[serde(default)]
    pub lrn: bool,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

impl ConvLayerSpec {
    const fn new(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self { out_channels, kernel, stride, pad, lrn: false, pool: None }
    }

    const fn with_lrn_pool(mut self) -> Self {
        self.lrn = true;
        self.pool = Some(PoolSpec { window: 3, stride: 2 });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Concatenate all `T` hidden states into a `T * H` vector.
    #[default]
    Flatten,
    /// Softmax-weighted average of the hidden states, an `H` vector.
    Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub input_side: usize,
    pub conv: Vec<ConvLayerSpec>,
    pub lrn: LrnParams,
    pub lstm_hidden: usize,
    pub windows: usize,
    pub head_l1: usize,
    pub head_l2: usize,
    pub classes: usize,
    pub drop_factor: f64,
    pub leaky_slope: f64,
    pub temporal_mode: TemporalMode,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            input_side: 224,
            conv: vec![
                ConvLayerSpec::new(96, 11, 4, 2).with_lrn_pool(),
                ConvLayerSpec::new(256, 5, 1, 2).with_lrn_pool(),
                ConvLayerSpec::new(384, 3, 1, 1),
                ConvLayerSpec::new(384, 3, 1, 1),
                ConvLayerSpec::new(256, 3, 1, 1),
            ],
            lrn: LrnParams::default(),
            lstm_hidden: 256,
            windows: 8,
            head_l1: 512,
            head_l2: 256,
            classes: 9,
            drop_factor: 0.6,
            leaky_slope: 0.01,
            temporal_mode: TemporalMode::Flatten,
        }
    }
}

impl ArchitectureConfig {
    /// Desk-scale variant: the same kernel/stride/pad/pool geometry at side
    /// 32, with every width divided down so CPU training takes minutes.
    pub fn reduced() -> Self {
        let full = Self::default();
        let widths = [12, 32, 48, 48, 32];
        Self {
            input_side: 32,
            conv: full.conv.iter().zip(widths).map(|(l, w)| ConvLayerSpec { out_channels: w, ..*l }).collect(),
            lstm_hidden: 32,
            head_l2: 32,
            ..full
        }
    }

    /// The window plan implied by this geometry (half-overlapping windows).
    pub fn window_plan(&self) -> WindowPlan {
        WindowPlan::half_overlap(self.input_side, self.windows)
    }

    pub fn feature_width(&self) -> usize {
        self.conv.last().map_or(CHANNELS, |l| l.out_channels)
    }

    /// Width of the vector handed to the classifier head.
    pub fn pre_head_width(&self) -> usize {
        match self.temporal_mode {
            TemporalMode::Flatten => self.windows * self.lstm_hidden,
            TemporalMode::Attention => self.lstm_hidden,
        }
    }

    /// Output shape `(C, H, W)` after every stage of the convolutional stack.
    pub fn shape_trace(&self) -> Result<Vec<(String, [usize; 3])>> {
        let mut shape = [CHANNELS, self.input_side, self.input_side];
        let mut trace = vec![("input".to_string(), shape)];
        for (i, l) in self.conv.iter().enumerate() {
            let name = format!("conv{}", i + 1);
            let out = conv_out_dim(shape[1], l.kernel, l.stride, l.pad)
                .ok_or_else(|| Error::Config(format!("{name}: kernel {} does not fit {}", l.kernel, shape[1])))?;
            shape = [l.out_channels, out, out];
            trace.push((name.clone(), shape));
            if let Some(p) = l.pool {
                let out = conv_out_dim(shape[1], p.window, p.stride, 0).ok_or_else(|| {
                    Error::Config(format!("{name}: pool window {} does not fit {}", p.window, shape[1]))
                })?;
                shape = [l.out_channels, out, out];
                trace.push((format!("{name}.pool"), shape));
            }
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config("conv stack is empty".into()));
        }
        for (name, v) in [
            ("input_side", self.input_side),
            ("lstm_hidden", self.lstm_hidden),
            ("windows", self.windows),
            ("head_l1", self.head_l1),
            ("head_l2", self.head_l2),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.drop_factor) {
            return Err(Error::Config(format!("drop_factor must lie in [0, 1), got {}", self.drop_factor)));
        }
        if self.conv.iter().any(|l| l.lrn) && self.lrn.n.is_multiple_of(2) {
            return Err(Error::Config(format!("LRN window must be odd, got {}", self.lrn.n)));
        }
        self.shape_trace().map(|_| ())
    }

    /// Parameter tensors as `(name, shape)` in declaration order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = CHANNELS;
        for (i, l) in self.conv.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), vec![l.out_channels, c_in, l.kernel, l.kernel]));
            out.push((format!("conv{}.bias", i + 1), vec![l.out_channels]));
            c_in = l.out_channels;
        }
        let h = self.lstm_hidden;
        let z = h + self.feature_width();
        for gate in ["forget", "input", "cell", "output"] {
            out.push((format!("lstm.w_{gate}"), vec![h, z]));
        }
        for gate in ["forget", "input", "cell", "output"] {
            out.push((format!("lstm.b_{gate}"), vec![h]));
        }
        if self.temporal_mode == TemporalMode::Attention {
            out.push(("attention.weight".into(), vec![h, h]));
            out.push(("attention.bias".into(), vec![h]));
            out.push(("attention.score".into(), vec![1, h]));
        }
        let widths = [self.pre_head_width(), self.head_l1, self.head_l2, self.classes];
        for (i, pair) in widths.windows(2).enumerate() {
            out.push((format!("head.fc{}.weight", i + 1), vec![pair[1], pair[0]]));
            out.push((format!("head.fc{}.bias", i + 1), vec![pair[1]]));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct LstmIds {
    w: [ParamId; 4],
    b: [ParamId; 4],
}

#[derive(Debug, Clone)]
struct LayerIds {
    conv: Vec<(ParamId, ParamId)>,
    lstm: LstmIds,
    attention: Option<(ParamId, ParamId, ParamId)>,
    head: Vec<(ParamId, ParamId)>,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub logits: Var,
    pub probabilities: Var,
    pub pre_head: Var,
    /// `(B, T)` attention weights in attention mode.
    pub attention: Option<Var>,
}

/// Architecture plus its learnable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ArchitectureConfig,
    params: Parameters,
    ids: LayerIds,
}

impl Model {
    /// Fresh model: He-uniform for conv and hidden dense layers, Glorot for
    /// the LSTM, attention and output layers, zero biases except the forget
    /// gate (+1).
    pub fn new(config: ArchitectureConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(init_seed);
        let mut params = Parameters::new();
        for (name, shape) in config.parameter_shapes() {
            let t = init_tensor(&name, &shape, &mut rng);
            params.add(name, t)?;
        }
        Self::from_parameters(config, params)
    }

    /// Binds an existing parameter store, checking names and shapes.
    pub fn from_parameters(config: ArchitectureConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "architecture declares {} parameter tensors, store has {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), (_, got_name, t)) in expected.iter().zip(params.iter()) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let id = |n: &str| params.id(n).expect("validated above");
        let conv =
            (1..=config.conv.len()).map(|i| (id(&format!("conv{i}.weight")), id(&format!("conv{i}.bias")))).collect();
        let gates = ["forget", "input", "cell", "output"];
        let lstm =
            LstmIds { w: gates.map(|g| id(&format!("lstm.w_{g}"))), b: gates.map(|g| id(&format!("lstm.b_{g}"))) };
        let attention = (config.temporal_mode == TemporalMode::Attention)
            .then(|| (id("attention.weight"), id("attention.bias"), id("attention.score")));
        let head = (1..=3).map(|i| (id(&format!("head.fc{i}.weight")), id(&format!("head.fc{i}.bias")))).collect();
        let ids = LayerIds { conv, lstm, attention, head };
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn into_parameters(self) -> Parameters {
        self.params
    }

    /// Parameter id of the first convolution's kernel.
    pub fn conv1_weight(&self) -> ParamId {
        self.ids.conv[0].0
    }

    /// Stacks `B` frames of `T` window tensors into a `(B T, 3, S, S)`
    /// input, frame-major.
    pub fn batch_input<B: AsRef<[FeatureTensor]>>(&self, batch: &[B]) -> Result<Tensor> {
        let s = self.config.input_side;
        let t = self.config.windows;
        let mut data = Vec::with_capacity(batch.len() * t * CHANNELS * s * s);
        for (i, frame) in batch.iter().enumerate() {
            let frame = frame.as_ref();
            if frame.len() != t {
                return Err(Error::Config(format!("frame {i} has {} windows, model expects {t}", frame.len())));
            }
            for w in frame {
                if w.side != s {
                    return Err(Error::Config(format!("tensor side {} does not match model side {s}", w.side)));
                }
                data.extend_from_slice(&w.data);
            }
        }
        Tensor::new(vec![batch.len() * t, CHANNELS, s, s], data)
    }

    /// Convolutional feature extractor: `(N, 3, S, S) -> (N, C)`.
    pub fn cnn_forward(&self, g: &mut Graph, images: Var) -> Result<Var> {
        let mut x = images;
        for (l, &(w, b)) in self.config.conv.iter().zip(&self.ids.conv) {
            let w = g.param(&self.params, w);
            let b = g.param(&self.params, b);
            x = g.conv2d(x, w, b, l.stride, l.pad)?;
            x = g.relu(x);
            if l.lrn {
                x = g.lrn(x, self.config.lrn)?;
            }
            if let Some(p) = l.pool {
                x = g.max_pool(x, p.window, p.stride)?;
            }
        }
        g.global_avg_pool(x)
    }

    fn lstm_params(&self, g: &mut Graph) -> LstmCellParams {
        let p = &self.params;
        let [wf, wi, wc, wo] = self.ids.lstm.w.map(|id| g.param(p, id));
        let [bf, bi, bc, bo] = self.ids.lstm.b.map(|id| g.param(p, id));
        LstmCellParams {
            w_forget: wf,
            w_input: wi,
            w_cell: wc,
            w_output: wo,
            b_forget: bf,
            b_input: bi,
            b_cell: bc,
            b_output: bo,
        }
    }

    /// LSTM over `features (B, T, D)` from a zero state, then flatten or
    /// attention, then dropout. Returns the pre-head vector and, in
    /// attention mode, the `(B, T)` weights.
    pub fn temporal_forward<R: Rng>(
        &self,
        g: &mut Graph,
        features: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Option<Var>)> {
        let shape = g.shape(features).to_vec();
        let (t, hdim) = (self.config.windows, self.config.lstm_hidden);
        if shape.len() != 3 || shape[1] != t || shape[2] != self.config.feature_width() {
            return Err(Error::shape(
                "temporal_forward",
                format!("features {shape:?} do not match (B, {t}, {})", self.config.feature_width()),
            ));
        }
        let b = shape[0];
        let cell = self.lstm_params(g);
        let mut h = g.input(Tensor::zeros([b, hdim]));
        let mut c = g.input(Tensor::zeros([b, hdim]));
        let mut states = Vec::with_capacity(t);
        for step in 0..t {
            let x = g.select_step(features, step)?;
            (h, c) = lstm_cell(g, x, h, c, &cell)?;
            states.push(h);
        }
        let flat = g.concat(&states)?;
        let (out, weights) = match self.ids.attention {
            None => (flat, None),
            Some((w, bias, score)) => {
                let seq = g.reshape(flat, &[b, t, hdim])?;
                let w = g.param(&self.params, w);
                let bias = g.param(&self.params, bias);
                let score = g.param(&self.params, score);
                let u = g.dense(seq, w, Some(bias))?;
                let u = g.tanh(u);
                let e = g.dense(u, score, None)?;
                let e = g.reshape(e, &[b, t])?;
                let a = g.softmax(e);
                (g.weighted_sum(a, seq)?, Some(a))
            }
        };
        let out = g.dropout(out, self.config.drop_factor, training, rng)?;
        Ok((out, weights))
    }

    /// Dense(l1) + leaky ReLU -> Dense(l2) + leaky ReLU -> Dense(classes).
    /// Returns logits.
    pub fn classify<R: Rng>(&self, g: &mut Graph, pre_head: Var, training: bool, rng: &mut R) -> Result<Var> {
        let mut x = pre_head;
        let last = self.ids.head.len() - 1;
        for (i, &(w, b)) in self.ids.head.iter().enumerate() {
            let w = g.param(&self.params, w);
            let b = g.param(&self.params, b);
            x = g.dense(x, w, Some(b))?;
            if i < last {
                x = g.leaky_relu(x, self.config.leaky_slope);
                x = g.dropout(x, self.config.drop_factor, training, rng)?;
            }
        }
        Ok(x)
    }

    /// Full forward pass over a batch of frames.
    pub fn forward<B: AsRef<[FeatureTensor]>, R: Rng>(
        &self,
        g: &mut Graph,
        batch: &[B],
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        let images = g.input(self.batch_input(batch)?);
        let feats = self.cnn_forward(g, images)?;
        let feats = g.reshape(feats, &[batch.len(), self.config.windows, self.config.feature_width()])?;
        let (pre_head, attention) = self.temporal_forward(g, feats, training, rng)?;
        let logits = self.classify(g, pre_head, training, rng)?;
        let probabilities = g.softmax(logits);
        Ok(ForwardOutput { logits, probabilities, pre_head, attention })
    }

    /// Inference-mode class probabilities, one row per frame.
    pub fn predict<B: AsRef<[FeatureTensor]>>(&self, batch: &[B]) -> Result<Vec<Vec<f64>>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        // Dropout is inactive at inference, so the generator is never drawn from.
        let mut rng = seed::rng(0);
        let out = self.forward(&mut g, batch, false, &mut rng)?;
        Ok(g.value(out.probabilities).data().chunks(self.config.classes).map(<[f64]>::to_vec).collect())
    }

    /// Layer-by-layer shape table.
    pub fn describe(&self) -> String {
        describe(&self.config, Some(&self.params))
    }
}

fn init_tensor<R: Rng>(name: &str, shape: &[usize], rng: &mut R) -> Tensor {
    if name.ends_with("bias") || name.starts_with("lstm.b_") {
        let fill = if name == "lstm.b_forget" { 1.0 } else { 0.0 };
        return Tensor::filled(shape.to_vec(), fill);
    }
    let fan_out = shape[0];
    let fan_in: usize = shape[1..].iter().product();
    let rectified = name.starts_with("conv") || name == "head.fc1.weight" || name == "head.fc2.weight";
    if rectified {
        he_uniform(shape, fan_in, rng)
    } else {
        glorot_uniform(shape, fan_in, fan_out, rng)
    }
}

/// Shape table for documentation: stage, output shape, parameter count.
pub fn describe(config: &ArchitectureConfig, params: Option<&Parameters>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>18} {:>12}", "stage", "output", "params");
    let shapes = config.parameter_shapes();
    let count = |prefix: &str| -> usize {
        shapes.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, sh)| sh.iter().product::<usize>()).sum()
    };
    match config.shape_trace() {
        Ok(trace) => {
            for (name, [c, h, w]) in trace {
                let p = if name.contains('.') || name == "input" { 0 } else { count(&format!("{name}.")) };
                let _ = writeln!(s, "{:<16} {:>18} {:>12}", name, format!("{c}x{h}x{w}"), p);
            }
        }
        Err(e) => {
            let _ = writeln!(s, "invalid geometry: {e}");
        }
    }
    let t = config.windows;
    let _ = writeln!(s, "{:<16} {:>18} {:>12}", "gap", format!("{}", config.feature_width()), 0);
    let _ = writeln!(s, "{:<16} {:>18} {:>12}", "lstm", format!("{t}x{}", config.lstm_hidden), count("lstm."));
    match config.temporal_mode {
        TemporalMode::Flatten => {
            let _ = writeln!(s, "{:<16} {:>18} {:>12}", "flatten", config.pre_head_width(), 0);
        }
        TemporalMode::Attention => {
            let _ = writeln!(s, "{:<16} {:>18} {:>12}", "attention", config.pre_head_width(), count("attention."));
        }
    }
    for (i, w) in [config.head_l1, config.head_l2, config.classes].iter().enumerate() {
        let _ = writeln!(s, "{:<16} {:>18} {:>12}", format!("fc{}", i + 1), w, count(&format!("head.fc{}.", i + 1)));
    }
    let total = params
        .map_or_else(|| shapes.iter().map(|(_, sh)| sh.iter().product::<usize>()).sum(), Parameters::scalar_count);
    let _ = writeln!(s, "{:<16} {:>18} {:>12}", "total", "", total);
    s
}
