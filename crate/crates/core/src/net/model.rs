use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::{LstmActivations, LstmLayer};
use crate::error::{Error, Result};
use crate::features::{FeatureMode, MotionFeatureSequence};
use crate::model::{LabelSet, SkeletonSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetMode {
    /// Separate recurrent branches for the velocity and shape blocks.
    TwoBranch,
    /// One recurrent branch over the whole frame.
    SingleBranch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
    pub velocity_width: usize,
    pub shape_width: usize,
    pub mode: NetMode,
    /// Stacked recurrent layers per branch.
    #[serde(default = "one")]
    pub layers: usize,
    /// Width of an optional tanh layer between the branches and the output
    /// layer; 0 connects the branches to the output directly.
    #[serde(default)]
    pub fc_hidden: usize,
}

fn one() -> usize {
    1
}

impl NetConfig {
    pub fn two_branch(velocity_width: usize, shape_width: usize, classes: usize) -> Self {
        NetConfig {
            hidden: 64,
            classes,
            dropout: 0.2,
            velocity_width,
            shape_width,
            mode: NetMode::TwoBranch,
            layers: 1,
            fc_hidden: 0,
        }
    }

    pub fn single_branch(width: usize, classes: usize) -> Self {
        NetConfig {
            mode: NetMode::SingleBranch,
            ..Self::two_branch(width, 0, classes)
        }
    }

    pub fn validate(self) -> Result<Self> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("hidden width and depth must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.velocity_width + self.shape_width == 0 {
            return Err(Error::Config("input width is zero".into()));
        }
        Ok(self)
    }

    /// `(offset into frame, width)` of each branch input.
    pub fn branch_inputs(&self) -> Vec<(usize, usize)> {
        match self.mode {
            NetMode::SingleBranch => vec![(0, self.velocity_width + self.shape_width)],
            NetMode::TwoBranch => [(0, self.velocity_width), (self.velocity_width, self.shape_width)]
                .into_iter()
                .filter(|&(_, w)| w > 0)
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Branch {
    input_offset: usize,
    layers: Vec<LstmLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tensors: Vec<TensorSpec>,
    branches: Vec<Branch>,
    hidden_fc: Option<Dense>,
    out_fc: Dense,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let mut tensors = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize| {
            let offset = tensors.last().map_or(0, |t: &TensorSpec| t.offset + t.len());
            tensors.push(TensorSpec {
                name,
                rows,
                cols,
                offset,
            });
            offset
        };
        let h = cfg.hidden;
        let branch_names = match cfg.mode {
            NetMode::SingleBranch => vec!["frame"],
            NetMode::TwoBranch => [("velocity", cfg.velocity_width), ("shape", cfg.shape_width)]
                .into_iter()
                .filter(|(_, w)| *w > 0)
                .map(|(n, _)| n)
                .collect(),
        };
        let mut branches = Vec::new();
        for ((input_offset, width), name) in cfg.branch_inputs().into_iter().zip(branch_names) {
            let mut layers = Vec::new();
            let mut n_in = width;
            for l in 0..cfg.layers {
                let wx = push(format!("{name}.l{l}.w_input"), 4 * h, n_in);
                let wh = push(format!("{name}.l{l}.w_recurrent"), 4 * h, h);
                let b = push(format!("{name}.l{l}.bias"), 4 * h, 1);
                layers.push(LstmLayer {
                    input: n_in,
                    hidden: h,
                    wx,
                    wh,
                    b,
                });
                n_in = h;
            }
            branches.push(Branch {
                input_offset,
                layers,
            });
        }
        let feat = h * branches.len();
        let hidden_fc = (cfg.fc_hidden > 0).then(|| {
            let w = push("fc_hidden.weight".into(), cfg.fc_hidden, feat);
            let b = push("fc_hidden.bias".into(), cfg.fc_hidden, 1);
            Dense {
                inputs: feat,
                outputs: cfg.fc_hidden,
                w,
                b,
            }
        });
        let out_in = if cfg.fc_hidden > 0 { cfg.fc_hidden } else { feat };
        let w = push("fc_out.weight".into(), cfg.classes, out_in);
        let b = push("fc_out.bias".into(), cfg.classes, 1);
        let total = tensors.last().map_or(0, |t| t.offset + t.len());
        Layout {
            tensors,
            branches,
            hidden_fc,
            out_fc: Dense {
                inputs: out_in,
                outputs: cfg.classes,
                w,
                b,
            },
            total,
        }
    }
}

/// Feature layout a model was trained on, carried in the weight file so
/// inference can rebuild its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub skeleton: SkeletonSpec,
    pub feature_mode: FeatureMode,
    pub t_obj: usize,
    pub labels: LabelSet,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Gradient of the loss with respect to every parameter, in model layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients { data: vec![0.0; n] }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Everything the backward pass needs from one forward pass.
struct Forward {
    branches: Vec<Vec<LstmActivations>>,
    mask: Option<Vec<f64>>,
    /// Branch outputs after dropout.
    z: Vec<f64>,
    hidden: Option<Vec<f64>>,
    logits: Vec<f64>,
}

/// The two-branch recurrent gesture classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeqModel {
    config: NetConfig,
    layout: Layout,
    params: Vec<f64>,
    seed: u64,
    meta: Option<ModelMeta>,
}

/// Rounds every value to the nearest `f32`, the storage precision.
pub(crate) fn quantize(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

impl TraceSeqModel {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases except
    /// the forget gates which start at 1.
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        let cfg = cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |params: &mut [f64], fan_in: usize| {
            let s = 1.0 / (fan_in.max(1) as f64).sqrt();
            for p in params {
                *p = rng.gen_range(-s..=s);
            }
        };
        for br in &layout.branches {
            for l in &br.layers {
                let fan_in = l.input + l.hidden;
                fill(&mut params[l.wx..l.wx + 4 * l.hidden * l.input], fan_in);
                fill(&mut params[l.wh..l.wh + 4 * l.hidden * l.hidden], fan_in);
                params[l.b + l.hidden..l.b + 2 * l.hidden].fill(1.0);
            }
        }
        for d in layout.hidden_fc.iter().chain(std::iter::once(&layout.out_fc)) {
            fill(&mut params[d.w..d.w + d.inputs * d.outputs], d.inputs);
        }
        quantize(&mut params);
        Ok(TraceSeqModel {
            config: cfg,
            layout,
            params,
            seed,
            meta: None,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn meta(&self) -> Option<&ModelMeta> {
        self.meta.as_ref()
    }

    pub fn set_meta(&mut self, meta: ModelMeta) {
        self.meta = Some(meta);
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, seq: &MotionFeatureSequence) -> Result<()> {
        let c = &self.config;
        if seq.is_empty() {
            return Err(Error::InvalidInput("empty feature sequence".into()));
        }
        if seq.velocity_width() != c.velocity_width || seq.shape_width() != c.shape_width {
            return Err(Error::schema(
                "features",
                format!(
                    "model expects widths ({}, {}), got ({}, {})",
                    c.velocity_width,
                    c.shape_width,
                    seq.velocity_width(),
                    seq.shape_width()
                ),
            ));
        }
        if seq.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(())
    }

    fn run(&self, seq: &MotionFeatureSequence, mask: Option<Vec<f64>>) -> Forward {
        let p = &self.params;
        let mut branches = Vec::with_capacity(self.layout.branches.len());
        let mut feat = Vec::with_capacity(self.config.hidden * self.layout.branches.len());
        for br in &self.layout.branches {
            let width = br.layers[0].input;
            let mut xs: Vec<f64> = seq
                .frames()
                .flat_map(|f| f[br.input_offset..br.input_offset + width].iter().copied())
                .collect();
            let mut acts = Vec::with_capacity(br.layers.len());
            for layer in &br.layers {
                let a = layer.forward(p, &xs);
                xs = a.outputs().to_vec();
                acts.push(a);
            }
            feat.extend_from_slice(acts.last().expect("branch has layers").last_hidden());
            branches.push(acts);
        }
        let z = match &mask {
            Some(m) => feat.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => feat,
        };
        let affine = |d: &Dense, x: &[f64]| -> Vec<f64> {
            (0..d.outputs)
                .map(|r| {
                    p[d.b + r]
                        + p[d.w + r * d.inputs..d.w + (r + 1) * d.inputs]
                            .iter()
                            .zip(x)
                            .map(|(w, v)| w * v)
                            .sum::<f64>()
                })
                .collect()
        };
        let hidden = self
            .layout
            .hidden_fc
            .as_ref()
            .map(|d| affine(d, &z).into_iter().map(f64::tanh).collect::<Vec<_>>());
        let logits = affine(&self.layout.out_fc, hidden.as_deref().unwrap_or(&z));
        Forward {
            branches,
            mask,
            z,
            hidden,
            logits,
        }
    }

    /// Pre-softmax class scores, inference mode.
    pub fn logits(&self, seq: &MotionFeatureSequence) -> Result<Vec<f64>> {
        self.check_input(seq)?;
        Ok(self.run(seq, None).logits)
    }

    /// Class probabilities, inference mode.
    pub fn predict(&self, seq: &MotionFeatureSequence) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(seq)?))
    }

    /// Class probabilities; `train_mode` applies dropout drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        seq: &MotionFeatureSequence,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_input(seq)?;
        let mask = train_mode.then(|| self.dropout_mask(rng)).flatten();
        Ok(softmax(&self.run(seq, mask).logits))
    }

    fn dropout_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        let p = self.config.dropout;
        if p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.config.hidden * self.layout.branches.len();
        Some(
            (0..n)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect(),
        )
    }

    /// Loss and gradients of one sample, added into `grads`.
    fn backprop(
        &self,
        seq: &MotionFeatureSequence,
        label: usize,
        mask: Option<Vec<f64>>,
        grads: &mut [f64],
    ) -> (f64, bool) {
        let p = &self.params;
        let fwd = self.run(seq, mask);
        let loss = log_sum_exp(&fwd.logits) - fwd.logits[label];
        let hit = argmax(&fwd.logits) == label;
        let mut dlogits = softmax(&fwd.logits);
        dlogits[label] -= 1.0;

        let dense_back = |d: &Dense, x: &[f64], dy: &[f64], grads: &mut [f64]| -> Vec<f64> {
            let mut dx = vec![0.0; d.inputs];
            for (r, &g) in dy.iter().enumerate() {
                grads[d.b + r] += g;
                let row = d.w + r * d.inputs;
                for k in 0..d.inputs {
                    grads[row + k] += g * x[k];
                    dx[k] += g * p[row + k];
                }
            }
            dx
        };
        let dz = match (&self.layout.hidden_fc, &fwd.hidden) {
            (Some(hd), Some(hidden)) => {
                let mut da = dense_back(&self.layout.out_fc, hidden, &dlogits, grads);
                for (g, a) in da.iter_mut().zip(hidden) {
                    *g *= 1.0 - a * a;
                }
                dense_back(hd, &fwd.z, &da, grads)
            }
            _ => dense_back(&self.layout.out_fc, &fwd.z, &dlogits, grads),
        };
        let dfeat: Vec<f64> = match &fwd.mask {
            Some(m) => dz.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => dz,
        };

        let h = self.config.hidden;
        for (bi, (br, acts)) in self.layout.branches.iter().zip(&fwd.branches).enumerate() {
            let steps = acts[0].steps;
            let mut dh = vec![0.0; steps * h];
            dh[(steps - 1) * h..].copy_from_slice(&dfeat[bi * h..(bi + 1) * h]);
            for (li, (layer, act)) in br.layers.iter().zip(acts).enumerate().rev() {
                match layer.backward(p, act, &dh, grads, li > 0) {
                    Some(dx) => dh = dx,
                    None => break,
                }
            }
        }
        (loss, hit)
    }

    /// Mean cross-entropy over a batch and its gradient, with backpropagation
    /// through the full window. One dropout mask is drawn per sample, in
    /// batch order, before any work is fanned out.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        batch: &[(&MotionFeatureSequence, usize)],
        rng: &mut R,
    ) -> Result<(f64, Gradients)> {
        self.batch_gradients(batch, rng).map(|(loss, g, _)| (loss, g))
    }

    /// As [`Self::loss_and_gradients`], also counting samples whose training
    /// forward pass ranked the true class first.
    pub(crate) fn batch_gradients<R: Rng + ?Sized>(
        &self,
        batch: &[(&MotionFeatureSequence, usize)],
        rng: &mut R,
    ) -> Result<(f64, Gradients, usize)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for (seq, label) in batch {
            self.check_input(seq)?;
            if *label >= self.config.classes {
                return Err(Error::InvalidInput(format!("label {label} out of range")));
            }
        }
        let masks: Vec<Option<Vec<f64>>> = batch.iter().map(|_| self.dropout_mask(rng)).collect();
        let n = self.params.len();
        // fixed-size chunks keep the reduction order independent of thread count
        const CHUNK: usize = 4;
        let partials: Vec<(f64, Vec<f64>, usize)> = batch
            .par_chunks(CHUNK)
            .zip(masks.par_chunks(CHUNK))
            .map(|(samples, masks)| {
                let mut g = vec![0.0; n];
                let mut loss = 0.0;
                let mut hits = 0;
                for ((seq, label), mask) in samples.iter().zip(masks) {
                    let (l, hit) = self.backprop(seq, *label, mask.clone(), &mut g);
                    loss += l;
                    hits += hit as usize;
                }
                (loss, g, hits)
            })
            .collect();
        let mut total = Gradients::zeros(n);
        let mut loss = 0.0;
        let mut hits = 0;
        for (l, g, h) in partials {
            loss += l;
            hits += h;
            for (t, v) in total.data.iter_mut().zip(&g) {
                *t += v;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        total.data.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, total, hits))
    }

    /// Mean cross-entropy without dropout.
    pub fn loss(&self, batch: &[(&MotionFeatureSequence, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (seq, label) in batch {
            let logits = self.logits(seq)?;
            total += log_sum_exp(&logits) - logits[*label];
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

const MODEL_MAGIC: &[u8; 8] = b"LHGRMODL";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    config: NetConfig,
    seed: u64,
    #[serde(default)]
    meta: Option<ModelMeta>,
    tensors: Vec<TensorSpec>,
}

impl TraceSeqModel {
    /// JSON header followed by little-endian `f32` tensors in layout order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = ModelHeader {
            format_version: MODEL_VERSION,
            config: self.config,
            seed: self.seed,
            meta: self.meta.clone(),
            tensors: self.layout.tensors.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::json("model header", e))?;
        let mut buf = Vec::with_capacity(20 + json.len() + 4 * self.params.len());
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for &p in &self.params {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io("<model>", e))
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<model>", e))?;
        let bad = |m: &str| Error::schema("model", m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MODEL_MAGIC {
            return Err(bad("not a model file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: ModelHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::json("model header", e))?;
        let mut model = TraceSeqModel::init(header.config, header.seed)?;
        let declared: Vec<(&str, usize, usize)> = header
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.rows, t.cols))
            .collect();
        let expected: Vec<(&str, usize, usize)> = model
            .layout
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.rows, t.cols))
            .collect();
        if declared != expected {
            return Err(bad("tensor table does not match config"));
        }
        let data = &body[hlen..];
        if data.len() != 4 * model.params.len() {
            return Err(bad("tensor section size does not match header"));
        }
        for (p, b) in model.params.iter_mut().zip(data.chunks_exact(4)) {
            *p = f32::from_le_bytes(b.try_into().unwrap()) as f64;
        }
        if model.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model weights".into()));
        }
        model.meta = header.meta;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
