//! Fuse-late multimodal classifier.
//!
//! Each modality is encoded separately: the text vector `x` (an ingested
//! sentence embedding, or a learned projection of a TF-IDF vector), the
//! categorical codes through per-column embedding tables and an MLP, and the
//! numeric block through its own MLP. The three `d_token`-wide segments are
//! pooled (element-wise mean and max, concatenated) and fed to a two-layer
//! head with a GELU hidden layer and a sigmoid output.
//!
//! All parameters live in one flat buffer described by a tensor table, which
//! keeps the optimizer, gradient checks and checkpoints simple.

mod train;

pub use train::{lr_at, train, TrainConfig, TrainHistory};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textfeat::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean and max over the three modality segments, concatenated.
    MeanMaxConcat,
    /// The full concatenated representation, unpooled.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_text: usize,
    pub d_token: usize,
    pub cat_embed_dim: usize,
    pub cat_bottleneck: usize,
    pub num_bottleneck: usize,
    pub fusion_hidden: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub pooling: Pooling,
    pub init_std: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_text: 768,
            d_token: 768,
            cat_embed_dim: 32,
            cat_bottleneck: 64,
            num_bottleneck: 128,
            fusion_hidden: 768,
            dropout: 0.2,
            leaky_slope: 0.1,
            pooling: Pooling::MeanMaxConcat,
            init_std: 0.02,
        }
    }
}

impl FusionConfig {
    /// Same architecture with every width set to `width`.
    pub fn scaled(width: usize) -> Self {
        Self {
            d_text: width,
            d_token: width,
            fusion_hidden: width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.d_text,
            self.d_token,
            self.cat_embed_dim,
            self.cat_bottleneck,
            self.num_bottleneck,
            self.fusion_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::Invalid("all fusion widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.leaky_slope <= 0.0 {
            return Err(Error::Invalid("leaky_slope must be > 0".into()));
        }
        if self.init_std <= 0.0 {
            return Err(Error::Invalid("init_std must be > 0".into()));
        }
        if self.pooling == Pooling::MeanMaxConcat && self.d_text != self.d_token {
            return Err(Error::Invalid(format!(
                "mean/max pooling over modality segments needs d_text == d_token ({} != {})",
                self.d_text, self.d_token
            )));
        }
        Ok(())
    }

    /// Width of the concatenated representation `x ‖ cat ‖ num`.
    pub fn fused_width(&self) -> usize {
        self.d_text + 2 * self.d_token
    }

    fn head_input_width(&self) -> usize {
        match self.pooling {
            Pooling::MeanMaxConcat => 2 * self.d_token,
            Pooling::Concat => self.fused_width(),
        }
    }
}

/// How the text modality reaches the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TextInputKind {
    /// Fixed sentence embeddings of width `d_text`.
    Embedding,
    /// Sparse TF-IDF vectors over `vocab` terms, linearly projected to `d_text`.
    Tfidf { vocab: usize },
    /// Text modality switched off; the text segment is all zeros.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub text: TextInputKind,
    /// Per categorical column, including the reserved unseen code.
    pub cardinalities: Vec<usize>,
    pub numeric_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextRepr {
    Dense(Vec<f64>),
    Sparse(SparseVector),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    pub text: TextRepr,
    pub categorical: Vec<u32>,
    pub numeric: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    Bias,
    Embedding,
    NormScale,
    NormShift,
}

impl Role {
    pub fn decays(self) -> bool {
        matches!(self, Role::Weight | Role::Embedding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub role: Role,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Mlp {
    w1: usize,
    b1: usize,
    gamma: usize,
    beta: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Slots {
    text_w: Option<usize>,
    text_b: Option<usize>,
    cat_emb: Vec<usize>,
    cat: Mlp,
    num: Mlp,
    f1_w: usize,
    f1_b: usize,
    f2_w: usize,
    f2_b: usize,
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub input: InputSpec,
    pub tensors: Vec<TensorInfo>,
    pub params: Vec<f64>,
    slots: Slots,
}

struct LayoutBuilder {
    tensors: Vec<TensorInfo>,
    offset: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: &str, shape: &[usize], role: Role) -> usize {
        let info = TensorInfo {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.offset,
            role,
        };
        self.offset += info.len();
        self.tensors.push(info);
        self.tensors.len() - 1
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: usize, out: usize) -> Mlp {
        Mlp {
            w1: self.add(&format!("{prefix}.dense1.weight"), &[hidden, input], Role::Weight),
            b1: self.add(&format!("{prefix}.dense1.bias"), &[hidden], Role::Bias),
            gamma: self.add(&format!("{prefix}.norm.scale"), &[hidden], Role::NormScale),
            beta: self.add(&format!("{prefix}.norm.shift"), &[hidden], Role::NormShift),
            w2: self.add(&format!("{prefix}.dense2.weight"), &[out, hidden], Role::Weight),
            b2: self.add(&format!("{prefix}.dense2.bias"), &[out], Role::Bias),
        }
    }
}

fn layout(cfg: &FusionConfig, input: &InputSpec) -> (Vec<TensorInfo>, Slots, usize) {
    let mut b = LayoutBuilder {
        tensors: Vec::new(),
        offset: 0,
    };
    let (text_w, text_b) = match input.text {
        TextInputKind::Tfidf { vocab } => (
            Some(b.add("text.projection.weight", &[vocab, cfg.d_text], Role::Weight)),
            Some(b.add("text.projection.bias", &[cfg.d_text], Role::Bias)),
        ),
        _ => (None, None),
    };
    let cat_emb = input
        .cardinalities
        .iter()
        .enumerate()
        .map(|(j, &k)| b.add(&format!("cat.embedding{j}"), &[k, cfg.cat_embed_dim], Role::Embedding))
        .collect::<Vec<_>>();
    let cat_in = input.cardinalities.len() * cfg.cat_embed_dim;
    let cat = b.mlp("cat_mlp", cat_in, cfg.cat_bottleneck, cfg.d_token);
    let num = b.mlp("num_mlp", input.numeric_width, cfg.num_bottleneck, cfg.d_token);
    let f1_w = b.add("fusion.dense1.weight", &[cfg.fusion_hidden, cfg.head_input_width()], Role::Weight);
    let f1_b = b.add("fusion.dense1.bias", &[cfg.fusion_hidden], Role::Bias);
    let f2_w = b.add("fusion.dense2.weight", &[1, cfg.fusion_hidden], Role::Weight);
    let f2_b = b.add("fusion.dense2.bias", &[1], Role::Bias);
    let total = b.offset;
    (
        b.tensors,
        Slots {
            text_w,
            text_b,
            cat_emb,
            cat,
            num,
            f1_w,
            f1_b,
            f2_w,
            f2_b,
        },
        total,
    )
}

/// Standard deviation of a unit normal truncated to [-2, 2].
const TRUNC2_STD: f64 = 0.879_626_727_008_3;

/// Draws from a normal truncated at two scale units whose resulting
/// standard deviation is `std`.
fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let scale = std / TRUNC2_STD;
    let n = Normal::new(0.0, scale).expect("std > 0");
    loop {
        let v = n.sample(rng);
        if v.abs() <= 2.0 * scale {
            return v;
        }
    }
}

/// Weights and embeddings from a seeded truncated normal, biases and norm
/// shifts zero, norm scales one.
pub fn init_model(cfg: &FusionConfig, input: &InputSpec, seed: u64) -> Result<FusionModel> {
    cfg.validate()?;
    if let Some(j) = input.cardinalities.iter().position(|&k| k == 0) {
        return Err(Error::Invalid(format!("categorical column {j} has zero cardinality")));
    }
    let (tensors, slots, total) = layout(cfg, input);
    let mut params = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in &tensors {
        match t.role {
            Role::Weight | Role::Embedding => {
                for p in &mut params[t.range()] {
                    *p = truncated_normal(&mut rng, cfg.init_std);
                }
            }
            Role::NormScale => params[t.range()].iter_mut().for_each(|p| *p = 1.0),
            Role::Bias | Role::NormShift => {}
        }
    }
    Ok(FusionModel {
        config: cfg.clone(),
        input: input.clone(),
        tensors,
        params,
        slots,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `softplus(z) - y z`, the binary cross-entropy of a logit.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - y * z
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `y = W x + b` with `W` row-major `out × in`.
fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            bo + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Accumulates `dW += dy xᵀ`, `db += dy`, and returns `Wᵀ dy` when wanted.
fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = if want_dx { vec![0.0; n_in] } else { Vec::new() };
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * x[i];
        }
        if want_dx {
            for i in 0..n_in {
                dx[i] += g * row[i];
            }
        }
    }
    dx
}

struct MlpCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    normed: Vec<f64>,
    inv_std: f64,
    out_ln: Vec<f64>,
}

/// Cached activations of one forward pass, used by backprop.
struct Cache {
    cat: MlpCache,
    num: MlpCache,
    /// For each pooled max unit, which segment (0 text, 1 cat, 2 num) won.
    argmax: Vec<u8>,
    pooled: Vec<f64>,
    h1: Vec<f64>,
    /// Post-GELU, post-dropout hidden activations.
    hidden: Vec<f64>,
    mask: Vec<f64>,
    logit: f64,
}

impl FusionModel {
    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.range()])
    }

    fn slice(&self, slot: usize) -> &[f64] {
        &self.params[self.tensors[slot].range()]
    }

    /// Rebuilds a model from checkpointed parts, checking the tensor table.
    pub fn from_parts(
        config: FusionConfig,
        input: InputSpec,
        tensors: Vec<TensorInfo>,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let (expected, slots, total) = layout(&config, &input);
        if expected != tensors {
            return Err(Error::Checkpoint("tensor table does not match the configuration".into()));
        }
        if params.len() != total {
            return Err(Error::Dimension {
                what: "fusion parameters",
                expected: total,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            config,
            input,
            tensors,
            params,
            slots,
        })
    }

    fn check_input(&self, x: &FusionInput) -> Result<()> {
        match (&self.input.text, &x.text) {
            (TextInputKind::Embedding, TextRepr::Dense(v)) => {
                if v.len() != self.config.d_text {
                    return Err(Error::Dimension {
                        what: "text embedding",
                        expected: self.config.d_text,
                        got: v.len(),
                    });
                }
                if v.iter().any(|a| !a.is_finite()) {
                    return Err(Error::Invalid("non-finite text embedding".into()));
                }
            }
            (TextInputKind::Tfidf { vocab }, TextRepr::Sparse(s)) => {
                if s.dimension != *vocab || s.indices.iter().any(|&i| i >= *vocab) {
                    return Err(Error::Dimension {
                        what: "tf-idf vector",
                        expected: *vocab,
                        got: s.dimension,
                    });
                }
                if s.values.iter().any(|a| !a.is_finite()) {
                    return Err(Error::Invalid("non-finite tf-idf value".into()));
                }
            }
            (TextInputKind::Disabled, _) => {}
            (kind, _) => {
                return Err(Error::Invalid(format!("text input does not match {kind:?}")));
            }
        }
        if x.categorical.len() != self.input.cardinalities.len() {
            return Err(Error::Dimension {
                what: "categorical codes",
                expected: self.input.cardinalities.len(),
                got: x.categorical.len(),
            });
        }
        for (j, (&c, &k)) in x.categorical.iter().zip(&self.input.cardinalities).enumerate() {
            if c as usize >= k {
                return Err(Error::Invalid(format!(
                    "categorical column {j}: code {c} >= cardinality {k}"
                )));
            }
        }
        if x.numeric.len() != self.input.numeric_width {
            return Err(Error::Dimension {
                what: "numeric features",
                expected: self.input.numeric_width,
                got: x.numeric.len(),
            });
        }
        if x.numeric.iter().any(|a| !a.is_finite()) {
            return Err(Error::Invalid("non-finite numeric feature".into()));
        }
        Ok(())
    }

    fn text_segment(&self, x: &FusionInput) -> Vec<f64> {
        let d = self.config.d_text;
        match (&x.text, self.slots.text_w, self.slots.text_b) {
            (TextRepr::Sparse(s), Some(w), Some(b)) => {
                let w = self.slice(w);
                let mut out = self.slice(b).to_vec();
                for (j, v) in s.iter() {
                    let row = &w[j * d..(j + 1) * d];
                    for k in 0..d {
                        out[k] += v * row[k];
                    }
                }
                out
            }
            (TextRepr::Dense(v), _, _) if self.input.text == TextInputKind::Embedding => v.clone(),
            _ => vec![0.0; d],
        }
    }

    fn mlp_forward(&self, m: &Mlp, input: Vec<f64>) -> (Vec<f64>, MlpCache) {
        let pre = dense(self.slice(m.w1), self.slice(m.b1), &input);
        let slope = self.config.leaky_slope;
        let act: Vec<f64> = pre.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let h = act.len() as f64;
        let mean = act.iter().sum::<f64>() / h;
        let var = act.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h;
        let inv_std = 1.0 / (var + LN_EPS).sqrt();
        let normed: Vec<f64> = act.iter().map(|v| (v - mean) * inv_std).collect();
        let (g, b) = (self.slice(m.gamma), self.slice(m.beta));
        let out_ln: Vec<f64> = normed
            .iter()
            .zip(g.iter().zip(b))
            .map(|(n, (g, b))| n * g + b)
            .collect();
        let out = dense(self.slice(m.w2), self.slice(m.b2), &out_ln);
        (
            out,
            MlpCache {
                input,
                pre,
                normed,
                inv_std,
                out_ln,
            },
        )
    }

    fn forward_cached(&self, x: &FusionInput, mask: Option<Vec<f64>>) -> Cache {
        let cfg = &self.config;
        let text = self.text_segment(x);

        let mut cat_in = Vec::with_capacity(x.categorical.len() * cfg.cat_embed_dim);
        for (j, &code) in x.categorical.iter().enumerate() {
            let table = self.slice(self.slots.cat_emb[j]);
            let e = cfg.cat_embed_dim;
            cat_in.extend_from_slice(&table[code as usize * e..(code as usize + 1) * e]);
        }
        let (cat_out, cat) = self.mlp_forward(&self.slots.cat, cat_in);
        let (num_out, num) = self.mlp_forward(&self.slots.num, x.numeric.clone());

        let (pooled, argmax) = match cfg.pooling {
            Pooling::MeanMaxConcat => {
                let d = cfg.d_token;
                let mut pooled = vec![0.0; 2 * d];
                let mut argmax = vec![0u8; d];
                for k in 0..d {
                    let seg = [text[k], cat_out[k], num_out[k]];
                    pooled[k] = (seg[0] + seg[1] + seg[2]) / 3.0;
                    let mut best = 0;
                    for s in 1..3 {
                        if seg[s] > seg[best] {
                            best = s;
                        }
                    }
                    argmax[k] = best as u8;
                    pooled[d + k] = seg[best];
                }
                (pooled, argmax)
            }
            Pooling::Concat => {
                let mut pooled = text.clone();
                pooled.extend_from_slice(&cat_out);
                pooled.extend_from_slice(&num_out);
                (pooled, Vec::new())
            }
        };

        let h1 = dense(self.slice(self.slots.f1_w), self.slice(self.slots.f1_b), &pooled);
        let mask = mask.unwrap_or_else(|| vec![1.0; h1.len()]);
        let hidden: Vec<f64> = h1.iter().zip(&mask).map(|(&h, &m)| gelu(h) * m).collect();
        let logit = dense(self.slice(self.slots.f2_w), self.slice(self.slots.f2_b), &hidden)[0];
        Cache {
            cat,
            num,
            argmax,
            pooled,
            h1,
            hidden,
            mask,
            logit,
        }
    }

    /// Logit of one example, without dropout.
    pub fn logit(&self, x: &FusionInput) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_cached(x, None).logit)
    }

    /// Probability of the positive class. With `training`, a dropout mask is
    /// drawn from `rng`; inference (`training = false`) is deterministic.
    pub fn forward(&self, x: &FusionInput, training: bool, rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
        self.check_input(x)?;
        let mask = match (training, rng) {
            (true, Some(rng)) => Some(self.dropout_mask(rng)),
            _ => None,
        };
        Ok(sigmoid(self.forward_cached(x, mask).logit))
    }

    pub fn predict(&self, batch: &[FusionInput]) -> Result<Vec<f64>> {
        batch.iter().map(|x| self.forward(x, false, None)).collect()
    }

    fn dropout_mask(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let p = self.config.dropout;
        let keep = 1.0 / (1.0 - p);
        (0..self.config.fusion_hidden)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect()
    }

    fn mlp_backward(&self, m: &Mlp, c: &MlpCache, d_out: &[f64], grad: &mut [f64], want_dx: bool) -> Vec<f64> {
        let t = &self.tensors;
        let d_ln = {
            let (gw, rest) = split_pair(grad, t[m.w2].range(), t[m.b2].range());
            dense_backward(self.slice(m.w2), &c.out_ln, d_out, gw, rest, true)
        };
        let gamma = self.slice(m.gamma);
        let h = d_ln.len() as f64;
        let mut d_norm = vec![0.0; d_ln.len()];
        {
            let (gg, gb) = split_pair(grad, t[m.gamma].range(), t[m.beta].range());
            for k in 0..d_ln.len() {
                gg[k] += d_ln[k] * c.normed[k];
                gb[k] += d_ln[k];
                d_norm[k] = d_ln[k] * gamma[k];
            }
        }
        let mean_d = d_norm.iter().sum::<f64>() / h;
        let mean_dn = d_norm.iter().zip(&c.normed).map(|(a, b)| a * b).sum::<f64>() / h;
        let slope = self.config.leaky_slope;
        let d_pre: Vec<f64> = (0..d_norm.len())
            .map(|k| {
                let d_act = c.inv_std * (d_norm[k] - mean_d - c.normed[k] * mean_dn);
                if c.pre[k] > 0.0 {
                    d_act
                } else {
                    slope * d_act
                }
            })
            .collect();
        let (gw, gb) = split_pair(grad, t[m.w1].range(), t[m.b1].range());
        dense_backward(self.slice(m.w1), &c.input, &d_pre, gw, gb, want_dx)
    }

    /// Adds `d loss / d params` for one example into `grad` and returns the
    /// binary cross-entropy loss. `mask` is the dropout mask (None = no dropout).
    fn accumulate_gradient(&self, x: &FusionInput, y: f64, mask: Option<Vec<f64>>, scale: f64, grad: &mut [f64]) -> f64 {
        let cfg = &self.config;
        let c = self.forward_cached(x, mask);
        let loss = bce_with_logit(c.logit, y);
        let d_logit = (sigmoid(c.logit) - y) * scale;
        let t = &self.tensors;
        let s = &self.slots;

        let d_hidden = {
            let (gw, gb) = split_pair(grad, t[s.f2_w].range(), t[s.f2_b].range());
            dense_backward(self.slice(s.f2_w), &c.hidden, &[d_logit], gw, gb, true)
        };
        let d_h1: Vec<f64> = (0..d_hidden.len())
            .map(|k| d_hidden[k] * c.mask[k] * gelu_grad(c.h1[k]))
            .collect();
        let d_pooled = {
            let (gw, gb) = split_pair(grad, t[s.f1_w].range(), t[s.f1_b].range());
            dense_backward(self.slice(s.f1_w), &c.pooled, &d_h1, gw, gb, true)
        };

        let d = cfg.d_token;
        let (mut d_text, mut d_cat, mut d_num);
        match cfg.pooling {
            Pooling::MeanMaxConcat => {
                d_text = vec![0.0; d];
                d_cat = vec![0.0; d];
                d_num = vec![0.0; d];
                for k in 0..d {
                    let m = d_pooled[k] / 3.0;
                    d_text[k] += m;
                    d_cat[k] += m;
                    d_num[k] += m;
                    let g = d_pooled[d + k];
                    match c.argmax[k] {
                        0 => d_text[k] += g,
                        1 => d_cat[k] += g,
                        _ => d_num[k] += g,
                    }
                }
            }
            Pooling::Concat => {
                let dt = cfg.d_text;
                d_text = d_pooled[..dt].to_vec();
                d_cat = d_pooled[dt..dt + d].to_vec();
                d_num = d_pooled[dt + d..].to_vec();
            }
        }

        if let (TextRepr::Sparse(sv), Some(w), Some(b)) = (&x.text, s.text_w, s.text_b) {
            let dt = cfg.d_text;
            let w_off = t[w].offset;
            for (j, v) in sv.iter() {
                let row = &mut grad[w_off + j * dt..w_off + (j + 1) * dt];
                for k in 0..dt {
                    row[k] += v * d_text[k];
                }
            }
            let gb = &mut grad[t[b].range()];
            for k in 0..dt {
                gb[k] += d_text[k];
            }
        }

        let d_cat_in = self.mlp_backward(&s.cat, &c.cat, &d_cat, grad, true);
        let e = cfg.cat_embed_dim;
        for (j, &code) in x.categorical.iter().enumerate() {
            let off = t[s.cat_emb[j]].offset + code as usize * e;
            for k in 0..e {
                grad[off + k] += d_cat_in[j * e + k];
            }
        }
        self.mlp_backward(&s.num, &c.num, &d_num, grad, false);
        loss
    }

    /// Mean binary cross-entropy over a batch (no dropout).
    pub fn loss(&self, batch: &[FusionInput], labels: &[f64]) -> Result<f64> {
        if batch.len() != labels.len() || batch.is_empty() {
            return Err(Error::Invalid("batch and labels must be non-empty and equal length".into()));
        }
        let mut total = 0.0;
        for (x, &y) in batch.iter().zip(labels) {
            total += bce_with_logit(self.logit(x)?, y);
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of the mean batch loss (no dropout) and the loss itself.
    pub fn gradient(&self, batch: &[FusionInput], labels: &[f64]) -> Result<(Vec<f64>, f64)> {
        if batch.len() != labels.len() || batch.is_empty() {
            return Err(Error::Invalid("batch and labels must be non-empty and equal length".into()));
        }
        for x in batch {
            self.check_input(x)?;
        }
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in batch.iter().zip(labels) {
            loss += self.accumulate_gradient(x, y, None, scale, &mut grad);
        }
        Ok((grad, loss * scale))
    }
}

/// Two disjoint mutable sub-slices of `buf`; `a` must come before `b`.
fn split_pair(
    buf: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = buf.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}
