//! Query-guided space decoder at desk scale.
//!
//! Per frame `i` the decoder receives the last-layer embeddings of that frame's
//! visual tokens (`S×D`), of its spatio-temporal query (`1×D`), and of the
//! caption (`L×D`, used as both keys and values). Two parameter-free
//! attention passes produce a `1×D` summary which a small MLP maps to a box:
//!
//! ```text
//! enhanced = softmax(qv·ktᵀ/√D)·vt                  (S×D)
//! summary  = softmax(qs·enhancedᵀ/√D)·enhanced      (1×D)
//! box      = sigmoid(W2·gelu(W1·summary + b1) + b2)
//! ```
//!
//! The encoders and the language model are out of reach here, so hash-seeded
//! stub embedders stand in for them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BBox, Tube};
use crate::losses::{space_loss_grad, LossWeights};
use crate::tensor::Tensor;

/// Frame count, visual tokens per frame, and embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryLayout {
    pub n_frames: usize,
    pub tokens_per_frame: usize,
    pub dim: usize,
}

impl QueryLayout {
    pub fn new(n_frames: usize, tokens_per_frame: usize, dim: usize) -> Result<Self> {
        if n_frames == 0 || tokens_per_frame == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "layout ({n_frames}, {tokens_per_frame}, {dim}) needs every size >= 1"
            )));
        }
        Ok(Self {
            n_frames,
            tokens_per_frame,
            dim,
        })
    }
}

// Stub embedder domains, so vision, text and query rows never share a stream.
const VISION_DOMAIN: u64 = 0x7669_7369_6f6e;
const TEXT_DOMAIN: u64 = 0x7465_7874;
const QUERY_DOMAIN: u64 = 0x71_7565_7279;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, domain: u64, id: u64, row: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed ^ domain) ^ id) ^ row)
}

fn unit_row(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let row: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return row.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// Deterministic unit-norm `S×D` stand-in for one frame's projected visual
/// features.
pub fn stub_vision_embed(frame_id: u64, layout: &QueryLayout, seed: u64) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..layout.tokens_per_frame as u64)
        .map(|r| unit_row(stream_seed(seed, VISION_DOMAIN, frame_id, r), layout.dim))
        .collect();
    Tensor::from_rows(&rows).expect("rows share the layout width")
}

/// Deterministic unit-norm `len×D` stand-in for text token embeddings; equal
/// token ids map to equal rows.
pub fn stub_text_embed(tokens: &[u32], dim: usize, seed: u64) -> Tensor {
    let rows: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| unit_row(stream_seed(seed, TEXT_DOMAIN, u64::from(t), 0), dim))
        .collect();
    if rows.is_empty() {
        return Tensor::zeros(vec![0, dim]);
    }
    Tensor::from_rows(&rows).expect("rows share one width")
}

/// Deterministic unit-norm `1×D` stand-in for the query token of frame `frame_id`.
pub fn stub_query_embed(frame_id: u64, dim: usize, seed: u64) -> Tensor {
    Tensor::new(
        vec![1, dim],
        unit_row(stream_seed(seed, QUERY_DOMAIN, frame_id, 0), dim),
    )
    .expect("one row of width dim")
}

/// Maps whitespace-separated words to stable token ids.
pub fn hash_tokens(text: &str, vocab: u32) -> Vec<u32> {
    text.split_whitespace()
        .map(|w| {
            let h = w
                .to_lowercase()
                .bytes()
                .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                    (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
                });
            (h % u64::from(vocab.max(1))) as u32
        })
        .collect()
}

/// Places each frame's query right after its visual tokens:
/// `(N, S, D)` and `(N, 1, D)` become `(N, S + 1, D)`.
pub fn interleave_queries(visual: &Tensor, queries: &Tensor) -> Result<Tensor> {
    let (n, s, d) = visual.dims3()?;
    let (qn, qs, qd) = queries.dims3()?;
    if qn != n || qs != 1 || qd != d {
        return Err(Error::Shape(format!(
            "visual {:?} and queries {:?} do not interleave",
            visual.shape(),
            queries.shape()
        )));
    }
    let mut data = Vec::with_capacity(n * (s + 1) * d);
    for i in 0..n {
        data.extend_from_slice(&visual.data()[i * s * d..(i + 1) * s * d]);
        data.extend_from_slice(&queries.data()[i * d..(i + 1) * d]);
    }
    Tensor::new(vec![n, s + 1, d], data)
}

/// Splits an interleaved `(N, S + 1, D)` sequence back into visual tokens and
/// queries.
pub fn deinterleave(interleaved: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, s1, d) = interleaved.dims3()?;
    if s1 < 2 {
        return Err(Error::Shape(format!(
            "interleaved block of {s1} rows has no visual tokens"
        )));
    }
    let s = s1 - 1;
    let mut visual = Vec::with_capacity(n * s * d);
    let mut queries = Vec::with_capacity(n * d);
    for block in interleaved.data().chunks(s1 * d) {
        visual.extend_from_slice(&block[..s * d]);
        queries.extend_from_slice(&block[s * d..]);
    }
    Ok((
        Tensor::new(vec![n, s, d], visual)?,
        Tensor::new(vec![n, 1, d], queries)?,
    ))
}

/// Flat position of frame `i`'s query inside the interleaved token sequence.
pub fn query_position(frame: usize, tokens_per_frame: usize) -> usize {
    (frame + 1) * (tokens_per_frame + 1) - 1
}

/// Row-stochastic attention weights `softmax(q·kᵀ/√D)`.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (n, d) = q.dims2()?;
    let (m, kd) = k.dims2()?;
    if kd != d {
        return Err(Error::Shape(format!("query width {d} vs key width {kd}")));
    }
    if m == 0 {
        return Err(Error::EmptyInput("attention keys"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = Vec::with_capacity(n * m);
    for qi in q.rows() {
        let scores: Vec<f64> = k
            .rows()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        weights.extend(exps.iter().map(|e| e / z));
    }
    Tensor::new(vec![n, m], weights)
}

/// Scaled dot-product attention without projections.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, d) = q.dims2()?;
    let (m, _) = k.dims2()?;
    let (vm, vd) = v.dims2()?;
    if vm != m || vd != d {
        return Err(Error::Shape(format!(
            "values {:?} do not match keys {:?}",
            v.shape(),
            k.shape()
        )));
    }
    let weights = attention_weights(q, k)?;
    let mut out = Vec::with_capacity(weights.shape()[0] * d);
    for w in weights.rows() {
        let mut acc = vec![0.0; d];
        for (wj, vj) in w.iter().zip(v.rows()) {
            for (a, x) in acc.iter_mut().zip(vj) {
                *a += wj * x;
            }
        }
        out.extend(acc);
    }
    Tensor::new(vec![weights.shape()[0], d], out)
}

/// Anything that owns trainable tensors.
pub trait Parameterized {
    fn parameters(&self) -> Vec<(&'static str, &Tensor)>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Caption-conditioned enhancement of the frame tokens, then query-over-tokens
/// attention. Holds no state.
#[derive(Debug, Clone, Copy, Default)]
pub struct DualCrossAttention;

impl DualCrossAttention {
    pub fn apply(&self, qv: &Tensor, qs: &Tensor, kt: &Tensor, vt: &Tensor) -> Result<Tensor> {
        let (_, d) = qv.dims2()?;
        let (qn, qd) = qs.dims2()?;
        if qn != 1 || qd != d {
            return Err(Error::Shape(format!(
                "query must be 1x{d}, got {:?}",
                qs.shape()
            )));
        }
        let enhanced = attention(qv, kt, vt)?;
        attention(qs, &enhanced, &enhanced)
    }
}

impl Parameterized for DualCrossAttention {
    fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }
}

pub fn dual_cross_attention(qv: &Tensor, qs: &Tensor, kt: &Tensor, vt: &Tensor) -> Result<Tensor> {
    DualCrossAttention.apply(qv, qs, kt, vt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// tanh approximation of GELU
    Gelu,
}

impl Activation {
    fn forward(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two-layer box head `D → D → 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceHeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

impl SpaceHeadParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w1: Tensor::zeros(vec![dim, dim]),
            b1: Tensor::zeros(vec![dim]),
            w2: Tensor::zeros(vec![4, dim]),
            b2: Tensor::zeros(vec![4]),
            activation: Activation::Gelu,
        }
    }

    /// Uniform Glorot-style initialization from `seed`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6865_6164));
        let mut fill = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let b_in = (6.0 / (2 * dim) as f64).sqrt();
        let b_out = (6.0 / (dim + 4) as f64).sqrt();
        let w1 = fill(dim * dim, b_in);
        let b1 = fill(dim, 0.1);
        let w2 = fill(4 * dim, b_out);
        let b2 = fill(4, 0.1);
        Self {
            w1: Tensor::new(vec![dim, dim], w1).expect("dim x dim"),
            b1: Tensor::new(vec![dim], b1).expect("dim"),
            w2: Tensor::new(vec![4, dim], w2).expect("4 x dim"),
            b2: Tensor::new(vec![4], b2).expect("4"),
            activation: Activation::Gelu,
        }
    }

    pub fn dim(&self) -> usize {
        self.b1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let ok = self.w1.shape() == [d, d]
            && self.b1.shape() == [d]
            && self.w2.shape() == [4, d]
            && self.b2.shape() == [4];
        if !ok {
            return Err(Error::Shape(format!(
                "inconsistent head shapes w1 {:?} b1 {:?} w2 {:?} b2 {:?}",
                self.w1.shape(),
                self.b1.shape(),
                self.w2.shape(),
                self.b2.shape()
            )));
        }
        Ok(())
    }

    /// Parameters flattened in `w1, b1, w2, b2` order.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self> {
        let sizes = [dim * dim, dim, 4 * dim, 4];
        if flat.len() != sizes.iter().sum::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for a head of width {dim}",
                flat.len()
            )));
        }
        let (w1, rest) = flat.split_at(sizes[0]);
        let (b1, rest) = rest.split_at(sizes[1]);
        let (w2, b2) = rest.split_at(sizes[2]);
        Ok(Self {
            w1: Tensor::new(vec![dim, dim], w1.to_vec())?,
            b1: Tensor::new(vec![dim], b1.to_vec())?,
            w2: Tensor::new(vec![4, dim], w2.to_vec())?,
            b2: Tensor::new(vec![4], b2.to_vec())?,
            activation: Activation::Gelu,
        })
    }
}

impl Parameterized for SpaceHeadParams {
    fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("space_head.w1", &self.w1),
            ("space_head.b1", &self.b1),
            ("space_head.w2", &self.w2),
            ("space_head.b2", &self.b2),
        ]
    }
}

/// Intermediate activations of one head evaluation, kept for backprop.
#[derive(Debug, Clone)]
pub struct SpaceHeadTrace {
    input: Vec<f64>,
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    output: [f64; 4],
}

impl SpaceHeadTrace {
    pub fn bbox(&self) -> BBox {
        let [cx, cy, w, h] = self.output;
        BBox { cx, cy, w, h }
    }
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    w.rows()
        .zip(b.data())
        .map(|(row, bias)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + bias)
        .collect()
}

pub fn space_head_forward(s: &Tensor, params: &SpaceHeadParams) -> Result<SpaceHeadTrace> {
    params.validate()?;
    let (rows, d) = s.dims2()?;
    if rows != 1 || d != params.dim() {
        return Err(Error::Shape(format!(
            "head expects 1x{}, got {:?}",
            params.dim(),
            s.shape()
        )));
    }
    let input = s.data().to_vec();
    let pre_hidden = affine(&params.w1, &params.b1, &input);
    let hidden: Vec<f64> = pre_hidden.iter().map(|&x| params.activation.forward(x)).collect();
    let logits = affine(&params.w2, &params.b2, &hidden);
    let output = [
        sigmoid(logits[0]),
        sigmoid(logits[1]),
        sigmoid(logits[2]),
        sigmoid(logits[3]),
    ];
    if hidden.iter().chain(&logits).chain(&output).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("space head activations"));
    }
    Ok(SpaceHeadTrace {
        input,
        pre_hidden,
        hidden,
        output,
    })
}

/// Box `(cx, cy, w, h)` for one frame summary; every coordinate in `(0, 1)`.
pub fn space_head(s: &Tensor, params: &SpaceHeadParams) -> Result<BBox> {
    Ok(space_head_forward(s, params)?.bbox())
}

/// Gradient of a scalar loss with respect to the head parameters, given the
/// loss gradient at the box output. Returned flat, in [`SpaceHeadParams::to_flat`] order.
pub fn space_head_backward(trace: &SpaceHeadTrace, d_box: [f64; 4], params: &SpaceHeadParams) -> Vec<f64> {
    let d = params.dim();
    let d_logits: Vec<f64> = trace
        .output
        .iter()
        .zip(d_box)
        .map(|(y, g)| g * y * (1.0 - y))
        .collect();
    let mut d_hidden = vec![0.0; d];
    for (row, g) in params.w2.rows().zip(&d_logits) {
        for (acc, w) in d_hidden.iter_mut().zip(row) {
            *acc += w * g;
        }
    }
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&trace.pre_hidden)
        .map(|(g, &z)| g * params.activation.derivative(z))
        .collect();

    let mut grad = Vec::with_capacity(d * d + d + 4 * d + 4);
    for g in &d_pre {
        grad.extend(trace.input.iter().map(|x| g * x));
    }
    grad.extend_from_slice(&d_pre);
    for g in &d_logits {
        grad.extend(trace.hidden.iter().map(|h| g * h));
    }
    grad.extend_from_slice(&d_logits);
    grad
}

/// Last-layer embeddings of one frame's visual tokens (`S×D`) and its query (`1×D`).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub visual: Tensor,
    pub query: Tensor,
}

/// Decoder holding the only trainable piece of the decode path.
#[derive(Debug, Clone)]
pub struct QueryGuidedDecoder {
    pub attention: DualCrossAttention,
    pub head: SpaceHeadParams,
}

impl QueryGuidedDecoder {
    pub fn new(head: SpaceHeadParams) -> Self {
        Self {
            attention: DualCrossAttention,
            head,
        }
    }

    fn frame_trace(&self, f: &FrameFeatures, kt: &Tensor, vt: &Tensor) -> Result<SpaceHeadTrace> {
        let summary = self.attention.apply(&f.visual, &f.query, kt, vt)?;
        space_head_forward(&summary, &self.head)
    }

    fn traces(
        &self,
        frame_range: (usize, usize),
        features: &BTreeMap<usize, FrameFeatures>,
        kt: &Tensor,
        vt: &Tensor,
    ) -> Result<Vec<SpaceHeadTrace>> {
        let (first, last) = frame_range;
        if first > last {
            return Err(Error::InvalidSpan(format!("frame range [{first}, {last}] is inverted")));
        }
        if let Some(missing) = (first..=last).find(|f| !features.contains_key(f)) {
            return Err(Error::MissingFrame(missing));
        }
        (first..=last)
            .into_par_iter()
            .map(|f| self.frame_trace(&features[&f], kt, vt))
            .collect()
    }

    /// One decoded box per frame of `frame_range`, in frame order.
    pub fn decode_tube(
        &self,
        frame_range: (usize, usize),
        features: &BTreeMap<usize, FrameFeatures>,
        kt: &Tensor,
        vt: &Tensor,
    ) -> Result<Tube> {
        let boxes = self
            .traces(frame_range, features, kt, vt)?
            .iter()
            .map(SpaceHeadTrace::bbox)
            .collect();
        Tube::new(frame_range.0, boxes)
    }

    /// Space loss of the decoded tube against `gt` and its gradient with
    /// respect to the head parameters (flat).
    pub fn space_loss_grad(
        &self,
        frame_range: (usize, usize),
        features: &BTreeMap<usize, FrameFeatures>,
        kt: &Tensor,
        vt: &Tensor,
        gt: &Tube,
        weights: &LossWeights,
    ) -> Result<(f64, Vec<f64>)> {
        let traces = self.traces(frame_range, features, kt, vt)?;
        let tube = Tube::new(frame_range.0, traces.iter().map(SpaceHeadTrace::bbox).collect())?;
        let (loss, d_boxes) = space_loss_grad(&tube, gt, weights)?;
        let mut grad = vec![0.0; self.head.num_parameters()];
        for (trace, d_box) in traces.iter().zip(d_boxes) {
            if d_box == [0.0; 4] {
                continue;
            }
            for (acc, g) in grad.iter_mut().zip(space_head_backward(trace, d_box, &self.head)) {
                *acc += g;
            }
        }
        Ok((loss, grad))
    }
}

impl Parameterized for QueryGuidedDecoder {
    fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        let mut all = self.attention.parameters();
        all.extend(self.head.parameters());
        all
    }
}

pub fn decode_tube(
    frame_range: (usize, usize),
    features: &BTreeMap<usize, FrameFeatures>,
    kt: &Tensor,
    vt: &Tensor,
    params: &SpaceHeadParams,
) -> Result<Tube> {
    QueryGuidedDecoder::new(params.clone()).decode_tube(frame_range, features, kt, vt)
}

/// Stub features for every frame of `layout`, keyed by frame index.
pub fn stub_frame_features(layout: &QueryLayout, seed: u64) -> BTreeMap<usize, FrameFeatures> {
    (0..layout.n_frames)
        .map(|i| {
            (
                i,
                FrameFeatures {
                    visual: stub_vision_embed(i as u64, layout, seed),
                    query: stub_query_embed(i as u64, layout.dim, seed),
                },
            )
        })
        .collect()
}
