//! MLP backbone with the embedding and prediction heads, batched
//! forward/backward over ndarray, and Adam.
//!
//! `h_k = relu(W_k h_{k-1} + b_k)` for `depth` hidden layers with `h_0 = x`,
//! then `e = tanh(W_e h + b_e) = [shape | pose]`. The class head reads the
//! shape part, the rotation heads read the pose part, and the translation
//! heads read the last hidden layer.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::losses::HeadOutputs;
use crate::retrieval::EmbeddingPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    /// Number of hidden layers, each `hidden` wide.
    #[serde(default = "one")]
    pub depth: usize,
    pub classes: usize,
    pub shape_dim: usize,
    pub pose_dim: usize,
    pub rot_bins: usize,
    pub trans_bins: usize,
}

fn one() -> usize {
    1
}

// Head layers, counted after the hidden layers.
const EMBED: usize = 0;
const CLS: usize = 1;
const ROT: usize = 2;
const DELTA: usize = 3;
const TBIN: usize = 4;
const TDELTA: usize = 5;

impl ModelDims {
    pub fn embedding_dim(&self) -> usize {
        self.shape_dim + self.pose_dim
    }

    /// `(out, in)` for every dense layer: hidden layers, then heads.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = (0..self.depth)
            .map(|k| (self.hidden, if k == 0 { self.input } else { self.hidden }))
            .collect();
        out.extend([
            (self.embedding_dim(), self.hidden),
            (self.classes, self.shape_dim),
            (self.rot_bins, self.pose_dim),
            (6 * self.rot_bins, self.pose_dim),
            (self.trans_bins, self.hidden),
            (3 * self.trans_bins, self.hidden),
        ]);
        out
    }

    fn head(&self, h: usize) -> usize {
        self.depth + h
    }

    /// Start offset of each layer's weights; biases follow the weights.
    fn offsets(&self) -> Vec<usize> {
        let mut out = vec![0];
        for (o, n) in self.layer_shapes() {
            out.push(out.last().unwrap() + o * n + o);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        *self.offsets().last().unwrap()
    }
}

/// Flat parameter vector plus the dims that give it structure; this is also
/// the checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub values: Vec<f64>,
}

fn layer<'a>(
    dims: &ModelDims,
    buf: &'a [f64],
    i: usize,
) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let (o, n) = dims.layer_shapes()[i];
    let off = dims.offsets()[i];
    let (w, rest) = buf[off..off + o * n + o].split_at(o * n);
    (
        ArrayView2::from_shape((o, n), w).expect("layer shape"),
        ArrayView1::from(rest),
    )
}

fn layer_mut<'a>(
    dims: &ModelDims,
    buf: &'a mut [f64],
    i: usize,
) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
    let (o, n) = dims.layer_shapes()[i];
    let off = dims.offsets()[i];
    let (w, rest) = buf[off..off + o * n + o].split_at_mut(o * n);
    (
        ArrayViewMut2::from_shape((o, n), w).expect("layer shape"),
        ArrayViewMut1::from(rest),
    )
}

/// Activations of one batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Output of every hidden layer.
    pub hidden: Vec<Array2<f64>>,
    pub embedding: Array2<f64>,
    pub cls: Array2<f64>,
    pub rot: Array2<f64>,
    pub delta: Array2<f64>,
    pub tbin: Array2<f64>,
    pub tdelta: Array2<f64>,
}

impl Activations {
    pub fn batch_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn head_outputs(&self, row: usize, dims: &ModelDims) -> HeadOutputs {
        let e = self.embedding.row(row);
        HeadOutputs {
            embedding: EmbeddingPair {
                shape: e.slice(s![..dims.shape_dim]).to_vec(),
                pose: e.slice(s![dims.shape_dim..]).to_vec(),
            },
            cls_logits: self.cls.row(row).to_vec(),
            rot_logits: self.rot.row(row).to_vec(),
            rot_deltas: chunks(self.delta.row(row)),
            trans_logits: self.tbin.row(row).to_vec(),
            trans_deltas: chunks(self.tdelta.row(row)),
        }
    }
}

fn chunks<const K: usize>(row: ArrayView1<f64>) -> Vec<[f64; K]> {
    row.to_vec()
        .chunks_exact(K)
        .map(|c| c.try_into().expect("chunk"))
        .collect()
}

fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

impl ModelParams {
    /// He-normal for the ReLU layers, `1/sqrt(fan_in)` normal elsewhere, zero
    /// biases except the 6D delta biases, which start at the identity.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let mut values = vec![0.0; dims.param_count()];
        for (i, (_, fan_in)) in dims.layer_shapes().iter().enumerate() {
            let gain = if i < dims.depth { 2.0 } else { 1.0 };
            let std = (gain / (*fan_in).max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let (mut w, mut b) = layer_mut(&dims, &mut values, i);
            w.iter_mut().for_each(|v| *v = normal.sample(rng));
            if i == dims.head(DELTA) {
                b.iter_mut()
                    .enumerate()
                    .for_each(|(k, v)| *v = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0][k % 6]);
            }
        }
        Self { dims, values }
    }

    /// Copies the class and rotation heads from a model with the same
    /// embedding and head sizes; the backbone is left alone.
    pub fn copy_embedding_heads(&mut self, from: &ModelParams) -> Result<(), LearnerError> {
        for h in [CLS, ROT, DELTA] {
            let (src_w, src_b) = layer(&from.dims, &from.values, from.dims.head(h));
            let (mut w, mut b) = layer_mut(&self.dims, &mut self.values, self.dims.head(h));
            if src_w.dim() != w.dim() {
                return Err(LearnerError::ShapeMismatch {
                    expected: w.len(),
                    got: src_w.len(),
                });
            }
            w.assign(&src_w);
            b.assign(&src_b);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.values.len() != self.dims.param_count() {
            return Err(LearnerError::ShapeMismatch {
                expected: self.dims.param_count(),
                got: self.values.len(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite);
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Activations {
        let d = &self.dims;
        let p = &self.values;
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(d.depth);
        for k in 0..d.depth {
            let (w, b) = layer(d, p, k);
            let input = hidden.last().map_or(x, |h| h.view());
            hidden.push(affine(input, w, b).mapv_into(|v| v.max(0.0)));
        }
        let last = hidden.last().expect("depth ≥ 1").view();
        let head = |h, input| {
            let (w, b) = layer(d, p, d.head(h));
            affine(input, w, b)
        };
        let embedding = head(EMBED, last).mapv_into(f64::tanh);
        let shape = embedding.slice(s![.., ..d.shape_dim]);
        let pose = embedding.slice(s![.., d.shape_dim..]);
        Activations {
            cls: head(CLS, shape),
            rot: head(ROT, pose),
            delta: head(DELTA, pose),
            tbin: head(TBIN, last),
            tdelta: head(TDELTA, last),
            embedding,
            hidden,
        }
    }

    /// Parameter gradient given gradients on every head output (rows are
    /// samples; any scaling by batch size is the caller's).
    pub fn backward(&self, x: ArrayView2<f64>, act: &Activations, g: &Activations) -> Vec<f64> {
        let d = &self.dims;
        let p = &self.values;
        let mut grad = vec![0.0; p.len()];
        let shape = act.embedding.slice(s![.., ..d.shape_dim]);
        let pose = act.embedding.slice(s![.., d.shape_dim..]);

        let mut accumulate = |i: usize, g_out: &Array2<f64>, input: ArrayView2<f64>| {
            let (mut gw, mut gb) = layer_mut(d, &mut grad, i);
            gw.assign(&g_out.t().dot(&input));
            gb.assign(&g_out.sum_axis(Axis(0)));
        };
        let last = act.hidden.last().expect("depth ≥ 1").view();
        let w_of = |h: usize| layer(d, p, d.head(h)).0;
        accumulate(d.head(CLS), &g.cls, shape);
        accumulate(d.head(ROT), &g.rot, pose);
        accumulate(d.head(DELTA), &g.delta, pose);
        accumulate(d.head(TBIN), &g.tbin, last);
        accumulate(d.head(TDELTA), &g.tdelta, last);

        let mut g_e = g.embedding.clone();
        g_e.slice_mut(s![.., ..d.shape_dim])
            .scaled_add(1.0, &g.cls.dot(&w_of(CLS)));
        let mut g_pose = g.rot.dot(&w_of(ROT));
        g_pose.scaled_add(1.0, &g.delta.dot(&w_of(DELTA)));
        g_e.slice_mut(s![.., d.shape_dim..])
            .scaled_add(1.0, &g_pose);
        g_e.zip_mut_with(&act.embedding, |ge, &e| *ge *= 1.0 - e * e);
        accumulate(d.head(EMBED), &g_e, last);

        let mut g_h = g_e.dot(&w_of(EMBED));
        g_h.scaled_add(1.0, &g.tbin.dot(&w_of(TBIN)));
        g_h.scaled_add(1.0, &g.tdelta.dot(&w_of(TDELTA)));
        for k in (0..d.depth).rev() {
            g_h.zip_mut_with(&act.hidden[k], |gh, &h| {
                if h <= 0.0 {
                    *gh = 0.0
                }
            });
            let input = if k == 0 { x } else { act.hidden[k - 1].view() };
            accumulate(k, &g_h, input);
            if k > 0 {
                g_h = g_h.dot(&layer(d, p, k).0);
            }
        }
        grad
    }
}

impl Activations {
    /// Zero gradients shaped like `act`.
    pub fn zeros_like(act: &Activations) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Self {
            hidden: act.hidden.iter().map(z).collect(),
            embedding: z(&act.embedding),
            cls: z(&act.cls),
            rot: z(&act.rot),
            delta: z(&act.delta),
            tbin: z(&act.tbin),
            tdelta: z(&act.tdelta),
        }
    }

    /// Writes one sample's head gradients, multiplied by `scale`.
    pub fn set_row(&mut self, row: usize, g: &HeadOutputs, scale: f64) {
        let put = |dst: &mut Array2<f64>, src: &[f64]| {
            dst.row_mut(row)
                .assign(&(Array1::from(src.to_vec()) * scale));
        };
        put(&mut self.embedding, &g.embedding.concat());
        put(&mut self.cls, &g.cls_logits);
        put(&mut self.rot, &g.rot_logits);
        put(&mut self.delta, g.rot_deltas.as_flattened());
        put(&mut self.tbin, &g.trans_logits);
        put(&mut self.tdelta, g.trans_deltas.as_flattened());
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place. Moments that decay below the
/// normal range are flushed to zero; subnormal arithmetic is very slow and
/// parameters with no gradient (always-empty pixels) would otherwise get
/// there after a few thousand steps.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), LearnerError> {
    for got in [grads.len(), state.m.len(), state.v.len()] {
        if got != params.len() {
            return Err(LearnerError::ShapeMismatch {
                expected: params.len(),
                got,
            });
        }
    }
    state.step += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    let flush = |x: f64| if x.abs() < f64::MIN_POSITIVE { 0.0 } else { x };
    let (step_size, inv_c2) = (lr / c1, 1.0 / c2);
    let n = params.len();
    let (m, v) = (&mut state.m[..n], &mut state.v[..n]);
    let grads = &grads[..n];
    for i in 0..n {
        let g = grads[i];
        m[i] = flush(ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g);
        v[i] = flush(ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g);
        params[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + ADAM_EPSILON);
    }
    Ok(())
}
