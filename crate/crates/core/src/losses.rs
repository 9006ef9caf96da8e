//! Training losses with analytic gradients.
//!
//! Every function returns `(loss, gradient)`; gradients are with respect to
//! the raw network outputs (logits, unnormalized 6D vectors, deltas).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::retrieval::{l1_embedding_loss, EmbeddingPair, RetrievalError};
use crate::rotation::{gram_schmidt, RotationError, RotationMatrix, SixDRep};
use crate::so3_grid::SoftLabelVector;

/// Distance of the clamped `acos` argument from ±1.
pub const ACOS_CLAMP: f64 = 1e-7;
pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no active bins")]
    NoActiveBins,
    #[error(transparent)]
    Rotation(#[from] RotationError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

fn check_len(expected: usize, got: usize) -> Result<(), LossError> {
    if expected == got {
        Ok(())
    } else {
        Err(LossError::LengthMismatch { expected, got })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Per-bin sigmoid binary cross-entropy against soft labels, averaged over
/// bins. Computed from logits: `−[y log σ(z) + (1−y) log(1−σ(z))] = softplus(z) − y z`.
pub fn soft_bce_loss(
    logits: &[f64],
    labels: &SoftLabelVector,
) -> Result<(f64, Vec<f64>), LossError> {
    check_len(labels.y.len(), logits.len())?;
    let n = logits.len() as f64;
    let loss = logits
        .iter()
        .zip(&labels.y)
        .map(|(&z, &y)| softplus(z) - y * z)
        .sum::<f64>()
        / n;
    let grad = logits
        .iter()
        .zip(&labels.y)
        .map(|(&z, &y)| (sigmoid(z) - y) / n)
        .collect();
    Ok((loss, grad))
}

/// `(1/N) Σ_{i ∈ active} GD(sixd_to_rotation(pred_i), target_i)` where `N`
/// is the bin count. Bins outside `active` get zero gradient.
pub fn delta_geodesic_loss(
    pred: &[SixDRep],
    targets: &[RotationMatrix],
    active: &[usize],
) -> Result<(f64, Vec<[f64; 6]>), LossError> {
    check_len(pred.len(), targets.len())?;
    if active.is_empty() {
        return Err(LossError::NoActiveBins);
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 6]; pred.len()];
    for &i in active {
        if i >= pred.len() {
            return Err(LossError::LengthMismatch {
                expected: pred.len(),
                got: i + 1,
            });
        }
        let frame = gram_schmidt(&pred[i])?;
        let t = targets[i].matrix();
        let (t1, t2, t3) = (
            t.column(0).into_owned(),
            t.column(1).into_owned(),
            t.column(2).into_owned(),
        );
        let trace = frame.b1.dot(&t1) + frame.b2.dot(&t2) + frame.b3.dot(&t3);
        let c = (trace - 1.0) / 2.0;
        let lim = 1.0 - ACOS_CLAMP;
        loss += c.clamp(-lim, lim).acos() / n;
        if c.abs() >= lim {
            continue;
        }
        // dL/dtrace; then trace = b1·t1 + b2·t2 + (b1 × b2)·t3.
        let s = -0.5 / (1.0 - c * c).sqrt() / n;
        let g_b1: Vector3<f64> = (t1 + frame.b2.cross(&t3)) * s;
        let g_b2: Vector3<f64> = (t2 + t3.cross(&frame.b1)) * s;
        let (g_a1, g_a2) = frame.backprop(g_b1, g_b2);
        grad[i] = [g_a1.x, g_a1.y, g_a1.z, g_a2.x, g_a2.y, g_a2.z];
    }
    Ok((loss, grad))
}

/// Component-wise Huber loss averaged over components.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<(f64, Vec<f64>), LossError> {
    check_len(target.len(), pred.len())?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let r = p - t;
        if r.abs() <= delta {
            loss += 0.5 * r * r;
            grad.push(r / n);
        } else {
            loss += delta * (r.abs() - 0.5 * delta);
            grad.push(delta * r.signum() / n);
        }
    }
    Ok((loss / n, grad))
}

/// Softmax cross-entropy; gradient is `softmax − onehot`.
pub fn cross_entropy_loss(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>), LossError> {
    if class >= logits.len() {
        return Err(LossError::ClassOutOfRange {
            class,
            classes: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
    let lse = m + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[class] -= 1.0;
    Ok((lse - logits[class], grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub embed: f64,
    pub cls: f64,
    pub bin_r: f64,
    pub delta_r: f64,
    pub bin_t: f64,
    pub delta_t: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "embed,cls,bin_r,delta_r,bin_t,delta_t,total";

    pub fn components(&self) -> [f64; 6] {
        [
            self.embed,
            self.cls,
            self.bin_r,
            self.delta_r,
            self.bin_t,
            self.delta_t,
        ]
    }

    pub fn with_total(mut self) -> Self {
        self.total = self.components().iter().sum();
        self
    }

    pub fn add(&mut self, o: &LossBreakdown) {
        self.embed += o.embed;
        self.cls += o.cls;
        self.bin_r += o.bin_r;
        self.delta_r += o.delta_r;
        self.bin_t += o.bin_t;
        self.delta_t += o.delta_t;
        self.total += o.total;
    }

    pub fn scale(&mut self, s: f64) {
        for v in [
            &mut self.embed,
            &mut self.cls,
            &mut self.bin_r,
            &mut self.delta_r,
            &mut self.bin_t,
            &mut self.delta_t,
            &mut self.total,
        ] {
            *v *= s;
        }
    }

    /// Shortest round-trip formatting, so equal values give equal bytes.
    pub fn csv_row(&self) -> String {
        let mut v: Vec<String> = self.components().iter().map(|x| format!("{x:?}")).collect();
        v.push(format!("{:?}", self.total));
        v.join(",")
    }
}

/// Raw head outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub embedding: EmbeddingPair,
    pub cls_logits: Vec<f64>,
    pub rot_logits: Vec<f64>,
    pub rot_deltas: Vec<[f64; 6]>,
    pub trans_logits: Vec<f64>,
    pub trans_deltas: Vec<[f64; 3]>,
}

/// Gradients with the same layout as [`HeadOutputs`].
pub type HeadGradients = HeadOutputs;

impl HeadOutputs {
    pub fn zeros_like(o: &HeadOutputs) -> Self {
        Self {
            embedding: EmbeddingPair::zeros(o.embedding.shape.len(), o.embedding.pose.len()),
            cls_logits: vec![0.0; o.cls_logits.len()],
            rot_logits: vec![0.0; o.rot_logits.len()],
            rot_deltas: vec![[0.0; 6]; o.rot_deltas.len()],
            trans_logits: vec![0.0; o.trans_logits.len()],
            trans_deltas: vec![[0.0; 3]; o.trans_deltas.len()],
        }
    }
}

/// Per-sample supervision. The translation and embedding targets are only
/// read in Stage II.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    pub class: usize,
    pub rot_labels: SoftLabelVector,
    /// `R_i · R_gt` for every bin `i` (only active entries are read).
    pub rot_delta_targets: Vec<RotationMatrix>,
    pub trans_bin: usize,
    pub trans_delta: [f64; 3],
    pub embedding: Option<EmbeddingPair>,
}

/// Unweighted sum of the six terms; Stage I leaves embed, bin_t and delta_t
/// at exactly zero with zero gradient.
pub fn total_loss(
    out: &HeadOutputs,
    tgt: &LossTargets,
    stage: Stage,
) -> Result<(LossBreakdown, HeadGradients), LossError> {
    let mut b = LossBreakdown::default();
    let mut g = HeadOutputs::zeros_like(out);

    let (l, gr) = cross_entropy_loss(&out.cls_logits, tgt.class)?;
    b.cls = l;
    g.cls_logits = gr;

    let (l, gr) = soft_bce_loss(&out.rot_logits, &tgt.rot_labels)?;
    b.bin_r = l;
    g.rot_logits = gr;

    let sixd: Vec<SixDRep> = out
        .rot_deltas
        .iter()
        .map(|d| SixDRep::from_slice(d))
        .collect::<Result<_, _>>()?;
    let (l, gr) = delta_geodesic_loss(&sixd, &tgt.rot_delta_targets, &tgt.rot_labels.active())?;
    b.delta_r = l;
    g.rot_deltas = gr;

    if stage == Stage::Two {
        let target = tgt.embedding.as_ref().ok_or(LossError::LengthMismatch {
            expected: 1,
            got: 0,
        })?;
        let (l, gr) = l1_embedding_loss(&out.embedding, target)?;
        b.embed = l;
        g.embedding = gr;

        let (l, gr) = cross_entropy_loss(&out.trans_logits, tgt.trans_bin)?;
        b.bin_t = l;
        g.trans_logits = gr;

        check_len(out.trans_logits.len(), out.trans_deltas.len())?;
        let (l, gr) = huber_loss(
            &out.trans_deltas[tgt.trans_bin],
            &tgt.trans_delta,
            DEFAULT_HUBER_DELTA,
        )?;
        b.delta_t = l;
        g.trans_deltas[tgt.trans_bin].copy_from_slice(&gr);
    }
    Ok((b.with_total(), g))
}
