//! Training objectives: box L1 and GIoU losses over a tube, token
//! cross-entropy for the time answer, and their weighted combination.
//!
//! Each loss that is trained through comes with an analytic gradient; the
//! central-difference [`numeric_gradient`] is the oracle they are checked
//! against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_giou, BBox, Tube};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_time: f64,
    pub lambda_space: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_time: 1.0,
            lambda_space: 1.0,
            lambda_l1: 3.0,
            lambda_giou: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_time, self.lambda_space, self.lambda_l1, self.lambda_giou];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be finite and non-negative, got {all:?}"
            )));
        }
        Ok(())
    }

    /// Weighted space loss from its L1 and GIoU parts.
    pub fn space(&self, l1: f64, giou: f64) -> f64 {
        self.lambda_l1 * l1 + self.lambda_giou * giou
    }
}

/// Next-token logits (`steps × vocab`) and the target token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    logits: Tensor,
    targets: Vec<usize>,
}

impl TokenBatch {
    pub fn new(logits: Tensor, targets: Vec<usize>) -> Result<Self> {
        let (steps, vocab) = logits.dims2()?;
        if steps == 0 || targets.is_empty() {
            return Err(Error::EmptyInput("token batch"));
        }
        if targets.len() != steps {
            return Err(Error::Shape(format!(
                "{} targets for {steps} steps",
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Shape(format!("target {t} outside vocabulary of {vocab}")));
        }
        Ok(Self { logits, targets })
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }
}

/// Pairs of (pred, gt) boxes over the ground-truth frame range. Predicted
/// frames outside that range never take part.
fn aligned<'a>(pred: &'a Tube, gt: &'a Tube) -> Result<Vec<(usize, &'a BBox, &'a BBox)>> {
    if pred.start_frame > gt.start_frame || pred.end_frame() < gt.end_frame() {
        return Err(Error::FrameRangeMismatch {
            pred_start: pred.start_frame,
            pred_end: pred.end_frame(),
            gt_start: gt.start_frame,
            gt_end: gt.end_frame(),
        });
    }
    Ok(gt
        .frames()
        .map(|(f, g)| {
            let k = f - pred.start_frame;
            (k, &pred.boxes[k], g)
        })
        .collect())
}

fn l1_distance(a: &BBox, b: &BBox) -> f64 {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()
}

// Identical zero-area pairs have no meaningful GIoU and are left out.
fn giou_excluded(a: &BBox, b: &BBox) -> bool {
    a.is_degenerate() && a == b
}

/// Mean over the ground-truth frames of the summed absolute coordinate error.
pub fn l1_loss(pred: &Tube, gt: &Tube) -> Result<f64> {
    let pairs = aligned(pred, gt)?;
    let total: f64 = pairs.iter().map(|(_, p, g)| l1_distance(p, g)).sum();
    Ok(total / pairs.len() as f64)
}

/// Mean over the ground-truth frames of `1 - GIoU`.
pub fn giou_loss(pred: &Tube, gt: &Tube) -> Result<f64> {
    let pairs = aligned(pred, gt)?;
    let terms: Vec<f64> = pairs
        .iter()
        .filter(|(_, p, g)| !giou_excluded(p, g))
        .map(|(_, p, g)| 1.0 - box_giou(p, g))
        .collect();
    if terms.is_empty() {
        return Ok(0.0);
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn space_loss(pred: &Tube, gt: &Tube, w: &LossWeights) -> Result<f64> {
    Ok(w.space(l1_loss(pred, gt)?, giou_loss(pred, gt)?))
}

/// Space loss and its gradient with respect to every predicted box
/// coordinate `(cx, cy, w, h)`, indexed like `pred.boxes`.
pub fn space_loss_grad(pred: &Tube, gt: &Tube, w: &LossWeights) -> Result<(f64, Vec<[f64; 4]>)> {
    let pairs = aligned(pred, gt)?;
    let mut grad = vec![[0.0; 4]; pred.len()];

    let n = pairs.len() as f64;
    let mut l1 = 0.0;
    for (k, p, g) in &pairs {
        l1 += l1_distance(p, g);
        let diffs = [p.cx - g.cx, p.cy - g.cy, p.w - g.w, p.h - g.h];
        for (slot, d) in grad[*k].iter_mut().zip(diffs) {
            *slot += w.lambda_l1 * sign(d) / n;
        }
    }

    let counted: Vec<_> = pairs.iter().filter(|(_, p, g)| !giou_excluded(p, g)).collect();
    let mut giou_total = 0.0;
    if !counted.is_empty() {
        let m = counted.len() as f64;
        for (k, p, g) in &counted {
            let (value, d_value) = giou_with_grad(p, g);
            giou_total += 1.0 - value;
            for (slot, d) in grad[*k].iter_mut().zip(d_value) {
                *slot -= w.lambda_giou * d / m;
            }
        }
        giou_total /= m;
    }

    Ok((w.lambda_l1 * l1 / n + w.lambda_giou * giou_total, grad))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// GIoU of `a` against a fixed `b`, with its gradient in `a`'s center
/// coordinates. Degenerate pairs are constant and get a zero gradient.
pub fn giou_with_grad(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let value = box_giou(a, b);
    if a.is_degenerate() || b.is_degenerate() {
        return (value, [0.0; 4]);
    }
    let ca = a.to_corners();
    let cb = b.to_corners();

    let iw_raw = ca.x2.min(cb.x2) - ca.x1.max(cb.x1);
    let ih_raw = ca.y2.min(cb.y2) - ca.y1.max(cb.y1);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let union = ca.area() + cb.area() - inter;
    let cw = ca.x2.max(cb.x2) - ca.x1.min(cb.x1);
    let ch = ca.y2.max(cb.y2) - ca.y1.min(cb.y1);
    let enclosing = cw * ch;

    // d/d(x1, y1, x2, y2) of the intersection width/height and enclosing extents
    let overlapping = iw_raw > 0.0 && ih_raw > 0.0;
    let d_iw = if overlapping {
        [if ca.x1 > cb.x1 { -1.0 } else { 0.0 }, 0.0, if ca.x2 < cb.x2 { 1.0 } else { 0.0 }, 0.0]
    } else {
        [0.0; 4]
    };
    let d_ih = if overlapping {
        [0.0, if ca.y1 > cb.y1 { -1.0 } else { 0.0 }, 0.0, if ca.y2 < cb.y2 { 1.0 } else { 0.0 }]
    } else {
        [0.0; 4]
    };
    let d_cw = [if ca.x1 < cb.x1 { -1.0 } else { 0.0 }, 0.0, if ca.x2 > cb.x2 { 1.0 } else { 0.0 }, 0.0];
    let d_ch = [0.0, if ca.y1 < cb.y1 { -1.0 } else { 0.0 }, 0.0, if ca.y2 > cb.y2 { 1.0 } else { 0.0 }];
    let (aw, ah) = (ca.x2 - ca.x1, ca.y2 - ca.y1);
    let d_area = [-ah, -aw, ah, aw];

    let mut d_corner = [0.0; 4];
    for i in 0..4 {
        let d_inter = d_iw[i] * ih + iw * d_ih[i];
        let d_union = d_area[i] - d_inter;
        let d_encl = d_cw[i] * ch + cw * d_ch[i];
        // GIoU = I/U - 1 + U/C
        d_corner[i] = d_inter / union - inter * d_union / (union * union) + d_union / enclosing
            - union * d_encl / (enclosing * enclosing);
    }
    (value, corners_to_center_grad(d_corner))
}

// Chain rule from (x1, y1, x2, y2) to (cx, cy, w, h).
fn corners_to_center_grad(d: [f64; 4]) -> [f64; 4] {
    [
        d[0] + d[2],
        d[1] + d[3],
        (d[2] - d[0]) / 2.0,
        (d[3] - d[1]) / 2.0,
    ]
}

fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[target] - lse
}

/// Mean next-token cross-entropy.
pub fn time_loss(batch: &TokenBatch) -> Result<f64> {
    let steps = batch.targets.len() as f64;
    let total: f64 = batch
        .logits
        .rows()
        .zip(&batch.targets)
        .map(|(row, &t)| -log_softmax_at(row, t))
        .sum();
    Ok(total / steps)
}

/// Time loss and its gradient with respect to the logits.
pub fn time_loss_grad(batch: &TokenBatch) -> Result<(f64, Tensor)> {
    let (steps, vocab) = batch.logits.dims2()?;
    let mut grad = Vec::with_capacity(steps * vocab);
    for (row, &t) in batch.logits.rows().zip(&batch.targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        grad.extend(exps.iter().enumerate().map(|(j, e)| {
            let onehot = if j == t { 1.0 } else { 0.0 };
            (e / z - onehot) / steps as f64
        }));
    }
    Ok((time_loss(batch)?, Tensor::new(vec![steps, vocab], grad)?))
}

pub fn total_loss(time: f64, space: f64, w: &LossWeights) -> Result<f64> {
    if !time.is_finite() || !space.is_finite() {
        return Err(Error::NonFinite("loss terms"));
    }
    Ok(w.lambda_time * time + w.lambda_space * space)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidConfig(format!("step {eps} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("function evaluation"));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}
