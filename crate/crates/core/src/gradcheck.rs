//! Analytic-versus-finite-difference gradient suite for the space loss, the
//! time loss, and the full decode path into the space loss.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{
    stub_frame_features, stub_text_embed, QueryGuidedDecoder, QueryLayout, SpaceHeadParams,
};
use crate::error::Result;
use crate::geometry::{BBox, Tube};
use crate::losses::{
    numeric_gradient, space_loss, space_loss_grad, time_loss, time_loss_grad, LossWeights,
    TokenBatch,
};
use crate::tensor::Tensor;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_CASES: usize = 100;
const FD_STEP: f64 = 1e-6;
// Minimum gap kept between coordinates that meet in a min/max or |.|.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub cases: usize,
    pub tolerance: f64,
    pub weights: LossWeights,
    /// Negative control: perturbs every analytic gradient before comparing.
    pub corrupt_analytic: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: DEFAULT_CASES,
            tolerance: DEFAULT_TOLERANCE,
            weights: LossWeights::default(),
            corrupt_analytic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    SpaceLoss,
    TimeLoss,
    DecodeSpaceLoss,
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckKind::SpaceLoss => "space_loss/boxes",
            CheckKind::TimeLoss => "time_loss/logits",
            CheckKind::DecodeSpaceLoss => "decode+space_loss/head",
        })
    }
}

#[derive(Debug, Clone)]
pub struct GradientCase {
    pub kind: CheckKind,
    pub seed: u64,
    pub n_params: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<GradientCase>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&GradientCase> {
        self.cases.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradientCase> {
        self.cases.iter().filter(|c| c.rel_error >= self.tolerance)
    }

    pub fn worst_of(&self, kind: CheckKind) -> Option<&GradientCase> {
        self.cases
            .iter()
            .filter(|c| c.kind == kind)
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `max |a - n| / max(‖a‖∞, ‖n‖∞)`, with a tiny floor on the denominator.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let linf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / linf(analytic).max(linf(numeric)).max(1e-8)
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox {
        cx: rng.random_range(0.25..0.75),
        cy: rng.random_range(0.25..0.75),
        w: rng.random_range(0.1..0.45),
        h: rng.random_range(0.1..0.45),
    }
}

/// True when `p` sits away from every non-differentiable point of the space
/// loss against `g`.
fn smooth_pair(p: &BBox, g: &BBox) -> bool {
    let (cp, cg) = (p.to_corners(), g.to_corners());
    let apart = |a: f64, b: f64| (a - b).abs() > KINK_MARGIN;
    apart(p.cx, g.cx)
        && apart(p.cy, g.cy)
        && apart(p.w, g.w)
        && apart(p.h, g.h)
        // corner orderings inside the min/max of intersection and hull
        && apart(cp.x1, cg.x1)
        && apart(cp.x2, cg.x2)
        && apart(cp.y1, cg.y1)
        && apart(cp.y2, cg.y2)
        // intersection width/height switching sign
        && apart(cp.x2, cg.x1)
        && apart(cg.x2, cp.x1)
        && apart(cp.y2, cg.y1)
        && apart(cg.y2, cp.y1)
}

fn corrupt(grad: &mut [f64], enabled: bool) {
    if enabled {
        for g in grad.iter_mut() {
            *g = *g * 1.01 + 1e-3;
        }
    }
}

fn flatten_boxes(boxes: &[BBox]) -> Vec<f64> {
    boxes.iter().flat_map(|b| <[f64; 4]>::from(*b)).collect()
}

fn boxes_from_flat(x: &[f64]) -> Vec<BBox> {
    x.chunks(4)
        .map(|c| BBox { cx: c[0], cy: c[1], w: c[2], h: c[3] })
        .collect()
}

fn check_space_loss(seed: u64, cfg: &GradcheckConfig) -> Result<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4usize);
    let start = rng.random_range(0..4usize);
    let gt_boxes: Vec<BBox> = (0..n).map(|_| random_box(&mut rng)).collect();
    let pred_boxes: Vec<BBox> = gt_boxes
        .iter()
        .map(|g| loop {
            let p = random_box(&mut rng);
            if smooth_pair(&p, g) {
                break p;
            }
        })
        .collect();
    let gt = Tube::new(start, gt_boxes)?;
    let pred = Tube::new(start, pred_boxes)?;

    let (_, grad) = space_loss_grad(&pred, &gt, &cfg.weights)?;
    let mut analytic: Vec<f64> = grad.into_iter().flatten().collect();
    corrupt(&mut analytic, cfg.corrupt_analytic);
    let numeric = numeric_gradient(
        |x| {
            let t = Tube { start_frame: start, boxes: boxes_from_flat(x) };
            space_loss(&t, &gt, &cfg.weights).unwrap_or(f64::NAN)
        },
        &flatten_boxes(&pred.boxes),
        FD_STEP,
    )?;
    Ok(GradientCase {
        kind: CheckKind::SpaceLoss,
        seed,
        n_params: analytic.len(),
        rel_error: relative_error(&analytic, &numeric),
    })
}

fn check_time_loss(seed: u64, cfg: &GradcheckConfig) -> Result<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7469_6d65);
    let steps = rng.random_range(1..=4usize);
    let vocab = rng.random_range(2..=8usize);
    let logits: Vec<f64> = (0..steps * vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
    let targets: Vec<usize> = (0..steps).map(|_| rng.random_range(0..vocab)).collect();
    let batch = TokenBatch::new(Tensor::new(vec![steps, vocab], logits.clone())?, targets.clone())?;

    let (_, grad) = time_loss_grad(&batch)?;
    let mut analytic = grad.into_data();
    corrupt(&mut analytic, cfg.corrupt_analytic);
    let numeric = numeric_gradient(
        |x| {
            Tensor::new(vec![steps, vocab], x.to_vec())
                .and_then(|t| TokenBatch::new(t, targets.clone()))
                .and_then(|b| time_loss(&b))
                .unwrap_or(f64::NAN)
        },
        &logits,
        FD_STEP,
    )?;
    Ok(GradientCase {
        kind: CheckKind::TimeLoss,
        seed,
        n_params: analytic.len(),
        rel_error: relative_error(&analytic, &numeric),
    })
}

fn check_decode_space_loss(seed: u64, cfg: &GradcheckConfig) -> Result<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6465_636f);
    let layout = QueryLayout::new(
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        rng.random_range(2..=8),
    )?;
    let features = stub_frame_features(&layout, seed);
    let caption: Vec<u32> = (0..rng.random_range(1..=5)).map(|_| rng.random_range(0..64)).collect();
    let text = stub_text_embed(&caption, layout.dim, seed);
    let first = rng.random_range(0..layout.n_frames);
    let last = rng.random_range(first..layout.n_frames);
    let range = (first, last);

    let decoder = QueryGuidedDecoder::new(SpaceHeadParams::random(layout.dim, seed));
    let decoded = decoder.decode_tube(range, &features, &text, &text)?;
    let gt_boxes: Vec<BBox> = decoded
        .boxes
        .iter()
        .map(|p| loop {
            let g = random_box(&mut rng);
            if smooth_pair(p, &g) {
                break g;
            }
        })
        .collect();
    let gt = Tube::new(first, gt_boxes)?;

    let (_, mut analytic) =
        decoder.space_loss_grad(range, &features, &text, &text, &gt, &cfg.weights)?;
    corrupt(&mut analytic, cfg.corrupt_analytic);
    let dim = layout.dim;
    let numeric = numeric_gradient(
        |x| {
            SpaceHeadParams::from_flat(dim, x)
                .and_then(|head| {
                    QueryGuidedDecoder::new(head).decode_tube(range, &features, &text, &text)
                })
                .and_then(|tube| space_loss(&tube, &gt, &cfg.weights))
                .unwrap_or(f64::NAN)
        },
        &decoder.head.to_flat(),
        FD_STEP,
    )?;
    Ok(GradientCase {
        kind: CheckKind::DecodeSpaceLoss,
        seed,
        n_params: analytic.len(),
        rel_error: relative_error(&analytic, &numeric),
    })
}

/// Runs `cfg.cases` seeds of each gradient check, starting at `cfg.seed`.
pub fn run_gradient_suite(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.weights.validate()?;
    let mut cases = Vec::with_capacity(3 * cfg.cases);
    for i in 0..cfg.cases as u64 {
        let seed = cfg.seed.wrapping_add(i);
        cases.push(check_space_loss(seed, cfg)?);
        cases.push(check_time_loss(seed, cfg)?);
        cases.push(check_decode_space_loss(seed, cfg)?);
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        cases,
    })
}
