//! Sample- and dataset-level grounding metrics.
//!
//! * STVG: m_tIoU, m_vIoU and vIoU@R over (span, tube) predictions.
//! * VTG: R@1 at temporal IoU thresholds.
//! * REC: accuracy at a box IoU threshold.
//!
//! Per-sample scores are computed in parallel and reduced sequentially, in
//! input order, with compensated summation.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, clamp_box, temporal_iou, BBox, TimeSpan, Tube};
use crate::sequencing::{timespan_to_frame_range, FrameGrid};

pub const DEFAULT_VIOU_THRESHOLDS: [f64; 2] = [0.3, 0.5];
pub const DEFAULT_RECALL_THRESHOLDS: [f64; 2] = [0.5, 0.7];
pub const DEFAULT_REC_THRESHOLD: f64 = 0.5;

/// Ground truth for one grounding query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSample {
    pub id: String,
    pub duration_s: f64,
    #[serde(default)]
    pub caption: String,
    #[serde(rename = "span", alias = "gt_span")]
    pub gt_span: TimeSpan,
    #[serde(rename = "tube", alias = "gt_tube")]
    pub gt_tube: Tube,
    pub frame_timestamps: Vec<f64>,
}

impl GroundingSample {
    pub fn grid(&self) -> Result<FrameGrid> {
        FrameGrid::new(self.duration_s, self.frame_timestamps.clone())
    }
}

/// A system's answer for one query. Temporal-only systems leave `tube` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub span: TimeSpan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<Tube>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_timestamps: Option<Vec<f64>>,
}

/// Percent scores keyed by threshold, kept in ascending threshold order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdScores(pub Vec<(f64, f64)>);

impl ThresholdScores {
    pub fn get(&self, threshold: f64) -> Option<f64> {
        self.0
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-12)
            .map(|&(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.0.iter()
    }

    fn rounded(&self) -> Self {
        Self(self.0.iter().map(|&(t, v)| (t, round1(v))).collect())
    }
}

impl Serialize for ThresholdScores {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (t, v) in &self.0 {
            map.serialize_entry(&t.to_string(), v)?;
        }
        map.end()
    }
}

/// Dataset-level STVG scores, all in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StvgReport {
    #[serde(rename = "m_tIoU")]
    pub m_tiou: f64,
    #[serde(rename = "m_vIoU")]
    pub m_viou: f64,
    #[serde(rename = "vIoU_at")]
    pub viou_at: ThresholdScores,
    pub n_samples: usize,
}

impl StvgReport {
    /// Copy with every percentage rounded to one decimal place.
    pub fn rounded(&self) -> Self {
        Self {
            m_tiou: round1(self.m_tiou),
            m_viou: round1(self.m_viou),
            viou_at: self.viou_at.rounded(),
            n_samples: self.n_samples,
        }
    }
}

impl fmt::Display for StvgReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8} {:>8}", "m_tIoU", "m_vIoU")?;
        for (t, _) in self.viou_at.iter() {
            write!(f, " {:>9}", format!("vIoU@{t}"))?;
        }
        writeln!(f, " {:>9}", "samples")?;
        write!(f, "{:>8.1} {:>8.1}", self.m_tiou, self.m_viou)?;
        for (_, v) in self.viou_at.iter() {
            write!(f, " {v:>9.1}")?;
        }
        write!(f, " {:>9}", self.n_samples)
    }
}

/// VTG scores: R@1 at each temporal IoU threshold, plus mean tIoU.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VtgReport {
    #[serde(rename = "R@1")]
    pub recall_at_1: ThresholdScores,
    #[serde(rename = "m_tIoU")]
    pub m_tiou: f64,
    pub n_samples: usize,
}

impl VtgReport {
    pub fn rounded(&self) -> Self {
        Self {
            recall_at_1: self.recall_at_1.rounded(),
            m_tiou: round1(self.m_tiou),
            n_samples: self.n_samples,
        }
    }
}

impl fmt::Display for VtgReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, _) in self.recall_at_1.iter() {
            write!(f, "{:>12} ", format!("R@1_IoU={t}"))?;
        }
        writeln!(f, "{:>8} {:>9}", "m_tIoU", "samples")?;
        for (_, v) in self.recall_at_1.iter() {
            write!(f, "{v:>12.1} ")?;
        }
        write!(f, "{:>8.1} {:>9}", self.m_tiou, self.n_samples)
    }
}

/// REC accuracy at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecReport {
    pub accuracy: f64,
    pub threshold: f64,
    pub n_samples: usize,
}

impl RecReport {
    pub fn rounded(&self) -> Self {
        Self {
            accuracy: round1(self.accuracy),
            ..self.clone()
        }
    }
}

impl fmt::Display for RecReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>12} {:>9}", format!("Acc@{}", self.threshold), "samples")?;
        write!(f, "{:>12.1} {:>9}", self.accuracy, self.n_samples)
    }
}

pub fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Kahan-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().copied().collect::<KahanSum>().total() / values.len() as f64
}

fn percent_where(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    let hits = values.iter().filter(|&&v| pred(v)).count();
    hits as f64 / values.len() as f64 * 100.0
}

fn normalized_thresholds(thresholds: &[f64]) -> Result<Vec<f64>> {
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidConfig(format!("threshold {t} outside [0, 1]")));
    }
    let mut out = thresholds.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

fn check_grid_frames(id: &str, tube: &Tube, grid: &FrameGrid, what: &str) -> Result<()> {
    if tube.end_frame() >= grid.len() {
        return Err(Error::GridMismatch {
            id: id.to_string(),
            reason: format!(
                "{what} tube reaches frame {} but the grid has {} frames",
                tube.end_frame(),
                grid.len()
            ),
        });
    }
    Ok(())
}

/// Spatio-temporal IoU of one prediction: summed per-frame box IoU over the
/// frames both tubes share, divided by the number of frames either covers.
///
/// The predicted tube only counts inside its own span, clipped to the video.
pub fn viou(pred: &Prediction, gt: &GroundingSample) -> Result<f64> {
    if pred.id != gt.id {
        return Err(Error::IdMismatch {
            missing: vec![gt.id.clone()],
            duplicate: vec![],
            unexpected: vec![pred.id.clone()],
        });
    }
    let grid = gt.grid()?;
    if let Some(ts) = &pred.frame_timestamps {
        let same = ts.len() == grid.len()
            && ts.iter().zip(&grid.timestamps).all(|(a, b)| (a - b).abs() < 1e-9);
        if !same {
            return Err(Error::GridMismatch {
                id: gt.id.clone(),
                reason: "prediction was made on a different frame grid".into(),
            });
        }
    }
    check_grid_frames(&gt.id, &gt.gt_tube, &grid, "ground-truth")?;
    let Some(tube) = &pred.tube else {
        return Ok(0.0);
    };
    check_grid_frames(&gt.id, tube, &grid, "predicted")?;

    let (span_first, span_last) = timespan_to_frame_range(&pred.span.clip_to(gt.duration_s), &grid);
    let pred_first = tube.start_frame.max(span_first);
    let pred_last = tube.end_frame().min(span_last);
    let pred_len = (pred_last + 1).saturating_sub(pred_first);

    let gt_tube = &gt.gt_tube;
    let inter_first = pred_first.max(gt_tube.start_frame);
    let inter_last = pred_last.min(gt_tube.end_frame());

    let mut overlap = KahanSum::default();
    let mut n_inter = 0;
    if pred_len > 0 && inter_first <= inter_last {
        for frame in inter_first..=inter_last {
            let (Some(p), Some(g)) = (tube.get(frame), gt_tube.get(frame)) else {
                unreachable!("frame {frame} lies inside both tubes");
            };
            overlap.add(box_iou(&clamp_box(p)?, &clamp_box(g)?));
            n_inter += 1;
        }
    }
    let n_union = pred_len + gt_tube.len() - n_inter;
    if n_union == 0 {
        return Ok(0.0);
    }
    Ok(overlap.total() / n_union as f64)
}

/// Pairs every ground-truth sample with its prediction, failing with the full
/// list of missing, duplicated and unexpected ids.
fn align<'a, G, P>(
    gts: &'a [G],
    preds: &'a [P],
    gt_id: impl Fn(&G) -> &str,
    pred_id: impl Fn(&P) -> &str,
) -> Result<Vec<(&'a G, &'a P)>> {
    let mut by_id: HashMap<&str, &P> = HashMap::with_capacity(preds.len());
    let mut duplicate = Vec::new();
    for p in preds {
        if by_id.insert(pred_id(p), p).is_some() {
            duplicate.push(pred_id(p).to_string());
        }
    }
    let mut seen_gt = HashSet::with_capacity(gts.len());
    let mut missing = Vec::new();
    for g in gts {
        if !seen_gt.insert(gt_id(g)) {
            duplicate.push(gt_id(g).to_string());
        }
        if !by_id.contains_key(gt_id(g)) {
            missing.push(gt_id(g).to_string());
        }
    }
    let unexpected: Vec<String> = preds
        .iter()
        .map(&pred_id)
        .filter(|id| !seen_gt.contains(id))
        .map(str::to_string)
        .collect();
    if !(missing.is_empty() && duplicate.is_empty() && unexpected.is_empty()) {
        duplicate.sort();
        duplicate.dedup();
        return Err(Error::IdMismatch {
            missing,
            duplicate,
            unexpected,
        });
    }
    Ok(gts.iter().map(|g| (g, by_id[gt_id(g)])).collect())
}

/// Dataset-level STVG evaluation. `vIoU@R` counts samples with vIoU strictly
/// above `R`.
pub fn evaluate_stvg(
    preds: &[Prediction],
    gts: &[GroundingSample],
    thresholds: &[f64],
) -> Result<StvgReport> {
    if gts.is_empty() {
        return Err(Error::EmptyInput("ground-truth samples"));
    }
    let thresholds = normalized_thresholds(thresholds)?;
    let pairs = align(gts, preds, |g| &g.id, |p| &p.id)?;
    let scores: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(g, p)| Ok((temporal_iou(&p.span, &g.gt_span), viou(p, g)?)))
        .collect::<Result<_>>()?;
    let tious: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let vious: Vec<f64> = scores.iter().map(|s| s.1).collect();
    Ok(StvgReport {
        m_tiou: mean(&tious) * 100.0,
        m_viou: mean(&vious) * 100.0,
        viou_at: ThresholdScores(
            thresholds
                .iter()
                .map(|&r| (r, percent_where(&vious, |v| v > r)))
                .collect(),
        ),
        n_samples: gts.len(),
    })
}

/// Percentage of box pairs whose IoU reaches `threshold`.
pub fn rec_accuracy(pred_boxes: &[BBox], gt_boxes: &[BBox], threshold: f64) -> Result<f64> {
    if pred_boxes.len() != gt_boxes.len() {
        return Err(Error::LengthMismatch {
            left: pred_boxes.len(),
            right: gt_boxes.len(),
        });
    }
    if gt_boxes.is_empty() {
        return Err(Error::EmptyInput("box pairs"));
    }
    normalized_thresholds(&[threshold])?;
    let ious = pred_boxes
        .par_iter()
        .zip(gt_boxes)
        .map(|(p, g)| Ok(box_iou(&clamp_box(p)?, &clamp_box(g)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(percent_where(&ious, |v| v >= threshold))
}

/// R@1 for single-answer temporal grounding: per threshold, the percentage of
/// samples whose temporal IoU reaches it.
pub fn recall_at_1(
    pred_spans: &[TimeSpan],
    gt_spans: &[TimeSpan],
    thresholds: &[f64],
) -> Result<ThresholdScores> {
    let tious = paired_tious(pred_spans, gt_spans)?;
    let thresholds = normalized_thresholds(thresholds)?;
    Ok(ThresholdScores(
        thresholds
            .iter()
            .map(|&m| (m, percent_where(&tious, |v| v >= m)))
            .collect(),
    ))
}

fn paired_tious(pred_spans: &[TimeSpan], gt_spans: &[TimeSpan]) -> Result<Vec<f64>> {
    if pred_spans.len() != gt_spans.len() {
        return Err(Error::LengthMismatch {
            left: pred_spans.len(),
            right: gt_spans.len(),
        });
    }
    if gt_spans.is_empty() {
        return Err(Error::EmptyInput("span pairs"));
    }
    Ok(pred_spans
        .iter()
        .zip(gt_spans)
        .map(|(p, g)| temporal_iou(p, g))
        .collect())
}

/// Ground truth or prediction for a temporal-only query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub id: String,
    pub span: TimeSpan,
}

/// Ground truth or prediction for a single-image referring expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

pub fn evaluate_vtg(preds: &[SpanRecord], gts: &[SpanRecord], thresholds: &[f64]) -> Result<VtgReport> {
    if gts.is_empty() {
        return Err(Error::EmptyInput("ground-truth samples"));
    }
    let pairs = align(gts, preds, |g| &g.id, |p| &p.id)?;
    let (gt_spans, pred_spans): (Vec<TimeSpan>, Vec<TimeSpan>) =
        pairs.iter().map(|(g, p)| (g.span, p.span)).unzip();
    let tious = paired_tious(&pred_spans, &gt_spans)?;
    Ok(VtgReport {
        recall_at_1: recall_at_1(&pred_spans, &gt_spans, thresholds)?,
        m_tiou: mean(&tious) * 100.0,
        n_samples: gts.len(),
    })
}

pub fn evaluate_rec(preds: &[BoxRecord], gts: &[BoxRecord], threshold: f64) -> Result<RecReport> {
    if gts.is_empty() {
        return Err(Error::EmptyInput("ground-truth samples"));
    }
    let pairs = align(gts, preds, |g| &g.id, |p| &p.id)?;
    let (gt_boxes, pred_boxes): (Vec<BBox>, Vec<BBox>) =
        pairs.iter().map(|(g, p)| (g.bbox, p.bbox)).unzip();
    Ok(RecReport {
        accuracy: rec_accuracy(&pred_boxes, &gt_boxes, threshold)?,
        threshold,
        n_samples: gts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox { cx, cy, w, h }
    }

    fn span(a: f64, b: f64) -> TimeSpan {
        TimeSpan::new(a, b).unwrap()
    }

    fn sample(id: &str, first: usize, last: usize) -> GroundingSample {
        GroundingSample {
            id: id.into(),
            duration_s: 10.0,
            caption: "a dog runs".into(),
            gt_span: span(first as f64, last as f64),
            gt_tube: Tube::new(first, vec![bb(0.5, 0.5, 0.2, 0.2); last - first + 1]).unwrap(),
            frame_timestamps: (0..10).map(f64::from).collect(),
        }
    }

    fn pred(id: &str, first: usize, last: usize) -> Prediction {
        Prediction {
            id: id.into(),
            span: span(first as f64, last as f64),
            tube: Some(Tube::new(first, vec![bb(0.5, 0.5, 0.2, 0.2); last - first + 1]).unwrap()),
            frame_timestamps: None,
        }
    }

    #[test]
    fn viou_examples() {
        let gt = sample("a", 2, 5);
        assert!((viou(&pred("a", 4, 7), &gt).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(viou(&pred("a", 2, 5), &gt).unwrap(), 1.0);
        assert_eq!(viou(&pred("a", 7, 9), &gt).unwrap(), 0.0);
    }

    #[test]
    fn viou_errors() {
        let gt = sample("a", 2, 5);
        assert!(matches!(viou(&pred("b", 2, 5), &gt), Err(Error::IdMismatch { .. })));

        let mut p = pred("a", 2, 5);
        p.frame_timestamps = Some(vec![0.0, 1.0]);
        assert!(matches!(viou(&p, &gt), Err(Error::GridMismatch { .. })));

        let mut p = pred("a", 8, 9);
        p.tube = Some(Tube::new(8, vec![bb(0.5, 0.5, 0.2, 0.2); 4]).unwrap());
        assert!(matches!(viou(&p, &gt), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn missing_tube_scores_zero() {
        let gt = sample("a", 2, 5);
        let mut p = pred("a", 2, 5);
        p.tube = None;
        assert_eq!(viou(&p, &gt).unwrap(), 0.0);
    }

    #[test]
    fn predicted_frames_outside_span_are_ignored() {
        let gt = sample("a", 2, 5);
        let mut p = pred("a", 2, 5);
        // tube runs past the span; only [2, 5] counts
        p.tube = Some(Tube::new(0, vec![bb(0.5, 0.5, 0.2, 0.2); 10]).unwrap());
        assert_eq!(viou(&p, &gt).unwrap(), 1.0);
        // span extending past the video is clipped to the duration
        p.span = span(2.0, 40.0);
        p.tube = Some(Tube::new(2, vec![bb(0.5, 0.5, 0.2, 0.2); 8]).unwrap());
        assert!((viou(&p, &gt).unwrap() - 4.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn stvg_report_examples() {
        let gts = vec![sample("a", 2, 5), sample("b", 1, 3)];
        let perfect = vec![pred("a", 2, 5), pred("b", 1, 3)];
        let r = evaluate_stvg(&perfect, &gts, &DEFAULT_VIOU_THRESHOLDS).unwrap();
        assert_eq!((r.m_tiou, r.m_viou), (100.0, 100.0));
        assert_eq!(r.viou_at.get(0.3), Some(100.0));
        assert_eq!(r.viou_at.get(0.5), Some(100.0));
        assert_eq!(r.n_samples, 2);

        let half = vec![pred("a", 2, 5), pred("b", 7, 9)];
        let r = evaluate_stvg(&half, &gts, &DEFAULT_VIOU_THRESHOLDS).unwrap();
        assert_eq!((r.m_tiou, r.m_viou), (50.0, 50.0));
        assert_eq!(r.viou_at.get(0.3), Some(50.0));
        assert_eq!(r.viou_at.get(0.5), Some(50.0));
    }

    #[test]
    fn viou_threshold_is_strict() {
        // ten gt frames, three shared with identical boxes -> vIoU 0.3 exactly
        let mut gt = sample("a", 0, 9);
        gt.duration_s = 10.0;
        let p = pred("a", 0, 2);
        let v = viou(&p, &gt).unwrap();
        assert_eq!(v, 0.3);
        let r = evaluate_stvg(&[p], &[gt], &[0.3]).unwrap();
        assert_eq!(r.viou_at.get(0.3), Some(0.0));
    }

    #[test]
    fn stvg_id_errors_list_offenders() {
        let gts = vec![sample("a", 2, 5), sample("b", 1, 3)];
        let preds = vec![pred("a", 2, 5), pred("a", 2, 5), pred("z", 1, 2)];
        match evaluate_stvg(&preds, &gts, &[0.5]) {
            Err(Error::IdMismatch { missing, duplicate, unexpected }) => {
                assert_eq!(missing, vec!["b"]);
                assert_eq!(duplicate, vec!["a"]);
                assert_eq!(unexpected, vec!["z"]);
            }
            other => panic!("expected id mismatch, got {other:?}"),
        }
        assert!(matches!(evaluate_stvg(&[], &[], &[0.5]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn report_rounds_to_one_decimal() {
        let gts = vec![sample("a", 2, 5)];
        let r = evaluate_stvg(&[pred("a", 4, 7)], &gts, &[0.3]).unwrap().rounded();
        assert_eq!(r.m_viou, 33.3);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["m_vIoU"], 33.3);
        assert_eq!(json["vIoU_at"]["0.3"], 100.0);
    }

    #[test]
    fn rec_examples() {
        let a = bb(0.5, 0.5, 0.4, 0.4);
        let b = bb(0.6, 0.6, 0.4, 0.4);
        assert_eq!(rec_accuracy(&[a, b], &[a, b], 0.5).unwrap(), 100.0);
        assert_eq!(rec_accuracy(&[a, b], &[b, b], 0.5).unwrap(), 50.0);
        assert!(matches!(rec_accuracy(&[], &[], 0.5), Err(Error::EmptyInput(_))));
        assert!(matches!(
            rec_accuracy(&[a], &[a, b], 0.5),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn recall_examples() {
        let th = DEFAULT_RECALL_THRESHOLDS;
        let r = recall_at_1(&[span(1.0, 3.0)], &[span(1.0, 3.0)], &th).unwrap();
        assert_eq!((r.get(0.5), r.get(0.7)), (Some(100.0), Some(100.0)));

        let r = recall_at_1(&[span(2.0, 6.0)], &[span(4.0, 8.0)], &th).unwrap();
        assert_eq!((r.get(0.5), r.get(0.7)), (Some(0.0), Some(0.0)));

        // tIoU 0.6 and 0.9
        let preds = [span(0.0, 6.0), span(0.0, 9.0)];
        let gts = [span(0.0, 10.0), span(0.0, 10.0)];
        let r = recall_at_1(&preds, &gts, &th).unwrap();
        assert_eq!((r.get(0.5), r.get(0.7)), (Some(100.0), Some(50.0)));

        assert!(recall_at_1(&preds, &gts[..1], &th).is_err());
    }

    #[test]
    fn kahan_beats_naive_summation() {
        let xs: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(1e-16, 10_000)).collect();
        let k = xs.iter().copied().collect::<KahanSum>().total();
        assert!((k - (1.0 + 1e-12)).abs() < 1e-15);
    }
}
