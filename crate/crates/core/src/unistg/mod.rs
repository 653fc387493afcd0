//! STVG training-data synthesis.
//!
//! For each captioned clip: ask the analyzer for localizable objects (subject
//! first), run the open-set detector on every sampled frame inside the source
//! span with the first object that yields detections, tighten the span to the
//! frames where it was seen, then filter the boxes down to one stable box per
//! frame. Survivors are written as JSONL records with their time instruction.

mod services;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use services::{
    canonical_json, with_retries, AnalyzeRequest, AnalyzeResponse, DetectRequest, DetectResponse,
    FixtureEntry, FixtureFile, GroundingServices, HttpServices, MockServices, RawDetection,
    ServiceError, ANALYZE_ENDPOINT, DETECT_ENDPOINT,
};

use crate::error::{Error, Result};
use crate::geometry::{clamp_box, BBox, Corners, TimeSpan, Tube};
use crate::sequencing::{sample_frames, snap_span, time_instruction, FrameGrid};

/// One captioned clip from a source dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub video_ref: String,
    pub duration_s: f64,
    pub caption: String,
    pub raw_span: TimeSpan,
}

impl CaptionRecord {
    pub fn validate(&self) -> Result<()> {
        self.raw_span.validate()?;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::InvalidSpan(format!(
                "record {}: duration {} must be positive",
                self.id, self.duration_s
            )));
        }
        if self.raw_span.end_s > self.duration_s {
            return Err(Error::InvalidSpan(format!(
                "record {}: span ends at {} past the {} s video",
                self.id, self.raw_span.end_s, self.duration_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub bbox: BBox,
    pub score: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: usize,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub conf_threshold: f64,
    pub max_boxes_per_frame: usize,
    pub area_ratio_low: f64,
    pub area_ratio_high: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub max_in_flight_requests: usize,
    pub mock_fixture_path: Option<PathBuf>,
    /// Frames sampled per video.
    pub n_frames: usize,
    pub service_url: Option<String>,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub request_timeout_s: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.3,
            max_boxes_per_frame: 3,
            area_ratio_low: 0.5,
            area_ratio_high: 2.0,
            min_duration_s: 2.0,
            max_duration_s: 120.0,
            max_in_flight_requests: 1,
            mock_fixture_path: None,
            n_frames: 64,
            service_url: None,
            max_retries: 2,
            retry_backoff_ms: 200,
            request_timeout_s: 30.0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return bad(format!("conf_threshold {} outside [0, 1]", self.conf_threshold));
        }
        if !(0.0 < self.area_ratio_low && self.area_ratio_low < 1.0 && 1.0 < self.area_ratio_high) {
            return bad(format!(
                "area ratios need 0 < low < 1 < high, got ({}, {})",
                self.area_ratio_low, self.area_ratio_high
            ));
        }
        if !(0.0 <= self.min_duration_s && self.min_duration_s < self.max_duration_s) {
            return bad(format!(
                "duration bounds need min < max, got ({}, {})",
                self.min_duration_s, self.max_duration_s
            ));
        }
        if self.max_in_flight_requests == 0 {
            return bad("max_in_flight_requests must be at least 1".into());
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        if self.request_timeout_s.is_nan() || self.request_timeout_s <= 0.0 {
            return bad("request_timeout_s must be positive".into());
        }
        Ok(())
    }

    fn backoff(&self) -> Duration {
        Duration::from_millis(self.retry_backoff_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectionReason {
    NoObject,
    NoDetections,
    DurationTooShort,
    DurationTooLong,
    ComplexScene,
    AreaInstability,
}

impl RejectionReason {
    pub const ALL: [RejectionReason; 6] = [
        RejectionReason::NoObject,
        RejectionReason::NoDetections,
        RejectionReason::DurationTooShort,
        RejectionReason::DurationTooLong,
        RejectionReason::ComplexScene,
        RejectionReason::AreaInstability,
    ];
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One finished training record, in output-file field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedRecord {
    pub id: String,
    pub video_ref: String,
    pub duration_s: f64,
    pub caption: String,
    pub span: TimeSpan,
    pub tube: Tube,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisOutcome {
    Record(SynthesizedRecord),
    Rejected { id: String, reason: RejectionReason },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ReasonCounts {
    pub NoObject: usize,
    pub NoDetections: usize,
    pub DurationTooShort: usize,
    pub DurationTooLong: usize,
    pub ComplexScene: usize,
    pub AreaInstability: usize,
}

impl ReasonCounts {
    fn bump(&mut self, reason: RejectionReason) {
        *self.slot(reason) += 1;
    }

    fn slot(&mut self, reason: RejectionReason) -> &mut usize {
        match reason {
            RejectionReason::NoObject => &mut self.NoObject,
            RejectionReason::NoDetections => &mut self.NoDetections,
            RejectionReason::DurationTooShort => &mut self.DurationTooShort,
            RejectionReason::DurationTooLong => &mut self.DurationTooLong,
            RejectionReason::ComplexScene => &mut self.ComplexScene,
            RejectionReason::AreaInstability => &mut self.AreaInstability,
        }
    }

    pub fn get(&self, reason: RejectionReason) -> usize {
        let mut copy = self.clone();
        *copy.slot(reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub total: usize,
    pub emitted: usize,
    pub rejected: usize,
    pub rejection_rate: f64,
    pub per_reason: ReasonCounts,
}

impl SynthesisStats {
    pub fn from_outcomes(outcomes: &[SynthesisOutcome]) -> Self {
        let mut stats = SynthesisStats {
            total: outcomes.len(),
            ..Default::default()
        };
        for o in outcomes {
            match o {
                SynthesisOutcome::Record(_) => stats.emitted += 1,
                SynthesisOutcome::Rejected { reason, .. } => {
                    stats.rejected += 1;
                    stats.per_reason.bump(*reason);
                }
            }
        }
        if stats.total > 0 {
            stats.rejection_rate = stats.rejected as f64 / stats.total as f64;
        }
        stats
    }
}

/// Localizable object phrases of `caption`, subject first.
pub fn extract_objects(
    services: &dyn GroundingServices,
    caption: &str,
    cfg: &SynthesisConfig,
) -> Result<Vec<String>> {
    if caption.trim().is_empty() {
        return Err(Error::EmptyInput("caption"));
    }
    let req = AnalyzeRequest {
        caption: caption.to_string(),
    };
    let resp = with_retries(cfg.max_retries, cfg.backoff(), || services.analyze(&req))?;
    Ok(resp
        .objects
        .into_iter()
        .map(|o| o.trim().to_string())
        .filter(|o| !o.is_empty())
        .collect())
}

fn to_detection(frame_index: usize, raw: RawDetection) -> Result<Detection, ServiceError> {
    if !(0.0..=1.0).contains(&raw.score) {
        return Err(ServiceError::Protocol(format!(
            "frame {frame_index}: score {} outside [0, 1]",
            raw.score
        )));
    }
    let [x1, y1, x2, y2] = raw.box_xyxy;
    let bbox = BBox::from_corners(Corners { x1, y1, x2, y2 })
        .and_then(|b| clamp_box(&b))
        .map_err(|e| ServiceError::Protocol(format!("frame {frame_index}: {e}")))?;
    Ok(Detection {
        frame_index,
        bbox,
        score: raw.score,
        label: raw.label,
    })
}

/// Detector output for each requested frame, minus detections scoring below
/// the confidence threshold.
pub fn annotate_boxes(
    services: &dyn GroundingServices,
    video_ref: &str,
    frame_indices: &[usize],
    prompt: &str,
    cfg: &SynthesisConfig,
) -> Result<Vec<FrameDetections>> {
    if prompt.trim().is_empty() {
        return Err(Error::EmptyInput("detector prompt"));
    }
    frame_indices
        .iter()
        .map(|&frame_index| {
            let req = DetectRequest {
                video_ref: video_ref.to_string(),
                frame_index,
                prompt: prompt.to_string(),
            };
            let resp = with_retries(cfg.max_retries, cfg.backoff(), || services.detect(&req))?;
            let mut detections = Vec::with_capacity(resp.detections.len());
            for raw in resp.detections {
                let d = to_detection(frame_index, raw)?;
                if d.score >= cfg.conf_threshold {
                    detections.push(d);
                }
            }
            Ok(FrameDetections {
                frame_index,
                detections,
            })
        })
        .collect()
}

fn duration_gate(span: &TimeSpan, cfg: &SynthesisConfig) -> std::result::Result<(), RejectionReason> {
    if span.duration() < cfg.min_duration_s {
        Err(RejectionReason::DurationTooShort)
    } else if span.duration() > cfg.max_duration_s {
        Err(RejectionReason::DurationTooLong)
    } else {
        Ok(())
    }
}

/// Tightens `raw_span` to the first and last sampled frames inside it that
/// carry at least one detection, then applies the duration gate.
pub fn refine_time_boundary(
    frames: &[FrameDetections],
    grid: &FrameGrid,
    raw_span: &TimeSpan,
    cfg: &SynthesisConfig,
) -> std::result::Result<TimeSpan, RejectionReason> {
    let inside = grid.indices_within(raw_span);
    let seen: Vec<usize> = frames
        .iter()
        .filter(|f| !f.detections.is_empty() && inside.contains(&f.frame_index))
        .map(|f| f.frame_index)
        .collect();
    let (Some(&first), Some(&last)) = (seen.iter().min(), seen.iter().max()) else {
        return Err(RejectionReason::NoDetections);
    };
    let span = grid
        .span_of(first, last)
        .ok_or(RejectionReason::NoDetections)?;
    duration_gate(&span, cfg)?;
    Ok(span)
}

// Highest score, then larger area, then earlier position in the detector output.
fn best_detection(dets: &[Detection]) -> &Detection {
    let mut best = &dets[0];
    for d in &dets[1..] {
        if d.score > best.score || (d.score == best.score && d.bbox.area() > best.bbox.area()) {
            best = d;
        }
    }
    best
}

/// Reduces per-frame detections to a single-box tube.
///
/// Frames with more than `max_boxes_per_frame` detections are dropped as
/// complex scenes, every other frame keeps its best detection, and the sample
/// is rejected if the kept box area jumps by more than the allowed ratio
/// between consecutive kept frames. Frames without a kept box inside the tube
/// repeat the previous kept box.
pub fn filter_boxes(
    frames: &[FrameDetections],
    cfg: &SynthesisConfig,
) -> std::result::Result<Tube, RejectionReason> {
    if frames.iter().all(|f| f.detections.is_empty()) {
        return Err(RejectionReason::NoDetections);
    }
    let kept: Vec<(usize, BBox)> = frames
        .iter()
        .filter(|f| !f.detections.is_empty() && f.detections.len() <= cfg.max_boxes_per_frame)
        .map(|f| (f.frame_index, best_detection(&f.detections).bbox))
        .collect();
    if kept.is_empty() {
        return Err(RejectionReason::ComplexScene);
    }
    for pair in kept.windows(2) {
        let (prev, cur) = (pair[0].1.area(), pair[1].1.area());
        if prev <= 0.0 {
            return Err(RejectionReason::AreaInstability);
        }
        let ratio = cur / prev;
        if ratio < cfg.area_ratio_low || ratio > cfg.area_ratio_high {
            return Err(RejectionReason::AreaInstability);
        }
    }

    let start = kept[0].0;
    let end = kept[kept.len() - 1].0;
    let mut boxes = Vec::with_capacity(end - start + 1);
    let mut next = kept.iter().peekable();
    let mut current = kept[0].1;
    for frame in start..=end {
        if let Some(&&(f, b)) = next.peek() {
            if f == frame {
                current = b;
                next.next();
            }
        }
        boxes.push(current);
    }
    Ok(Tube {
        start_frame: start,
        boxes,
    })
}

/// Runs the full pipeline on one clip. Service failures are errors; data
/// quality problems are rejections.
pub fn synthesize_record(
    record: &CaptionRecord,
    cfg: &SynthesisConfig,
    services: &dyn GroundingServices,
) -> Result<SynthesisOutcome> {
    record.validate()?;
    let reject = |reason| {
        log::debug!("{}: rejected ({reason})", record.id);
        Ok(SynthesisOutcome::Rejected {
            id: record.id.clone(),
            reason,
        })
    };

    let objects = extract_objects(services, &record.caption, cfg)?;
    if objects.is_empty() {
        return reject(RejectionReason::NoObject);
    }

    let grid = match sample_frames(record.duration_s, cfg.n_frames) {
        Ok(g) => g,
        Err(Error::InvalidGrid(_)) if record.duration_s < cfg.min_duration_s => {
            return reject(RejectionReason::DurationTooShort)
        }
        Err(e) => return Err(e),
    };
    let frame_indices = grid.indices_within(&record.raw_span);
    if frame_indices.is_empty() {
        return reject(RejectionReason::NoDetections);
    }

    let mut located = None;
    for object in &objects {
        let frames = annotate_boxes(services, &record.video_ref, &frame_indices, object, cfg)?;
        if frames.iter().any(|f| !f.detections.is_empty()) {
            located = Some(frames);
            break;
        }
    }
    let Some(frames) = located else {
        return reject(RejectionReason::NoDetections);
    };

    let refined = match refine_time_boundary(&frames, &grid, &record.raw_span, cfg) {
        Ok(span) => span,
        Err(reason) => return reject(reason),
    };
    let in_span: Vec<FrameDetections> = frames
        .into_iter()
        .filter(|f| {
            let t = grid.timestamps[f.frame_index];
            t >= refined.start_s && t <= refined.end_s
        })
        .collect();
    let tube = match filter_boxes(&in_span, cfg) {
        Ok(t) => t,
        Err(reason) => return reject(reason),
    };

    // Dropped boundary frames can shorten the span, so gate it again.
    let span = grid
        .span_of(tube.start_frame, tube.end_frame())
        .expect("tube frames come from the grid");
    if let Err(reason) = duration_gate(&span, cfg) {
        return reject(reason);
    }
    let span = snap_span(&span, &grid);

    Ok(SynthesisOutcome::Record(SynthesizedRecord {
        id: record.id.clone(),
        video_ref: record.video_ref.clone(),
        duration_s: record.duration_s,
        caption: record.caption.clone(),
        span,
        tube,
        instruction: time_instruction(&grid),
    }))
}

/// Runs the pipeline over a corpus with up to `max_in_flight_requests`
/// records in progress at once. Outcomes come back in corpus order.
pub fn synthesize_dataset(
    corpus: &[CaptionRecord],
    cfg: &SynthesisConfig,
    services: &dyn GroundingServices,
) -> Result<(Vec<SynthesisOutcome>, SynthesisStats)> {
    cfg.validate()?;
    for r in corpus {
        r.validate()?;
    }
    let workers = cfg.max_in_flight_requests.min(corpus.len()).max(1);
    let slots: Vec<Mutex<Option<Result<SynthesisOutcome>>>> =
        corpus.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(record) = corpus.get(i) else { break };
                let outcome = synthesize_record(record, cfg, services);
                let failed = outcome.is_err();
                *slots[i].lock().expect("slot lock") = Some(outcome);
                if failed {
                    // stop handing out work; remaining slots stay empty
                    next.store(corpus.len(), Ordering::SeqCst);
                }
            });
        }
    });

    let mut outcomes = Vec::with_capacity(corpus.len());
    for slot in slots {
        match slot.into_inner().expect("slot lock") {
            Some(outcome) => outcomes.push(outcome?),
            None => continue,
        }
    }
    if outcomes.len() != corpus.len() {
        return Err(Error::InvalidConfig("synthesis stopped early".into()));
    }
    let stats = SynthesisStats::from_outcomes(&outcomes);
    Ok((outcomes, stats))
}

/// Writes emitted records as JSONL, one per line, in corpus order.
pub fn write_records<W: Write>(outcomes: &[SynthesisOutcome], mut out: W) -> Result<usize> {
    let mut n = 0;
    for o in outcomes {
        if let SynthesisOutcome::Record(r) = o {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
            n += 1;
        }
    }
    out.flush()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: usize, score: f64, side: f64) -> Detection {
        Detection {
            frame_index: frame,
            bbox: BBox { cx: 0.5, cy: 0.5, w: side, h: side },
            score,
            label: "obj".into(),
        }
    }

    fn frame(index: usize, dets: Vec<Detection>) -> FrameDetections {
        FrameDetections {
            frame_index: index,
            detections: dets,
        }
    }

    fn grid(n: usize, step: f64) -> FrameGrid {
        FrameGrid::new(n as f64 * step, (0..n).map(|i| i as f64 * step).collect()).unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = SynthesisConfig::default();
        assert_eq!(cfg.conf_threshold, 0.3);
        assert_eq!(cfg.max_boxes_per_frame, 3);
        assert_eq!((cfg.area_ratio_low, cfg.area_ratio_high), (0.5, 2.0));
        assert_eq!((cfg.min_duration_s, cfg.max_duration_s), (2.0, 120.0));
        assert!(cfg.validate().is_ok());
        let bad = SynthesisConfig { area_ratio_low: 1.5, ..cfg.clone() };
        assert!(bad.validate().is_err());
        let bad = SynthesisConfig { min_duration_s: 200.0, ..cfg.clone() };
        assert!(bad.validate().is_err());
        let bad = SynthesisConfig { max_in_flight_requests: 0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn refine_examples() {
        // 0.4 s spacing: frame 18 = 7.2 s, frame 34 = 13.6 s
        let g = grid(100, 0.4);
        let raw = TimeSpan::new(5.0, 15.0).unwrap();
        let cfg = SynthesisConfig::default();
        let frames: Vec<_> = g
            .indices_within(&raw)
            .into_iter()
            .map(|i| frame(i, if (18..=34).contains(&i) { vec![det(i, 0.9, 0.3)] } else { vec![] }))
            .collect();
        let span = refine_time_boundary(&frames, &g, &raw, &cfg).unwrap();
        assert!((span.start_s - 7.2).abs() < 1e-9 && (span.end_s - 13.6).abs() < 1e-9);

        // detections over 1.5 s only
        let g = grid(40, 0.5);
        let raw = TimeSpan::new(0.0, 19.5).unwrap();
        let short: Vec<_> = (0..40)
            .map(|i| frame(i, if (10..=13).contains(&i) { vec![det(i, 0.9, 0.3)] } else { vec![] }))
            .collect();
        assert_eq!(
            refine_time_boundary(&short, &g, &raw, &cfg),
            Err(RejectionReason::DurationTooShort)
        );
        // exactly 2 s is accepted
        let two: Vec<_> = (0..40)
            .map(|i| frame(i, if (10..=14).contains(&i) { vec![det(i, 0.9, 0.3)] } else { vec![] }))
            .collect();
        assert!(refine_time_boundary(&two, &g, &raw, &cfg).is_ok());

        // 130 s of detections
        let g = grid(30, 5.0);
        let raw = TimeSpan::new(0.0, 145.0).unwrap();
        let long: Vec<_> = (0..30)
            .map(|i| frame(i, if (2..=28).contains(&i) { vec![det(i, 0.9, 0.3)] } else { vec![] }))
            .collect();
        assert_eq!(
            refine_time_boundary(&long, &g, &raw, &cfg),
            Err(RejectionReason::DurationTooLong)
        );
        // 120 s is accepted
        let edge: Vec<_> = (0..30)
            .map(|i| frame(i, if (2..=26).contains(&i) { vec![det(i, 0.9, 0.3)] } else { vec![] }))
            .collect();
        assert!(refine_time_boundary(&edge, &g, &raw, &cfg).is_ok());

        let empty: Vec<_> = (0..30).map(|i| frame(i, vec![])).collect();
        assert_eq!(
            refine_time_boundary(&empty, &g, &raw, &cfg),
            Err(RejectionReason::NoDetections)
        );
    }

    #[test]
    fn filter_discards_complex_frames() {
        let cfg = SynthesisConfig::default();
        let frames = vec![
            frame(0, vec![det(0, 0.9, 0.3)]),
            frame(1, (0..4).map(|_| det(1, 0.8, 0.3)).collect()),
            frame(2, vec![det(2, 0.7, 0.3), det(2, 0.5, 0.1), det(2, 0.4, 0.1)]),
        ];
        let tube = filter_boxes(&frames, &cfg).unwrap();
        assert_eq!((tube.start_frame, tube.len()), (0, 3));
        // the complex frame is filled from the previous kept frame
        assert_eq!(tube.boxes[1], frames[0].detections[0].bbox);

        let all_complex = vec![frame(0, (0..4).map(|_| det(0, 0.8, 0.3)).collect())];
        assert_eq!(filter_boxes(&all_complex, &cfg), Err(RejectionReason::ComplexScene));
    }

    #[test]
    fn filter_rejects_unstable_area() {
        let cfg = SynthesisConfig::default();
        // areas 0.04 -> 0.09, ratio 2.25
        let frames = vec![frame(0, vec![det(0, 0.9, 0.2)]), frame(1, vec![det(1, 0.9, 0.3)])];
        assert_eq!(filter_boxes(&frames, &cfg), Err(RejectionReason::AreaInstability));
        // 0.09 -> 0.04, ratio 0.444
        let frames = vec![frame(0, vec![det(0, 0.9, 0.3)]), frame(1, vec![det(1, 0.9, 0.2)])];
        assert_eq!(filter_boxes(&frames, &cfg), Err(RejectionReason::AreaInstability));
        // ratio exactly 2 and exactly 0.5 are kept
        let w = 2f64.sqrt() * 0.2;
        let frames = vec![
            frame(0, vec![det(0, 0.9, 0.2)]),
            frame(1, vec![Detection { bbox: BBox { cx: 0.5, cy: 0.5, w: 0.4, h: 0.2 }, ..det(1, 0.9, 0.0) }]),
            frame(2, vec![det(2, 0.9, 0.2)]),
        ];
        assert!(filter_boxes(&frames, &cfg).is_ok(), "{w}");
    }

    #[test]
    fn area_comparison_spans_discarded_frames() {
        let cfg = SynthesisConfig::default();
        let frames = vec![
            frame(0, vec![det(0, 0.9, 0.2)]),
            frame(1, (0..5).map(|_| det(1, 0.9, 0.25)).collect()),
            frame(2, vec![det(2, 0.9, 0.3)]),
        ];
        assert_eq!(filter_boxes(&frames, &cfg), Err(RejectionReason::AreaInstability));
    }

    #[test]
    fn filter_picks_best_with_ties() {
        let cfg = SynthesisConfig::default();
        let frames = vec![frame(0, vec![det(0, 0.6, 0.2), det(0, 0.8, 0.21), det(0, 0.8, 0.22)])];
        let tube = filter_boxes(&frames, &cfg).unwrap();
        assert_eq!(tube.boxes[0].w, 0.22);
        let frames = vec![frame(0, vec![
            Detection { bbox: BBox { cx: 0.3, cy: 0.5, w: 0.2, h: 0.2 }, ..det(0, 0.8, 0.0) },
            Detection { bbox: BBox { cx: 0.7, cy: 0.5, w: 0.2, h: 0.2 }, ..det(0, 0.8, 0.0) },
        ])];
        assert_eq!(filter_boxes(&frames, &cfg).unwrap().boxes[0].cx, 0.3);
    }

    #[test]
    fn clean_sequence_becomes_tube() {
        let cfg = SynthesisConfig::default();
        let frames: Vec<_> = (3..8)
            .map(|i| frame(i, vec![det(i, 0.5, 0.3), det(i, 0.9, 0.31)]))
            .collect();
        let tube = filter_boxes(&frames, &cfg).unwrap();
        assert_eq!((tube.start_frame, tube.len()), (3, 5));
        assert!(tube.boxes.iter().all(|b| b.w == 0.31));
    }

    #[test]
    fn stats_count_reasons() {
        let outcomes = vec![
            SynthesisOutcome::Rejected { id: "a".into(), reason: RejectionReason::NoObject },
            SynthesisOutcome::Rejected { id: "b".into(), reason: RejectionReason::NoObject },
            SynthesisOutcome::Rejected { id: "c".into(), reason: RejectionReason::ComplexScene },
        ];
        let s = SynthesisStats::from_outcomes(&outcomes);
        assert_eq!((s.total, s.emitted, s.rejected), (3, 0, 3));
        assert_eq!(s.per_reason.get(RejectionReason::NoObject), 2);
        assert_eq!(s.rejection_rate, 1.0);
        assert_eq!(SynthesisStats::from_outcomes(&[]), SynthesisStats::default());
    }
}
