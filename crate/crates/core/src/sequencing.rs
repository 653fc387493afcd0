//! Frame sampling, time instructions, and conversions between time spans and
//! frame ranges.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TimeSpan;

// Slack used when comparing seconds; grid timestamps carry two decimals.
const TIME_EPS: f64 = 1e-9;

/// Timestamps (seconds) of the frames sampled from one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub duration_s: f64,
    pub timestamps: Vec<f64>,
}

impl FrameGrid {
    pub fn new(duration_s: f64, timestamps: Vec<f64>) -> Result<Self> {
        let grid = Self { duration_s, timestamps };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.duration_s.is_finite() || self.timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("frame grid"));
        }
        let (Some(&first), Some(&last)) = (self.timestamps.first(), self.timestamps.last()) else {
            return Err(Error::InvalidGrid("no timestamps".into()));
        };
        if first < 0.0 || last > self.duration_s + TIME_EPS {
            return Err(Error::InvalidGrid(format!(
                "timestamps must lie in [0, {}]",
                self.duration_s
            )));
        }
        if let Some(w) = self.timestamps.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "timestamps not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Index of the timestamp nearest `t`; ties go to the earlier frame.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &ts) in self.timestamps.iter().enumerate() {
            let d = (ts - t).abs();
            if d < best_dist - TIME_EPS {
                best = i;
                best_dist = d;
            }
        }
        best
    }

    /// Span between the timestamps of two frame indices.
    pub fn span_of(&self, first: usize, last: usize) -> Option<TimeSpan> {
        let start_s = *self.timestamps.get(first)?;
        let end_s = *self.timestamps.get(last)?;
        (start_s <= end_s).then_some(TimeSpan { start_s, end_s })
    }

    /// Indices of the frames whose timestamps fall inside `span`.
    pub fn indices_within(&self, span: &TimeSpan) -> Vec<usize> {
        self.timestamps
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= span.start_s - TIME_EPS && t <= span.end_s + TIME_EPS)
            .map(|(i, _)| i)
            .collect()
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Uniformly samples `n_frames` timestamps `i * duration / n`, rounded to
/// hundredths of a second.
pub fn sample_frames(duration_s: f64, n_frames: usize) -> Result<FrameGrid> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if n_frames == 0 {
        return Err(Error::InvalidGrid("at least one frame is required".into()));
    }
    let step = duration_s / n_frames as f64;
    let timestamps = (0..n_frames).map(|i| round2(i as f64 * step)).collect();
    FrameGrid::new(duration_s, timestamps)
}

/// Renders the time instruction that tells the language model where each
/// sampled frame sits.
pub fn time_instruction(grid: &FrameGrid) -> String {
    let mut out = format!(
        "The video lasts for {} seconds, and {} frames are uniformly sampled from it. These frames are located at ",
        grid.duration_s,
        grid.len()
    );
    for (i, t) in grid.timestamps.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{t:.2}s").expect("writing to a String cannot fail");
    }
    out.push('.');
    out
}

/// Moves both endpoints of `span` onto the nearest grid timestamps.
pub fn snap_span(span: &TimeSpan, grid: &FrameGrid) -> TimeSpan {
    let start_s = grid.timestamps[grid.nearest_index(span.start_s)];
    let end_s = grid.timestamps[grid.nearest_index(span.end_s)];
    TimeSpan { start_s, end_s }
}

/// Frame range `[f_s, f_e]` covered by `span`: the first frame at or after the
/// start and the last frame at or before the end. A span falling between two
/// frames collapses onto the frame nearest its midpoint.
pub fn timespan_to_frame_range(span: &TimeSpan, grid: &FrameGrid) -> (usize, usize) {
    let first = grid
        .timestamps
        .iter()
        .position(|&t| t >= span.start_s - TIME_EPS);
    let last = grid
        .timestamps
        .iter()
        .rposition(|&t| t <= span.end_s + TIME_EPS);
    match (first, last) {
        (Some(f), Some(l)) if f <= l => (f, l),
        _ => {
            let mid = grid.nearest_index((span.start_s + span.end_s) / 2.0);
            (mid, mid)
        }
    }
}

/// Renders a span in the text grammar accepted by [`parse_span_text`].
pub fn format_span_text(span: &TimeSpan) -> String {
    format!("from {:.2}s to {:.2}s", span.start_s, span.end_s)
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            position: self.pos,
            message: message.into(),
        }
    }

    fn literal(&mut self, lit: &str) -> Result<()> {
        if self.src[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.error(format!("expected {lit:?}")))
        }
    }

    fn spaces(&mut self) -> Result<()> {
        let rest = &self.src[self.pos..];
        let trimmed = rest.trim_start_matches(' ');
        if trimmed.len() == rest.len() {
            return Err(self.error("expected whitespace"));
        }
        self.pos += rest.len() - trimmed.len();
        Ok(())
    }

    fn decimal(&mut self) -> Result<f64> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let digits = |pos: &mut usize| {
            let s = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos - s
        };
        if digits(&mut self.pos) == 0 {
            return Err(self.error("expected a non-negative decimal number"));
        }
        if self.pos < bytes.len() && bytes[self.pos] == b'.' {
            self.pos += 1;
            if digits(&mut self.pos) == 0 {
                return Err(self.error("expected digits after decimal point"));
            }
        }
        self.src[start..self.pos]
            .parse()
            .map_err(|_| Error::Parse {
                position: start,
                message: "unparseable number".into(),
            })
    }
}

/// Parses `"from {a}s to {b}s"` into a span. Leading and trailing whitespace
/// is ignored; `a` must not exceed `b`.
pub fn parse_span_text(text: &str) -> Result<TimeSpan> {
    let leading = text.len() - text.trim_start().len();
    let mut cur = Cursor {
        src: text.trim_end(),
        pos: leading,
    };
    cur.literal("from")?;
    cur.spaces()?;
    let start_pos = cur.pos;
    let a = cur.decimal()?;
    cur.literal("s")?;
    cur.spaces()?;
    cur.literal("to")?;
    cur.spaces()?;
    let b = cur.decimal()?;
    cur.literal("s")?;
    if cur.pos != cur.src.len() {
        return Err(cur.error("unexpected trailing input"));
    }
    if a > b {
        return Err(Error::Parse {
            position: start_pos,
            message: format!("start {a} exceeds end {b}"),
        });
    }
    Ok(TimeSpan { start_s: a, end_s: b })
}
