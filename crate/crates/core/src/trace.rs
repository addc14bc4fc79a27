//! Per-episode regret accounting, stored run-length encoded so that long
//! commit phases (millions of identical episodes) stay cheap.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Identify,
    Commit,
    /// Identification episodes of a test cut short by the episode budget.
    Truncated,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Identify => "identify",
            Phase::Commit => "commit",
            Phase::Truncated => "truncated",
        }
    }
}

/// `len` consecutive episodes with the same instantaneous regret and phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub len: usize,
    pub instant: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// 1-based episode index.
    pub episode: usize,
    pub instant: f64,
    pub cumulative: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    segments: Vec<Segment>,
}

impl RegretTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `len` episodes; merges with the previous segment when equal.
    pub fn push(&mut self, len: usize, instant: f64, phase: Phase) {
        if len == 0 {
            return;
        }
        if let Some(last) = self.segments.last_mut() {
            if last.instant == instant && last.phase == phase {
                last.len += len;
                return;
            }
        }
        self.segments.push(Segment {
            len,
            instant,
            phase,
        });
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Number of episodes `H`.
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn episodes_in(&self, phase: Phase) -> usize {
        self.segments
            .iter()
            .filter(|s| s.phase == phase)
            .map(|s| s.len)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.segments.iter().map(|s| s.len as f64 * s.instant).sum()
    }

    /// Sum of regret over the non-commit episodes.
    pub fn identification_regret(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.phase != Phase::Commit)
            .map(|s| s.len as f64 * s.instant)
            .sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = TraceRow> + '_ {
        let mut base = 0.0;
        let mut start = 0usize;
        self.segments.iter().flat_map(move |seg| {
            let (b, s0) = (base, start);
            base += seg.len as f64 * seg.instant;
            start += seg.len;
            (1..=seg.len).map(move |k| TraceRow {
                episode: s0 + k,
                instant: seg.instant,
                cumulative: b + k as f64 * seg.instant,
                phase: seg.phase,
            })
        })
    }

    /// Cumulative regret after episode `h` (0 for `h = 0`).
    pub fn cumulative_at(&self, h: usize) -> f64 {
        let mut acc = 0.0;
        let mut left = h;
        for seg in &self.segments {
            let take = left.min(seg.len);
            acc += take as f64 * seg.instant;
            left -= take;
            if left == 0 {
                break;
            }
        }
        acc
    }
}
