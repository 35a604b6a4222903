//! Overlapping analysis windows over an utterance.
//!
//! Window `i` spans `[i * stride, i * stride + length]`. Bounds are computed
//! from the index, never by accumulation, so they are bit-reproducible. The
//! uncovered tail shorter than one stride is dropped.

use crate::error::{Error, Result};

/// Slack used when flooring window counts so that e.g. `(0.85 - 0.75) / 0.1`
/// counts as one full stride despite binary rounding.
const COUNT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub length_s: f64,
    pub stride_s: f64,
}

impl WindowConfig {
    pub fn new(length_s: f64, stride_s: f64) -> Result<Self> {
        let cfg = Self { length_s, stride_s };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_s.is_finite() && self.length_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "window length must be positive, got {}",
                self.length_s
            )));
        }
        if !(self.stride_s.is_finite() && self.stride_s > 0.0 && self.stride_s <= self.length_s) {
            return Err(Error::InvalidConfig(format!(
                "window stride must be in (0, {}], got {}",
                self.length_s, self.stride_s
            )));
        }
        Ok(())
    }

    /// Number of windows that fit in `duration_s`, or zero if not even one does.
    pub fn count_for(&self, duration_s: f64) -> usize {
        if duration_s + COUNT_EPS < self.length_s {
            return 0;
        }
        ((duration_s - self.length_s) / self.stride_s + COUNT_EPS).floor() as usize + 1
    }

    pub fn start_of(&self, index: usize) -> f64 {
        index as f64 * self.stride_s
    }

    pub fn end_of(&self, index: usize) -> f64 {
        self.start_of(index) + self.length_s
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length_s: 0.75,
            stride_s: 0.1,
        }
    }
}

/// The windows of one utterance, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub config: WindowConfig,
    pub duration_s: f64,
    pub bounds: Vec<(f64, f64)>,
}

impl WindowSet {
    pub fn count(&self) -> usize {
        self.bounds.len()
    }
}

pub fn make_windows(duration_s: f64, cfg: &WindowConfig) -> Result<WindowSet> {
    cfg.validate()?;
    if !duration_s.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "utterance duration must be finite, got {duration_s}"
        )));
    }
    let count = cfg.count_for(duration_s);
    if count == 0 {
        return Err(Error::TooShort {
            duration_s,
            window_s: cfg.length_s,
        });
    }
    let bounds = (0..count)
        .map(|i| (cfg.start_of(i), cfg.end_of(i).min(duration_s)))
        .collect();
    Ok(WindowSet {
        config: *cfg,
        duration_s,
        bounds,
    })
}
