//! Hub-owned step clock.
//!
//! Tempo is held at millibeat-per-minute resolution so that step boundaries
//! are computed in exact integer arithmetic: the step interval is
//! `60_000_000 / (milli_bpm * steps_per_beat)` milliseconds.

use thiserror::Error;

use super::state::{MAX_BPM, MIN_BPM};

const MS_PER_MINUTE_MILLI: u128 = 60_000 * 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("bpm {0} outside [{MIN_BPM}, {MAX_BPM}]")]
    BadTempo(f64),
    #[error("steps and steps_per_beat must be >= 1")]
    ZeroDivision,
    #[error("anchor step {step} outside [0, {steps})")]
    BadAnchor { step: u32, steps: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPosition {
    pub step: u32,
    /// First whole millisecond at which the next step begins.
    pub next_fire_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportClock {
    milli_bpm: u64,
    steps_per_beat: u32,
    steps: u32,
    anchor_time_ms: u64,
    anchor_step: u32,
}

impl TransportClock {
    pub fn new(
        bpm: f64,
        steps_per_beat: u32,
        steps: u32,
        anchor_time_ms: u64,
        anchor_step: u32,
    ) -> Result<Self, ClockError> {
        if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
            return Err(ClockError::BadTempo(bpm));
        }
        if steps == 0 || steps_per_beat == 0 {
            return Err(ClockError::ZeroDivision);
        }
        if anchor_step >= steps {
            return Err(ClockError::BadAnchor {
                step: anchor_step,
                steps,
            });
        }
        Ok(Self {
            milli_bpm: to_milli(bpm),
            steps_per_beat,
            steps,
            anchor_time_ms,
            anchor_step,
        })
    }

    pub fn bpm(&self) -> f64 {
        self.milli_bpm as f64 / 1000.0
    }

    pub fn milli_bpm(&self) -> u64 {
        self.milli_bpm
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn steps_per_beat(&self) -> u32 {
        self.steps_per_beat
    }

    pub fn anchor(&self) -> (u64, u32) {
        (self.anchor_time_ms, self.anchor_step)
    }

    pub fn interval_ms(&self) -> f64 {
        60_000.0 / (self.bpm() * f64::from(self.steps_per_beat))
    }

    fn rate(&self) -> u128 {
        u128::from(self.milli_bpm) * u128::from(self.steps_per_beat)
    }

    /// Whole steps elapsed since the anchor. Times before the anchor count as zero.
    pub fn steps_elapsed(&self, now_ms: u64) -> u64 {
        let elapsed = u128::from(now_ms.saturating_sub(self.anchor_time_ms));
        (elapsed * self.rate() / MS_PER_MINUTE_MILLI) as u64
    }

    pub fn step_at(&self, now_ms: u64) -> StepPosition {
        let k = self.steps_elapsed(now_ms);
        let step = ((u64::from(self.anchor_step) + k) % u64::from(self.steps)) as u32;
        let boundary = (u128::from(k) + 1) * MS_PER_MINUTE_MILLI;
        let offset = boundary.div_ceil(self.rate());
        StepPosition {
            step,
            next_fire_ms: self.anchor_time_ms + offset as u64,
        }
    }

    /// Changes tempo at `now_ms`, re-anchoring on the step playing at that
    /// instant so the sequence neither skips nor repeats a step.
    pub fn retempo(&mut self, now_ms: u64, bpm: f64) -> Result<(), ClockError> {
        if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
            return Err(ClockError::BadTempo(bpm));
        }
        let current = self.step_at(now_ms).step;
        self.anchor_time_ms = now_ms.max(self.anchor_time_ms);
        self.anchor_step = current;
        self.milli_bpm = to_milli(bpm);
        Ok(())
    }
}

fn to_milli(bpm: f64) -> u64 {
    (bpm * 1000.0).round() as u64
}
