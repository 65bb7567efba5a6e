//! Linear warmup followed by cosine decay to zero.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step {step} is outside 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("warmup ({warmup}) must be shorter than the run ({total} steps)")]
    WarmupTooLong { warmup: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_max: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(lr_max: f64, warmup_steps: usize, total_steps: usize) -> Result<Self, ScheduleError> {
        if warmup_steps >= total_steps {
            return Err(ScheduleError::WarmupTooLong {
                warmup: warmup_steps,
                total: total_steps,
            });
        }
        Ok(Schedule {
            lr_max,
            warmup_steps,
            total_steps,
        })
    }

    pub fn lr(&self, step: usize) -> Result<f64, ScheduleError> {
        lr_schedule(step, self)
    }
}

/// `lr_max · step / warmup` up to the end of warmup, then
/// `lr_max · ½(1 + cos(π · progress))` over the remaining steps.
pub fn lr_schedule(step: usize, schedule: &Schedule) -> Result<f64, ScheduleError> {
    let Schedule {
        lr_max,
        warmup_steps: warmup,
        total_steps: total,
    } = *schedule;
    if step > total {
        return Err(ScheduleError::StepOutOfRange { step, total });
    }
    if warmup >= total {
        return Err(ScheduleError::WarmupTooLong { warmup, total });
    }
    if warmup > 0 && step <= warmup {
        return Ok(lr_max * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(lr_max * 0.5 * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_points() {
        let s = Schedule::new(5e-5, 2000, 10_000).unwrap();
        assert_abs_diff_eq!(s.lr(2000).unwrap(), 5e-5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lr(10_000).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lr(6000).unwrap(), 2.5e-5, epsilon = 1e-12);
        assert_eq!(s.lr(0).unwrap(), 0.0);
        assert_abs_diff_eq!(s.lr(1000).unwrap(), 2.5e-5, epsilon = 1e-12);
        assert_eq!(
            s.lr(10_001),
            Err(ScheduleError::StepOutOfRange {
                step: 10_001,
                total: 10_000
            })
        );
        assert!(Schedule::new(1.0, 10, 10).is_err());
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        let s = Schedule::new(1.0, 0, 4).unwrap();
        assert_eq!(s.lr(0).unwrap(), 1.0);
        assert_abs_diff_eq!(s.lr(2).unwrap(), 0.5, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn shape(warmup in 1usize..500, extra in 1usize..5000, lr_max in 1e-6f64..1.0) {
            let s = Schedule::new(lr_max, warmup, warmup + extra).unwrap();
            let mut prev = 0.0;
            for step in 0..=warmup {
                let lr = s.lr(step).unwrap();
                prop_assert!(lr >= prev && lr <= lr_max * (1.0 + 1e-12));
                prev = lr;
            }
            for step in warmup..=warmup + extra {
                let lr = s.lr(step).unwrap();
                prop_assert!(lr <= prev + 1e-15 && lr >= 0.0);
                prev = lr;
            }
        }
    }
}
