use serde::{Deserialize, Serialize};

use super::FinetuneError;

/// Triangular one-cycle policy: learning rate up then down (with a final
/// anneal below the start value), momentum mirrored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneCycleSchedule {
    pub total_steps: usize,
    pub max_lr: f64,
    pub div_factor: f64,
    pub final_div: f64,
    pub momentum_high: f64,
    pub momentum_low: f64,
    pub peak_fraction: f64,
}

impl Default for OneCycleSchedule {
    fn default() -> Self {
        OneCycleSchedule {
            total_steps: 1,
            max_lr: 2e-5,
            div_factor: 25.0,
            final_div: 100.0,
            momentum_high: 0.95,
            momentum_low: 0.85,
            peak_fraction: 0.5,
        }
    }
}

impl OneCycleSchedule {
    pub fn new(total_steps: usize) -> Self {
        OneCycleSchedule {
            total_steps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), FinetuneError> {
        let bad = |m: String| Err(FinetuneError::InvalidSchedule(m));
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if !(self.max_lr > 0.0 && self.div_factor > 0.0 && self.final_div > 0.0) {
            return bad("max_lr, div_factor and final_div must be positive".into());
        }
        if !(self.momentum_low < self.momentum_high) {
            return bad(format!(
                "momentum_low {} must be below momentum_high {}",
                self.momentum_low, self.momentum_high
            ));
        }
        if !(self.peak_fraction > 0.0 && self.peak_fraction < 1.0) {
            return bad(format!(
                "peak_fraction must be in (0, 1), got {}",
                self.peak_fraction
            ));
        }
        Ok(())
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.max_lr / (self.div_factor * self.final_div)
    }

    /// Position of the peak in steps (not necessarily an integer).
    pub fn peak(&self) -> f64 {
        self.peak_fraction * self.total_steps as f64
    }

    /// `(learning_rate, momentum)` at `step`, for `0 ≤ step ≤ total_steps`.
    pub fn lr_at(&self, step: usize) -> Result<(f64, f64), FinetuneError> {
        if step > self.total_steps {
            return Err(FinetuneError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        let s = step as f64;
        let peak = self.peak();
        let (hi, lo) = (self.momentum_high, self.momentum_low);
        if s < peak {
            let t = s / peak;
            let start = self.initial_lr();
            Ok((start + (self.max_lr - start) * t, hi - (hi - lo) * t))
        } else {
            let t = (s - peak) / (self.total_steps as f64 - peak);
            let end = self.final_lr();
            Ok((self.max_lr - (self.max_lr - end) * t, lo + (hi - lo) * t))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        let s = OneCycleSchedule::new(1000);
        let (lr, m) = s.lr_at(0).unwrap();
        assert!((lr - 8e-7).abs() < 1e-20);
        assert_eq!(m, 0.95);
        assert_eq!(s.lr_at(500).unwrap(), (2e-5, 0.85));
        let (lr, m) = s.lr_at(250).unwrap();
        assert!((lr - 1.04e-5).abs() < 1e-18);
        assert!((m - 0.90).abs() < 1e-12);
        let (lr, m) = s.lr_at(1000).unwrap();
        assert!((lr - 8e-9).abs() < 1e-20);
        assert!((m - 0.95).abs() < 1e-12);
        assert!(matches!(
            s.lr_at(1001),
            Err(FinetuneError::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn invalid() {
        let mut s = OneCycleSchedule::new(10);
        s.momentum_low = 0.99;
        assert!(s.validate().is_err());
        assert!(OneCycleSchedule::new(0).validate().is_err());
    }
}
