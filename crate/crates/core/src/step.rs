//! Right-continuous step functions with left limits, the carrier for
//! cumulative hazards, cumulative incidence curves, and residual processes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A cadlag step function: jumps at strictly increasing `times`, taking
/// value `values[i]` on `[times[i], times[i+1])` and `value0` before the
/// first jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
    value0: f64,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>, value0: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Invalid(format!(
                "step function needs one value per jump time ({} times, {} values)",
                times.len(),
                values.len()
            )));
        }
        for w in times.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Invalid(format!(
                    "jump times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if times.iter().any(|t| !t.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite step function data".into()));
        }
        Ok(Self {
            times,
            values,
            value0,
        })
    }

    /// The zero function.
    pub fn zero() -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
            value0: 0.0,
        }
    }

    /// Value at `t`: the value after the last jump at or before `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&u| u <= t);
        if idx == 0 {
            self.value0
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit at `t`: the value after the last jump strictly before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&u| u < t);
        if idx == 0 {
            self.value0
        } else {
            self.values[idx - 1]
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value0(&self) -> f64 {
        self.value0
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_non_decreasing(&self) -> bool {
        let mut prev = self.value0;
        for &v in &self.values {
            if v < prev {
                return false;
            }
            prev = v;
        }
        true
    }

    /// Jump sizes, one per jump time.
    pub fn jump_sizes(&self) -> Vec<f64> {
        let mut prev = self.value0;
        self.values
            .iter()
            .map(|&v| {
                let d = v - prev;
                prev = v;
                d
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_left_limit() {
        let f = StepFunction::new(vec![1.0, 2.0, 3.0], vec![0.5, 0.8, 1.4], 0.0).unwrap();
        assert_eq!(f.eval(0.9), 0.0);
        assert_eq!(f.eval(1.0), 0.5);
        assert_eq!(f.eval_left(1.0), 0.0);
        assert_eq!(f.eval(2.5), 0.8);
        assert_eq!(f.eval_left(3.0), 0.8);
        assert_eq!(f.eval(3.0), 1.4);
        assert_eq!(f.eval(10.0), 1.4);
    }

    #[test]
    fn rejects_unsorted_times() {
        assert!(StepFunction::new(vec![1.0, 1.0], vec![0.1, 0.2], 0.0).is_err());
        assert!(StepFunction::new(vec![2.0, 1.0], vec![0.1, 0.2], 0.0).is_err());
    }

    #[test]
    fn jump_sizes_sum_to_final_value() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![0.25, 0.75], 0.0).unwrap();
        let total: f64 = f.jump_sizes().iter().sum();
        assert!((total - 0.75).abs() < 1e-15);
    }
}
