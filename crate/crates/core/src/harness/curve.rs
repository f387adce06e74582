use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str =
    "step,eval_mean,eval_std,eval_ma10,n_theta,n_phi,beta_a,beta_a_prime,beta_c,beta_c_prime";

/// One evaluation point of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub eval_ma: f64,
    pub n_theta: f64,
    pub n_phi: f64,
    pub beta_a: f64,
    pub beta_a_prime: f64,
    pub beta_c: f64,
    pub beta_c_prime: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<EvalRecord>,
}

impl LearningCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    pub fn eval_means(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eval_mean).collect()
    }

    /// Mean of the evaluation returns recorded at steps above `(1 − fraction)·t_max`.
    pub fn final_window_score(&self, t_max: u64, fraction: f64) -> Option<f64> {
        let start = (1.0 - fraction) * t_max as f64;
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.step as f64 > start)
            .map(|r| r.eval_mean)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// CSV with every float in 17 significant digits, so equal curves give equal bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.step);
            for v in [
                r.eval_mean,
                r.eval_std,
                r.eval_ma,
                r.n_theta,
                r.n_phi,
                r.beta_a,
                r.beta_a_prime,
                r.beta_c,
                r.beta_c_prime,
            ] {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CURVE_HEADER) {
            return Err(Error::InvalidConfig("curve CSV header mismatch".into()));
        }
        let bad = |line: &str| Error::InvalidConfig(format!("bad curve row `{line}`"));
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 10 {
                return Err(bad(line));
            }
            let step = fields[0].parse().map_err(|_| bad(line))?;
            let mut v = [0.0; 9];
            for (slot, f) in v.iter_mut().zip(&fields[1..]) {
                *slot = f.parse().map_err(|_| bad(line))?;
            }
            records.push(EvalRecord {
                step,
                eval_mean: v[0],
                eval_std: v[1],
                eval_ma: v[2],
                n_theta: v[3],
                n_phi: v[4],
                beta_a: v[5],
                beta_a_prime: v[6],
                beta_c: v[7],
                beta_c_prime: v[8],
            });
        }
        Ok(Self { records })
    }
}

/// Trailing mean over at most `window` values, one output per input.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    (0..values.len())
        .map(|i| {
            let n = (i + 1).min(window);
            values[i + 1 - n..=i].iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, mean: f64) -> EvalRecord {
        EvalRecord {
            step,
            eval_mean: mean,
            eval_std: 0.0,
            eval_ma: mean,
            n_theta: 0.1,
            n_phi: 1.0 / 3.0,
            beta_a: 0.01,
            beta_a_prime: 0.01,
            beta_c: 0.01,
            beta_c_prime: 0.01,
        }
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[5.0], 10), vec![5.0]);
        let v: Vec<f64> = (1..=12).map(f64::from).collect();
        let ma = moving_average(&v, 10);
        assert_eq!(ma[9], 5.5);
        assert_eq!(ma[11], 7.5);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let curve = LearningCurve {
            records: vec![rec(0, -1234.5678901234567), rec(2000, 0.1 + 0.2)],
        };
        let text = curve.to_csv();
        assert!(text.starts_with(CURVE_HEADER));
        assert_eq!(LearningCurve::from_csv(&text).unwrap(), curve);
        assert_eq!(LearningCurve::from_csv(&text).unwrap().to_csv(), text);
    }

    #[test]
    fn final_window() {
        let curve = LearningCurve {
            records: (0..=10).map(|i| rec(i * 1000, i as f64)).collect(),
        };
        assert_eq!(curve.final_window_score(10_000, 0.1), Some(10.0));
        assert_eq!(curve.final_window_score(10_000, 0.3), Some(9.0));
        assert_eq!(LearningCurve::new().final_window_score(10, 0.1), None);
    }

    #[test]
    fn mean_std_population() {
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}
