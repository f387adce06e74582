use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::config::TrainConfig;
use super::curve::{mean_std, LearningCurve};
use super::train::Trainer;

/// Outcome of one seed within a suite.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub curve: LearningCurve,
    /// Set when the run stopped early; the curve holds everything recorded before that.
    pub error: Option<String>,
}

/// Per-evaluation-index statistics across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub step: u64,
    pub n_seeds: usize,
    pub mean: f64,
    pub std: f64,
    pub ma_mean: f64,
    pub ma_std: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteSummary {
    pub rows: Vec<SuiteRow>,
    /// Final-window score of each seed that reached the window.
    pub final_scores: Vec<(u64, f64)>,
    pub final_mean: f64,
    pub final_std: f64,
}

impl SuiteSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,n_seeds,eval_mean,eval_std,eval_ma_mean,eval_ma_std\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.step, r.n_seeds, r.mean, r.std, r.ma_mean, r.ma_std
            );
        }
        out
    }
}

/// Runs one training per seed, in parallel, each with its own private state.
pub fn run_suite(base: &TrainConfig, seeds: &[u64]) -> Result<Vec<SeedRun>> {
    base.validate()?;
    Ok(seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..base.clone() };
            match Trainer::new(cfg) {
                Ok(mut trainer) => {
                    let error = trainer.run().err().map(|e| e.to_string());
                    SeedRun {
                        seed,
                        curve: trainer.curve().clone(),
                        error,
                    }
                }
                Err(e) => SeedRun {
                    seed,
                    curve: LearningCurve::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

/// Aggregates curves by evaluation index; shorter curves drop out of the later rows.
pub fn aggregate(runs: &[SeedRun], t_max: u64, final_fraction: f64) -> Result<SuiteSummary> {
    if runs.is_empty() {
        return Err(Error::InvalidConfig("no runs to aggregate".into()));
    }
    let longest = runs.iter().map(|r| r.curve.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(longest);
    for i in 0..longest {
        let recs: Vec<_> = runs.iter().filter_map(|r| r.curve.records.get(i)).collect();
        let means: Vec<f64> = recs.iter().map(|r| r.eval_mean).collect();
        let mas: Vec<f64> = recs.iter().map(|r| r.eval_ma).collect();
        let (mean, std) = mean_std(&means);
        let (ma_mean, ma_std) = mean_std(&mas);
        rows.push(SuiteRow {
            step: recs[0].step,
            n_seeds: recs.len(),
            mean,
            std,
            ma_mean,
            ma_std,
        });
    }
    let final_scores: Vec<(u64, f64)> = runs
        .iter()
        .filter_map(|r| r.curve.final_window_score(t_max, final_fraction).map(|s| (r.seed, s)))
        .collect();
    let scores: Vec<f64> = final_scores.iter().map(|&(_, s)| s).collect();
    let (final_mean, final_std) = mean_std(&scores);
    Ok(SuiteSummary {
        rows,
        final_scores,
        final_mean,
        final_std,
    })
}

/// Parses `a..b` (inclusive) or a comma list such as `1,3,5`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidConfig(format!("bad seed list `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    let seeds: Vec<u64> = text
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::curve::EvalRecord;

    fn curve(points: &[(u64, f64)]) -> LearningCurve {
        LearningCurve {
            records: points
                .iter()
                .map(|&(step, m)| EvalRecord {
                    step,
                    eval_mean: m,
                    eval_std: 0.0,
                    eval_ma: m,
                    n_theta: 0.0,
                    n_phi: 0.0,
                    beta_a: 0.0,
                    beta_a_prime: 0.0,
                    beta_c: 0.0,
                    beta_c_prime: 0.0,
                })
                .collect(),
        }
    }

    fn run(seed: u64, points: &[(u64, f64)]) -> SeedRun {
        SeedRun {
            seed,
            curve: curve(points),
            error: None,
        }
    }

    #[test]
    fn single_seed_has_zero_spread() {
        let s = aggregate(&[run(1, &[(0, 1.0), (10, 2.0)])], 10, 0.1).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert!(s.rows.iter().all(|r| r.std == 0.0 && r.ma_std == 0.0));
        assert_eq!((s.final_mean, s.final_std), (2.0, 0.0));
    }

    #[test]
    fn identical_curves_have_zero_spread() {
        let pts = [(0, -5.0), (5, 3.0), (10, 4.0)];
        let s = aggregate(&[run(1, &pts), run(2, &pts), run(3, &pts)], 10, 0.5).unwrap();
        for (r, &(step, v)) in s.rows.iter().zip(&pts) {
            assert_eq!((r.step, r.mean, r.std, r.n_seeds), (step, v, 0.0, 3));
        }
        assert_eq!(s.final_mean, 4.0);
    }

    #[test]
    fn mixed_lengths() {
        let s = aggregate(&[run(1, &[(0, 0.0), (5, 2.0)]), run(2, &[(0, 2.0)])], 10, 0.1).unwrap();
        assert_eq!((s.rows[0].mean, s.rows[0].std, s.rows[0].n_seeds), (1.0, 1.0, 2));
        assert_eq!(s.rows[1].n_seeds, 1);
        assert!(s.final_scores.is_empty());
        assert!(aggregate(&[], 10, 0.1).is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..8").unwrap(), (1..=8).collect::<Vec<_>>());
        assert_eq!(parse_seeds("3,5").unwrap(), vec![3, 5]);
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert!(parse_seeds("8..1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
