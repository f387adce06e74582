//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! Each iteration fixes the variables that sit on a bound with the gradient pushing outward,
//! builds an L-BFGS direction in the remaining free subspace, and searches along the projected
//! path `P(x + α·d)` with a weak Wolfe line search. Only points that do not increase
//! the objective are accepted, so the result is never worse than the start.

use std::collections::VecDeque;

use crate::error::{dim_mismatch, Error, Result};
use crate::numerics::dot;

/// Per-dimension box `[low, high]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl BoxBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(dim_mismatch("BoxBounds::new", low.len(), high.len()));
        }
        for (i, (l, h)) in low.iter().zip(&high).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::InvalidConfig(format!(
                    "bound {i}: [{l}, {h}] is not a finite interval"
                )));
            }
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clip(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        self.clip_in_place(&mut out);
        out
    }

    pub fn clip_in_place(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim());
        for ((x, &l), &h) in v.iter_mut().zip(&self.low).zip(&self.high) {
            *x = x.max(l).min(h);
        }
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(x, (l, h))| l <= x && x <= h)
    }

    /// `[C(center − radius), C(center + radius)]`, the search box around an actor output.
    pub fn around(&self, center: &[f64], radius: f64) -> BoxBounds {
        let low: Vec<f64> = center.iter().map(|c| c - radius).collect();
        let high: Vec<f64> = center.iter().map(|c| c + radius).collect();
        BoxBounds {
            low: self.clip(&low),
            high: self.clip(&high),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QnConfig {
    /// Outer iterations.
    pub max_iter: usize,
    /// Stored curvature pairs.
    pub memory: usize,
    /// Stop when the max-norm of the projected gradient falls to this value.
    pub projected_gradient_tol: f64,
    /// Stop when `(f_k − f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` falls to this value.
    pub relative_f_tol: f64,
    pub max_linesearch_steps: usize,
}

impl Default for QnConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            memory: 10,
            projected_gradient_tol: 1e-5,
            // factr = 1e7 times machine epsilon
            relative_f_tol: 1e7 * f64::EPSILON,
            max_linesearch_steps: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnStatus {
    ProjectedGradientConverged,
    RelativeDecreaseConverged,
    MaxIterations,
    /// No acceptable step was found; the best iterate so far is returned.
    LineSearchFailure,
    /// The objective was not finite at the start; the start point is returned.
    NonFiniteObjective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QnOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub status: QnStatus,
}

const ARMIJO_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const CURVATURE_REJECT: f64 = 1e-10;

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    capacity: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let ns = dot(&s, &s).sqrt();
        let ny = dot(&y, &y).sqrt();
        if sy <= CURVATURE_REJECT * ns * ny || self.capacity == 0 {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
    }

    /// Two-loop recursion for `−H·g`, restricted to the components where `free` is set.
    fn direction(&self, g: &[f64], free: &[bool]) -> Vec<f64> {
        let mask = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(free)
                .map(|(&x, &f)| if f { x } else { 0.0 })
                .collect()
        };
        let mut q = mask(g);
        let masked: Vec<(Vec<f64>, Vec<f64>, f64)> = self
            .pairs
            .iter()
            .filter_map(|(s, y)| {
                let (s, y) = (mask(s), mask(y));
                let sy = dot(&s, &y);
                // pairs whose free-subspace curvature degenerated are skipped
                (sy > CURVATURE_REJECT * dot(&s, &s).sqrt() * dot(&y, &y).sqrt())
                    .then(|| (s, y, 1.0 / sy))
            })
            .collect();
        let mut alphas = Vec::with_capacity(masked.len());
        for (s, y, rho) in masked.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = masked
            .last()
            .map_or(1.0, |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|x| *x *= gamma);
        for ((s, y, rho), a) in masked.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|x| *x = -*x);
        q
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &BoxBounds, frozen: &[bool]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        if frozen[i] {
            continue;
        }
        let p = (x[i] - g[i]).max(bounds.low[i]).min(bounds.high[i]) - x[i];
        worst = worst.max(p.abs());
    }
    worst
}

fn all_finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

/// Minimizes `objective` over `bounds` starting from `x0`.
///
/// `objective` returns `(f(x), ∇f(x))`. The returned point always lies inside the box and
/// never has a larger objective value than the (clipped) start.
pub fn minimize<F>(mut objective: F, x0: &[f64], bounds: &BoxBounds, cfg: &QnConfig) -> QnOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    assert_eq!(n, bounds.dim(), "start point and bounds differ in length");
    let frozen: Vec<bool> = (0..n).map(|i| bounds.low[i] == bounds.high[i]).collect();
    let mut x = bounds.clip(x0);
    let (mut f, mut g) = objective(&x);
    let mut n_evals = 1;
    if !all_finite(f, &g) {
        log::warn!("quasi-Newton objective is not finite at the start point");
        return QnOutcome {
            x,
            f,
            n_evals,
            iterations: 0,
            status: QnStatus::NonFiniteObjective,
        };
    }

    let mut memory = Memory {
        pairs: VecDeque::with_capacity(cfg.memory),
        capacity: cfg.memory,
    };
    let mut status = QnStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if projected_gradient_norm(&x, &g, bounds, &frozen) <= cfg.projected_gradient_tol {
            status = QnStatus::ProjectedGradientConverged;
            break;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| {
                !frozen[i]
                    && !(x[i] <= bounds.low[i] && g[i] > 0.0)
                    && !(x[i] >= bounds.high[i] && g[i] < 0.0)
            })
            .collect();

        let mut d = memory.direction(&g, &free);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.pairs.clear();
            d = memory.direction(&g, &free);
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                status = QnStatus::LineSearchFailure;
                break;
            }
        }

        let first_step = if memory.pairs.is_empty() {
            1.0 / dot(&d, &d).sqrt()
        } else {
            1.0
        };

        let trial = |alpha: f64| -> (Vec<f64>, bool) {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let mut projected = false;
            for i in 0..n {
                let v = if frozen[i] {
                    bounds.low[i]
                } else {
                    xn[i].max(bounds.low[i]).min(bounds.high[i])
                };
                projected |= v != xn[i] && !frozen[i];
                xn[i] = v;
            }
            (xn, projected)
        };

        // Weak Wolfe bracketing along the projected path: shrink while Armijo fails, grow
        // while the step is too short to satisfy the curvature condition.
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut alpha = first_step;
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>, f64, bool)> = None;
        for _ in 0..cfg.max_linesearch_steps {
            let (xn, projected) = trial(alpha);
            if xn == x {
                break;
            }
            let (fn_, gn) = objective(&xn);
            n_evals += 1;
            if !all_finite(fn_, &gn) {
                hi = alpha;
                alpha = 0.5 * (lo + hi);
                continue;
            }
            let decrease = dot(&g, &xn.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
            if !(fn_ <= f + ARMIJO_C1 * decrease && fn_ <= f) {
                hi = alpha;
                let curvature = fn_ - f - slope * alpha;
                alpha = if lo == 0.0 && curvature > 0.0 {
                    (-slope * alpha * alpha / (2.0 * curvature)).clamp(0.1 * alpha, 0.5 * alpha)
                } else {
                    0.5 * (lo + hi)
                };
                continue;
            }
            let wolfe = dot(&gn, &d) >= WOLFE_C2 * slope;
            accepted = Some((xn, fn_, gn, alpha, projected));
            if wolfe || projected {
                break;
            }
            lo = alpha;
            alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * alpha };
        }

        // Quadratic refinement through f(0), f'(0) and the accepted point; exact on quadratics.
        if let Some((_, fa, _, a, false)) = accepted.clone() {
            let curvature = fa - f - slope * a;
            if curvature > 0.0 {
                let aq = -slope * a * a / (2.0 * curvature);
                if (aq / a - 1.0).abs() > 1e-3 {
                    let (xq, projected) = trial(aq);
                    if !projected && xq != x {
                        let (fq, gq) = objective(&xq);
                        n_evals += 1;
                        if all_finite(fq, &gq) && fq < fa && dot(&gq, &d) >= WOLFE_C2 * slope {
                            accepted = Some((xq, fq, gq, aq, false));
                        }
                    }
                }
            }
        }
        let Some((xn, fn_, gn, _, _)) = accepted else {
            status = QnStatus::LineSearchFailure;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        let rel = (f - fn_) / f.abs().max(fn_.abs()).max(1.0);
        x = xn;
        f = fn_;
        g = gn;
        if rel <= cfg.relative_f_tol {
            status = QnStatus::RelativeDecreaseConverged;
            break;
        }
    }

    QnOutcome {
        x,
        f,
        n_evals,
        iterations,
        status,
    }
}
