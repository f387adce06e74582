//! Closed-form least-squares updates of the output layers and the schedule of their
//! regularization coefficients.
//!
//! Critic: `w_out = b_c·A_c⁻¹` with `A_c = X_cᵀX_c + β_c·N·I`, `b_c = ỸᵀX_c`.
//!
//! Actor: `W_out = b_a·A_a⁻¹` with `G = X_mbᵀX_mb + β_a·N·I`, `A_a = X_aᵀX_a + w_a·G` and
//! `b_a = OᵀX_a + w_a·W_temp·G`. The anchor term pulls the solution toward the pre-update
//! weights `W_temp` rather than toward zero.

use crate::bounded_qn::BoxBounds;
use crate::error::{dim_mismatch, Result};
use crate::network::{critic_targets, ActorParams, CriticParams};
use crate::numerics::{spd_solve_right, Matrix};
use crate::replay::Minibatch;

/// Root-mean-square of the entries of `w`.
pub fn normalized_norm(w: &Matrix) -> f64 {
    let n = w.as_slice().len();
    assert!(n > 0, "normalized_norm of an empty matrix");
    (w.sum_squares() / n as f64).sqrt()
}

/// Initial values, floors, decay and thresholds of the coefficient schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RegSchedule {
    pub beta_a0: f64,
    pub beta_a_min: f64,
    pub beta_a_prime0: f64,
    pub beta_a_prime_min: f64,
    pub beta_c0: f64,
    pub beta_c_min: f64,
    pub beta_c_prime0: f64,
    pub beta_c_prime_min: f64,
    pub delta: f64,
    pub c_a: f64,
    pub c_c: f64,
}

impl Default for RegSchedule {
    fn default() -> Self {
        Self {
            beta_a0: 0.01,
            beta_a_min: 0.001,
            beta_a_prime0: 0.01,
            beta_a_prime_min: 0.001,
            beta_c0: 0.01,
            beta_c_min: 0.001,
            beta_c_prime0: 0.01,
            beta_c_prime_min: 0.001,
            delta: 0.95,
            c_a: 1.0,
            c_c: 10.0,
        }
    }
}

impl RegSchedule {
    /// Pins both critic coefficients to `value` (no decay, no reset).
    pub fn fix_critic(&mut self, value: f64) {
        self.beta_c0 = value;
        self.beta_c_min = value;
        self.beta_c_prime0 = value;
        self.beta_c_prime_min = value;
    }

    pub fn zero_actor(&mut self) {
        self.beta_a0 = 0.0;
        self.beta_a_min = 0.0;
        self.beta_a_prime0 = 0.0;
        self.beta_a_prime_min = 0.0;
    }

    pub fn zero_critic(&mut self) {
        self.fix_critic(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegCoeffState {
    pub beta_a: f64,
    pub beta_a_prime: f64,
    pub beta_c: f64,
    pub beta_c_prime: f64,
    pub schedule: RegSchedule,
}

/// Which coefficient pairs were reset to their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoeffUpdate {
    pub actor_reset: bool,
    pub critic_reset: bool,
}

impl RegCoeffState {
    pub fn new(schedule: RegSchedule) -> Self {
        Self {
            beta_a: schedule.beta_a0,
            beta_a_prime: schedule.beta_a_prime0,
            beta_c: schedule.beta_c0,
            beta_c_prime: schedule.beta_c_prime0,
            schedule,
        }
    }

    /// Resets a pair to its initial values when its norm exceeds the threshold, otherwise
    /// decays each coefficient geometrically down to its floor.
    pub fn update(&mut self, n_theta: f64, n_phi: f64) -> CoeffUpdate {
        let s = &self.schedule;
        let decay = |beta: f64, min: f64| (s.delta * beta).max(min);
        let actor_reset = n_theta > s.c_a;
        let critic_reset = n_phi > s.c_c;
        if actor_reset {
            self.beta_a = s.beta_a0;
            self.beta_a_prime = s.beta_a_prime0;
        } else {
            self.beta_a = decay(self.beta_a, s.beta_a_min);
            self.beta_a_prime = decay(self.beta_a_prime, s.beta_a_prime_min);
        }
        if critic_reset {
            self.beta_c = s.beta_c0;
            self.beta_c_prime = s.beta_c_prime0;
        } else {
            self.beta_c = decay(self.beta_c, s.beta_c_min);
            self.beta_c_prime = decay(self.beta_c_prime, s.beta_c_prime_min);
        }
        CoeffUpdate {
            actor_reset,
            critic_reset,
        }
    }

    /// Every coefficient lies within `[min, initial]`.
    pub fn in_legal_range(&self) -> bool {
        let s = &self.schedule;
        let ok = |b: f64, min: f64, init: f64| (min..=init).contains(&b);
        ok(self.beta_a, s.beta_a_min, s.beta_a0)
            && ok(self.beta_a_prime, s.beta_a_prime_min, s.beta_a_prime0)
            && ok(self.beta_c, s.beta_c_min, s.beta_c0)
            && ok(self.beta_c_prime, s.beta_c_prime_min, s.beta_c_prime0)
    }
}

/// Free-function form of [`RegCoeffState::update`].
pub fn update_coeffs(state: &mut RegCoeffState, n_theta: f64, n_phi: f64) -> CoeffUpdate {
    state.update(n_theta, n_phi)
}

/// Design matrices for one least-squares event, all computed with the current input weights.
#[derive(Debug, Clone)]
pub struct LrBatchFeatures {
    /// Actor hidden features of the stored states, T × (H+1).
    pub x_a: Matrix,
    /// Stored optimal actions, T × D_a.
    pub o: Matrix,
    /// Actor hidden features of the minibatch states, N × (H+1).
    pub x_a_mb: Matrix,
    /// Critic hidden features of the minibatch state-action pairs, N × (H+1).
    pub x_c_mb: Matrix,
    /// Bootstrap targets, N × 1.
    pub y_tilde: Matrix,
}

impl LrBatchFeatures {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        actor: &ActorParams,
        critic: &CriticParams,
        actor_target: &ActorParams,
        critic_target: &CriticParams,
        lr_pairs: &[(Vec<f64>, Vec<f64>)],
        mb: &Minibatch,
        gamma: f64,
        bounds: &BoxBounds,
    ) -> Self {
        let (x_a, o) = actor_pair_features(actor, lr_pairs);
        let y = critic_targets(actor_target, critic_target, mb, gamma, bounds);
        Self {
            x_a,
            o,
            x_a_mb: actor.hidden_features(&mb.states),
            x_c_mb: critic.hidden_features(&mb.states, &mb.actions),
            y_tilde: Matrix::new(y.len(), 1, y).expect("one target per row"),
        }
    }
}

fn actor_pair_features(actor: &ActorParams, lr_pairs: &[(Vec<f64>, Vec<f64>)]) -> (Matrix, Matrix) {
    let states: Vec<&[f64]> = lr_pairs.iter().map(|(s, _)| s.as_slice()).collect();
    let actions: Vec<&[f64]> = lr_pairs.iter().map(|(_, o)| o.as_slice()).collect();
    let x_a = actor.hidden_features(&Matrix::from_rows(&states));
    (x_a, Matrix::from_rows(&actions))
}

/// `(A_c, b_c)` for the critic output row.
pub fn critic_normal_equations(x_c: &Matrix, y_tilde: &Matrix, beta_c: f64) -> Result<(Matrix, Matrix)> {
    if y_tilde.rows() != x_c.rows() || y_tilde.cols() != 1 {
        return Err(dim_mismatch(
            "critic_normal_equations",
            format!("{} x 1 targets", x_c.rows()),
            format!("{:?}", y_tilde.shape()),
        ));
    }
    let n = x_c.rows() as f64;
    let mut a = x_c.gram();
    a.add_diagonal(beta_c * n);
    let b = y_tilde.t_matmul(x_c)?;
    Ok((a, b))
}

/// `(A_a, b_a)` for the actor output layer.
pub fn actor_normal_equations(
    x_a: &Matrix,
    o: &Matrix,
    x_mb: &Matrix,
    theta_temp: &Matrix,
    w_a: f64,
    beta_a: f64,
) -> Result<(Matrix, Matrix)> {
    if x_a.cols() != x_mb.cols() || theta_temp.cols() != x_a.cols() || o.rows() != x_a.rows() {
        return Err(dim_mismatch(
            "actor_normal_equations",
            format!("{} features", x_a.cols()),
            format!("{} / {}", x_mb.cols(), theta_temp.cols()),
        ));
    }
    let n = x_mb.rows() as f64;
    let mut anchor = x_mb.gram();
    anchor.add_diagonal(beta_a * n);
    let mut a = x_a.gram();
    a.add_scaled(w_a, &anchor)?;
    a.symmetrize()?;
    let mut b = o.t_matmul(x_a)?;
    b.add_scaled(w_a, &theta_temp.matmul(&anchor)?)?;
    Ok((a, b))
}

/// Solves for the critic output row from prepared features.
pub fn solve_critic_output(features: &LrBatchFeatures, beta_c: f64) -> Result<Matrix> {
    let (a, b) = critic_normal_equations(&features.x_c_mb, &features.y_tilde, beta_c)?;
    spd_solve_right(&a, &b)
}

/// Solves for the actor output layer from prepared features and the pre-update weights.
pub fn solve_actor_output(
    features: &LrBatchFeatures,
    theta_temp: &Matrix,
    w_a: f64,
    beta_a: f64,
) -> Result<Matrix> {
    let (a, b) = actor_normal_equations(
        &features.x_a,
        &features.o,
        &features.x_a_mb,
        theta_temp,
        w_a,
        beta_a,
    )?;
    spd_solve_right(&a, &b)
}

/// Replaces the critic's output row by the ridge solution on `mb`.
#[allow(clippy::too_many_arguments)]
pub fn critic_lr_update(
    critic: &mut CriticParams,
    actor_target: &ActorParams,
    critic_target: &CriticParams,
    mb: &Minibatch,
    gamma: f64,
    beta_c: f64,
    bounds: &BoxBounds,
) -> Result<()> {
    let x_c = critic.hidden_features(&mb.states, &mb.actions);
    let y = critic_targets(actor_target, critic_target, mb, gamma, bounds);
    let y = Matrix::new(y.len(), 1, y)?;
    let (a, b) = critic_normal_equations(&x_c, &y, beta_c)?;
    critic.w_out = spd_solve_right(&a, &b)?;
    Ok(())
}

/// Replaces the actor's output layer by the anchored least-squares fit to the stored
/// optimal actions.
pub fn actor_lr_update(
    actor: &mut ActorParams,
    lr_pairs: &[(Vec<f64>, Vec<f64>)],
    mb_states: &Matrix,
    w_a: f64,
    beta_a: f64,
) -> Result<()> {
    let (x_a, o) = actor_pair_features(actor, lr_pairs);
    let x_mb = actor.hidden_features(mb_states);
    let theta_temp = actor.w_out.clone();
    let (a, b) = actor_normal_equations(&x_a, &o, &x_mb, &theta_temp, w_a, beta_a)?;
    actor.w_out = spd_solve_right(&a, &b)?;
    Ok(())
}
