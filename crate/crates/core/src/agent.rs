//! Action selection and ownership of the four networks.

use std::fmt;
use std::str::FromStr;

use crate::bounded_qn::{minimize, BoxBounds, QnConfig, QnOutcome, QnStatus};
use crate::error::{Error, Result};
use crate::ls_update::{RegCoeffState, RegSchedule};
use crate::network::{ActorParams, AdamState, CriticParams};
use crate::numerics::Rng;

/// Which action is executed: the quasi-Newton refined one or the clipped actor output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Oac,
    Aac,
}

impl fmt::Display for ActionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionMode::Oac => "oac",
            ActionMode::Aac => "aac",
        })
    }
}

impl FromStr for ActionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oac" => Ok(ActionMode::Oac),
            "aac" => Ok(ActionMode::Aac),
            other => Err(Error::InvalidConfig(format!("unknown action mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub actor: ActorParams,
    pub critic: CriticParams,
    pub actor_target: ActorParams,
    pub critic_target: CriticParams,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
    pub coeffs: RegCoeffState,
}

impl AgentState {
    /// Fresh networks; targets start as exact copies of the main networks.
    pub fn new(
        rng: &mut Rng,
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        learning_rate: f64,
        schedule: RegSchedule,
    ) -> Self {
        let actor = ActorParams::init(rng, state_dim, action_dim, hidden);
        let critic = CriticParams::init(rng, state_dim, action_dim, hidden);
        Self {
            actor_adam: AdamState::new(&actor, learning_rate),
            critic_adam: AdamState::new(&critic, learning_rate),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            coeffs: RegCoeffState::new(schedule),
        }
    }

    /// `μ(s) = C(μ₀(s))`.
    pub fn clipped_actor_action(&self, s: &[f64], bounds: &BoxBounds) -> Result<Vec<f64>> {
        let (mut mu, _) = self.actor.forward(s)?;
        bounds.clip_in_place(&mut mu);
        Ok(mu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionChoice {
    /// Executed action, inside the environment bounds.
    pub a: Vec<f64>,
    /// Quasi-Newton optimal action; present under OAC.
    pub o: Option<Vec<f64>>,
    /// Clipped actor output.
    pub mu: Vec<f64>,
}

/// Approximate `argmax_a Q(s, a)` over `[C(μ − b), C(μ + b)]`, started from `μ`.
///
/// Returns `(o, μ, outcome)`. A non-finite critic falls back to `o = μ`.
pub fn optimal_action(
    state: &AgentState,
    s: &[f64],
    bounds: &BoxBounds,
    b: f64,
    qn: &QnConfig,
) -> Result<(Vec<f64>, Vec<f64>, QnOutcome)> {
    let mu = state.clipped_actor_action(s, bounds)?;
    let search = bounds.around(&mu, b);
    let critic = &state.critic;
    let outcome = minimize(
        |a: &[f64]| {
            let (q, mut g) = critic
                .value_and_grad_action(s, a)
                .expect("dimensions checked by the actor pass");
            g.iter_mut().for_each(|x| *x = -*x);
            (-q, g)
        },
        &mu,
        &search,
        qn,
    );
    let o = if outcome.status == QnStatus::NonFiniteObjective {
        log::warn!("critic is not finite at the actor action; using the actor action");
        mu.clone()
    } else {
        outcome.x.clone()
    };
    Ok((o, mu, outcome))
}

/// Optimal action choosing: `a = C(o + ε)`.
#[allow(clippy::too_many_arguments)]
pub fn select_action_oac(
    state: &AgentState,
    s: &[f64],
    bounds: &BoxBounds,
    b: f64,
    qn: &QnConfig,
    noise_sigma: f64,
    rng: &mut Rng,
    with_noise: bool,
) -> Result<ActionChoice> {
    let (o, mu, _) = optimal_action(state, s, bounds, b, qn)?;
    let a = add_noise(&o, bounds, noise_sigma, rng, with_noise);
    Ok(ActionChoice { a, o: Some(o), mu })
}

/// Actor action choosing: `a = C(μ + ε)`.
pub fn select_action_aac(
    state: &AgentState,
    s: &[f64],
    bounds: &BoxBounds,
    noise_sigma: f64,
    rng: &mut Rng,
    with_noise: bool,
) -> Result<ActionChoice> {
    let mu = state.clipped_actor_action(s, bounds)?;
    let a = add_noise(&mu, bounds, noise_sigma, rng, with_noise);
    Ok(ActionChoice { a, o: None, mu })
}

/// The optimal action used as least-squares training data, whatever action was executed.
pub fn compute_optimal_for_storage(
    state: &AgentState,
    s: &[f64],
    bounds: &BoxBounds,
    b: f64,
    qn: &QnConfig,
) -> Result<Vec<f64>> {
    Ok(optimal_action(state, s, bounds, b, qn)?.0)
}

/// Uniform over the box, per dimension.
pub fn random_action(bounds: &BoxBounds, rng: &mut Rng) -> Vec<f64> {
    bounds
        .low
        .iter()
        .zip(&bounds.high)
        .map(|(&l, &h)| rng.uniform(l, h))
        .collect()
}

fn add_noise(base: &[f64], bounds: &BoxBounds, sigma: f64, rng: &mut Rng, with_noise: bool) -> Vec<f64> {
    let mut a = base.to_vec();
    if with_noise {
        for (x, e) in a.iter_mut().zip(rng.gaussian_vector(base.len(), sigma)) {
            *x += e;
        }
    }
    bounds.clip_in_place(&mut a);
    a
}
