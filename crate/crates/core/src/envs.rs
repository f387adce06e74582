//! Built-in continuous-control environments.
//!
//! Both keep the terminated/truncated distinction: only `terminated` should ever produce a
//! done flag in replay.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::bounded_qn::BoxBounds;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub a_low: Vec<f64>,
    pub a_high: Vec<f64>,
    pub max_episode_steps: u64,
}

impl EnvSpec {
    pub fn bounds(&self) -> BoxBounds {
        BoxBounds::new(self.a_low.clone(), self.a_high.clone()).expect("environment bounds are valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// Physical state plus elapsed steps; enough to resume an episode exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    pub state: Vec<f64>,
    pub elapsed: u64,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    fn observation(&self) -> Vec<f64>;
    fn snapshot(&self) -> EnvSnapshot;
    fn restore(&mut self, snapshot: &EnvSnapshot);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Pendulum,
    BalanceBot,
}

impl EnvKind {
    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvKind::Pendulum => Box::new(Pendulum::new()),
            EnvKind::BalanceBot => Box::new(BalanceBot::new()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::BalanceBot => "balancebot",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "balancebot" => Ok(EnvKind::BalanceBot),
            other => Err(Error::InvalidConfig(format!("unknown environment `{other}`"))),
        }
    }
}

fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<()> {
    if action.len() != spec.action_dim {
        return Err(crate::error::dim_mismatch("env step", spec.action_dim, action.len()));
    }
    for (i, &a) in action.iter().enumerate() {
        if !(a >= spec.a_low[i] && a <= spec.a_high[i]) {
            return Err(Error::ActionOutOfBounds {
                index: i,
                value: a,
                low: spec.a_low[i],
                high: spec.a_high[i],
            });
        }
    }
    Ok(())
}

/// Maps an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Torque-limited pendulum swing-up. Angle 0 is upright; never terminates.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    pub theta: f64,
    pub theta_dot: f64,
    elapsed: u64,
}

impl Pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum".into(),
                obs_dim: 3,
                action_dim: 1,
                a_low: vec![-Self::MAX_TORQUE],
                a_high: vec![Self::MAX_TORQUE],
                max_episode_steps: 200,
            },
            theta: 0.0,
            theta_dot: 0.0,
            elapsed: 0,
        }
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.elapsed = 0;
    }

    pub fn reward(theta: f64, theta_dot: f64, torque: f64) -> f64 {
        -(wrap_angle(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque)
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.theta = rng.uniform(-PI, PI);
        self.theta_dot = rng.uniform(-1.0, 1.0);
        self.elapsed = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_action(&self.spec, action)?;
        let u = action[0];
        let reward = Self::reward(self.theta, self.theta_dot, u);
        let accel = 3.0 * Self::GRAVITY / (2.0 * Self::LENGTH) * self.theta.sin()
            + 3.0 / (Self::MASS * Self::LENGTH * Self::LENGTH) * u;
        // semi-implicit Euler: velocity first
        self.theta_dot = (self.theta_dot + accel * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.theta_dot * Self::DT;
        self.elapsed += 1;
        Ok(StepResult {
            obs: self.observation(),
            reward,
            terminated: false,
            truncated: self.elapsed >= self.spec.max_episode_steps,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            state: vec![self.theta, self.theta_dot],
            elapsed: self.elapsed,
        }
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) {
        self.theta = snapshot.state[0];
        self.theta_dot = snapshot.state[1];
        self.elapsed = snapshot.elapsed;
    }
}

/// Cart with a hinged pole; +1 reward per step alive.
#[derive(Debug, Clone)]
pub struct BalanceBot {
    spec: EnvSpec,
    /// (x, ẋ, θ, θ̇)
    pub state: [f64; 4],
    elapsed: u64,
}

impl BalanceBot {
    pub const GRAVITY: f64 = 9.8;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const DT: f64 = 0.02;
    pub const MAX_FORCE: f64 = 3.0;
    pub const THETA_LIMIT: f64 = 0.2;
    pub const X_LIMIT: f64 = 2.4;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "balancebot".into(),
                obs_dim: 4,
                action_dim: 1,
                a_low: vec![-Self::MAX_FORCE],
                a_high: vec![Self::MAX_FORCE],
                max_episode_steps: 1000,
            },
            state: [0.0; 4],
            elapsed: 0,
        }
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.elapsed = 0;
    }

    fn failed(&self) -> bool {
        self.state[2].abs() > Self::THETA_LIMIT || self.state[0].abs() > Self::X_LIMIT
    }
}

impl Default for BalanceBot {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for BalanceBot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        for v in self.state.iter_mut() {
            *v = rng.uniform(-0.01, 0.01);
        }
        self.elapsed = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_action(&self.spec, action)?;
        let force = action[0];
        let [x, x_dot, theta, theta_dot] = self.state;
        // cart-pole equations linearized about the upright position
        let total_mass = Self::CART_MASS + Self::POLE_MASS;
        let pole_ml = Self::POLE_MASS * Self::HALF_LENGTH;
        let theta_acc = (Self::GRAVITY * theta - force / total_mass)
            / (Self::HALF_LENGTH * (4.0 / 3.0 - Self::POLE_MASS / total_mass));
        let x_acc = (force - pole_ml * theta_acc) / total_mass;
        self.state = [
            x + Self::DT * x_dot,
            x_dot + Self::DT * x_acc,
            theta + Self::DT * theta_dot,
            theta_dot + Self::DT * theta_acc,
        ];
        self.elapsed += 1;
        let terminated = self.failed();
        Ok(StepResult {
            obs: self.observation(),
            reward: 1.0,
            terminated,
            truncated: !terminated && self.elapsed >= self.spec.max_episode_steps,
        })
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            state: self.state.to_vec(),
            elapsed: self.elapsed,
        }
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) {
        self.state.copy_from_slice(&snapshot.state);
        self.elapsed = snapshot.elapsed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_reward_examples() {
        assert_eq!(Pendulum::reward(0.0, 0.0, 0.0), 0.0);
        assert!((Pendulum::reward(PI, 0.0, 0.0) + PI * PI).abs() < 1e-12);
        let mut p = Pendulum::new();
        p.set_state(0.0, 0.0);
        let r = p.step(&[0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(!r.terminated);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pendulum_rewards_bounded_and_truncates() {
        let mut rng = Rng::new(8);
        let mut p = Pendulum::new();
        p.reset(&mut rng);
        let floor = -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0);
        let mut total = 0.0;
        for t in 1..=200 {
            let a = [rng.uniform(-2.0, 2.0)];
            let r = p.step(&a).unwrap();
            assert!(r.reward <= 0.0 && r.reward >= floor);
            assert!(!r.terminated);
            assert_eq!(r.truncated, t == 200);
            total += r.reward;
        }
        assert!(total >= -200.0 * 17.06);
    }

    #[test]
    fn pendulum_energy_drift_is_small() {
        let mut rng = Rng::new(9);
        let energy = |p: &Pendulum| {
            0.5 * p.theta_dot.powi(2) + 1.5 * Pendulum::GRAVITY / Pendulum::LENGTH * p.theta.cos()
        };
        for _ in 0..1000 {
            let mut p = Pendulum::new();
            p.set_state(rng.uniform(-PI, PI), rng.uniform(-4.0, 4.0));
            let e0 = energy(&p);
            p.step(&[0.0]).unwrap();
            assert!((energy(&p) - e0).abs() <= 1.0);
        }
    }

    #[test]
    fn pendulum_rejects_out_of_range_torque() {
        let mut p = Pendulum::new();
        assert!(matches!(p.step(&[2.5]), Err(Error::ActionOutOfBounds { .. })));
        assert!(p.step(&[f64::NAN]).is_err());
    }

    #[test]
    fn balancebot_equilibrium() {
        let mut b = BalanceBot::new();
        b.set_state([0.0; 4]);
        let r = b.step(&[0.0]).unwrap();
        assert_eq!(b.state[2], 0.0);
        assert_eq!(r.reward, 1.0);
        assert!(!r.terminated && !r.truncated);
    }

    #[test]
    fn balancebot_terminates_past_angle() {
        let mut b = BalanceBot::new();
        b.set_state([0.0, 0.0, 0.25, 0.0]);
        let r = b.step(&[0.0]).unwrap();
        assert!(r.terminated);
        assert!(!r.truncated);
    }

    #[test]
    fn balancebot_terminates_past_track() {
        let mut b = BalanceBot::new();
        b.set_state([2.45, 0.0, 0.0, 0.0]);
        assert!(b.step(&[0.0]).unwrap().terminated);
    }

    #[test]
    fn balancebot_truncates_at_limit() {
        // hold the pole exactly upright by restoring the equilibrium each step
        let mut b = BalanceBot::new();
        b.set_state([0.0; 4]);
        let mut ret = 0.0;
        let mut last = None;
        for _ in 0..1000 {
            let r = b.step(&[0.0]).unwrap();
            ret += r.reward;
            last = Some(r);
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminated);
        assert_eq!(ret, 1000.0);
    }

    #[test]
    fn determinism() {
        let run = || {
            let mut rng = Rng::new(77);
            let mut env = EnvKind::BalanceBot.make();
            let mut obs = env.reset(&mut rng);
            for _ in 0..50 {
                let a = [rng.uniform(-3.0, 3.0)];
                obs = env.step(&a).unwrap().obs;
            }
            obs
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn snapshot_restores_exactly() {
        let mut rng = Rng::new(1);
        let mut env = EnvKind::Pendulum.make();
        env.reset(&mut rng);
        env.step(&[1.0]).unwrap();
        let snap = env.snapshot();
        let a = env.step(&[0.3]).unwrap();
        env.restore(&snap);
        assert_eq!(env.step(&[0.3]).unwrap(), a);
    }
}
