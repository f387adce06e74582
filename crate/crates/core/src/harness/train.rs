use crate::agent::{
    compute_optimal_for_storage, random_action, select_action_aac, select_action_oac, ActionMode,
    AgentState,
};
use crate::bounded_qn::{BoxBounds, QnConfig};
use crate::envs::{EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::ls_update::{actor_lr_update, critic_lr_update, normalized_norm};
use crate::network::{ddpg_actor_step, ddpg_critic_step, soft_update, ParamSet};
use crate::numerics::Rng;
use crate::replay::{LrBuffer, Transition, TransitionBuffer};

use super::config::TrainConfig;
use super::curve::{mean_std, moving_average, EvalRecord, LearningCurve};

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

/// Mean and spread of undiscounted episode returns.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

/// Runs `episodes` full episodes with `policy`, which sees the observation and the eval stream.
pub fn evaluate<F>(env: &mut dyn Environment, episodes: usize, rng: &mut Rng, mut policy: F) -> Result<EvalStats>
where
    F: FnMut(&[f64], &mut Rng) -> Result<Vec<f64>>,
{
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut total = 0.0;
        loop {
            let a = policy(&obs, rng)?;
            let res = env.step(&a)?;
            total += res.reward;
            if res.terminated || res.truncated {
                break;
            }
            obs = res.obs;
        }
        returns.push(total);
    }
    let (mean, std) = mean_std(&returns);
    Ok(EvalStats { mean, std, returns })
}

/// Coefficient state and output-layer norms at one least-squares event.
#[derive(Debug, Clone, PartialEq)]
pub struct LrEventRecord {
    pub step: u64,
    pub n_theta: f64,
    pub n_phi: f64,
    pub actor_reset: bool,
    pub critic_reset: bool,
    pub beta_a: f64,
    pub beta_a_prime: f64,
    pub beta_c: f64,
    pub beta_c_prime: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunCounters {
    pub qn_calls: u64,
    pub ddpg_critic_updates: u64,
    pub ddpg_actor_updates: u64,
    pub lr_critic_updates: u64,
    pub lr_actor_updates: u64,
}

/// All mutable state of one training run.
pub struct Trainer {
    pub(crate) cfg: TrainConfig,
    pub(crate) env: Box<dyn Environment>,
    pub(crate) eval_env: Box<dyn Environment>,
    pub(crate) bounds: BoxBounds,
    pub(crate) qn: QnConfig,
    pub(crate) agent: AgentState,
    pub(crate) replay: TransitionBuffer,
    pub(crate) lr_buffer: LrBuffer,
    pub(crate) rng: Rng,
    pub(crate) eval_rng: Rng,
    pub(crate) obs: Vec<f64>,
    pub(crate) step: u64,
    pub(crate) curve: LearningCurve,
    pub(crate) lr_events: Vec<LrEventRecord>,
    pub(crate) counters: RunCounters,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = cfg.env.make();
        let eval_env = cfg.env.make();
        let spec = env.spec().clone();
        let mut init_rng = Rng::with_stream(cfg.seed, INIT_STREAM);
        let agent = AgentState::new(
            &mut init_rng,
            spec.obs_dim,
            spec.action_dim,
            cfg.hidden,
            cfg.learning_rate,
            cfg.reg_schedule(),
        );
        let mut rng = Rng::with_stream(cfg.seed, TRAIN_STREAM);
        let obs = env.reset(&mut rng);
        let mut trainer = Self {
            bounds: spec.bounds(),
            qn: cfg.qn_config(),
            replay: TransitionBuffer::new(cfg.buffer_capacity),
            lr_buffer: LrBuffer::new(),
            eval_rng: Rng::with_stream(cfg.seed, EVAL_STREAM),
            cfg,
            env,
            eval_env,
            agent,
            rng,
            obs,
            step: 0,
            curve: LearningCurve::new(),
            lr_events: Vec::new(),
            counters: RunCounters::default(),
        };
        trainer.record_evaluation()?;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env_spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn agent(&self) -> &AgentState {
        &self.agent
    }

    /// Number of completed environment steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn lr_events(&self) -> &[LrEventRecord] {
        &self.lr_events
    }

    pub fn counters(&self) -> &RunCounters {
        &self.counters
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.t_max
    }

    /// Raises `t_max`, e.g. to continue a resumed run past its original length.
    pub fn extend_to(&mut self, t_max: u64) -> Result<()> {
        if t_max < self.step {
            return Err(Error::InvalidConfig(format!(
                "cannot shorten a run to {t_max} steps; it already ran {}",
                self.step
            )));
        }
        self.cfg.t_max = t_max;
        Ok(())
    }

    /// Trains up to `t_max` steps.
    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.cfg.t_max)
    }

    /// Trains until `step() == target` (capped at `t_max`).
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        let target = target.min(self.cfg.t_max);
        while self.step < target {
            self.advance()?;
        }
        Ok(())
    }

    /// One global time step of the training loop.
    pub fn advance(&mut self) -> Result<()> {
        let t = self.step + 1;
        self.act_and_learn(t).map_err(|e| self.as_divergence(t, e))?;
        self.step = t;
        if !self.agent.actor.is_finite() || !self.agent.critic.is_finite() {
            return Err(Error::DivergenceAbort {
                step: t,
                reason: "non-finite network parameters".into(),
            });
        }
        if t.is_multiple_of(self.cfg.eval_interval) {
            self.record_evaluation()?;
        }
        Ok(())
    }

    fn as_divergence(&self, t: u64, e: Error) -> Error {
        match e {
            Error::NonFiniteLoss(_) | Error::NotPositiveDefinite { .. } => Error::DivergenceAbort {
                step: t,
                reason: e.to_string(),
            },
            other => other,
        }
    }

    fn act_and_learn(&mut self, t: u64) -> Result<()> {
        let cfg = &self.cfg;
        let s = std::mem::take(&mut self.obs);
        let (a, o) = if t > cfg.t_rand {
            match cfg.action_mode {
                ActionMode::Oac => {
                    self.counters.qn_calls += 1;
                    let c = select_action_oac(
                        &self.agent,
                        &s,
                        &self.bounds,
                        cfg.b,
                        &self.qn,
                        cfg.noise_sigma,
                        &mut self.rng,
                        true,
                    )?;
                    (c.a, c.o)
                }
                ActionMode::Aac => {
                    let c = select_action_aac(&self.agent, &s, &self.bounds, cfg.noise_sigma, &mut self.rng, true)?;
                    let o = if cfg.use_lr_actor {
                        self.counters.qn_calls += 1;
                        Some(compute_optimal_for_storage(&self.agent, &s, &self.bounds, cfg.b, &self.qn)?)
                    } else {
                        None
                    };
                    (c.a, o)
                }
            }
        } else {
            (random_action(&self.bounds, &mut self.rng), None)
        };

        let res = self.env.step(&a)?;
        self.replay.push(Transition {
            s: s.clone(),
            a,
            r: res.reward,
            s_next: res.obs.clone(),
            d: if res.terminated { 1.0 } else { 0.0 },
        });
        if let Some(o) = o {
            self.lr_buffer.push(s, o);
        }

        if t > self.cfg.t_rand {
            self.ddpg_update(self.cfg.use_ddpg_critic, self.cfg.use_ddpg_actor)?;
        } else if t == self.cfg.t_rand {
            // Warm-up burst for every network that will be trained at all.
            let critic = self.cfg.use_ddpg_critic || self.cfg.use_lr_critic;
            let actor = self.cfg.use_ddpg_actor || self.cfg.use_lr_actor;
            for _ in 0..self.cfg.t_rand {
                self.ddpg_update(critic, actor)?;
            }
        }

        if t.is_multiple_of(self.cfg.t_lr) && t > self.cfg.t_rand {
            self.lr_event(t)?;
        }

        self.obs = if res.terminated || res.truncated {
            self.env.reset(&mut self.rng)
        } else {
            res.obs
        };
        Ok(())
    }

    fn ddpg_update(&mut self, critic_on: bool, actor_on: bool) -> Result<()> {
        if !critic_on && !actor_on {
            return Ok(());
        }
        let cfg = &self.cfg;
        let mb = self.replay.sample_minibatch(&mut self.rng, cfg.n_mb)?;
        let ag = &mut self.agent;
        if critic_on {
            ddpg_critic_step(
                &mut ag.critic,
                &ag.actor_target,
                &ag.critic_target,
                &mb,
                cfg.gamma,
                ag.coeffs.beta_c_prime,
                &self.bounds,
                &mut ag.critic_adam,
            )?;
            self.counters.ddpg_critic_updates += 1;
        }
        if actor_on {
            ddpg_actor_step(
                &mut ag.actor,
                &ag.critic,
                &mb,
                cfg.c,
                ag.coeffs.beta_a_prime,
                &self.bounds,
                &mut ag.actor_adam,
            )?;
            self.counters.ddpg_actor_updates += 1;
        }
        if critic_on {
            soft_update(&mut ag.critic_target, &ag.critic, cfg.tau_ddpg)?;
        }
        if actor_on {
            soft_update(&mut ag.actor_target, &ag.actor, cfg.tau_ddpg)?;
        }
        Ok(())
    }

    fn lr_event(&mut self, t: u64) -> Result<()> {
        let cfg = &self.cfg;
        let ag = &mut self.agent;
        let n_theta = normalized_norm(&ag.actor.w_out);
        let n_phi = normalized_norm(&ag.critic.w_out);
        let upd = ag.coeffs.update(n_theta, n_phi);
        if upd.actor_reset || upd.critic_reset {
            log::debug!(
                "step {t}: coefficient reset (actor {}, critic {}), n_theta {n_theta:.4}, n_phi {n_phi:.4}",
                upd.actor_reset,
                upd.critic_reset
            );
        }
        self.lr_events.push(LrEventRecord {
            step: t,
            n_theta,
            n_phi,
            actor_reset: upd.actor_reset,
            critic_reset: upd.critic_reset,
            beta_a: ag.coeffs.beta_a,
            beta_a_prime: ag.coeffs.beta_a_prime,
            beta_c: ag.coeffs.beta_c,
            beta_c_prime: ag.coeffs.beta_c_prime,
        });

        let pairs = self.lr_buffer.drain();
        let run_actor = cfg.use_lr_actor && !pairs.is_empty();
        if !(cfg.use_lr_critic || run_actor) {
            return Ok(());
        }
        let mb = self.replay.sample_minibatch(&mut self.rng, cfg.n_lrmb)?;
        if cfg.use_lr_critic {
            critic_lr_update(
                &mut ag.critic,
                &ag.actor_target,
                &ag.critic_target,
                &mb,
                cfg.gamma,
                ag.coeffs.beta_c,
                &self.bounds,
            )?;
            soft_update(&mut ag.critic_target, &ag.critic, cfg.tau_lr)?;
            self.counters.lr_critic_updates += 1;
        }
        if run_actor {
            actor_lr_update(&mut ag.actor, &pairs, &mb.states, cfg.w_a, ag.coeffs.beta_a)?;
            soft_update(&mut ag.actor_target, &ag.actor, cfg.tau_lr)?;
            self.counters.lr_actor_updates += 1;
        }
        Ok(())
    }

    /// Noise-free evaluation of the current policy; random actions while still in the
    /// random phase.
    pub fn evaluate_policy(&mut self, episodes: usize) -> Result<EvalStats> {
        let random_phase = self.step <= self.cfg.t_rand;
        let (agent, bounds, qn, cfg) = (&self.agent, &self.bounds, &self.qn, &self.cfg);
        let mut qn_calls = 0u64;
        let stats = evaluate(self.eval_env.as_mut(), episodes, &mut self.eval_rng, |obs, rng| {
            if random_phase {
                return Ok(random_action(bounds, rng));
            }
            match cfg.action_mode {
                ActionMode::Oac => {
                    qn_calls += 1;
                    Ok(select_action_oac(agent, obs, bounds, cfg.b, qn, 0.0, rng, false)?.a)
                }
                ActionMode::Aac => Ok(select_action_aac(agent, obs, bounds, 0.0, rng, false)?.a),
            }
        })?;
        self.counters.qn_calls += qn_calls;
        Ok(stats)
    }

    fn record_evaluation(&mut self) -> Result<()> {
        let stats = self.evaluate_policy(self.cfg.eval_episodes)?;
        let mut means = self.curve.eval_means();
        means.push(stats.mean);
        let ma = *moving_average(&means, self.cfg.moving_average_window)
            .last()
            .expect("non-empty");
        let ag = &self.agent;
        let rec = EvalRecord {
            step: self.step,
            eval_mean: stats.mean,
            eval_std: stats.std,
            eval_ma: ma,
            n_theta: normalized_norm(&ag.actor.w_out),
            n_phi: normalized_norm(&ag.critic.w_out),
            beta_a: ag.coeffs.beta_a,
            beta_a_prime: ag.coeffs.beta_a_prime,
            beta_c: ag.coeffs.beta_c,
            beta_c_prime: ag.coeffs.beta_c_prime,
        };
        log::info!(
            "step {:>8}  eval {:>10.2} ± {:<8.2} ma {:>10.2}",
            rec.step,
            rec.eval_mean,
            rec.eval_std,
            rec.eval_ma
        );
        self.curve.records.push(rec);
        Ok(())
    }
}

/// Trains a fresh agent to completion and returns its learning curve.
pub fn run_training(cfg: TrainConfig) -> Result<LearningCurve> {
    let mut trainer = Trainer::new(cfg)?;
    trainer.run()?;
    Ok(trainer.curve)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::envs::{EnvKind, EnvSnapshot, EnvSpec, StepResult};
    use crate::network::ParamSet;

    /// A few hundred steps on a narrow network; exercises every phase of the loop.
    pub(crate) fn tiny_config(env: EnvKind) -> TrainConfig {
        let mut cfg = TrainConfig::desk(env);
        cfg.t_max = 600;
        cfg.t_rand = 200;
        cfg.t_lr = 100;
        cfg.n_mb = 16;
        cfg.n_lrmb = 150;
        cfg.hidden = 8;
        cfg.eval_interval = 200;
        cfg.eval_episodes = 2;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn all_updates_off_is_a_no_op() {
        let mut cfg = tiny_config(EnvKind::Pendulum);
        cfg.use_ddpg_actor = false;
        cfg.use_ddpg_critic = false;
        cfg.use_lr_actor = false;
        cfg.use_lr_critic = false;
        cfg.action_mode = ActionMode::Aac;
        let mut t = Trainer::new(cfg).unwrap();
        let before = t.agent().clone();
        t.run().unwrap();
        let after = t.agent();
        assert_eq!(after.actor, before.actor);
        assert_eq!(after.critic, before.critic);
        assert_eq!(after.actor_target, before.actor_target);
        assert_eq!(after.critic_target, before.critic_target);
        assert_eq!(t.counters().qn_calls, 0);
    }

    #[test]
    fn lr_events_follow_the_guard() {
        let mut t = Trainer::new(tiny_config(EnvKind::Pendulum)).unwrap();
        t.run().unwrap();
        let steps: Vec<u64> = t.lr_events().iter().map(|e| e.step).collect();
        assert_eq!(steps, vec![300, 400, 500, 600]);
        let c = t.counters();
        assert_eq!((c.lr_critic_updates, c.lr_actor_updates), (4, 4));
        // burst of t_rand updates, then one per step
        assert_eq!(c.ddpg_critic_updates, 200 + 400);
        assert_eq!(c.ddpg_actor_updates, 200 + 400);
        assert!(t.lr_buffer.is_empty());
        assert!(t.agent().coeffs.in_legal_range());
    }

    #[test]
    fn curve_steps_advance_by_the_interval() {
        let mut t = Trainer::new(tiny_config(EnvKind::BalanceBot)).unwrap();
        t.run().unwrap();
        let steps: Vec<u64> = t.curve().records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 200, 400, 600]);
    }

    #[test]
    fn done_flag_marks_termination_only() {
        let mut cfg = tiny_config(EnvKind::BalanceBot);
        cfg.t_max = 3000;
        cfg.t_rand = 2000;
        cfg.n_lrmb = 2500;
        let mut t = Trainer::new(cfg).unwrap();
        t.run_until(2000).unwrap();
        let mut terminal = 0;
        for tr in t.replay.iter_ordered() {
            let failed = tr.s_next[2].abs() > 0.2 || tr.s_next[0].abs() > 2.4;
            assert_eq!(tr.d == 1.0, failed);
            terminal += failed as usize;
        }
        assert!(terminal > 0);
    }

    #[test]
    fn quasi_newton_calls_by_mode() {
        let mut cfg = tiny_config(EnvKind::Pendulum);
        cfg.action_mode = ActionMode::Aac;
        cfg.use_lr_actor = false;
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.run().unwrap();
        assert_eq!(t.counters().qn_calls, 0);
        assert_eq!(t.counters().lr_actor_updates, 0);

        // storage only: one call per step after the random phase
        cfg.use_lr_actor = true;
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.run().unwrap();
        assert_eq!(t.counters().qn_calls, 400);

        cfg.action_mode = ActionMode::Oac;
        let mut t = Trainer::new(cfg).unwrap();
        t.run().unwrap();
        // training steps plus two evaluations of two 200-step episodes
        assert_eq!(t.counters().qn_calls, 400 + 2 * 2 * 200);
    }

    #[test]
    fn ddpg_disabled_networks_still_get_the_burst() {
        let mut cfg = tiny_config(EnvKind::Pendulum);
        cfg.use_ddpg_actor = false;
        let mut t = Trainer::new(cfg).unwrap();
        let before = t.agent().actor.clone();
        t.run_until(200).unwrap();
        assert_eq!(t.counters().ddpg_actor_updates, 200);
        assert_ne!(t.agent().actor.w_in, before.w_in);
        t.run().unwrap();
        assert_eq!(t.counters().ddpg_actor_updates, 200);
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = tiny_config(EnvKind::Pendulum);
        cfg.learning_rate = 1e300;
        let mut t = Trainer::new(cfg).unwrap();
        match t.run() {
            Err(Error::DivergenceAbort { step, .. }) => assert!(step >= 200),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(!t.curve().is_empty());
    }

    struct Scripted {
        spec: EnvSpec,
        fail_at: u64,
        elapsed: u64,
    }

    impl Scripted {
        fn new(fail_at: u64) -> Self {
            Self {
                spec: EnvSpec {
                    name: "scripted".into(),
                    obs_dim: 1,
                    action_dim: 1,
                    a_low: vec![-1.0],
                    a_high: vec![1.0],
                    max_episode_steps: 1000,
                },
                fail_at,
                elapsed: 0,
            }
        }
    }

    impl Environment for Scripted {
        fn spec(&self) -> &EnvSpec {
            &self.spec
        }
        fn reset(&mut self, _rng: &mut Rng) -> Vec<f64> {
            self.elapsed = 0;
            vec![0.0]
        }
        fn step(&mut self, _action: &[f64]) -> Result<StepResult> {
            self.elapsed += 1;
            let terminated = self.elapsed >= self.fail_at;
            Ok(StepResult {
                obs: vec![0.0],
                reward: 1.0,
                terminated,
                truncated: !terminated && self.elapsed >= self.spec.max_episode_steps,
            })
        }
        fn observation(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn snapshot(&self) -> EnvSnapshot {
            EnvSnapshot {
                state: vec![],
                elapsed: self.elapsed,
            }
        }
        fn restore(&mut self, snapshot: &EnvSnapshot) {
            self.elapsed = snapshot.elapsed;
        }
    }

    #[test]
    fn evaluation_examples() {
        let mut rng = Rng::new(0);
        let zero = |_: &[f64], _: &mut Rng| Ok(vec![0.0]);
        let s = evaluate(&mut Scripted::new(1), 5, &mut rng, zero).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 0.0));
        let s = evaluate(&mut Scripted::new(u64::MAX), 3, &mut rng, zero).unwrap();
        assert_eq!((s.mean, s.std), (1000.0, 0.0));

        let mut env = EnvKind::Pendulum.make();
        let s = evaluate(env.as_mut(), 4, &mut rng, |_, r| Ok(vec![r.uniform(-2.0, 2.0)])).unwrap();
        let mean = s.returns.iter().sum::<f64>() / 4.0;
        let var = s.returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((s.mean - mean).abs() < 1e-9 && (s.std - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn evaluation_does_not_touch_learning_state() {
        let mut t = Trainer::new(tiny_config(EnvKind::Pendulum)).unwrap();
        t.run_until(300).unwrap();
        let agent = t.agent().clone();
        let replay: Vec<_> = t.replay.iter_ordered().cloned().collect();
        let rng = t.rng.state();
        t.evaluate_policy(3).unwrap();
        assert_eq!(t.agent(), &agent);
        assert_eq!(t.replay.iter_ordered().cloned().collect::<Vec<_>>(), replay);
        assert_eq!(t.rng.state(), rng);
        assert!(t.agent().actor.is_finite());
    }
}
