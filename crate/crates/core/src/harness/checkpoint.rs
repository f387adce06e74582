//! Binary little-endian checkpoint format.
//!
//! Layout: magic `DLSD`, `u32` version, then sections in a fixed order. Every tensor is
//! `u32 rows, u32 cols, rows·cols f64`. Vectors are `u64 len` followed by their items.

use std::path::Path;

use crate::agent::AgentState;
use crate::envs::{EnvSnapshot, EnvSpec};
use crate::error::{Error, Result};
use crate::ls_update::{RegCoeffState, RegSchedule};
use crate::network::{ActorParams, AdamState, CriticParams, ParamSet};
use crate::numerics::{Matrix, Rng, RngState};
use crate::replay::{LrBuffer, Transition, TransitionBuffer};

use super::config::TrainConfig;
use super::curve::{EvalRecord, LearningCurve};
use super::train::{LrEventRecord, RunCounters, Trainer};

const MAGIC: &[u8; 4] = b"DLSD";
const VERSION: u32 = 1;

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub env_spec: EnvSpec,
    pub agent: AgentState,
    pub step: u64,
    pub rng: RngState,
    pub eval_rng: RngState,
    pub env: EnvSnapshot,
    pub obs: Vec<f64>,
    pub replay_capacity: u64,
    pub replay: Vec<Transition>,
    pub lr_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub curve: LearningCurve,
    pub lr_events: Vec<LrEventRecord>,
    pub counters: RunCounters,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);

        w.str(&self.config.to_kv_text());

        let spec = &self.env_spec;
        w.str(&spec.name);
        w.u64(spec.obs_dim as u64);
        w.u64(spec.action_dim as u64);
        w.f64s(&spec.a_low);
        w.f64s(&spec.a_high);
        w.u64(spec.max_episode_steps);

        let ag = &self.agent;
        w.params(&ag.actor);
        w.params(&ag.critic);
        w.params(&ag.actor_target);
        w.params(&ag.critic_target);
        w.adam(&ag.actor_adam);
        w.adam(&ag.critic_adam);
        w.coeffs(&ag.coeffs);

        w.u64(self.step);
        w.rng(&self.rng);
        w.rng(&self.eval_rng);

        w.f64s(&self.env.state);
        w.u64(self.env.elapsed);
        w.f64s(&self.obs);

        w.u64(self.replay_capacity);
        w.u64(self.replay.len() as u64);
        for t in &self.replay {
            w.f64s(&t.s);
            w.f64s(&t.a);
            w.f64(t.r);
            w.f64s(&t.s_next);
            w.f64(t.d);
        }
        w.u64(self.lr_pairs.len() as u64);
        for (s, o) in &self.lr_pairs {
            w.f64s(s);
            w.f64s(o);
        }

        w.u64(self.curve.records.len() as u64);
        for r in &self.curve.records {
            w.u64(r.step);
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
                w.f64(v);
            }
        }
        w.u64(self.lr_events.len() as u64);
        for e in &self.lr_events {
            w.u64(e.step);
            w.f64(e.n_theta);
            w.f64(e.n_phi);
            w.u8(e.actor_reset as u8);
            w.u8(e.critic_reset as u8);
            for v in [e.beta_a, e.beta_a_prime, e.beta_c, e.beta_c_prime] {
                w.f64(v);
            }
        }
        let c = &self.counters;
        for v in [
            c.qn_calls,
            c.ddpg_critic_updates,
            c.ddpg_actor_updates,
            c.lr_critic_updates,
            c.lr_actor_updates,
        ] {
            w.u64(v);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }

        let mut config = TrainConfig::desk(crate::envs::EnvKind::Pendulum);
        config
            .apply_kv_text(&r.str()?)
            .map_err(|e| corrupt(format!("config block: {e}")))?;

        let env_spec = EnvSpec {
            name: r.str()?,
            obs_dim: r.len()?,
            action_dim: r.len()?,
            a_low: r.f64s()?,
            a_high: r.f64s()?,
            max_episode_steps: r.u64()?,
        };

        let actor = r.actor()?;
        let critic = r.critic()?;
        let actor_target = r.actor()?;
        let critic_target = r.critic()?;
        if !actor.same_shape(&actor_target) || !critic.same_shape(&critic_target) {
            return Err(corrupt("target shapes differ from main networks"));
        }
        let actor_adam = r.adam(&actor)?;
        let critic_adam = r.adam(&critic)?;
        let coeffs = r.coeffs()?;
        let agent = AgentState {
            actor,
            critic,
            actor_target,
            critic_target,
            actor_adam,
            critic_adam,
            coeffs,
        };

        let step = r.u64()?;
        let rng = r.rng()?;
        let eval_rng = r.rng()?;
        let env = EnvSnapshot {
            state: r.f64s()?,
            elapsed: r.u64()?,
        };
        let obs = r.f64s()?;

        let replay_capacity = r.u64()?;
        let n = r.len()?;
        let mut replay = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            replay.push(Transition {
                s: r.f64s()?,
                a: r.f64s()?,
                r: r.f64()?,
                s_next: r.f64s()?,
                d: r.f64()?,
            });
        }
        let n = r.len()?;
        let mut lr_pairs = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            lr_pairs.push((r.f64s()?, r.f64s()?));
        }

        let n = r.len()?;
        let mut records = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            records.push(EvalRecord {
                step: r.u64()?,
                eval_mean: r.f64()?,
                eval_std: r.f64()?,
                eval_ma: r.f64()?,
                n_theta: r.f64()?,
                n_phi: r.f64()?,
                beta_a: r.f64()?,
                beta_a_prime: r.f64()?,
                beta_c: r.f64()?,
                beta_c_prime: r.f64()?,
            });
        }
        let n = r.len()?;
        let mut lr_events = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            lr_events.push(LrEventRecord {
                step: r.u64()?,
                n_theta: r.f64()?,
                n_phi: r.f64()?,
                actor_reset: r.u8()? != 0,
                critic_reset: r.u8()? != 0,
                beta_a: r.f64()?,
                beta_a_prime: r.f64()?,
                beta_c: r.f64()?,
                beta_c_prime: r.f64()?,
            });
        }
        let counters = RunCounters {
            qn_calls: r.u64()?,
            ddpg_critic_updates: r.u64()?,
            ddpg_actor_updates: r.u64()?,
            lr_critic_updates: r.u64()?,
            lr_actor_updates: r.u64()?,
        };
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            env_spec,
            agent,
            step,
            rng,
            eval_rng,
            env,
            obs,
            replay_capacity,
            replay,
            lr_pairs,
            curve: LearningCurve { records },
            lr_events,
            counters,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            env_spec: self.env.spec().clone(),
            agent: self.agent.clone(),
            step: self.step,
            rng: self.rng.state(),
            eval_rng: self.eval_rng.state(),
            env: self.env.snapshot(),
            obs: self.obs.clone(),
            replay_capacity: self.replay.capacity() as u64,
            replay: self.replay.iter_ordered().cloned().collect(),
            lr_pairs: self.lr_buffer.pairs().to_vec(),
            curve: self.curve.clone(),
            lr_events: self.lr_events.clone(),
            counters: self.counters.clone(),
        }
    }

    /// Continues a run from `cp`. The result evolves exactly as the run that wrote it.
    pub fn from_checkpoint(cp: Checkpoint) -> Result<Self> {
        let cfg = cp.config;
        cfg.validate()?;
        let mut env = cfg.env.make();
        if *env.spec() != cp.env_spec {
            return Err(corrupt("environment spec does not match the configured environment"));
        }
        let ds = cp.env_spec.obs_dim;
        let da = cp.env_spec.action_dim;
        let ag = &cp.agent;
        if ag.actor.state_dim() != ds || ag.actor.action_dim() != da || ag.actor.hidden() != cfg.hidden {
            return Err(corrupt("actor shape does not match the environment"));
        }
        if ag.critic.w_s_in.shape() != (cfg.hidden, ds + 1) || ag.critic.w_a_in.shape() != (cfg.hidden, da) {
            return Err(corrupt("critic shape does not match the environment"));
        }
        if cp.env.state.len() != env.snapshot().state.len() || cp.obs.len() != ds {
            return Err(corrupt("environment state has the wrong length"));
        }
        env.restore(&cp.env);
        let mut lr_buffer = LrBuffer::new();
        for (s, o) in cp.lr_pairs {
            lr_buffer.push(s, o);
        }
        let capacity = usize::try_from(cp.replay_capacity)
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| corrupt("replay capacity"))?;
        Ok(Self {
            eval_env: cfg.env.make(),
            bounds: cp.env_spec.bounds(),
            qn: cfg.qn_config(),
            agent: cp.agent,
            replay: TransitionBuffer::from_ordered(capacity, cp.replay),
            lr_buffer,
            rng: Rng::from_state(&cp.rng),
            eval_rng: Rng::from_state(&cp.eval_rng),
            obs: cp.obs,
            step: cp.step,
            curve: cp.curve,
            lr_events: cp.lr_events,
            counters: cp.counters,
            cfg,
            env,
        })
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        m.as_slice().iter().for_each(|&x| self.f64(x));
    }

    fn params<P: ParamSet>(&mut self, p: &P) {
        p.tensors().into_iter().for_each(|m| self.matrix(m));
    }

    fn adam(&mut self, a: &AdamState) {
        for v in [a.lr, a.beta1, a.beta2, a.epsilon] {
            self.f64(v);
        }
        self.u64(a.t);
        a.m.iter().chain(&a.v).for_each(|m| self.matrix(m));
    }

    fn coeffs(&mut self, c: &RegCoeffState) {
        let s = &c.schedule;
        for v in [
            c.beta_a,
            c.beta_a_prime,
            c.beta_c,
            c.beta_c_prime,
            s.beta_a0,
            s.beta_a_min,
            s.beta_a_prime0,
            s.beta_a_prime_min,
            s.beta_c0,
            s.beta_c_min,
            s.beta_c_prime0,
            s.beta_c_prime_min,
            s.delta,
            s.c_a,
            s.c_c,
        ] {
            self.f64(v);
        }
    }

    fn rng(&mut self, s: &RngState) {
        self.bytes(&s.seed);
        self.u64(s.stream);
        self.bytes(&s.word_pos.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A `u64` length that must fit in the remaining bytes.
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| corrupt(format!("implausible length {n}")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid utf-8"))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n.saturating_mul(8) <= self.buf.len())
            .ok_or_else(|| corrupt("implausible tensor size"))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::new(rows, cols, data).map_err(|e| corrupt(e.to_string()))
    }

    fn actor(&mut self) -> Result<ActorParams> {
        let p = ActorParams {
            w_in: self.matrix()?,
            w_out: self.matrix()?,
        };
        let (h, _) = p.w_in.shape();
        if p.w_out.cols() != h + 1 {
            return Err(corrupt("inconsistent actor shapes"));
        }
        Ok(p)
    }

    fn critic(&mut self) -> Result<CriticParams> {
        let p = CriticParams {
            w_s_in: self.matrix()?,
            w_a_in: self.matrix()?,
            w_out: self.matrix()?,
        };
        let h = p.w_s_in.rows();
        if p.w_a_in.rows() != h || p.w_out.shape() != (1, h + 1) {
            return Err(corrupt("inconsistent critic shapes"));
        }
        Ok(p)
    }

    fn adam<P: ParamSet>(&mut self, params: &P) -> Result<AdamState> {
        let (lr, beta1, beta2, epsilon) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let t = self.u64()?;
        let k = params.tensors().len();
        let m = (0..k).map(|_| self.matrix()).collect::<Result<Vec<_>>>()?;
        let v = (0..k).map(|_| self.matrix()).collect::<Result<Vec<_>>>()?;
        let shapes_ok = params
            .tensors()
            .iter()
            .zip(m.iter().zip(&v))
            .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
        if !shapes_ok {
            return Err(corrupt("optimizer moments do not match parameter shapes"));
        }
        Ok(AdamState {
            lr,
            beta1,
            beta2,
            epsilon,
            t,
            m,
            v,
        })
    }

    fn coeffs(&mut self) -> Result<RegCoeffState> {
        let mut v = [0.0; 15];
        for slot in &mut v {
            *slot = self.f64()?;
        }
        Ok(RegCoeffState {
            beta_a: v[0],
            beta_a_prime: v[1],
            beta_c: v[2],
            beta_c_prime: v[3],
            schedule: RegSchedule {
                beta_a0: v[4],
                beta_a_min: v[5],
                beta_a_prime0: v[6],
                beta_a_prime_min: v[7],
                beta_c0: v[8],
                beta_c_min: v[9],
                beta_c_prime0: v[10],
                beta_c_prime_min: v[11],
                delta: v[12],
                c_a: v[13],
                c_c: v[14],
            },
        })
    }

    fn rng(&mut self) -> Result<RngState> {
        Ok(RngState {
            seed: self.array()?,
            stream: self.u64()?,
            word_pos: u128::from_le_bytes(self.array()?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;
    use crate::harness::train::tests::tiny_config;

    fn mid_run(env: EnvKind) -> Trainer {
        let mut t = Trainer::new(tiny_config(env)).unwrap();
        t.run_until(350).unwrap();
        t
    }

    #[test]
    fn round_trip_is_exact() {
        for env in [EnvKind::Pendulum, EnvKind::BalanceBot] {
            let cp = mid_run(env).checkpoint();
            let bytes = cp.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, cp);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.bin");
        let cp = mid_run(EnvKind::Pendulum).checkpoint();
        cp.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), cp);
        assert!(matches!(Checkpoint::load(&dir.path().join("missing.bin")), Err(Error::Io(_))));
    }

    #[test]
    fn damaged_input_is_rejected() {
        let bytes = mid_run(EnvKind::Pendulum).checkpoint().to_bytes();
        let corrupt = |b: &[u8]| matches!(Checkpoint::from_bytes(b), Err(Error::CorruptCheckpoint(_)));
        for cut in [0, 3, 8, 100, bytes.len() / 2, bytes.len() - 1] {
            assert!(corrupt(&bytes[..cut]), "truncated at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(corrupt(&extra));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(corrupt(&magic));
        let mut version = bytes;
        version[4] = 99;
        assert!(corrupt(&version));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut cp = mid_run(EnvKind::Pendulum).checkpoint();
        cp.config.hidden = 16;
        assert!(matches!(Trainer::from_checkpoint(cp), Err(Error::CorruptCheckpoint(_))));
        let mut cp = mid_run(EnvKind::Pendulum).checkpoint();
        cp.config.env = EnvKind::BalanceBot;
        assert!(Trainer::from_checkpoint(cp).is_err());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        for env in [EnvKind::Pendulum, EnvKind::BalanceBot] {
            let mut full = Trainer::new(tiny_config(env)).unwrap();
            full.run().unwrap();
            for k in [200, 300, 350, 500] {
                let mut part = Trainer::new(tiny_config(env)).unwrap();
                part.run_until(k).unwrap();
                let bytes = part.checkpoint().to_bytes();
                let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
                resumed.run().unwrap();
                assert_eq!(resumed.curve().to_csv(), full.curve().to_csv(), "{env} resumed at {k}");
                assert_eq!(resumed.agent(), full.agent());
                assert_eq!(resumed.lr_events(), full.lr_events());
            }
        }
    }
}
