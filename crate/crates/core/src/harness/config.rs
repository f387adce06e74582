use std::fmt::Write as _;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::agent::ActionMode;
use crate::bounded_qn::QnConfig;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::ls_update::RegSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Hyperparameters exactly as published.
    Paper,
    /// Scaled down to run on one laptop core.
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::InvalidConfig(format!("unknown profile `{other}`"))),
        }
    }
}

/// Which regularization coefficients are forced to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroReg {
    Actor,
    Critic,
    All,
}

impl FromStr for ZeroReg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actor" => Ok(ZeroReg::Actor),
            "critic" => Ok(ZeroReg::Critic),
            "all" => Ok(ZeroReg::All),
            other => Err(Error::InvalidConfig(format!("unknown zero-reg target `{other}`"))),
        }
    }
}

impl fmt::Display for ZeroReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZeroReg::Actor => "actor",
            ZeroReg::Critic => "critic",
            ZeroReg::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub t_max: u64,
    pub t_rand: u64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub n_mb: usize,
    pub n_lrmb: usize,
    pub t_lr: u64,
    pub w_a: f64,
    pub tau_ddpg: f64,
    pub tau_lr: f64,
    pub qn_max_iter: usize,
    pub b: f64,
    pub beta_a0: f64,
    pub beta_a_min: f64,
    pub beta_a_prime0: f64,
    pub beta_a_prime_min: f64,
    pub beta_c0: f64,
    pub beta_c_min: f64,
    pub beta_c_prime0: f64,
    pub beta_c_prime_min: f64,
    pub c: f64,
    pub delta: f64,
    pub c_a: f64,
    pub c_c: f64,
    pub hidden: usize,
    pub use_ddpg_actor: bool,
    pub use_ddpg_critic: bool,
    pub use_lr_actor: bool,
    pub use_lr_critic: bool,
    pub action_mode: ActionMode,
    pub seed: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub moving_average_window: usize,
    /// Pins β_c and β′_c to this value instead of scheduling them.
    pub fix_beta_c: Option<f64>,
    pub zero_reg: Option<ZeroReg>,
    /// Fraction of `t_max` at the end of training used for the final score.
    pub final_fraction: f64,
}

impl TrainConfig {
    pub fn paper(env: EnvKind) -> Self {
        Self {
            env,
            t_max: 1_000_000,
            t_rand: 25_000,
            gamma: 0.99,
            noise_sigma: 0.1,
            learning_rate: 0.001,
            buffer_capacity: 1_000_000,
            n_mb: 256,
            n_lrmb: 10_000,
            t_lr: 1000,
            w_a: 2.0,
            tau_ddpg: 0.005,
            tau_lr: 0.1,
            qn_max_iter: 10,
            b: 0.4,
            beta_a0: 0.01,
            beta_a_min: 0.001,
            beta_a_prime0: 0.01,
            beta_a_prime_min: 0.001,
            beta_c0: 0.01,
            beta_c_min: 0.001,
            beta_c_prime0: 0.01,
            beta_c_prime_min: 0.001,
            c: 0.001,
            delta: 0.95,
            c_a: 1.0,
            c_c: 10.0,
            hidden: 1024,
            use_ddpg_actor: true,
            use_ddpg_critic: true,
            use_lr_actor: true,
            use_lr_critic: true,
            action_mode: ActionMode::Oac,
            seed: 0,
            eval_interval: 2000,
            eval_episodes: 10,
            moving_average_window: 10,
            fix_beta_c: None,
            zero_reg: None,
            final_fraction: 0.1,
        }
    }

    pub fn desk(env: EnvKind) -> Self {
        Self {
            t_max: 60_000,
            t_rand: 1000,
            n_lrmb: 2000,
            hidden: 256,
            ..Self::paper(env)
        }
    }

    pub fn for_profile(profile: Profile, env: EnvKind) -> Self {
        match profile {
            Profile::Paper => Self::paper(env),
            Profile::Desk => Self::desk(env),
        }
    }

    /// The coefficient schedule after applying the fixed-β and zeroed-β ablations.
    pub fn reg_schedule(&self) -> RegSchedule {
        let mut s = RegSchedule {
            beta_a0: self.beta_a0,
            beta_a_min: self.beta_a_min,
            beta_a_prime0: self.beta_a_prime0,
            beta_a_prime_min: self.beta_a_prime_min,
            beta_c0: self.beta_c0,
            beta_c_min: self.beta_c_min,
            beta_c_prime0: self.beta_c_prime0,
            beta_c_prime_min: self.beta_c_prime_min,
            delta: self.delta,
            c_a: self.c_a,
            c_c: self.c_c,
        };
        if let Some(v) = self.fix_beta_c {
            s.fix_critic(v);
        }
        match self.zero_reg {
            Some(ZeroReg::Actor) => s.zero_actor(),
            Some(ZeroReg::Critic) => s.zero_critic(),
            Some(ZeroReg::All) => {
                s.zero_actor();
                s.zero_critic();
            }
            None => {}
        }
        s
    }

    pub fn qn_config(&self) -> QnConfig {
        QnConfig {
            max_iter: self.qn_max_iter,
            ..QnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.t_max == 0 || self.t_lr == 0 || self.eval_interval == 0 {
            return fail("t_max, t_lr and eval_interval must be positive".into());
        }
        if self.n_mb == 0 || self.hidden == 0 || self.eval_episodes == 0 || self.buffer_capacity == 0 {
            return fail("n_mb, hidden, eval_episodes and buffer_capacity must be positive".into());
        }
        if self.moving_average_window == 0 || self.qn_max_iter == 0 {
            return fail("moving_average_window and qn_max_iter must be positive".into());
        }
        if self.n_lrmb as u64 <= self.t_lr || self.n_lrmb <= self.n_mb {
            return fail(format!(
                "n_lrmb ({}) must exceed both t_lr ({}) and n_mb ({})",
                self.n_lrmb, self.t_lr, self.n_mb
            ));
        }
        for (name, v) in [("tau_ddpg", self.tau_ddpg), ("tau_lr", self.tau_lr), ("delta", self.delta)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) && self.gamma != 1.0 {
            return fail(format!("gamma = {} is outside [0, 1]", self.gamma));
        }
        if !(self.final_fraction > 0.0 && self.final_fraction <= 1.0) {
            return fail(format!("final_fraction = {} is outside (0, 1]", self.final_fraction));
        }
        let nonneg = [
            ("noise_sigma", self.noise_sigma),
            ("learning_rate", self.learning_rate),
            ("w_a", self.w_a),
            ("b", self.b),
            ("c", self.c),
            ("c_a", self.c_a),
            ("c_c", self.c_c),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        let s = self.reg_schedule();
        let pairs = [
            ("beta_a", s.beta_a_min, s.beta_a0),
            ("beta_a_prime", s.beta_a_prime_min, s.beta_a_prime0),
            ("beta_c", s.beta_c_min, s.beta_c0),
            ("beta_c_prime", s.beta_c_prime_min, s.beta_c_prime0),
        ];
        for (name, min, init) in pairs {
            if !(min >= 0.0 && min <= init) {
                return fail(format!("{name}: need 0 <= min ({min}) <= initial ({init})"));
            }
        }
        Ok(())
    }

    /// Sets one field from its `key=value` text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
        }
        fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
            if value == "none" || value.is_empty() {
                Ok(None)
            } else {
                parse(key, value).map(Some)
            }
        }
        match key {
            "env" => self.env = value.parse()?,
            "t_max" => self.t_max = parse(key, value)?,
            "t_rand" => self.t_rand = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "n_mb" => self.n_mb = parse(key, value)?,
            "n_lrmb" => self.n_lrmb = parse(key, value)?,
            "t_lr" => self.t_lr = parse(key, value)?,
            "w_a" => self.w_a = parse(key, value)?,
            "tau_ddpg" => self.tau_ddpg = parse(key, value)?,
            "tau_lr" => self.tau_lr = parse(key, value)?,
            "qn_max_iter" => self.qn_max_iter = parse(key, value)?,
            "b" => self.b = parse(key, value)?,
            "beta_a0" => self.beta_a0 = parse(key, value)?,
            "beta_a_min" => self.beta_a_min = parse(key, value)?,
            "beta_a_prime0" => self.beta_a_prime0 = parse(key, value)?,
            "beta_a_prime_min" => self.beta_a_prime_min = parse(key, value)?,
            "beta_c0" => self.beta_c0 = parse(key, value)?,
            "beta_c_min" => self.beta_c_min = parse(key, value)?,
            "beta_c_prime0" => self.beta_c_prime0 = parse(key, value)?,
            "beta_c_prime_min" => self.beta_c_prime_min = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "c_a" => self.c_a = parse(key, value)?,
            "c_c" => self.c_c = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "use_ddpg_actor" => self.use_ddpg_actor = parse(key, value)?,
            "use_ddpg_critic" => self.use_ddpg_critic = parse(key, value)?,
            "use_lr_actor" => self.use_lr_actor = parse(key, value)?,
            "use_lr_critic" => self.use_lr_critic = parse(key, value)?,
            "action_mode" => self.action_mode = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "moving_average_window" => self.moving_average_window = parse(key, value)?,
            "fix_beta_c" => self.fix_beta_c = parse_opt(key, value)?,
            "zero_reg" => self.zero_reg = parse_opt(key, value)?,
            "final_fraction" => self.final_fraction = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_kv_text(&text)
    }

    /// Flat `key=value` text; floats are written in shortest round-trip form.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let fields: Vec<(&str, String)> = vec![
            ("env", self.env.to_string()),
            ("t_max", self.t_max.to_string()),
            ("t_rand", self.t_rand.to_string()),
            ("gamma", format!("{:?}", self.gamma)),
            ("noise_sigma", format!("{:?}", self.noise_sigma)),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("n_mb", self.n_mb.to_string()),
            ("n_lrmb", self.n_lrmb.to_string()),
            ("t_lr", self.t_lr.to_string()),
            ("w_a", format!("{:?}", self.w_a)),
            ("tau_ddpg", format!("{:?}", self.tau_ddpg)),
            ("tau_lr", format!("{:?}", self.tau_lr)),
            ("qn_max_iter", self.qn_max_iter.to_string()),
            ("b", format!("{:?}", self.b)),
            ("beta_a0", format!("{:?}", self.beta_a0)),
            ("beta_a_min", format!("{:?}", self.beta_a_min)),
            ("beta_a_prime0", format!("{:?}", self.beta_a_prime0)),
            ("beta_a_prime_min", format!("{:?}", self.beta_a_prime_min)),
            ("beta_c0", format!("{:?}", self.beta_c0)),
            ("beta_c_min", format!("{:?}", self.beta_c_min)),
            ("beta_c_prime0", format!("{:?}", self.beta_c_prime0)),
            ("beta_c_prime_min", format!("{:?}", self.beta_c_prime_min)),
            ("c", format!("{:?}", self.c)),
            ("delta", format!("{:?}", self.delta)),
            ("c_a", format!("{:?}", self.c_a)),
            ("c_c", format!("{:?}", self.c_c)),
            ("hidden", self.hidden.to_string()),
            ("use_ddpg_actor", self.use_ddpg_actor.to_string()),
            ("use_ddpg_critic", self.use_ddpg_critic.to_string()),
            ("use_lr_actor", self.use_lr_actor.to_string()),
            ("use_lr_critic", self.use_lr_critic.to_string()),
            ("action_mode", self.action_mode.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("moving_average_window", self.moving_average_window.to_string()),
            ("fix_beta_c", opt(self.fix_beta_c.map(|v| format!("{v:?}")))),
            ("zero_reg", opt(self.zero_reg.map(|z| z.to_string()))),
            ("final_fraction", format!("{:?}", self.final_fraction)),
        ];
        for (k, v) in fields {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_matches_published_table() {
        let c = TrainConfig::paper(EnvKind::Pendulum);
        assert_eq!((c.t_rand, c.n_mb, c.n_lrmb, c.t_lr), (25_000, 256, 10_000, 1000));
        assert_eq!((c.gamma, c.noise_sigma, c.learning_rate), (0.99, 0.1, 0.001));
        assert_eq!((c.w_a, c.tau_ddpg, c.tau_lr, c.b), (2.0, 0.005, 0.1, 0.4));
        assert_eq!((c.qn_max_iter, c.hidden, c.buffer_capacity), (10, 1024, 1_000_000));
        assert_eq!((c.c, c.delta, c.c_a, c.c_c), (0.001, 0.95, 1.0, 10.0));
        assert_eq!(c.reg_schedule(), RegSchedule::default());
        c.validate().unwrap();
        TrainConfig::desk(EnvKind::BalanceBot).validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig::desk(EnvKind::BalanceBot);
        c.fix_beta_c = Some(1e-3);
        c.zero_reg = Some(ZeroReg::Actor);
        c.action_mode = ActionMode::Aac;
        c.use_ddpg_actor = false;
        c.gamma = 0.1 + 0.2;
        let mut d = TrainConfig::paper(EnvKind::Pendulum);
        d.apply_kv_text(&c.to_kv_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn file_overrides_and_errors() {
        let mut c = TrainConfig::desk(EnvKind::Pendulum);
        c.apply_kv_text("# comment\n\nt_max = 5000\nenv=balancebot\n").unwrap();
        assert_eq!(c.t_max, 5000);
        assert_eq!(c.env, EnvKind::BalanceBot);
        assert!(c.apply_kv_text("nonsense").is_err());
        assert!(c.apply_kv_text("t_max=abc").is_err());
        assert!(c.apply_kv_text("unknown_key=1").is_err());
    }

    #[test]
    fn validation_rejects_small_lr_minibatch() {
        let mut c = TrainConfig::desk(EnvKind::Pendulum);
        c.n_lrmb = 1000;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk(EnvKind::Pendulum);
        c.n_lrmb = 200;
        c.t_lr = 100;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ablation_schedules() {
        let mut c = TrainConfig::desk(EnvKind::Pendulum);
        c.fix_beta_c = Some(1e-3);
        let s = c.reg_schedule();
        assert_eq!((s.beta_c0, s.beta_c_min, s.beta_c_prime0), (1e-3, 1e-3, 1e-3));
        c.zero_reg = Some(ZeroReg::All);
        let s = c.reg_schedule();
        assert_eq!((s.beta_a0, s.beta_c_prime_min), (0.0, 0.0));
    }
}
