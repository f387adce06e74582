use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dls_ddpg::harness::{aggregate, parse_seeds, run_suite, LrEventRecord, ZeroReg};
use dls_ddpg::{ActionMode, Checkpoint, EnvKind, Error, Profile, TrainConfig, Trainer};

/// Exit status for a run stopped by non-finite losses or parameters.
const EXIT_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(name = "dls-ddpg", version, about = "DDPG with least-squares output-layer updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its learning curve and final checkpoint.
    Train {
        #[command(flatten)]
        opts: TrainArgs,
        /// Also write a checkpoint every N steps.
        #[arg(long, value_name = "N")]
        checkpoint_every: Option<u64>,
        /// Continue the run stored in this checkpoint instead of starting fresh.
        #[arg(long, value_name = "PATH", conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Evaluate the noise-free policy stored in a checkpoint.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Train one agent per seed and aggregate the curves.
    Suite {
        #[command(flatten)]
        opts: TrainArgs,
        /// Inclusive range `a..b` or comma list.
        #[arg(long, default_value = "1..8")]
        seeds: String,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    action_mode: Option<ActionMode>,
    #[arg(long)]
    no_ddpg_actor: bool,
    #[arg(long)]
    no_ddpg_critic: bool,
    #[arg(long)]
    no_lr_actor: bool,
    #[arg(long)]
    no_lr_critic: bool,
    /// Hold β_c and β′_c at this value instead of scheduling them.
    #[arg(long, value_name = "VALUE")]
    fix_beta_c: Option<f64>,
    #[arg(long)]
    zero_reg: Option<ZeroReg>,
    /// `key=value` file applied over the profile; command-line flags win.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "runs/latest")]
    out: PathBuf,
}

impl TrainArgs {
    fn build_config(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = TrainConfig::for_profile(self.profile, self.env.unwrap_or(EnvKind::Pendulum));
        if let Some(path) = &self.config {
            cfg.apply_file(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        if let Some(env) = self.env {
            cfg.env = env;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(steps) = self.steps {
            cfg.t_max = steps;
        }
        if let Some(mode) = self.action_mode {
            cfg.action_mode = mode;
        }
        cfg.use_ddpg_actor &= !self.no_ddpg_actor;
        cfg.use_ddpg_critic &= !self.no_ddpg_critic;
        cfg.use_lr_actor &= !self.no_lr_actor;
        cfg.use_lr_critic &= !self.no_lr_critic;
        if self.fix_beta_c.is_some() {
            cfg.fix_beta_c = self.fix_beta_c;
        }
        if self.zero_reg.is_some() {
            cfg.zero_reg = self.zero_reg;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train {
            opts,
            checkpoint_every,
            resume,
        } => train(&opts, checkpoint_every, resume.as_deref()),
        Command::Eval {
            checkpoint,
            episodes,
        } => {
            if episodes == 0 {
                bail!("--episodes must be positive");
            }
            let cp = Checkpoint::load(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let mut trainer = Trainer::from_checkpoint(cp)?;
            let stats = trainer.evaluate_policy(episodes)?;
            println!("mean {:.6} std {:.6} episodes {}", stats.mean, stats.std, episodes);
            Ok(ExitCode::SUCCESS)
        }
        Command::Suite { opts, seeds } => suite(&opts, &seeds),
    }
}

fn train(opts: &TrainArgs, checkpoint_every: Option<u64>, resume: Option<&Path>) -> anyhow::Result<ExitCode> {
    let mut trainer = match resume {
        Some(path) => {
            let cp = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let mut t = Trainer::from_checkpoint(cp)?;
            if let Some(steps) = opts.steps {
                t.extend_to(steps)?;
            }
            t
        }
        None => Trainer::new(opts.build_config()?)?,
    };
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    fs::write(opts.out.join("config.txt"), trainer.config().to_kv_text())?;
    log::info!(
        "training {} for {} steps (seed {}) into {}",
        trainer.config().env,
        trainer.config().t_max,
        trainer.config().seed,
        opts.out.display()
    );

    let t_max = trainer.config().t_max;
    let mut result = Ok(());
    while !trainer.is_finished() {
        let target = match checkpoint_every {
            Some(every) if every > 0 => ((trainer.step() / every) + 1) * every,
            _ => t_max,
        };
        result = trainer.run_until(target);
        if result.is_err() {
            break;
        }
        if checkpoint_every.is_some() && !trainer.is_finished() {
            let path = opts.out.join(format!("checkpoint_{}.bin", trainer.step()));
            trainer.checkpoint().save(&path)?;
        }
    }
    write_outputs(&trainer, &opts.out)?;
    match result {
        Ok(()) => {
            trainer.checkpoint().save(&opts.out.join("checkpoint.bin"))?;
            if let Some(last) = trainer.curve().last() {
                println!("final step {} eval_ma10 {:.6}", last.step, last.eval_ma);
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ Error::DivergenceAbort { .. }) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(EXIT_DIVERGED))
        }
        Err(e) => Err(e.into()),
    }
}

fn write_outputs(trainer: &Trainer, out: &Path) -> anyhow::Result<()> {
    fs::write(out.join("curve.csv"), trainer.curve().to_csv())?;
    fs::write(out.join("lr_events.csv"), lr_events_csv(trainer.lr_events()))?;
    Ok(())
}

fn lr_events_csv(events: &[LrEventRecord]) -> String {
    let mut out =
        String::from("step,n_theta,n_phi,actor_reset,critic_reset,beta_a,beta_a_prime,beta_c,beta_c_prime\n");
    for e in events {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            e.step,
            e.n_theta,
            e.n_phi,
            e.actor_reset as u8,
            e.critic_reset as u8,
            e.beta_a,
            e.beta_a_prime,
            e.beta_c,
            e.beta_c_prime
        );
    }
    out
}

fn suite(opts: &TrainArgs, seeds: &str) -> anyhow::Result<ExitCode> {
    let seeds = parse_seeds(seeds)?;
    let cfg = opts.build_config()?;
    fs::create_dir_all(&opts.out)?;
    fs::write(opts.out.join("config.txt"), cfg.to_kv_text())?;
    let runs = run_suite(&cfg, &seeds)?;
    let mut diverged = false;
    for run in &runs {
        fs::write(opts.out.join(format!("curve_seed{}.csv", run.seed)), run.curve.to_csv())?;
        if let Some(err) = &run.error {
            eprintln!("seed {}: {err}", run.seed);
            diverged = true;
        }
    }
    let summary = aggregate(&runs, cfg.t_max, cfg.final_fraction)?;
    fs::write(opts.out.join("summary.csv"), summary.to_csv())?;
    for (seed, score) in &summary.final_scores {
        println!("seed {seed} final {score:.6}");
    }
    println!(
        "final-window score {:.6} ± {:.6} over {} seeds",
        summary.final_mean,
        summary.final_std,
        summary.final_scores.len()
    );
    Ok(if diverged {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    })
}
