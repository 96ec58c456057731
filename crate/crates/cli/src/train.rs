use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use serde::Serialize;
use stmarl_core::envs::EnvPreset;
use stmarl_core::marl::{save_pair, write_metrics_csv, FollowerHessian, MarlError, Mode, Trainer};

use crate::config::RunConfig;
use crate::output::{self, OutputArgs, Staged};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<EnvPreset>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// `maddpg`, `st_maddpg` or `approx_st`.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Leader player id (1 or 2).
    #[arg(long)]
    pub leader: Option<u8>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `exact` or `paper_term`.
    #[arg(long)]
    pub follower_hessian: Option<FollowerHessian>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub actor_lr: Option<f64>,
    #[arg(long)]
    pub critic_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Comma-separated training seeds, one run each.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Fill the `wall_ms` metrics column (makes the CSV non-reproducible).
    #[arg(long)]
    pub record_wall_ms: bool,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        let t = &mut cfg.trainer;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(t.mode, self.mode);
        set!(t.leader_id, self.leader);
        set!(t.lambda, self.lambda);
        set!(t.follower_hessian, self.follower_hessian);
        set!(t.episodes, self.episodes);
        set!(t.actor_lr, self.actor_lr);
        set!(t.critic_lr, self.critic_lr);
        set!(t.batch_size, self.batch_size);
        set!(t.warmup_steps, self.warmup_steps);
        t.record_wall_ms |= self.record_wall_ms;
        set!(cfg.env, self.env);
        set!(cfg.seeds, self.seeds);
        set!(cfg.checkpoint_every, self.checkpoint_every);
        if self.horizon.is_some() {
            cfg.horizon = self.horizon;
        }
        if self.output.out.is_some() {
            cfg.out = self.output.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
struct SeedSummary {
    seed: u64,
    episodes: usize,
    total_steps: usize,
    cg_fallbacks: u64,
    /// Mean player-1 score over the last (up to) 10 episodes.
    recent_score_p1: Option<f64>,
    /// Mean update costs in microseconds, only with `record_wall_ms`.
    #[serde(skip_serializing_if = "Option::is_none")]
    leader_update_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plain_update_us: Option<f64>,
}

fn train_seed(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<SeedSummary> {
    let mut tc = cfg.trainer.clone();
    tc.seed = seed;
    let mut env = cfg.env.build(cfg.horizon);
    let mut trainer = Trainer::new(&mut *env, tc.clone(), cfg.env.name())?;
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut metrics = Vec::with_capacity(tc.episodes);
    for ep in 0..tc.episodes {
        match trainer.run_episode() {
            Ok(m) => metrics.push(m),
            Err(MarlError::NonFinite { episode, step, what, last_good }) => {
                let target = cfg.out.as_deref().unwrap_or(dir);
                let rescue = target.with_file_name(format!(
                    "{}-seed{seed}-last-good.ckpt",
                    target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
                ));
                save_pair(&rescue, &last_good)?;
                return Err(anyhow!(
                    "seed {seed}: non-finite {what} at episode {episode}, step {step}; last good checkpoint saved to {}",
                    rescue.display()
                ));
            }
            Err(e) => return Err(e).with_context(|| format!("seed {seed}, episode {ep}")),
        }
        if cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0 {
            save_pair(&ckpt_dir.join(format!("ep_{:05}.ckpt", ep + 1)), &trainer.pair())?;
        }
    }
    save_pair(&dir.join("final.ckpt"), &trainer.pair())?;
    let outcome = trainer.finish(metrics);
    write_metrics_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?), &outcome.metrics, tc.record_wall_ms)?;
    let recent = &outcome.metrics[outcome.metrics.len().saturating_sub(10)..];
    Ok(SeedSummary {
        seed,
        episodes: outcome.metrics.len(),
        total_steps: outcome.total_steps,
        cg_fallbacks: outcome.cg_fallbacks,
        recent_score_p1: (!recent.is_empty()).then(|| recent.iter().map(|m| m.score_p1).sum::<f64>() / recent.len() as f64),
        leader_update_us: tc.record_wall_ms.then(|| outcome.timing.mean_leader_ns().map(|n| n / 1e3)).flatten(),
        plain_update_us: tc.record_wall_ms.then(|| outcome.timing.mean_plain_ns().map(|n| n / 1e3)).flatten(),
    })
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut cfg = args.resolve()?;
    let default_name = format!("train-{}-{}", cfg.env.name(), cfg.trainer.mode.name());
    let out = output::resolve(cfg.out.clone(), &default_name);
    cfg.out = Some(out.clone());
    let stage = Staged::new(&out, args.output.force)?;
    std::fs::write(stage.path().join("config.toml"), cfg.to_toml()?)?;

    let seeds = cfg.seeds();
    let dirs: Vec<PathBuf> = seeds.iter().map(|s| stage.path().join(format!("seed_{s}"))).collect();
    let jobs = args.jobs.clamp(1, seeds.len());
    let work: Vec<(u64, &PathBuf)> = seeds.iter().copied().zip(&dirs).collect();
    let results: Vec<Result<SeedSummary>> = std::thread::scope(|scope| {
        let chunk = work.len().div_ceil(jobs);
        let cfg = &cfg;
        let handles: Vec<_> = work
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|(s, d)| train_seed(cfg, *s, d)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    output::write_json(&stage.path().join("summary.json"), &summaries)?;
    let out = stage.commit()?;
    for s in &summaries {
        println!(
            "seed {}: {} episodes, {} steps, {} CG fallbacks",
            s.seed, s.episodes, s.total_steps, s.cg_fallbacks
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
