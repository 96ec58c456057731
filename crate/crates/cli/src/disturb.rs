use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;
use stmarl_core::envs::{random_disturbance_eval, AdversarialConfig, EnvPreset};
use stmarl_core::eval::{summarize, ScoreSummary};
use stmarl_core::marl::load_pair;

use crate::output::{self, OutputArgs, Staged};

#[derive(Debug, Args)]
pub struct DisturbArgs {
    /// Checkpoint trained on `cartpole-adversary`; its player-1 actor is evaluated.
    pub checkpoint: PathBuf,
    /// Comma-separated disturbance magnitudes (N at the pole tip).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub magnitudes: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Serialize)]
struct Row {
    magnitude: f64,
    trial: usize,
    score: f64,
}

#[derive(Serialize)]
struct Level {
    magnitude: f64,
    #[serde(flatten)]
    summary: ScoreSummary,
}

pub fn run(args: DisturbArgs) -> Result<()> {
    if args.trials == 0 {
        bail!("--trials must be positive");
    }
    let pair = load_pair(&args.checkpoint)?;
    let expected = EnvPreset::CartpoleAdversary.name();
    if pair.env != expected {
        bail!("{} was trained on {}, expected {expected}", args.checkpoint.display(), pair.env);
    }
    let mut cfg = AdversarialConfig {
        force_max: pair.bundle.action_bounds[0],
        adv_max: pair.bundle.action_bounds[1],
        ..AdversarialConfig::default()
    };
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    let policy = pair.bundle.policy(1);
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for &m in &args.magnitudes {
        let scores = random_disturbance_eval(&policy, &cfg, m, args.trials, args.seed)?;
        levels.push(Level { magnitude: m, summary: summarize(&scores)? });
        rows.extend(scores.into_iter().enumerate().map(|(trial, score)| Row { magnitude: m, trial, score }));
    }

    let out = output::resolve(args.output.out.clone(), "disturb-eval");
    let stage = Staged::new(&out, args.output.force)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(stage.path().join("disturb.csv"))?));
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    drop(w);
    output::write_json(&stage.path().join("summary.json"), &levels)?;
    let out = stage.commit()?;
    for l in &levels {
        println!("magnitude {}: mean {:.1} over {} trials", l.magnitude, l.summary.mean, l.summary.count);
    }
    println!("wrote {}", out.display());
    Ok(())
}
