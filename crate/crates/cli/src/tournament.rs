use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use stmarl_core::envs::{write_trajectory_csv, EnvPreset, TwoPlayerEnv};
use stmarl_core::eval::{
    rank_sum_test, read_scores_csv, run_tournament, summarize, write_scores_csv, Entrant, RankSumResult,
    ScoreSummary, TournamentSpec,
};
use stmarl_core::marl::{load_pair, ActorPolicy, TrainedPair};

use crate::config::RunConfig;
use crate::output::{self, OutputArgs, Staged};

#[derive(Debug, Args)]
pub struct TournamentArgs {
    /// Checkpoints whose player-1 actor joins the first pool.
    #[arg(long = "p1", num_args = 1.., required = true)]
    pub p1: Vec<PathBuf>,
    /// Checkpoints whose player-2 actor joins the second pool.
    #[arg(long = "p2", num_args = 1.., required = true)]
    pub p2: Vec<PathBuf>,
    /// TOML run configuration (uses `horizon` and `[tournament]`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub games: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Write one trajectory CSV per game.
    #[arg(long)]
    pub trajectories: bool,
    /// Scores CSV of another tournament to compare against with a rank-sum test.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Serialize)]
struct Baseline {
    path: PathBuf,
    summary: ScoreSummary,
    rank_sum: RankSumResult,
}

#[derive(Serialize)]
struct Summary {
    env: String,
    horizon: usize,
    games_per_pair: usize,
    seed: u64,
    player1_pool: Vec<String>,
    player2_pool: Vec<String>,
    #[serde(flatten)]
    scores: ScoreSummary,
    baseline: Option<Baseline>,
}

/// Loads every checkpoint and rejects the set if any fails to load or
/// disagrees with the first on environment or network interface.
fn load_pools(p1: &[PathBuf], p2: &[PathBuf]) -> Result<(Vec<TrainedPair>, Vec<TrainedPair>, EnvPreset)> {
    let mut problems = Vec::new();
    let mut load = |paths: &[PathBuf]| {
        paths
            .iter()
            .filter_map(|p| match load_pair(p) {
                Ok(pair) => Some((p.clone(), pair)),
                Err(e) => {
                    problems.push(format!("{}: {e}", p.display()));
                    None
                }
            })
            .collect::<Vec<_>>()
    };
    let a = load(p1);
    let b = load(p2);
    if let Some((first_path, first)) = a.first().or(b.first()) {
        let obs = first.bundle.shapes.obs_dim;
        let bounds = first.bundle.action_bounds;
        for (p, pair) in a.iter().chain(&b) {
            if pair.env != first.env {
                problems.push(format!(
                    "{}: trained on {} but {} was trained on {}",
                    p.display(),
                    pair.env,
                    first_path.display(),
                    first.env
                ));
            } else if pair.bundle.shapes.obs_dim != obs || pair.bundle.action_bounds != bounds {
                problems.push(format!("{}: observation size or action bounds differ from {}", p.display(), first_path.display()));
            }
        }
    }
    if !problems.is_empty() {
        bail!("incompatible checkpoints:\n  {}", problems.join("\n  "));
    }
    let env_name = a[0].1.env.clone();
    let preset: EnvPreset = env_name
        .parse()
        .map_err(|e: String| anyhow::anyhow!("checkpoint environment: {e}"))?;
    Ok((a.into_iter().map(|x| x.1).collect(), b.into_iter().map(|x| x.1).collect(), preset))
}

fn entrants<'a>(paths: &[PathBuf], pool: &[TrainedPair], pols: &'a [ActorPolicy]) -> Vec<Entrant<'a>> {
    paths
        .iter()
        .zip(pool)
        .zip(pols)
        .map(|((path, pair), pol)| Entrant {
            id: path.display().to_string(),
            policy: pol,
            obs_dim: Some(pair.bundle.shapes.obs_dim),
        })
        .collect()
}

pub fn run(args: TournamentArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(g) = args.games {
        cfg.tournament.games_per_pair = g;
    }
    if let Some(s) = args.seed {
        cfg.tournament.seed = s;
    }
    cfg.tournament.trajectories |= args.trajectories;
    if args.horizon.is_some() {
        cfg.horizon = args.horizon;
    }
    if args.output.out.is_some() {
        cfg.out = args.output.out.clone();
    }
    cfg.validate()?;
    let (pool1, pool2, preset) = load_pools(&args.p1, &args.p2)?;
    cfg.env = preset;
    let baseline_scores = match &args.baseline {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening baseline {}", p.display()))?;
            let games = read_scores_csv(f).with_context(|| format!("reading baseline {}", p.display()))?;
            Some(games.into_iter().map(|g| g.score).collect::<Vec<_>>())
        }
        None => None,
    };

    let out = output::resolve(cfg.out.clone(), &format!("tournament-{}", preset.name()));
    cfg.out = Some(out.clone());
    let stage = Staged::new(&out, args.output.force)?;
    std::fs::write(stage.path().join("config.toml"), cfg.to_toml()?)?;

    let policies1: Vec<_> = pool1.iter().map(|p| p.bundle.policy(1)).collect();
    let policies2: Vec<_> = pool2.iter().map(|p| p.bundle.policy(2)).collect();
    let spec = TournamentSpec {
        player1_pool: entrants(&args.p1, &pool1, &policies1),
        player2_pool: entrants(&args.p2, &pool2, &policies2),
        games_per_pair: cfg.tournament.games_per_pair,
        seed: cfg.tournament.seed,
        record_trajectories: cfg.tournament.trajectories,
    };
    let horizon = cfg.horizon;
    let result = run_tournament(&spec, || preset.build(horizon), args.jobs)?;
    let env_horizon = preset.build(horizon).horizon();

    write_scores_csv(BufWriter::new(File::create(stage.path().join("scores.csv"))?), &result.games)?;
    if let Some(trajs) = &result.trajectories {
        let dir = stage.path().join("trajectories");
        std::fs::create_dir_all(&dir)?;
        for (i, rows) in trajs.iter().enumerate() {
            write_trajectory_csv(BufWriter::new(File::create(dir.join(format!("game_{i:05}.csv")))?), rows)?;
        }
    }
    let scores = result.scores();
    let summary = summarize(&scores)?;
    let baseline = match (baseline_scores, &args.baseline) {
        (Some(base), Some(path)) => Some(Baseline {
            path: path.clone(),
            summary: summarize(&base)?,
            rank_sum: rank_sum_test(&scores, &base)?,
        }),
        _ => None,
    };
    output::write_json(
        &stage.path().join("summary.json"),
        &Summary {
            env: preset.name().to_string(),
            horizon: env_horizon,
            games_per_pair: spec.games_per_pair,
            seed: spec.seed,
            player1_pool: spec.player1_pool.iter().map(|e| e.id.clone()).collect(),
            player2_pool: spec.player2_pool.iter().map(|e| e.id.clone()).collect(),
            scores: summary,
            baseline,
        },
    )?;
    let out = stage.commit()?;
    println!(
        "{} games: mean {:.2}, std {:.2}, min {}, max {}",
        summary.count, summary.mean, summary.std, summary.min, summary.max
    );
    println!("wrote {}", out.display());
    Ok(())
}
