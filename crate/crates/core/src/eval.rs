//! Tournaments between policy pools and score statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::envs::{play_episode, EnvError, Policy, TrajectoryRow, TwoPlayerEnv};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("empty score list")]
    Empty,
    #[error("rank-sum test needs at least two values per sample, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("policy pools must be non-empty")]
    EmptyPool,
    #[error("incompatible policies: {}", .0.join("; "))]
    Incompatible(Vec<String>),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator, 0 for a single score).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn summarize(scores: &[f64]) -> Result<ScoreSummary, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(v));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ScoreSummary {
        mean: mean.clamp(sorted[0], sorted[sorted.len() - 1]),
        std,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        count: sorted.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    /// U of the second sample; `u + u_other = n_x·n_y`.
    pub u_other: f64,
    pub z: f64,
    /// Two-sided p-value from the tie-corrected normal approximation with
    /// continuity correction.
    pub p: f64,
}

/// Midranks of the pooled sample, 1-based.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

/// Two-sided Mann-Whitney U test.
pub fn rank_sum_test(xs: &[f64], ys: &[f64]) -> Result<RankSumResult, EvalError> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(EvalError::TooFewSamples(xs.len(), ys.len()));
    }
    if let Some(&v) = xs.iter().chain(ys).find(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(v));
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rx: f64 = ranks[..xs.len()].iter().sum();
    let u = rx - nx * (nx + 1.0) / 2.0;
    let u_other = nx * ny - u;
    let n = nx + ny;
    let mu = nx * ny / 2.0;
    let var = nx * ny / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(RankSumResult { u, u_other, z: 0.0, p: 1.0 });
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(RankSumResult { u, u_other, z, p })
}

/// A named member of a tournament pool.
pub struct Entrant<'a> {
    pub id: String,
    pub policy: &'a (dyn Policy + Sync),
    /// Observation size the policy expects, if known.
    pub obs_dim: Option<usize>,
}

pub struct TournamentSpec<'a> {
    pub player1_pool: Vec<Entrant<'a>>,
    pub player2_pool: Vec<Entrant<'a>>,
    pub games_per_pair: usize,
    pub seed: u64,
    pub record_trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub p1_id: String,
    pub p2_id: String,
    pub game_index: usize,
    pub seed: u64,
    pub score: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TournamentResult {
    /// Ordered by player-1 index, player-2 index, game index.
    pub games: Vec<GameRecord>,
    /// Parallel to `games` when trajectories were recorded.
    pub trajectories: Option<Vec<Vec<TrajectoryRow>>>,
}

impl TournamentResult {
    pub fn scores(&self) -> Vec<f64> {
        self.games.iter().map(|g| g.score).collect()
    }
}

/// Seed of one game, independent of pool sizes.
pub fn game_seed(seed: u64, p1_index: usize, p2_index: usize, game_index: usize) -> u64 {
    derive_seed(seed, &[p1_index as u64, p2_index as u64, game_index as u64])
}

/// Plays every pairing `games_per_pair` times without exploration noise.
/// `make_env` builds one environment per worker; `jobs` bounds the worker
/// count. Results do not depend on `jobs`.
pub fn run_tournament<E, F>(spec: &TournamentSpec<'_>, make_env: F, jobs: usize) -> Result<TournamentResult, EvalError>
where
    E: TwoPlayerEnv,
    F: Fn() -> E + Sync,
{
    if spec.player1_pool.is_empty() || spec.player2_pool.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    let probe = make_env();
    let mut problems = Vec::new();
    for (side, pool) in [(1, &spec.player1_pool), (2, &spec.player2_pool)] {
        for e in pool {
            if let Some(d) = e.obs_dim.filter(|&d| d != probe.obs_dim()) {
                problems.push(format!(
                    "player {side} `{}` expects {d} observations, environment provides {}",
                    e.id,
                    probe.obs_dim()
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(EvalError::Incompatible(problems));
    }

    let mut tasks = Vec::new();
    for i in 0..spec.player1_pool.len() {
        for j in 0..spec.player2_pool.len() {
            for g in 0..spec.games_per_pair {
                tasks.push((i, j, g));
            }
        }
    }
    let jobs = jobs.clamp(1, tasks.len().max(1));
    let chunk = tasks.len().div_ceil(jobs).max(1);
    let play = |batch: &[(usize, usize, usize)]| -> Result<Vec<_>, EvalError> {
        let mut env = make_env();
        batch
            .iter()
            .map(|&(i, j, g)| {
                let seed = game_seed(spec.seed, i, j, g);
                let ep = play_episode(
                    &mut env,
                    spec.player1_pool[i].policy,
                    spec.player2_pool[j].policy,
                    seed,
                    spec.record_trajectories,
                )?;
                let rec = GameRecord {
                    p1_id: spec.player1_pool[i].id.clone(),
                    p2_id: spec.player2_pool[j].id.clone(),
                    game_index: g,
                    seed,
                    score: ep.score,
                    steps: ep.steps,
                };
                Ok((rec, ep.trajectory))
            })
            .collect()
    };
    let outcomes: Vec<_> = if jobs == 1 {
        vec![play(&tasks)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = tasks.chunks(chunk).map(|c| s.spawn(move || play(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tournament worker panicked"))
                .collect()
        })
    };
    let mut games = Vec::with_capacity(tasks.len());
    let mut trajectories = spec.record_trajectories.then(Vec::new);
    for batch in outcomes {
        for (rec, traj) in batch? {
            games.push(rec);
            if let (Some(all), Some(t)) = (trajectories.as_mut(), traj) {
                all.push(t);
            }
        }
    }
    Ok(TournamentResult { games, trajectories })
}

pub fn write_scores_csv<W: Write>(out: W, games: &[GameRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for g in games {
        w.serialize(g)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<GameRecord>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CompetitiveCartpoles, CompetitiveConfig};
    use proptest::prelude::*;

    #[test]
    fn summarize_examples() {
        let s = summarize(&[5.0]).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max, s.count), (5.0, 0.0, 5.0, 5.0, 1));
        let s = summarize(&[-1.0, 1.0]).unwrap();
        assert_eq!(s.mean, 0.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[]), Err(EvalError::Empty));
    }

    #[test]
    fn rank_sum_examples() {
        let same = rank_sum_test(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!(same.p > 0.99);
        let sep = rank_sum_test(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(sep.u, 0.0);
        assert_eq!(sep.u_other, 9.0);
        // No other arrangement of these sizes gives a smaller p.
        let other = rank_sum_test(&[1.0, 2.0, 10.0], &[3.0, 11.0, 12.0]).unwrap();
        assert!(sep.p < other.p);
        let flat = rank_sum_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(flat.p, 1.0);
        assert!(rank_sum_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    /// Exact two-sided permutation p-value by enumerating all splits.
    fn permutation_p(xs: &[f64], ys: &[f64]) -> f64 {
        let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
        let (ranks, _) = midranks(&pooled);
        let n = pooled.len();
        let nx = xs.len();
        let mu = (nx * ys.len()) as f64 / 2.0;
        let u_of = |mask: u32| {
            let r: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            r - (nx * (nx + 1)) as f64 / 2.0
        };
        let observed = (u_of((1u32 << nx) - 1) - mu).abs();
        let (mut hits, mut total) = (0u32, 0u32);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == nx {
                total += 1;
                if (u_of(mask) - mu).abs() >= observed - 1e-9 {
                    hits += 1;
                }
            }
        }
        hits as f64 / total as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn normal_approximation_tracks_permutation_oracle(
            xs in prop::collection::vec(-1e6f64..1e6, 5..=8),
            ys in prop::collection::vec(-1e6f64..1e6, 5..=8),
        ) {
            let r = rank_sum_test(&xs, &ys).unwrap();
            let exact = permutation_p(&xs, &ys);
            prop_assert!((r.p - exact).abs() <= 0.02, "approx {} exact {}", r.p, exact);
        }

        #[test]
        fn tied_samples_stay_near_permutation_oracle(
            xs in prop::collection::vec(0i32..20, 5..=8),
            ys in prop::collection::vec(0i32..20, 5..=8),
        ) {
            // Heavy ties make the exact null distribution coarse, so the
            // normal approximation is only close to within one lattice step.
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let ys: Vec<f64> = ys.into_iter().map(f64::from).collect();
            let r = rank_sum_test(&xs, &ys).unwrap();
            let exact = permutation_p(&xs, &ys);
            prop_assert!((r.p - exact).abs() <= 0.1, "approx {} exact {}", r.p, exact);
        }

        #[test]
        fn u_statistics_sum_to_product(
            xs in prop::collection::vec(-50.0f64..50.0, 2..30),
            ys in prop::collection::vec(-50.0f64..50.0, 2..30),
        ) {
            let r = rank_sum_test(&xs, &ys).unwrap();
            prop_assert!((r.u + r.u_other - (xs.len() * ys.len()) as f64).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&r.p));
        }

        #[test]
        fn summary_brackets_scores(xs in prop::collection::vec(-1e3f64..1e3, 1..100)) {
            let s = summarize(&xs).unwrap();
            prop_assert!(s.min <= s.mean && s.mean <= s.max);
            prop_assert!(xs.iter().all(|&v| s.min <= v && v <= s.max));
            let mut rev = xs.clone();
            rev.reverse();
            prop_assert_eq!(summarize(&rev).unwrap(), s);
        }
    }

    fn controller(gain: f64) -> impl Fn(&[f64]) -> f64 + Sync {
        move |o: &[f64]| gain * (0.5 * o[1] + 30.0 * o[2] + 5.0 * o[3]) + 2.0 * (o[4] - o[0] - 1.0)
    }

    /// Player-2 version of a player-1 policy under the reflection x → −x
    /// that exchanges the carts.
    fn mirrored<P: Fn(&[f64]) -> f64 + Sync>(p: P) -> impl Fn(&[f64]) -> f64 + Sync {
        move |o: &[f64]| {
            let m = [-o[4], -o[5], -o[6], -o[7], -o[0], -o[1], -o[2], -o[3]];
            -p(&m)
        }
    }

    fn env() -> CompetitiveCartpoles {
        CompetitiveCartpoles::new(CompetitiveConfig::symmetric())
    }

    #[test]
    fn tournament_counts_and_determinism() {
        let pols: Vec<_> = (0..4).map(|k| controller(4.0 + k as f64)).collect();
        let pool = |side: &str| -> Vec<Entrant<'_>> {
            pols.iter()
                .enumerate()
                .map(|(k, p)| Entrant { id: format!("{side}{k}"), policy: p, obs_dim: Some(8) })
                .collect()
        };
        let spec = TournamentSpec {
            player1_pool: pool("a"),
            player2_pool: pool("b"),
            games_per_pair: 20,
            seed: 3,
            record_trajectories: false,
        };
        let mut short = CompetitiveConfig::symmetric();
        short.horizon = 50;
        let make = || CompetitiveCartpoles::new(short);
        let r1 = run_tournament(&spec, make, 1).unwrap();
        assert_eq!(r1.games.len(), 320);
        let r3 = run_tournament(&spec, make, 3).unwrap();
        assert_eq!(r1, r3);
    }

    #[test]
    fn single_game_equals_episode_return() {
        let p = controller(5.0);
        let spec = TournamentSpec {
            player1_pool: vec![Entrant { id: "a".into(), policy: &p, obs_dim: None }],
            player2_pool: vec![Entrant { id: "b".into(), policy: &p, obs_dim: None }],
            games_per_pair: 1,
            seed: 9,
            record_trajectories: true,
        };
        let r = run_tournament(&spec, env, 1).unwrap();
        let ep = play_episode(&mut env(), &p, &p, game_seed(9, 0, 0, 0), false).unwrap();
        assert_eq!(r.games[0].score, ep.score);
        assert_eq!(r.games[0].steps, ep.steps);
        let traj = &r.trajectories.unwrap()[0];
        assert_eq!(traj.len(), ep.steps);
        assert_eq!(traj.iter().map(|t| t.r).sum::<f64>(), ep.score);
    }

    #[test]
    fn mismatched_policy_rejected_before_play() {
        let p = controller(5.0);
        let spec = TournamentSpec {
            player1_pool: vec![Entrant { id: "a".into(), policy: &p, obs_dim: Some(4) }],
            player2_pool: vec![Entrant { id: "b".into(), policy: &p, obs_dim: Some(8) }],
            games_per_pair: 1,
            seed: 0,
            record_trajectories: false,
        };
        match run_tournament(&spec, env, 1) {
            Err(EvalError::Incompatible(list)) => assert_eq!(list.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mirrored_games_negate_scores() {
        let (a, b) = (controller(3.0), controller(6.0));
        let (ma, mb) = (mirrored(controller(3.0)), mirrored(controller(6.0)));
        let up = |x: f64, v: [f64; 3]| crate::envs::CartpoleAgentState { vars: [x, v[0], v[1], v[2]], fallen: false };
        for k in 0..10 {
            let d = 0.01 * k as f64;
            let s1 = [up(-0.5 + d, [0.02, 0.03 - d, -0.01]), up(0.48, [-0.01, 0.02, d])];
            let mirror = |s: &crate::envs::CartpoleAgentState| crate::envs::CartpoleAgentState {
                vars: s.vars.map(|v| -v),
                fallen: false,
            };
            let s2 = [mirror(&s1[1]), mirror(&s1[0])];
            let run = |p1: &dyn Policy, p2: &dyn Policy, start| {
                let mut e = env();
                e.set_state(start, 0);
                let mut obs: Vec<f64> = e.agents().iter().flat_map(|a| a.vars).collect();
                let mut total = 0.0;
                loop {
                    let r = e.step(p1.act(&obs), p2.act(&obs)).unwrap();
                    total += r.reward;
                    obs = r.obs;
                    if r.done {
                        return total;
                    }
                }
            };
            assert_eq!(run(&a, &mb, s1), -run(&b, &ma, s2));
        }
    }

    #[test]
    fn self_mirror_scores_are_centered() {
        let p = controller(2.0);
        let mp = mirrored(controller(2.0));
        let spec = TournamentSpec {
            player1_pool: vec![Entrant { id: "p".into(), policy: &p, obs_dim: Some(8) }],
            player2_pool: vec![Entrant { id: "m".into(), policy: &mp, obs_dim: Some(8) }],
            games_per_pair: 200,
            seed: 17,
            record_trajectories: false,
        };
        let mut cfg = CompetitiveConfig::symmetric();
        cfg.horizon = 300;
        let r = run_tournament(&spec, || CompetitiveCartpoles::new(cfg), 1).unwrap();
        let s = summarize(&r.scores()).unwrap();
        let se = s.std / (s.count as f64).sqrt();
        assert!(s.mean.abs() <= 3.0 * se.max(1e-9) || s.std == 0.0, "{s:?}");
    }

    #[test]
    fn scores_csv_round_trip() {
        let games = vec![GameRecord {
            p1_id: "a".into(),
            p2_id: "b".into(),
            game_index: 0,
            seed: 42,
            score: -3.0,
            steps: 10,
        }];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &games).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("p1_id,p2_id,game_index,seed,score,steps\n"));
        assert_eq!(read_scores_csv(buf.as_slice()).unwrap(), games);
    }
}
