//! Seedable physics environments for two-player zero-sum control.

mod adversarial;
mod competitive;
mod physics;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use adversarial::{random_disturbance_eval, AdversarialCartpole, AdversarialConfig};
pub use competitive::{CartpoleAgentState, CompetitiveCartpoles, CompetitiveConfig};
pub use physics::{CartpoleParams, CartpoleVars};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("non-finite action for player {player}: {value}")]
    NonFiniteAction { player: u8, value: f64 },
    #[error("player {player} action has {got} components, expected {expected}")]
    ActionDim { player: u8, expected: usize, got: usize },
    #[error("step called on a finished episode")]
    EpisodeOver,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    /// Fallen flags after the step (the adversarial env only uses the first).
    pub fallen: [bool; 2],
    /// Spring force on cart 1 (competitive) or adversary tip force.
    pub coupling_force: f64,
    /// The episode ended only because the horizon was reached.
    pub truncated: bool,
    /// Actions after clipping.
    pub applied: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    /// Player-1 reward; player 2 receives the negation.
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Common interface of the two-player environments. Player 1 maximizes
/// the reward, player 2 minimizes it.
pub trait TwoPlayerEnv {
    fn obs_dim(&self) -> usize;
    /// Per-player action bound; actions are scalars clipped to `[-b, b]`.
    fn action_bounds(&self) -> [f64; 2];
    fn horizon(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, a1: f64, a2: f64) -> Result<StepResult, EnvError>;
}

impl<E: TwoPlayerEnv + ?Sized> TwoPlayerEnv for Box<E> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn action_bounds(&self) -> [f64; 2] {
        (**self).action_bounds()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        (**self).reset(seed)
    }
    fn step(&mut self, a1: f64, a2: f64) -> Result<StepResult, EnvError> {
        (**self).step(a1, a2)
    }
}

/// A deterministic map from observation to one scalar action.
pub trait Policy {
    fn act(&self, obs: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> Policy for F {
    fn act(&self, obs: &[f64]) -> f64 {
        self(obs)
    }
}

pub(crate) fn check_action(player: u8, a: f64, bound: f64) -> Result<f64, EnvError> {
    if !a.is_finite() {
        return Err(EnvError::NonFiniteAction { player, value: a });
    }
    Ok(a.clamp(-bound, bound))
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x1: f64,
    pub x1_dot: f64,
    pub phi1: f64,
    pub phi1_dot: f64,
    pub x2: f64,
    pub x2_dot: f64,
    pub phi2: f64,
    pub phi2_dot: f64,
    pub a1: f64,
    pub a2: f64,
    pub f_spring: f64,
    pub r: f64,
}

/// Outcome of one played episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub score: f64,
    pub steps: usize,
    pub trajectory: Option<Vec<TrajectoryRow>>,
}

/// Plays one noise-free episode. The trajectory records the state before
/// each step together with the applied actions and resulting reward.
pub fn play_episode<E: TwoPlayerEnv + ?Sized>(
    env: &mut E,
    p1: &dyn Policy,
    p2: &dyn Policy,
    seed: u64,
    record: bool,
) -> Result<Episode, EnvError> {
    let mut obs = env.reset(seed);
    let mut rows = record.then(Vec::new);
    let mut score = 0.0;
    let mut steps = 0;
    loop {
        let res = env.step(p1.act(&obs), p2.act(&obs))?;
        if let Some(rows) = rows.as_mut() {
            rows.push(row(steps, &obs, &res));
        }
        score += res.reward;
        steps += 1;
        obs = res.obs;
        if res.done {
            break;
        }
    }
    Ok(Episode { score, steps, trajectory: rows })
}

fn row(t: usize, obs: &[f64], res: &StepResult) -> TrajectoryRow {
    let g = |i: usize| obs.get(i).copied().unwrap_or(0.0);
    TrajectoryRow {
        t,
        x1: g(0),
        x1_dot: g(1),
        phi1: g(2),
        phi1_dot: g(3),
        x2: g(4),
        x2_dot: g(5),
        phi2: g(6),
        phi2_dot: g(7),
        a1: res.info.applied[0],
        a2: res.info.applied[1],
        f_spring: res.info.coupling_force,
        r: res.reward,
    }
}

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Environment presets selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvPreset {
    #[serde(rename = "cartpoles-sym")]
    CartpolesSym,
    #[serde(rename = "cartpoles-asym")]
    CartpolesAsym,
    #[serde(rename = "cartpole-adversary")]
    CartpoleAdversary,
}

impl EnvPreset {
    pub fn name(self) -> &'static str {
        match self {
            Self::CartpolesSym => "cartpoles-sym",
            Self::CartpolesAsym => "cartpoles-asym",
            Self::CartpoleAdversary => "cartpole-adversary",
        }
    }

    pub fn build(self, horizon: Option<usize>) -> Box<dyn TwoPlayerEnv + Send> {
        match self {
            Self::CartpolesSym | Self::CartpolesAsym => {
                let mut cfg = if self == Self::CartpolesSym {
                    CompetitiveConfig::symmetric()
                } else {
                    CompetitiveConfig::asymmetric()
                };
                if let Some(h) = horizon {
                    cfg.horizon = h;
                }
                Box::new(CompetitiveCartpoles::new(cfg))
            }
            Self::CartpoleAdversary => {
                let mut cfg = AdversarialConfig::default();
                if let Some(h) = horizon {
                    cfg.horizon = h;
                }
                Box::new(AdversarialCartpole::new(cfg))
            }
        }
    }
}

impl std::str::FromStr for EnvPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::CartpolesSym, Self::CartpolesAsym, Self::CartpoleAdversary]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown environment `{s}` (cartpoles-sym, cartpoles-asym, cartpole-adversary)"))
    }
}
