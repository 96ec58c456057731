//! MADDPG and Stackelberg MADDPG for two-player zero-sum games.
//!
//! Player 1 maximizes the centralized critic objective
//! `J(θ1, θ2) = mean Q_w(s, μ1(s), μ2(s))` and player 2 minimizes it. When
//! player 2 leads, the leader update is taken on `−J` so the total
//! derivative machinery in [`crate::stackelberg`] always sees a maximizing
//! leader.

mod buffer;
mod checkpoint;
mod learner;
mod nets;
mod objective;
mod trainer;

use serde::{Deserialize, Serialize};

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use checkpoint::{load_pair, read_pair, save_pair, write_pair, CHECKPOINT_VERSION};
pub use learner::{LeaderGradient, Learner, StepDeltas, UpdateTiming};
pub use nets::{ActorCriticBundle, ActorPolicy, NetShapes};
pub use objective::CompositeObjective;
pub use trainer::{train, write_metrics_csv, EpisodeMetrics, TrainOutcome, TrainedPair, Trainer};

use crate::diffcore::nn::Activation;
use crate::diffcore::DiffError;
use crate::envs::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Maddpg,
    StMaddpg,
    ApproxSt,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Maddpg => "maddpg",
            Mode::StMaddpg => "st_maddpg",
            Mode::ApproxSt => "approx_st",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maddpg" => Ok(Mode::Maddpg),
            "st_maddpg" | "st-maddpg" => Ok(Mode::StMaddpg),
            "approx_st" | "approx-st" => Ok(Mode::ApproxSt),
            other => Err(format!("unknown mode `{other}` (expected maddpg, st_maddpg or approx_st)")),
        }
    }
}

/// Which follower curvature the leader's implicit solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowerHessian {
    /// Full `∇²_{θF} J` by double-backward.
    Exact,
    /// Only `E[∇²_{θF} μF · ∇_{aF} Q]`, dropping the term through `∇²_{aF} Q`.
    PaperTerm,
}

impl std::str::FromStr for FollowerHessian {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(FollowerHessian::Exact),
            "paper_term" | "paper-term" => Ok(FollowerHessian::PaperTerm),
            other => Err(format!("unknown follower_hessian `{other}` (expected exact or paper_term)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub mode: Mode,
    /// 1 or 2.
    pub leader_id: u8,
    pub lambda: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub follower_hessian: FollowerHessian,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps of uniform-random actions at the start of training.
    pub warmup_steps: usize,
    /// Gaussian exploration scale relative to each player's force bound,
    /// decayed linearly from `noise_start` to `noise_end` over the episodes.
    pub noise_start: f64,
    pub noise_end: f64,
    /// Follower updates per leader update in `approx_st` mode.
    pub follower_extra_updates: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_activation: Activation,
    pub critic_activation: Activation,
    pub seed: u64,
    /// Write measured episode wall time to the metrics log. Off by default
    /// so that logs of identical runs are byte-identical.
    pub record_wall_ms: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::StMaddpg,
            leader_id: 1,
            lambda: 1.0,
            cg_iters: 5,
            cg_tol: 1e-10,
            follower_hessian: FollowerHessian::Exact,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 100,
            buffer_capacity: 1_000_000,
            warmup_steps: 10_000,
            noise_start: 0.3,
            noise_end: 0.05,
            follower_extra_updates: 10,
            episodes: 500,
            gamma: 0.99,
            tau: 0.01,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            actor_activation: Activation::Tanh,
            critic_activation: Activation::Tanh,
            seed: 0,
            record_wall_ms: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |m: String| Err(MarlError::Config(m));
        if self.leader_id != 1 && self.leader_id != 2 {
            return bad(format!("leader_id must be 1 or 2, got {}", self.leader_id));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.cg_iters == 0 || !(self.cg_tol >= 0.0) {
            return bad("cg_iters must be positive and cg_tol non-negative".into());
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad(format!(
                "buffer_capacity {} is smaller than batch_size {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) || !self.noise_start.is_finite() || !self.noise_end.is_finite() {
            return bad("noise scales must be finite and non-negative".into());
        }
        if self.follower_extra_updates == 0 {
            return bad("follower_extra_updates must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    /// Noise scale (relative to the force bound) used during `episode`.
    pub fn noise_scale(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.noise_start;
        }
        let f = episode.min(self.episodes - 1) as f64 / (self.episodes - 1) as f64;
        self.noise_start + (self.noise_end - self.noise_start) * f
    }

    pub(crate) fn cg(&self) -> crate::stackelberg::CgSettings {
        crate::stackelberg::CgSettings {
            iters: self.cg_iters,
            tol: self.cg_tol,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MarlError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Stackelberg(#[from] crate::stackelberg::StackelbergError),
    #[error("non-finite {0}")]
    NonFiniteValue(String),
    /// Training stopped on a non-finite update; `last_good` holds the pair
    /// as of the start of the failing episode.
    #[error("non-finite {what} at episode {episode}, step {step}; run aborted")]
    NonFinite {
        episode: usize,
        step: usize,
        what: String,
        last_good: Box<TrainedPair>,
    },
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
