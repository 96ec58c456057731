use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::nn::{init_mlp, mlp_forward, mlp_tensors, Activation};
use crate::diffcore::{DiffError, Layout, ParameterVector};
use crate::envs::Policy;

pub(crate) const ACTOR: [&str; 2] = ["actor1", "actor2"];
pub(crate) const CRITIC: &str = "critic";

/// Network architecture shared by live and target parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShapes {
    pub obs_dim: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_activation: Activation,
    pub critic_activation: Activation,
}

impl NetShapes {
    /// Actor widths: observation, hidden layers, one squashed action.
    pub fn actor_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.obs_dim];
        v.extend(&self.actor_hidden);
        v.push(1);
        v
    }

    /// Critic widths: observation plus both normalized actions, hidden
    /// layers, one value.
    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.obs_dim + 2];
        v.extend(&self.critic_hidden);
        v.push(1);
        v
    }

    pub fn layout(&self) -> Arc<Layout> {
        let a = mlp_tensors(&self.actor_sizes());
        let c = mlp_tensors(&self.critic_sizes());
        fn view(t: &[(String, usize, usize)]) -> Vec<(&str, usize, usize)> {
            t.iter().map(|(n, r, c)| (n.as_str(), *r, *c)).collect()
        }
        Layout::builder()
            .segment(ACTOR[0], &view(&a))
            .segment(ACTOR[1], &view(&a))
            .segment(CRITIC, &view(&c))
            .build()
    }
}

/// Both actors, the centralized critic and their polyak-averaged targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticBundle {
    pub shapes: NetShapes,
    pub live: ParameterVector,
    pub target: ParameterVector,
    /// Force bound of each player; actor outputs are `bound · tanh(·)`.
    pub action_bounds: [f64; 2],
    pub tau: f64,
    pub gamma: f64,
}

impl ActorCriticBundle {
    /// Fan-in uniform initialization with small output layers; targets
    /// start equal to the live networks.
    pub fn new<R: Rng>(
        shapes: NetShapes,
        action_bounds: [f64; 2],
        tau: f64,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let mut live = ParameterVector::zeros(shapes.layout());
        for seg in ACTOR {
            init_mlp(&mut live, seg, &shapes.actor_sizes(), 3e-3, rng)?;
        }
        init_mlp(&mut live, CRITIC, &shapes.critic_sizes(), 3e-3, rng)?;
        let target = live.clone();
        Ok(Self {
            shapes,
            live,
            target,
            action_bounds,
            tau,
            gamma,
        })
    }

    /// `target ← τ·live + (1−τ)·target`.
    pub fn update_targets(&mut self) -> Result<(), DiffError> {
        self.target.polyak_from(&self.live, self.tau)
    }

    /// Frozen copy of a live actor (`player` is 1 or 2).
    pub fn policy(&self, player: u8) -> ActorPolicy {
        let idx = player_index(player);
        ActorPolicy {
            values: self.live.segment(ACTOR[idx]).expect("actor segment").to_vec(),
            sizes: self.shapes.actor_sizes(),
            hidden: self.shapes.actor_activation,
            bound: self.action_bounds[idx],
        }
    }

    /// Live actor output in env units.
    pub fn act(&self, player: u8, obs: &[f64]) -> f64 {
        let idx = player_index(player);
        let values = self.live.segment(ACTOR[idx]).expect("actor segment");
        let u = mlp_forward(values, &self.shapes.actor_sizes(), self.shapes.actor_activation, Activation::Tanh, obs);
        self.action_bounds[idx] * u[0]
    }
}

pub(crate) fn player_index(player: u8) -> usize {
    match player {
        1 => 0,
        2 => 1,
        p => panic!("player must be 1 or 2, got {p}"),
    }
}

/// Deterministic actor detached from training state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorPolicy {
    pub values: Vec<f64>,
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub bound: f64,
}

impl Policy for ActorPolicy {
    fn act(&self, obs: &[f64]) -> f64 {
        self.bound * mlp_forward(&self.values, &self.sizes, self.hidden, Activation::Tanh, obs)[0]
    }
}
