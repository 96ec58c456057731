use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::physics::{CartpoleParams, CartpoleVars};
use super::{check_action, EnvError, StepInfo, StepResult, TwoPlayerEnv};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleAgentState {
    pub vars: CartpoleVars,
    pub fallen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetitiveConfig {
    pub physics: CartpoleParams,
    pub spring_k: f64,
    pub rest_length: f64,
    pub force_max: [f64; 2],
    pub track_half_width: f64,
    pub fall_angle: f64,
    pub horizon: usize,
    /// Initial cart positions before perturbation.
    pub start_x: [f64; 2],
    /// Half-width of the uniform perturbation applied to every state entry.
    pub init_noise: f64,
}

impl CompetitiveConfig {
    pub fn symmetric() -> Self {
        Self {
            physics: CartpoleParams::default(),
            spring_k: 2.0,
            rest_length: 1.0,
            force_max: [10.0, 10.0],
            track_half_width: 2.4,
            fall_angle: 0.2095,
            horizon: 1000,
            start_x: [-0.5, 0.5],
            init_noise: 0.05,
        }
    }

    /// Player 1 limited to 30% of player 2's force.
    pub fn asymmetric() -> Self {
        Self {
            force_max: [3.0, 10.0],
            ..Self::symmetric()
        }
    }
}

/// Two cart-poles on a shared track joined by a spring.
#[derive(Debug, Clone)]
pub struct CompetitiveCartpoles {
    cfg: CompetitiveConfig,
    agents: [CartpoleAgentState; 2],
    t: usize,
    done: bool,
}

impl CompetitiveCartpoles {
    pub fn new(cfg: CompetitiveConfig) -> Self {
        let idle = CartpoleAgentState { vars: [0.0; 4], fallen: false };
        Self { cfg, agents: [idle; 2], t: 0, done: true }
    }

    pub fn config(&self) -> &CompetitiveConfig {
        &self.cfg
    }

    pub fn agents(&self) -> &[CartpoleAgentState; 2] {
        &self.agents
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Places the system in an explicit state, for replay and tests.
    pub fn set_state(&mut self, agents: [CartpoleAgentState; 2], t: usize) {
        self.agents = agents;
        self.t = t;
        self.done = false;
    }

    pub fn spring_force(&self) -> f64 {
        let d = self.agents[1].vars[0] - self.agents[0].vars[0];
        self.cfg.spring_k * (d - self.cfg.rest_length)
    }

    fn observe(&self) -> Vec<f64> {
        self.agents.iter().flat_map(|a| a.vars).collect()
    }

    fn has_fallen(&self, v: &CartpoleVars) -> bool {
        v[2].abs() > self.cfg.fall_angle || v[0].abs() > self.cfg.track_half_width
    }
}

impl TwoPlayerEnv for CompetitiveCartpoles {
    fn obs_dim(&self) -> usize {
        8
    }

    fn action_bounds(&self) -> [f64; 2] {
        self.cfg.force_max
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.cfg.init_noise;
        for (agent, x0) in self.agents.iter_mut().zip(self.cfg.start_x) {
            let mut v = [0.0; 4];
            for e in v.iter_mut() {
                *e = rng.random_range(-n..=n);
            }
            v[0] += x0;
            *agent = CartpoleAgentState { vars: v, fallen: false };
        }
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, a1: f64, a2: f64) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let a1 = check_action(1, a1, self.cfg.force_max[0])?;
        let a2 = check_action(2, a2, self.cfg.force_max[1])?;
        let spring = self.spring_force();
        let forces = [a1 + spring, a2 - spring];
        for (agent, f) in self.agents.iter_mut().zip(forces) {
            if !agent.fallen {
                agent.vars = self.cfg.physics.integrate(&agent.vars, f, 0.0);
            }
        }
        for i in 0..2 {
            if !self.agents[i].fallen && self.has_fallen(&self.agents[i].vars) {
                self.agents[i].fallen = true;
            }
        }
        self.t += 1;
        let fallen = [self.agents[0].fallen, self.agents[1].fallen];
        let reward = match fallen {
            [false, true] => 1.0,
            [true, false] => -1.0,
            _ => 0.0,
        };
        let terminal = fallen[0] && fallen[1];
        let truncated = !terminal && self.t >= self.cfg.horizon;
        self.done = terminal || truncated;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.done,
            info: StepInfo {
                fallen,
                coupling_force: spring,
                truncated,
                applied: [a1, a2],
            },
        })
    }
}
