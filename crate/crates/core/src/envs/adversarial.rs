use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::physics::{CartpoleParams, CartpoleVars};
use super::{check_action, EnvError, Policy, StepInfo, StepResult, TwoPlayerEnv};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    pub physics: CartpoleParams,
    /// Protagonist cart force bound.
    pub force_max: f64,
    /// Adversary tip force bound.
    pub adv_max: f64,
    pub track_half_width: f64,
    pub fall_angle: f64,
    pub horizon: usize,
    pub init_noise: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            physics: CartpoleParams::default(),
            force_max: 10.0,
            adv_max: 1.0,
            track_half_width: 2.4,
            fall_angle: 0.2095,
            horizon: 1000,
            init_noise: 0.05,
        }
    }
}

/// One cart-pole whose pole tip is pushed horizontally by an adversary.
///
/// Player 1 is the protagonist and earns +1 for every step it stays
/// balanced; player 2 applies the tip force.
#[derive(Debug, Clone)]
pub struct AdversarialCartpole {
    cfg: AdversarialConfig,
    vars: CartpoleVars,
    t: usize,
    done: bool,
}

impl AdversarialCartpole {
    pub fn new(cfg: AdversarialConfig) -> Self {
        Self { cfg, vars: [0.0; 4], t: 0, done: true }
    }

    pub fn config(&self) -> &AdversarialConfig {
        &self.cfg
    }

    pub fn set_state(&mut self, vars: CartpoleVars) {
        self.vars = vars;
        self.t = 0;
        self.done = false;
    }
}

impl TwoPlayerEnv for AdversarialCartpole {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_bounds(&self) -> [f64; 2] {
        [self.cfg.force_max, self.cfg.adv_max]
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.cfg.init_noise;
        for e in self.vars.iter_mut() {
            *e = rng.random_range(-n..=n);
        }
        self.t = 0;
        self.done = false;
        self.vars.to_vec()
    }

    fn step(&mut self, a_pro: f64, a_adv: f64) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let a_pro = check_action(1, a_pro, self.cfg.force_max)?;
        let a_adv = check_action(2, a_adv, self.cfg.adv_max)?;
        self.vars = self.cfg.physics.integrate(&self.vars, a_pro, a_adv);
        self.t += 1;
        let fallen = self.vars[2].abs() > self.cfg.fall_angle || self.vars[0].abs() > self.cfg.track_half_width;
        let truncated = !fallen && self.t >= self.cfg.horizon;
        self.done = fallen || truncated;
        Ok(StepResult {
            obs: self.vars.to_vec(),
            reward: if fallen { 0.0 } else { 1.0 },
            done: self.done,
            info: StepInfo {
                fallen: [fallen, false],
                coupling_force: a_adv,
                truncated,
                applied: [a_pro, a_adv],
            },
        })
    }
}

/// Scores of `trials` episodes in which the adversary is replaced by
/// uniform random tip forces in `[-magnitude, magnitude]`.
///
/// Environment resets and disturbances draw from separate streams, so the
/// initial states for a given seed do not depend on the magnitude.
pub fn random_disturbance_eval(
    policy: &dyn Policy,
    cfg: &AdversarialConfig,
    magnitude: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>, EnvError> {
    if !(magnitude >= 0.0) {
        return Err(EnvError::Config(format!("disturbance magnitude must be non-negative, got {magnitude}")));
    }
    let mut env_cfg = *cfg;
    env_cfg.adv_max = env_cfg.adv_max.max(magnitude);
    let mut env = AdversarialCartpole::new(env_cfg);
    let mut scores = Vec::with_capacity(trials);
    for trial in 0..trials as u64 {
        let mut obs = env.reset(derive_seed(seed, &[trial, 0]));
        let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[trial, 1]));
        let mut score = 0.0;
        loop {
            let d = if magnitude > 0.0 { noise.random_range(-magnitude..=magnitude) } else { 0.0 };
            let r = env.step(policy.act(&obs), d)?;
            score += r.reward;
            obs = r.obs;
            if r.done {
                break;
            }
        }
        scores.push(score);
    }
    Ok(scores)
}
