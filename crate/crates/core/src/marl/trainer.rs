use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::envs::TwoPlayerEnv;
use crate::seeding::derive_seed;

use super::buffer::{ReplayBuffer, Transition};
use super::learner::{Learner, UpdateTiming};
use super::nets::{ActorCriticBundle, NetShapes};
use super::{MarlError, TrainerConfig};

/// Trained networks with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPair {
    pub bundle: ActorCriticBundle,
    pub config: TrainerConfig,
    /// Free-form environment tag, checked when pairs are compared.
    pub env: String,
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    pub score_p1: f64,
    /// `None` when no update ran during the episode.
    pub critic_loss_mean: Option<f64>,
    /// Leader updates in this episode that fell back to the plain gradient.
    pub cg_fallbacks: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pair: TrainedPair,
    pub metrics: Vec<EpisodeMetrics>,
    pub timing: UpdateTiming,
    pub cg_fallbacks: u64,
    pub total_steps: usize,
}

/// Stateful training loop: one call to [`Trainer::run_episode`] per episode.
pub struct Trainer<'e> {
    env: &'e mut dyn TwoPlayerEnv,
    cfg: TrainerConfig,
    env_name: String,
    bundle: ActorCriticBundle,
    learner: Learner,
    buffer: ReplayBuffer,
    act_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    total_steps: usize,
    episode: usize,
}

impl<'e> Trainer<'e> {
    pub fn new(env: &'e mut dyn TwoPlayerEnv, cfg: TrainerConfig, env_name: &str) -> Result<Self, MarlError> {
        cfg.validate()?;
        let bounds = env.action_bounds();
        if !bounds.iter().all(|b| *b > 0.0 && b.is_finite()) {
            return Err(MarlError::Config(format!("action bounds must be positive, got {bounds:?}")));
        }
        let shapes = NetShapes {
            obs_dim: env.obs_dim(),
            actor_hidden: cfg.actor_hidden.clone(),
            critic_hidden: cfg.critic_hidden.clone(),
            actor_activation: cfg.actor_activation,
            critic_activation: cfg.critic_activation,
        };
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
        let bundle = ActorCriticBundle::new(shapes.clone(), bounds, cfg.tau, cfg.gamma, &mut init_rng)?;
        Ok(Self {
            learner: Learner::new(&shapes),
            buffer: ReplayBuffer::new(shapes.obs_dim, cfg.buffer_capacity),
            act_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1])),
            sample_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2])),
            env,
            cfg,
            env_name: env_name.to_string(),
            bundle,
            total_steps: 0,
            episode: 0,
        })
    }

    pub fn bundle(&self) -> &ActorCriticBundle {
        &self.bundle
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn pair(&self) -> TrainedPair {
        TrainedPair {
            bundle: self.bundle.clone(),
            config: self.cfg.clone(),
            env: self.env_name.clone(),
        }
    }

    /// Runs one episode, updating after every environment step once the
    /// buffer holds a full batch.
    pub fn run_episode(&mut self) -> Result<EpisodeMetrics, MarlError> {
        let start = Instant::now();
        let last_good = self.pair();
        let episode = self.episode;
        let fallbacks_before = self.learner.cg_fallbacks();
        let sigma = self.cfg.noise_scale(episode);
        let bounds = self.bundle.action_bounds;
        let n = self.cfg.batch_size;

        let Self {
            env,
            cfg,
            bundle,
            learner,
            buffer,
            act_rng,
            sample_rng,
            total_steps,
            ..
        } = self;

        let mut s = env.reset(derive_seed(cfg.seed, &[3, episode as u64]));
        let mut score = 0.0;
        let mut steps = 0;
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        let abort = |step: usize, e: MarlError, last_good: &TrainedPair| match e {
            MarlError::NonFiniteValue(what) => MarlError::NonFinite {
                episode,
                step,
                what,
                last_good: Box::new(last_good.clone()),
            },
            other => other,
        };
        loop {
            let mut a = [0.0; 2];
            for (i, ai) in a.iter_mut().enumerate() {
                let b = bounds[i];
                *ai = if *total_steps < cfg.warmup_steps {
                    act_rng.random_range(-b..=b)
                } else {
                    let z: f64 = act_rng.sample(StandardNormal);
                    (bundle.act(i as u8 + 1, &s) + sigma * b * z).clamp(-b, b)
                };
            }
            let res = env.step(a[0], a[1])?;
            score += res.reward;
            steps += 1;
            *total_steps += 1;
            buffer.push(Transition {
                s: std::mem::take(&mut s),
                a1: a[0],
                a2: a[1],
                r: res.reward,
                s2: res.obs.clone(),
                done: res.done && !res.info.truncated,
            });
            if buffer.len() >= n {
                let batch = buffer.sample(n, sample_rng);
                let loss = learner
                    .critic_update(bundle, &batch, cfg.critic_lr)
                    .map_err(|e| abort(steps, e, &last_good))?;
                loss_sum += loss;
                updates += 1;
                let buf = &*buffer;
                let mut next = || buf.sample(n, sample_rng);
                learner
                    .policy_update(bundle, cfg, &batch, &mut next)
                    .map_err(|e| abort(steps, e, &last_good))?;
                bundle.update_targets()?;
            }
            s = res.obs;
            if res.done {
                break;
            }
        }
        self.episode += 1;
        Ok(EpisodeMetrics {
            episode,
            steps,
            score_p1: score,
            critic_loss_mean: (updates > 0).then(|| loss_sum / updates as f64),
            cg_fallbacks: self.learner.cg_fallbacks() - fallbacks_before,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn finish(self, metrics: Vec<EpisodeMetrics>) -> TrainOutcome {
        TrainOutcome {
            pair: self.pair(),
            metrics,
            timing: *self.learner.timing(),
            cg_fallbacks: self.learner.cg_fallbacks(),
            total_steps: self.total_steps,
        }
    }
}

/// Trains for `config.episodes` episodes from a fresh, seeded start.
pub fn train(env: &mut dyn TwoPlayerEnv, config: &TrainerConfig, env_name: &str) -> Result<TrainOutcome, MarlError> {
    let mut trainer = Trainer::new(env, config.clone(), env_name)?;
    let mut metrics = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        metrics.push(trainer.run_episode()?);
    }
    Ok(trainer.finish(metrics))
}

#[derive(Serialize)]
struct MetricsRow {
    episode: usize,
    steps: usize,
    score_p1: f64,
    critic_loss_mean: Option<f64>,
    cg_fallbacks: u64,
    wall_ms: Option<f64>,
}

/// Writes the metrics log. Without `include_wall` the `wall_ms` column is
/// left empty so that reruns produce identical bytes.
pub fn write_metrics_csv<W: Write>(out: W, metrics: &[EpisodeMetrics], include_wall: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in metrics {
        w.serialize(MetricsRow {
            episode: m.episode,
            steps: m.steps,
            score_p1: m.score_p1,
            critic_loss_mean: m.critic_loss_mean,
            cg_fallbacks: m.cg_fallbacks,
            wall_ms: include_wall.then_some(m.wall_ms),
        })?;
    }
    if metrics.is_empty() {
        w.write_record(["episode", "steps", "score_p1", "critic_loss_mean", "cg_fallbacks", "wall_ms"])?;
    }
    w.flush()?;
    Ok(())
}
