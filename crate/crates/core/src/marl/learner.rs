use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use crate::diffcore::{Graph, Layout, NodeId, SegmentGrad, Workspace};
use crate::stackelberg::{total_derivative_report, CgSettings, StackelbergError};

use super::buffer::Batch;
use super::nets::{player_index, ActorCriticBundle, NetShapes, ACTOR, CRITIC};
use super::objective::{Architecture, CompositeGraph, CompositeObjective};
use super::{FollowerHessian, MarlError, Mode, TrainerConfig};

/// Mean squared Bellman error graph for one batch size.
struct CriticGraph {
    graph: Graph,
    loss: NodeId,
    grad: SegmentGrad,
}

impl CriticGraph {
    fn build(arch: &Architecture, layout: Arc<Layout>, n: usize) -> Result<Self, MarlError> {
        let mut graph = Graph::new(layout);
        let s = graph.input("s", n, arch.obs_dim);
        let a1 = graph.input("a1", n, 1);
        let a2 = graph.input("a2", n, 1);
        let y = graph.input("y", n, 1);
        let q = (arch.critic)(&mut graph, s, a1, a2)?;
        let diff = graph.sub(q, y);
        let sq = graph.square(diff);
        let loss = graph.mean(sq);
        graph.set_output(loss);
        let grad = graph.segment_grad_of(loss, CRITIC)?;
        Ok(Self { graph, loss, grad })
    }
}

struct Slot<G> {
    graph: G,
    ws: Workspace,
}

/// Accumulated wall time of the policy-gradient computations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateTiming {
    /// Regularized total-derivative computations (`st_maddpg`).
    pub leader_ns: u128,
    pub leader_updates: u64,
    /// Plain actor-gradient computations.
    pub plain_ns: u128,
    pub plain_updates: u64,
    pub critic_ns: u128,
    pub critic_updates: u64,
}

impl UpdateTiming {
    pub fn mean_leader_ns(&self) -> Option<f64> {
        (self.leader_updates > 0).then(|| self.leader_ns as f64 / self.leader_updates as f64)
    }

    pub fn mean_plain_ns(&self) -> Option<f64> {
        (self.plain_updates > 0).then(|| self.plain_ns as f64 / self.plain_updates as f64)
    }

    pub fn merge(&mut self, other: &UpdateTiming) {
        self.leader_ns += other.leader_ns;
        self.leader_updates += other.leader_updates;
        self.plain_ns += other.plain_ns;
        self.plain_updates += other.plain_updates;
        self.critic_ns += other.critic_ns;
        self.critic_updates += other.critic_updates;
    }
}

/// Leader ascent direction on `J_L = ±J` (positive for player 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderGradient {
    pub direction: Vec<f64>,
    /// `∇_{θL} J_L`.
    pub partial: Vec<f64>,
    /// `∇_{θF} J_L`.
    pub follower_grad: Vec<f64>,
    /// The implicit solve failed and `direction` is the plain gradient.
    pub fell_back: bool,
    pub cg_iterations: usize,
    pub cg_residual: f64,
}

/// Parameter change of each actor over one policy update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDeltas {
    pub actor1: Vec<f64>,
    pub actor2: Vec<f64>,
}

/// Gradient computations for a fixed architecture. Graphs are built once
/// per batch size and reused.
pub struct Learner {
    arch: Architecture,
    layout: Arc<Layout>,
    composite: HashMap<usize, Slot<CompositeGraph>>,
    critic: HashMap<usize, Slot<CriticGraph>>,
    cg_fallbacks: u64,
    timing: UpdateTiming,
}

impl Learner {
    pub fn new(shapes: &NetShapes) -> Self {
        Self::with_architecture(Architecture::mlp(shapes), shapes.layout())
    }

    pub(crate) fn with_architecture(arch: Architecture, layout: Arc<Layout>) -> Self {
        Self {
            arch,
            layout,
            composite: HashMap::new(),
            critic: HashMap::new(),
            cg_fallbacks: 0,
            timing: UpdateTiming::default(),
        }
    }

    /// Number of leader updates that fell back to the plain gradient.
    pub fn cg_fallbacks(&self) -> u64 {
        self.cg_fallbacks
    }

    pub fn timing(&self) -> &UpdateTiming {
        &self.timing
    }

    fn composite(&mut self, n: usize) -> Result<&mut Slot<CompositeGraph>, MarlError> {
        if !self.composite.contains_key(&n) {
            let graph = CompositeGraph::build(&self.arch, self.layout.clone(), n)?;
            let ws = graph.graph.workspace();
            self.composite.insert(n, Slot { graph, ws });
        }
        Ok(self.composite.get_mut(&n).expect("inserted"))
    }

    fn critic_graph(&mut self, n: usize) -> Result<&mut Slot<CriticGraph>, MarlError> {
        if !self.critic.contains_key(&n) {
            let graph = CriticGraph::build(&self.arch, self.layout.clone(), n)?;
            let ws = graph.graph.workspace();
            self.critic.insert(n, Slot { graph, ws });
        }
        Ok(self.critic.get_mut(&n).expect("inserted"))
    }

    /// Bellman targets `r + γ·Q_{w′}(s′, μ1′(s′), μ2′(s′))`, or `r` on
    /// terminal transitions.
    pub fn critic_targets(&mut self, bundle: &ActorCriticBundle, batch: &Batch) -> Result<Vec<f64>, MarlError> {
        check_batch(bundle, batch)?;
        let slot = self.composite(batch.len())?;
        let next = slot.graph.q_values(&mut slot.ws, &bundle.target, &batch.s2)?;
        Ok(batch
            .r
            .iter()
            .zip(&next)
            .zip(&batch.done)
            .map(|((r, q), &done)| if done { *r } else { r + bundle.gamma * q })
            .collect())
    }

    /// One gradient step on the Bellman error; returns the pre-step loss.
    pub fn critic_update(&mut self, bundle: &mut ActorCriticBundle, batch: &Batch, lr: f64) -> Result<f64, MarlError> {
        let start = Instant::now();
        let y = self.critic_targets(bundle, batch)?;
        let [b1, b2] = bundle.action_bounds;
        let a1: Vec<f64> = batch.a1.iter().map(|a| a / b1).collect();
        let a2: Vec<f64> = batch.a2.iter().map(|a| a / b2).collect();
        let slot = self.critic_graph(batch.len())?;
        let g = &slot.graph;
        g.graph.bind(&mut slot.ws, &bundle.live, &[&batch.s, &a1, &a2, &y])?;
        g.graph.run(&mut slot.ws, &[g.loss])?;
        let loss = slot.ws.value(g.loss)[[0, 0]];
        if !loss.is_finite() {
            return Err(MarlError::NonFiniteValue(format!("critic loss {loss}")));
        }
        let grad = g.graph.run_segment(&mut slot.ws, &g.grad)?;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(MarlError::NonFiniteValue("critic gradient".into()));
        }
        for (w, d) in bundle.live.segment_mut(CRITIC)?.iter_mut().zip(&grad) {
            *w -= lr * d;
        }
        self.timing.critic_ns += start.elapsed().as_nanos();
        self.timing.critic_updates += 1;
        Ok(loss)
    }

    /// `(∇_{θ1} J, ∇_{θ2} J)` of the batch objective under the live networks.
    pub fn actor_gradients(&mut self, bundle: &ActorCriticBundle, batch: &Batch) -> Result<(Vec<f64>, Vec<f64>), MarlError> {
        check_batch(bundle, batch)?;
        let slot = self.composite(batch.len())?;
        Ok(slot.graph.actor_gradients(&mut slot.ws, &bundle.live, &batch.s)?)
    }

    /// The batch objective as a game between the leader's and follower's
    /// actors, for use with [`crate::stackelberg`].
    pub fn objective<'a>(
        &'a mut self,
        bundle: &ActorCriticBundle,
        states: &'a [f64],
        leader_id: u8,
        hess: FollowerHessian,
    ) -> Result<CompositeObjective<'a>, MarlError> {
        let obs = bundle.shapes.obs_dim;
        if obs == 0 || states.len() % obs != 0 || states.is_empty() {
            return Err(MarlError::Config(format!("state block of {} values is not a nonempty multiple of {obs}", states.len())));
        }
        let slot = self.composite(states.len() / obs)?;
        let Slot { graph, ws } = slot;
        Ok(graph.objective(ws, &bundle.live, states, player_index(leader_id), hess)?)
    }

    /// Regularized total derivative of the leader's objective on one batch.
    /// A failed implicit solve falls back to the plain gradient and is
    /// counted.
    pub fn leader_total_gradient(
        &mut self,
        bundle: &ActorCriticBundle,
        batch: &Batch,
        leader_id: u8,
        lambda: f64,
        cg: CgSettings,
        hess: FollowerHessian,
    ) -> Result<LeaderGradient, MarlError> {
        check_batch(bundle, batch)?;
        let l = player_index(leader_id);
        let x1 = bundle.live.segment(ACTOR[l])?.to_vec();
        let x2 = bundle.live.segment(ACTOR[1 - l])?.to_vec();
        let obj = self.objective(bundle, &batch.s, leader_id, hess)?;
        let out = match total_derivative_report(&obj, &x1, &x2, lambda, cg) {
            Ok(td) => LeaderGradient {
                direction: td.direction,
                partial: td.partial,
                follower_grad: td.follower_grad,
                fell_back: false,
                cg_iterations: td.solve.iterations,
                cg_residual: td.solve.residual,
            },
            Err(StackelbergError::Divergence { .. } | StackelbergError::CgNonFinite { .. } | StackelbergError::NonFinite(_)) => {
                use crate::stackelberg::DifferentiableGame;
                let partial = obj.grad1(&x1, &x2);
                LeaderGradient {
                    direction: partial.clone(),
                    partial,
                    follower_grad: obj.grad2(&x1, &x2),
                    fell_back: true,
                    cg_iterations: 0,
                    cg_residual: f64::NAN,
                }
            }
            Err(e) => return Err(e.into()),
        };
        if out.fell_back {
            self.cg_fallbacks += 1;
        }
        Ok(out)
    }

    /// Actor updates for one environment step according to `cfg.mode`.
    /// `next_batch` supplies the extra follower minibatches of `approx_st`.
    pub fn policy_update(
        &mut self,
        bundle: &mut ActorCriticBundle,
        cfg: &TrainerConfig,
        batch: &Batch,
        next_batch: &mut dyn FnMut() -> Batch,
    ) -> Result<StepDeltas, MarlError> {
        let before = [
            bundle.live.segment(ACTOR[0])?.to_vec(),
            bundle.live.segment(ACTOR[1])?.to_vec(),
        ];
        let l = player_index(cfg.leader_id);
        let f = 1 - l;
        // Ascent direction sign on J for each player.
        let dir = [1.0, -1.0];
        let lr = cfg.actor_lr;
        match cfg.mode {
            Mode::Maddpg => {
                let start = Instant::now();
                let (g1, g2) = self.actor_gradients(bundle, batch)?;
                self.timing.plain_ns += start.elapsed().as_nanos();
                self.timing.plain_updates += 1;
                axpy(bundle.live.segment_mut(ACTOR[0])?, lr, &g1);
                axpy(bundle.live.segment_mut(ACTOR[1])?, -lr, &g2);
            }
            Mode::StMaddpg => {
                let start = Instant::now();
                let g = self.leader_total_gradient(bundle, batch, cfg.leader_id, cfg.lambda, cfg.cg(), cfg.follower_hessian)?;
                self.timing.leader_ns += start.elapsed().as_nanos();
                self.timing.leader_updates += 1;
                axpy(bundle.live.segment_mut(ACTOR[l])?, lr, &g.direction);
                axpy(bundle.live.segment_mut(ACTOR[f])?, -lr, &g.follower_grad);
            }
            Mode::ApproxSt => {
                for i in 0..cfg.follower_extra_updates {
                    let extra;
                    let b = if i == 0 {
                        batch
                    } else {
                        extra = next_batch();
                        &extra
                    };
                    let start = Instant::now();
                    let (g1, g2) = self.actor_gradients(bundle, b)?;
                    self.timing.plain_ns += start.elapsed().as_nanos();
                    self.timing.plain_updates += 1;
                    let gf = if f == 0 { g1 } else { g2 };
                    axpy(bundle.live.segment_mut(ACTOR[f])?, dir[f] * lr, &gf);
                }
                let start = Instant::now();
                let (g1, g2) = self.actor_gradients(bundle, batch)?;
                self.timing.plain_ns += start.elapsed().as_nanos();
                self.timing.plain_updates += 1;
                let gl = if l == 0 { g1 } else { g2 };
                axpy(bundle.live.segment_mut(ACTOR[l])?, dir[l] * lr, &gl);
            }
        }
        if !bundle.live.is_finite() {
            return Err(MarlError::NonFiniteValue("actor parameters".into()));
        }
        let delta = |i: usize| -> Result<Vec<f64>, MarlError> {
            Ok(bundle.live.segment(ACTOR[i])?.iter().zip(&before[i]).map(|(a, b)| a - b).collect())
        };
        Ok(StepDeltas {
            actor1: delta(0)?,
            actor2: delta(1)?,
        })
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

fn check_batch(bundle: &ActorCriticBundle, batch: &Batch) -> Result<(), MarlError> {
    if batch.is_empty() {
        return Err(MarlError::Config("empty batch".into()));
    }
    if batch.obs_dim != bundle.shapes.obs_dim {
        return Err(MarlError::Config(format!(
            "batch observations have width {}, networks expect {}",
            batch.obs_dim, bundle.shapes.obs_dim
        )));
    }
    Ok(())
}
