use std::cell::RefCell;

use crate::diffcore::nn::{mlp, Activation};
use crate::diffcore::{DiffError, Graph, NodeId, ParameterVector, ProductHandle, SegmentGrad, Workspace};
use crate::stackelberg::DifferentiableGame;

use super::nets::{NetShapes, ACTOR, CRITIC};
use super::FollowerHessian;

type ActorFn = dyn Fn(&mut Graph, NodeId, &str) -> Result<NodeId, DiffError> + Send + Sync;
type CriticFn = dyn Fn(&mut Graph, NodeId, NodeId, NodeId) -> Result<NodeId, DiffError> + Send + Sync;

/// How actors and the critic are assembled into graphs. Actors map the
/// `n×obs` state block to `n×1` normalized actions in `[−1, 1]`; the critic
/// maps `(s, u1, u2)` to `n×1` values.
pub(crate) struct Architecture {
    pub obs_dim: usize,
    pub actor: Box<ActorFn>,
    pub critic: Box<CriticFn>,
}

impl Architecture {
    pub fn mlp(shapes: &NetShapes) -> Self {
        let layers_a = shapes.actor_hidden.len() + 1;
        let layers_c = shapes.critic_hidden.len() + 1;
        let (act_a, act_c) = (shapes.actor_activation, shapes.critic_activation);
        Self {
            obs_dim: shapes.obs_dim,
            actor: Box::new(move |g, s, seg| mlp(g, s, seg, layers_a, act_a, Activation::Tanh)),
            critic: Box::new(move |g, s, u1, u2| {
                let x = g.concat_cols(&[s, u1, u2]);
                mlp(g, x, CRITIC, layers_c, act_c, Activation::Identity)
            }),
        }
    }
}

/// `J = mean_j Q(s_j, u1(s_j), u2(s_j))` for a fixed batch size, with
/// first- and second-order handles built on demand.
pub(crate) struct CompositeGraph {
    pub graph: Graph,
    pub n: usize,
    pub u: [NodeId; 2],
    pub q: NodeId,
    pub j: NodeId,
    pub grads: [SegmentGrad; 2],
    /// `hvp[f]`: `∇²_{actor f} J · v`.
    hvp: [Option<ProductHandle>; 2],
    /// `mixed[l]`: `∇_{actor l} ⟨∇_{actor other} J, v⟩`.
    mixed: [Option<ProductHandle>; 2],
    paper: [Option<PaperTerm>; 2],
}

/// Follower curvature restricted to the policy term: `Σ_j u_j · g_j` with
/// `g = ∇_u J` fed back as a constant input.
#[derive(Clone)]
struct PaperTerm {
    du: NodeId,
    g_slot: usize,
    handle: ProductHandle,
}

impl CompositeGraph {
    pub fn build(arch: &Architecture, layout: std::sync::Arc<crate::diffcore::Layout>, n: usize) -> Result<Self, DiffError> {
        let mut graph = Graph::new(layout);
        let s = graph.input("s", n, arch.obs_dim);
        let u1 = (arch.actor)(&mut graph, s, ACTOR[0])?;
        let u2 = (arch.actor)(&mut graph, s, ACTOR[1])?;
        let q = (arch.critic)(&mut graph, s, u1, u2)?;
        let j = graph.mean(q);
        graph.set_output(j);
        let g = graph.segment_grads_of(j, &ACTOR)?;
        let grads = [g[0].clone(), g[1].clone()];
        Ok(Self {
            graph,
            n,
            u: [u1, u2],
            q,
            j,
            grads,
            hvp: [None, None],
            mixed: [None, None],
            paper: [None, None],
        })
    }

    fn prepare(&mut self, leader: usize, hess: FollowerHessian) -> Result<(), DiffError> {
        let follower = 1 - leader;
        if self.mixed[leader].is_none() {
            self.mixed[leader] = Some(self.graph.product_handle_of(self.j, ACTOR[leader], ACTOR[follower])?);
        }
        match hess {
            FollowerHessian::Exact => {
                if self.hvp[follower].is_none() {
                    self.hvp[follower] = Some(self.graph.product_handle_of(self.j, ACTOR[follower], ACTOR[follower])?);
                }
            }
            FollowerHessian::PaperTerm => {
                if self.paper[follower].is_none() {
                    let uf = self.u[follower];
                    let du = self.graph.grad(self.j, &[uf])?[0].expect("J depends on both actions");
                    let name = format!("__g[{}]", ACTOR[follower]);
                    let g = self.graph.hidden_input(&name, self.n, 1);
                    let g_slot = self.graph.slot_index(&name)?;
                    let prod = self.graph.mul(uf, g);
                    let obj = self.graph.sum(prod);
                    let handle = self.graph.product_handle_of(obj, ACTOR[follower], ACTOR[follower])?;
                    self.paper[follower] = Some(PaperTerm { du, g_slot, handle });
                }
            }
        }
        Ok(())
    }

    /// Binds `params` and a row-major `n×obs` state block.
    pub fn bind(&self, ws: &mut Workspace, params: &ParameterVector, states: &[f64]) -> Result<(), DiffError> {
        self.graph.bind(ws, params, &[states])
    }

    /// Per-sample `Q(s, u1(s), u2(s))` under `params`.
    pub fn q_values(&self, ws: &mut Workspace, params: &ParameterVector, states: &[f64]) -> Result<Vec<f64>, DiffError> {
        self.bind(ws, params, states)?;
        self.graph.run(ws, &[self.q])?;
        Ok(ws.value(self.q).iter().copied().collect())
    }

    /// `(∇_{θ1} J, ∇_{θ2} J)` from one reverse sweep.
    pub fn actor_gradients(&self, ws: &mut Workspace, params: &ParameterVector, states: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DiffError> {
        self.bind(ws, params, states)?;
        let nodes: Vec<NodeId> = self.grads.iter().flat_map(|g| g.nodes.iter().flatten().copied()).collect();
        self.graph.run(ws, &nodes)?;
        Ok((self.graph.read_segment(ws, &self.grads[0]), self.graph.read_segment(ws, &self.grads[1])))
    }

    /// Game view for a leader (0 or 1) on a fixed state batch, evaluated in
    /// the caller's workspace.
    pub fn objective<'a>(
        &'a mut self,
        ws: &'a mut Workspace,
        params: &ParameterVector,
        states: &'a [f64],
        leader: usize,
        hess: FollowerHessian,
    ) -> Result<CompositeObjective<'a>, DiffError> {
        self.prepare(leader, hess)?;
        self.bind(ws, params, states)?;
        let follower = 1 - leader;
        let this: &'a CompositeGraph = self;
        Ok(CompositeObjective {
            cg: this,
            states,
            leader,
            sign: if leader == 0 { 1.0 } else { -1.0 },
            hess: match hess {
                FollowerHessian::Exact => Curvature::Exact(this.hvp[follower].clone().expect("prepared")),
                FollowerHessian::PaperTerm => Curvature::Paper(this.paper[follower].clone().expect("prepared")),
            },
            mixed: this.mixed[leader].clone().expect("prepared"),
            state: RefCell::new(BoundState {
                params: params.clone(),
                ws,
                g_fresh: false,
            }),
        })
    }
}

enum Curvature {
    Exact(ProductHandle),
    Paper(PaperTerm),
}

struct BoundState<'a> {
    params: ParameterVector,
    ws: &'a mut Workspace,
    g_fresh: bool,
}

/// The batch actor objective seen from the leader: `J_L = ±J` with the
/// leader's actor as `x1` and the follower's as `x2`. The leader maximizes
/// and the follower minimizes `J_L`. Critic parameters stay fixed.
///
/// Evaluations at a new `(x1, x2)` rebind the graph; repeated calls at the
/// same point reuse cached forward and first-order values.
pub struct CompositeObjective<'a> {
    cg: &'a CompositeGraph,
    states: &'a [f64],
    leader: usize,
    sign: f64,
    hess: Curvature,
    mixed: ProductHandle,
    state: RefCell<BoundState<'a>>,
}

impl<'a> CompositeObjective<'a> {
    fn follower(&self) -> usize {
        1 - self.leader
    }

    fn with_bound<T>(&self, x1: &[f64], x2: &[f64], f: impl FnOnce(&Graph, &mut BoundState<'a>) -> Result<T, DiffError>) -> T {
        let mut st = self.state.borrow_mut();
        let stale = st.params.segment(ACTOR[self.leader]).expect("leader segment") != x1
            || st.params.segment(ACTOR[self.follower()]).expect("follower segment") != x2;
        if stale {
            st.params.set_segment(ACTOR[self.leader], x1).expect("leader dimension");
            st.params.set_segment(ACTOR[self.follower()], x2).expect("follower dimension");
            let BoundState { params, ws, g_fresh } = &mut *st;
            self.cg.bind(ws, params, self.states).expect("state batch shape");
            *g_fresh = false;
        }
        f(&self.cg.graph, &mut st).expect("composite objective evaluation")
    }

    fn signed(&self, mut v: Vec<f64>) -> Vec<f64> {
        if self.sign < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    }
}

impl DifferentiableGame for CompositeObjective<'_> {
    fn leader_dim(&self) -> usize {
        self.state.borrow().params.segment(ACTOR[self.leader]).expect("leader segment").len()
    }

    fn follower_dim(&self) -> usize {
        self.state.borrow().params.segment(ACTOR[self.follower()]).expect("follower segment").len()
    }

    fn value(&self, x1: &[f64], x2: &[f64]) -> f64 {
        let j = self.cg.j;
        self.sign
            * self.with_bound(x1, x2, |g, st| {
                g.run(st.ws, &[j])?;
                Ok(st.ws.value(j)[[0, 0]])
            })
    }

    fn grad1(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let h = &self.cg.grads[self.leader];
        self.signed(self.with_bound(x1, x2, |g, st| g.run_segment(st.ws, h)))
    }

    fn grad2(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let h = &self.cg.grads[self.follower()];
        self.signed(self.with_bound(x1, x2, |g, st| g.run_segment(st.ws, h)))
    }

    fn hvp2(&self, x1: &[f64], x2: &[f64], v: &[f64]) -> Vec<f64> {
        let out = self.with_bound(x1, x2, |g, st| match &self.hess {
            Curvature::Exact(h) => g.run_product(st.ws, h, v),
            Curvature::Paper(p) => {
                if !st.g_fresh {
                    g.run(st.ws, &[p.du])?;
                    let du: Vec<f64> = st.ws.value(p.du).iter().copied().collect();
                    g.set_input(st.ws, p.g_slot, &du)?;
                    st.g_fresh = true;
                }
                g.run_product(st.ws, &p.handle, v)
            }
        });
        self.signed(out)
    }

    fn mixed12(&self, x1: &[f64], x2: &[f64], v: &[f64]) -> Vec<f64> {
        let h = &self.mixed;
        self.signed(self.with_bound(x1, x2, |g, st| g.run_product(st.ws, h, v)))
    }
}
