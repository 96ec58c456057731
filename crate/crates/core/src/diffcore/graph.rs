use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;

use super::params::Layout;
use super::DiffError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Input(usize),
    Param(usize),
    Const(Array2<f64>),
    /// `op(a) · op(b)` where `op` optionally transposes.
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `a (n×c) + row (1×c)` broadcast over rows.
    AddRow(NodeId, NodeId),
    /// Column sums, `n×c → 1×c`.
    SumRows(NodeId),
    /// Repeat a `1×c` row `n` times.
    BroadcastRows(NodeId),
    SumAll(NodeId),
    /// Broadcast a `1×1` value to the node's shape.
    Fill(NodeId),
    Tanh(NodeId),
    /// `g ⊙ (1 − y²)` with `y` the tanh output.
    TanhBack { g: NodeId, y: NodeId },
    Relu(NodeId),
    /// `g ⊙ [x > 0]`.
    ReluBack { g: NodeId, x: NodeId },
    Square(NodeId),
    Concat(Vec<NodeId>),
    /// Columns `start..start+cols` of the argument.
    Slice { a: NodeId, start: usize },
    /// Places the argument at column `start` of a zero matrix.
    Pad { a: NodeId, start: usize },
}

impl Op {
    pub(crate) fn args(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input(_) | Param(_) | Const(_) => vec![],
            MatMul { a, b, .. } => vec![*a, *b],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => vec![*a, *b],
            Scale(a, _) | SumRows(a) | BroadcastRows(a) | SumAll(a) | Fill(a) | Tanh(a)
            | Relu(a) | Square(a) => vec![*a],
            TanhBack { g, y } => vec![*g, *y],
            ReluBack { g, x } => vec![*g, *x],
            Concat(v) => v.clone(),
            Slice { a, .. } | Pad { a, .. } => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    /// Bit `i` set when the node depends on input slot `i`.
    pub(crate) input_deps: u128,
}

#[derive(Debug, Clone)]
pub struct InputSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Hidden slots carry probe vectors for second-order products.
    pub hidden: bool,
}

impl InputSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient nodes for every tensor of one segment; `None` when the output
/// does not depend on that tensor.
#[derive(Debug, Clone)]
pub struct SegmentGrad {
    pub segment: usize,
    pub nodes: Vec<Option<NodeId>>,
}

/// Nodes computing `∇_outer ⟨∇_inner f, v⟩` with `v` fed through hidden slots.
#[derive(Debug, Clone)]
pub struct ProductHandle {
    pub outer: SegmentGrad,
    pub inner_segment: usize,
    pub v_slots: Vec<usize>,
}

/// Static dense computation graph over a fixed parameter [`Layout`].
///
/// Nodes are appended in topological order. Derivatives are built
/// symbolically as further nodes, so gradients can themselves be
/// differentiated.
#[derive(Debug, Clone)]
pub struct Graph {
    layout: Arc<Layout>,
    pub(crate) nodes: Vec<Node>,
    slots: Vec<InputSlot>,
    output: Option<NodeId>,
    grad_cache: HashMap<(NodeId, usize), SegmentGrad>,
    product_cache: HashMap<(NodeId, usize, usize), ProductHandle>,
}

impl Graph {
    pub fn new(layout: Arc<Layout>) -> Self {
        Self {
            layout,
            nodes: Vec::new(),
            slots: Vec::new(),
            output: None,
            grad_cache: HashMap::new(),
            product_cache: HashMap::new(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn slots(&self) -> &[InputSlot] {
        &self.slots
    }

    /// Slot indices of the user-visible inputs, in declaration order.
    pub fn user_slots(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| !self.slots[i].hidden).collect()
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize) -> NodeId {
        let input_deps = match &op {
            Op::Input(s) => 1u128 << s,
            other => other
                .args()
                .iter()
                .fold(0u128, |m, a| m | self.nodes[a.0].input_deps),
        };
        self.nodes.push(Node {
            op,
            rows,
            cols,
            input_deps,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn add_slot(&mut self, name: &str, rows: usize, cols: usize, hidden: bool) -> NodeId {
        assert!(self.slots.len() < 128, "too many input slots");
        self.slots.push(InputSlot {
            name: name.to_string(),
            rows,
            cols,
            hidden,
        });
        self.push(Op::Input(self.slots.len() - 1), rows, cols)
    }

    /// Declares a user input of fixed shape.
    pub fn input(&mut self, name: &str, rows: usize, cols: usize) -> NodeId {
        assert!(
            self.slots.iter().all(|s| s.name != name),
            "duplicate input `{name}`"
        );
        self.add_slot(name, rows, cols, false)
    }

    /// Declares an input that is not part of [`Graph::bind`]'s argument
    /// list; it starts at zero and is set with [`Graph::set_input`]. Being
    /// an input, it is constant under differentiation.
    pub fn hidden_input(&mut self, name: &str, rows: usize, cols: usize) -> NodeId {
        assert!(
            self.slots.iter().all(|s| s.name != name),
            "duplicate input `{name}`"
        );
        self.add_slot(name, rows, cols, true)
    }

    pub fn param(&mut self, segment: &str, tensor: &str) -> Result<NodeId, DiffError> {
        let t = self.layout.tensor_index(segment, tensor)?;
        let spec = &self.layout.tensors()[t];
        let (r, c) = (spec.rows, spec.cols);
        Ok(self.push(Op::Param(t), r, c))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        let (r, c) = value.dim();
        self.push(Op::Const(value), r, c)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (m, k1) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k1, k2, "matmul inner dimensions differ ({k1} vs {k2})");
        self.push(Op::MatMul { a, b, ta, tb }, m, n)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> (usize, usize) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{what}: shape mismatch {sa:?} vs {sb:?}");
        sa
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.same_shape(a, b, "add");
        self.push(Op::Add(a, b), r, c)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.same_shape(a, b, "sub");
        self.push(Op::Sub(a, b), r, c)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, c) = self.same_shape(a, b, "mul");
        self.push(Op::Mul(a, b), r, c)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let (r, c) = self.shape(a);
        self.push(Op::Scale(a, k), r, c)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row: bias must be 1x{c}");
        self.push(Op::AddRow(a, row), r, c)
    }

    /// `x·W + b` with `b` broadcast over the rows of `x`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let (_, c) = self.shape(a);
        self.push(Op::SumRows(a), 1, c)
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r, 1, "broadcast_rows expects a single row");
        self.push(Op::BroadcastRows(a), rows, c)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumAll(a), 1, 1)
    }

    /// Mean over all entries; with one column this is the mean over the batch.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let s = self.sum(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    pub fn fill(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.shape(a), (1, 1), "fill expects a scalar");
        self.push(Op::Fill(a), rows, cols)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        self.push(Op::Tanh(a), r, c)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        self.push(Op::Relu(a), r, c)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        self.push(Op::Square(a), r, c)
    }

    /// Elementwise product summed to a scalar.
    pub fn inner(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let m = self.mul(a, b);
        self.sum(m)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            assert_eq!(r, rows, "concat_cols: row mismatch");
            cols += c;
        }
        self.push(Op::Concat(parts.to_vec()), rows, cols)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, cols: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(start + cols <= c, "slice_cols out of range");
        self.push(Op::Slice { a, start }, r, cols)
    }

    fn pad_cols(&mut self, a: NodeId, start: usize, total: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert!(start + c <= total);
        self.push(Op::Pad { a, start }, r, total)
    }

    fn accumulate(&mut self, slot: &mut Option<NodeId>, contrib: NodeId) {
        *slot = Some(match *slot {
            None => contrib,
            Some(prev) => self.add(prev, contrib),
        });
    }

    /// Builds reverse-mode adjoint nodes of scalar `output` with respect to
    /// each node in `wrt`. Returns `None` for nodes the output does not
    /// depend on.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Option<NodeId>>, DiffError> {
        let (r, c) = self.shape(output);
        if (r, c) != (1, 1) {
            return Err(DiffError::NonScalar { rows: r, cols: c });
        }
        let last = output.0;
        let mut depends = vec![false; last + 1];
        for w in wrt {
            if w.0 <= last {
                depends[w.0] = true;
            }
        }
        for i in 0..=last {
            if !depends[i] && self.nodes[i].op.args().iter().any(|a| depends[a.0]) {
                depends[i] = true;
            }
        }
        let mut adj: Vec<Option<NodeId>> = vec![None; last + 1];
        if depends[last] {
            adj[last] = Some(self.scalar(1.0));
        }
        for i in (0..=last).rev() {
            let Some(g) = adj[i] else { continue };
            if !depends[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let this = NodeId(i);
            let push = |graph: &mut Graph, adj: &mut Vec<Option<NodeId>>, target: NodeId, contrib: NodeId| {
                let mut slot = adj[target.0];
                graph.accumulate(&mut slot, contrib);
                adj[target.0] = slot;
            };
            match op {
                Op::Input(_) | Op::Param(_) | Op::Const(_) => {}
                Op::MatMul { a, b, ta, tb } => {
                    if depends[a.0] {
                        let da = if ta {
                            self.matmul_t(b, g, tb, true)
                        } else {
                            self.matmul_t(g, b, false, !tb)
                        };
                        push(self, &mut adj, a, da);
                    }
                    if depends[b.0] {
                        let db = if tb {
                            self.matmul_t(g, a, true, ta)
                        } else {
                            self.matmul_t(a, g, !ta, false)
                        };
                        push(self, &mut adj, b, db);
                    }
                }
                Op::Add(a, b) => {
                    if depends[a.0] {
                        push(self, &mut adj, a, g);
                    }
                    if depends[b.0] {
                        push(self, &mut adj, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if depends[a.0] {
                        push(self, &mut adj, a, g);
                    }
                    if depends[b.0] {
                        let n = self.scale(g, -1.0);
                        push(self, &mut adj, b, n);
                    }
                }
                Op::Mul(a, b) => {
                    if depends[a.0] {
                        let d = self.mul(g, b);
                        push(self, &mut adj, a, d);
                    }
                    if depends[b.0] {
                        let d = self.mul(g, a);
                        push(self, &mut adj, b, d);
                    }
                }
                Op::Scale(a, k) => {
                    let d = self.scale(g, k);
                    push(self, &mut adj, a, d);
                }
                Op::AddRow(a, row) => {
                    if depends[a.0] {
                        push(self, &mut adj, a, g);
                    }
                    if depends[row.0] {
                        let d = self.sum_rows(g);
                        push(self, &mut adj, row, d);
                    }
                }
                Op::SumRows(a) => {
                    let rows = self.nodes[a.0].rows;
                    let d = self.broadcast_rows(g, rows);
                    push(self, &mut adj, a, d);
                }
                Op::BroadcastRows(a) => {
                    let d = self.sum_rows(g);
                    push(self, &mut adj, a, d);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(a);
                    let d = self.fill(g, r, c);
                    push(self, &mut adj, a, d);
                }
                Op::Fill(a) => {
                    let d = self.sum(g);
                    push(self, &mut adj, a, d);
                }
                Op::Tanh(a) => {
                    let (r, c) = self.shape(a);
                    let d = self.push(Op::TanhBack { g, y: this }, r, c);
                    push(self, &mut adj, a, d);
                }
                Op::TanhBack { g: up, y } => {
                    let (r, c) = self.shape(y);
                    if depends[up.0] {
                        let d = self.push(Op::TanhBack { g, y }, r, c);
                        push(self, &mut adj, up, d);
                    }
                    if depends[y.0] {
                        let gu = self.mul(g, up);
                        let guy = self.mul(gu, y);
                        let d = self.scale(guy, -2.0);
                        push(self, &mut adj, y, d);
                    }
                }
                Op::Relu(a) => {
                    let (r, c) = self.shape(a);
                    let d = self.push(Op::ReluBack { g, x: a }, r, c);
                    push(self, &mut adj, a, d);
                }
                Op::ReluBack { g: up, x } => {
                    // The step function has zero derivative almost everywhere.
                    if depends[up.0] {
                        let (r, c) = self.shape(x);
                        let d = self.push(Op::ReluBack { g, x }, r, c);
                        push(self, &mut adj, up, d);
                    }
                }
                Op::Square(a) => {
                    let ga = self.mul(g, a);
                    let d = self.scale(ga, 2.0);
                    push(self, &mut adj, a, d);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.nodes[p.0].cols;
                        if depends[p.0] {
                            let d = self.slice_cols(g, start, w);
                            push(self, &mut adj, p, d);
                        }
                        start += w;
                    }
                }
                Op::Slice { a, start } => {
                    let total = self.nodes[a.0].cols;
                    let d = self.pad_cols(g, start, total);
                    push(self, &mut adj, a, d);
                }
                Op::Pad { a, start } => {
                    let w = self.nodes[a.0].cols;
                    let d = self.slice_cols(g, start, w);
                    push(self, &mut adj, a, d);
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|w| if w.0 <= last { adj[w.0] } else { None })
            .collect())
    }

    /// Gradient nodes of `output` with respect to all tensors of a segment.
    /// Every param node of a tensor contributes, so tensors referenced
    /// several times accumulate correctly.
    pub fn segment_grad_of(&mut self, output: NodeId, segment: &str) -> Result<SegmentGrad, DiffError> {
        Ok(self.segment_grads_of(output, &[segment])?.remove(0))
    }

    /// Like [`Self::segment_grad_of`] for several segments, sharing one
    /// reverse sweep.
    pub fn segment_grads_of(&mut self, output: NodeId, segments: &[&str]) -> Result<Vec<SegmentGrad>, DiffError> {
        let segs = segments
            .iter()
            .map(|s| self.layout.segment_index(s))
            .collect::<Result<Vec<_>, _>>()?;
        let missing: Vec<usize> = segs
            .iter()
            .copied()
            .filter(|s| !self.grad_cache.contains_key(&(output, *s)))
            .collect();
        if !missing.is_empty() {
            let mut wrt = Vec::new();
            let mut owner = Vec::new();
            for (m, &seg) in missing.iter().enumerate() {
                for (k, &t) in self.layout.segments()[seg].tensors.iter().enumerate() {
                    for (i, n) in self.nodes.iter().enumerate().take(output.0 + 1) {
                        if matches!(n.op, Op::Param(p) if p == t) {
                            wrt.push(NodeId(i));
                            owner.push((m, k));
                        }
                    }
                }
            }
            let grads = self.grad(output, &wrt)?;
            let mut nodes: Vec<Vec<Option<NodeId>>> = missing
                .iter()
                .map(|&seg| vec![None; self.layout.segments()[seg].tensors.len()])
                .collect();
            for (g, (m, k)) in grads.into_iter().zip(owner) {
                if let Some(g) = g {
                    let mut slot = nodes[m][k];
                    self.accumulate(&mut slot, g);
                    nodes[m][k] = slot;
                }
            }
            for (&seg, nodes) in missing.iter().zip(nodes) {
                self.grad_cache.insert((output, seg), SegmentGrad { segment: seg, nodes });
            }
        }
        Ok(segs.iter().map(|s| self.grad_cache[&(output, *s)].clone()).collect())
    }

    fn scalar_output(&self) -> Result<NodeId, DiffError> {
        let out = self.output.ok_or(DiffError::NoOutput)?;
        let (r, c) = self.shape(out);
        if (r, c) != (1, 1) {
            return Err(DiffError::NonScalar { rows: r, cols: c });
        }
        Ok(out)
    }

    /// Gradient handle of the graph's scalar output.
    pub fn gradient_handle(&mut self, segment: &str) -> Result<SegmentGrad, DiffError> {
        let out = self.scalar_output()?;
        self.segment_grad_of(out, segment)
    }

    /// Handle for `∇_outer ⟨∇_inner f, v⟩` on the scalar output; `outer ==
    /// inner` yields a Hessian-vector product.
    pub fn product_handle(&mut self, outer: &str, inner: &str) -> Result<ProductHandle, DiffError> {
        let out = self.scalar_output()?;
        self.product_handle_of(out, outer, inner)
    }

    pub fn product_handle_of(
        &mut self,
        output: NodeId,
        outer: &str,
        inner: &str,
    ) -> Result<ProductHandle, DiffError> {
        let oseg = self.layout.segment_index(outer)?;
        let iseg = self.layout.segment_index(inner)?;
        if let Some(h) = self.product_cache.get(&(output, oseg, iseg)) {
            return Ok(h.clone());
        }
        let g_inner = self.segment_grad_of(output, inner)?;
        let tensors = self.layout.segments()[iseg].tensors.clone();
        let mut v_slots = Vec::with_capacity(tensors.len());
        let mut terms = Vec::new();
        for (k, &t) in tensors.iter().enumerate() {
            let spec = self.layout.tensors()[t].clone();
            let name = format!("__v[{}:{}]@{}", inner, spec.name, output.0);
            let v = self.add_slot(&name, spec.rows, spec.cols, true);
            v_slots.push(self.slots.len() - 1);
            if let Some(g) = g_inner.nodes[k] {
                terms.push(self.inner(g, v));
            }
        }
        let dot = match terms.split_first() {
            None => self.scalar(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        };
        let outer_grad = self.segment_grad_of(dot, outer)?;
        let h = ProductHandle {
            outer: outer_grad,
            inner_segment: iseg,
            v_slots,
        };
        self.product_cache.insert((output, oseg, iseg), h.clone());
        Ok(h)
    }
}
