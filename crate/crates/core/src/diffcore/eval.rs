use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Zip};

use super::graph::{Graph, NodeId, Op, ProductHandle, SegmentGrad};
use super::params::ParameterVector;
use super::DiffError;

/// Mutable evaluation state for one [`Graph`]: bound parameters, inputs and
/// one buffer per node. Values stay cached until something they depend on
/// is rebound.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    params: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    bufs: Vec<Array2<f64>>,
    valid: Vec<bool>,
    needed: Vec<bool>,
    bound: bool,
}

impl Workspace {
    /// Value of a node computed by the last [`Graph::run`].
    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.bufs[id.0]
    }
}

fn visit_args(op: &Op, mut f: impl FnMut(NodeId)) {
    use Op::*;
    match op {
        Input(_) | Param(_) | Const(_) => {}
        MatMul { a, b, .. } | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => {
            f(*a);
            f(*b);
        }
        TanhBack { g, y } => {
            f(*g);
            f(*y);
        }
        ReluBack { g, x } => {
            f(*g);
            f(*x);
        }
        Scale(a, _) | SumRows(a) | BroadcastRows(a) | SumAll(a) | Fill(a) | Tanh(a) | Relu(a)
        | Square(a) | Slice { a, .. } | Pad { a, .. } => f(*a),
        Concat(v) => v.iter().copied().for_each(f),
    }
}

impl Graph {
    pub fn workspace(&self) -> Workspace {
        let mut ws = Workspace::default();
        self.grow(&mut ws);
        ws
    }

    fn grow(&self, ws: &mut Workspace) {
        while ws.bufs.len() < self.nodes.len() {
            let n = &self.nodes[ws.bufs.len()];
            ws.bufs.push(Array2::zeros((n.rows, n.cols)));
            ws.valid.push(false);
            ws.needed.push(false);
        }
        while ws.inputs.len() < self.slots().len() {
            let s = &self.slots()[ws.inputs.len()];
            ws.inputs.push(vec![0.0; s.len()]);
        }
    }

    fn check_layout(&self, params: &ParameterVector) -> Result<(), DiffError> {
        let same = std::sync::Arc::ptr_eq(self.layout(), params.layout())
            || **self.layout() == **params.layout();
        if same {
            Ok(())
        } else {
            Err(DiffError::LayoutMismatch)
        }
    }

    /// Binds parameters and all user inputs (in declaration order),
    /// invalidating every cached value.
    pub fn bind(&self, ws: &mut Workspace, params: &ParameterVector, inputs: &[&[f64]]) -> Result<(), DiffError> {
        self.check_layout(params)?;
        let user = self.user_slots();
        if inputs.len() != user.len() {
            return Err(DiffError::InputCount {
                expected: user.len(),
                got: inputs.len(),
            });
        }
        self.grow(ws);
        for (&slot, data) in user.iter().zip(inputs) {
            let s = &self.slots()[slot];
            if data.len() != s.len() {
                return Err(DiffError::InputShape {
                    slot: s.name.clone(),
                    expected: s.len(),
                    got: data.len(),
                });
            }
        }
        for (&slot, data) in user.iter().zip(inputs) {
            ws.inputs[slot].copy_from_slice(data);
        }
        ws.params.clear();
        ws.params.extend_from_slice(params.values());
        ws.valid.iter_mut().for_each(|v| *v = false);
        ws.bound = true;
        Ok(())
    }

    /// Replaces one input slot, invalidating only the nodes that depend on it.
    pub fn set_input(&self, ws: &mut Workspace, slot: usize, data: &[f64]) -> Result<(), DiffError> {
        self.grow(ws);
        let s = self
            .slots()
            .get(slot)
            .ok_or_else(|| DiffError::UnknownInput(format!("#{slot}")))?;
        if data.len() != s.len() {
            return Err(DiffError::InputShape {
                slot: s.name.clone(),
                expected: s.len(),
                got: data.len(),
            });
        }
        ws.inputs[slot].copy_from_slice(data);
        let bit = 1u128 << slot;
        for (v, n) in ws.valid.iter_mut().zip(&self.nodes) {
            if n.input_deps & bit != 0 {
                *v = false;
            }
        }
        Ok(())
    }

    /// Index of a user input slot by name.
    pub fn slot_index(&self, name: &str) -> Result<usize, DiffError> {
        self.slots()
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| DiffError::UnknownInput(name.to_string()))
    }

    /// Computes `outputs` and everything they need that is not cached.
    pub fn run(&self, ws: &mut Workspace, outputs: &[NodeId]) -> Result<(), DiffError> {
        if !ws.bound {
            return Err(DiffError::Unbound);
        }
        self.grow(ws);
        let Some(max) = outputs.iter().map(|o| o.0).max() else {
            return Ok(());
        };
        ws.needed[..=max].iter_mut().for_each(|v| *v = false);
        for o in outputs {
            ws.needed[o.0] = true;
        }
        for i in (0..=max).rev() {
            if ws.needed[i] && !ws.valid[i] {
                let needed = &mut ws.needed;
                visit_args(&self.nodes[i].op, |a| needed[a.0] = true);
            }
        }
        for i in 0..=max {
            if ws.needed[i] && !ws.valid[i] {
                let (before, rest) = ws.bufs.split_at_mut(i);
                compute(self, i, before, &mut rest[0], &ws.params, &ws.inputs);
                ws.valid[i] = true;
            }
        }
        Ok(())
    }

    /// Flattened segment gradient, zeros where the output does not depend
    /// on a tensor.
    pub fn read_segment(&self, ws: &Workspace, grad: &SegmentGrad) -> Vec<f64> {
        let seg = &self.layout().segments()[grad.segment];
        let mut out = vec![0.0; seg.len];
        let mut offset = 0;
        for (&t, node) in seg.tensors.iter().zip(&grad.nodes) {
            let len = self.layout().tensors()[t].len();
            if let Some(n) = node {
                let v = ws.value(*n);
                for (dst, src) in out[offset..offset + len].iter_mut().zip(v.iter()) {
                    *dst = *src;
                }
            }
            offset += len;
        }
        out
    }

    pub fn run_segment(&self, ws: &mut Workspace, grad: &SegmentGrad) -> Result<Vec<f64>, DiffError> {
        let nodes: Vec<NodeId> = grad.nodes.iter().flatten().copied().collect();
        self.run(ws, &nodes)?;
        Ok(self.read_segment(ws, grad))
    }

    /// Evaluates a second-order product for probe `v` on an already bound
    /// workspace. Forward and first-order values are reused across probes.
    pub fn run_product(&self, ws: &mut Workspace, handle: &ProductHandle, v: &[f64]) -> Result<Vec<f64>, DiffError> {
        let seg = &self.layout().segments()[handle.inner_segment];
        if v.len() != seg.len {
            return Err(DiffError::Dimension {
                what: format!("probe vector for segment `{}`", seg.name),
                expected: seg.len,
                got: v.len(),
            });
        }
        let mut offset = 0;
        for &slot in &handle.v_slots {
            let len = self.slots()[slot].len();
            self.set_input(ws, slot, &v[offset..offset + len])?;
            offset += len;
        }
        self.run_segment(ws, &handle.outer)
    }

    /// Forward value of the graph output, flattened row-major.
    pub fn evaluate(&self, params: &ParameterVector, inputs: &[&[f64]]) -> Result<Vec<f64>, DiffError> {
        let out = self.output().ok_or(DiffError::NoOutput)?;
        let mut ws = self.workspace();
        self.bind(&mut ws, params, inputs)?;
        self.run(&mut ws, &[out])?;
        Ok(ws.value(out).iter().copied().collect())
    }

    /// Reverse-mode gradient of the scalar output with respect to a segment.
    pub fn gradient(&mut self, params: &ParameterVector, inputs: &[&[f64]], segment: &str) -> Result<Vec<f64>, DiffError> {
        let handle = self.gradient_handle(segment)?;
        let mut ws = self.workspace();
        self.bind(&mut ws, params, inputs)?;
        self.run_segment(&mut ws, &handle)
    }

    /// `∇²_segment f · v`, computed as the gradient of `⟨∇f, v⟩`.
    pub fn hvp(&mut self, params: &ParameterVector, inputs: &[&[f64]], segment: &str, v: &[f64]) -> Result<Vec<f64>, DiffError> {
        self.mixed_pvp(params, inputs, segment, segment, v)
    }

    /// `∇_{outer inner} f · v`, computed as the gradient with respect to
    /// `outer` of `⟨∇_inner f, v⟩`.
    pub fn mixed_pvp(
        &mut self,
        params: &ParameterVector,
        inputs: &[&[f64]],
        outer: &str,
        inner: &str,
        v: &[f64],
    ) -> Result<Vec<f64>, DiffError> {
        let handle = self.product_handle(outer, inner)?;
        let mut ws = self.workspace();
        self.bind(&mut ws, params, inputs)?;
        self.run_product(&mut ws, &handle, v)
    }
}

fn compute(graph: &Graph, i: usize, before: &[Array2<f64>], out: &mut Array2<f64>, params: &[f64], inputs: &[Vec<f64>]) {
    let v = |id: &NodeId| &before[id.0];
    match &graph.nodes[i].op {
        Op::Input(s) => out
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(&inputs[*s]),
        Op::Param(t) => {
            let spec = &graph.layout().tensors()[*t];
            out.as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&params[spec.offset..spec.offset + spec.len()]);
        }
        Op::Const(c) => out.assign(c),
        Op::MatMul { a, b, ta, tb } => {
            let (a, b) = (v(a), v(b));
            match (ta, tb) {
                (false, false) => general_mat_mul(1.0, a, b, 0.0, out),
                (true, false) => general_mat_mul(1.0, &a.t(), b, 0.0, out),
                (false, true) => general_mat_mul(1.0, a, &b.t(), 0.0, out),
                (true, true) => general_mat_mul(1.0, &a.t(), &b.t(), 0.0, out),
            }
        }
        Op::Add(a, b) => Zip::from(out).and(v(a)).and(v(b)).for_each(|o, &x, &y| *o = x + y),
        Op::Sub(a, b) => Zip::from(out).and(v(a)).and(v(b)).for_each(|o, &x, &y| *o = x - y),
        Op::Mul(a, b) => Zip::from(out).and(v(a)).and(v(b)).for_each(|o, &x, &y| *o = x * y),
        Op::Scale(a, k) => Zip::from(out).and(v(a)).for_each(|o, &x| *o = k * x),
        Op::AddRow(a, row) => {
            let row = v(row).row(0);
            for (mut o, r) in out.rows_mut().into_iter().zip(v(a).rows()) {
                Zip::from(&mut o).and(&r).and(&row).for_each(|o, &x, &b| *o = x + b);
            }
        }
        Op::SumRows(a) => {
            out.fill(0.0);
            let mut acc = out.row_mut(0);
            for r in v(a).rows() {
                acc += &r;
            }
        }
        Op::BroadcastRows(a) => out.assign(v(a)),
        Op::SumAll(a) => out[[0, 0]] = v(a).sum(),
        Op::Fill(a) => out.fill(v(a)[[0, 0]]),
        Op::Tanh(a) => Zip::from(out).and(v(a)).for_each(|o, &x| *o = x.tanh()),
        Op::TanhBack { g, y } => {
            Zip::from(out).and(v(g)).and(v(y)).for_each(|o, &g, &y| *o = g * (1.0 - y * y))
        }
        Op::Relu(a) => Zip::from(out).and(v(a)).for_each(|o, &x| *o = x.max(0.0)),
        Op::ReluBack { g, x } => {
            Zip::from(out)
                .and(v(g))
                .and(v(x))
                .for_each(|o, &g, &x| *o = if x > 0.0 { g } else { 0.0 })
        }
        Op::Square(a) => Zip::from(out).and(v(a)).for_each(|o, &x| *o = x * x),
        Op::Concat(parts) => {
            let mut start = 0;
            for p in parts {
                let p = v(p);
                let w = p.ncols();
                out.slice_mut(s![.., start..start + w]).assign(p);
                start += w;
            }
        }
        Op::Slice { a, start } => {
            let w = out.ncols();
            out.assign(&v(a).slice(s![.., *start..*start + w]));
        }
        Op::Pad { a, start } => {
            out.fill(0.0);
            let a = v(a);
            let w = a.ncols();
            out.slice_mut(s![.., *start..*start + w]).assign(a);
        }
    }
}
