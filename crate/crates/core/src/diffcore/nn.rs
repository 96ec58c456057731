//! Multilayer perceptron helpers on top of [`Graph`].

use serde::{Deserialize, Serialize};

use super::{DiffError, Graph, NodeId, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

/// Tensor list for an MLP with the given layer widths (`sizes[0]` is the
/// input width): `w{i}` is `sizes[i]×sizes[i+1]`, `b{i}` is `1×sizes[i+1]`.
pub fn mlp_tensors(sizes: &[usize]) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for (i, pair) in sizes.windows(2).enumerate() {
        out.push((format!("w{i}"), pair[0], pair[1]));
        out.push((format!("b{i}"), 1, pair[1]));
    }
    out
}

/// Appends `x ↦ out_act(… hidden(x·W0 + b0) …)` to the graph.
pub fn mlp(
    graph: &mut Graph,
    x: NodeId,
    segment: &str,
    layers: usize,
    hidden: Activation,
    out: Activation,
) -> Result<NodeId, DiffError> {
    let mut h = x;
    for i in 0..layers {
        let w = graph.param(segment, &format!("w{i}"))?;
        let b = graph.param(segment, &format!("b{i}"))?;
        h = graph.affine(h, w, b);
        let act = if i + 1 == layers { out } else { hidden };
        h = match act {
            Activation::Tanh => graph.tanh(h),
            Activation::Relu => graph.relu(h),
            Activation::Identity => h,
        };
    }
    Ok(h)
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(0.0),
            Self::Identity => x,
        }
    }
}

/// Forward pass of one input row through an MLP stored as a flat segment
/// (the tensor order of [`mlp_tensors`]), without building a graph.
pub fn mlp_forward(values: &[f64], sizes: &[usize], hidden: Activation, out: Activation, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), sizes[0], "input width");
    let mut h = x.to_vec();
    let mut offset = 0;
    let layers = sizes.len() - 1;
    for (i, pair) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let w = &values[offset..offset + n_in * n_out];
        let b = &values[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let mut next = b.to_vec();
        for (k, &hk) in h.iter().enumerate() {
            let row = &w[k * n_out..(k + 1) * n_out];
            for (o, wk) in next.iter_mut().zip(row) {
                *o += hk * wk;
            }
        }
        let act = if i + 1 == layers { out } else { hidden };
        next.iter_mut().for_each(|v| *v = act.apply(*v));
        h = next;
    }
    assert_eq!(offset, values.len(), "segment length");
    h
}

/// Fills an MLP segment with `U(−1/√fan_in, 1/√fan_in)` weights and biases;
/// the last layer uses `±last_scale` instead.
pub fn init_mlp<R: rand::Rng>(
    params: &mut ParameterVector,
    segment: &str,
    sizes: &[usize],
    last_scale: f64,
    rng: &mut R,
) -> Result<(), DiffError> {
    let layers = sizes.len() - 1;
    for i in 0..layers {
        let bound = if i + 1 == layers {
            last_scale
        } else {
            1.0 / (sizes[i] as f64).sqrt()
        };
        for name in [format!("w{i}"), format!("b{i}")] {
            let t = params.layout().tensor_index(segment, &name)?;
            for v in params.tensor_mut(t) {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }
    Ok(())
}
