use std::sync::Arc;

use crate::error::Result;
use crate::nn::graph::CommGraphCsr;
use crate::nn::tape::{Activation, Tape, ValueId};
use crate::scalar::Real;

/// Neighborhood normalization variant for graph convolutions.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum GcnNorm {
    /// `out_u = sigma(W sum_{v in N(u) u {u}} h_v / sqrt((|N_u|+1)(|N_v|+1)) + b)`
    #[default]
    SelfLoop,
    /// Same but without the self term and with `|N|` normalizers.
    NoSelfLoop,
}

/// One graph-convolution layer over the communication graph.
pub fn gcn_layer<T: Real>(
    tape: &mut Tape<T>,
    h: ValueId,
    graph: &Arc<CommGraphCsr>,
    weight: ValueId,
    bias: ValueId,
    activation: Activation,
    norm: GcnNorm,
) -> Result<ValueId> {
    let agg = tape.csr_agg(h, graph, norm == GcnNorm::SelfLoop)?;
    let lin = tape.matmul(agg, weight)?;
    let out = tape.add_bias(lin, bias)?;
    Ok(match activation {
        Activation::Relu => tape.relu(out),
        Activation::Identity => out,
    })
}
