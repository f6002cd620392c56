use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Average a `[seq_len, d]` layer over its tokens.
pub fn pool_layer(states: &Tensor) -> Result<Vec<f64>> {
    if states.shape().len() != 2 || states.rows() == 0 {
        bail!(InvalidArgument, "pool_layer needs a non-empty [seq_len, d] tensor, got {:?}", states.shape());
    }
    Ok(mean_of(&states.to_rows()))
}

/// Elementwise mean of the layer vectors that make up one block.
pub fn pool_block(layer_reps: &[Vec<f64>]) -> Result<Vec<f64>> {
    if layer_reps.is_empty() {
        bail!(InvalidArgument, "pool_block over an empty block");
    }
    let d = layer_reps[0].len();
    if layer_reps.iter().any(|r| r.len() != d) {
        bail!(Shape, "pool_block: layer vectors differ in width");
    }
    Ok(mean_of(layer_reps))
}

fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.into_iter().map(|v| v / n).collect()
}
