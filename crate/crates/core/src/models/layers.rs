use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Rng, Segment, Tape, Tensor, Var};

/// Affine map `x · W + b` with `W: [d_in, d_out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, std: f64, rng: &mut Rng) -> Self {
        let w = Tensor::new(vec![d_in, d_out], rng.normal_vec(d_in * d_out, std)).expect("sized");
        let w = store.add(format!("{name}.weight"), w);
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self { w, b, d_in, d_out }
    }

    /// Fan-in scaled initialization.
    pub fn xavier(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self::new(store, name, d_in, d_out, 1.0 / (d_in as f64).sqrt(), rng)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[d], 1.0));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[d]));
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain)?;
        let b = tape.param(store, self.bias)?;
        tape.layer_norm(x, g, b, Self::EPS)
    }
}

/// Pre-norm transformer layer: `x + Attn(LN(x))`, then `x + FFN(LN(x))`
/// with a GELU feed-forward.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
}

impl TransformerLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            wq: Linear::xavier(store, &format!("{name}.attn.q"), d, d, rng),
            wk: Linear::xavier(store, &format!("{name}.attn.k"), d, d, rng),
            wv: Linear::xavier(store, &format!("{name}.attn.v"), d, d, rng),
            wo: Linear::xavier(store, &format!("{name}.attn.out"), d, d, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ff1: Linear::xavier(store, &format!("{name}.ff.in"), d, d_ff, rng),
            ff2: Linear::xavier(store, &format!("{name}.ff.out"), d_ff, d, rng),
            heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, segs: &[Segment], causal: bool) -> Result<Var> {
        let h = self.ln1.forward(tape, store, x)?;
        let q = self.wq.forward(tape, store, h)?;
        let k = self.wk.forward(tape, store, h)?;
        let v = self.wv.forward(tape, store, h)?;
        let a = tape.attention(q, k, v, segs, self.heads, causal)?;
        let a = self.wo.forward(tape, store, a)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, store, x)?;
        let h = self.ff1.forward(tape, store, h)?;
        let h = tape.gelu(h)?;
        let h = self.ff2.forward(tape, store, h)?;
        tape.add(x, h)
    }
}
