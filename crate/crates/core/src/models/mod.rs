//! Small transformer encoders (teachers and student) and a causal language
//! model used as the base generator.
//!
//! Both share one stack: learned token and position embeddings, pre-norm
//! layers, a final layer norm, and a linear head. Classifiers mean-pool the
//! final layer over tokens before the head; the language model applies the
//! head at every position under a causal mask.

pub mod checkpoint;
mod layers;
mod pooling;
pub mod train;

pub use layers::{LayerNorm, Linear, TransformerLayer};
pub use pooling::{pool_block, pool_layer};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::tensor::{ParamId, ParamStore, Rng, Segment, Tape, Tensor, Var};

/// Token id in the shared vocabulary.
pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Classifier,
    CausalLm,
}

fn default_ff_mult() -> usize {
    2
}

/// Architecture of a classifier or language model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub vocab_size: usize,
    pub max_len: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Output classes; zero for a language model.
    #[serde(default)]
    pub n_classes: usize,
    pub kind: ModelKind,
    /// Feed-forward width as a multiple of `d_model`.
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
}

impl ModelSpec {
    pub fn classifier(vocab_size: usize, max_len: usize, n_layers: usize, d_model: usize, n_heads: usize, n_classes: usize) -> Self {
        Self { vocab_size, max_len, n_layers, d_model, n_heads, n_classes, kind: ModelKind::Classifier, ff_mult: default_ff_mult() }
    }

    pub fn causal_lm(vocab_size: usize, max_len: usize, n_layers: usize, d_model: usize, n_heads: usize) -> Self {
        Self { vocab_size, max_len, n_layers, d_model, n_heads, n_classes: 0, kind: ModelKind::CausalLm, ff_mult: default_ff_mult() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            bail!(Config, "n_layers must be at least 1");
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            bail!(Config, "d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads);
        }
        if self.vocab_size < 2 || self.max_len == 0 || self.ff_mult == 0 {
            bail!(Config, "vocab_size, max_len and ff_mult must be positive");
        }
        match self.kind {
            ModelKind::Classifier if self.n_classes < 2 => {
                bail!(Config, "a classifier needs at least 2 classes, got {}", self.n_classes)
            }
            ModelKind::CausalLm if self.n_classes != 0 => bail!(Config, "a language model has no classes"),
            _ => Ok(()),
        }
    }

    fn out_dim(&self) -> usize {
        match self.kind {
            ModelKind::Classifier => self.n_classes,
            ModelKind::CausalLm => self.vocab_size,
        }
    }
}

/// Parameter layout of a transformer; values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Transformer {
    pub spec: ModelSpec,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<TransformerLayer>,
    ln_f: LayerNorm,
    head: Linear,
}

/// Tape handles produced by one batched forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Residual stream after each layer, `[total_tokens, d_model]`.
    pub layer_states: Vec<Var>,
    /// `[sequences, n_classes]` for classifiers, `[total_tokens, vocab]` for
    /// the language model.
    pub logits: Var,
    pub segments: Vec<Segment>,
}

impl Transformer {
    pub fn new(spec: ModelSpec, store: &mut ParamStore, prefix: &str, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.d_model;
        let tok = Tensor::new(vec![spec.vocab_size, d], rng.normal_vec(spec.vocab_size * d, 0.1))?;
        let pos = Tensor::new(vec![spec.max_len, d], rng.normal_vec(spec.max_len * d, 0.1))?;
        let tok_emb = store.add(format!("{prefix}.tok_emb"), tok);
        let pos_emb = store.add(format!("{prefix}.pos_emb"), pos);
        let layers = (0..spec.n_layers)
            .map(|l| TransformerLayer::new(store, &format!("{prefix}.layer{l}"), d, d * spec.ff_mult, spec.n_heads, rng))
            .collect();
        let ln_f = LayerNorm::new(store, &format!("{prefix}.ln_f"), d);
        let head = Linear::new(store, &format!("{prefix}.head"), d, spec.out_dim(), 0.02, rng);
        Ok(Self { spec, tok_emb, pos_emb, layers, ln_f, head })
    }

    pub fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if tokens.is_empty() {
            bail!(InvalidArgument, "empty token sequence");
        }
        if tokens.len() > self.spec.max_len {
            bail!(InvalidArgument, "sequence length {} exceeds max_len {}", tokens.len(), self.spec.max_len);
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.spec.vocab_size) {
            bail!(InvalidArgument, "token id {t} out of range for vocabulary of {}", self.spec.vocab_size);
        }
        Ok(())
    }

    /// Run a batch of sequences packed back to back.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &[&[Token]]) -> Result<Forward> {
        if batch.is_empty() {
            bail!(InvalidArgument, "empty batch");
        }
        for seq in batch {
            self.check_tokens(seq)?;
        }
        let segments = Segment::tile(batch.iter().map(|s| s.len()));
        let ids: Vec<usize> = batch.iter().flat_map(|s| s.iter().map(|&t| t as usize)).collect();
        let positions: Vec<usize> = batch.iter().flat_map(|s| 0..s.len()).collect();
        let tok = tape.param(store, self.tok_emb)?;
        let pos = tape.param(store, self.pos_emb)?;
        let te = tape.embedding_lookup(tok, &ids)?;
        let pe = tape.embedding_lookup(pos, &positions)?;
        let mut x = tape.add(te, pe)?;
        let causal = self.spec.kind == ModelKind::CausalLm;
        let mut layer_states = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = layer.forward(tape, store, x, &segments, causal)?;
            layer_states.push(x);
        }
        let h = self.ln_f.forward(tape, store, x)?;
        let logits = match self.spec.kind {
            ModelKind::Classifier => {
                let pooled = tape.segment_mean(h, &segments)?;
                self.head.forward(tape, store, pooled)?
            }
            ModelKind::CausalLm => self.head.forward(tape, store, h)?,
        };
        Ok(Forward { layer_states, logits, segments })
    }

    /// Mean over tokens of every layer state: one `[sequences, d_model]`
    /// handle per layer.
    pub fn pooled_layers(&self, tape: &mut Tape, fwd: &Forward) -> Result<Vec<Var>> {
        fwd.layer_states.iter().map(|&s| tape.segment_mean(s, &fwd.segments)).collect()
    }
}

/// Per-layer token states of one sequence: `n_layers` tensors of
/// `[seq_len, d_model]`.
#[derive(Debug, Clone)]
pub struct LayerStates {
    pub layers: Vec<Tensor>,
}

/// Pooled layer vectors and logits for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceFeatures {
    /// `n_layers` vectors of `d_model`.
    pub layer_reps: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Architecture plus trained values.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Transformer,
    pub params: ParamStore,
}

impl Model {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = Rng::new(seed);
        let arch = Transformer::new(spec, &mut params, "model", &mut rng)?;
        Ok(Self { arch, params })
    }

    /// A model whose embeddings and layers are copied from `body` and whose
    /// output head is freshly initialized. Both must share everything but
    /// the kind and output size.
    pub fn init_from_body(spec: ModelSpec, body: &Model, seed: u64) -> Result<Self> {
        let b = body.spec();
        let same_trunk = (b.vocab_size, b.max_len, b.n_layers, b.d_model, b.n_heads, b.ff_mult)
            == (spec.vocab_size, spec.max_len, spec.n_layers, spec.d_model, spec.n_heads, spec.ff_mult);
        if !same_trunk {
            bail!(Shape, "body architecture {b:?} does not match {spec:?}");
        }
        let mut model = Self::init(spec, seed)?;
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id);
            if name.starts_with("model.head.") {
                continue;
            }
            let src = body.params.find(name).ok_or_else(|| Error::Shape(format!("body has no parameter {name}")))?;
            let value = body.params.value(src).clone();
            if value.shape() != model.params.value(id).shape() {
                bail!(Shape, "parameter {name} has a different shape in the body");
            }
            *model.params.value_mut(id) = value;
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.arch.spec
    }

    pub fn freeze(&mut self) {
        self.params.freeze();
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.arch.spec.kind != kind {
            bail!(InvalidArgument, "operation needs a {kind:?} model, this is a {:?}", self.arch.spec.kind);
        }
        Ok(())
    }

    /// Layer states and class logits for one sequence.
    pub fn classifier_forward(&self, tokens: &[Token]) -> Result<(LayerStates, Vec<f64>)> {
        self.expect_kind(ModelKind::Classifier)?;
        let mut tape = Tape::no_grad();
        let fwd = self.arch.forward(&mut tape, &self.params, &[tokens])?;
        let layers = fwd.layer_states.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((LayerStates { layers }, tape.value(fwd.logits).data().to_vec()))
    }

    /// Class logits for a batch of sequences.
    pub fn classify_batch(&self, seqs: &[&[Token]]) -> Result<Vec<Vec<f64>>> {
        self.expect_kind(ModelKind::Classifier)?;
        let mut tape = Tape::no_grad();
        let fwd = self.arch.forward(&mut tape, &self.params, seqs)?;
        Ok(tape.value(fwd.logits).to_rows())
    }

    /// Pooled per-layer representations and logits for a batch.
    pub fn features_batch(&self, seqs: &[&[Token]]) -> Result<Vec<SequenceFeatures>> {
        self.expect_kind(ModelKind::Classifier)?;
        let mut tape = Tape::no_grad();
        let fwd = self.arch.forward(&mut tape, &self.params, seqs)?;
        let pooled = self.arch.pooled_layers(&mut tape, &fwd)?;
        let logits = tape.value(fwd.logits).to_rows();
        let per_layer: Vec<Vec<Vec<f64>>> = pooled.iter().map(|&v| tape.value(v).to_rows()).collect();
        Ok(logits
            .into_iter()
            .enumerate()
            .map(|(s, logits)| SequenceFeatures { layer_reps: per_layer.iter().map(|l| l[s].clone()).collect(), logits })
            .collect())
    }

    /// Next-token logits after the last position of `tokens`.
    pub fn lm_forward(&self, tokens: &[Token]) -> Result<Vec<f64>> {
        self.expect_kind(ModelKind::CausalLm)?;
        let mut tape = Tape::no_grad();
        let fwd = self.arch.forward(&mut tape, &self.params, &[tokens])?;
        Ok(tape.value(fwd.logits).row(tokens.len() - 1).to_vec())
    }

    /// Next-token logits at every position.
    pub fn lm_all_positions(&self, tokens: &[Token]) -> Result<Vec<Vec<f64>>> {
        self.expect_kind(ModelKind::CausalLm)?;
        let mut tape = Tape::no_grad();
        let fwd = self.arch.forward(&mut tape, &self.params, &[tokens])?;
        Ok(tape.value(fwd.logits).to_rows())
    }
}
