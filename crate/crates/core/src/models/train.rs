//! Minibatch training loops shared by teachers, the language model and the
//! student.

use serde::{Deserialize, Serialize};

use super::{Model, ModelKind, Token};
use crate::error::{bail, Result};
use crate::tensor::{argmax, clip_grad_norm, AdamW, LinearSchedule, ParamStore, Rng, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, lr: 3e-4, weight_decay: 0.01, warmup_epochs: 2, grad_clip: 1.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            bail!(Config, "epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip > 0.0) {
            bail!(Config, "lr and grad_clip must be positive, weight_decay non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Generic AdamW loop over `n_items` examples.
///
/// `batch_loss` builds the loss of one minibatch (given item indices) on a
/// fresh tape. Gradients are accumulated into every store in `stores`,
/// clipped, applied, then reset.
pub fn fit<F>(n_items: usize, cfg: &TrainConfig, rng: &mut Rng, stores: &mut [&mut ParamStore], mut batch_loss: F) -> Result<TrainLog>
where
    F: FnMut(&mut Tape, &[&ParamStore], &[usize]) -> Result<Var>,
{
    cfg.validate()?;
    if n_items == 0 {
        bail!(Training, "no training examples");
    }
    let batches_per_epoch = n_items.div_ceil(cfg.batch_size);
    let schedule = LinearSchedule {
        peak: cfg.lr,
        warmup_steps: cfg.warmup_epochs * batches_per_epoch,
        total_steps: cfg.epochs * batches_per_epoch,
    };
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut log = TrainLog::default();
    let mut step = 0;
    for s in stores.iter_mut() {
        s.zero_grad();
    }
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (tape, grads, loss) = {
                let refs: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
                let mut tape = Tape::new();
                let l = batch_loss(&mut tape, &refs, batch)?;
                let grads = tape.backward(l)?;
                let loss = tape.value(l).item();
                (tape, grads, loss)
            };
            for s in stores.iter_mut() {
                s.accumulate(&tape, &grads);
            }
            drop(tape);
            clip_grad_norm(stores, cfg.grad_clip);
            opt.step(stores, schedule.lr(step));
            for s in stores.iter_mut() {
                s.zero_grad();
            }
            total += loss;
            step += 1;
        }
        log.epoch_losses.push(total / batches_per_epoch as f64);
    }
    Ok(log)
}

/// Train a classifier with cross-entropy on `(tokens, label)` pairs.
pub fn train_classifier(model: &mut Model, data: &[(Vec<Token>, usize)], cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainLog> {
    if model.spec().kind != ModelKind::Classifier {
        bail!(InvalidArgument, "train_classifier needs a classifier");
    }
    let n_classes = model.spec().n_classes;
    if let Some((_, y)) = data.iter().find(|(_, y)| *y >= n_classes) {
        bail!(InvalidArgument, "label {y} out of range for {n_classes} classes");
    }
    let arch = model.arch.clone();
    fit(data.len(), cfg, rng, &mut [&mut model.params], |tape, stores, idx| {
        let seqs: Vec<&[Token]> = idx.iter().map(|&i| data[i].0.as_slice()).collect();
        let targets: Vec<Option<usize>> = idx.iter().map(|&i| Some(data[i].1)).collect();
        let fwd = arch.forward(tape, stores[0], &seqs)?;
        tape.cross_entropy(fwd.logits, &targets)
    })
}

/// Train a causal language model on next-token prediction.
pub fn train_lm(model: &mut Model, corpus: &[Vec<Token>], cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainLog> {
    if model.spec().kind != ModelKind::CausalLm {
        bail!(InvalidArgument, "train_lm needs a causal language model");
    }
    if corpus.iter().any(|s| s.len() < 2) {
        bail!(InvalidArgument, "language model sequences need at least two tokens");
    }
    let arch = model.arch.clone();
    fit(corpus.len(), cfg, rng, &mut [&mut model.params], |tape, stores, idx| {
        let seqs: Vec<&[Token]> = idx.iter().map(|&i| corpus[i].as_slice()).collect();
        let targets: Vec<Option<usize>> = seqs
            .iter()
            .flat_map(|s| (0..s.len()).map(move |t| s.get(t + 1).map(|&x| x as usize)))
            .collect();
        let fwd = arch.forward(tape, stores[0], &seqs)?;
        tape.cross_entropy(fwd.logits, &targets)
    })
}

/// Fraction of examples whose argmax logit equals the label.
pub fn accuracy(model: &Model, data: &[(Vec<Token>, usize)]) -> Result<f64> {
    if data.is_empty() {
        bail!(InvalidArgument, "accuracy of an empty set");
    }
    let mut correct = 0;
    for chunk in data.chunks(64) {
        let seqs: Vec<&[Token]> = chunk.iter().map(|(s, _)| s.as_slice()).collect();
        for (logits, (_, y)) in model.classify_batch(&seqs)?.iter().zip(chunk) {
            correct += usize::from(argmax(logits) == *y);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
