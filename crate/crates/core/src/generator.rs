//! Teacher-steered decoding from an unconditional language model.
//!
//! At each step the `m` most likely next tokens under the LM are rescored by
//! `P_lm(x) * P_teacher(c | prefix + x)^gamma`, renormalized over those `m`
//! candidates (everything else gets exactly zero), then cut down to the top
//! `k` (or a nucleus) and sampled.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_examples, write_examples, Example, LabelMap, BOS, EOS};
use crate::error::{bail, Error, Result};
use crate::models::{Model, ModelKind, Token};
use crate::tensor::{softmax_slice, Rng};

/// Scores below this are treated as underflow.
pub const UNDERFLOW: f64 = 1e-30;

/// A next-token distribution over the full vocabulary.
pub trait NextTokenModel {
    fn vocab_size(&self) -> usize;
    fn next_token_probs(&self, prefix: &[Token]) -> Result<Vec<f64>>;
}

/// Class probabilities for a batch of sequences.
pub trait SequenceScorer {
    fn n_classes(&self) -> usize;
    fn class_probs_batch(&self, seqs: &[&[Token]]) -> Result<Vec<Vec<f64>>>;
}

impl NextTokenModel for Model {
    fn vocab_size(&self) -> usize {
        self.spec().vocab_size
    }

    fn next_token_probs(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        Ok(softmax_slice(&self.lm_forward(prefix)?, 1.0))
    }
}

impl SequenceScorer for Model {
    fn n_classes(&self) -> usize {
        self.spec().n_classes
    }

    fn class_probs_batch(&self, seqs: &[&[Token]]) -> Result<Vec<Vec<f64>>> {
        Ok(self.classify_batch(seqs)?.iter().map(|l| softmax_slice(l, 1.0)).collect())
    }
}

/// Final restriction applied to the steered distribution before sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    TopK(usize),
    /// Smallest set of most likely tokens whose mass reaches `p`.
    Nucleus(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerConfig {
    /// Control strength; 0 disables steering.
    pub gamma: f64,
    /// Candidates kept from the LM before teacher rescoring.
    pub m: usize,
    pub sampling: Sampling,
    /// Longest generated sequence, BOS and EOS included.
    pub max_len: usize,
    /// Samples per (teacher, class).
    pub n_samples: usize,
    /// Share of each (teacher, class) group held out for confidence fitting.
    pub heldout_fraction: f64,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self { gamma: 2.0, m: 20, sampling: Sampling::TopK(5), max_len: 16, n_samples: 150, heldout_fraction: 0.2 }
    }
}

impl SteerConfig {
    /// Checks needed to compute one steered distribution.
    fn validate_scoring(&self, vocab_size: usize) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            bail!(Config, "gamma must be a finite non-negative number, got {}", self.gamma);
        }
        if self.m == 0 || self.m > vocab_size {
            bail!(Config, "m must lie in 1..={vocab_size}, got {}", self.m);
        }
        Ok(())
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        self.validate_scoring(vocab_size)?;
        match self.sampling {
            Sampling::TopK(k) if k == 0 || k >= self.m => bail!(Config, "top-k needs 0 < k < m, got k={k}, m={}", self.m),
            Sampling::Nucleus(p) if !(p > 0.0 && p <= 1.0) => bail!(Config, "nucleus p must lie in (0, 1], got {p}"),
            _ => {}
        }
        if self.max_len < 2 {
            bail!(Config, "max_len must leave room for at least one generated token");
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            bail!(Config, "heldout_fraction must lie in (0, 1), got {}", self.heldout_fraction);
        }
        if self.n_samples == 0 {
            bail!(Config, "n_samples must be positive");
        }
        Ok(())
    }

    /// Held-out samples per (teacher, class) group.
    pub fn n_heldout(&self) -> usize {
        (self.n_samples as f64 * self.heldout_fraction).round() as usize
    }
}

/// Indices of the `m` largest values, largest first; ties go to the lower
/// index.
fn top_indices(p: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// One steering step: the distribution over the vocabulary together with the
/// teacher probability of `class` for each candidate (empty when unsteered).
#[derive(Debug, Clone)]
pub struct SteeredStep {
    pub probs: Vec<f64>,
    pub candidates: Vec<usize>,
    pub teacher_probs: Vec<f64>,
    pub underflow: bool,
}

/// Steered next-token distribution for target `class` (a local index of the
/// teacher).
pub fn steered_next_distribution(
    lm: &dyn NextTokenModel,
    teacher: &dyn SequenceScorer,
    prefix: &[Token],
    class: usize,
    cfg: &SteerConfig,
) -> Result<Vec<f64>> {
    steered_step(lm, teacher, prefix, class, cfg).map(|s| s.probs)
}

pub fn steered_step(
    lm: &dyn NextTokenModel,
    teacher: &dyn SequenceScorer,
    prefix: &[Token],
    class: usize,
    cfg: &SteerConfig,
) -> Result<SteeredStep> {
    let v = lm.vocab_size();
    cfg.validate_scoring(v)?;
    if class >= teacher.n_classes() {
        bail!(InvalidArgument, "class {class} is outside the teacher's {} classes", teacher.n_classes());
    }
    if prefix.len() >= cfg.max_len {
        bail!(InvalidArgument, "prefix of length {} already reaches max_len {}", prefix.len(), cfg.max_len);
    }
    let p_lm = lm.next_token_probs(prefix)?;
    if p_lm.len() != v {
        bail!(Shape, "LM returned {} probabilities for a vocabulary of {v}", p_lm.len());
    }
    let candidates = top_indices(&p_lm, cfg.m);
    let teacher_probs = if cfg.gamma == 0.0 {
        Vec::new()
    } else {
        let ext: Vec<Vec<Token>> = candidates
            .iter()
            .map(|&x| {
                let mut s = prefix.to_vec();
                s.push(x as Token);
                s
            })
            .collect();
        let refs: Vec<&[Token]> = ext.iter().map(Vec::as_slice).collect();
        teacher.class_probs_batch(&refs)?.into_iter().map(|row| row[class]).collect()
    };
    let mut scores: Vec<f64> = if teacher_probs.is_empty() {
        candidates.iter().map(|&x| p_lm[x]).collect()
    } else {
        candidates.iter().zip(&teacher_probs).map(|(&x, pt)| p_lm[x] * pt.powf(cfg.gamma)).collect()
    };
    let underflow = scores.iter().all(|&s| s < UNDERFLOW);
    if underflow {
        log::warn!("steering scores underflowed for class {class}; falling back to the LM");
        scores = candidates.iter().map(|&x| p_lm[x]).collect();
    }
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        bail!(NonFinite, "top-{} LM candidates carry no probability mass", cfg.m);
    }
    let mut probs = vec![0.0; v];
    for (&x, s) in candidates.iter().zip(&scores) {
        probs[x] = s / total;
    }
    Ok(SteeredStep { probs, candidates, teacher_probs, underflow })
}

/// Keep the top-k tokens (or the nucleus) of `probs` and renormalize.
pub fn restrict(probs: &[f64], sampling: Sampling) -> Vec<f64> {
    let order = top_indices(probs, probs.len());
    let keep = match sampling {
        Sampling::TopK(k) => k.min(order.len()),
        Sampling::Nucleus(p) => {
            let mut mass = 0.0;
            let mut n = 0;
            for &i in &order {
                n += 1;
                mass += probs[i];
                if mass >= p {
                    break;
                }
            }
            n
        }
    };
    let mut out = vec![0.0; probs.len()];
    let total: f64 = order[..keep].iter().map(|&i| probs[i]).sum();
    for &i in &order[..keep] {
        out[i] = probs[i] / total;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSample {
    pub tokens: Vec<Token>,
    /// Target class in the union label space.
    pub label: usize,
    /// Target class in the source teacher's label space.
    pub local_label: usize,
    pub teacher: usize,
    /// Teacher probability of the target after each steered step.
    #[serde(default)]
    pub trace: Vec<f64>,
}

/// Decode one sequence for local class `class` of `teacher`, starting from BOS.
pub fn sample_sequence(
    lm: &dyn NextTokenModel,
    teacher: &dyn SequenceScorer,
    class: usize,
    cfg: &SteerConfig,
    rng: &mut Rng,
) -> Result<(Vec<Token>, Vec<f64>)> {
    cfg.validate(lm.vocab_size())?;
    let mut tokens = vec![BOS];
    let mut trace = Vec::new();
    while tokens.len() < cfg.max_len {
        let step = steered_step(lm, teacher, &tokens, class, cfg)?;
        let dist = restrict(&step.probs, cfg.sampling);
        let next = rng.categorical(&dist);
        if let Some(pos) = step.candidates.iter().position(|&x| x == next) {
            if let Some(pt) = step.teacher_probs.get(pos) {
                trace.push(*pt);
            }
        }
        tokens.push(next as Token);
        if next as Token == EOS {
            break;
        }
    }
    Ok((tokens, trace))
}

/// Student transfer set plus each teacher's held-out fitting set.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSet {
    pub train: Vec<PseudoSample>,
    pub heldout: Vec<Vec<PseudoSample>>,
}

impl TransferSet {
    pub fn train_examples(&self) -> Vec<Example> {
        self.train.iter().map(|s| Example { tokens: s.tokens.clone(), label: s.label }).collect()
    }
}

/// Generate `n_samples` per (teacher, local class); the first
/// `round(n_samples * heldout_fraction)` of every group are held out.
pub fn build_transfer_set(
    lm: &dyn NextTokenModel,
    teachers: &[&dyn SequenceScorer],
    maps: &[LabelMap],
    cfg: &SteerConfig,
    seed: u64,
) -> Result<TransferSet> {
    if teachers.is_empty() {
        bail!(InvalidArgument, "no teachers to generate for");
    }
    if teachers.len() != maps.len() {
        bail!(InvalidArgument, "{} teachers but {} label maps", teachers.len(), maps.len());
    }
    cfg.validate(lm.vocab_size())?;
    let n_held = cfg.n_heldout();
    let mut out = TransferSet { train: Vec::new(), heldout: vec![Vec::new(); teachers.len()] };
    for (i, (teacher, map)) in teachers.iter().zip(maps).enumerate() {
        if teacher.n_classes() != map.n_local() {
            bail!(InvalidArgument, "teacher {i} has {} classes but its label map {}", teacher.n_classes(), map.n_local());
        }
        for c in 0..map.n_local() {
            for idx in 0..cfg.n_samples {
                let mut rng = Rng::derive(seed, &[i as u64, c as u64, idx as u64]);
                let (tokens, trace) = sample_sequence(lm, *teacher, c, cfg, &mut rng)?;
                let s = PseudoSample { tokens, label: map.to_union(c), local_label: c, teacher: i, trace };
                if idx < n_held {
                    out.heldout[i].push(s);
                } else {
                    out.train.push(s);
                }
            }
        }
    }
    Ok(out)
}

/// Fraction of samples the teacher assigns to their target local class.
pub fn steering_success(teacher: &dyn SequenceScorer, samples: &[PseudoSample]) -> Result<f64> {
    if samples.is_empty() {
        bail!(InvalidArgument, "steering success of an empty sample set");
    }
    let mut hits = 0;
    for chunk in samples.chunks(64) {
        let refs: Vec<&[Token]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
        for (p, s) in teacher.class_probs_batch(&refs)?.iter().zip(chunk) {
            hits += usize::from(crate::tensor::argmax(p) == s.local_label);
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleMeta {
    teacher: usize,
    local_label: usize,
    heldout: bool,
    trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PseudoManifest {
    format_version: u32,
    steer: SteerConfig,
    seed: u64,
    samples: Vec<SampleMeta>,
}

const PSEUDO_FORMAT: u32 = 1;

/// Write `dir/pseudo.tsv` (corpus line format, union labels) and
/// `dir/pseudo.json` (config and per-line metadata).
pub fn save_transfer_set(dir: &Path, set: &TransferSet, cfg: &SteerConfig, seed: u64) -> Result<()> {
    let all: Vec<(&PseudoSample, bool)> =
        set.heldout.iter().flatten().map(|s| (s, true)).chain(set.train.iter().map(|s| (s, false))).collect();
    let examples: Vec<Example> = all.iter().map(|(s, _)| Example { tokens: s.tokens.clone(), label: s.label }).collect();
    write_examples(&dir.join("pseudo.tsv"), &examples)?;
    let manifest = PseudoManifest {
        format_version: PSEUDO_FORMAT,
        steer: cfg.clone(),
        seed,
        samples: all
            .iter()
            .map(|(s, h)| SampleMeta { teacher: s.teacher, local_label: s.local_label, heldout: *h, trace: s.trace.clone() })
            .collect(),
    };
    fs::write(dir.join("pseudo.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_transfer_set(dir: &Path, n_teachers: usize) -> Result<TransferSet> {
    let mpath = dir.join("pseudo.json");
    if !mpath.exists() {
        return Err(Error::MissingArtifact(mpath));
    }
    let corrupt = |reason: String| Error::CorruptArtifact { path: mpath.clone(), reason };
    let manifest: PseudoManifest = serde_json::from_slice(&fs::read(&mpath)?).map_err(|e| corrupt(e.to_string()))?;
    if manifest.format_version != PSEUDO_FORMAT {
        return Err(corrupt(format!("unsupported format version {}", manifest.format_version)));
    }
    let examples = read_examples(&dir.join("pseudo.tsv"))?;
    if examples.len() != manifest.samples.len() {
        return Err(corrupt(format!("{} metadata rows for {} samples", manifest.samples.len(), examples.len())));
    }
    let mut set = TransferSet { train: Vec::new(), heldout: vec![Vec::new(); n_teachers] };
    for (e, m) in examples.into_iter().zip(manifest.samples) {
        if m.teacher >= n_teachers {
            return Err(corrupt(format!("sample from teacher {} but only {n_teachers} teachers", m.teacher)));
        }
        let s = PseudoSample { tokens: e.tokens, label: e.label, local_label: m.local_label, teacher: m.teacher, trace: m.trace };
        if m.heldout {
            set.heldout[m.teacher].push(s);
        } else {
            set.train.push(s);
        }
    }
    Ok(set)
}

/// Check that a model can act as the LM of a steering run.
pub fn check_lm(lm: &Model) -> Result<()> {
    if lm.spec().kind != ModelKind::CausalLm {
        bail!(InvalidArgument, "the generator needs a causal language model");
    }
    Ok(())
}
