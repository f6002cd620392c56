use serde::{Deserialize, Serialize};

use super::{amal_loss, check_lambda, confidence_weights, mixture_target, out_loss, AmalgamArch, AmalgamNet, BlockPartition};
use crate::corpus::LabelMap;
use crate::error::{bail, Result};
use crate::models::train::{fit, TrainConfig, TrainLog};
use crate::models::{Model, Token, Transformer};
use crate::ood::{ConfidenceKind, TeacherOod};
use crate::tensor::{softmax_slice, ParamStore, Rng, Tape, Tensor, Var};

/// How teachers are weighted in the output target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputWeighting {
    /// Softmax over teachers of final-block standardized confidences.
    Confidence,
    /// `1 / K` each.
    Uniform,
}

/// Frozen-teacher quantities for every transfer example.
#[derive(Debug, Clone)]
pub struct TeacherInputs {
    /// One `[N, d_i]` tensor per block.
    pub blocks: Vec<Tensor>,
    /// `confidences[b][s]`, standardized; empty without confidence stats.
    pub confidences: Vec<Vec<f64>>,
    /// Raw logits over the teacher's own classes.
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TransferFeatures {
    pub tokens: Vec<Vec<Token>>,
    pub teachers: Vec<TeacherInputs>,
    /// `[N, n_union]` mixture of softened teacher distributions.
    pub target: Tensor,
    pub n_blocks: usize,
}

impl TransferFeatures {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Copy the rows `idx` of a 2-D tensor.
pub fn select_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let d = t.cols();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![idx.len(), d], data).expect("sized")
}

/// Pooled block vectors `[s][b][d]` and logits of a frozen teacher.
pub fn teacher_block_features(teacher: &Model, partition: &BlockPartition, seqs: &[Vec<Token>]) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
    let mut blocks = Vec::with_capacity(seqs.len());
    let mut logits = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(64) {
        let refs: Vec<&[Token]> = chunk.iter().map(Vec::as_slice).collect();
        for f in teacher.features_batch(&refs)? {
            blocks.push(partition.pool(&f.layer_reps)?);
            logits.push(f.logits);
        }
    }
    Ok((blocks, logits))
}

/// Compute all frozen-teacher inputs and the output target for `seqs`.
///
/// `confidence` gives each teacher's fitted stats and the score to use; it
/// may be omitted only with [`OutputWeighting::Uniform`].
pub fn build_features(
    seqs: &[Vec<Token>],
    teachers: &[&Model],
    partitions: &[BlockPartition],
    maps: &[LabelMap],
    confidence: Option<(&[TeacherOod], ConfidenceKind)>,
    weighting: OutputWeighting,
    tau: f64,
) -> Result<TransferFeatures> {
    let k = teachers.len();
    if k == 0 || partitions.len() != k || maps.len() != k {
        bail!(InvalidArgument, "need one partition and label map per teacher, got {k}/{}/{}", partitions.len(), maps.len());
    }
    if seqs.is_empty() {
        bail!(InvalidArgument, "no transfer examples");
    }
    let n_blocks = partitions[0].n_blocks();
    if partitions.iter().any(|p| p.n_blocks() != n_blocks) {
        bail!(InvalidArgument, "teachers are partitioned into different block counts");
    }
    if weighting == OutputWeighting::Confidence && confidence.is_none() {
        bail!(InvalidArgument, "confidence weighting needs fitted confidence stats");
    }
    let n_union = maps[0].n_union;
    let mut inputs = Vec::with_capacity(k);
    let mut probs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k);
    for (i, teacher) in teachers.iter().enumerate() {
        let (reps, logits) = teacher_block_features(teacher, &partitions[i], seqs)?;
        let blocks = (0..n_blocks)
            .map(|b| Tensor::from_rows(&reps.iter().map(|r| r[b].clone()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let mut confidences = Vec::new();
        if let Some((oods, kind)) = confidence {
            let ood = &oods[i];
            let mut per_block = vec![Vec::with_capacity(seqs.len()); n_blocks];
            for (r, l) in reps.iter().zip(&logits) {
                for (b, s) in ood.scores(kind, r, l)?.into_iter().enumerate() {
                    per_block[b].push(s.standardized);
                }
            }
            confidences = per_block;
        }
        probs.push(logits.iter().map(|l| maps[i].embed(&softmax_slice(l, tau))).collect());
        inputs.push(TeacherInputs { blocks, confidences, logits });
    }
    let mut target = Vec::with_capacity(seqs.len() * n_union);
    for s in 0..seqs.len() {
        let w = match weighting {
            OutputWeighting::Uniform => vec![1.0 / k as f64; k],
            OutputWeighting::Confidence => confidence_weights(&inputs.iter().map(|t| t.confidences[n_blocks - 1][s]).collect::<Vec<_>>()),
        };
        let rows: Vec<Vec<f64>> = probs.iter().map(|p| p[s].clone()).collect();
        target.extend(mixture_target(&rows, &w)?);
    }
    Ok(TransferFeatures {
        tokens: seqs.to_vec(),
        teachers: inputs,
        target: Tensor::new(vec![seqs.len(), n_union], target)?,
        n_blocks,
    })
}

/// How often each loss term was built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossCounts {
    pub amal: usize,
    pub out: usize,
}

/// Weighted block and output loss of one minibatch. Terms with zero weight are not built.
#[allow(clippy::too_many_arguments)]
pub fn student_batch_loss(
    tape: &mut Tape,
    student: &Transformer,
    student_store: &ParamStore,
    net: Option<(&AmalgamArch, &ParamStore)>,
    feats: &TransferFeatures,
    idx: &[usize],
    lambda: f64,
    tau: f64,
    counts: &mut LossCounts,
) -> Result<Var> {
    check_lambda(lambda)?;
    let seqs: Vec<&[Token]> = idx.iter().map(|&i| feats.tokens[i].as_slice()).collect();
    let fwd = student.forward(tape, student_store, &seqs)?;
    let amal = if lambda > 0.0 {
        let Some((arch, store)) = net else { bail!(InvalidArgument, "a block loss needs amalgamation maps") };
        let pooled = student.pooled_layers(tape, &fwd)?;
        if pooled.len() != feats.n_blocks {
            bail!(Shape, "student has {} layers for {} blocks", pooled.len(), feats.n_blocks);
        }
        let mut projected = Vec::with_capacity(feats.n_blocks);
        let mut targets = Vec::with_capacity(feats.n_blocks);
        for b in 0..feats.n_blocks {
            let mut zs = Vec::with_capacity(feats.teachers.len());
            let mut confs = Vec::with_capacity(feats.teachers.len());
            for (i, t) in feats.teachers.iter().enumerate() {
                if t.confidences.is_empty() {
                    bail!(InvalidArgument, "teacher {i} has no confidences for enrichment");
                }
                let c: Vec<f64> = idx.iter().map(|&s| t.confidences[b][s]).collect();
                let h = tape.constant(select_rows(&t.blocks[b], idx))?;
                let cv = tape.constant(Tensor::matrix(idx.len(), 1, c.clone())?)?;
                zs.push(arch.enrich(tape, store, i, b, h, cv)?);
                confs.push(c);
            }
            // per-sample softmax over teachers, stored teacher-major
            let mut weights = vec![Vec::with_capacity(idx.len()); confs.len()];
            for s in 0..idx.len() {
                let w = confidence_weights(&confs.iter().map(|c| c[s]).collect::<Vec<_>>());
                for (col, v) in weights.iter_mut().zip(w) {
                    col.push(v);
                }
            }
            targets.push(arch.fuse(tape, store, b, &zs, &weights)?);
            projected.push(arch.project(tape, store, b, pooled[b])?);
        }
        counts.amal += 1;
        Some(amal_loss(tape, &projected, &targets)?)
    } else {
        None
    };
    let out = if lambda < 1.0 {
        let t = tape.constant(select_rows(&feats.target, idx))?;
        counts.out += 1;
        Some(out_loss(tape, t, fwd.logits, tau)?)
    } else {
        None
    };
    match (amal, out) {
        (Some(a), Some(o)) => super::total_loss(tape, a, o, lambda),
        (Some(a), None) => Ok(a),
        (None, Some(o)) => Ok(o),
        (None, None) => unreachable!("lambda lies in [0, 1]"),
    }
}

/// Jointly train the student and (when `lambda > 0`) the amalgamation maps
/// on precomputed teacher features. Teachers never enter the tape.
pub fn train_student(
    student: &mut Model,
    net: Option<&mut AmalgamNet>,
    feats: &TransferFeatures,
    lambda: f64,
    tau: f64,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(TrainLog, LossCounts)> {
    check_lambda(lambda)?;
    if student.spec().n_classes != feats.target.cols() {
        bail!(Shape, "student predicts {} classes, targets have {}", student.spec().n_classes, feats.target.cols());
    }
    if lambda > 0.0 && net.is_none() {
        bail!(InvalidArgument, "lambda {lambda} needs amalgamation maps");
    }
    let s_arch = student.arch.clone();
    let mut counts = LossCounts::default();
    let log = match net {
        Some(net) if lambda > 0.0 => {
            let n_arch = net.arch.clone();
            fit(feats.len(), cfg, rng, &mut [&mut student.params, &mut net.params], |tape, stores, idx| {
                student_batch_loss(tape, &s_arch, stores[0], Some((&n_arch, stores[1])), feats, idx, lambda, tau, &mut counts)
            })?
        }
        _ => fit(feats.len(), cfg, rng, &mut [&mut student.params], |tape, stores, idx| {
            student_batch_loss(tape, &s_arch, stores[0], None, feats, idx, lambda, tau, &mut counts)
        })?,
    };
    Ok((log, counts))
}
