//! Fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use dfka::amalgam::{mixture_target, student_batch_loss, AmalgamNet, AmalgamSpec, Enrichment, Fusion, LossCounts, TeacherInputs, TransferFeatures};
use dfka::corpus::{BOS, EOS};
use dfka::models::{Model, ModelSpec, Token};
use dfka::tensor::gradcheck::{check, GradCheckOptions, GradCheckReport};
use dfka::tensor::{softmax_slice, Rng, Tensor};

pub const VOCAB: usize = 12;
pub const MAX_LEN: usize = 8;

pub fn random_seqs(rng: &mut Rng, n: usize) -> Vec<Vec<Token>> {
    (0..n)
        .map(|_| {
            let len = rng.range_inclusive(1, MAX_LEN - 2);
            let mut s = vec![BOS];
            s.extend((0..len).map(|_| (2 + rng.below(VOCAB - 2)) as Token));
            s.push(EOS);
            s
        })
        .collect()
}

pub fn tiny_classifier(layers: usize, n_classes: usize, seed: u64) -> Model {
    Model::init(ModelSpec::classifier(VOCAB, MAX_LEN, layers, 8, 2, n_classes), seed).unwrap()
}

pub fn tiny_lm(seed: u64) -> Model {
    Model::init(ModelSpec::causal_lm(VOCAB, MAX_LEN, 2, 8, 2), seed).unwrap()
}

/// Transfer features with random teacher blocks, confidences and logits;
/// teacher `i` owns union labels `2i, 2i+1`.
pub fn synthetic_features(rng: &mut Rng, n: usize, teacher_dims: &[usize], n_blocks: usize) -> TransferFeatures {
    let k = teacher_dims.len();
    let n_union = 2 * k;
    let tokens = random_seqs(rng, n);
    let teachers: Vec<TeacherInputs> = teacher_dims
        .iter()
        .map(|&d| TeacherInputs {
            blocks: (0..n_blocks).map(|_| Tensor::new(vec![n, d], rng.normal_vec(n * d, 1.0)).unwrap()).collect(),
            confidences: (0..n_blocks).map(|_| rng.normal_vec(n, 1.0)).collect(),
            logits: (0..n).map(|_| rng.normal_vec(2, 2.0)).collect(),
        })
        .collect();
    let mut target = Vec::with_capacity(n * n_union);
    for s in 0..n {
        let probs: Vec<Vec<f64>> = teachers
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut row = vec![0.0; n_union];
                for (j, p) in softmax_slice(&t.logits[s], 0.75).into_iter().enumerate() {
                    row[2 * i + j] = p;
                }
                row
            })
            .collect();
        let w = softmax_slice(&teachers.iter().map(|t| t.confidences[n_blocks - 1][s]).collect::<Vec<_>>(), 1.0);
        target.extend(mixture_target(&probs, &w).unwrap());
    }
    TransferFeatures { tokens, teachers, target: Tensor::new(vec![n, n_union], target).unwrap(), n_blocks }
}

pub fn amalgam_spec(teacher_dims: &[usize], n_blocks: usize, enrichment: Enrichment, fusion: Fusion, share: bool) -> AmalgamSpec {
    AmalgamSpec {
        teacher_dims: teacher_dims.to_vec(),
        n_blocks,
        d_student: 8,
        d_amalg: 8,
        heads: 2,
        ff_mult: 2,
        share_across_blocks: share,
        enrichment,
        fusion,
    }
}

/// Redraw the embeddings at unit scale so finite differences probe the
/// first LayerNorm away from its small-variance, high-curvature regime.
pub fn spread_embeddings(model: &mut Model, rng: &mut Rng) {
    for name in ["model.tok_emb", "model.pos_emb"] {
        let id = model.params.find(name).expect("embedding parameter");
        let n = model.params.value(id).len();
        model.params.value_mut(id).data_mut().copy_from_slice(&rng.normal_vec(n, 1.0));
    }
}

fn opts() -> GradCheckOptions {
    GradCheckOptions { max_checks: usize::MAX, ..GradCheckOptions::default() }
}

/// Finite-difference check of the joint student loss over every student and
/// amalgamation parameter.
pub fn student_gradcheck(enrichment: Enrichment, fusion: Fusion, share: bool, lambda: f64, seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let dims = [6, 10];
    let n_blocks = 2;
    let feats = synthetic_features(&mut rng, 5, &dims, n_blocks);
    let mut student = tiny_classifier(n_blocks, 4, seed + 1);
    spread_embeddings(&mut student, &mut rng);
    let mut net = AmalgamNet::init(amalgam_spec(&dims, n_blocks, enrichment, fusion, share), seed + 2).unwrap();
    let (s_arch, n_arch) = (student.arch.clone(), net.arch.clone());
    let idx: Vec<usize> = (0..feats.len()).collect();
    check(&mut [&mut student.params, &mut net.params], opts(), |tape, stores| {
        let mut counts = LossCounts::default();
        student_batch_loss(tape, &s_arch, stores[0], Some((&n_arch, stores[1])), &feats, &idx, lambda, 0.75, &mut counts)
    })
    .unwrap()
}

pub fn classifier_gradcheck(seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let seqs = random_seqs(&mut rng, 4);
    let labels: Vec<Option<usize>> = (0..4).map(|i| Some(i % 3)).collect();
    let mut model = tiny_classifier(2, 3, seed);
    spread_embeddings(&mut model, &mut rng);
    let arch = model.arch.clone();
    check(&mut [&mut model.params], opts(), |tape, stores| {
        let refs: Vec<&[Token]> = seqs.iter().map(Vec::as_slice).collect();
        let fwd = arch.forward(tape, stores[0], &refs)?;
        tape.cross_entropy(fwd.logits, &labels)
    })
    .unwrap()
}

pub fn lm_gradcheck(seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed);
    let seqs = random_seqs(&mut rng, 3);
    let targets: Vec<Option<usize>> = seqs.iter().flat_map(|s| (0..s.len()).map(move |t| s.get(t + 1).map(|&x| x as usize))).collect();
    let mut model = tiny_lm(seed);
    spread_embeddings(&mut model, &mut rng);
    let arch = model.arch.clone();
    check(&mut [&mut model.params], opts(), |tape, stores| {
        let refs: Vec<&[Token]> = seqs.iter().map(Vec::as_slice).collect();
        let fwd = arch.forward(tape, stores[0], &refs)?;
        tape.cross_entropy(fwd.logits, &targets)
    })
    .unwrap()
}

/// Well-conditioned SPD matrix `A A^T + 0.5 I`.
pub fn random_spd(rng: &mut Rng, d: usize) -> nalgebra::DMatrix<f64> {
    let a = nalgebra::DMatrix::from_vec(d, d, rng.normal_vec(d * d, 1.0));
    &a * a.transpose() + nalgebra::DMatrix::identity(d, d) * 0.5
}

/// `(h - mu)^T cov^-1 (h - mu)` through an explicit inverse.
pub fn explicit_md(cov: &nalgebra::DMatrix<f64>, mu: &[f64], h: &[f64]) -> f64 {
    let inv = cov.clone().try_inverse().expect("invertible");
    let v = nalgebra::DVector::from_iterator(h.len(), h.iter().zip(mu).map(|(a, b)| a - b));
    (v.transpose() * inv * &v)[(0, 0)]
}

/// The shipped config that runs every stage in seconds.
pub fn tiny_config() -> dfka::pipeline::ExperimentConfig {
    dfka::pipeline::ExperimentConfig::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")).unwrap()
}
