//! End-to-end runs: teachers, pseudo-data, confidence stats, students,
//! baselines and sweeps.

pub mod artifacts;
pub mod config;
pub mod report;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, Method, Recipe, TransferSource};
pub use report::{Record, RunReport};

use crate::amalgam::{build_features, partition, teacher_block_features, train_student, AmalgamNet, AmalgamSpec, BlockPartition, OutputWeighting};
use crate::corpus::{
    assign_labels, cross_domain_text, make_task, pretraining_corpus, random_text, teacher_subset, Example, LabelAssignment, LabelMap, TaskData,
};
use crate::error::{bail, Error, Result};
use crate::generator::{build_transfer_set, steering_success, SequenceScorer, SteerConfig, TransferSet};
use crate::metrics::auroc;
use crate::models::train::{accuracy, train_classifier, train_lm, TrainLog};
use crate::models::{Model, ModelSpec, Token};
use crate::ood::{ConfidenceKind, TeacherOod};
use crate::tensor::{argmax, Rng};

/// Seed of one named sub-stream of a run.
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    Rng::derive(seed, path).seed()
}

const STREAM_TEACHER_INIT: u64 = 10;
const STREAM_TEACHER_TRAIN: u64 = 11;
const STREAM_LM_CORPUS: u64 = 12;
const STREAM_LM_INIT: u64 = 13;
const STREAM_LM_TRAIN: u64 = 14;
const STREAM_GENERATE: u64 = 15;
const STREAM_TRUNK_INIT: u64 = 16;
const STREAM_TRUNK_TRAIN: u64 = 17;
const STREAM_STUDENT_INIT: u64 = 20;
const STREAM_AMALGAM_INIT: u64 = 21;
const STREAM_STUDENT_TRAIN: u64 = 22;
const STREAM_TRANSFER_TEXT: u64 = 23;
const STREAM_STEER_PROBE: u64 = 24;

/// Frozen teachers with their label spaces and block layouts.
#[derive(Debug, Clone)]
pub struct TeacherSet {
    pub models: Vec<Model>,
    pub assignment: LabelAssignment,
    pub maps: Vec<LabelMap>,
    pub partitions: Vec<BlockPartition>,
    /// Accuracy on each teacher's own classes of the validation split.
    pub valid_accuracy: Vec<f64>,
}

impl TeacherSet {
    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn refs(&self) -> Vec<&Model> {
        self.models.iter().collect()
    }

    pub fn scorers(&self) -> Vec<&dyn SequenceScorer> {
        self.models.iter().map(|m| m as &dyn SequenceScorer).collect()
    }
}

/// Language model with the trunk of `spec`, used to pre-train it.
pub fn trunk_lm_spec(spec: &ModelSpec) -> ModelSpec {
    ModelSpec { ff_mult: spec.ff_mult, ..ModelSpec::causal_lm(spec.vocab_size, spec.max_len, spec.n_layers, spec.d_model, spec.n_heads) }
}

/// File stem of the pre-trained trunk of `spec`.
pub fn trunk_name(spec: &ModelSpec) -> String {
    format!("trunk-l{}-d{}-h{}-f{}", spec.n_layers, spec.d_model, spec.n_heads, spec.ff_mult)
}

/// Frozen language models, one per distinct trunk that a teacher or the
/// student starts from.
#[derive(Debug, Clone, Default)]
pub struct Trunks {
    pub models: Vec<Model>,
}

impl Trunks {
    pub fn get(&self, spec: &ModelSpec) -> Option<&Model> {
        let want = trunk_lm_spec(spec);
        self.models.iter().find(|m| *m.spec() == want)
    }

    fn require(&self, spec: &ModelSpec) -> Result<&Model> {
        self.get(spec).ok_or_else(|| Error::InvalidArgument(format!("no pre-trained trunk for {}", trunk_name(spec))))
    }
}

/// Classifier specs whose trunks the config asks to pre-train: teachers
/// first, then the student, without repeats.
pub fn trunk_specs(cfg: &ExperimentConfig) -> Result<Vec<ModelSpec>> {
    let (assignment, _, _) = label_setup(cfg)?;
    let mut wanted = Vec::new();
    if cfg.teachers.pretrained {
        wanted.extend((0..assignment.k()).map(|i| cfg.teacher_spec(i, assignment.subsets[i].len())));
    }
    if cfg.student.pretrained {
        wanted.push(cfg.student_spec());
    }
    let mut out: Vec<ModelSpec> = Vec::new();
    for s in wanted {
        if !out.iter().any(|o| trunk_lm_spec(o) == trunk_lm_spec(&s)) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Pre-train every trunk of [`trunk_specs`] as a causal language model on
/// the unlabeled corpus.
pub fn pretrain_trunks(cfg: &ExperimentConfig) -> Result<Trunks> {
    let specs = trunk_specs(cfg)?;
    if specs.is_empty() {
        return Ok(Trunks::default());
    }
    let corpus = pretraining_corpus(&cfg.task, cfg.lm.corpus_size, cfg.lm.cross_domain_share, stream_seed(cfg.seed, &[STREAM_LM_CORPUS]))?;
    let mut models = Vec::with_capacity(specs.len());
    for (j, spec) in specs.iter().enumerate() {
        let j = j as u64;
        let mut m = Model::init(trunk_lm_spec(spec), stream_seed(cfg.seed, &[STREAM_TRUNK_INIT, j]))?;
        let log = train_lm(&mut m, &corpus, &cfg.training.lm, &mut Rng::derive(cfg.seed, &[STREAM_TRUNK_TRAIN, j]))?;
        log::info!("{}: final loss {:.4}", trunk_name(spec), log.epoch_losses.last().unwrap_or(&f64::NAN));
        m.freeze();
        models.push(m);
    }
    Ok(Trunks { models })
}

fn label_setup(cfg: &ExperimentConfig) -> Result<(LabelAssignment, Vec<LabelMap>, Vec<BlockPartition>)> {
    let assignment = assign_labels(cfg.task.n_classes, cfg.labels.n_teachers, cfg.labels.mode)?;
    let maps = assignment.label_maps();
    let partitions = (0..assignment.k()).map(|i| partition(cfg.teacher_depth(i), cfg.student.n_layers)).collect::<Result<_>>()?;
    Ok((assignment, maps, partitions))
}

/// Train and freeze one teacher per label subset. Fails when a teacher
/// stays below `cfg.teachers.min_accuracy` on its validation classes.
pub fn train_teachers(cfg: &ExperimentConfig, data: &TaskData, trunks: &Trunks) -> Result<TeacherSet> {
    cfg.validate()?;
    let (assignment, maps, partitions) = label_setup(cfg)?;
    let train = data.train.read("train_teachers");
    let mut models = Vec::with_capacity(maps.len());
    let mut valid_accuracy = Vec::with_capacity(maps.len());
    for (i, map) in maps.iter().enumerate() {
        let subset = teacher_subset(train, map);
        let valid = teacher_subset(&data.valid, map);
        let i64 = i as u64;
        let spec = cfg.teacher_spec(i, map.n_local());
        let init = stream_seed(cfg.seed, &[STREAM_TEACHER_INIT, i64]);
        let mut model = if cfg.teachers.pretrained { Model::init_from_body(spec.clone(), trunks.require(&spec)?, init)? } else { Model::init(spec, init)? };
        let log = train_classifier(&mut model, &subset, &cfg.training.teacher, &mut Rng::derive(cfg.seed, &[STREAM_TEACHER_TRAIN, i64]))?;
        let acc = accuracy(&model, &valid)?;
        log::info!("teacher {i} labels {:?}: final loss {:.4}, valid accuracy {acc:.3}", map.union_of_local, log.epoch_losses.last().unwrap_or(&f64::NAN));
        if acc < cfg.teachers.min_accuracy {
            bail!(
                Training,
                "teacher {i} (labels {:?}, {} layers) reached {acc:.3} validation accuracy, below the required {}; train longer or raise lr",
                map.union_of_local,
                cfg.teacher_depth(i),
                cfg.teachers.min_accuracy
            );
        }
        model.freeze();
        models.push(model);
        valid_accuracy.push(acc);
    }
    Ok(TeacherSet { models, assignment, maps, partitions, valid_accuracy })
}

/// Pre-train the base language model on unlabeled in-domain and
/// cross-domain text.
pub fn train_base_lm(cfg: &ExperimentConfig) -> Result<(Model, TrainLog)> {
    let corpus = pretraining_corpus(&cfg.task, cfg.lm.corpus_size, cfg.lm.cross_domain_share, stream_seed(cfg.seed, &[STREAM_LM_CORPUS]))?;
    let mut lm = Model::init(cfg.lm_spec(), stream_seed(cfg.seed, &[STREAM_LM_INIT]))?;
    let log = train_lm(&mut lm, &corpus, &cfg.training.lm, &mut Rng::derive(cfg.seed, &[STREAM_LM_TRAIN]))?;
    lm.freeze();
    Ok((lm, log))
}

/// Steered pseudo-data for every (teacher, class).
pub fn generate(cfg: &ExperimentConfig, lm: &Model, teachers: &TeacherSet) -> Result<TransferSet> {
    build_transfer_set(lm, &teachers.scorers(), &teachers.maps, &cfg.steer, stream_seed(cfg.seed, &[STREAM_GENERATE]))
}

/// Per-teacher confidence stats fitted on that teacher's held-out
/// pseudo-data.
pub fn fit_ood(cfg: &ExperimentConfig, teachers: &TeacherSet, transfer: &TransferSet) -> Result<Vec<TeacherOod>> {
    if transfer.heldout.len() != teachers.k() {
        bail!(InvalidArgument, "held-out pseudo-data for {} teachers, expected {}", transfer.heldout.len(), teachers.k());
    }
    let mut out = Vec::with_capacity(teachers.k());
    for (i, held) in transfer.heldout.iter().enumerate() {
        let seqs: Vec<Vec<Token>> = held.iter().map(|s| s.tokens.clone()).collect();
        let labels: Vec<usize> = held.iter().map(|s| s.local_label).collect();
        let (reps, logits) = teacher_block_features(&teachers.models[i], &teachers.partitions[i], &seqs)?;
        let ood = TeacherOod::fit(&reps, &logits, &labels, teachers.maps[i].n_local(), cfg.amalgam.ridge).map_err(|e| match e {
            Error::MissingClass(y) => Error::Training(format!("teacher {i} has no held-out pseudo-samples for local class {y}; raise steer.n_samples")),
            e => e,
        })?;
        out.push(ood);
    }
    Ok(out)
}

/// Everything a student run needs. Holds the test split but no handle to
/// the task's training split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub teachers: TeacherSet,
    pub lm: Model,
    pub transfer: TransferSet,
    pub oods: Vec<TeacherOod>,
    pub test: Vec<Example>,
    /// Pre-trained trunk the student starts from; random init when absent.
    pub student_body: Option<Model>,
}

/// Train teachers and the LM, generate pseudo-data and fit confidence stats.
pub fn prepare(cfg: &ExperimentConfig, data: &TaskData) -> Result<Prepared> {
    let t = Instant::now();
    let trunks = pretrain_trunks(cfg)?;
    log::info!("{} trunks pre-trained in {:.1}s", trunks.models.len(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let teachers = train_teachers(cfg, data, &trunks)?;
    log::info!("teachers trained in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let (lm, _) = train_base_lm(cfg)?;
    log::info!("language model trained in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let transfer = generate(cfg, &lm, &teachers)?;
    log::info!("{} pseudo-samples generated in {:.1}s", transfer.train.len(), t.elapsed().as_secs_f64());
    let oods = fit_ood(cfg, &teachers, &transfer)?;
    Ok(Prepared { cfg: cfg.clone(), teachers, lm, transfer, oods, test: data.test.clone(), student_body: student_trunk(cfg, &trunks)? })
}

/// The trunk the student starts from, if the config asks for one.
pub fn student_trunk(cfg: &ExperimentConfig, trunks: &Trunks) -> Result<Option<Model>> {
    if cfg.student.pretrained {
        Ok(Some(trunks.require(&cfg.student_spec())?.clone()))
    } else {
        Ok(None)
    }
}

/// Fresh task data for `cfg`, then [`prepare`].
pub fn prepare_task(cfg: &ExperimentConfig) -> Result<(TaskData, Prepared)> {
    let data = make_task(&cfg.task)?;
    let prepared = prepare(cfg, &data)?;
    Ok((data, prepared))
}

/// Outcome of one method on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodResult {
    pub method: Method,
    pub seed: u64,
    pub n_teachers: usize,
    /// Block-loss weight; absent for inference-only baselines.
    pub lambda: Option<f64>,
    /// Split the accuracy was measured on.
    pub eval_set: String,
    pub accuracy: f64,
    pub final_train_loss: Option<f64>,
    /// Minibatches that built the block loss and the output loss.
    pub amal_terms: usize,
    pub out_terms: usize,
}

/// A trained student and, when the block loss was used, its maps.
#[derive(Debug, Clone)]
pub struct TrainedStudent {
    pub student: Model,
    pub net: Option<AmalgamNet>,
    pub log: TrainLog,
    pub lambda: f64,
    pub amal_terms: usize,
    pub out_terms: usize,
}

fn transfer_text(p: &Prepared, source: TransferSource) -> Result<Vec<Vec<Token>>> {
    let n = p.transfer.train.len();
    let seed = stream_seed(p.cfg.seed, &[STREAM_TRANSFER_TEXT]);
    let task = &p.cfg.task;
    Ok(match source {
        TransferSource::Pseudo => p.transfer.train.iter().map(|s| s.tokens.clone()).collect(),
        TransferSource::Random => random_text(task.vocab_size, task.min_len, task.max_len, n, seed),
        TransferSource::CrossDomain => cross_domain_text(&task.cross_domain(), n, seed)?.into_iter().map(|e| e.tokens).collect(),
    })
}

fn amalgam_spec(cfg: &ExperimentConfig, recipe: &Recipe) -> AmalgamSpec {
    AmalgamSpec {
        teacher_dims: (0..cfg.labels.n_teachers).map(|i| cfg.teacher_width(i)).collect(),
        n_blocks: cfg.student.n_layers,
        d_student: cfg.student.d_model,
        d_amalg: cfg.student.d_model,
        heads: cfg.student.n_heads,
        ff_mult: cfg.student.ff_mult,
        share_across_blocks: cfg.amalgam.share_across_blocks,
        enrichment: recipe.enrichment,
        fusion: recipe.fusion,
    }
}

/// Train the student of a trainable method. All methods of one seed start
/// from the same student initialization.
pub fn train_method(p: &Prepared, method: Method, lambda: f64) -> Result<TrainedStudent> {
    let Some(recipe) = method.recipe() else {
        bail!(InvalidArgument, "{method} has no student to train");
    };
    let cfg = &p.cfg;
    let lambda = if recipe.output_only { 0.0 } else { lambda };
    let seqs = transfer_text(p, recipe.source)?;
    let needs_confidence = lambda > 0.0 || recipe.weighting == OutputWeighting::Confidence;
    let confidence = needs_confidence.then_some((p.oods.as_slice(), recipe.confidence));
    let feats = build_features(&seqs, &p.teachers.refs(), &p.teachers.partitions, &p.teachers.maps, confidence, recipe.weighting, cfg.amalgam.tau)?;
    let mut student = match &p.student_body {
        Some(body) => Model::init_from_body(cfg.student_spec(), body, stream_seed(cfg.seed, &[STREAM_STUDENT_INIT]))?,
        None => Model::init(cfg.student_spec(), stream_seed(cfg.seed, &[STREAM_STUDENT_INIT]))?,
    };
    let mut net = if lambda > 0.0 { Some(AmalgamNet::init(amalgam_spec(cfg, &recipe), stream_seed(cfg.seed, &[STREAM_AMALGAM_INIT]))?) } else { None };
    let mut rng = Rng::derive(cfg.seed, &[STREAM_STUDENT_TRAIN]);
    let (log, counts) = train_student(&mut student, net.as_mut(), &feats, lambda, cfg.amalgam.tau, &cfg.training.student, &mut rng)?;
    Ok(TrainedStudent { student, net, log, lambda, amal_terms: counts.amal, out_terms: counts.out })
}

/// Union-label accuracy of a student.
pub fn student_accuracy(student: &Model, test: &[Example]) -> Result<f64> {
    let data: Vec<(Vec<Token>, usize)> = test.iter().map(|e| (e.tokens.clone(), e.label)).collect();
    accuracy(student, &data)
}

/// Per-example union-label predictions of a single teacher, or of all
/// teachers through their concatenated logits.
fn teacher_predictions(teachers: &TeacherSet, only: Option<usize>, test: &[Example]) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(test.len());
    for chunk in test.chunks(64) {
        let seqs: Vec<&[Token]> = chunk.iter().map(|e| e.tokens.as_slice()).collect();
        let per_teacher: Vec<Vec<Vec<f64>>> = teachers
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| if only.map_or(true, |o| o == i) { m.classify_batch(&seqs) } else { Ok(Vec::new()) })
            .collect::<Result<_>>()?;
        for s in 0..chunk.len() {
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, logits) in per_teacher.iter().enumerate() {
                if logits.is_empty() {
                    continue;
                }
                let j = argmax(&logits[s]);
                if logits[s][j] > best.0 {
                    best = (logits[s][j], teachers.maps[i].to_union(j));
                }
            }
            preds.push(best.1);
        }
    }
    Ok(preds)
}

fn hit_rate(preds: &[usize], test: &[Example]) -> f64 {
    preds.iter().zip(test).filter(|(p, e)| **p == e.label).count() as f64 / test.len().max(1) as f64
}

/// Accuracy of the concatenated-logit teacher ensemble.
pub fn ensemble_accuracy(teachers: &TeacherSet, test: &[Example]) -> Result<f64> {
    Ok(hit_rate(&teacher_predictions(teachers, None, test)?, test))
}

/// Union-label accuracy of each single teacher.
pub fn teacher_accuracies(teachers: &TeacherSet, test: &[Example]) -> Result<Vec<f64>> {
    (0..teachers.k()).map(|i| Ok(hit_rate(&teacher_predictions(teachers, Some(i), test)?, test))).collect()
}

/// Run one method on the test split. `lambda` is ignored by methods
/// without a block loss.
pub fn run_method(p: &Prepared, method: Method, lambda: f64) -> Result<MethodResult> {
    let base = MethodResult {
        method,
        seed: p.cfg.seed,
        n_teachers: p.teachers.k(),
        lambda: None,
        eval_set: "test".into(),
        accuracy: 0.0,
        final_train_loss: None,
        amal_terms: 0,
        out_terms: 0,
    };
    match method {
        Method::Ensemble => Ok(MethodResult { accuracy: ensemble_accuracy(&p.teachers, &p.test)?, ..base }),
        Method::TeacherOnly => {
            let best = teacher_accuracies(&p.teachers, &p.test)?.into_iter().fold(0.0, f64::max);
            Ok(MethodResult { accuracy: best, ..base })
        }
        _ => {
            let t = Instant::now();
            let trained = train_method(p, method, lambda)?;
            let acc = student_accuracy(&trained.student, &p.test)?;
            log::info!("{method} (lambda {}) accuracy {acc:.4} in {:.1}s", trained.lambda, t.elapsed().as_secs_f64());
            Ok(MethodResult {
                lambda: Some(trained.lambda),
                accuracy: acc,
                final_train_loss: trained.log.epoch_losses.last().copied(),
                amal_terms: trained.amal_terms,
                out_terms: trained.out_terms,
                ..base
            })
        }
    }
}

/// Final-block AUROC of each confidence score at separating a teacher's own
/// classes (positives) from the other classes (negatives) of the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodAuroc {
    pub seed: u64,
    pub teacher: usize,
    pub rmd: f64,
    pub md: f64,
    pub msp: f64,
}

pub fn ood_auroc(p: &Prepared) -> Result<Vec<OodAuroc>> {
    let mut out = Vec::with_capacity(p.teachers.k());
    for i in 0..p.teachers.k() {
        let seqs: Vec<Vec<Token>> = p.test.iter().map(|e| e.tokens.clone()).collect();
        let (reps, logits) = teacher_block_features(&p.teachers.models[i], &p.teachers.partitions[i], &seqs)?;
        let own: Vec<bool> = p.test.iter().map(|e| p.teachers.maps[i].to_local(e.label).is_some()).collect();
        let score = |kind: ConfidenceKind| -> Result<f64> {
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for ((r, l), &inside) in reps.iter().zip(&logits).zip(&own) {
                let raw = p.oods[i].scores(kind, r, l)?.last().expect("at least one block").raw;
                if inside { pos.push(raw) } else { neg.push(raw) }
            }
            auroc(&pos, &neg)
        };
        out.push(OodAuroc { seed: p.cfg.seed, teacher: i, rmd: score(ConfidenceKind::Rmd)?, md: score(ConfidenceKind::Md)?, msp: score(ConfidenceKind::Msp)? });
    }
    Ok(out)
}

/// Share of each teacher's pseudo-samples that the teacher assigns to the
/// class they were steered towards.
pub fn steering_rates(p: &Prepared) -> Result<Vec<f64>> {
    let mut all = p.transfer.heldout.clone();
    for s in &p.transfer.train {
        all[s.teacher].push(s.clone());
    }
    all.iter().zip(&p.teachers.models).map(|(samples, t)| steering_success(t, samples)).collect()
}

/// Steering success of freshly generated samples at control strength
/// `gamma`, one rate per teacher.
pub fn steering_probe(p: &Prepared, gamma: f64, n_samples: usize) -> Result<Vec<f64>> {
    let steer = SteerConfig { gamma, n_samples, ..p.cfg.steer.clone() };
    // the held-out share is irrelevant here, every sample is scored
    let set = build_transfer_set(&p.lm, &p.teachers.scorers(), &p.teachers.maps, &steer, stream_seed(p.cfg.seed, &[STREAM_STEER_PROBE]))?;
    let probe = Prepared { transfer: set, ..p.clone() };
    steering_rates(&probe)
}

/// Records for one prepared seed: every requested method plus the OOD and
/// steering diagnostics.
pub fn run_seed(p: &Prepared, methods: &[Method]) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (teacher, rate) in steering_rates(p)?.into_iter().enumerate() {
        out.push(Record::Steering { seed: p.cfg.seed, teacher, gamma: p.cfg.steer.gamma, rate });
    }
    out.extend(ood_auroc(p)?.into_iter().map(Record::Ood));
    for &m in methods {
        out.push(Record::Method(run_method(p, m, p.cfg.amalgam.lambda)?));
    }
    Ok(out)
}

/// The seed-level config for run seed `seed`.
pub fn with_seed(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    ExperimentConfig { seed, ..cfg.clone() }
}

fn timed<T>(label: &str, seed: u64, report: &mut RunReport, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let v = f()?;
    report.wall_clock.push(report::Timing { label: label.to_string(), seed, seconds: t.elapsed().as_secs_f64() });
    Ok(v)
}

/// Every method over several seeds.
pub fn benchmark(cfg: &ExperimentConfig, methods: &[Method], seeds: &[u64]) -> Result<RunReport> {
    let mut report = RunReport::default();
    for &seed in seeds {
        let cfg = with_seed(cfg, seed);
        let (_, p) = timed("prepare", seed, &mut report, || prepare_task(&cfg))?;
        let recs = timed("methods", seed, &mut report, || run_seed(&p, methods))?;
        report.records.extend(recs);
    }
    Ok(report)
}

/// Stratanet at several block-loss weights.
pub fn sweep_lambda(cfg: &ExperimentConfig, values: &[f64], seeds: &[u64]) -> Result<RunReport> {
    for &l in values {
        crate::amalgam::check_lambda(l).map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut report = RunReport::default();
    for &seed in seeds {
        let cfg = with_seed(cfg, seed);
        let (_, p) = timed("prepare", seed, &mut report, || prepare_task(&cfg))?;
        for &l in values {
            let r = timed("stratanet", seed, &mut report, || run_method(&p, Method::Stratanet, l))?;
            report.records.push(Record::Method(r));
        }
    }
    Ok(report)
}

/// Depths and widths of the heterogeneous teacher sweep, cycled per teacher.
pub const SWEEP_DEPTHS: [usize; 3] = [4, 6, 8];
pub const SWEEP_WIDTHS: [usize; 2] = [32, 48];

/// `cfg` with `k` heterogeneous teachers.
pub fn heterogeneous(cfg: &ExperimentConfig, k: usize) -> Result<ExperimentConfig> {
    let mut c = cfg.with_teachers(k)?;
    c.teachers.depths = SWEEP_DEPTHS.to_vec();
    c.teachers.d_models = SWEEP_WIDTHS.to_vec();
    c.validate()?;
    Ok(c)
}

/// Stratanet and the ensemble with `k` heterogeneous teachers for each `k`.
pub fn sweep_teachers(cfg: &ExperimentConfig, ks: &[usize], seeds: &[u64]) -> Result<RunReport> {
    let mut report = RunReport::default();
    for &k in ks {
        let kcfg = heterogeneous(cfg, k)?;
        for &seed in seeds {
            let c = with_seed(&kcfg, seed);
            let (_, p) = timed(&format!("prepare k={k}"), seed, &mut report, || prepare_task(&c))?;
            for m in [Method::Stratanet, Method::Ensemble] {
                let r = run_method(&p, m, c.amalgam.lambda)?;
                report.records.push(Record::Method(r));
            }
        }
    }
    Ok(report)
}
