//! On-disk stages of a run.
//!
//! ```text
//! <out>/<config hash>/seed-<seed>/
//!   config.toml            config the stage ran with
//!   task/{train,valid,test}.tsv, task/task.json
//!   trunks/trunk-l<L>-d<D>-h<H>-f<F>.{json,bin}   pre-trained trunks
//!   teachers/teacher-<i>.{json,bin}, teachers/valid_accuracy.json
//!   lm.{json,bin}
//!   pseudo.tsv, pseudo.json
//!   ood.json
//!   students/<tag>.{json,bin}, students/<tag>-amalgam.{json,bin}
//!   results/<tag>.jsonl    written by train-student
//!   eval/<tag>.jsonl       written by evaluate
//! ```
//!
//! Each stage overwrites its own outputs and reads only what earlier stages
//! wrote. Student stages never open `task/train.tsv`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{
    fit_ood, generate, pretrain_trunks, run_method, student_accuracy, train_base_lm, train_method, train_teachers, trunk_lm_spec, trunk_name,
    ExperimentConfig, MethodResult, Prepared, Record, RunReport, TeacherSet,
};
use crate::amalgam::partition;
use crate::corpus::{assign_labels, make_task, read_examples, write_examples, TaskManifest};
use crate::error::{Error, Result};
use crate::generator::{load_transfer_set, save_transfer_set};
use crate::models::Model;
use crate::ood::TeacherOod;
use crate::pipeline::Method;

const TASK_FORMAT: u32 = 1;

/// Directory of one (config, seed) run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(out: &Path, cfg: &ExperimentConfig) -> Self {
        Self { root: out.join(cfg.artifact_key()).join(format!("seed-{}", cfg.seed)) }
    }

    pub fn task(&self) -> PathBuf {
        self.root.join("task")
    }

    pub fn trunks(&self) -> PathBuf {
        self.root.join("trunks")
    }

    pub fn teachers(&self) -> PathBuf {
        self.root.join("teachers")
    }

    pub fn ood(&self) -> PathBuf {
        self.root.join("ood.json")
    }

    pub fn students(&self) -> PathBuf {
        self.root.join("students")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        fs::write(self.root.join("config.toml"), cfg.to_toml())?;
        Ok(())
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: PathBuf) -> Result<T> {
    let path = require(path)?;
    serde_json::from_slice(&fs::read(&path)?).map_err(|e| Error::CorruptArtifact { path, reason: e.to_string() })
}

/// Artifact name of a method's student and result files.
pub fn method_tag(method: Method, lambda: f64) -> String {
    match method.recipe() {
        Some(r) if !r.output_only => format!("{}-lambda{lambda}", method.name()),
        _ => method.name().to_string(),
    }
}

/// Sample the task, write its splits, pre-train the trunks, then train and
/// save the teachers.
pub fn stage_train_teachers(cfg: &ExperimentConfig, dir: &RunDir) -> Result<TeacherSet> {
    dir.write_config(cfg)?;
    let data = make_task(&cfg.task)?;
    let task = dir.task();
    write_examples(&task.join("train.tsv"), data.train.read("write_splits"))?;
    write_examples(&task.join("valid.tsv"), &data.valid)?;
    write_examples(&task.join("test.tsv"), &data.test)?;
    let trunks = pretrain_trunks(cfg)?;
    for m in &trunks.models {
        m.save(&dir.trunks(), &trunk_name(m.spec()))?;
    }
    let teachers = train_teachers(cfg, &data, &trunks)?;
    let manifest = TaskManifest {
        format_version: TASK_FORMAT,
        task: cfg.task.clone(),
        assignment: teachers.assignment.clone(),
        label_maps: teachers.maps.clone(),
    };
    fs::write(task.join("task.json"), serde_json::to_vec_pretty(&manifest)?)?;
    for (i, m) in teachers.models.iter().enumerate() {
        m.save(&dir.teachers(), &format!("teacher-{i}"))?;
    }
    fs::write(dir.teachers().join("valid_accuracy.json"), serde_json::to_vec(&teachers.valid_accuracy)?)?;
    Ok(teachers)
}

pub fn load_teachers(cfg: &ExperimentConfig, dir: &RunDir) -> Result<TeacherSet> {
    let manifest: TaskManifest = read_json(dir.task().join("task.json"))?;
    let assignment = assign_labels(cfg.task.n_classes, cfg.labels.n_teachers, cfg.labels.mode)?;
    if manifest.task != cfg.task || manifest.assignment != assignment {
        return Err(Error::CorruptArtifact { path: dir.task().join("task.json"), reason: "task does not match the config".into() });
    }
    let mut models = Vec::with_capacity(assignment.k());
    let mut partitions = Vec::with_capacity(assignment.k());
    for i in 0..assignment.k() {
        let mut m = Model::load(&dir.teachers(), &format!("teacher-{i}"))?;
        if *m.spec() != cfg.teacher_spec(i, assignment.subsets[i].len()) {
            return Err(Error::CorruptArtifact {
                path: dir.teachers().join(format!("teacher-{i}.json")),
                reason: "architecture does not match the config".into(),
            });
        }
        m.freeze();
        partitions.push(partition(cfg.teacher_depth(i), cfg.student.n_layers)?);
        models.push(m);
    }
    let valid_accuracy = read_json(dir.teachers().join("valid_accuracy.json"))?;
    Ok(TeacherSet { models, maps: assignment.label_maps(), assignment, partitions, valid_accuracy })
}

/// Train the base LM and generate the pseudo-data.
pub fn stage_generate(cfg: &ExperimentConfig, dir: &RunDir) -> Result<()> {
    let teachers = load_teachers(cfg, dir)?;
    dir.write_config(cfg)?;
    let (lm, _) = train_base_lm(cfg)?;
    lm.save(&dir.root, "lm")?;
    let set = generate(cfg, &lm, &teachers)?;
    save_transfer_set(&dir.root, &set, &cfg.steer, cfg.seed)
}

pub fn stage_fit_ood(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Vec<TeacherOod>> {
    let teachers = load_teachers(cfg, dir)?;
    require(dir.root.join("pseudo.json"))?;
    let set = load_transfer_set(&dir.root, teachers.k())?;
    let oods = fit_ood(cfg, &teachers, &set)?;
    fs::write(dir.ood(), serde_json::to_vec(&oods)?)?;
    Ok(oods)
}

/// The saved trunk of `spec`.
pub fn load_trunk(dir: &RunDir, spec: &crate::models::ModelSpec) -> Result<Model> {
    let name = trunk_name(spec);
    let mut m = Model::load(&dir.trunks(), &name)?;
    if *m.spec() != trunk_lm_spec(spec) {
        return Err(Error::CorruptArtifact { path: dir.trunks().join(format!("{name}.json")), reason: "trunk does not match the config".into() });
    }
    m.freeze();
    Ok(m)
}

/// Everything student training needs, read from disk.
pub fn load_prepared(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Prepared> {
    let teachers = load_teachers(cfg, dir)?;
    let mut lm = Model::load(&dir.root, "lm")?;
    lm.freeze();
    require(dir.root.join("pseudo.json"))?;
    let transfer = load_transfer_set(&dir.root, teachers.k())?;
    let oods: Vec<TeacherOod> = read_json(dir.ood())?;
    let test = read_examples(&dir.task().join("test.tsv"))?;
    let student_body = if cfg.student.pretrained { Some(load_trunk(dir, &cfg.student_spec())?) } else { None };
    Ok(Prepared { cfg: cfg.clone(), teachers, lm, transfer, oods, test, student_body })
}

fn write_records(path: PathBuf, records: Vec<Record>) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    fs::write(path, RunReport { records, wall_clock: Vec::new() }.to_jsonl())?;
    Ok(())
}

/// Train (or, for baselines, score) one method and record its accuracy.
pub fn stage_train_student(cfg: &ExperimentConfig, dir: &RunDir, method: Method) -> Result<MethodResult> {
    let p = load_prepared(cfg, dir)?;
    let lambda = cfg.amalgam.lambda;
    let tag = method_tag(method, lambda);
    let result = if method.recipe().is_some() {
        let trained = train_method(&p, method, lambda)?;
        trained.student.save(&dir.students(), &tag)?;
        if let Some(net) = &trained.net {
            net.save(&dir.students(), &format!("{tag}-amalgam"))?;
        }
        MethodResult {
            method,
            seed: cfg.seed,
            n_teachers: p.teachers.k(),
            lambda: Some(trained.lambda),
            eval_set: "test".into(),
            accuracy: student_accuracy(&trained.student, &p.test)?,
            final_train_loss: trained.log.epoch_losses.last().copied(),
            amal_terms: trained.amal_terms,
            out_terms: trained.out_terms,
        }
    } else {
        run_method(&p, method, lambda)?
    };
    write_records(dir.results().join(format!("{tag}.jsonl")), vec![Record::Method(result.clone())])?;
    Ok(result)
}

/// Score a saved student (or a baseline) on the test split.
pub fn stage_evaluate(cfg: &ExperimentConfig, dir: &RunDir, method: Method) -> Result<MethodResult> {
    let lambda = cfg.amalgam.lambda;
    let tag = method_tag(method, lambda);
    let p = load_prepared(cfg, dir)?;
    let result = match method.recipe() {
        Some(r) => {
            let student = Model::load(&dir.students(), &tag)?;
            MethodResult {
                method,
                seed: cfg.seed,
                n_teachers: p.teachers.k(),
                lambda: Some(if r.output_only { 0.0 } else { lambda }),
                eval_set: "test".into(),
                accuracy: student_accuracy(&student, &p.test)?,
                final_train_loss: None,
                amal_terms: 0,
                out_terms: 0,
            }
        }
        None => run_method(&p, method, lambda)?,
    };
    write_records(dir.eval().join(format!("{tag}.jsonl")), vec![Record::Method(result.clone())])?;
    Ok(result)
}
