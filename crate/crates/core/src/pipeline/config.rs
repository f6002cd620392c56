use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amalgam::{Enrichment, Fusion, OutputWeighting, DEFAULT_LAMBDA, DEFAULT_TAU};
use crate::corpus::{OverlapMode, TaskSpec};
use crate::error::{bail, Error, Result};
use crate::generator::SteerConfig;
use crate::models::train::TrainConfig;
use crate::models::ModelSpec;
use crate::ood::{ConfidenceKind, RIDGE};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "stratanet")]
    Stratanet,
    #[serde(rename = "stratanet_mul")]
    StratanetMul,
    #[serde(rename = "stratanet_noST")]
    StratanetNoSt,
    #[serde(rename = "md_conf")]
    MdConf,
    #[serde(rename = "msp_conf")]
    MspConf,
    #[serde(rename = "vanilla_ka_R")]
    VanillaKaR,
    #[serde(rename = "vanilla_ka_CD")]
    VanillaKaCd,
    #[serde(rename = "ensemble")]
    Ensemble,
    #[serde(rename = "teacher_only")]
    TeacherOnly,
}

/// Transfer text a student learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferSource {
    Pseudo,
    Random,
    CrossDomain,
}

/// Everything that distinguishes one trained method from another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub source: TransferSource,
    pub confidence: ConfidenceKind,
    pub enrichment: Enrichment,
    pub fusion: Fusion,
    pub weighting: OutputWeighting,
    /// Block loss disabled regardless of the configured weight.
    pub output_only: bool,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Stratanet,
        Method::StratanetMul,
        Method::StratanetNoSt,
        Method::MdConf,
        Method::MspConf,
        Method::VanillaKaR,
        Method::VanillaKaCd,
        Method::Ensemble,
        Method::TeacherOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Stratanet => "stratanet",
            Method::StratanetMul => "stratanet_mul",
            Method::StratanetNoSt => "stratanet_noST",
            Method::MdConf => "md_conf",
            Method::MspConf => "msp_conf",
            Method::VanillaKaR => "vanilla_ka_R",
            Method::VanillaKaCd => "vanilla_ka_CD",
            Method::Ensemble => "ensemble",
            Method::TeacherOnly => "teacher_only",
        }
    }

    /// Training recipe, or `None` for inference-only baselines.
    pub fn recipe(self) -> Option<Recipe> {
        let base = Recipe {
            source: TransferSource::Pseudo,
            confidence: ConfidenceKind::Rmd,
            enrichment: Enrichment::Additive,
            fusion: Fusion::SelectiveTransformer,
            weighting: OutputWeighting::Confidence,
            output_only: false,
        };
        let vanilla = Recipe { weighting: OutputWeighting::Uniform, output_only: true, ..base };
        Some(match self {
            Method::Stratanet => base,
            Method::StratanetMul => Recipe { enrichment: Enrichment::Multiplicative, ..base },
            Method::StratanetNoSt => Recipe { fusion: Fusion::WeightedLinear, ..base },
            Method::MdConf => Recipe { confidence: ConfidenceKind::Md, ..base },
            Method::MspConf => Recipe { confidence: ConfidenceKind::Msp, ..base },
            Method::VanillaKaR => Recipe { source: TransferSource::Random, ..vanilla },
            Method::VanillaKaCd => Recipe { source: TransferSource::CrossDomain, ..vanilla },
            Method::Ensemble | Method::TeacherOnly => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    pub n_teachers: usize,
    pub mode: OverlapMode,
}

/// Teacher architectures; list entries are used cyclically, so one entry
/// makes all teachers alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub depths: Vec<usize>,
    pub d_models: Vec<usize>,
    pub n_heads: usize,
    pub ff_mult: usize,
    /// Training aborts if a teacher ends below this held-out accuracy.
    pub min_accuracy: f64,
    /// Fine-tune from a trunk pre-trained as a language model on the
    /// unlabeled corpus instead of a random init.
    #[serde(default = "enabled")]
    pub pretrained: bool,
}

fn enabled() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    /// Start from a pre-trained trunk instead of a random init.
    #[serde(default = "enabled")]
    pub pretrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    /// Unlabeled pre-training sequences.
    pub corpus_size: usize,
    /// Share of the pre-training corpus drawn from the cross-domain task.
    pub cross_domain_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmalgamConfig {
    pub lambda: f64,
    pub tau: f64,
    /// Relative covariance ridge of the confidence stats.
    pub ridge: f64,
    pub share_across_blocks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub teacher: TrainConfig,
    pub lm: TrainConfig,
    pub student: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub method: Method,
    pub task: TaskSpec,
    pub labels: LabelConfig,
    pub teachers: TeacherConfig,
    pub student: StudentConfig,
    pub lm: LmConfig,
    pub steer: SteerConfig,
    pub amalgam: AmalgamConfig,
    pub training: TrainingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = |epochs, lr| TrainConfig { epochs, batch_size: 32, lr, weight_decay: 0.01, warmup_epochs: 2, grad_clip: 1.0 };
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            method: Method::Stratanet,
            task: TaskSpec::default(),
            labels: LabelConfig { n_teachers: 2, mode: OverlapMode::Disjoint },
            teachers: TeacherConfig { depths: vec![4], d_models: vec![32], n_heads: 2, ff_mult: 2, min_accuracy: 0.9, pretrained: true },
            student: StudentConfig { n_layers: 3, d_model: 32, n_heads: 2, ff_mult: 2, pretrained: true },
            lm: LmConfig { n_layers: 2, d_model: 32, n_heads: 2, ff_mult: 2, corpus_size: 2000, cross_domain_share: 0.2 },
            steer: SteerConfig { n_samples: 400, heldout_fraction: 0.5, ..SteerConfig::default() },
            amalgam: AmalgamConfig { lambda: DEFAULT_LAMBDA, tau: DEFAULT_TAU, ridge: RIDGE, share_across_blocks: false },
            training: TrainingConfig { teacher: train(4, 3e-4), lm: train(10, 1e-3), student: train(20, 1e-3) },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("config file {} does not exist", path.display())));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Canonical TOML text; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(Config, "config version {} is not supported (expected {CONFIG_VERSION})", self.version);
        }
        self.task.validate()?;
        let k = self.labels.n_teachers;
        crate::corpus::assign_labels(self.task.n_classes, k, self.labels.mode)?;
        let t = &self.teachers;
        if t.depths.is_empty() || t.d_models.is_empty() {
            bail!(Config, "teacher depths and widths must not be empty");
        }
        for i in 0..k {
            self.teacher_spec(i, 2).validate()?;
        }
        if !(0.0..=1.0).contains(&t.min_accuracy) {
            bail!(Config, "teacher min_accuracy must lie in [0, 1]");
        }
        let min_depth = (0..k).map(|i| self.teacher_depth(i)).min().unwrap_or(0);
        if self.student.n_layers > min_depth {
            bail!(Config, "student depth {} exceeds the shallowest teacher ({min_depth} layers)", self.student.n_layers);
        }
        self.student_spec().validate()?;
        self.lm_spec().validate()?;
        if !(0.0..=1.0).contains(&self.lm.cross_domain_share) || self.lm.corpus_size == 0 {
            bail!(Config, "lm corpus_size must be positive and cross_domain_share in [0, 1]");
        }
        self.steer.validate(self.task.vocab_size)?;
        if self.steer.max_len > self.task.max_sequence_len() {
            bail!(Config, "steer.max_len {} exceeds the model context {}", self.steer.max_len, self.task.max_sequence_len());
        }
        crate::amalgam::check_lambda(self.amalgam.lambda).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.amalgam.tau > 0.0) || !(self.amalgam.ridge > 0.0) {
            bail!(Config, "tau and ridge must be positive");
        }
        self.training.teacher.validate()?;
        self.training.lm.validate()?;
        self.training.student.validate()?;
        Ok(())
    }

    pub fn teacher_depth(&self, i: usize) -> usize {
        self.teachers.depths[i % self.teachers.depths.len()]
    }

    pub fn teacher_width(&self, i: usize) -> usize {
        self.teachers.d_models[i % self.teachers.d_models.len()]
    }

    pub fn teacher_spec(&self, i: usize, n_classes: usize) -> ModelSpec {
        ModelSpec {
            ff_mult: self.teachers.ff_mult,
            ..ModelSpec::classifier(
                self.task.vocab_size,
                self.task.max_sequence_len(),
                self.teacher_depth(i),
                self.teacher_width(i),
                self.teachers.n_heads,
                n_classes,
            )
        }
    }

    pub fn student_spec(&self) -> ModelSpec {
        let s = &self.student;
        ModelSpec {
            ff_mult: s.ff_mult,
            ..ModelSpec::classifier(self.task.vocab_size, self.task.max_sequence_len(), s.n_layers, s.d_model, s.n_heads, self.task.n_classes)
        }
    }

    pub fn lm_spec(&self) -> ModelSpec {
        let l = &self.lm;
        ModelSpec { ff_mult: l.ff_mult, ..ModelSpec::causal_lm(self.task.vocab_size, self.task.max_sequence_len(), l.n_layers, l.d_model, l.n_heads) }
    }

    /// Use `k` teachers, resizing the label space so each teacher keeps the
    /// same number of classes.
    pub fn with_teachers(&self, k: usize) -> Result<Self> {
        if k == 0 {
            bail!(Config, "need at least one teacher");
        }
        let old = self.labels.n_teachers;
        let n = self.task.n_classes;
        let n_classes = match self.labels.mode {
            OverlapMode::Disjoint => n / old * k,
            OverlapMode::Partial => (n - 1) / old * k + 1,
        };
        let mut cfg = self.clone();
        cfg.labels.n_teachers = k;
        cfg.task.n_classes = n_classes;
        // keep the number of function tokens fixed
        cfg.task.vocab_size = (self.task.vocab_size + n_classes * self.task.topic_tokens).saturating_sub(n * self.task.topic_tokens);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of everything that shapes the shared artifacts (task, teachers,
    /// LM, pseudo-data, confidence stats). The run seed, student method and
    /// loss weight are excluded so that seeds and ablations share one run
    /// directory.
    pub fn artifact_key(&self) -> String {
        let mut shared = self.clone();
        shared.seed = 0;
        shared.method = Method::Stratanet;
        shared.amalgam.lambda = DEFAULT_LAMBDA;
        let digest = Sha256::digest(shared.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}
