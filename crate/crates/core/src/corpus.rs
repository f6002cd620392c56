//! Synthetic text-classification tasks and teacher label assignment.
//!
//! Each class owns a unigram topic: a fixed share of mass spread over a
//! dominant token set by one Dirichlet draw, the rest spread over every
//! other content token by another. Positions are drawn from the topic with probability
//! `topic_weight`, otherwise from a bigram "grammar" over function tokens
//! that all classes share, so class evidence accumulates over a prefix and a
//! language model has sequential structure to learn.
//!
//! Token ids `0` and `1` are reserved for begin and end of sequence.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::models::Token;
use crate::tensor::Rng;

pub const BOS: Token = 0;
pub const EOS: Token = 1;
pub const N_SPECIAL: usize = 2;
/// Fewest function tokens a vocabulary must keep outside the topic sets.
pub const MIN_FUNCTION_TOKENS: usize = 4;

/// How dominant token sets are laid out over the content vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicLayout {
    /// Class `c` owns the contiguous block `c * topic_tokens ..`.
    Blocks,
    /// Class `j` owns token `j` of every block, so its evidence is spread
    /// evenly over the dominant sets of the `Blocks` layout. With more
    /// classes than topic tokens, class `c` owns token `j` of block
    /// `(c + j) mod n_classes` instead.
    Interleaved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub n_classes: usize,
    pub vocab_size: usize,
    /// Content tokens per sequence (BOS/EOS excluded).
    pub min_len: usize,
    pub max_len: usize,
    /// Size of each class's dominant token block.
    pub topic_tokens: usize,
    /// Probability that a position is drawn from the class topic.
    pub topic_weight: f64,
    /// Share of topic mass on the dominant set.
    pub dominant_mass: f64,
    /// Per-token Dirichlet parameter within the dominant set.
    pub dominant_alpha: f64,
    /// Per-token Dirichlet parameter over the remaining content tokens;
    /// small values give sparse, class-specific spurious tokens.
    pub background_alpha: f64,
    pub train_per_class: usize,
    pub valid_per_class: usize,
    pub test_per_class: usize,
    /// Seed for topics and samples.
    pub seed: u64,
    /// Seed for the shared grammar; tasks with the same value share it.
    pub grammar_seed: u64,
    pub layout: TopicLayout,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            vocab_size: 64,
            min_len: 8,
            max_len: 14,
            topic_tokens: 6,
            topic_weight: 0.5,
            dominant_mass: 0.8,
            dominant_alpha: 5.0,
            background_alpha: 1.0,
            train_per_class: 300,
            valid_per_class: 50,
            test_per_class: 100,
            seed: 0,
            grammar_seed: 0,
            layout: TopicLayout::Blocks,
        }
    }
}

impl TaskSpec {
    /// Longest full sequence including BOS and EOS.
    pub fn max_sequence_len(&self) -> usize {
        self.max_len + 2
    }

    pub fn n_content(&self) -> usize {
        self.vocab_size.saturating_sub(N_SPECIAL)
    }

    /// Number of content tokens covered by dominant sets.
    pub fn n_dominant(&self) -> usize {
        self.n_classes * self.topic_tokens
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            bail!(Config, "a task needs at least 2 classes");
        }
        if self.topic_tokens == 0 || self.min_len == 0 || self.min_len > self.max_len {
            bail!(Config, "need 0 < min_len <= max_len and topic_tokens > 0");
        }
        if self.n_content() < self.n_dominant() + MIN_FUNCTION_TOKENS {
            bail!(
                Config,
                "vocabulary of {} is too small for {} classes x {} topic tokens plus {} function tokens",
                self.vocab_size,
                self.n_classes,
                self.topic_tokens,
                MIN_FUNCTION_TOKENS
            );
        }
        if !(0.0..=1.0).contains(&self.topic_weight) || !(0.0 < self.dominant_mass && self.dominant_mass < 1.0) {
            bail!(Config, "topic_weight must lie in [0,1] and dominant_mass in (0,1)");
        }
        if !(self.dominant_alpha > 0.0 && self.background_alpha > 0.0) {
            bail!(Config, "Dirichlet parameters must be positive");
        }
        Ok(())
    }

    /// A task over the same vocabulary and grammar whose topics spread
    /// evenly across this task's dominant sets.
    pub fn cross_domain(&self) -> TaskSpec {
        TaskSpec {
            seed: self.seed ^ 0xC0FF_EE00_D0D0,
            layout: TopicLayout::Interleaved,
            ..self.clone()
        }
    }

    /// Dominant content tokens of class `c`.
    pub fn dominant_tokens(&self, c: usize) -> Vec<Token> {
        let t = self.topic_tokens;
        let ids: Vec<usize> = match self.layout {
            TopicLayout::Blocks => (c * t..(c + 1) * t).collect(),
            TopicLayout::Interleaved if t >= self.n_classes => (0..self.n_classes).map(|b| b * t + c).collect(),
            TopicLayout::Interleaved => (0..t).map(|j| (c + j) % self.n_classes * t + j).collect(),
        };
        ids.into_iter().map(|i| (N_SPECIAL + i) as Token).collect()
    }

    pub fn function_tokens(&self) -> Vec<Token> {
        (N_SPECIAL + self.n_dominant()..self.vocab_size).map(|i| i as Token).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<Token>,
    pub label: usize,
}

/// The sampling process behind a [`TaskSpec`].
#[derive(Debug, Clone)]
pub struct Generator {
    spec: TaskSpec,
    /// Per-class distribution over the full vocabulary (specials have 0).
    topics: Vec<Vec<f64>>,
    /// Per content token, distribution over the full vocabulary.
    grammar: Vec<Vec<f64>>,
}

impl Generator {
    pub fn new(spec: &TaskSpec) -> Result<Self> {
        spec.validate()?;
        let v = spec.vocab_size;
        let mut trng = Rng::derive(spec.seed, &[1]);
        let topics = (0..spec.n_classes)
            .map(|c| {
                let dom = spec.dominant_tokens(c);
                let rest: Vec<Token> = (N_SPECIAL..v).map(|t| t as Token).filter(|t| !dom.contains(t)).collect();
                let pd = trng.dirichlet(&vec![spec.dominant_alpha; dom.len()]);
                let pr = trng.dirichlet(&vec![spec.background_alpha; rest.len()]);
                let mut p = vec![0.0; v];
                for (t, w) in dom.iter().zip(pd) {
                    p[*t as usize] = spec.dominant_mass * w;
                }
                for (t, w) in rest.iter().zip(pr) {
                    p[*t as usize] = (1.0 - spec.dominant_mass) * w;
                }
                p
            })
            .collect();
        let func = spec.function_tokens();
        let mut grng = Rng::derive(spec.grammar_seed, &[2]);
        let grammar = (0..v)
            .map(|_| {
                let row = grng.dirichlet(&vec![0.3; func.len()]);
                let mut p = vec![0.0; v];
                for (t, w) in func.iter().zip(row) {
                    p[*t as usize] = w;
                }
                p
            })
            .collect();
        Ok(Self { spec: spec.clone(), topics, grammar })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn topic(&self, c: usize) -> &[f64] {
        &self.topics[c]
    }

    /// One sequence of class `c`: BOS, content, EOS.
    pub fn sample(&self, c: usize, rng: &mut Rng) -> Vec<Token> {
        let len = rng.range_inclusive(self.spec.min_len, self.spec.max_len);
        let mut s = Vec::with_capacity(len + 2);
        s.push(BOS);
        for i in 0..len {
            let from_topic = i == 0 || rng.uniform() < self.spec.topic_weight;
            let dist = if from_topic { &self.topics[c] } else { &self.grammar[*s.last().unwrap() as usize] };
            s.push(rng.categorical(dist) as Token);
        }
        s.push(EOS);
        s
    }
}

/// Records who read a split, so tests can prove a code path never touched it.
#[derive(Debug, Default)]
pub struct AccessLog {
    entries: Mutex<Vec<String>>,
}

impl AccessLog {
    pub fn record(&self, who: &str) {
        self.entries.lock().expect("access log poisoned").push(who.to_string());
    }

    pub fn entries(&self) -> Vec<String> {
        self.entries.lock().expect("access log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("access log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A split whose every read is logged.
#[derive(Debug, Default)]
pub struct LoggedSplit {
    examples: Vec<Example>,
    log: AccessLog,
}

impl LoggedSplit {
    pub fn new(examples: Vec<Example>) -> Self {
        Self { examples, log: AccessLog::default() }
    }

    pub fn read(&self, who: &str) -> &[Example] {
        self.log.record(who);
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn log(&self) -> &AccessLog {
        &self.log
    }
}

#[derive(Debug)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: LoggedSplit,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// Sample a labeled task with class-balanced, mutually disjoint splits.
pub fn make_task(spec: &TaskSpec) -> Result<TaskData> {
    let gen = Generator::new(spec)?;
    let mut seen = HashSet::new();
    let mut split = |tag: u64, per_class: usize| -> Result<Vec<Example>> {
        let mut out = Vec::with_capacity(per_class * spec.n_classes);
        for c in 0..spec.n_classes {
            let mut rng = Rng::derive(spec.seed, &[3, tag, c as u64]);
            let mut made = 0;
            let mut attempts = 0;
            while made < per_class {
                attempts += 1;
                if attempts > per_class * 50 + 1000 {
                    bail!(Config, "could not draw {per_class} distinct sequences for class {c}; lengthen sequences");
                }
                let tokens = gen.sample(c, &mut rng);
                if seen.insert(tokens.clone()) {
                    out.push(Example { tokens, label: c });
                    made += 1;
                }
            }
        }
        Ok(out)
    };
    let train = split(0, spec.train_per_class)?;
    let valid = split(1, spec.valid_per_class)?;
    let test = split(2, spec.test_per_class)?;
    Ok(TaskData { spec: spec.clone(), train: LoggedSplit::new(train), valid, test })
}

/// Unlabeled text for pre-training the base language model: the task's
/// classes mixed uniformly plus a share of cross-domain text.
pub fn pretraining_corpus(spec: &TaskSpec, n: usize, cross_domain_share: f64, seed: u64) -> Result<Vec<Vec<Token>>> {
    let gen = Generator::new(spec)?;
    let cd = Generator::new(&spec.cross_domain())?;
    let mut rng = Rng::derive(seed, &[4]);
    Ok((0..n)
        .map(|_| {
            let g = if rng.uniform() < cross_domain_share { &cd } else { &gen };
            let c = rng.below(g.spec().n_classes);
            g.sample(c, &mut rng)
        })
        .collect())
}

/// Sequences of uniformly random content tokens.
pub fn random_text(vocab_size: usize, min_len: usize, max_len: usize, n: usize, seed: u64) -> Vec<Vec<Token>> {
    let mut rng = Rng::derive(seed, &[5]);
    (0..n)
        .map(|_| {
            let len = rng.range_inclusive(min_len, max_len);
            let mut s = vec![BOS];
            s.extend((0..len).map(|_| (N_SPECIAL + rng.below(vocab_size - N_SPECIAL)) as Token));
            s.push(EOS);
            s
        })
        .collect()
}

/// Labeled samples from another task (typically [`TaskSpec::cross_domain`]).
pub fn cross_domain_text(other: &TaskSpec, n: usize, seed: u64) -> Result<Vec<Example>> {
    let gen = Generator::new(other)?;
    let mut rng = Rng::derive(seed, &[6]);
    Ok((0..n)
        .map(|i| {
            let label = i % other.n_classes;
            Example { tokens: gen.sample(label, &mut rng), label }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    Disjoint,
    Partial,
}

/// Per-teacher label subsets of the union label set `0..n_labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub n_labels: usize,
    pub mode: OverlapMode,
    pub subsets: Vec<Vec<usize>>,
}

fn near_equal(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Split `0..n_labels` among `k` teachers. Disjoint subsets are contiguous
/// and near-equal; partial subsets additionally share one label with each
/// neighbour.
pub fn assign_labels(n_labels: usize, k: usize, mode: OverlapMode) -> Result<LabelAssignment> {
    if k == 0 {
        bail!(Config, "need at least one teacher");
    }
    let subsets = match mode {
        OverlapMode::Disjoint => {
            if n_labels < 2 * k {
                bail!(Config, "cannot split {n_labels} labels into {k} disjoint subsets of size >= 2");
            }
            let mut start = 0;
            near_equal(n_labels, k)
                .into_iter()
                .map(|size| {
                    let s: Vec<usize> = (start..start + size).collect();
                    start += size;
                    s
                })
                .collect()
        }
        OverlapMode::Partial => {
            if n_labels < k + 1 {
                bail!(Config, "cannot split {n_labels} labels into {k} overlapping subsets of size >= 2");
            }
            // consecutive subsets share their boundary label
            let mut start = 0;
            near_equal(n_labels - 1, k)
                .into_iter()
                .map(|span| {
                    let s: Vec<usize> = (start..=start + span).collect();
                    start += span;
                    s
                })
                .collect()
        }
    };
    Ok(LabelAssignment { n_labels, mode, subsets })
}

impl LabelAssignment {
    pub fn k(&self) -> usize {
        self.subsets.len()
    }

    pub fn label_map(&self, teacher: usize) -> LabelMap {
        LabelMap { union_of_local: self.subsets[teacher].clone(), n_union: self.n_labels }
    }

    pub fn label_maps(&self) -> Vec<LabelMap> {
        (0..self.k()).map(|i| self.label_map(i)).collect()
    }
}

/// A teacher's local class indices mapped into the union label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub union_of_local: Vec<usize>,
    pub n_union: usize,
}

impl LabelMap {
    pub fn n_local(&self) -> usize {
        self.union_of_local.len()
    }

    pub fn to_union(&self, local: usize) -> usize {
        self.union_of_local[local]
    }

    pub fn to_local(&self, union: usize) -> Option<usize> {
        self.union_of_local.iter().position(|&u| u == union)
    }

    /// Embed a local distribution into the union simplex with zeros outside
    /// this teacher's labels.
    pub fn embed(&self, local: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_union];
        for (j, &p) in local.iter().enumerate() {
            out[self.union_of_local[j]] += p;
        }
        out
    }
}

/// Examples of `data` whose labels belong to `map`, re-indexed locally.
pub fn teacher_subset(data: &[Example], map: &LabelMap) -> Vec<(Vec<Token>, usize)> {
    data.iter().filter_map(|e| map.to_local(e.label).map(|l| (e.tokens.clone(), l))).collect()
}

/// Multinomial naive Bayes over token counts; a linear bag-of-words probe.
#[derive(Debug, Clone)]
pub struct BowProbe {
    log_prior: Vec<f64>,
    log_lik: Vec<Vec<f64>>,
}

impl BowProbe {
    pub fn fit(data: &[Example], n_classes: usize, vocab_size: usize) -> Self {
        let mut counts = vec![vec![1.0; vocab_size]; n_classes];
        let mut class_n = vec![1.0; n_classes];
        for e in data {
            class_n[e.label] += 1.0;
            for &t in &e.tokens {
                counts[e.label][t as usize] += 1.0;
            }
        }
        let total: f64 = class_n.iter().sum();
        let log_prior = class_n.iter().map(|n| (n / total).ln()).collect();
        let log_lik = counts
            .into_iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.into_iter().map(|c| (c / s).ln()).collect()
            })
            .collect();
        Self { log_prior, log_lik }
    }

    pub fn predict(&self, tokens: &[Token]) -> usize {
        let scores: Vec<f64> = self
            .log_prior
            .iter()
            .zip(&self.log_lik)
            .map(|(p, ll)| p + tokens.iter().map(|&t| ll[t as usize]).sum::<f64>())
            .collect();
        crate::tensor::argmax(&scores)
    }

    pub fn accuracy(&self, data: &[Example]) -> f64 {
        let hits = data.iter().filter(|e| self.predict(&e.tokens) == e.label).count();
        hits as f64 / data.len().max(1) as f64
    }
}

/// Write examples as `label<TAB>space-separated token ids` lines.
pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in examples {
        let toks: Vec<String> = e.tokens.iter().map(ToString::to_string).collect();
        writeln!(w, "{}\t{}", e.label, toks.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<Example>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bad = |line: usize, why: &str| Error::CorruptArtifact { path: path.to_path_buf(), reason: format!("line {line}: {why}") };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (label, toks) = line.split_once('\t').ok_or_else(|| bad(i + 1, "missing tab"))?;
        let label = label.parse().map_err(|_| bad(i + 1, "bad label"))?;
        let tokens = toks
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<Token>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(i + 1, "bad token id"))?;
        out.push(Example { tokens, label });
    }
    Ok(out)
}

/// Sidecar manifest stored next to serialized splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub format_version: u32,
    pub task: TaskSpec,
    pub assignment: LabelAssignment,
    pub label_maps: Vec<LabelMap>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> TaskSpec {
        TaskSpec { train_per_class: 100, valid_per_class: 20, test_per_class: 60, ..TaskSpec::default() }
    }

    #[test]
    fn same_seed_same_task() {
        let a = make_task(&small_spec()).unwrap();
        let b = make_task(&small_spec()).unwrap();
        assert_eq!(a.train.read("test"), b.train.read("test"));
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn splits_are_disjoint_and_balanced() {
        let t = make_task(&small_spec()).unwrap();
        let train: HashSet<_> = t.train.read("test").iter().map(|e| e.tokens.clone()).collect();
        let valid: HashSet<_> = t.valid.iter().map(|e| e.tokens.clone()).collect();
        assert!(t.test.iter().all(|e| !train.contains(&e.tokens) && !valid.contains(&e.tokens)));
        assert!(valid.is_disjoint(&train));
        for c in 0..4 {
            let share = t.test.iter().filter(|e| e.label == c).count() as f64 / t.test.len() as f64;
            assert!((share - 0.25).abs() <= 0.05);
        }
    }

    #[test]
    fn two_separated_classes_are_probe_learnable() {
        let spec = TaskSpec { n_classes: 2, ..small_spec() };
        let t = make_task(&spec).unwrap();
        let probe = BowProbe::fit(t.train.read("probe"), 2, spec.vocab_size);
        assert!(probe.accuracy(&t.test) >= 0.95);
    }

    #[test]
    fn interleaved_sets_are_disjoint_and_spread() {
        for n_classes in [4, 6, 8] {
            let spec = TaskSpec { n_classes, vocab_size: 80, ..TaskSpec::default() }.cross_domain();
            spec.validate().unwrap();
            let sets: Vec<Vec<Token>> = (0..n_classes).map(|c| spec.dominant_tokens(c)).collect();
            let all: HashSet<Token> = sets.iter().flatten().copied().collect();
            assert_eq!(all.len(), sets.iter().map(Vec::len).sum::<usize>());
            assert!(all.iter().all(|&x| (x as usize) < N_SPECIAL + spec.n_dominant()));
            let width = n_classes.min(spec.topic_tokens);
            for s in &sets {
                let blocks: HashSet<usize> = s.iter().map(|&x| (x as usize - N_SPECIAL) / spec.topic_tokens).collect();
                assert_eq!((s.len(), blocks.len()), (width, width));
            }
        }
    }

    #[test]
    fn vocab_too_small_is_rejected() {
        let spec = TaskSpec { vocab_size: 20, ..TaskSpec::default() };
        assert!(matches!(make_task(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn label_assignment_examples() {
        let a = assign_labels(4, 2, OverlapMode::Disjoint).unwrap();
        assert_eq!(a.subsets, vec![vec![0, 1], vec![2, 3]]);
        let a = assign_labels(5, 2, OverlapMode::Partial).unwrap();
        assert_eq!(a.subsets, vec![vec![0, 1, 2], vec![2, 3, 4]]);
        let a = assign_labels(6, 3, OverlapMode::Disjoint).unwrap();
        assert_eq!(a.subsets, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        let a = assign_labels(6, 2, OverlapMode::Disjoint).unwrap();
        assert!(a.subsets.iter().all(|s| s.len() == 3));
        assert!(assign_labels(3, 2, OverlapMode::Disjoint).is_err());
        assert!(assign_labels(2, 2, OverlapMode::Partial).is_err());
    }

    #[test]
    fn random_text_is_reproducible_and_bounded() {
        let a = random_text(64, 5, 9, 50, 3);
        assert_eq!(a, random_text(64, 5, 9, 50, 3));
        assert!(a.iter().all(|s| (7..=11).contains(&s.len()) && s[0] == BOS && *s.last().unwrap() == EOS));
    }

    #[test]
    fn label_map_embedding() {
        let a = assign_labels(5, 2, OverlapMode::Partial).unwrap();
        let m = a.label_map(1);
        assert_eq!(m.embed(&[0.2, 0.3, 0.5]), vec![0.0, 0.0, 0.2, 0.3, 0.5]);
        assert_eq!(m.to_local(3), Some(1));
        assert_eq!(m.to_local(0), None);
    }

    #[test]
    fn examples_round_trip_through_line_format() {
        let dir = tempfile::tempdir().unwrap();
        let t = make_task(&small_spec()).unwrap();
        let p = dir.path().join("test.tsv");
        write_examples(&p, &t.test).unwrap();
        assert_eq!(read_examples(&p).unwrap(), t.test);
        let first = fs::read_to_string(&p).unwrap();
        let line = first.lines().next().unwrap();
        assert!(line.starts_with("0\t0 "));
    }

    #[test]
    fn reading_is_logged() {
        let t = make_task(&small_spec()).unwrap();
        assert!(t.train.log().is_empty());
        let _ = t.train.read("teacher 0");
        assert_eq!(t.train.log().entries(), vec!["teacher 0".to_string()]);
    }
}
