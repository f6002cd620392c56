//! Block-wise amalgamation of teacher features into student targets.
//!
//! Each teacher's layers are grouped into as many contiguous blocks as the
//! student has layers. A teacher's pooled block vector is enriched with its
//! confidence for that input, the enriched vectors of all teachers are fused
//! by one transformer layer through a learnable summary token, and the
//! student's projected block vector is pulled towards the fused target. The
//! student's logits separately match a confidence-weighted mixture of the
//! teachers' softened, zero-padded distributions.

mod student;

use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::models::checkpoint::{architecture, fill_store, load_tensors, manifest_path, save_store};
use crate::models::{Linear, TransformerLayer};
use crate::tensor::{softmax_slice, ParamId, ParamStore, Rng, Segment, Tape, Tensor, Var};

pub use student::{
    build_features, select_rows, student_batch_loss, teacher_block_features, train_student, LossCounts, OutputWeighting,
    TeacherInputs, TransferFeatures,
};

/// Default weight of the block loss against the output loss.
pub const DEFAULT_LAMBDA: f64 = 0.65;
/// Default distillation temperature.
pub const DEFAULT_TAU: f64 = 0.75;
/// Largest tolerated deviation of mixture weights from a unit sum.
pub const WEIGHT_TOL: f64 = 1e-6;

/// Contiguous 0-based layer ranges of one teacher, one per block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub ranges: Vec<Range<usize>>,
}

/// Split `n_layers` into `n_blocks` contiguous blocks; the first
/// `n_layers % n_blocks` blocks take one extra layer.
pub fn partition(n_layers: usize, n_blocks: usize) -> Result<BlockPartition> {
    if n_blocks == 0 || n_layers < n_blocks {
        bail!(InvalidArgument, "cannot split {n_layers} layers into {n_blocks} blocks");
    }
    let (base, extra) = (n_layers / n_blocks, n_layers % n_blocks);
    let mut start = 0;
    let ranges = (0..n_blocks)
        .map(|b| {
            let len = base + usize::from(b < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect();
    Ok(BlockPartition { ranges })
}

impl BlockPartition {
    pub fn n_blocks(&self) -> usize {
        self.ranges.len()
    }

    pub fn n_layers(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// Pool per-layer vectors into per-block vectors.
    pub fn pool(&self, layer_reps: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if layer_reps.len() != self.n_layers() {
            bail!(Shape, "{} layer vectors for a partition of {} layers", layer_reps.len(), self.n_layers());
        }
        self.ranges.iter().map(|r| crate::models::pool_block(&layer_reps[r.clone()])).collect()
    }
}

/// Blocks as 1-based inclusive layer ranges, e.g. `[1-3][4-6][7-8]`.
impl fmt::Display for BlockPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.ranges {
            if r.len() == 1 {
                write!(f, "[{}]", r.start + 1)?;
            } else {
                write!(f, "[{}-{}]", r.start + 1, r.end)?;
            }
        }
        Ok(())
    }
}

/// How a confidence enters a teacher's block vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enrichment {
    /// `f(h) + g(c)`.
    Additive,
    /// `c * f(h)`.
    Multiplicative,
}

/// How enriched teacher vectors become one block target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// One transformer layer over `[summary, z_1..z_K]`, read at the summary.
    SelectiveTransformer,
    /// A linear map of the confidence-softmax-weighted sum of the `z_i`.
    WeightedLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmalgamSpec {
    /// Width of each teacher's block vectors.
    pub teacher_dims: Vec<usize>,
    pub n_blocks: usize,
    pub d_student: usize,
    /// Width of enriched and fused vectors.
    pub d_amalg: usize,
    pub heads: usize,
    pub ff_mult: usize,
    /// One `f`/`g` pair per teacher instead of per (teacher, block).
    pub share_across_blocks: bool,
    pub enrichment: Enrichment,
    pub fusion: Fusion,
}

impl AmalgamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.teacher_dims.is_empty() {
            bail!(InvalidArgument, "amalgamation needs at least one teacher");
        }
        if self.n_blocks == 0 || self.d_student == 0 || self.d_amalg == 0 || self.teacher_dims.contains(&0) {
            bail!(Config, "amalgamation widths and block count must be positive");
        }
        if self.heads == 0 || self.d_amalg % self.heads != 0 {
            bail!(Config, "fusion width {} is not divisible by {} heads", self.d_amalg, self.heads);
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.teacher_dims.len()
    }
}

/// Parameter layout of the enrichment, fusion and projection maps.
#[derive(Debug, Clone)]
pub struct AmalgamArch {
    pub spec: AmalgamSpec,
    /// `f[i][b]` and `g[i][b]`; shared maps repeat across `b`.
    f: Vec<Vec<Linear>>,
    g: Vec<Vec<Linear>>,
    summary: ParamId,
    fusion: Option<TransformerLayer>,
    mix: Vec<Linear>,
    proj: Vec<Linear>,
}

impl AmalgamArch {
    pub fn new(spec: AmalgamSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let (da, nb) = (spec.d_amalg, spec.n_blocks);
        let mut f = Vec::with_capacity(spec.k());
        let mut g = Vec::with_capacity(spec.k());
        for (i, &di) in spec.teacher_dims.iter().enumerate() {
            let (mut fi, mut gi) = (Vec::<Linear>::with_capacity(nb), Vec::<Linear>::with_capacity(nb));
            for b in 0..nb {
                if spec.share_across_blocks && b > 0 {
                    fi.push(fi[0].clone());
                    gi.push(gi[0].clone());
                } else {
                    let tag = if spec.share_across_blocks { format!("t{i}") } else { format!("t{i}.b{b}") };
                    fi.push(Linear::xavier(store, &format!("enrich.{tag}.f"), di, da, rng));
                    gi.push(Linear::xavier(store, &format!("enrich.{tag}.g"), 1, da, rng));
                }
            }
            f.push(fi);
            g.push(gi);
        }
        let summary = store.add("fusion.summary_token", Tensor::new(vec![1, da], rng.normal_vec(da, 0.1))?);
        let (fusion, mix) = match spec.fusion {
            Fusion::SelectiveTransformer => {
                (Some(TransformerLayer::new(store, "fusion.layer", da, da * spec.ff_mult, spec.heads, rng)), Vec::new())
            }
            Fusion::WeightedLinear => (None, (0..nb).map(|b| Linear::xavier(store, &format!("fusion.mix.b{b}"), da, da, rng)).collect()),
        };
        let proj = (0..nb).map(|b| Linear::xavier(store, &format!("project.b{b}"), spec.d_student, da, rng)).collect();
        Ok(Self { spec, f, g, summary, fusion, mix, proj })
    }

    /// Enriched block vectors `[S, d_amalg]` of teacher `i` at block `b` from
    /// block vectors `h: [S, d_i]` and standardized confidences `c: [S, 1]`.
    pub fn enrich(&self, tape: &mut Tape, store: &ParamStore, i: usize, b: usize, h: Var, c: Var) -> Result<Var> {
        let fh = self.f[i][b].forward(tape, store, h)?;
        match self.spec.enrichment {
            Enrichment::Additive => {
                let gc = self.g[i][b].forward(tape, store, c)?;
                tape.add(fh, gc)
            }
            Enrichment::Multiplicative => tape.scale_rows(fh, c),
        }
    }

    /// Fuse `K` enriched `[S, d_amalg]` inputs through the summary token.
    /// Teacher order does not matter: the fused sequence has no positions.
    pub fn st_amalg(&self, tape: &mut Tape, store: &ParamStore, zs: &[Var]) -> Result<Var> {
        let Some(layer) = &self.fusion else { bail!(InvalidArgument, "this network fuses without a transformer") };
        let Some(&first) = zs.first() else { bail!(InvalidArgument, "no teacher vectors to fuse") };
        let s = tape.value(first).rows();
        let k = zs.len();
        let e = tape.param(store, self.summary)?;
        let e_rows = tape.gather_rows(e, &vec![0; s])?;
        let mut parts = Vec::with_capacity(k + 1);
        parts.push(e_rows);
        parts.extend_from_slice(zs);
        let stacked = tape.concat_rows(&parts)?;
        // group the k + 1 rows of each sample together
        let order: Vec<usize> = (0..s).flat_map(|r| (0..=k).map(move |t| t * s + r)).collect();
        let seq = tape.gather_rows(stacked, &order)?;
        let out = layer.forward(tape, store, seq, &Segment::tile(vec![k + 1; s]), false)?;
        let rows: Vec<usize> = (0..s).map(|r| r * (k + 1)).collect();
        tape.gather_rows(out, &rows)
    }

    /// Block-`b` target from enriched inputs; `weights[i]` holds per-sample
    /// mixture weights, used only by [`Fusion::WeightedLinear`].
    pub fn fuse(&self, tape: &mut Tape, store: &ParamStore, b: usize, zs: &[Var], weights: &[Vec<f64>]) -> Result<Var> {
        match self.spec.fusion {
            Fusion::SelectiveTransformer => self.st_amalg(tape, store, zs),
            Fusion::WeightedLinear => {
                if weights.len() != zs.len() {
                    bail!(Shape, "{} weight columns for {} teachers", weights.len(), zs.len());
                }
                let mut acc: Option<Var> = None;
                for (z, w) in zs.iter().zip(weights) {
                    let wv = tape.constant(Tensor::vector(w.clone()))?;
                    let term = tape.scale_rows(*z, wv)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => tape.add(a, term)?,
                    });
                }
                let Some(sum) = acc else { bail!(InvalidArgument, "no teacher vectors to fuse") };
                self.mix[b].forward(tape, store, sum)
            }
        }
    }

    /// Student block vector `[S, d_student]` mapped into the fused space.
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, b: usize, h: Var) -> Result<Var> {
        self.proj[b].forward(tape, store, h)
    }
}

/// Trainable amalgamation maps with their values.
#[derive(Debug, Clone)]
pub struct AmalgamNet {
    pub arch: AmalgamArch,
    pub params: ParamStore,
}

impl AmalgamNet {
    pub fn init(spec: AmalgamSpec, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let arch = AmalgamArch::new(spec, &mut params, &mut Rng::new(seed))?;
        Ok(Self { arch, params })
    }

    pub fn spec(&self) -> &AmalgamSpec {
        &self.arch.spec
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        save_store(dir, name, &self.arch.spec, &self.params)
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (manifest, tensors) = load_tensors(dir, name)?;
        let source = manifest_path(dir, name);
        let spec: AmalgamSpec = architecture(&manifest, &source)?;
        let mut net = Self::init(spec, 0)?;
        fill_store(&mut net.params, tensors, &source)?;
        Ok(net)
    }
}

/// `sum_b mean_s |projected_b[s] - target_b[s]|^2`.
pub fn amal_loss(tape: &mut Tape, projected: &[Var], targets: &[Var]) -> Result<Var> {
    if projected.len() != targets.len() || projected.is_empty() {
        bail!(Shape, "{} student blocks against {} targets", projected.len(), targets.len());
    }
    let mut total: Option<Var> = None;
    for (&p, &t) in projected.iter().zip(targets) {
        let s = tape.value(p).rows() as f64;
        let d = tape.sub(p, t)?;
        let sq = tape.mul(d, d)?;
        let sum = tape.sum(sq)?;
        let term = tape.scale(sum, 1.0 / s)?;
        total = Some(match total {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(total.expect("at least one block"))
}

/// Softmax over teachers of their standardized confidences.
pub fn confidence_weights(confidences: &[f64]) -> Vec<f64> {
    softmax_slice(confidences, 1.0)
}

/// `sum_i w_i p_i` over union-space teacher distributions.
pub fn mixture_target(teacher_probs: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if teacher_probs.len() != weights.len() || teacher_probs.is_empty() {
        bail!(Shape, "{} teacher distributions for {} weights", teacher_probs.len(), weights.len());
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL || weights.iter().any(|w| *w < 0.0) {
        bail!(InvalidArgument, "mixture weights must be non-negative and sum to 1, got sum {total}");
    }
    let n = teacher_probs[0].len();
    let mut out = vec![0.0; n];
    for (p, w) in teacher_probs.iter().zip(weights) {
        if p.len() != n {
            bail!(Shape, "teacher distributions differ in width");
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// `tau^2 * KL(target || softmax(student_logits / tau))`, batch-averaged.
pub fn out_loss(tape: &mut Tape, target: Var, student_logits: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        bail!(InvalidArgument, "temperature must be positive, got {tau}");
    }
    let q = tape.softmax(student_logits, tau)?;
    let kl = tape.kl_divergence(target, q)?;
    tape.scale(kl, tau * tau)
}

/// `lambda * amal + (1 - lambda) * out`.
pub fn total_loss(tape: &mut Tape, amal: Var, out: Var, lambda: f64) -> Result<Var> {
    check_lambda(lambda)?;
    let a = tape.scale(amal, lambda)?;
    let o = tape.scale(out, 1.0 - lambda)?;
    tape.add(a, o)
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        bail!(InvalidArgument, "lambda must lie in [0, 1], got {lambda}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, fusion: Fusion, enrichment: Enrichment) -> AmalgamSpec {
        AmalgamSpec {
            teacher_dims: (0..k).map(|i| 3 + i).collect(),
            n_blocks: 2,
            d_student: 4,
            d_amalg: 4,
            heads: 2,
            ff_mult: 2,
            share_across_blocks: false,
            enrichment,
            fusion,
        }
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition(6, 3).unwrap().to_string(), "[1-2][3-4][5-6]");
        assert_eq!(partition(8, 3).unwrap().to_string(), "[1-3][4-6][7-8]");
        assert_eq!(partition(4, 4).unwrap().to_string(), "[1][2][3][4]");
        assert!(partition(2, 3).is_err());
        assert!(partition(2, 0).is_err());
    }

    #[test]
    fn block_pooling_follows_partition() {
        let p = partition(3, 2).unwrap();
        let reps = vec![vec![1.0], vec![3.0], vec![10.0]];
        assert_eq!(p.pool(&reps).unwrap(), vec![vec![2.0], vec![10.0]]);
        assert!(p.pool(&reps[..2]).is_err());
    }

    fn zero_store(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn enrichment_with_zero_weights_is_bias_sum() {
        let mut net = AmalgamNet::init(spec(1, Fusion::SelectiveTransformer, Enrichment::Additive), 1).unwrap();
        zero_store(&mut net.params);
        let fb = net.params.find("enrich.t0.b0.f.bias").unwrap();
        let gb = net.params.find("enrich.t0.b0.g.bias").unwrap();
        *net.params.value_mut(fb) = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        *net.params.value_mut(gb) = Tensor::vector(vec![0.5, 0.5, -1.0, 0.0]);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(1, 3, vec![7.0, -2.0, 1.0]).unwrap()).unwrap();
        let c = tape.constant(Tensor::matrix(1, 1, vec![3.0]).unwrap()).unwrap();
        let z = net.arch.enrich(&mut tape, &net.params, 0, 0, h, c).unwrap();
        assert_eq!(tape.value(z).data(), &[1.5, 2.5, 2.0, 4.0]);
    }

    #[test]
    fn enrichment_matches_hand_arithmetic() {
        let net = AmalgamNet::init(spec(1, Fusion::SelectiveTransformer, Enrichment::Additive), 2).unwrap();
        let p = &net.params;
        let get = |n: &str| p.value(p.find(n).unwrap()).data().to_vec();
        let (fw, fb, gw, gb) = (get("enrich.t0.b1.f.weight"), get("enrich.t0.b1.f.bias"), get("enrich.t0.b1.g.weight"), get("enrich.t0.b1.g.bias"));
        let h = [0.3, -1.2, 2.0];
        let c = -0.7;
        let mut tape = Tape::new();
        let hv = tape.constant(Tensor::matrix(1, 3, h.to_vec()).unwrap()).unwrap();
        let cv = tape.constant(Tensor::matrix(1, 1, vec![c]).unwrap()).unwrap();
        let z = net.arch.enrich(&mut tape, p, 0, 1, hv, cv).unwrap();
        for j in 0..4 {
            let want = (0..3).map(|r| h[r] * fw[r * 4 + j]).sum::<f64>() + fb[j] + c * gw[j] + gb[j];
            assert!((tape.value(z).data()[j] - want).abs() < 1e-14);
        }
        // zero confidence leaves f(h) plus the g bias
        let mut tape = Tape::new();
        let hv = tape.constant(Tensor::matrix(1, 3, h.to_vec()).unwrap()).unwrap();
        let cv = tape.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
        let z = net.arch.enrich(&mut tape, p, 0, 1, hv, cv).unwrap();
        for j in 0..4 {
            let want = (0..3).map(|r| h[r] * fw[r * 4 + j]).sum::<f64>() + fb[j] + gb[j];
            assert!((tape.value(z).data()[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn multiplicative_enrichment_scales_f() {
        let net = AmalgamNet::init(spec(1, Fusion::SelectiveTransformer, Enrichment::Multiplicative), 3).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        let one = tape.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let two = tape.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap()).unwrap();
        let a = net.arch.enrich(&mut tape, &net.params, 0, 0, h, one).unwrap();
        let b = net.arch.enrich(&mut tape, &net.params, 0, 0, h, two).unwrap();
        for (x, y) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            assert!((2.0 * x - y).abs() < 1e-14);
        }
    }

    fn fused(net: &AmalgamNet, zs: &[Tensor]) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = zs.iter().map(|z| tape.constant(z.clone()).unwrap()).collect();
        let out = net.arch.st_amalg(&mut tape, &net.params, &vars).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn st_amalg_ignores_teacher_order() {
        let net = AmalgamNet::init(spec(3, Fusion::SelectiveTransformer, Enrichment::Additive), 4).unwrap();
        let mut rng = Rng::new(5);
        let zs: Vec<Tensor> = (0..3).map(|_| Tensor::matrix(2, 4, rng.normal_vec(8, 1.0)).unwrap()).collect();
        let base = fused(&net, &zs);
        for perm in [[0, 2, 1], [1, 0, 2], [2, 1, 0], [1, 2, 0]] {
            let p: Vec<Tensor> = perm.iter().map(|&i| zs[i].clone()).collect();
            for (a, b) in base.iter().zip(fused(&net, &p)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        // one teacher: repeatable
        assert_eq!(fused(&net, &zs[..1]), fused(&net, &zs[..1]));
        // two equal inputs
        let twin = vec![zs[0].clone(), zs[0].clone()];
        assert_eq!(fused(&net, &twin), fused(&net, &twin));
        let mut tape = Tape::new();
        assert!(net.arch.st_amalg(&mut tape, &net.params, &[]).is_err());
    }

    #[test]
    fn st_amalg_rows_are_independent_samples() {
        let net = AmalgamNet::init(spec(2, Fusion::SelectiveTransformer, Enrichment::Additive), 6).unwrap();
        let mut rng = Rng::new(7);
        let zs: Vec<Tensor> = (0..2).map(|_| Tensor::matrix(3, 4, rng.normal_vec(12, 1.0)).unwrap()).collect();
        let batch = fused(&net, &zs);
        for r in 0..3 {
            let single: Vec<Tensor> = zs.iter().map(|z| Tensor::matrix(1, 4, z.row(r).to_vec()).unwrap()).collect();
            for (a, b) in batch[r * 4..(r + 1) * 4].iter().zip(fused(&net, &single)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn amal_loss_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap()).unwrap();
        let t = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()).unwrap();
        let l = amal_loss(&mut tape, &[p], &[t]).unwrap();
        assert_eq!(tape.value(l).item(), 25.0);
        let l = amal_loss(&mut tape, &[p], &[p]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        assert!(amal_loss(&mut tape, &[p, p], &[t]).is_err());
        // two blocks, batch of two
        let mut rng = Rng::new(9);
        let (a, b, c, d) = (rng.normal_vec(6, 1.0), rng.normal_vec(6, 1.0), rng.normal_vec(6, 1.0), rng.normal_vec(6, 1.0));
        let vars: Vec<Var> = [&a, &b, &c, &d].iter().map(|v| tape.constant(Tensor::matrix(2, 3, v.to_vec()).unwrap()).unwrap()).collect();
        let l = amal_loss(&mut tape, &[vars[0], vars[2]], &[vars[1], vars[3]]).unwrap();
        let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        let want = sq(&a, &b) / 2.0 + sq(&c, &d) / 2.0;
        assert!((tape.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn output_loss_examples() {
        // one teacher over all labels, student equal to it
        let logits = vec![0.4, -1.0, 2.0];
        let target = softmax_slice(&logits, DEFAULT_TAU);
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::matrix(1, 3, target).unwrap()).unwrap();
        let s = tape.constant(Tensor::matrix(1, 3, logits).unwrap()).unwrap();
        let l = out_loss(&mut tape, t, s, DEFAULT_TAU).unwrap();
        assert!(tape.value(l).item().abs() < 1e-15);

        // saturated confidences pick teacher 1
        let w = confidence_weights(&[10.0, -10.0]);
        assert!(w[0] > 1.0 - 1e-8);
        let p1 = vec![0.7, 0.3, 0.0, 0.0];
        let mix = mixture_target(&[p1.clone(), vec![0.0, 0.0, 0.4, 0.6]], &w).unwrap();
        assert!(mix.iter().zip(&p1).all(|(a, b)| (a - b).abs() < 1e-8));

        // two disjoint two-class teachers, equal weights, hand-set logits
        let t1 = softmax_slice(&[1.0, -1.0], DEFAULT_TAU);
        let t2 = softmax_slice(&[0.5, 2.0], DEFAULT_TAU);
        let mix = mixture_target(&[vec![t1[0], t1[1], 0.0, 0.0], vec![0.0, 0.0, t2[0], t2[1]]], &[0.5, 0.5]).unwrap();
        let student = [0.2, 0.1, -0.3, 0.8];
        let q = softmax_slice(&student, DEFAULT_TAU);
        let want: f64 = mix.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>() * DEFAULT_TAU * DEFAULT_TAU;
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::matrix(1, 4, mix).unwrap()).unwrap();
        let s = tape.constant(Tensor::matrix(1, 4, student.to_vec()).unwrap()).unwrap();
        let l = out_loss(&mut tape, t, s, DEFAULT_TAU).unwrap();
        assert!((tape.value(l).item() - want).abs() < 1e-14);
        assert!(tape.value(l).item() > 0.0);

        assert!(mixture_target(&[vec![1.0], vec![1.0]], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn total_loss_is_convex_combination() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(2.0)).unwrap();
        let o = tape.constant(Tensor::scalar(4.0)).unwrap();
        let l = total_loss(&mut tape, a, o, 0.65).unwrap();
        assert!((tape.value(l).item() - 2.7).abs() < 1e-12);
        let l = total_loss(&mut tape, a, o, 0.0).unwrap();
        assert_eq!(tape.value(l).item(), 4.0);
        let l = total_loss(&mut tape, a, o, 1.0).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        assert!(total_loss(&mut tape, a, o, 1.5).is_err());
    }

    #[test]
    fn weighted_linear_fusion_uses_weights() {
        let net = AmalgamNet::init(spec(2, Fusion::WeightedLinear, Enrichment::Additive), 8).unwrap();
        let mut tape = Tape::new();
        let z1 = tape.constant(Tensor::matrix(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let z2 = tape.constant(Tensor::matrix(1, 4, vec![0.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
        let a = net.arch.fuse(&mut tape, &net.params, 0, &[z1, z2], &[vec![1.0], vec![0.0]]).unwrap();
        let b = net.arch.fuse(&mut tape, &net.params, 0, &[z1, z1], &[vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(tape.value(a).data(), tape.value(b).data());
    }

    #[test]
    fn shared_maps_reuse_parameters() {
        let mut s = spec(2, Fusion::SelectiveTransformer, Enrichment::Additive);
        let per_block = AmalgamNet::init(s.clone(), 1).unwrap().params.num_scalars();
        s.share_across_blocks = true;
        let shared = AmalgamNet::init(s, 1).unwrap().params.num_scalars();
        assert!(shared < per_block);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = AmalgamNet::init(spec(2, Fusion::SelectiveTransformer, Enrichment::Additive), 11).unwrap();
        net.save(dir.path(), "amalgam").unwrap();
        let back = AmalgamNet::load(dir.path(), "amalgam").unwrap();
        assert_eq!(back.spec(), net.spec());
        for ((_, a), (_, b)) in net.params.iter().zip(back.params.iter()) {
            assert_eq!(a, b);
        }
    }
}
