//! Mahalanobis-style confidence that an input is in-domain for a teacher.
//!
//! Class Gaussians share one pooled covariance; a background Gaussian is fit
//! to the same data ignoring labels. The relative distance
//! `md_y(h) - md_bg(h)` removes directions that are equally atypical for every
//! class, and the confidence is `-min_y` of it, z-scored against the fitting
//! data. All quadratic forms go through Cholesky solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::tensor::softmax_slice;

/// Default relative ridge added to every covariance: `eps = ridge * trace / d`.
pub const RIDGE: f64 = 1e-3;
/// Ridge used when the covariance trace is zero.
pub const MIN_EPS: f64 = 1e-9;
/// Standard deviations below this are replaced by 1.
pub const MIN_STD: f64 = 1e-12;

/// A factored symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Spd {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Spd {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            bail!(Shape, "covariance must be a non-empty square matrix");
        }
        let chol = Cholesky::new(matrix.clone()).ok_or_else(|| Error::NonFinite("covariance is not positive definite".into()))?;
        Ok(Self { matrix, chol })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `v^T M^-1 v` via the lower factor: `|L^-1 v|^2`.
    pub fn quad_inv(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim() {
            bail!(Shape, "vector of length {} against a {}-dim covariance", v.len(), self.dim());
        }
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&DVector::from_column_slice(v))
            .ok_or_else(|| Error::NonFinite("singular Cholesky factor".into()))?;
        Ok(z.norm_squared())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Population mean and standard deviation of `xs`.
    pub fn fit(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            bail!(InvalidArgument, "cannot standardize an empty sample");
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut std = var.sqrt();
        if !(std >= MIN_STD) {
            log::warn!("confidence spread {std:e} is degenerate; using unit scale");
            std = 1.0;
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub raw: f64,
    pub standardized: f64,
}

/// Which score feeds the confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceKind {
    /// `-min_y (md_y - md_bg)`.
    Rmd,
    /// `-min_y md_y`.
    Md,
    /// Maximum softmax probability of the final logits.
    Msp,
}

/// Gaussian fit of one teacher block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "StatsRepr", into = "StatsRepr")]
pub struct GaussianStats {
    means: Vec<Vec<f64>>,
    cov: Spd,
    bg_mean: Vec<f64>,
    bg_cov: Spd,
    rmd_scale: Standardizer,
    md_scale: Standardizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsRepr {
    dim: usize,
    means: Vec<Vec<f64>>,
    cov: Vec<f64>,
    bg_mean: Vec<f64>,
    bg_cov: Vec<f64>,
    rmd_scale: Standardizer,
    md_scale: Standardizer,
}

impl From<GaussianStats> for StatsRepr {
    fn from(s: GaussianStats) -> Self {
        Self {
            dim: s.dim(),
            cov: s.cov.matrix.as_slice().to_vec(),
            bg_cov: s.bg_cov.matrix.as_slice().to_vec(),
            means: s.means,
            bg_mean: s.bg_mean,
            rmd_scale: s.rmd_scale,
            md_scale: s.md_scale,
        }
    }
}

impl From<StatsRepr> for GaussianStats {
    fn from(r: StatsRepr) -> Self {
        // matrices were positive definite when saved
        let spd = |v: Vec<f64>| Spd::new(DMatrix::from_vec(r.dim, r.dim, v)).expect("stored covariance is positive definite");
        Self {
            cov: spd(r.cov),
            bg_cov: spd(r.bg_cov),
            means: r.means,
            bg_mean: r.bg_mean,
            rmd_scale: r.rmd_scale,
            md_scale: r.md_scale,
        }
    }
}

fn add_ridge(scatter: &mut DMatrix<f64>, ridge: f64) {
    let d = scatter.nrows();
    let eps = ridge * scatter.trace() / d as f64;
    let eps = if eps > 0.0 { eps } else { MIN_EPS };
    for i in 0..d {
        scatter[(i, i)] += eps;
    }
}

fn mean_of(rows: &[&Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r.iter()) {
            *a += b;
        }
    }
    m.iter().map(|v| v / rows.len() as f64).collect()
}

fn add_scatter(acc: &mut DMatrix<f64>, h: &[f64], mu: &[f64]) {
    let d = h.len();
    let diff: Vec<f64> = h.iter().zip(mu).map(|(a, b)| a - b).collect();
    for j in 0..d {
        for i in 0..d {
            acc[(i, j)] += diff[i] * diff[j];
        }
    }
}

impl GaussianStats {
    /// Fit class means, the pooled within-class covariance and the
    /// background Gaussian on `reps` with local `labels` in `0..n_classes`.
    pub fn fit(reps: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Self> {
        Self::fit_with_ridge(reps, labels, n_classes, RIDGE)
    }

    pub fn fit_with_ridge(reps: &[Vec<f64>], labels: &[usize], n_classes: usize, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0) {
            bail!(Config, "covariance ridge must be positive, got {ridge}");
        }
        if reps.len() != labels.len() {
            bail!(InvalidArgument, "{} representations but {} labels", reps.len(), labels.len());
        }
        let d = reps.first().map(Vec::len).unwrap_or(0);
        if d == 0 {
            bail!(InvalidArgument, "no representations to fit");
        }
        if reps.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
            bail!(InvalidArgument, "representations must be finite vectors of one width");
        }
        let mut means = Vec::with_capacity(n_classes);
        let mut scatter = DMatrix::zeros(d, d);
        for y in 0..n_classes {
            let rows: Vec<&Vec<f64>> = reps.iter().zip(labels).filter(|(_, &l)| l == y).map(|(r, _)| r).collect();
            if rows.is_empty() {
                return Err(Error::MissingClass(y));
            }
            if rows.len() < 2 {
                log::warn!("class {y} has a single fitting sample; it adds no spread to the shared covariance");
            }
            let mu = mean_of(&rows, d);
            for r in &rows {
                add_scatter(&mut scatter, r, &mu);
            }
            means.push(mu);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            bail!(InvalidArgument, "label {bad} outside {n_classes} classes");
        }
        let n = reps.len() as f64;
        scatter /= n;
        add_ridge(&mut scatter, ridge);
        let all: Vec<&Vec<f64>> = reps.iter().collect();
        let bg_mean = mean_of(&all, d);
        let mut bg = DMatrix::zeros(d, d);
        for r in reps {
            add_scatter(&mut bg, r, &bg_mean);
        }
        bg /= n;
        add_ridge(&mut bg, ridge);
        let unit = Standardizer { mean: 0.0, std: 1.0 };
        let mut stats =
            Self { means, cov: Spd::new(scatter)?, bg_mean, bg_cov: Spd::new(bg)?, rmd_scale: unit, md_scale: unit };
        let mut raw_rmd = Vec::with_capacity(reps.len());
        let mut raw_md = Vec::with_capacity(reps.len());
        for r in reps {
            raw_rmd.push(stats.raw_confidence(r, ConfidenceKind::Rmd)?);
            raw_md.push(stats.raw_confidence(r, ConfidenceKind::Md)?);
        }
        stats.rmd_scale = Standardizer::fit(&raw_rmd)?;
        stats.md_scale = Standardizer::fit(&raw_md)?;
        Ok(stats)
    }

    /// Stats from explicit parameters; covariances are used as given.
    pub fn from_parts(means: Vec<Vec<f64>>, cov: DMatrix<f64>, bg_mean: Vec<f64>, bg_cov: DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        if means.is_empty() || means.iter().any(|m| m.len() != d) || bg_mean.len() != d || bg_cov.nrows() != d {
            bail!(Shape, "means and covariances disagree on dimension");
        }
        let unit = Standardizer { mean: 0.0, std: 1.0 };
        Ok(Self { means, cov: Spd::new(cov)?, bg_mean, bg_cov: Spd::new(bg_cov)?, rmd_scale: unit, md_scale: unit })
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        self.cov.matrix()
    }

    pub fn background(&self) -> (&[f64], &DMatrix<f64>) {
        (&self.bg_mean, self.bg_cov.matrix())
    }

    pub fn scale(&self, kind: ConfidenceKind) -> Option<Standardizer> {
        match kind {
            ConfidenceKind::Rmd => Some(self.rmd_scale),
            ConfidenceKind::Md => Some(self.md_scale),
            ConfidenceKind::Msp => None,
        }
    }

    fn diff(h: &[f64], mu: &[f64]) -> Vec<f64> {
        h.iter().zip(mu).map(|(a, b)| a - b).collect()
    }

    /// Squared Mahalanobis distance to class `y`.
    pub fn md(&self, h: &[f64], y: usize) -> Result<f64> {
        let mu = self.means.get(y).ok_or(Error::MissingClass(y))?;
        if h.len() != self.dim() {
            bail!(Shape, "query of length {} against {}-dim stats", h.len(), self.dim());
        }
        self.cov.quad_inv(&Self::diff(h, mu))
    }

    /// Squared Mahalanobis distance to the background Gaussian.
    pub fn md_background(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.dim() {
            bail!(Shape, "query of length {} against {}-dim stats", h.len(), self.dim());
        }
        self.bg_cov.quad_inv(&Self::diff(h, &self.bg_mean))
    }

    pub fn rmd(&self, h: &[f64], y: usize) -> Result<f64> {
        Ok(self.md(h, y)? - self.md_background(h)?)
    }

    fn raw_confidence(&self, h: &[f64], kind: ConfidenceKind) -> Result<f64> {
        let bg = match kind {
            ConfidenceKind::Rmd => self.md_background(h)?,
            ConfidenceKind::Md => 0.0,
            ConfidenceKind::Msp => bail!(InvalidArgument, "MSP confidence needs logits, not Gaussian stats"),
        };
        let mut best = f64::INFINITY;
        for y in 0..self.n_classes() {
            best = best.min(self.md(h, y)? - bg);
        }
        Ok(-best)
    }

    /// `-min_y rmd_y(h)`, standardized against the fitting data.
    pub fn confidence(&self, h: &[f64]) -> Result<ConfidenceScore> {
        self.confidence_of(h, ConfidenceKind::Rmd)
    }

    pub fn confidence_of(&self, h: &[f64], kind: ConfidenceKind) -> Result<ConfidenceScore> {
        let raw = self.raw_confidence(h, kind)?;
        let scale = self.scale(kind).expect("Gaussian kinds carry a scale");
        Ok(ConfidenceScore { raw, standardized: scale.apply(raw) })
    }
}

/// Maximum softmax probability at temperature 1.
pub fn msp(logits: &[f64]) -> f64 {
    softmax_slice(logits, 1.0).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Per-block Gaussian stats of one teacher plus the MSP scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherOod {
    pub blocks: Vec<GaussianStats>,
    pub msp_scale: Standardizer,
}

impl TeacherOod {
    /// `block_reps[s][b]` is sample `s`'s pooled vector at block `b`.
    pub fn fit(block_reps: &[Vec<Vec<f64>>], logits: &[Vec<f64>], labels: &[usize], n_classes: usize, ridge: f64) -> Result<Self> {
        let n_blocks = block_reps.first().map(Vec::len).unwrap_or(0);
        if n_blocks == 0 || block_reps.iter().any(|r| r.len() != n_blocks) {
            bail!(InvalidArgument, "every sample needs the same non-zero number of blocks");
        }
        let blocks = (0..n_blocks)
            .map(|b| {
                let reps: Vec<Vec<f64>> = block_reps.iter().map(|r| r[b].clone()).collect();
                GaussianStats::fit_with_ridge(&reps, labels, n_classes, ridge)
            })
            .collect::<Result<Vec<_>>>()?;
        let msps: Vec<f64> = logits.iter().map(|l| msp(l)).collect();
        Ok(Self { blocks, msp_scale: Standardizer::fit(&msps)? })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Confidence at every block. MSP has no per-block form, so every block
    /// receives the final-logit score.
    pub fn scores(&self, kind: ConfidenceKind, block_reps: &[Vec<f64>], logits: &[f64]) -> Result<Vec<ConfidenceScore>> {
        if block_reps.len() != self.n_blocks() {
            bail!(Shape, "{} block vectors for {} fitted blocks", block_reps.len(), self.n_blocks());
        }
        match kind {
            ConfidenceKind::Msp => {
                let raw = msp(logits);
                let s = ConfidenceScore { raw, standardized: self.msp_scale.apply(raw) };
                Ok(vec![s; self.n_blocks()])
            }
            _ => self.blocks.iter().zip(block_reps).map(|(st, h)| st.confidence_of(h, kind)).collect(),
        }
    }
}
