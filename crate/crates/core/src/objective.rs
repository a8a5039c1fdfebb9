//! Loss terms and their gradients with respect to the latent codes `Z` and
//! the reconstruction `X̂`.
//!
//! All batch statistics use `1/n` normalization; the paper's unnormalized
//! covariance lives in [`crate::linalg::covariance`].

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::geodesic::GeodesicIndex;
use crate::linalg::Matrix;
use crate::network::{Gradients, MlpModel};

/// Elementwise distance-matching loss `ℓ(d, d̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsoVariant {
    /// `|d² − d̂²|`
    #[default]
    AbsSqDiff,
    /// `(d − d̂)²`
    Square,
    /// `(ln d − ln d̂)²`
    LogSq,
}

impl IsoVariant {
    pub fn name(self) -> &'static str {
        match self {
            IsoVariant::AbsSqDiff => "abs_sq_diff",
            IsoVariant::Square => "square",
            IsoVariant::LogSq => "log_sq",
        }
    }
}

impl fmt::Display for IsoVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IsoVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs_sq_diff" => Ok(IsoVariant::AbsSqDiff),
            "square" => Ok(IsoVariant::Square),
            "log_sq" | "log" => Ok(IsoVariant::LogSq),
            other => Err(invalid(format!("unknown isometry loss '{other}'"))),
        }
    }
}

/// Loss components; `total = recon + beta * (var + iso)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub var: f64,
    pub iso: f64,
    pub total: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub fn new(recon: f64, var: f64, iso: f64, beta: f64) -> Self {
        Self { recon, var, iso, total: recon + beta * (var + iso), beta }
    }

    /// Absolute deviation from the defining identity.
    pub fn identity_residual(&self) -> f64 {
        (self.total - (self.recon + self.beta * (self.var + self.iso))).abs()
    }
}

/// Column pairs within a minibatch and their target manifold distances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub target_dists: Vec<f64>,
}

impl PairBatch {
    pub fn new(pairs: Vec<(usize, usize)>, target_dists: Vec<f64>) -> Result<Self> {
        if pairs.len() != target_dists.len() {
            return Err(mismatch(format!("{} pairs but {} targets", pairs.len(), target_dists.len())));
        }
        if let Some(&(i, _)) = pairs.iter().find(|(i, j)| i == j) {
            return Err(invalid(format!("pair ({i}, {i}) joins a point to itself")));
        }
        if let Some(d) = target_dists.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(invalid(format!("target distance {d} is not a finite nonnegative value")));
        }
        Ok(Self { pairs, target_dists })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Drops pairs with a zero target.
    pub fn retain_positive_targets(&mut self) {
        let keep: Vec<bool> = self.target_dists.iter().map(|&d| d > 0.0).collect();
        let mut it = keep.iter();
        self.pairs.retain(|_| *it.next().unwrap());
        self.target_dists.retain(|&d| d > 0.0);
    }
}

fn column_sq_dist(z: &Matrix, i: usize, j: usize) -> f64 {
    (0..z.rows())
        .map(|r| {
            let row = z.row(r);
            let t = row[i] - row[j];
            t * t
        })
        .sum()
}

/// `(1/n) Σ ‖x_i − x̂_i‖²` and its gradient `2(X̂ − X)/n`.
pub fn recon_loss(x: &Matrix, xhat: &Matrix) -> Result<(f64, Matrix)> {
    if x.shape() != xhat.shape() {
        return Err(mismatch(format!("X is {:?} but X̂ is {:?}", x.shape(), xhat.shape())));
    }
    let n = x.cols().max(1) as f64;
    let diff = xhat.sub(x)?;
    let loss = diff.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// `Σ γ_i σ_i²` with population variances over the batch columns.
pub fn weighted_variance_loss(z: &Matrix, gammas: &[f64]) -> Result<(f64, Matrix)> {
    if gammas.len() != z.rows() {
        return Err(mismatch(format!("{} gammas for {} latent rows", gammas.len(), z.rows())));
    }
    let n = z.cols();
    if n < 2 {
        return Err(invalid("variance needs a batch of at least 2"));
    }
    let nf = n as f64;
    let mut grad = Matrix::zeros(z.rows(), n);
    let mut loss = 0.0;
    for (r, &g) in gammas.iter().enumerate() {
        let row = z.row(r);
        let mean = row.iter().sum::<f64>() / nf;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        loss += g * var;
        for (o, v) in grad.row_mut(r).iter_mut().zip(row) {
            *o = g * 2.0 * (v - mean) / nf;
        }
    }
    Ok((loss, grad))
}

/// `ℓ(d, d̂)` and its partial derivative with respect to `d̂²`.
pub fn iso_elementwise(d: f64, dhat: f64, variant: IsoVariant) -> Result<(f64, f64)> {
    if !(d >= 0.0 && dhat >= 0.0) {
        return Err(invalid(format!("distances must be nonnegative, got d={d}, d̂={dhat}")));
    }
    Ok(match variant {
        IsoVariant::AbsSqDiff => {
            let diff = d * d - dhat * dhat;
            let slope = if diff > 0.0 {
                -1.0
            } else if diff < 0.0 {
                1.0
            } else {
                0.0
            };
            (diff.abs(), slope)
        }
        IsoVariant::Square => {
            let slope = if dhat > 0.0 { -(d - dhat) / dhat } else { 0.0 };
            ((d - dhat).powi(2), slope)
        }
        IsoVariant::LogSq => {
            if d == 0.0 || dhat == 0.0 {
                return Err(Error::Domain(format!("log loss needs positive distances, got d={d}, d̂={dhat}")));
            }
            let r = d.ln() - dhat.ln();
            (r * r, -r / (dhat * dhat))
        }
    })
}

/// Mean of `ℓ(target, ‖z_i − z_j‖)` over the pairs, with gradient on `Z`.
pub fn iso_loss(z: &Matrix, batch: &PairBatch, variant: IsoVariant) -> Result<(f64, Matrix)> {
    if batch.is_empty() {
        return Err(invalid("isometry loss over an empty pair set"));
    }
    let n = z.cols();
    let mut grad = Matrix::zeros(z.rows(), n);
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (&(i, j), &d) in batch.pairs.iter().zip(&batch.target_dists) {
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::OutOfRange { index: idx, len: n });
            }
        }
        let dhat = column_sq_dist(z, i, j).sqrt();
        let (l, slope) = iso_elementwise(d, dhat, variant)?;
        total += l;
        if slope != 0.0 {
            let c = 2.0 * slope * scale;
            for r in 0..z.rows() {
                let t = c * (z[(r, i)] - z[(r, j)]);
                grad[(r, i)] += t;
                grad[(r, j)] -= t;
            }
        }
    }
    Ok((total * scale, grad))
}

/// Which regularizers enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terms {
    pub var: bool,
    pub iso: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self { var: true, iso: true }
    }
}

/// Gradients of a loss on the latent codes and the reconstruction.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub z: Matrix,
    pub xhat: Matrix,
}

/// `L_recon + β (L_var + L_iso)`. Disabled terms contribute 0 to both the
/// breakdown and the gradients; `batch` may be `None` when the isometry term
/// is off.
#[allow(clippy::too_many_arguments)]
pub fn pcae_loss(
    x: &Matrix,
    z: &Matrix,
    xhat: &Matrix,
    batch: Option<&PairBatch>,
    gammas: &[f64],
    beta: f64,
    variant: IsoVariant,
    terms: Terms,
) -> Result<(LossBreakdown, OutputGrads)> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be finite and nonnegative, got {beta}")));
    }
    if z.cols() != x.cols() {
        return Err(mismatch("latent and input batch sizes differ"));
    }
    let (recon, g_xhat) = recon_loss(x, xhat)?;
    let mut g_z = Matrix::zeros(z.rows(), z.cols());
    let mut var = 0.0;
    if terms.var {
        let (v, g) = weighted_variance_loss(z, gammas)?;
        var = v;
        g_z = g.scale(beta);
    }
    let mut iso = 0.0;
    if terms.iso {
        let batch = batch.ok_or_else(|| invalid("isometry term enabled without a pair batch"))?;
        let (v, g) = iso_loss(z, batch, variant)?;
        iso = v;
        g_z = g_z.add(&g.scale(beta))?;
    }
    Ok((LossBreakdown::new(recon, var, iso, beta), OutputGrads { z: g_z, xhat: g_xhat }))
}

/// Pairs consecutive entries of a random shuffle of the batch positions;
/// with an odd batch one position is left out. Targets come from the index
/// using the global sample ids in `batch_indices`.
pub fn sample_pairs(batch_indices: &[usize], index: &GeodesicIndex, seed: u64) -> Result<PairBatch> {
    sample_pair_rounds(batch_indices, index, 1, seed)
}

/// `rounds` independent shufflings of [`sample_pairs`], concatenated.
pub fn sample_pair_rounds(
    batch_indices: &[usize],
    index: &GeodesicIndex,
    rounds: usize,
    seed: u64,
) -> Result<PairBatch> {
    let n = batch_indices.len();
    if n < 2 {
        return Err(invalid("pair sampling needs a batch of at least 2"));
    }
    if rounds == 0 {
        return Err(invalid("pair rounds must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut pairs = Vec::with_capacity(rounds * n / 2);
    let mut targets = Vec::with_capacity(rounds * n / 2);
    for _ in 0..rounds {
        order.shuffle(&mut rng);
        for c in order.chunks_exact(2) {
            pairs.push((c[0], c[1]));
            targets.push(index.approx_dist(batch_indices[c[0]], batch_indices[c[1]])?);
        }
    }
    PairBatch::new(pairs, targets)
}

fn check_alpha(model: &MlpModel, alpha: &[f64]) -> Result<()> {
    if alpha.len() != model.latent_dim() {
        return Err(mismatch(format!("{} weights for latent dimension {}", alpha.len(), model.latent_dim())));
    }
    Ok(())
}

fn prefix_mask(z: &Matrix, k: usize) -> Matrix {
    let mut m = z.clone();
    for r in k..m.rows() {
        m.row_mut(r).fill(0.0);
    }
    m
}

/// Per-prefix reconstruction errors `L_k`, k = 1..d, where the decoder sees
/// `(z_1, …, z_k, 0, …, 0)`.
pub fn prefix_recon_losses(x: &Matrix, model: &MlpModel) -> Result<Vec<f64>> {
    let z = model.encode(x)?;
    (1..=model.latent_dim())
        .map(|k| {
            let xhat = model.decode(&prefix_mask(&z, k))?;
            Ok(recon_loss(x, &xhat)?.0)
        })
        .collect()
}

/// `Σ_k α_k L_k`.
pub fn hae_loss(x: &Matrix, model: &MlpModel, alpha: &[f64]) -> Result<f64> {
    check_alpha(model, alpha)?;
    Ok(prefix_recon_losses(x, model)?.iter().zip(alpha).map(|(l, a)| l * a).sum())
}

/// [`hae_loss`] with its parameter gradients.
pub fn hae_loss_and_grads(x: &Matrix, model: &MlpModel, alpha: &[f64]) -> Result<(f64, Gradients)> {
    check_alpha(model, alpha)?;
    let enc = model.encoder.forward_cached(x)?;
    let z = enc.output();
    let mut grads = Gradients::zeros_like(model);
    let mut g_z = Matrix::zeros(z.rows(), z.cols());
    let mut total = 0.0;
    for (k, &a) in (1..=model.latent_dim()).zip(alpha) {
        if a == 0.0 {
            continue;
        }
        let dec = model.decoder.forward_cached(&prefix_mask(z, k))?;
        let (l, g_xhat) = recon_loss(x, dec.output())?;
        total += a * l;
        let (dgrads, g_in) = model.decoder.backward(&dec, &g_xhat.scale(a))?;
        for (acc, g) in grads.decoder.iter_mut().zip(&dgrads) {
            acc.weight = acc.weight.add(&g.weight)?;
            acc.bias.iter_mut().zip(&g.bias).for_each(|(s, v)| *s += v);
        }
        g_z = g_z.add(&prefix_mask(&g_in, k))?;
    }
    let (egrads, _) = model.encoder.backward(&enc, &g_z)?;
    grads.encoder = egrads;
    Ok((total, grads))
}
