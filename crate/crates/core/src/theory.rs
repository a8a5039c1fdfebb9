//! Numerical checks of the two optimality results behind PCAE.
//!
//! * The weighted trace `Tr(UᵀΣUΓ)` over orthonormal `U` is minimized by the
//!   eigenvectors of `Σ` in descending eigenvalue order, with value
//!   `Σ λ_i γ_i`. [`solve_stiefel`] finds the minimum by projected gradient
//!   descent and compares with [`oracle_theorem1`].
//! * On a flat manifold, minimizing `E|d² − d̂²| + Σ γ_i σ_i²` with
//!   `γ_i < 2` yields an isometric encoder. [`verify_theorem2`] trains an
//!   encoder on that objective and measures distance distortion on held-out
//!   points.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{invalid, mismatch, Error, Result};
use crate::geodesic::{build_index_on_graph, build_knn_graph, GeodesicIndex};
use crate::linalg::{orthonormality_residual, principal_cosines, qr, random_orthonormal, sym_eig, weighted_trace, Matrix};
use crate::network::{grad_slices, AdamState, Mlp};
use crate::objective::{iso_loss, weighted_variance_loss, IsoVariant, PairBatch};

/// Eigenvalues closer than this are treated as one eigenspace.
pub const EIGEN_TIE_TOL: f64 = 1e-10;

fn check_gammas(gammas: &[f64], p: usize) -> Result<()> {
    if gammas.len() != p {
        return Err(mismatch(format!("{} weights for a {p}x{p} matrix", gammas.len())));
    }
    if gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(invalid("weights must be finite and nonnegative"));
    }
    if let Some(w) = gammas.windows(2).find(|w| w[0] >= w[1]) {
        return Err(invalid(format!("weights must be strictly ascending, found {} then {}", w[0], w[1])));
    }
    Ok(())
}

fn check_psd(sigma: &Matrix) -> Result<Vec<f64>> {
    let eig = sym_eig(sigma)?;
    let floor = -1e-10 * sigma.max_abs().max(1.0);
    if let Some(v) = eig.values.iter().find(|&&v| v < floor) {
        return Err(invalid(format!("matrix is not positive semidefinite (eigenvalue {v:e})")));
    }
    Ok(eig.values)
}

/// `(Σ λ_i γ_i, V)` with `λ` descending and `V` the matching eigenvectors.
pub fn oracle_theorem1(sigma: &Matrix, gammas: &[f64]) -> Result<(f64, Matrix)> {
    check_gammas(gammas, sigma.rows())?;
    check_psd(sigma)?;
    let eig = sym_eig(sigma)?;
    let value = eig.values.iter().zip(gammas).map(|(l, g)| l * g).sum();
    Ok((value, eig.vectors))
}

#[derive(Debug, Clone)]
pub struct StiefelProblem {
    pub sigma: Matrix,
    pub gammas: Vec<f64>,
    /// Stop once `‖grad‖²/‖Σ‖₂` (Riemannian gradient) falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl StiefelProblem {
    pub fn new(sigma: Matrix, gammas: Vec<f64>) -> Result<Self> {
        check_gammas(&gammas, sigma.rows())?;
        if sigma.rows() != sigma.cols() {
            return Err(mismatch("covariance must be square"));
        }
        check_psd(&sigma)?;
        Ok(Self { sigma, gammas, tol: 1e-12, max_iters: 200_000 })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub achieved: f64,
    pub optimal: f64,
    pub gap: f64,
    /// Per column: `|cos|` against the matching eigenvector, or the principal
    /// cosines of the block when eigenvalues are tied.
    pub alignment: Vec<f64>,
    pub orthogonality_residual: f64,
    /// Largest orthogonality residual over all iterates.
    pub max_orthogonality_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Theorem1Report {
    pub fn min_alignment(&self) -> f64 {
        self.alignment.iter().copied().fold(1.0, f64::min)
    }
}

fn euclidean_grad(sigma: &Matrix, u: &Matrix, gammas: &[f64]) -> Matrix {
    let mut g = sigma.matmul(u).expect("square");
    for r in 0..g.rows() {
        g.row_mut(r).iter_mut().zip(gammas).for_each(|(v, gm)| *v *= 2.0 * gm);
    }
    g
}

/// Minimizes `Tr(UᵀΣUΓ)` over orthogonal `U` from a seeded random start.
///
/// Each iteration projects the Euclidean gradient `2ΣUΓ` onto the tangent
/// space at `U`, steps along it and retracts with a sign-fixed QR. The step
/// starts at `1e-2/‖Σ‖₂`, is halved whenever the objective would increase
/// (the step is then rejected) and grows by 10% after each accepted step. Iteration stops when the squared Riemannian
/// gradient norm divided by `‖Σ‖₂` drops below `tol`, or after `max_iters`
/// with `converged = false`.
pub fn solve_stiefel(problem: &StiefelProblem, seed: u64) -> Result<Theorem1Report> {
    let sigma = &problem.sigma;
    let gammas = &problem.gammas;
    let p = sigma.rows();
    check_gammas(gammas, p)?;
    let (optimal, oracle) = oracle_theorem1(sigma, gammas)?;
    let lmax = sym_eig(sigma)?.values[0].max(0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = random_orthonormal(p, p, &mut rng);
    let mut f = weighted_trace(&u, sigma, gammas)?;
    let mut max_resid = orthonormality_residual(&u);
    let mut converged = lmax == 0.0;
    let mut iterations = 0;
    let mut step = if lmax > 0.0 { 1e-2 / lmax } else { 0.0 };

    while !converged && iterations < problem.max_iters {
        iterations += 1;
        let g = euclidean_grad(sigma, &u, gammas);
        // projection onto the tangent space of the orthogonal group
        let rg = g.sub(&u.matmul(&g.t_matmul(&u)?)?)?.scale(0.5);
        let rg_sq = rg.as_slice().iter().map(|v| v * v).sum::<f64>();
        if rg_sq / lmax < problem.tol {
            converged = true;
            break;
        }
        let (q, _) = qr(&u.sub(&rg.scale(step))?)?;
        let fq = weighted_trace(&q, sigma, gammas)?;
        if fq <= f {
            max_resid = max_resid.max(orthonormality_residual(&q));
            u = q;
            f = fq;
            step *= 1.1;
        } else {
            step *= 0.5;
            if step * lmax < 1e-30 {
                break;
            }
        }
    }

    let eig = sym_eig(sigma)?;
    let mut alignment = vec![0.0; p];
    for block in eig.eigenspace_blocks(EIGEN_TIE_TOL * lmax.max(1.0)) {
        let idx: Vec<usize> = block.clone().collect();
        if idx.len() == 1 {
            let i = idx[0];
            let dot: f64 = (0..p).map(|r| u[(r, i)] * oracle[(r, i)]).sum();
            alignment[i] = dot.abs().min(1.0);
        } else {
            let cos = principal_cosines(&u.select_columns(&idx), &oracle.select_columns(&idx))?;
            for (slot, c) in idx.iter().zip(cos) {
                alignment[*slot] = c;
            }
        }
    }
    Ok(Theorem1Report {
        achieved: f,
        optimal,
        gap: f - optimal,
        alignment,
        orthogonality_residual: orthonormality_residual(&u),
        max_orthogonality_residual: max_resid,
        iterations,
        converged,
    })
}

/// Where the harness takes its reference manifold distances from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceTarget {
    /// Exact shortest paths on the kNN graph over all samples.
    #[default]
    Graph,
    /// Euclidean distances between the generator's flat chart coordinates.
    Chart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Theorem2Config {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub k_neighbors: usize,
    /// Fraction of samples withheld from training for evaluation.
    pub holdout_frac: f64,
    pub eval_pairs: usize,
    pub pair_rounds: usize,
    /// Evaluate the held-out error every this many epochs.
    pub eval_every: usize,
    /// Cosine-anneal the learning rate to zero over the run.
    pub anneal: bool,
    pub target: DistanceTarget,
    pub seed: u64,
}

impl Default for Theorem2Config {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 1000,
            batch_size: 128,
            learning_rate: 1e-3,
            k_neighbors: 10,
            holdout_frac: 0.2,
            eval_pairs: 2000,
            pair_rounds: 4,
            eval_every: 50,
            anneal: true,
            target: DistanceTarget::Graph,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean_rel_error: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub mean_rel_error: f64,
    pub p95_rel_error: f64,
    pub initial_mean_rel_error: f64,
    pub curve: Vec<CurvePoint>,
    pub eval_pairs: usize,
    pub train_points: usize,
    pub heldout_points: usize,
    pub epochs: usize,
    pub gammas: Vec<f64>,
    pub target: DistanceTarget,
}

impl Theorem2Report {
    pub fn within(&self, mean_tol: f64, p95_tol: f64) -> bool {
        self.mean_rel_error <= mean_tol && self.p95_rel_error <= p95_tol
    }
}

/// Full pairwise reference distances among `ids`, looked up by position.
struct Targets {
    index: Option<GeodesicIndex>,
    chart: Option<Matrix>,
}

impl Targets {
    fn dist(&self, i: usize, j: usize) -> Result<f64> {
        match (&self.index, &self.chart) {
            (Some(ix), _) => ix.approx_dist(i, j),
            (None, Some(c)) => Ok((0..c.rows()).map(|r| (c[(r, i)] - c[(r, j)]).powi(2)).sum::<f64>().sqrt()),
            (None, None) => unreachable!("one source is always set"),
        }
    }
}

fn check_theorem2_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(invalid("need at least one weight"));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0 && g < 2.0)) {
        return Err(Error::Domain(format!(
            "weight {g} violates the isometry bound 0 < γ < 2 under which the optimum is an isometry"
        )));
    }
    if gammas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("weights must be strictly ascending"));
    }
    Ok(())
}

fn relative_errors(encoder: &Mlp, x: &Matrix, pairs: &[(usize, usize)], targets: &[f64]) -> Result<Vec<f64>> {
    let z = encoder.forward(x)?;
    Ok(pairs
        .iter()
        .zip(targets)
        .map(|(&(i, j), &d)| {
            let dhat = (0..z.rows()).map(|r| (z[(r, i)] - z[(r, j)]).powi(2)).sum::<f64>().sqrt();
            (dhat - d).abs() / d
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let rank = (q * (s.len() - 1) as f64).round() as usize;
    s[rank]
}

/// Trains a He-initialized encoder into `gammas.len()` dimensions on
/// `E|d² − d̂²| + Σ γ_i σ_i²` and reports held-out distance distortion.
pub fn verify_theorem2(ds: &Dataset, gammas: &[f64], cfg: &Theorem2Config) -> Result<Theorem2Report> {
    check_theorem2_gammas(gammas)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let widths: Vec<usize> = std::iter::once(ds.dim())
        .chain(cfg.hidden.iter().copied())
        .chain([gammas.len()])
        .collect();
    let encoder = Mlp::he_init(&widths, &mut rng)?;
    verify_theorem2_from(ds, gammas, cfg, encoder)
}

/// [`verify_theorem2`] starting from a given encoder.
pub fn verify_theorem2_from(ds: &Dataset, gammas: &[f64], cfg: &Theorem2Config, mut encoder: Mlp) -> Result<Theorem2Report> {
    check_theorem2_gammas(gammas)?;
    if encoder.in_width() != ds.dim() || encoder.out_width() != gammas.len() {
        return Err(mismatch("encoder widths do not match data and weights"));
    }
    if !(cfg.holdout_frac > 0.0 && cfg.holdout_frac < 1.0) {
        return Err(invalid("holdout fraction must lie in (0, 1)"));
    }
    if cfg.batch_size < 2 || cfg.eval_pairs == 0 || cfg.pair_rounds == 0 || cfg.eval_every == 0 {
        return Err(invalid("batch size >= 2 and positive pair/eval counts required"));
    }
    let x = &ds.samples;
    let n = x.cols();
    let targets = match cfg.target {
        DistanceTarget::Graph => {
            let graph = build_knn_graph(x, cfg.k_neighbors)?;
            if !graph.repairs.is_empty() {
                return Err(invalid(format!(
                    "geodesic graph is disconnected ({} components joined artificially)",
                    graph.repairs.len() + 1
                )));
            }
            Targets { index: Some(build_index_on_graph(x, &graph, n, cfg.seed)?), chart: None }
        }
        DistanceTarget::Chart => {
            let f = ds.factors.clone().ok_or_else(|| invalid("chart targets need generator factors"))?;
            Targets { index: None, chart: Some(f) }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(11);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let held = ((n as f64) * cfg.holdout_frac).round() as usize;
    if held < 2 || n - held < cfg.batch_size.min(2) {
        return Err(invalid("not enough samples for the requested split"));
    }
    let mut heldout = perm[..held].to_vec();
    let mut train_ids = perm[held..].to_vec();
    heldout.sort_unstable();
    train_ids.sort_unstable();

    let x_held = x.select_columns(&heldout);
    let mut eval_pairs = Vec::with_capacity(cfg.eval_pairs);
    let mut eval_targets = Vec::with_capacity(cfg.eval_pairs);
    while eval_pairs.len() < cfg.eval_pairs {
        let a = rng.random_range(0..held);
        let b = rng.random_range(0..held);
        if a == b {
            continue;
        }
        let d = targets.dist(heldout[a], heldout[b])?;
        if d > 0.0 {
            eval_pairs.push((a, b));
            eval_targets.push(d);
        }
    }

    let evaluate = |enc: &Mlp| -> Result<Vec<f64>> { relative_errors(enc, &x_held, &eval_pairs, &eval_targets) };
    let initial = mean(&evaluate(&encoder)?);
    let mut curve = vec![CurvePoint { epoch: 0, mean_rel_error: initial, loss: f64::NAN }];
    let mut adam = AdamState::new(&encoder.params(), cfg.learning_rate);
    let mut order = train_ids.clone();

    for epoch in 1..=cfg.epochs {
        if cfg.anneal {
            let progress = (epoch - 1) as f64 / cfg.epochs as f64;
            adam.lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for ids in order.chunks(cfg.batch_size) {
            if ids.len() < 2 {
                continue;
            }
            let xb = x.select_columns(ids);
            let mut pairs = Vec::new();
            let mut dists = Vec::new();
            let mut local: Vec<usize> = (0..ids.len()).collect();
            for _ in 0..cfg.pair_rounds {
                local.shuffle(&mut rng);
                for c in local.chunks_exact(2) {
                    pairs.push((c[0], c[1]));
                    dists.push(targets.dist(ids[c[0]], ids[c[1]])?);
                }
            }
            let batch = PairBatch::new(pairs, dists)?;
            let cache = encoder.forward_cached(&xb)?;
            let (li, gi) = iso_loss(cache.output(), &batch, IsoVariant::AbsSqDiff)?;
            let (lv, gv) = weighted_variance_loss(cache.output(), gammas)?;
            let (grads, _) = encoder.backward(&cache, &gi.add(&gv)?)?;
            let g: Vec<&[f64]> = grad_slices(&grads).collect();
            if !(li + lv).is_finite() || g.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numerical(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            adam.update(encoder.params_mut(), &g)?;
            loss_sum += li + lv;
            batches += 1;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            curve.push(CurvePoint {
                epoch,
                mean_rel_error: mean(&evaluate(&encoder)?),
                loss: loss_sum / batches.max(1) as f64,
            });
        }
    }

    let errors = evaluate(&encoder)?;
    Ok(Theorem2Report {
        mean_rel_error: mean(&errors),
        p95_rel_error: percentile(&errors, 0.95),
        initial_mean_rel_error: initial,
        curve,
        eval_pairs: eval_pairs.len(),
        train_points: train_ids.len(),
        heldout_points: held,
        epochs: cfg.epochs,
        gammas: gammas.to_vec(),
        target: cfg.target,
    })
}
