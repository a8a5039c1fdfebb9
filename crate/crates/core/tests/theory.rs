mod common;

use common::{ascending_gammas, random_psd, rng};
use pcae::datasets::{gen_disc, gen_flat_strip};
use pcae::linalg::{random_orthonormal, weighted_trace, Matrix};
use pcae::network::{Activation, Layer, Mlp};
use pcae::theory::{
    oracle_theorem1, solve_stiefel, verify_theorem2, verify_theorem2_from, DistanceTarget, StiefelProblem,
    Theorem2Config,
};
use pcae::Error;

#[test]
fn stiefel_seed_sweep_p4() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let sigma = random_psd(4, &mut r);
        let g = ascending_gammas(4, 2.0, &mut r);
        let mut pr = StiefelProblem::new(sigma, g).unwrap();
        pr.max_iters = 5000;
        let rep = solve_stiefel(&pr, seed).unwrap();
        assert!(rep.gap.abs() < 1e-6, "seed {seed}: {rep:?}");
        assert!(rep.min_alignment() > 0.999, "seed {seed}: {rep:?}");
        assert!(rep.max_orthogonality_residual < 1e-10);
        assert!(rep.achieved >= rep.optimal - 1e-9);
    }
}

#[test]
fn oracle_is_a_monte_carlo_lower_bound() {
    let mut r = rng(7);
    let sigma = random_psd(5, &mut r);
    let g = ascending_gammas(5, 2.0, &mut r);
    let (best, u_star) = oracle_theorem1(&sigma, &g).unwrap();
    assert!((weighted_trace(&u_star, &sigma, &g).unwrap() - best).abs() < 1e-9);
    for _ in 0..1000 {
        let u = random_orthonormal(5, 5, &mut r);
        assert!(weighted_trace(&u, &sigma, &g).unwrap() >= best - 1e-9);
    }
}

#[test]
fn tied_leading_eigenvalues_use_subspace_alignment() {
    let mut r = rng(21);
    let q = random_orthonormal(5, 5, &mut r);
    let lam = Matrix::from_diag(&[4.0, 4.0, 2.0, 1.0, 0.25]);
    let sigma = q.matmul(&lam).unwrap().matmul_t(&q).unwrap();
    let sigma = sigma.add(&sigma.transpose()).unwrap().scale(0.5);
    let pr = StiefelProblem::new(sigma, vec![0.1, 0.5, 0.9, 1.2, 1.8]).unwrap();
    for seed in 0..3 {
        let rep = solve_stiefel(&pr, seed).unwrap();
        assert!(rep.gap.abs() < 1e-6, "{rep:?}");
        assert!(rep.min_alignment() > 0.999, "{rep:?}");
    }
}

#[test]
fn equal_weights_are_rejected() {
    let sigma = Matrix::identity(3);
    assert!(StiefelProblem::new(sigma, vec![0.2, 0.2, 1.0]).is_err());
}

fn identity_encoder() -> Mlp {
    Mlp::new(vec![Layer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap()]).unwrap()
}

#[test]
fn identity_encoder_on_planar_data_stays_isometric() {
    let ds = gen_disc(600, 2, 3).unwrap();
    for target in [DistanceTarget::Graph, DistanceTarget::Chart] {
        let cfg = Theorem2Config { epochs: 200, eval_every: 20, target, ..Default::default() };
        let rep = verify_theorem2_from(&ds, &[0.5, 1.0], &cfg, identity_encoder()).unwrap();
        assert!(rep.initial_mean_rel_error < 0.1, "{target:?}: {}", rep.initial_mean_rel_error);
        // chart targets start at exactly zero, so allow minibatch jitter there
        let slack = if target == DistanceTarget::Chart { 1e-3 } else { 0.0 };
        for c in &rep.curve {
            assert!(c.mean_rel_error <= rep.initial_mean_rel_error + slack, "{target:?} epoch {}: {c:?}", c.epoch);
        }
    }
}

#[test]
fn theorem2_short_run_reduces_distortion() {
    let ds = gen_flat_strip(400, std::f64::consts::PI, 4).unwrap();
    let cfg = Theorem2Config { epochs: 150, eval_every: 50, ..Default::default() };
    let rep = verify_theorem2(&ds, &[0.5, 1.0], &cfg).unwrap();
    assert_eq!(rep.train_points + rep.heldout_points, 400);
    assert_eq!(rep.heldout_points, 80);
    assert!(rep.mean_rel_error < rep.initial_mean_rel_error, "{rep:?}");
    assert!(rep.mean_rel_error.is_finite() && rep.p95_rel_error >= rep.mean_rel_error * 0.5);
}

#[test]
fn theorem2_guards() {
    let ds = gen_flat_strip(100, 1.0, 0).unwrap();
    let cfg = Theorem2Config::default();
    assert!(matches!(verify_theorem2(&ds, &[0.5, 2.5], &cfg), Err(Error::Domain(_))));
    assert!(matches!(verify_theorem2(&ds, &[0.5, 2.0], &cfg), Err(Error::Domain(_))));
    let bad = Theorem2Config { holdout_frac: 1.0, ..Default::default() };
    assert!(verify_theorem2(&ds, &[0.5, 1.0], &bad).is_err());
}
