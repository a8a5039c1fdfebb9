//! Central finite-difference checks of every loss gradient.

mod common;

use common::*;
use pcae::objective::IsoVariant;

const TOL: f64 = 1e-4;
const VARIANTS: [IsoVariant; 3] = [IsoVariant::AbsSqDiff, IsoVariant::Square, IsoVariant::LogSq];

#[test]
fn reconstruction() {
    for seed in 0..10 {
        let e = check_recon(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn weighted_variance() {
    for seed in 0..10 {
        let e = check_variance(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn isometry_on_codes() {
    for variant in VARIANTS {
        for seed in 0..10 {
            let e = check_iso(seed, variant);
            assert!(e < TOL, "{variant} seed {seed}: {e}");
        }
    }
}

#[test]
fn elementwise_slopes() {
    for variant in VARIANTS {
        for seed in 0..10 {
            let e = check_elementwise(seed, variant);
            assert!(e < TOL, "{variant} seed {seed}: {e}");
        }
    }
}

#[test]
fn full_objective_through_network() {
    for variant in VARIANTS {
        for seed in 0..10 {
            let e = check_pcae_params(seed, variant);
            assert!(e < TOL, "{variant} seed {seed}: {e}");
        }
    }
}

#[test]
fn hierarchical_baseline_through_network() {
    for seed in 0..10 {
        let e = check_hae_params(seed);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}
