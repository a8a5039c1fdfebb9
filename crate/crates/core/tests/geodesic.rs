use pcae::datasets::{gen_flat_strip, gen_swiss_roll};
use pcae::geodesic::{build_index, build_index_on_graph, build_knn_graph, shortest_paths_from, GeodesicIndex};
use pcae::linalg::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn euclid(x: &Matrix, i: usize, j: usize) -> f64 {
    (0..x.rows()).map(|r| (x[(r, i)] - x[(r, j)]).powi(2)).sum::<f64>().sqrt()
}

/// All-pairs shortest paths by Floyd–Warshall over the graph's edge list.
fn floyd(adj: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
    let n = adj.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (u, edges) in adj.iter().enumerate() {
        d[u][u] = 0.0;
        for &(v, w) in edges {
            d[u][v] = d[u][v].min(w);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

#[test]
fn dijkstra_matches_floyd_warshall() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::random_normal(3, 60, &mut rng);
        let g = build_knn_graph(&x, 4).unwrap();
        let oracle = floyd(&g.adjacency);
        for s in 0..60 {
            let d = shortest_paths_from(&g, s).unwrap();
            for t in 0..60 {
                assert!((d[t] - oracle[s][t]).abs() < 1e-9, "seed {seed} {s}->{t}");
            }
        }
    }
}

#[test]
fn exact_index_equals_all_pairs_paths() {
    let ds = gen_swiss_roll(150, 0.0, 3).unwrap();
    let g = build_knn_graph(&ds.samples, 8).unwrap();
    let oracle = floyd(&g.adjacency);
    let idx = build_index_on_graph(&ds.samples, &g, 150, 3).unwrap();
    assert!(idx.is_exact());
    for i in 0..150 {
        for j in 0..150 {
            assert!((idx.approx_dist(i, j).unwrap() - oracle[i][j]).abs() < 1e-9);
        }
    }
}

#[test]
fn graph_distance_dominates_euclidean() {
    let ds = gen_swiss_roll(400, 0.0, 1).unwrap();
    let idx = build_index(&ds.samples, 10, 400, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..2000 {
        let i = rng.random_range(0..400);
        let j = rng.random_range(0..400);
        assert!(idx.approx_dist(i, j).unwrap() >= euclid(&ds.samples, i, j) - 1e-9);
    }
}

/// Innermost and outermost mid-height samples of a swiss roll.
fn roll_ends(ds: &pcae::datasets::Dataset) -> (usize, usize) {
    let f = ds.factors.as_ref().unwrap();
    let band: Vec<usize> = (0..ds.len()).filter(|&j| (f[(1, j)] - 10.5).abs() < 3.0).collect();
    let t = |j: &&usize| f[(0, **j)];
    let a = *band.iter().min_by(|p, q| t(p).total_cmp(&t(q))).unwrap();
    let b = *band.iter().max_by(|p, q| t(p).total_cmp(&t(q))).unwrap();
    (a, b)
}

// At n = 500 the 10-NN graph has edges jumping between turns of the roll,
// so the dense case uses n = 2000 and the sparse one k = 5.
#[test]
fn swiss_roll_endpoints_are_far_along_the_graph() {
    for (n, k) in [(2000, 10), (500, 5)] {
        for seed in 0..3 {
            let ds = gen_swiss_roll(n, 0.0, seed).unwrap();
            let (a, b) = roll_ends(&ds);
            let g = build_knn_graph(&ds.samples, k).unwrap();
            let d = shortest_paths_from(&g, a).unwrap()[b];
            let e = euclid(&ds.samples, a, b);
            assert!(d >= 2.0 * e, "n {n} k {k} seed {seed}: graph {d} vs euclid {e}");
        }
    }
}

#[test]
fn flat_strip_graph_tracks_chart_distance() {
    let ds = gen_flat_strip(800, 3.0, 2).unwrap();
    let f = ds.factors.as_ref().unwrap();
    let idx = build_index(&ds.samples, 10, 800, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut errs = Vec::new();
    while errs.len() < 500 {
        let i = rng.random_range(0..800);
        let j = rng.random_range(0..800);
        let d = euclid(f, i, j);
        if d < 0.5 {
            continue;
        }
        errs.push((idx.approx_dist(i, j).unwrap() - d).abs() / d);
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.1, "mean relative error {mean}");
}

#[test]
fn geo_file_is_reproducible() {
    let ds = gen_swiss_roll(200, 0.05, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.geo"), dir.path().join("b.geo"));
    build_index(&ds.samples, 10, 40, 7).unwrap().save(&p1).unwrap();
    build_index(&ds.samples, 10, 40, 7).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let back = GeodesicIndex::load(&p1).unwrap();
    assert_eq!(back.landmarks.len(), 40);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn approx_distance_is_symmetric_and_nonnegative(seed in 0u64..1000, l in 5usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::random_normal(2, 80, &mut rng);
        let idx = build_index(&x, 5, l, seed).unwrap();
        for _ in 0..50 {
            let i = rng.random_range(0..80);
            let j = rng.random_range(0..80);
            let a = idx.approx_dist(i, j).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - idx.approx_dist(j, i).unwrap()).abs() < 1e-12);
        }
        prop_assert_eq!(idx.approx_dist(3, 3).unwrap(), 0.0);
    }
}
