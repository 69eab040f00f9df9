mod oracles;

use proptest::prelude::*;
use skillcot_core::clustering::{fit_kmeans, fit_kmeans_detailed, KMeansOptions};

fn opts() -> KMeansOptions {
    KMeansOptions::default()
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, u64)> {
    (1usize..=12).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), n),
            1usize..=n.min(3),
            any::<u64>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn result_is_a_lloyd_fixed_point((points, k, seed) in instance()) {
        let fit = fit_kmeans_detailed(&points, k, seed, &opts()).unwrap();
        let c = &fit.model.centroids;
        prop_assert_eq!(c.len(), k);
        for (i, p) in points.iter().enumerate() {
            let own = oracles::sq_dist(p, &c[fit.labels[i]]);
            let best = oracles::sq_dist(p, &c[oracles::nearest_centroid(c, p)]);
            prop_assert!(own <= best + 1e-12, "point {} not at its nearest centroid", i);
        }
        for (j, centroid) in c.iter().enumerate() {
            let members: Vec<usize> = (0..points.len()).filter(|&i| fit.labels[i] == j).collect();
            prop_assert!(!members.is_empty(), "cluster {} empty", j);
            let m = oracles::mean_of(&points, &members);
            prop_assert!(oracles::sq_dist(&m, centroid) < 1e-18, "centroid {} is not its members' mean", j);
        }
        let recomputed: f64 = points.iter().map(|p| oracles::sq_dist(p, &c[oracles::nearest_centroid(c, p)])).sum();
        prop_assert!((recomputed - fit.model.inertia).abs() <= 1e-9 * recomputed.max(1.0));
    }

    #[test]
    fn inertia_never_below_optimum((points, k, seed) in instance()) {
        prop_assume!(points.len() <= 8);
        let model = fit_kmeans(&points, k, seed, &opts()).unwrap();
        let best = oracles::brute_force_inertia(&points, k);
        prop_assert!(model.inertia >= best - 1e-9);
    }

    #[test]
    fn inertia_trace_is_non_increasing((points, k, seed) in instance()) {
        let fit = fit_kmeans_detailed(&points, k, seed, &opts()).unwrap();
        for w in fit.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0));
        }
    }

    #[test]
    fn same_seed_same_model((points, k, seed) in instance()) {
        let a = fit_kmeans(&points, k, seed, &opts()).unwrap();
        let b = fit_kmeans(&points, k, seed, &opts()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn four_point_fixture_reaches_brute_force_optimum() {
    let points = vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![10.0, 0.0],
        vec![10.0, 1.0],
    ];
    assert_eq!(oracles::brute_force_inertia(&points, 2), 1.0);
    for seed in 0..20 {
        let model = fit_kmeans(&points, 2, seed, &opts()).unwrap();
        assert_eq!(model.inertia, 1.0, "seed {seed}");
    }
}

#[test]
fn permuting_separated_input_permutes_labels_only() {
    let mut points = Vec::new();
    for (cx, cy) in [(0.0, 0.0), (50.0, 0.0), (0.0, 50.0)] {
        for i in 0..6 {
            let t = i as f64 * 0.37;
            points.push(vec![cx + t.sin(), cy + t.cos()]);
        }
    }
    let fit = fit_kmeans_detailed(&points, 3, 4, &opts()).unwrap();
    let perm: Vec<usize> = (0..points.len()).rev().collect();
    let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
    let other = fit_kmeans_detailed(&shuffled, 3, 4, &opts()).unwrap();
    assert!((fit.model.inertia - other.model.inertia).abs() < 1e-9);
    let sorted = |mut c: Vec<Vec<f64>>| {
        c.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        c
    };
    for (a, b) in sorted(fit.model.centroids.clone())
        .iter()
        .zip(sorted(other.model.centroids.clone()))
    {
        assert!(oracles::sq_dist(a, &b).sqrt() < 1e-9);
    }
    // same partition up to relabelling
    for a in 0..points.len() {
        for b in 0..points.len() {
            let pa = perm.iter().position(|&i| i == a).unwrap();
            let pb = perm.iter().position(|&i| i == b).unwrap();
            assert_eq!(
                fit.labels[a] == fit.labels[b],
                other.labels[pa] == other.labels[pb]
            );
        }
    }
}

#[test]
fn restarts_never_worse_than_first_run() {
    let points: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            let t = i as f64;
            vec![(t * 1.7).sin() * 5.0, (t * 0.9).cos() * 5.0]
        })
        .collect();
    let single = fit_kmeans(&points, 4, 11, &opts()).unwrap();
    let many = fit_kmeans(
        &points,
        4,
        11,
        &KMeansOptions {
            restarts: 6,
            ..opts()
        },
    )
    .unwrap();
    assert!(many.inertia <= single.inertia);
}
