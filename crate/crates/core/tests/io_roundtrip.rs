use std::path::Path;

use missloc::analytic::BlockProbabilities;
use missloc::io::{
    read_arrivals, read_info, read_lambda_table, read_missing, read_neighbors, read_p_table,
    write_arrivals, write_info, write_lambda_table, write_missing, write_neighbors, write_p_table,
    InfoFile, NeighborTable, RunConfig, ZoneRecord, N_FEATURES,
};
use missloc::{Error, IntensityField, ProblemShape};
use proptest::prelude::*;

fn shape_strategy() -> impl Strategy<Value = ProblemShape> {
    (1usize..3, 1usize..5, 1usize..4, prop::collection::vec(1usize..4, 1..4))
        .prop_map(|(c, i, ppd, obs)| ProblemShape::daily(c, i, ppd, &obs).unwrap())
}

fn counts_strategy() -> impl Strategy<Value = (ProblemShape, Vec<i64>, Vec<i64>)> {
    shape_strategy().prop_flat_map(|shape| {
        let m1 = prop::collection::vec(0i64..5, shape.zeros_m1().len());
        let m0 = prop::collection::vec(0i64..5, shape.zeros_m0().len());
        (Just(shape), m1, m0)
    })
}

/// Zeroes entries past each block's observation count.
fn mask(shape: &ProblemShape, m1: &mut [i64], m0: &mut [i64]) {
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            for n in shape.n_obs(c, t)..shape.max_obs() {
                m0[shape.m0_index(c, t, n)] = 0;
                for i in 0..shape.n_zones() {
                    m1[shape.m1_index(c, i, t, n)] = 0;
                }
            }
        }
    }
}

fn zone_strategy(n: usize) -> impl Strategy<Value = Vec<ZoneRecord>> {
    let record = (
        -90.0f64..90.0,
        -180.0f64..180.0,
        prop::sample::select(vec!["urban", "rural", "x1"]),
        prop::array::uniform5(0.0f64..1e6),
        prop::collection::vec((0usize..n, 0.001f64..50.0), 0..4),
    );
    prop::collection::vec(record, n).prop_map(move |raw| {
        let mut zones: Vec<ZoneRecord> = raw
            .into_iter()
            .enumerate()
            .map(|(i, (lat, lon, ty, features, nb))| {
                let mut neighbors: Vec<(usize, f64)> = nb.into_iter().filter(|(j, _)| *j != i).collect();
                neighbors.sort_by_key(|(j, _)| *j);
                neighbors.dedup_by_key(|(j, _)| *j);
                ZoneRecord { lat, lon, zone_type: ty.to_string(), features, neighbors }
            })
            .collect();
        // make every listing mutual with the same distance
        for i in 0..zones.len() {
            for (j, d) in zones[i].neighbors.clone() {
                if !zones[j].neighbors.iter().any(|(k, _)| *k == i) {
                    zones[j].neighbors.push((i, d));
                }
            }
        }
        zones
    })
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn count_files_round_trip((shape, mut m1, mut m0) in counts_strategy()) {
        mask(&shape, &mut m1, &mut m0);
        let dir = tempfile::tempdir().unwrap();
        let info = dir.path().join("info.txt");
        write_info(&info, &InfoFile { shape: shape.clone(), extra: ["7".into(), "x".into()] }).unwrap();
        let back = read_info(&info).unwrap();
        prop_assert_eq!(&back.shape, &shape);
        prop_assert_eq!(back.extra, ["7".to_string(), "x".to_string()]);

        let a = dir.path().join("arrivals.txt");
        write_arrivals(&a, &shape, &m1).unwrap();
        prop_assert_eq!(read_arrivals(&a, &shape).unwrap(), m1);
        let b = dir.path().join("missing.txt");
        write_missing(&b, &shape, &m0).unwrap();
        prop_assert_eq!(read_missing(&b, &shape).unwrap(), m0);
    }

    #[test]
    fn neighbors_round_trip(zones in (1usize..6).prop_flat_map(zone_strategy)) {
        let table = NeighborTable::new(zones).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("neighbors.txt");
        write_neighbors(&p, &table).unwrap();
        prop_assert_eq!(read_neighbors(&p).unwrap(), table);
    }

    #[test]
    fn result_tables_round_trip(
        shape in shape_strategy(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..shape.n_cells()).map(|_| rng.random_range(0.0..1e4)).collect();
        let lambda = IntensityField::new(&shape, values).unwrap();
        let probs: Vec<Option<f64>> = (0..shape.n_blocks())
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0.0..1.0)))
            .collect();
        let p = BlockProbabilities::new(&shape, probs.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("lambda.txt");
        write_lambda_table(&lp, &lambda, None).unwrap();
        let rows = read_lambda_table(&lp).unwrap();
        prop_assert_eq!(rows.len(), shape.n_cells());
        for r in rows {
            let v = lambda.get(r.c, r.i, r.t);
            let back = r.lambda.unwrap();
            prop_assert!((back - v).abs() <= 1e-11 * v.abs().max(1e-300));
        }
        let pp = dir.path().join("p.txt");
        write_p_table(&pp, &p, None).unwrap();
        let rows = read_p_table(&pp).unwrap();
        for r in rows {
            match (r.p, p.get(r.c, r.t)) {
                (None, None) => {}
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-11 * b.abs().max(1e-300)),
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }
}

#[test]
fn format_examples() {
    let dir = tempfile::tempdir().unwrap();
    let info = write(dir.path(), "info", "2 7 3 2 0 0\n1 1 1 1 1 1 1\n");
    let shape = read_info(&info).unwrap().shape;
    let a = write(dir.path(), "a", "");
    assert!(read_arrivals(&a, &shape).unwrap().iter().all(|v| *v == 0));
    let a = write(dir.path(), "a1", "1 1 1 1 1 4 0\n");
    let m1 = read_arrivals(&a, &shape).unwrap();
    assert_eq!(m1[shape.m1_index(0, 0, 0, 0)], 4);
    assert_eq!(m1.iter().sum::<i64>(), 4);

    let a = write(dir.path(), "dup", "1 1 1 1 1 4 0\n2 1 1 1 1 1 0\n1 1 1 1 1 2 0\n");
    assert!(matches!(read_arrivals(&a, &shape), Err(Error::Parse { line: 3, .. })));
    let a = write(dir.path(), "range", "1 1 4 1 1 4 0\n");
    assert!(matches!(read_arrivals(&a, &shape), Err(Error::Parse { line: 1, .. })));
    let a = write(dir.path(), "tabs", "1\t2\t3\t2\t1\t5\t0\n");
    let m1 = read_arrivals(&a, &shape).unwrap();
    assert_eq!(m1[shape.m1_index(1, 2, shape.period(1, 0).unwrap(), 0)], 5);

    let m = write(dir.path(), "m", "1 1 1 1 1 2 0\n1 1 3 1 1 5 0\n");
    let m0 = read_missing(&m, &shape).unwrap();
    assert_eq!(m0[shape.m0_index(0, 0, 0)], 7);
}

#[test]
fn neighbor_listing_is_symmetrized() {
    let dir = tempfile::tempdir().unwrap();
    let features = vec!["1"; N_FEATURES].join(" ");
    let text = format!("1 0 0 a {features} 2 1.5\n2 0 1 a {features}\n3 1 1 b {features} 1 2 2 1\n");
    let t = read_neighbors(&write(dir.path(), "n", &text)).unwrap();
    assert_eq!(t.adjacency, vec![vec![1, 2], vec![0, 2], vec![0, 1]]);
    let text = format!("1 0 0 a {features} 3 1.5\n2 0 1 a {features}\n");
    assert!(read_neighbors(&write(dir.path(), "bad", &text)).is_err());
}

#[test]
fn config_precedence_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "test.cfg",
        "max_iter = 500\ntest_weights = 0 0.001 0.005 0.01 0.03\nunknown_key = 3\n",
    );
    let plain = RunConfig::load(Some(&cfg), &[]).unwrap();
    assert_eq!(plain.solver.max_iter, 500);
    assert_eq!(plain.test_weights, vec![0.0, 0.001, 0.005, 0.01, 0.03]);
    let over = RunConfig::load(Some(&cfg), &[("max_iter".into(), "50".into())]).unwrap();
    assert_eq!(over.solver.max_iter, 50);
    let defaults = RunConfig::load(None, &[]).unwrap();
    assert_eq!(defaults.solver.eps, 1e-5);
    let bad = write(dir.path(), "bad.cfg", "sigma = often\n");
    assert!(matches!(RunConfig::load(Some(&bad), &[]), Err(Error::Config { .. })));
}
