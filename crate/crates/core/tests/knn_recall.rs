use cold_core::knn_index::{brute_force_knn, build_index, recall_at_k, HnswParams, KnnIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| rng.random::<f64>()).collect()
}

#[test]
fn recall_at_ten_on_uniform_cube() {
    let d = 16;
    let points = uniform(5000, d, 1);
    let index = build_index(&points, d, &HnswParams { m: 16, ef_construction: 200, seed: 0 }).unwrap();
    let queries: Vec<Vec<f64>> = uniform(1000, d, 2).chunks(d).map(<[f64]>::to_vec).collect();
    let recall = recall_at_k(&index, &points, &queries, 10, 200).unwrap();
    assert!(recall >= 0.95, "recall {recall}");
}

#[test]
fn build_is_deterministic_and_seed_sensitive() {
    let points = uniform(800, 4, 3);
    let p = HnswParams { m: 8, ef_construction: 50, seed: 17 };
    let a = build_index(&points, 4, &p).unwrap();
    let b = build_index(&points, 4, &p).unwrap();
    assert_eq!(a.links(), b.links());
    assert_eq!(a.entry_point(), b.entry_point());
    let c = build_index(&points, 4, &HnswParams { seed: 18, ..p }).unwrap();
    assert_ne!(a.links(), c.links());
}

#[test]
fn degree_bounds_and_layers() {
    let points = uniform(2000, 3, 5);
    let p = HnswParams { m: 6, ef_construction: 40, seed: 1 };
    let index = build_index(&points, 3, &p).unwrap();
    for id in 0..index.len() {
        for layer in 0..index.node_layers(id) {
            let nb = index.neighbors(id, layer);
            assert!(nb.len() <= p.max_links(layer));
            assert!(nb.iter().all(|&j| j as usize != id && index.node_layers(j as usize) > layer));
        }
    }
    assert!(index.num_layers() >= 2);
}

#[test]
fn full_k_returns_every_point_sorted() {
    let points = uniform(300, 2, 9);
    let index = build_index(&points, 2, &HnswParams::default()).unwrap();
    let q = [0.5, 0.5];
    let got = index.query(&q, 300, 300).unwrap();
    let want = brute_force_knn(&points, 2, &q, 300).unwrap();
    assert_eq!(got.iter().map(|n| n.id).collect::<Vec<_>>(), want.iter().map(|n| n.id).collect::<Vec<_>>());
}

#[test]
fn rebuild_from_parts_round_trips() {
    let points = uniform(200, 3, 4);
    let index = build_index(&points, 3, &HnswParams::default()).unwrap();
    let entry = index.entry_point() as u32;
    let again = KnnIndex::from_parts(&points, 3, *index.params(), index.links().to_vec(), entry, index.checksum()).unwrap();
    assert_eq!(again.query(&[0.1, 0.2, 0.3], 5, 20).unwrap(), index.query(&[0.1, 0.2, 0.3], 5, 20).unwrap());
    let mut tampered = points;
    tampered[0] += 1.0;
    assert!(KnnIndex::from_parts(&tampered, 3, *index.params(), index.links().to_vec(), entry, index.checksum()).is_err());
}

#[test]
fn duplicate_points_are_handled() {
    let points = vec![1.0; 2 * 50];
    let index = build_index(&points, 2, &HnswParams::default()).unwrap();
    let got = index.query(&[1.0, 1.0], 50, 50).unwrap();
    let ids: Vec<usize> = got.iter().map(|n| n.id).collect();
    assert_eq!(ids, (0..50).collect::<Vec<_>>());
}
