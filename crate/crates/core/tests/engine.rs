use halfjoin::analysis::{overlap_accuracy, selectivity};
use halfjoin::dataset::{generate_synthetic, to_half, Dataset};
use halfjoin::oracle::{brute_force_fp64, reference_mixed_scalar};
use halfjoin::tiling::{self_join, TileConfig};
use halfjoin::ResultSet;
use proptest::prelude::*;

fn bits(rs: &ResultSet) -> Vec<(u32, u32, u32)> {
    rs.pairs().iter().map(|p| (p.i, p.j, p.dist_sq.to_bits())).collect()
}

fn small_config() -> impl Strategy<Value = TileConfig> {
    (
        prop_oneof![Just((64usize, 32usize)), Just((64, 64)), Just((128, 64)), Just((128, 32))],
        prop_oneof![Just(16usize), Just(32), Just(64)],
        1usize..=8,
        1usize..=2,
        1usize..=3,
    )
        .prop_map(|((block_side, warp_side), block_kslice, dispatch_square, prefetch_depth, workers)| TileConfig {
            block_side,
            block_kslice,
            warp_side,
            warp_kslice: 16,
            dispatch_square,
            prefetch_depth,
            workers,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tiled_join_matches_scalar_oracle(
        n in 1usize..300,
        d in 1usize..80,
        seed in any::<u64>(),
        eps in 0.0f32..3.0,
        cfg in small_config(),
    ) {
        let ds = generate_synthetic(n, d, seed, -1.0, 1.0).unwrap();
        let hd = to_half(&ds, cfg.block_side, 16).unwrap();
        let got = self_join(&hd, eps, &cfg).unwrap();
        let want = reference_mixed_scalar(&hd, eps).unwrap();
        prop_assert_eq!(bits(&got), bits(&want));
        prop_assert!(got.has_all_self_pairs());
        prop_assert!(got.is_symmetric());
        prop_assert!(got.indices_in_range());
    }

    #[test]
    fn results_grow_with_epsilon(seed in any::<u64>(), a in 0.0f32..2.0, b in 0.0f32..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ds = generate_synthetic(150, 24, seed, 0.0, 1.0).unwrap();
        let hd = to_half(&ds, 128, 16).unwrap();
        let cfg = TileConfig { workers: 1, ..TileConfig::default() };
        let small = self_join(&hd, lo, &cfg).unwrap().index_pairs();
        let large = self_join(&hd, hi, &cfg).unwrap().index_pairs();
        prop_assert!(small.iter().all(|p| large.binary_search(p).is_ok()));
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let ds = generate_synthetic(700, 48, 11, 0.0, 1.0).unwrap();
    let hd = to_half(&ds, 128, 16).unwrap();
    let base = bits(&self_join(&hd, 1.4, &TileConfig { workers: 1, ..TileConfig::default() }).unwrap());
    for workers in [2, 3, 5, 16] {
        let got = self_join(&hd, 1.4, &TileConfig { workers, ..TileConfig::default() }).unwrap();
        assert_eq!(bits(&got), base, "workers={workers}");
    }
}

#[test]
fn mixed_join_is_close_to_fp64_on_moderate_data() {
    let ds = generate_synthetic(600, 32, 12, 0.0, 1.0).unwrap();
    let hd = to_half(&ds, 128, 16).unwrap();
    let mixed = self_join(&hd, 1.2, &TileConfig::default()).unwrap();
    let truth = brute_force_fp64(&ds, 1.2f32 as f64).unwrap();
    let overlap = overlap_accuracy(&mixed, &truth).unwrap();
    assert!(overlap > 0.99, "overlap {overlap}");
    assert!((selectivity(&mixed) - selectivity(&truth)).abs() < 0.05 * selectivity(&truth).max(1.0));
}

#[test]
fn duplicated_points_are_neighbours_at_zero_radius() {
    let row = [0.3f32, -2.0, 7.5, 1e-3, 100.0];
    let mut values = Vec::new();
    for k in 0..4 {
        values.extend_from_slice(&row);
        values.extend(row.iter().map(|v| v + 1.0 + k as f32));
    }
    let ds = Dataset::new(8, 5, values).unwrap();
    let hd = to_half(&ds, 128, 16).unwrap();
    let rs = self_join(&hd, 0.0, &TileConfig::default()).unwrap();
    for i in (0..8).step_by(2) {
        let js: Vec<u32> = rs.neighbors(i).iter().map(|p| p.j).collect();
        assert_eq!(js, [0, 2, 4, 6]);
    }
}
