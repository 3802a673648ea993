use oclbench_core::nn::Params;
use oclbench_core::rng::{derive_seed, normal_array, seeded, uniform_array};
use oclbench_core::slot_attention::{
    init_params, masks_from_attention, run_slot_attention, FeatureMap, SlotConfig,
};
use oclbench_core::Array;

#[test]
fn columns_sum_to_one_at_every_iteration() {
    for i in 0..100u64 {
        let mut rng = seeded(derive_seed(i, "attention-input"));
        let k = 1 + (i as usize % 5);
        let (rows, cols) = (2 + i as usize % 3, 3 + i as usize % 4);
        let d_in = 3 + i as usize % 4;
        let config = SlotConfig {
            k,
            d_slot: 6,
            iterations: 1 + i as usize % 5,
            mlp_hidden: 8,
            ..SlotConfig::default()
        };
        let mut params = Params::new();
        init_params(&mut params, &mut rng, d_in, &config);
        let scale = uniform_array(&mut rng, &[1], 0.1, 10.0).data()[0];
        let tokens = normal_array(&mut rng, &[rows * cols, d_in], scale);
        let features = FeatureMap::new(tokens, (rows, cols)).unwrap();
        let (slots, maps) = run_slot_attention(&features, &params, &config, i).unwrap();
        assert_eq!(slots.slots.shape(), &[k, 6]);
        assert_eq!(maps.iterations.len(), config.iterations);
        for w in &maps.iterations {
            assert_eq!(w.shape(), &[k, rows * cols]);
            for j in 0..rows * cols {
                let total: f64 = (0..k).map(|s| w.get2(s, j)).sum();
                assert!(
                    (total - 1.0).abs() < 1e-6,
                    "input {} token {}: {}",
                    i,
                    j,
                    total
                );
            }
        }
        assert!(masks_from_attention(maps.final_weights(), (rows, cols))
            .unwrap()
            .is_partition());
    }
}

/// Two Gaussian blobs in feature space laid out as the left and right half
/// of a 4x4 grid.
fn two_clusters() -> FeatureMap {
    let noise = normal_array(&mut seeded(77), &[16, 4], 0.1);
    let tokens = Array::from_fn(16, 4, |j, c| {
        let center = if j % 4 < 2 {
            [3.0, 0.0, -3.0, 0.0]
        } else {
            [-3.0, 0.0, 3.0, 0.0]
        };
        center[c] + noise.get2(j, c)
    });
    FeatureMap::new(tokens, (4, 4)).unwrap()
}

const SHARPEN: f64 = 4.0;

#[test]
fn separated_clusters_bind_to_distinct_slots() {
    let config = SlotConfig {
        k: 2,
        d_slot: 8,
        iterations: 5,
        mlp_hidden: 16,
        ..SlotConfig::default()
    };
    let mut params = Params::new();
    init_params(&mut params, &mut seeded(5), 4, &config);
    // a low attention temperature, as after training
    for name in ["sa.k.w", "sa.q.w"] {
        let sharp = params.get(name).unwrap().map(|v| v * SHARPEN);
        params.insert(name, sharp);
    }
    let (_, maps) = run_slot_attention(&two_clusters(), &params, &config, 3).unwrap();
    let w = maps.final_weights();
    // regression oracle: slot of the left cluster, frozen from a reviewed run
    let left_slot = 1;
    for j in 0..16 {
        let owner = if j % 4 < 2 { left_slot } else { 1 - left_slot };
        assert!(
            w.get2(owner, j) >= 0.9,
            "token {} gives slot {} weight {}",
            j,
            owner,
            w.get2(owner, j)
        );
    }
}
