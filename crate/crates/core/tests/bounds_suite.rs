use lsgp::bounds::{check_elementwise_deviation_all, check_cross_covariance, check_within_covariance};
use lsgp::eval::{random_localized_model, LocalizedSpec};

#[test]
fn random_models_satisfy_all_bounds() {
    for seed in 0..100 {
        let spec = LocalizedSpec { seed, components: 2 + (seed as usize % 3), leakage: 0.05 * (seed % 5) as f64, band_limited: true, ..Default::default() };
        let (model, p) = random_localized_model(&spec).unwrap();
        let t2 = check_elementwise_deviation_all(&model, &p).unwrap();
        assert!(t2.holds, "seed {seed}: {t2:?}");
        let t3 = check_cross_covariance(&model, &p).unwrap();
        assert!(t3.holds, "seed {seed}: {t3:?}");
        let (t4, terms) = check_within_covariance(&model, &p).unwrap();
        assert!(t4.holds, "seed {seed}: {t4:?} {terms:?}");
    }
}

#[test]
fn cross_covariance_grows_with_spectral_overlap() {
    use lsgp::eval::{evenly_spaced_bumps, synthetic_block_lsgp, BlockSpec};
    let mut increases = 0;
    for seed in 0..10 {
        let base = BlockSpec { blocks: 3, nodes_per_block: 15, knn: 4, inside: 1.0, outside: 0.1, kernels: None, inter_edges: 6, seed };
        let (graph, _, _) = synthetic_block_lsgp(&base).unwrap();
        let lambda_max = graph.spectrum().frequencies.max();
        let lhs = |overlap: f64| {
            let spec = BlockSpec { kernels: Some(evenly_spaced_bumps(lambda_max, 3, overlap)), ..base.clone() };
            let (_, p, model) = synthetic_block_lsgp(&spec).unwrap();
            check_cross_covariance(&model, &p).unwrap().lhs
        };
        if lhs(2.0) >= lhs(0.0) {
            increases += 1;
        }
    }
    assert!(increases >= 8, "{increases}/10");
}
