//! Property suites for each module's invariants, one test per suite.

mod common;

use common::props;

macro_rules! suite {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                if let Err(e) = props::$name() {
                    panic!("{e}");
                }
            }
        )*
    };
}

suite!(
    linalg_dense,
    linalg_svd,
    linalg_nuclear_norm,
    linalg_subgradient,
    ingest_order_and_alignment,
    ingest_standardize_idempotent,
    ingest_synth_deterministic,
    ingest_dataset_validation,
    encoder_backward,
    encoder_forward_rows,
    encoder_unit_norm_during_training,
    neighbor_graph_oracle,
    neighbor_graph_unit_rows,
    mmcr_gradient,
    mmcr_loss_consistency,
    mmcr_train_config,
    fuzzy_softmax_rows,
    fuzzy_symmetrize,
    fuzzy_local_scales,
    fuzzy_path_isolation,
    layout_fit_ab,
    layout_rigid_motion,
    layout_determinism_and_objective,
    metrics_motion_invariance,
    metrics_label_permutation,
    metrics_sample_convergence,
    metrics_small_oracles,
);

#[test]
fn every_suite_is_registered() {
    assert_eq!(props::SUITES.len(), 27);
}
