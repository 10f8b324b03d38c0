mod common;

use coltype::augment::ModelKind;
use coltype::nn::Aggregation;
use common::{gradient_check, Case};

#[test]
fn single_mode_gradients_match_finite_differences() {
    for seed in 1..=5 {
        let r = gradient_check(&Case::random(ModelKind::Single, Aggregation::Mean, seed));
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {} ({})", r.max_rel_error, r.worst);
        assert!(r.checked > 300);
    }
}

#[test]
fn multi_mode_gradients_match_for_every_aggregation() {
    for agg in [
        Aggregation::Mean,
        Aggregation::Sum,
        Aggregation::Concatenation,
        Aggregation::WeightedSum,
    ] {
        for seed in 1..=2 {
            let r = gradient_check(&Case::random(ModelKind::Multi, agg, seed));
            assert!(r.max_rel_error < 1e-4, "{agg:?} seed {seed}: {} ({})", r.max_rel_error, r.worst);
        }
    }
}
