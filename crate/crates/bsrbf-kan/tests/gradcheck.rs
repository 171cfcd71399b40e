//! Whole-network gradient checks: every layer kind at widths [6, 4, 3],
//! batch 2, against central finite differences (step 1e-5), normalized
//! error below 1e-4.

mod common;

use bsrbf_kan::layers::AblationFlags;
use bsrbf_kan::model::{ModelConfig, ModelKind};

const TOL: f64 = 1e-4;

fn check(config: ModelConfig) {
    let report = common::network_gradcheck(&config);
    assert!(
        report.max_err < TOL,
        "{}: max normalized gradient error {:.3e} at {} ({} scalars checked)",
        config.kind.name(),
        report.max_err,
        report.worst,
        report.checked
    );
}

fn small(kind: ModelKind) -> ModelConfig {
    ModelConfig::new(kind).with_widths(vec![6, 4, 3])
}

#[test]
fn bsrbf_gradients_match_finite_differences() {
    check(small(ModelKind::Bsrbf));
}

#[test]
fn efficient_kan_gradients_match_finite_differences() {
    check(small(ModelKind::EfficientKan));
}

#[test]
fn fast_kan_gradients_match_finite_differences() {
    check(small(ModelKind::FastKan));
}

#[test]
fn faster_kan_gradients_match_finite_differences() {
    check(small(ModelKind::FasterKan));
}

#[test]
fn gottlieb_gradients_match_finite_differences() {
    check(small(ModelKind::Gottlieb));
}

#[test]
fn mlp_gradients_match_finite_differences() {
    check(small(ModelKind::Mlp));
}

#[test]
fn ablated_bsrbf_gradients_match_finite_differences() {
    // The no-base/no-layer-norm variant exercises the pure-expansion path.
    let flags = AblationFlags {
        use_base: false,
        use_layer_norm: false,
        ..Default::default()
    };
    check(small(ModelKind::Bsrbf).with_flags(flags));
}

#[test]
fn gottlieb_with_different_seed_still_checks() {
    // A second draw guards against a lucky cancellation at one init point.
    check(small(ModelKind::Gottlieb).with_seed(5));
}
