//! Helpers shared by the integration test suites.
#![allow(dead_code)]

use bsrbf_kan::matrix::Matrix;
use bsrbf_kan::model::{softmax_cross_entropy, ModelConfig, Network};
use bsrbf_kan::rng::SeededRng;

/// Outcome of a whole-network finite-difference gradient check.
#[derive(Debug)]
pub struct GradCheckReport {
    /// Largest normalized error across all parameters and inputs.
    pub max_err: f64,
    /// Scalars checked (parameters + inputs).
    pub checked: usize,
    /// Where the largest error occurred.
    pub worst: String,
}

/// Normalized disagreement between analytic and finite-difference values:
/// relative where the gradient is large, absolute (scaled by 1e-2) where it
/// is near zero so FD round-off noise cannot dominate.
fn normalized_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-2)
}

/// Check every parameter gradient and every input gradient of a freshly
/// built network against central finite differences of the cross-entropy
/// loss (step 1e-5) on a batch of 2.
pub fn network_gradcheck(config: &ModelConfig) -> GradCheckReport {
    const H: f64 = 1e-5;
    let mut net = Network::<f64>::build(config).expect("build");
    let d_in = config.widths[0];
    let classes = *config.widths.last().unwrap();
    assert!(classes >= 3, "gradcheck labels assume at least 3 classes");
    let mut rng = SeededRng::new(1234);
    let x = Matrix::uniform(2, d_in, -1.0, 1.0, &mut rng);
    let labels = [0u8, 2];

    // Analytic pass.
    net.zero_grads();
    let logits = net.forward(&x, true).expect("forward");
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels).expect("loss");
    let dx = net.backward(&dlogits).expect("backward");
    let mut analytic: Vec<(String, f64)> = Vec::new();
    net.visit_params(&mut |idx, p| {
        for (k, g) in p.grad.data().iter().enumerate() {
            analytic.push((format!("layers.{idx}.{}[{k}]", p.name), *g));
        }
    });

    let loss_of = |net: &mut Network<f64>, x: &Matrix<f64>| -> f64 {
        let logits = net.predict(x).expect("predict");
        let (loss, _) = softmax_cross_entropy(&logits, &labels).expect("loss");
        loss
    };

    // Add `delta` to the i-th parameter scalar in traversal order.
    let nudge = |net: &mut Network<f64>, target: usize, delta: f64| {
        let mut seen = 0usize;
        net.visit_params(&mut |_, p| {
            let n = p.value.data().len();
            if target >= seen && target < seen + n {
                p.value.data_mut()[target - seen] += delta;
            }
            seen += n;
        });
    };

    let mut max_err = 0.0f64;
    let mut worst = String::new();
    let mut note = |err: f64, name: &str| {
        if err > max_err {
            max_err = err;
            worst = name.to_string();
        }
    };

    for (i, (name, grad)) in analytic.iter().enumerate() {
        nudge(&mut net, i, H);
        let lp = loss_of(&mut net, &x);
        nudge(&mut net, i, -2.0 * H);
        let lm = loss_of(&mut net, &x);
        nudge(&mut net, i, H);
        let fd = (lp - lm) / (2.0 * H);
        note(normalized_err(*grad, fd), name);
    }

    let mut checked = analytic.len();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let mut xp = x.clone();
            xp.set(r, c, x.get(r, c) + H);
            let lp = loss_of(&mut net, &xp);
            let mut xm = x.clone();
            xm.set(r, c, x.get(r, c) - H);
            let lm = loss_of(&mut net, &xm);
            let fd = (lp - lm) / (2.0 * H);
            note(normalized_err(dx.get(r, c), fd), &format!("input[{r}][{c}]"));
            checked += 1;
        }
    }

    GradCheckReport {
        max_err,
        checked,
        worst,
    }
}
