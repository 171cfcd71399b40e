//! Network layers.
//!
//! Every layer follows the same discipline:
//!
//! * `forward(x, train)` consumes a `batch x d_in` matrix and returns
//!   `batch x d_out`. With `train = true` it caches the intermediates that
//!   backward needs; with `train = false` it skips derivative work and
//!   clears any stale cache so a later `backward` cannot silently use it.
//! * `backward(dy)` consumes the loss gradient with respect to the layer
//!   output, **accumulates** parameter gradients in place, and returns the
//!   gradient with respect to the layer input. It errors with
//!   [`Error::MissingState`](crate::Error) if no training forward preceded it.
//! * `visit_params` / `visit_params_ref` walk `(value, gradient)` pairs in a
//!   fixed, documented order; the optimizer, serializer, and parameter
//!   counter all share that order.
//!
//! Expanded basis features are laid out feature-major: for expansion width
//! `m`, the values for input feature `i` occupy columns `i*m .. (i+1)*m`.

mod bsrbf;
mod efficient_kan;
mod fast_kan;
mod faster_kan;
mod gottlieb;
mod layer_norm;
mod linear;

pub use bsrbf::{BsrbfLayer, BsrbfOptions};
pub use efficient_kan::EfficientKanLayer;
pub use fast_kan::FastKanLayer;
pub use faster_kan::FasterKanLayer;
pub use gottlieb::GottliebLayer;
pub use layer_norm::LayerNorm;
pub use linear::LinearLayer;

use serde::{Deserialize, Serialize};

use crate::basis::SplineGrid;
use crate::matrix::Matrix;
use crate::num::{real, Real};

/// Gain used for every Kaiming-uniform weight draw in this crate:
/// `1/sqrt(3)`, which makes the bound come out to `1/sqrt(fan_in)`.
pub(crate) fn default_gain() -> f64 {
    1.0 / 3.0_f64.sqrt()
}

/// Which branches of a BSRBF layer are active. All four default to on;
/// the ablation harness toggles them off one or two at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_bspline: bool,
    pub use_rbf: bool,
    pub use_base: bool,
    pub use_layer_norm: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_bspline: true,
            use_rbf: true,
            use_base: true,
            use_layer_norm: true,
        }
    }
}

impl AblationFlags {
    /// Short label used in ablation tables (`full`, `no_bs`, `no_bs_no_rbf`, ...).
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.use_bspline {
            parts.push("no_bs");
        }
        if !self.use_rbf {
            parts.push("no_rbf");
        }
        if !self.use_base {
            parts.push("no_bo");
        }
        if !self.use_layer_norm {
            parts.push("no_ln");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("_")
        }
    }
}

/// Scalar activation applied to the base branch of a layer.
///
/// Hidden layers use `Silu`; the final layer of every network uses
/// `Identity` so logits leave the network unsquashed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Identity,
}

/// Numerically stable logistic sigmoid.
#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl Activation {
    /// Value at `x`.
    #[inline]
    pub fn eval<F: Real>(self, x: F) -> F {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// `(value, derivative)` at `x`.
    #[inline]
    pub fn eval_with_deriv<F: Real>(self, x: F) -> (F, F) {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                // d/dx [x s(x)] = s (1 + x (1 - s)).
                (x * s, s * (F::one() + x * (F::one() - s)))
            }
            Activation::Identity => (x, F::one()),
        }
    }

    /// Apply to a whole matrix, returning `(values, derivatives)`.
    pub(crate) fn apply_with_deriv<F: Real>(self, x: &Matrix<F>) -> (Matrix<F>, Matrix<F>) {
        let mut values = Matrix::zeros(x.rows(), x.cols());
        let mut derivs = Matrix::zeros(x.rows(), x.cols());
        for ((v, d), &xi) in values
            .data_mut()
            .iter_mut()
            .zip(derivs.data_mut().iter_mut())
            .zip(x.data())
        {
            let (val, der) = self.eval_with_deriv(xi);
            *v = val;
            *d = der;
        }
        (values, derivs)
    }

    /// Apply to a whole matrix, values only.
    pub(crate) fn apply<F: Real>(self, x: &Matrix<F>) -> Matrix<F> {
        x.map(|v| self.eval(v))
    }
}

/// Mutable view of one parameter tensor and its gradient accumulator.
pub struct ParamMut<'a, F> {
    pub name: &'static str,
    pub value: &'a mut Matrix<F>,
    pub grad: &'a mut Matrix<F>,
}

/// Shared view of one parameter tensor.
pub struct ParamRef<'a, F> {
    pub name: &'static str,
    pub value: &'a Matrix<F>,
}

// ---------------------------------------------------------------------------
// Shared expansion kernels
// ---------------------------------------------------------------------------

/// Add the B-spline expansion of `h` into `phi` (and its input-derivatives
/// into `dphi` when given). `phi` has shape `batch x (d * m)` with the
/// feature-major layout described in the module docs.
pub(crate) fn add_bspline_expansion<F: Real>(
    phi: &mut Matrix<F>,
    mut dphi: Option<&mut Matrix<F>>,
    h: &Matrix<F>,
    grid: &SplineGrid<F>,
) {
    let m = grid.basis_count();
    let d = h.cols();
    debug_assert_eq!(phi.cols(), d * m);
    let mut vals = vec![F::zero(); m];
    let mut ders = vec![F::zero(); m];
    let mut scratch = vec![F::zero(); grid.scratch_len()];
    for b in 0..h.rows() {
        for i in 0..d {
            let x = h.get(b, i);
            match dphi.as_deref_mut() {
                Some(dphi) => {
                    grid.eval_with_deriv_into(x, &mut vals, &mut ders, &mut scratch);
                    let drow = &mut dphi.row_mut(b)[i * m..(i + 1) * m];
                    for (o, &v) in drow.iter_mut().zip(&ders) {
                        *o += v;
                    }
                }
                None => grid.eval_into(x, &mut vals, &mut scratch),
            }
            let prow = &mut phi.row_mut(b)[i * m..(i + 1) * m];
            for (o, &v) in prow.iter_mut().zip(&vals) {
                *o += v;
            }
        }
    }
}

/// Add a radial-basis expansion of `h` into `phi` using a per-scalar
/// evaluator `eval(x, values, derivs)`.
pub(crate) fn add_rbf_expansion<F: Real>(
    phi: &mut Matrix<F>,
    mut dphi: Option<&mut Matrix<F>>,
    h: &Matrix<F>,
    m: usize,
    mut eval: impl FnMut(F, &mut [F], Option<&mut [F]>),
) {
    let d = h.cols();
    debug_assert_eq!(phi.cols(), d * m);
    let mut vals = vec![F::zero(); m];
    let mut ders = vec![F::zero(); m];
    for b in 0..h.rows() {
        for i in 0..d {
            let x = h.get(b, i);
            match dphi.as_deref_mut() {
                Some(dphi) => {
                    eval(x, &mut vals, Some(&mut ders));
                    let drow = &mut dphi.row_mut(b)[i * m..(i + 1) * m];
                    for (o, &v) in drow.iter_mut().zip(&ders) {
                        *o += v;
                    }
                }
                None => eval(x, &mut vals, None),
            }
            let prow = &mut phi.row_mut(b)[i * m..(i + 1) * m];
            for (o, &v) in prow.iter_mut().zip(&vals) {
                *o += v;
            }
        }
    }
}

/// `dh[b][i] += sum_j a[b][i*m + j] * w[b][i*m + j]` — the chain-rule fold
/// from expanded-feature gradients back to per-feature input gradients.
pub(crate) fn fold_grouped_product<F: Real>(
    dh: &mut Matrix<F>,
    a: &Matrix<F>,
    w: &Matrix<F>,
    m: usize,
) {
    let d = dh.cols();
    debug_assert_eq!(a.cols(), d * m);
    debug_assert_eq!(a.shape(), w.shape());
    for b in 0..dh.rows() {
        let arow = a.row(b);
        let wrow = w.row(b);
        let orow = dh.row_mut(b);
        for i in 0..d {
            let mut acc = F::zero();
            for j in i * m..(i + 1) * m {
                acc = arow[j].mul_add(wrow[j], acc);
            }
            orow[i] += acc;
        }
    }
}

/// Uniform bias initialization mirroring the common `1/sqrt(fan_in)` rule.
pub(crate) fn bias_uniform<F: Real>(
    d_out: usize,
    fan_in: usize,
    rng: &mut crate::rng::SeededRng,
) -> Matrix<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::uniform(1, d_out, real(-bound), real(bound), rng)
}
