//! The BSRBF layer: a Kolmogorov-Arnold layer whose learned univariate
//! functions combine a B-spline expansion and a Gaussian radial-basis
//! expansion over layer-normalized inputs, plus a silu base branch.
//!
//! Forward pass for input `x` (`batch x d_in`):
//!
//! ```text
//! h   = LayerNorm(x)                       (skipped when disabled)
//! y   = act(h) · Wbᵀ  +  [BS(h) + RBF(h)] · Wsᵀ
//! ```
//!
//! where `BS` and `RBF` expand each scalar feature into `m` basis values
//! (feature-major layout) and the two expansions are summed elementwise,
//! which requires them to have equal width. Each branch can be switched off
//! independently; a branch that is off contributes nothing and owns no
//! parameters, so e.g. the variant with both expansions off is parameter-
//! for-parameter identical to a plain linear layer over `act(h)`.

use serde::{Deserialize, Serialize};

use crate::basis::{RbfGrid, SplineGrid};
use crate::error::{Error, Result};
use crate::layers::{
    add_bspline_expansion, add_rbf_expansion, default_gain, fold_grouped_product, AblationFlags,
    Activation, LayerNorm, ParamMut, ParamRef,
};
use crate::matrix::Matrix;
use crate::num::Real;
use crate::rng::SeededRng;

/// Structural options for a [`BsrbfLayer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsrbfOptions {
    /// Number of B-spline grid intervals over the primary range.
    pub grid_size: usize,
    /// B-spline order (polynomial degree).
    pub spline_order: usize,
    /// Number of Gaussian RBF centers.
    pub rbf_count: usize,
    /// Primary input range for both expansions' grids.
    pub spline_range: [f64; 2],
    /// Range spanned by the RBF centers.
    pub rbf_range: [f64; 2],
}

impl Default for BsrbfOptions {
    fn default() -> Self {
        BsrbfOptions {
            grid_size: 5,
            spline_order: 3,
            rbf_count: 8,
            spline_range: [-1.0, 1.0],
            rbf_range: [-2.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BsrbfLayer<F> {
    d_in: usize,
    d_out: usize,
    flags: AblationFlags,
    /// Expansion width `m`; equals the spline basis count and/or RBF count.
    m: usize,
    base_activation: Activation,
    layer_norm: Option<LayerNorm<F>>,
    spline_grid: Option<SplineGrid<F>>,
    rbf_grid: Option<RbfGrid<F>>,
    base_weight: Option<Matrix<F>>,
    spline_weight: Option<Matrix<F>>,
    #[serde(skip)]
    base_grad: Option<Matrix<F>>,
    #[serde(skip)]
    spline_grad: Option<Matrix<F>>,
    #[serde(skip)]
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F> {
    /// Base-branch activation values `act(h)`.
    act: Option<Matrix<F>>,
    /// Base-branch activation derivatives `act'(h)`.
    act_deriv: Option<Matrix<F>>,
    /// Summed basis expansion `BS(h) + RBF(h)`.
    phi: Option<Matrix<F>>,
    /// Its derivative with respect to `h`, same layout.
    dphi: Option<Matrix<F>>,
}

impl<F: Real> BsrbfLayer<F> {
    /// Construct with fresh parameters.
    ///
    /// Parameter initialization order (one RNG stream, draws in this order):
    /// layer norm (no draws), base weight (Kaiming uniform), spline weight
    /// (Kaiming uniform with fan-in `d_in * m`).
    pub fn new(
        d_in: usize,
        d_out: usize,
        flags: AblationFlags,
        base_activation: Activation,
        opts: &BsrbfOptions,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!(
                "BSRBF layer dims must be positive, got {d_in} -> {d_out}"
            )));
        }
        let spline_grid = if flags.use_bspline {
            Some(SplineGrid::new(
                opts.spline_range,
                opts.grid_size,
                opts.spline_order,
            )?)
        } else {
            None
        };
        let rbf_grid = if flags.use_rbf {
            Some(RbfGrid::new(opts.rbf_range, opts.rbf_count)?)
        } else {
            None
        };
        let spline_m = spline_grid.as_ref().map(SplineGrid::basis_count);
        let rbf_m = rbf_grid.as_ref().map(RbfGrid::count);
        let m = match (spline_m, rbf_m) {
            (Some(a), Some(b)) => {
                if a != b {
                    return Err(Error::Config(format!(
                        "BSRBF needs matching expansion widths to sum them: \
                         spline gives grid_size + order = {a}, rbf gives {b}"
                    )));
                }
                a
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => 0,
        };
        let layer_norm = if flags.use_layer_norm {
            Some(LayerNorm::new(d_in)?)
        } else {
            None
        };
        let gain = default_gain();
        let base_weight = if flags.use_base {
            Some(Matrix::kaiming_uniform(d_out, d_in, gain, rng)?)
        } else {
            None
        };
        let spline_weight = if m > 0 {
            Some(Matrix::kaiming_uniform(d_out, d_in * m, gain, rng)?)
        } else {
            None
        };
        let base_grad = base_weight.as_ref().map(|w| Matrix::zeros(w.rows(), w.cols()));
        let spline_grad = spline_weight
            .as_ref()
            .map(|w| Matrix::zeros(w.rows(), w.cols()));
        Ok(BsrbfLayer {
            d_in,
            d_out,
            flags,
            m,
            base_activation,
            layer_norm,
            spline_grid,
            rbf_grid,
            base_weight,
            spline_weight,
            base_grad,
            spline_grad,
            cache: None,
        })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    pub fn flags(&self) -> AblationFlags {
        self.flags
    }

    fn ensure_grads(&mut self) {
        if self.base_grad.is_none() {
            if let Some(w) = &self.base_weight {
                self.base_grad = Some(Matrix::zeros(w.rows(), w.cols()));
            }
        }
        if self.spline_grad.is_none() {
            if let Some(w) = &self.spline_weight {
                self.spline_grad = Some(Matrix::zeros(w.rows(), w.cols()));
            }
        }
    }

    /// Build the summed basis expansion of `h` (and its derivative in train
    /// mode).
    fn expand(&self, h: &Matrix<F>, train: bool) -> (Option<Matrix<F>>, Option<Matrix<F>>) {
        if self.m == 0 {
            return (None, None);
        }
        let mut phi = Matrix::zeros(h.rows(), h.cols() * self.m);
        let mut dphi = train.then(|| Matrix::zeros(h.rows(), h.cols() * self.m));
        if let Some(grid) = &self.spline_grid {
            add_bspline_expansion(&mut phi, dphi.as_mut(), h, grid);
        }
        if let Some(grid) = &self.rbf_grid {
            add_rbf_expansion(&mut phi, dphi.as_mut(), h, self.m, |x, vals, ders| {
                match ders {
                    Some(d) => grid.gaussian_with_deriv_into(x, vals, d),
                    None => grid.gaussian_into(x, vals),
                }
            });
        }
        (Some(phi), dphi)
    }

    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        if x.cols() != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "bsrbf_forward",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        let h = match &mut self.layer_norm {
            Some(ln) => ln.forward(x, train)?,
            None => x.clone(),
        };
        let mut y = Matrix::zeros(x.rows(), self.d_out);

        let (mut act, mut act_deriv) = (None, None);
        if let Some(wb) = &self.base_weight {
            let (a, d) = if train {
                let (a, d) = self.base_activation.apply_with_deriv(&h);
                (a, Some(d))
            } else {
                (self.base_activation.apply(&h), None)
            };
            y.add_assign(&a.matmul_nt(wb)?)?;
            act = Some(a);
            act_deriv = d;
        }

        let (phi, dphi) = self.expand(&h, train);
        if let (Some(phi), Some(ws)) = (&phi, &self.spline_weight) {
            y.add_assign(&phi.matmul_nt(ws)?)?;
        }

        self.cache = if train {
            Some(Cache {
                act,
                act_deriv,
                phi,
                dphi,
            })
        } else {
            None
        };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix<F>) -> Result<Matrix<F>> {
        self.ensure_grads();
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::MissingState("bsrbf backward called without a training forward".into())
        })?;
        if dy.cols() != self.d_out {
            return Err(Error::ShapeMismatch {
                op: "bsrbf_backward",
                left_rows: dy.rows(),
                left_cols: dy.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        let mut dh = Matrix::zeros(dy.rows(), self.d_in);

        if let (Some(wb), Some(act), Some(act_deriv)) =
            (&self.base_weight, &cache.act, &cache.act_deriv)
        {
            self.base_grad
                .as_mut()
                .unwrap()
                .add_matmul_tn(dy, act)?;
            let da = dy.matmul(wb)?;
            dh.add_assign_hadamard(&da, act_deriv)?;
        }

        if let (Some(ws), Some(phi), Some(dphi)) =
            (&self.spline_weight, &cache.phi, &cache.dphi)
        {
            self.spline_grad
                .as_mut()
                .unwrap()
                .add_matmul_tn(dy, phi)?;
            let dexp = dy.matmul(ws)?;
            fold_grouped_product(&mut dh, &dexp, dphi, self.m);
        }

        match &mut self.layer_norm {
            Some(ln) => ln.backward(&dh),
            None => Ok(dh),
        }
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_, F>)) {
        self.ensure_grads();
        if let Some(ln) = &mut self.layer_norm {
            ln.visit_params(f);
        }
        if let (Some(w), Some(g)) = (self.base_weight.as_mut(), self.base_grad.as_mut()) {
            f(ParamMut {
                name: "base_weight",
                value: w,
                grad: g,
            });
        }
        if let (Some(w), Some(g)) = (self.spline_weight.as_mut(), self.spline_grad.as_mut()) {
            f(ParamMut {
                name: "spline_weight",
                value: w,
                grad: g,
            });
        }
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        if let Some(ln) = &self.layer_norm {
            ln.visit_params_ref(f);
        }
        if let Some(w) = &self.base_weight {
            f(ParamRef {
                name: "base_weight",
                value: w,
            });
        }
        if let Some(w) = &self.spline_weight {
            f(ParamRef {
                name: "spline_weight",
                value: w,
            });
        }
    }
}
