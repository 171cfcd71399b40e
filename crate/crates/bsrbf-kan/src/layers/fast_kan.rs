//! Gaussian-RBF KAN layer: layer norm, a Gaussian radial-basis expansion
//! with bias, and a silu base branch.
//!
//! ```text
//! h = LayerNorm(x)
//! y = act(h) · Wbᵀ + RBF(h) · Wsᵀ + bias
//! ```

use serde::{Deserialize, Serialize};

use crate::basis::RbfGrid;
use crate::error::{Error, Result};
use crate::layers::{
    add_rbf_expansion, bias_uniform, default_gain, fold_grouped_product, Activation, LayerNorm,
    ParamMut, ParamRef,
};
use crate::matrix::Matrix;
use crate::num::Real;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FastKanLayer<F> {
    d_in: usize,
    d_out: usize,
    m: usize,
    base_activation: Activation,
    layer_norm: LayerNorm<F>,
    rbf_grid: RbfGrid<F>,
    base_weight: Matrix<F>,
    spline_weight: Matrix<F>,
    bias: Matrix<F>,
    #[serde(skip)]
    base_grad: Option<Matrix<F>>,
    #[serde(skip)]
    spline_grad: Option<Matrix<F>>,
    #[serde(skip)]
    bias_grad: Option<Matrix<F>>,
    #[serde(skip)]
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F> {
    act: Matrix<F>,
    act_deriv: Matrix<F>,
    phi: Matrix<F>,
    dphi: Matrix<F>,
}

impl<F: Real> FastKanLayer<F> {
    /// Parameter draw order: layer norm (no draws), base weight (Kaiming),
    /// spline weight (Kaiming), bias (uniform `±1/sqrt(d_in * m)`).
    pub fn new(
        d_in: usize,
        d_out: usize,
        base_activation: Activation,
        rbf_count: usize,
        rbf_range: [f64; 2],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!(
                "FastKAN layer dims must be positive, got {d_in} -> {d_out}"
            )));
        }
        let layer_norm = LayerNorm::new(d_in)?;
        let rbf_grid = RbfGrid::new(rbf_range, rbf_count)?;
        let m = rbf_grid.count();
        let gain = default_gain();
        let base_weight = Matrix::kaiming_uniform(d_out, d_in, gain, rng)?;
        let spline_weight = Matrix::kaiming_uniform(d_out, d_in * m, gain, rng)?;
        let bias = bias_uniform(d_out, d_in * m, rng);
        Ok(FastKanLayer {
            d_in,
            d_out,
            m,
            base_activation,
            layer_norm,
            rbf_grid,
            base_grad: Some(Matrix::zeros(d_out, d_in)),
            spline_grad: Some(Matrix::zeros(d_out, d_in * m)),
            bias_grad: Some(Matrix::zeros(1, d_out)),
            base_weight,
            spline_weight,
            bias,
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

    fn ensure_grads(&mut self) {
        if self.base_grad.is_none() {
            self.base_grad = Some(Matrix::zeros(self.d_out, self.d_in));
        }
        if self.spline_grad.is_none() {
            self.spline_grad = Some(Matrix::zeros(self.d_out, self.d_in * self.m));
        }
        if self.bias_grad.is_none() {
            self.bias_grad = Some(Matrix::zeros(1, self.d_out));
        }
    }

    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        if x.cols() != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "fast_kan_forward",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        let h = self.layer_norm.forward(x, train)?;
        let mut phi = Matrix::zeros(x.rows(), self.d_in * self.m);
        let mut dphi = train.then(|| Matrix::zeros(x.rows(), self.d_in * self.m));
        let grid = &self.rbf_grid;
        add_rbf_expansion(&mut phi, dphi.as_mut(), &h, self.m, |v, vals, ders| {
            match ders {
                Some(d) => grid.gaussian_with_deriv_into(v, vals, d),
                None => grid.gaussian_into(v, vals),
            }
        });
        let (act, act_deriv) = if train {
            let (a, d) = self.base_activation.apply_with_deriv(&h);
            (a, Some(d))
        } else {
            (self.base_activation.apply(&h), None)
        };
        let mut y = act.matmul_nt(&self.base_weight)?;
        y.add_assign(&phi.matmul_nt(&self.spline_weight)?)?;
        let bias = self.bias.row(0);
        for b in 0..y.rows() {
            for (v, &bv) in y.row_mut(b).iter_mut().zip(bias) {
                *v += bv;
            }
        }
        self.cache = if train {
            Some(Cache {
                act,
                act_deriv: act_deriv.unwrap(),
                phi,
                dphi: dphi.unwrap(),
            })
        } else {
            None
        };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix<F>) -> Result<Matrix<F>> {
        self.ensure_grads();
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::MissingState("fast_kan backward called without a training forward".into())
        })?;
        if dy.cols() != self.d_out {
            return Err(Error::ShapeMismatch {
                op: "fast_kan_backward",
                left_rows: dy.rows(),
                left_cols: dy.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        dy.add_column_sums_to(self.bias_grad.as_mut().unwrap().row_mut(0))?;
        self.base_grad.as_mut().unwrap().add_matmul_tn(dy, &cache.act)?;
        self.spline_grad.as_mut().unwrap().add_matmul_tn(dy, &cache.phi)?;

        let mut dh = Matrix::zeros(dy.rows(), self.d_in);
        let da = dy.matmul(&self.base_weight)?;
        dh.add_assign_hadamard(&da, &cache.act_deriv)?;
        let dexp = dy.matmul(&self.spline_weight)?;
        fold_grouped_product(&mut dh, &dexp, &cache.dphi, self.m);
        self.layer_norm.backward(&dh)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_, F>)) {
        self.ensure_grads();
        self.layer_norm.visit_params(f);
        f(ParamMut {
            name: "base_weight",
            value: &mut self.base_weight,
            grad: self.base_grad.as_mut().unwrap(),
        });
        f(ParamMut {
            name: "spline_weight",
            value: &mut self.spline_weight,
            grad: self.spline_grad.as_mut().unwrap(),
        });
        f(ParamMut {
            name: "bias",
            value: &mut self.bias,
            grad: self.bias_grad.as_mut().unwrap(),
        });
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        self.layer_norm.visit_params_ref(f);
        f(ParamRef {
            name: "base_weight",
            value: &self.base_weight,
        });
        f(ParamRef {
            name: "spline_weight",
            value: &self.spline_weight,
        });
        f(ParamRef {
            name: "bias",
            value: &self.bias,
        });
    }
}
