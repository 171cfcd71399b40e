//! B-spline KAN layer in the efficient formulation: a silu base branch plus
//! a B-spline expansion whose weights carry a learned per-edge scale, with
//! no input normalization.
//!
//! ```text
//! y = act(x) · Wbᵀ + BS(x) · (Ws ⊙ S)ᵀ
//! ```
//!
//! `Ws` has shape `d_out x (d_in * m)`; the scaler `S` has one entry per
//! `(output, input)` edge and multiplies all `m` spline coefficients of that
//! edge.

use serde::{Deserialize, Serialize};

use crate::basis::SplineGrid;
use crate::error::{Error, Result};
use crate::layers::{
    add_bspline_expansion, default_gain, fold_grouped_product, Activation, ParamMut, ParamRef,
};
use crate::matrix::Matrix;
use crate::num::Real;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficientKanLayer<F> {
    d_in: usize,
    d_out: usize,
    m: usize,
    base_activation: Activation,
    grid: SplineGrid<F>,
    base_weight: Matrix<F>,
    spline_weight: Matrix<F>,
    spline_scaler: Matrix<F>,
    #[serde(skip)]
    base_grad: Option<Matrix<F>>,
    #[serde(skip)]
    spline_grad: Option<Matrix<F>>,
    #[serde(skip)]
    scaler_grad: Option<Matrix<F>>,
    #[serde(skip)]
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F> {
    act: Matrix<F>,
    act_deriv: Matrix<F>,
    phi: Matrix<F>,
    dphi: Matrix<F>,
    /// `Ws ⊙ S` materialized for this step's parameters.
    scaled_weight: Matrix<F>,
}

impl<F: Real> EfficientKanLayer<F> {
    /// Parameter draw order: base weight, spline weight, spline scaler (all
    /// Kaiming uniform with gain `1/sqrt(3)`).
    pub fn new(
        d_in: usize,
        d_out: usize,
        base_activation: Activation,
        grid_size: usize,
        spline_order: usize,
        range: [f64; 2],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!(
                "EfficientKAN layer dims must be positive, got {d_in} -> {d_out}"
            )));
        }
        let grid = SplineGrid::new(range, grid_size, spline_order)?;
        let m = grid.basis_count();
        let gain = default_gain();
        let base_weight = Matrix::kaiming_uniform(d_out, d_in, gain, rng)?;
        let spline_weight = Matrix::kaiming_uniform(d_out, d_in * m, gain, rng)?;
        let spline_scaler = Matrix::kaiming_uniform(d_out, d_in, gain, rng)?;
        Ok(EfficientKanLayer {
            d_in,
            d_out,
            m,
            base_activation,
            grid,
            base_grad: Some(Matrix::zeros(d_out, d_in)),
            spline_grad: Some(Matrix::zeros(d_out, d_in * m)),
            scaler_grad: Some(Matrix::zeros(d_out, d_in)),
            base_weight,
            spline_weight,
            spline_scaler,
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
        if self.scaler_grad.is_none() {
            self.scaler_grad = Some(Matrix::zeros(self.d_out, self.d_in));
        }
    }

    /// `Ws ⊙ S` with the scaler broadcast across each edge's `m` columns.
    fn scaled_weight(&self) -> Matrix<F> {
        let mut w = self.spline_weight.clone();
        for o in 0..self.d_out {
            let srow = self.spline_scaler.row(o);
            let wrow = w.row_mut(o);
            for i in 0..self.d_in {
                let s = srow[i];
                for v in &mut wrow[i * self.m..(i + 1) * self.m] {
                    *v *= s;
                }
            }
        }
        w
    }

    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        if x.cols() != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "efficient_kan_forward",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        let scaled = self.scaled_weight();
        let mut phi = Matrix::zeros(x.rows(), self.d_in * self.m);
        let mut dphi = train.then(|| Matrix::zeros(x.rows(), self.d_in * self.m));
        add_bspline_expansion(&mut phi, dphi.as_mut(), x, &self.grid);

        let (act, act_deriv) = if train {
            let (a, d) = self.base_activation.apply_with_deriv(x);
            (a, Some(d))
        } else {
            (self.base_activation.apply(x), None)
        };

        let mut y = act.matmul_nt(&self.base_weight)?;
        y.add_assign(&phi.matmul_nt(&scaled)?)?;

        self.cache = if train {
            Some(Cache {
                act,
                act_deriv: act_deriv.unwrap(),
                phi,
                dphi: dphi.unwrap(),
                scaled_weight: scaled,
            })
        } else {
            None
        };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix<F>) -> Result<Matrix<F>> {
        self.ensure_grads();
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::MissingState("efficient_kan backward called without a training forward".into())
        })?;
        if dy.cols() != self.d_out {
            return Err(Error::ShapeMismatch {
                op: "efficient_kan_backward",
                left_rows: dy.rows(),
                left_cols: dy.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }

        // Base branch.
        self.base_grad.as_mut().unwrap().add_matmul_tn(dy, &cache.act)?;
        let da = dy.matmul(&self.base_weight)?;
        let mut dx = Matrix::zeros(dy.rows(), self.d_in);
        dx.add_assign_hadamard(&da, &cache.act_deriv)?;

        // Spline branch: gradient w.r.t. the *scaled* weight first, then
        // apportion between weight and scaler by the product rule.
        let mut d_scaled = Matrix::zeros(self.d_out, self.d_in * self.m);
        d_scaled.add_matmul_tn(dy, &cache.phi)?;
        let spline_grad = self.spline_grad.as_mut().unwrap();
        let scaler_grad = self.scaler_grad.as_mut().unwrap();
        for o in 0..self.d_out {
            let ds_row = d_scaled.row(o);
            let w_row = self.spline_weight.row(o);
            let s_row = self.spline_scaler.row(o);
            let wg_row = spline_grad.row_mut(o);
            let sg_row = scaler_grad.row_mut(o);
            for i in 0..self.d_in {
                let s = s_row[i];
                let mut acc = F::zero();
                for j in i * self.m..(i + 1) * self.m {
                    wg_row[j] = ds_row[j].mul_add(s, wg_row[j]);
                    acc = ds_row[j].mul_add(w_row[j], acc);
                }
                sg_row[i] += acc;
            }
        }

        let dexp = dy.matmul(&cache.scaled_weight)?;
        fold_grouped_product(&mut dx, &dexp, &cache.dphi, self.m);
        Ok(dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_, F>)) {
        self.ensure_grads();
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
            name: "spline_scaler",
            value: &mut self.spline_scaler,
            grad: self.scaler_grad.as_mut().unwrap(),
        });
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        f(ParamRef {
            name: "base_weight",
            value: &self.base_weight,
        });
        f(ParamRef {
            name: "spline_weight",
            value: &self.spline_weight,
        });
        f(ParamRef {
            name: "spline_scaler",
            value: &self.spline_scaler,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::to_f64;

    fn make_layer(seed: u64) -> EfficientKanLayer<f64> {
        let mut rng = SeededRng::new(seed);
        EfficientKanLayer::new(4, 3, Activation::Silu, 5, 3, [-1.0, 1.0], &mut rng).unwrap()
    }

    #[test]
    fn forward_matches_compositional_oracle() {
        let mut layer = make_layer(21);
        let mut rng = SeededRng::new(210);
        let x = Matrix::uniform(3, 4, -1.0, 1.0, &mut rng);
        let y = layer.forward(&x, false).unwrap();
        let grid = SplineGrid::<f64>::new([-1.0, 1.0], 5, 3).unwrap();
        let m = grid.basis_count();
        for b in 0..3 {
            for o in 0..3 {
                let mut acc = 0.0;
                for i in 0..4 {
                    acc += Activation::Silu.eval(x.get(b, i)) * layer.base_weight.get(o, i);
                    let vals = grid.eval(x.get(b, i)).unwrap();
                    for (j, &v) in vals.iter().enumerate() {
                        acc += v
                            * layer.spline_weight.get(o, i * m + j)
                            * layer.spline_scaler.get(o, i);
                    }
                }
                assert!((y.get(b, o) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut layer = make_layer(22);
        let mut rng = SeededRng::new(220);
        let x = Matrix::uniform(2, 4, -0.9, 0.9, &mut rng);
        let w = Matrix::uniform(2, 3, -1.0, 1.0, &mut rng);
        layer.forward(&x, true).unwrap();
        let dx = layer.backward(&w).unwrap();
        let h = 1e-6;
        // Input gradient.
        for b in 0..2 {
            for i in 0..4 {
                let mut xp = x.clone();
                xp.set(b, i, x.get(b, i) + h);
                let mut xm = x.clone();
                xm.set(b, i, x.get(b, i) - h);
                let fp = to_f64(layer.forward(&xp, false).unwrap().hadamard(&w).unwrap().sum());
                let fm = to_f64(layer.forward(&xm, false).unwrap().hadamard(&w).unwrap().sum());
                let fd = (fp - fm) / (2.0 * h);
                assert!((dx.get(b, i) - fd).abs() < 1e-6, "dx[{b}][{i}]");
            }
        }
        // Scaler gradient (the product-rule split is the subtle part).
        let sg = layer.scaler_grad.as_ref().unwrap().clone();
        for o in 0..3 {
            for i in 0..4 {
                let orig = layer.spline_scaler.get(o, i);
                layer.spline_scaler.set(o, i, orig + h);
                let fp = to_f64(layer.forward(&x, false).unwrap().hadamard(&w).unwrap().sum());
                layer.spline_scaler.set(o, i, orig - h);
                let fm = to_f64(layer.forward(&x, false).unwrap().hadamard(&w).unwrap().sum());
                layer.spline_scaler.set(o, i, orig);
                let fd = (fp - fm) / (2.0 * h);
                assert!((sg.get(o, i) - fd).abs() < 1e-6, "scaler[{o}][{i}]");
            }
        }
    }

    #[test]
    fn param_visit_order_is_stable() {
        let mut layer = make_layer(23);
        let mut names = Vec::new();
        layer.visit_params(&mut |p| names.push(p.name));
        assert_eq!(names, vec!["base_weight", "spline_weight", "spline_scaler"]);
    }
}
