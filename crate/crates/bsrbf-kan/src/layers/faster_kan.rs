//! RSWAF KAN layer: layer norm and a reflectional-switch expansion
//! (`1 - tanh(u)^2`), with no base branch and no bias.
//!
//! ```text
//! y = RSWAF(LayerNorm(x)) · Wᵀ
//! ```

use serde::{Deserialize, Serialize};

use crate::basis::RbfGrid;
use crate::error::{Error, Result};
use crate::layers::{add_rbf_expansion, default_gain, fold_grouped_product, LayerNorm, ParamMut, ParamRef};
use crate::matrix::Matrix;
use crate::num::Real;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FasterKanLayer<F> {
    d_in: usize,
    d_out: usize,
    m: usize,
    layer_norm: LayerNorm<F>,
    rbf_grid: RbfGrid<F>,
    weight: Matrix<F>,
    #[serde(skip)]
    weight_grad: Option<Matrix<F>>,
    #[serde(skip)]
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F> {
    phi: Matrix<F>,
    dphi: Matrix<F>,
}

impl<F: Real> FasterKanLayer<F> {
    /// Parameter draw order: layer norm (no draws), weight (Kaiming).
    pub fn new(
        d_in: usize,
        d_out: usize,
        rbf_count: usize,
        rbf_range: [f64; 2],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!(
                "FasterKAN layer dims must be positive, got {d_in} -> {d_out}"
            )));
        }
        let layer_norm = LayerNorm::new(d_in)?;
        let rbf_grid = RbfGrid::new(rbf_range, rbf_count)?;
        let m = rbf_grid.count();
        let weight = Matrix::kaiming_uniform(d_out, d_in * m, default_gain(), rng)?;
        Ok(FasterKanLayer {
            d_in,
            d_out,
            m,
            layer_norm,
            rbf_grid,
            weight_grad: Some(Matrix::zeros(d_out, d_in * m)),
            weight,
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
        if self.weight_grad.is_none() {
            self.weight_grad = Some(Matrix::zeros(self.d_out, self.d_in * self.m));
        }
    }

    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        if x.cols() != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "faster_kan_forward",
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
                Some(d) => grid.rswaf_with_deriv_into(v, vals, d),
                None => grid.rswaf_into(v, vals),
            }
        });
        let y = phi.matmul_nt(&self.weight)?;
        self.cache = if train {
            Some(Cache {
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
            Error::MissingState("faster_kan backward called without a training forward".into())
        })?;
        if dy.cols() != self.d_out {
            return Err(Error::ShapeMismatch {
                op: "faster_kan_backward",
                left_rows: dy.rows(),
                left_cols: dy.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        self.weight_grad.as_mut().unwrap().add_matmul_tn(dy, &cache.phi)?;
        let mut dh = Matrix::zeros(dy.rows(), self.d_in);
        let dexp = dy.matmul(&self.weight)?;
        fold_grouped_product(&mut dh, &dexp, &cache.dphi, self.m);
        self.layer_norm.backward(&dh)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_, F>)) {
        self.ensure_grads();
        self.layer_norm.visit_params(f);
        f(ParamMut {
            name: "weight",
            value: &mut self.weight,
            grad: self.weight_grad.as_mut().unwrap(),
        });
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        self.layer_norm.visit_params_ref(f);
        f(ParamRef {
            name: "weight",
            value: &self.weight,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::to_f64;

    fn make_layer(seed: u64) -> FasterKanLayer<f64> {
        let mut rng = SeededRng::new(seed);
        FasterKanLayer::new(4, 3, 8, [-2.0, 2.0], &mut rng).unwrap()
    }

    #[test]
    fn forward_matches_compositional_oracle() {
        let mut layer = make_layer(41);
        let mut rng = SeededRng::new(410);
        let x = Matrix::uniform(3, 4, -1.5, 1.5, &mut rng);
        let y = layer.forward(&x, false).unwrap();
        let h = layer.layer_norm.forward(&x, false).unwrap();
        let grid = RbfGrid::<f64>::new([-2.0, 2.0], 8).unwrap();
        for b in 0..3 {
            for o in 0..3 {
                let mut acc = 0.0;
                for i in 0..4 {
                    for (j, v) in grid.rswaf(h.get(b, i)).unwrap().into_iter().enumerate() {
                        acc += v * layer.weight.get(o, i * 8 + j);
                    }
                }
                assert!((y.get(b, o) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut layer = make_layer(42);
        let mut rng = SeededRng::new(420);
        let x = Matrix::uniform(2, 4, -1.0, 1.0, &mut rng);
        let w = Matrix::uniform(2, 3, -1.0, 1.0, &mut rng);
        layer.forward(&x, true).unwrap();
        let dx = layer.backward(&w).unwrap();
        let h = 1e-6;
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
    }

    #[test]
    fn has_no_base_branch_parameters() {
        let layer = make_layer(43);
        let mut names = Vec::new();
        layer.visit_params_ref(&mut |p| names.push(p.name));
        assert_eq!(names, vec!["gamma", "beta", "weight"]);
    }
}
