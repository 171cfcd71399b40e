//! Layer normalization with learnable scale and shift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ParamMut, ParamRef};
use crate::matrix::Matrix;
use crate::num::{real, to_f64, Real};

/// Per-sample normalization over the feature dimension:
/// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, with the biased
/// variance estimate (division by `d`, not `d - 1`).
///
/// `gamma` starts at 1 and `beta` at 0; `eps = 1e-5`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm<F> {
    dim: usize,
    eps: f64,
    gamma: Matrix<F>,
    beta: Matrix<F>,
    #[serde(skip)]
    gamma_grad: Option<Matrix<F>>,
    #[serde(skip)]
    beta_grad: Option<Matrix<F>>,
    #[serde(skip)]
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F> {
    /// Normalized input before scale/shift, shape `batch x dim`.
    xhat: Matrix<F>,
    /// `1 / sqrt(var + eps)` per row.
    inv_std: Vec<F>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                what: "LayerNorm dim",
                details: "feature dimension must be positive".into(),
            });
        }
        Ok(LayerNorm {
            dim,
            eps: 1e-5,
            gamma: Matrix::filled(1, dim, F::one()),
            beta: Matrix::zeros(1, dim),
            gamma_grad: Some(Matrix::zeros(1, dim)),
            beta_grad: Some(Matrix::zeros(1, dim)),
            cache: None,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lazily (re)create gradient accumulators; needed after deserialization,
    /// which skips the transient fields.
    fn ensure_grads(&mut self) {
        if self.gamma_grad.is_none() {
            self.gamma_grad = Some(Matrix::zeros(1, self.dim));
        }
        if self.beta_grad.is_none() {
            self.beta_grad = Some(Matrix::zeros(1, self.dim));
        }
    }

    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        if x.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "layer_norm_forward",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: 1,
                right_cols: self.dim,
            });
        }
        let batch = x.rows();
        let d = self.dim;
        let inv_d = real::<F>(1.0 / d as f64);
        let eps = real::<F>(self.eps);
        let mut y = Matrix::zeros(batch, d);
        let mut xhat = Matrix::zeros(batch, d);
        let mut inv_std = vec![F::zero(); batch];
        let gamma = self.gamma.row(0);
        let beta = self.beta.row(0);
        for b in 0..batch {
            let row = x.row(b);
            let mut mean = F::zero();
            for &v in row {
                mean += v;
            }
            mean = mean * inv_d;
            let mut var = F::zero();
            for &v in row {
                let dlt = v - mean;
                var = dlt.mul_add(dlt, var);
            }
            var = var * inv_d;
            let r = F::one() / (var + eps).sqrt();
            inv_std[b] = r;
            let xh = xhat.row_mut(b);
            let yr = y.row_mut(b);
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xh[j] = h;
                yr[j] = gamma[j].mul_add(h, beta[j]);
            }
        }
        self.cache = if train {
            Some(Cache { xhat, inv_std })
        } else {
            None
        };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix<F>) -> Result<Matrix<F>> {
        self.ensure_grads();
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::MissingState("layer_norm backward called without a training forward".into())
        })?;
        if dy.shape() != cache.xhat.shape() {
            return Err(Error::ShapeMismatch {
                op: "layer_norm_backward",
                left_rows: dy.rows(),
                left_cols: dy.cols(),
                right_rows: cache.xhat.rows(),
                right_cols: cache.xhat.cols(),
            });
        }
        let batch = dy.rows();
        let d = self.dim;
        let inv_d = real::<F>(1.0 / d as f64);
        // Parameter gradients: dgamma = sum_rows dy * xhat, dbeta = sum_rows dy.
        dy.add_column_sums_product_to(&cache.xhat, self.gamma_grad.as_mut().unwrap().row_mut(0))?;
        dy.add_column_sums_to(self.beta_grad.as_mut().unwrap().row_mut(0))?;

        // Input gradient per row:
        // dxhat = dy * gamma
        // dx = r * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        let gamma = self.gamma.row(0);
        let mut dx = Matrix::zeros(batch, d);
        for b in 0..batch {
            let dyr = dy.row(b);
            let xh = cache.xhat.row(b);
            let out = dx.row_mut(b);
            let mut m1 = F::zero();
            let mut m2 = F::zero();
            for j in 0..d {
                let dxh = dyr[j] * gamma[j];
                out[j] = dxh; // stash dxhat
                m1 += dxh;
                m2 = dxh.mul_add(xh[j], m2);
            }
            m1 = m1 * inv_d;
            m2 = m2 * inv_d;
            let r = cache.inv_std[b];
            for j in 0..d {
                out[j] = r * (out[j] - m1 - xh[j] * m2);
            }
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_, F>)) {
        self.ensure_grads();
        f(ParamMut {
            name: "gamma",
            value: &mut self.gamma,
            grad: self.gamma_grad.as_mut().unwrap(),
        });
        f(ParamMut {
            name: "beta",
            value: &mut self.beta,
            grad: self.beta_grad.as_mut().unwrap(),
        });
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        f(ParamRef {
            name: "gamma",
            value: &self.gamma,
        });
        f(ParamRef {
            name: "beta",
            value: &self.beta,
        });
    }

    /// Mean absolute deviation of a forward output from zero mean / unit
    /// variance, for diagnostics and tests.
    pub fn check_normalized(y: &Matrix<F>) -> (f64, f64) {
        let d = y.cols();
        let mut worst_mean = 0.0f64;
        let mut worst_var = 0.0f64;
        for b in 0..y.rows() {
            let row = y.row(b);
            let mean: f64 = row.iter().map(|&v| to_f64(v)).sum::<f64>() / d as f64;
            let var: f64 =
                row.iter().map(|&v| (to_f64(v) - mean).powi(2)).sum::<f64>() / d as f64;
            worst_mean = worst_mean.max(mean.abs());
            worst_var = worst_var.max((var - 1.0).abs());
        }
        (worst_mean, worst_var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_four_point_row() {
        // [1,2,3,4] -> mean 2.5, biased var 1.25,
        // (x - mean)/sqrt(var + 1e-5) ~= [-1.3416, -0.4472, 0.4472, 1.3416].
        let mut ln = LayerNorm::<f64>::new(4).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let y = ln.forward(&x, false).unwrap();
        let expect = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (v, e) in y.row(0).iter().zip(&expect) {
            assert!((v - e).abs() < 1e-3, "{v} vs {e}");
        }
        // Exact values against the closed form with eps.
        let r = 1.0 / (1.25f64 + 1e-5).sqrt();
        for (j, &v) in y.row(0).iter().enumerate() {
            let exact = ((j as f64 + 1.0) - 2.5) * r;
            assert!((v - exact).abs() < 1e-15);
        }
    }

    #[test]
    fn output_is_normalized_per_row() {
        let mut ln = LayerNorm::<f64>::new(32).unwrap();
        let mut rng = crate::rng::SeededRng::new(3);
        let x = Matrix::uniform(16, 32, -5.0, 3.0, &mut rng);
        let y = ln.forward(&x, false).unwrap();
        let (mean_dev, var_dev) = LayerNorm::check_normalized(&y);
        assert!(mean_dev < 1e-12, "mean deviation {mean_dev}");
        assert!(var_dev < 1e-3, "variance deviation {var_dev}"); // eps-limited
    }

    #[test]
    fn constant_row_maps_to_beta() {
        let mut ln = LayerNorm::<f64>::new(8).unwrap();
        let x = Matrix::filled(2, 8, 7.0);
        let y = ln.forward(&x, false).unwrap();
        // Zero variance: (x - mean) = 0, so output is beta = 0 exactly.
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_feature_dim() {
        let mut ln = LayerNorm::<f64>::new(1).unwrap();
        let x = Matrix::from_rows(&[vec![42.0]]).unwrap();
        let y = ln.forward(&x, false).unwrap();
        assert_eq!(y.get(0, 0), 0.0);
    }

    #[test]
    fn empty_batch_passes_through() {
        let mut ln = LayerNorm::<f64>::new(4).unwrap();
        let x = Matrix::zeros(0, 4);
        let y = ln.forward(&x, true).unwrap();
        assert_eq!(y.shape(), (0, 4));
        let dx = ln.backward(&Matrix::zeros(0, 4)).unwrap();
        assert_eq!(dx.shape(), (0, 4));
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut ln = LayerNorm::<f64>::new(4).unwrap();
        let err = ln.backward(&Matrix::zeros(1, 4)).unwrap_err();
        assert!(matches!(err, Error::MissingState(_)));
    }

    #[test]
    fn eval_forward_clears_cache() {
        let mut ln = LayerNorm::<f64>::new(4).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        ln.forward(&x, true).unwrap();
        ln.forward(&x, false).unwrap();
        assert!(ln.backward(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut ln = LayerNorm::<f64>::new(6).unwrap();
        let mut rng = crate::rng::SeededRng::new(4);
        let x = Matrix::uniform(3, 6, -2.0, 2.0, &mut rng);
        // Loss = sum(y * w) for fixed random w, so dL/dy = w.
        let w = Matrix::uniform(3, 6, -1.0, 1.0, &mut rng);
        let loss = |ln: &mut LayerNorm<f64>, x: &Matrix<f64>| -> f64 {
            let y = ln.forward(x, false).unwrap();
            to_f64(y.hadamard(&w).unwrap().sum())
        };
        ln.forward(&x, true).unwrap();
        let dx = ln.backward(&w).unwrap();
        let h = 1e-6;
        for b in 0..3 {
            for j in 0..6 {
                let mut xp = x.clone();
                xp.set(b, j, x.get(b, j) + h);
                let mut xm = x.clone();
                xm.set(b, j, x.get(b, j) - h);
                let fd = (loss(&mut ln, &xp) - loss(&mut ln, &xm)) / (2.0 * h);
                assert!(
                    (dx.get(b, j) - fd).abs() < 1e-7,
                    "dx[{b}][{j}] {} vs {fd}",
                    dx.get(b, j)
                );
            }
        }
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut ln = LayerNorm::<f64>::new(5).unwrap();
        let mut rng = crate::rng::SeededRng::new(5);
        let x = Matrix::uniform(4, 5, -2.0, 2.0, &mut rng);
        let w = Matrix::uniform(4, 5, -1.0, 1.0, &mut rng);
        ln.forward(&x, true).unwrap();
        ln.backward(&w).unwrap();
        let h = 1e-6;
        let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
        ln.visit_params(&mut |p| {
            grads.push((p.name.to_string(), p.grad.data().to_vec()));
        });
        for (name, grad) in &grads {
            for j in 0..5 {
                let probe = |delta: f64, ln: &mut LayerNorm<f64>| -> f64 {
                    ln.visit_params(&mut |p| {
                        if p.name == *name {
                            let v = p.value.get(0, j);
                            p.value.set(0, j, v + delta);
                        }
                    });
                    let y = ln.forward(&x, false).unwrap();
                    let out = to_f64(y.hadamard(&w).unwrap().sum());
                    ln.visit_params(&mut |p| {
                        if p.name == *name {
                            let v = p.value.get(0, j);
                            p.value.set(0, j, v - delta);
                        }
                    });
                    out
                };
                let fd = (probe(h, &mut ln) - probe(-h, &mut ln)) / (2.0 * h);
                assert!(
                    (grad[j] - fd).abs() < 1e-7,
                    "{name}[{j}] {} vs {fd}",
                    grad[j]
                );
            }
        }
    }
}
