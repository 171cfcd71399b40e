//! Plain linear layer with optional layer norm and an activation applied to
//! the (normalized) input:
//!
//! ```text
//! y = act(LayerNorm(x)) · Wᵀ
//! ```
//!
//! The activation-before-matmul ordering matches the base branch of the KAN
//! layers, which is what makes a BSRBF layer with both expansions disabled
//! coincide with this layer exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{default_gain, Activation, LayerNorm, ParamMut, ParamRef};
use crate::matrix::Matrix;
use crate::num::Real;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearLayer<F> {
    d_in: usize,
    d_out: usize,
    activation: Activation,
    layer_norm: Option<LayerNorm<F>>,
    weight: Matrix<F>,
    #[serde(skip)]
    weight_grad: Option<Matrix<F>>,
    #[serde(skip)]
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F> {
    act: Matrix<F>,
    act_deriv: Matrix<F>,
}

impl<F: Real> LinearLayer<F> {
    /// Parameter draw order: layer norm (no draws), weight (Kaiming).
    pub fn new(
        d_in: usize,
        d_out: usize,
        activation: Activation,
        use_layer_norm: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!(
                "linear layer dims must be positive, got {d_in} -> {d_out}"
            )));
        }
        let layer_norm = if use_layer_norm {
            Some(LayerNorm::new(d_in)?)
        } else {
            None
        };
        let weight = Matrix::kaiming_uniform(d_out, d_in, default_gain(), rng)?;
        Ok(LinearLayer {
            d_in,
            d_out,
            activation,
            layer_norm,
            weight_grad: Some(Matrix::zeros(d_out, d_in)),
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
            self.weight_grad = Some(Matrix::zeros(self.d_out, self.d_in));
        }
    }

    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        if x.cols() != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "linear_forward",
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
        let (act, act_deriv) = if train {
            let (a, d) = self.activation.apply_with_deriv(&h);
            (a, Some(d))
        } else {
            (self.activation.apply(&h), None)
        };
        let y = act.matmul_nt(&self.weight)?;
        self.cache = if train {
            Some(Cache {
                act,
                act_deriv: act_deriv.unwrap(),
            })
        } else {
            None
        };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix<F>) -> Result<Matrix<F>> {
        self.ensure_grads();
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::MissingState("linear backward called without a training forward".into())
        })?;
        if dy.cols() != self.d_out {
            return Err(Error::ShapeMismatch {
                op: "linear_backward",
                left_rows: dy.rows(),
                left_cols: dy.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        self.weight_grad.as_mut().unwrap().add_matmul_tn(dy, &cache.act)?;
        let da = dy.matmul(&self.weight)?;
        let mut dh = Matrix::zeros(dy.rows(), self.d_in);
        dh.add_assign_hadamard(&da, &cache.act_deriv)?;
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
        f(ParamMut {
            name: "weight",
            value: &mut self.weight,
            grad: self.weight_grad.as_mut().unwrap(),
        });
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        if let Some(ln) = &self.layer_norm {
            ln.visit_params_ref(f);
        }
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

    #[test]
    fn identity_activation_is_a_pure_linear_map() {
        let mut rng = SeededRng::new(61);
        let mut layer =
            LinearLayer::<f64>::new(4, 2, Activation::Identity, false, &mut rng).unwrap();
        let x = Matrix::uniform(3, 4, -1.0, 1.0, &mut rng);
        let y = layer.forward(&x, false).unwrap();
        let expect = x.matmul_nt(&layer.weight).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(62);
        let mut layer = LinearLayer::<f64>::new(5, 3, Activation::Silu, true, &mut rng).unwrap();
        let x = Matrix::uniform(2, 5, -2.0, 2.0, &mut rng);
        let w = Matrix::uniform(2, 3, -1.0, 1.0, &mut rng);
        layer.forward(&x, true).unwrap();
        let dx = layer.backward(&w).unwrap();
        let h = 1e-6;
        for b in 0..2 {
            for i in 0..5 {
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
    fn weight_gradient_matches_manual_outer_product() {
        let mut rng = SeededRng::new(63);
        let mut layer =
            LinearLayer::<f64>::new(3, 2, Activation::Identity, false, &mut rng).unwrap();
        let x = Matrix::uniform(4, 3, -1.0, 1.0, &mut rng);
        let dy = Matrix::uniform(4, 2, -1.0, 1.0, &mut rng);
        layer.forward(&x, true).unwrap();
        layer.backward(&dy).unwrap();
        let wg = layer.weight_grad.as_ref().unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let mut expect = 0.0;
                for b in 0..4 {
                    expect += dy.get(b, o) * x.get(b, i);
                }
                assert!((wg.get(o, i) - expect).abs() < 1e-12);
            }
        }
    }
}
