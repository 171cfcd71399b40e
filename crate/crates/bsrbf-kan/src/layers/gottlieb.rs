//! Gottlieb-polynomial KAN layer.
//!
//! The input is squashed into the polynomials' stable domain with `tanh`,
//! expanded in the Gottlieb basis of the configured degree, linearly mapped,
//! and layer-normalized over the output dimension:
//!
//! ```text
//! u = tanh(x)
//! z = Gottlieb(u; c) · Wᵀ          with c = exp(-lambda)
//! y = LayerNorm(z)
//! ```
//!
//! `lambda` is a single trainable scalar per layer. The default family is the
//! classical three-term recurrence in `c`; the explicitly flagged Bernoulli
//! reading (`G_n(x) = B_n(2x)`) has no `lambda` dependence, so that
//! parameter's gradient is identically zero under it.

use serde::{Deserialize, Serialize};

use crate::basis::{gottlieb_bernoulli_into, gottlieb_recurrence_into, GottliebFamily};
use crate::error::{Error, Result};
use crate::layers::{default_gain, fold_grouped_product, LayerNorm, ParamMut, ParamRef};
use crate::matrix::Matrix;
use crate::num::{real, to_f64, Real};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GottliebLayer<F> {
    d_in: usize,
    d_out: usize,
    degree: usize,
    family: GottliebFamily,
    /// Trainable shape parameter, stored 1x1 so it shares the uniform
    /// parameter-visit machinery.
    lambda: Matrix<F>,
    weight: Matrix<F>,
    post_norm: LayerNorm<F>,
    #[serde(skip)]
    lambda_grad: Option<Matrix<F>>,
    #[serde(skip)]
    weight_grad: Option<Matrix<F>>,
    #[serde(skip)]
    cache: Option<Cache<F>>,
}

#[derive(Debug, Clone)]
struct Cache<F> {
    /// `tanh(x)`.
    u: Matrix<F>,
    /// Basis values, feature-major `batch x (d_in * (degree + 1))`.
    t: Matrix<F>,
    /// Basis derivatives with respect to `u`.
    dt_du: Matrix<F>,
    /// Basis derivatives with respect to `c` (zero for the Bernoulli family).
    dt_dc: Matrix<F>,
    /// `c = exp(-lambda)` used in this forward.
    c: F,
}

impl<F: Real> GottliebLayer<F> {
    /// Parameter draw order: weight (Kaiming with fan-in `d_in * (degree+1)`),
    /// lambda (constant 1, no draw), post layer norm (no draws).
    pub fn new(
        d_in: usize,
        d_out: usize,
        degree: usize,
        family: GottliebFamily,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!(
                "Gottlieb layer dims must be positive, got {d_in} -> {d_out}"
            )));
        }
        if family == GottliebFamily::Bernoulli && degree > 5 {
            return Err(Error::Config(format!(
                "Bernoulli Gottlieb family supports degree <= 5, got {degree}"
            )));
        }
        let m = degree + 1;
        let weight = Matrix::kaiming_uniform(d_out, d_in * m, default_gain(), rng)?;
        Ok(GottliebLayer {
            d_in,
            d_out,
            degree,
            family,
            lambda: Matrix::filled(1, 1, F::one()),
            weight_grad: Some(Matrix::zeros(d_out, d_in * m)),
            lambda_grad: Some(Matrix::zeros(1, 1)),
            weight,
            post_norm: LayerNorm::new(d_out)?,
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
        let m = self.degree + 1;
        if self.weight_grad.is_none() {
            self.weight_grad = Some(Matrix::zeros(self.d_out, self.d_in * m));
        }
        if self.lambda_grad.is_none() {
            self.lambda_grad = Some(Matrix::zeros(1, 1));
        }
    }

    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        if x.cols() != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "gottlieb_forward",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        let m = self.degree + 1;
        let c = real::<F>((-to_f64(self.lambda.get(0, 0))).exp());
        let u = x.map(|v| v.tanh());
        let mut t = Matrix::zeros(x.rows(), self.d_in * m);
        let mut dt_du = train.then(|| Matrix::zeros(x.rows(), self.d_in * m));
        let mut dt_dc = train.then(|| Matrix::zeros(x.rows(), self.d_in * m));
        for b in 0..x.rows() {
            for i in 0..self.d_in {
                let span = i * m..(i + 1) * m;
                let ui = u.get(b, i);
                // Split borrows: value row and derivative rows live in
                // different matrices.
                match (&mut dt_du, &mut dt_dc) {
                    (Some(du), Some(dc)) => match self.family {
                        GottliebFamily::Recurrence => gottlieb_recurrence_into(
                            ui,
                            c,
                            &mut t.row_mut(b)[span.clone()],
                            Some(&mut du.row_mut(b)[span.clone()]),
                            Some(&mut dc.row_mut(b)[span]),
                        ),
                        GottliebFamily::Bernoulli => {
                            gottlieb_bernoulli_into(
                                ui,
                                &mut t.row_mut(b)[span.clone()],
                                Some(&mut du.row_mut(b)[span]),
                            )?;
                            // dt_dc stays zero.
                        }
                    },
                    _ => match self.family {
                        GottliebFamily::Recurrence => gottlieb_recurrence_into(
                            ui,
                            c,
                            &mut t.row_mut(b)[span],
                            None,
                            None,
                        ),
                        GottliebFamily::Bernoulli => {
                            gottlieb_bernoulli_into(ui, &mut t.row_mut(b)[span], None)?;
                        }
                    },
                }
            }
        }
        let z = t.matmul_nt(&self.weight)?;
        let y = self.post_norm.forward(&z, train)?;
        self.cache = if train {
            Some(Cache {
                u,
                t,
                dt_du: dt_du.unwrap(),
                dt_dc: dt_dc.unwrap(),
                c,
            })
        } else {
            None
        };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Matrix<F>) -> Result<Matrix<F>> {
        self.ensure_grads();
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::MissingState("gottlieb backward called without a training forward".into())
        })?;
        if dy.cols() != self.d_out {
            return Err(Error::ShapeMismatch {
                op: "gottlieb_backward",
                left_rows: dy.rows(),
                left_cols: dy.cols(),
                right_rows: self.d_out,
                right_cols: self.d_in,
            });
        }
        let m = self.degree + 1;
        let dz = self.post_norm.backward(dy)?;
        self.weight_grad.as_mut().unwrap().add_matmul_tn(&dz, &cache.t)?;
        let dt = dz.matmul(&self.weight)?;

        // Chain back to the squashed input u.
        let mut du = Matrix::zeros(dy.rows(), self.d_in);
        fold_grouped_product(&mut du, &dt, &cache.dt_du, m);

        // Chain to lambda through c = exp(-lambda): dL/dlambda = -c * dL/dc.
        let mut dc_sum = F::zero();
        for (a, b) in dt.data().iter().zip(cache.dt_dc.data()) {
            dc_sum = (*a).mul_add(*b, dc_sum);
        }
        let lg = self.lambda_grad.as_mut().unwrap();
        let updated = lg.get(0, 0) - cache.c * dc_sum;
        lg.set(0, 0, updated);

        // dx = du * (1 - tanh(x)^2) = du * (1 - u^2).
        let mut dx = du;
        for (g, &ui) in dx.data_mut().iter_mut().zip(cache.u.data()) {
            *g = *g * (F::one() - ui * ui);
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_, F>)) {
        self.ensure_grads();
        f(ParamMut {
            name: "weight",
            value: &mut self.weight,
            grad: self.weight_grad.as_mut().unwrap(),
        });
        f(ParamMut {
            name: "lambda",
            value: &mut self.lambda,
            grad: self.lambda_grad.as_mut().unwrap(),
        });
        self.post_norm.visit_params(f);
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        f(ParamRef {
            name: "weight",
            value: &self.weight,
        });
        f(ParamRef {
            name: "lambda",
            value: &self.lambda,
        });
        self.post_norm.visit_params_ref(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::GottliebSpec;

    fn make_layer(seed: u64) -> GottliebLayer<f64> {
        let mut rng = SeededRng::new(seed);
        GottliebLayer::new(4, 3, 3, GottliebFamily::Recurrence, &mut rng).unwrap()
    }

    #[test]
    fn forward_matches_compositional_oracle() {
        let mut layer = make_layer(51);
        let mut rng = SeededRng::new(510);
        let x = Matrix::uniform(3, 4, -2.0, 2.0, &mut rng);
        let y = layer.forward(&x, false).unwrap();
        // Rebuild: tanh -> GottliebSpec::values -> matmul -> layer norm.
        let spec = GottliebSpec {
            degree: 3,
            lambda: 1.0,
            family: GottliebFamily::Recurrence,
        };
        let mut z = Matrix::zeros(3, 3);
        for b in 0..3 {
            for o in 0..3 {
                let mut acc = 0.0;
                for i in 0..4 {
                    let vals: Vec<f64> = spec.values(x.get(b, i).tanh()).unwrap();
                    for (j, &v) in vals.iter().enumerate() {
                        acc += v * layer.weight.get(o, i * 4 + j);
                    }
                }
                z.set(b, o, acc);
            }
        }
        let mut ln = LayerNorm::<f64>::new(3).unwrap();
        let expect = ln.forward(&z, false).unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_including_lambda() {
        let mut layer = make_layer(52);
        let mut rng = SeededRng::new(520);
        let x = Matrix::uniform(2, 4, -1.5, 1.5, &mut rng);
        let w = Matrix::uniform(2, 3, -1.0, 1.0, &mut rng);
        layer.forward(&x, true).unwrap();
        let dx = layer.backward(&w).unwrap();
        let h = 1e-6;
        let loss = |layer: &mut GottliebLayer<f64>, x: &Matrix<f64>| -> f64 {
            to_f64(layer.forward(x, false).unwrap().hadamard(&w).unwrap().sum())
        };
        for b in 0..2 {
            for i in 0..4 {
                let mut xp = x.clone();
                xp.set(b, i, x.get(b, i) + h);
                let mut xm = x.clone();
                xm.set(b, i, x.get(b, i) - h);
                let fd = (loss(&mut layer, &xp) - loss(&mut layer, &xm)) / (2.0 * h);
                assert!((dx.get(b, i) - fd).abs() < 1e-6, "dx[{b}][{i}]");
            }
        }
        // Lambda gradient.
        let lg = layer.lambda_grad.as_ref().unwrap().get(0, 0);
        let orig = layer.lambda.get(0, 0);
        layer.lambda.set(0, 0, orig + h);
        let fp = loss(&mut layer, &x);
        layer.lambda.set(0, 0, orig - h);
        let fm = loss(&mut layer, &x);
        layer.lambda.set(0, 0, orig);
        let fd = (fp - fm) / (2.0 * h);
        assert!((lg - fd).abs() < 1e-6, "lambda grad {lg} vs {fd}");
    }

    #[test]
    fn bernoulli_family_has_zero_lambda_gradient() {
        let mut rng = SeededRng::new(53);
        let mut layer =
            GottliebLayer::<f64>::new(4, 3, 3, GottliebFamily::Bernoulli, &mut rng).unwrap();
        let x = Matrix::uniform(2, 4, -1.0, 1.0, &mut rng);
        let w = Matrix::filled(2, 3, 1.0);
        layer.forward(&x, true).unwrap();
        layer.backward(&w).unwrap();
        assert_eq!(layer.lambda_grad.as_ref().unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn param_visit_order_is_stable() {
        let mut layer = make_layer(54);
        let mut names = Vec::new();
        layer.visit_params(&mut |p| names.push(p.name));
        assert_eq!(names, vec!["weight", "lambda", "gamma", "beta"]);
    }

    #[test]
    fn param_count_formula() {
        let layer = make_layer(55);
        let mut n = 0;
        layer.visit_params_ref(&mut |p| n += p.value.data().len());
        // weight 3*(4*4) + lambda 1 + post-norm 2*3.
        assert_eq!(n, 48 + 1 + 6);
    }
}
