//! Scalar basis expansions: B-splines, radial basis functions, and Gottlieb
//! polynomials.
//!
//! Each family maps one scalar input to a short vector of basis values (and
//! optionally the derivative of each value with respect to the input). Layers
//! apply these per feature and learn a linear map over the expanded
//! coordinates.
//!
//! Everything here is allocation-free on the hot path: callers hand in output
//! slices via the `*_into` methods, and the convenience `Vec`-returning
//! wrappers validate inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{real, Real};

// ---------------------------------------------------------------------------
// B-splines
// ---------------------------------------------------------------------------

/// Uniform B-spline basis on an extended knot vector.
///
/// For a primary range `[lo, hi]`, `grid_size` intervals, and spline order
/// `order` (polynomial degree), the knot vector has `grid_size + 2*order + 1`
/// uniformly spaced knots running `order` steps past each end of the range,
/// and the basis has `grid_size + order` functions. Evaluation uses the
/// Cox-de Boor recursion: order-0 indicators on the knot intervals, then
/// `order` lifting passes. Inputs outside the extended knot span simply get
/// all-zero basis vectors; there is no clamping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineGrid<F> {
    grid_size: usize,
    order: usize,
    knots: Vec<F>,
    /// Knot spacing.
    step: F,
    /// `1 / (p * step)` for lifting pass `p` (index 0 unused).
    inv_denom: Vec<F>,
}

impl<F: Real> SplineGrid<F> {
    /// Build a grid over `range = [lo, hi]` with `grid_size` intervals and
    /// the given spline order (0 = piecewise constant, 3 = cubic).
    pub fn new(range: [f64; 2], grid_size: usize, order: usize) -> Result<Self> {
        let [lo, hi] = range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidParameter {
                what: "SplineGrid range",
                details: format!("need finite lo < hi, got [{lo}, {hi}]"),
            });
        }
        if grid_size == 0 {
            return Err(Error::InvalidParameter {
                what: "SplineGrid grid_size",
                details: "grid_size must be at least 1".into(),
            });
        }
        let h = (hi - lo) / grid_size as f64;
        let count = grid_size + 2 * order + 1;
        let knots = (0..count)
            .map(|i| real::<F>(lo + (i as f64 - order as f64) * h))
            .collect();
        let inv_denom = (0..=order)
            .map(|p| {
                if p == 0 {
                    F::zero()
                } else {
                    real::<F>(1.0 / (p as f64 * h))
                }
            })
            .collect();
        Ok(SplineGrid {
            grid_size,
            order,
            knots,
            step: real(h),
            inv_denom,
        })
    }

    /// Number of basis functions: `grid_size + order`.
    #[inline]
    pub fn basis_count(&self) -> usize {
        self.grid_size + self.order
    }

    /// Scratch length required by the `*_into` evaluators.
    #[inline]
    pub fn scratch_len(&self) -> usize {
        self.grid_size + 2 * self.order
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Extended knot vector.
    pub fn knots(&self) -> &[F] {
        &self.knots
    }

    /// Evaluate all basis functions at `x` into `values`.
    ///
    /// `values.len()` must equal [`Self::basis_count`]; `scratch.len()` must
    /// equal [`Self::scratch_len`].
    pub fn eval_into(&self, x: F, values: &mut [F], scratch: &mut [F]) {
        self.eval_impl(x, values, None, scratch);
    }

    /// Evaluate all basis functions and their derivatives at `x`.
    pub fn eval_with_deriv_into(
        &self,
        x: F,
        values: &mut [F],
        derivs: &mut [F],
        scratch: &mut [F],
    ) {
        self.eval_impl(x, values, Some(derivs), scratch);
    }

    fn eval_impl(&self, x: F, values: &mut [F], derivs: Option<&mut [F]>, scratch: &mut [F]) {
        let n_intervals = self.scratch_len();
        debug_assert_eq!(values.len(), self.basis_count());
        debug_assert_eq!(scratch.len(), n_intervals);

        // Order-0: half-open indicator functions on the knot intervals.
        for i in 0..n_intervals {
            scratch[i] = if self.knots[i] <= x && x < self.knots[i + 1] {
                F::one()
            } else {
                F::zero()
            };
        }

        // Lifting passes. Updating in place ascending is safe: the new value
        // at `i` consumes the old values at `i` and `i + 1`, and slot `i` is
        // never read again once written.
        for p in 1..=self.order {
            let inv = self.inv_denom[p];
            for i in 0..(n_intervals - p) {
                let left = (x - self.knots[i]) * inv * scratch[i];
                let right = (self.knots[i + p + 1] - x) * inv * scratch[i + 1];
                scratch[i] = left + right;
            }
        }

        values.copy_from_slice(&scratch[..self.basis_count()]);

        // The lifting above consumed the lower-order values in place, so the
        // derivative path reruns the recursion up to order k-1. Derivatives
        // are only evaluated on training paths where this extra O(order * n)
        // work is negligible next to the matmuls.
        if let Some(derivs) = derivs {
            debug_assert_eq!(derivs.len(), self.basis_count());
            if self.order == 0 {
                // Piecewise-constant basis: derivative zero almost everywhere.
                derivs.fill(F::zero());
                return;
            }
            // Recompute order-(k-1) values.
            for i in 0..n_intervals {
                scratch[i] = if self.knots[i] <= x && x < self.knots[i + 1] {
                    F::one()
                } else {
                    F::zero()
                };
            }
            for p in 1..self.order {
                let inv = self.inv_denom[p];
                for i in 0..(n_intervals - p) {
                    let left = (x - self.knots[i]) * inv * scratch[i];
                    let right = (self.knots[i + p + 1] - x) * inv * scratch[i + 1];
                    scratch[i] = left + right;
                }
            }
            // d/dx B_{i,k} = k/(t_{i+k}-t_i) B_{i,k-1} - k/(t_{i+k+1}-t_{i+1}) B_{i+1,k-1};
            // with uniform knots both factors are 1/step.
            let inv_h = self.inv_denom[1];
            for i in 0..self.basis_count() {
                derivs[i] = (scratch[i] - scratch[i + 1]) * inv_h;
            }
        }
    }

    /// Validated evaluation returning a fresh vector.
    pub fn eval(&self, x: F) -> Result<Vec<F>> {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "SplineGrid::eval input".into(),
            });
        }
        let mut values = vec![F::zero(); self.basis_count()];
        let mut scratch = vec![F::zero(); self.scratch_len()];
        self.eval_into(x, &mut values, &mut scratch);
        Ok(values)
    }

    /// Validated evaluation returning `(values, derivatives)`.
    pub fn eval_with_deriv(&self, x: F) -> Result<(Vec<F>, Vec<F>)> {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "SplineGrid::eval_with_deriv input".into(),
            });
        }
        let mut values = vec![F::zero(); self.basis_count()];
        let mut derivs = vec![F::zero(); self.basis_count()];
        let mut scratch = vec![F::zero(); self.scratch_len()];
        self.eval_with_deriv_into(x, &mut values, &mut derivs, &mut scratch);
        Ok((values, derivs))
    }
}

// ---------------------------------------------------------------------------
// Radial basis functions
// ---------------------------------------------------------------------------

/// Uniformly spaced radial basis centers with a shared width.
///
/// `count` centers span `[lo, hi]` inclusively; the width equals the center
/// spacing `(hi - lo) / (count - 1)`. Two profiles share this grid:
///
/// * **Gaussian**: `phi_i(x) = exp(-(x - c_i)^2 / (2 h^2))`
/// * **RSWAF** (reflectional switch): `phi_i(x) = 1 - tanh((x - c_i) / h)^2`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbfGrid<F> {
    centers: Vec<F>,
    width: F,
    /// Cached `1 / (2 h^2)` for the Gaussian profile.
    inv_two_h2: F,
    /// Cached `1 / h^2` for the Gaussian derivative.
    inv_h2: F,
    /// Cached `1 / h` for the RSWAF profile.
    inv_h: F,
}

impl<F: Real> RbfGrid<F> {
    /// `count` centers spanning `range = [lo, hi]`.
    pub fn new(range: [f64; 2], count: usize) -> Result<Self> {
        let [lo, hi] = range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidParameter {
                what: "RbfGrid range",
                details: format!("need finite lo < hi, got [{lo}, {hi}]"),
            });
        }
        if count < 2 {
            return Err(Error::InvalidParameter {
                what: "RbfGrid count",
                details: "need at least 2 centers".into(),
            });
        }
        let h = (hi - lo) / (count - 1) as f64;
        let centers = (0..count).map(|i| real::<F>(lo + i as f64 * h)).collect();
        Ok(RbfGrid {
            centers,
            width: real(h),
            inv_two_h2: real(1.0 / (2.0 * h * h)),
            inv_h2: real(1.0 / (h * h)),
            inv_h: real(1.0 / h),
        })
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[F] {
        &self.centers
    }

    #[inline]
    pub fn width(&self) -> F {
        self.width
    }

    /// Gaussian profile values at `x`.
    pub fn gaussian_into(&self, x: F, values: &mut [F]) {
        debug_assert_eq!(values.len(), self.count());
        for (v, &c) in values.iter_mut().zip(&self.centers) {
            let d = x - c;
            *v = (-(d * d) * self.inv_two_h2).exp();
        }
    }

    /// Gaussian values plus derivatives with respect to `x`.
    ///
    /// Uses `phi'(x) = phi(x) * (c - x) / h^2`, so it costs no extra `exp`.
    pub fn gaussian_with_deriv_into(&self, x: F, values: &mut [F], derivs: &mut [F]) {
        debug_assert_eq!(derivs.len(), self.count());
        self.gaussian_into(x, values);
        for ((d, &v), &c) in derivs.iter_mut().zip(values.iter()).zip(&self.centers) {
            *d = v * (c - x) * self.inv_h2;
        }
    }

    /// RSWAF profile values at `x`.
    pub fn rswaf_into(&self, x: F, values: &mut [F]) {
        debug_assert_eq!(values.len(), self.count());
        for (v, &c) in values.iter_mut().zip(&self.centers) {
            let t = ((x - c) * self.inv_h).tanh();
            *v = F::one() - t * t;
        }
    }

    /// RSWAF values plus derivatives with respect to `x`.
    ///
    /// `d/dx [1 - tanh(u)^2] = -2 tanh(u) (1 - tanh(u)^2) / h`.
    pub fn rswaf_with_deriv_into(&self, x: F, values: &mut [F], derivs: &mut [F]) {
        debug_assert_eq!(values.len(), self.count());
        debug_assert_eq!(derivs.len(), self.count());
        let two = real::<F>(2.0);
        for ((v, d), &c) in values.iter_mut().zip(derivs.iter_mut()).zip(&self.centers) {
            let t = ((x - c) * self.inv_h).tanh();
            let val = F::one() - t * t;
            *v = val;
            *d = -two * t * val * self.inv_h;
        }
    }

    /// Validated Gaussian evaluation returning a fresh vector.
    pub fn gaussian(&self, x: F) -> Result<Vec<F>> {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "RbfGrid::gaussian input".into(),
            });
        }
        let mut values = vec![F::zero(); self.count()];
        self.gaussian_into(x, &mut values);
        Ok(values)
    }

    /// Validated RSWAF evaluation returning a fresh vector.
    pub fn rswaf(&self, x: F) -> Result<Vec<F>> {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "RbfGrid::rswaf input".into(),
            });
        }
        let mut values = vec![F::zero(); self.count()];
        self.rswaf_into(x, &mut values);
        Ok(values)
    }
}

// ---------------------------------------------------------------------------
// Gottlieb polynomials
// ---------------------------------------------------------------------------

/// Which reading of the Gottlieb polynomial family to use.
///
/// The classical family (Gottlieb 1938) satisfies a three-term recurrence in
/// the parameter `c = exp(-lambda)` and is the default. The `Bernoulli`
/// variant instead interprets the family through its binomial convolution
/// with Bernoulli polynomials, which collapses to `G_n(x) = B_n(2x)`; it has
/// no dependence on `lambda` and is provided as an explicitly flagged
/// alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GottliebFamily {
    #[default]
    Recurrence,
    Bernoulli,
}

/// A Gottlieb basis: degree, shape parameter, and family selection.
///
/// The basis at degree `d` has `d + 1` functions (degrees `0..=d`). `lambda`
/// parameterizes the classical family through `c = exp(-lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GottliebSpec {
    pub degree: usize,
    pub lambda: f64,
    #[serde(default)]
    pub family: GottliebFamily,
}

/// Bernoulli polynomial coefficients, ascending powers, for degrees 0..=5.
const BERNOULLI_COEFFS: [&[f64]; 6] = [
    &[1.0],
    &[-0.5, 1.0],
    &[1.0 / 6.0, -1.0, 1.0],
    &[0.0, 0.5, -1.5, 1.0],
    &[-1.0 / 30.0, 0.0, 1.0, -2.0, 1.0],
    &[0.0, -1.0 / 6.0, 0.0, 5.0 / 3.0, -2.5, 1.0],
];

/// Evaluate the classical (recurrence) Gottlieb family at `x` with parameter
/// `c`, filling `values[0..=degree]` and optionally the derivatives with
/// respect to `x` and to `c`.
///
/// Recurrence (with `l_n` the degree-`n` member):
///
/// ```text
/// l_0 = 1
/// l_1 = (c - 1) x + c
/// (n+1) l_{n+1} = [ (c - 1) x + n + (n+1) c ] l_n  -  n c l_{n-1}
/// ```
///
/// The derivative recurrences are the term-by-term differentiations of the
/// same relations, carried alongside the values in one pass.
pub fn gottlieb_recurrence_into<F: Real>(
    x: F,
    c: F,
    values: &mut [F],
    mut dx: Option<&mut [F]>,
    mut dc: Option<&mut [F]>,
) {
    let degree = values.len() - 1;
    let one = F::one();
    values[0] = one;
    if let Some(d) = dx.as_deref_mut() {
        d[0] = F::zero();
    }
    if let Some(d) = dc.as_deref_mut() {
        d[0] = F::zero();
    }
    if degree == 0 {
        return;
    }
    values[1] = (c - one) * x + c;
    if let Some(d) = dx.as_deref_mut() {
        d[1] = c - one;
    }
    if let Some(d) = dc.as_deref_mut() {
        d[1] = x + one;
    }
    for n in 1..degree {
        let nf = real::<F>(n as f64);
        let np1 = real::<F>((n + 1) as f64);
        let inv_np1 = one / np1;
        // A = (c-1)x + n + (n+1)c; dA/dx = c-1; dA/dc = x + (n+1).
        let a = (c - one) * x + nf + np1 * c;
        let next = (a * values[n] - nf * c * values[n - 1]) * inv_np1;
        if let Some(d) = dx.as_deref_mut() {
            d[n + 1] =
                ((c - one) * values[n] + a * d[n] - nf * c * d[n - 1]) * inv_np1;
        }
        if let Some(d) = dc.as_deref_mut() {
            d[n + 1] = ((x + np1) * values[n] + a * d[n]
                - nf * values[n - 1]
                - nf * c * d[n - 1])
                * inv_np1;
        }
        values[n + 1] = next;
    }
}

/// Evaluate the Bernoulli reading `G_n(x) = B_n(2x)` for `n = 0..=degree`,
/// optionally with the derivative `G_n'(x) = 2 n B_{n-1}(2x)`.
pub fn gottlieb_bernoulli_into<F: Real>(
    x: F,
    values: &mut [F],
    mut dx: Option<&mut [F]>,
) -> Result<()> {
    let degree = values.len() - 1;
    if degree >= BERNOULLI_COEFFS.len() {
        return Err(Error::InvalidParameter {
            what: "gottlieb_bernoulli degree",
            details: format!(
                "degree {degree} exceeds the supported maximum {}",
                BERNOULLI_COEFFS.len() - 1
            ),
        });
    }
    let u = real::<F>(2.0) * x;
    let horner = |coeffs: &[f64]| {
        let mut acc = F::zero();
        for &ck in coeffs.iter().rev() {
            acc = acc.mul_add(u, real(ck));
        }
        acc
    };
    for (n, v) in values.iter_mut().enumerate() {
        *v = horner(BERNOULLI_COEFFS[n]);
    }
    if let Some(d) = dx.as_deref_mut() {
        d[0] = F::zero();
        for n in 1..=degree {
            // d/dx B_n(2x) = 2 n B_{n-1}(2x).
            d[n] = real::<F>(2.0 * n as f64) * horner(BERNOULLI_COEFFS[n - 1]);
        }
    }
    Ok(())
}

impl GottliebSpec {
    /// Basis length: `degree + 1`.
    pub fn basis_count(&self) -> usize {
        self.degree + 1
    }

    /// Validated evaluation of the selected family at `x`.
    pub fn values<F: Real>(&self, x: F) -> Result<Vec<F>> {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: "GottliebSpec::values input".into(),
            });
        }
        if !self.lambda.is_finite() {
            return Err(Error::NonFinite {
                context: "GottliebSpec::values lambda".into(),
            });
        }
        let mut out = vec![F::zero(); self.basis_count()];
        match self.family {
            GottliebFamily::Recurrence => {
                let c = real::<F>((-self.lambda).exp());
                gottlieb_recurrence_into(x, c, &mut out, None, None);
            }
            GottliebFamily::Bernoulli => {
                gottlieb_bernoulli_into(x, &mut out, None)?;
            }
        }
        Ok(out)
    }
}
