//! Model configuration, network assembly, the classification loss, and
//! model-file serialization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::GottliebFamily;
use crate::error::{Error, Result};
use crate::layers::{
    AblationFlags, Activation, BsrbfLayer, BsrbfOptions, EfficientKanLayer, FastKanLayer,
    FasterKanLayer, GottliebLayer, LinearLayer, ParamMut, ParamRef,
};
use crate::matrix::Matrix;
use crate::num::{real, Real};
use crate::rng::{streams, SeededRng};

/// Which architecture a [`Network`] instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bsrbf,
    EfficientKan,
    FastKan,
    FasterKan,
    Gottlieb,
    Mlp,
}

impl ModelKind {
    /// Stable identifier used in reports, file names, and the CLI.
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bsrbf => "bsrbf_kan",
            ModelKind::EfficientKan => "efficient_kan",
            ModelKind::FastKan => "fast_kan",
            ModelKind::FasterKan => "faster_kan",
            ModelKind::Gottlieb => "gottlieb_kan",
            ModelKind::Mlp => "mlp",
        }
    }

    /// Parse the identifier format produced by [`Self::name`] (a few common
    /// aliases are accepted).
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bsrbf_kan" | "bsrbf" => Ok(ModelKind::Bsrbf),
            "efficient_kan" | "efficientkan" => Ok(ModelKind::EfficientKan),
            "fast_kan" | "fastkan" => Ok(ModelKind::FastKan),
            "faster_kan" | "fasterkan" => Ok(ModelKind::FasterKan),
            "gottlieb_kan" | "gottlieb" | "gottliebkan" => Ok(ModelKind::Gottlieb),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Config(format!("unknown model kind: {other}"))),
        }
    }

    /// All kinds, in the order reports list them.
    pub fn all() -> [ModelKind; 6] {
        [
            ModelKind::Bsrbf,
            ModelKind::FastKan,
            ModelKind::FasterKan,
            ModelKind::EfficientKan,
            ModelKind::Gottlieb,
            ModelKind::Mlp,
        ]
    }
}

/// Everything needed to build a network deterministically.
///
/// `widths` lists the layer dimensions input-first, e.g. `[784, 64, 10]` for
/// one hidden layer of 64 units. All hidden layers use silu on their base
/// branch; the final layer emits raw logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub widths: Vec<usize>,
    /// B-spline grid intervals over the primary range.
    pub grid_size: usize,
    /// B-spline order.
    pub spline_order: usize,
    /// Gaussian / RSWAF center count.
    pub rbf_count: usize,
    /// Primary range of the spline grid.
    pub spline_range: [f64; 2],
    /// Range spanned by RBF centers.
    pub rbf_range: [f64; 2],
    /// Gottlieb polynomial degree.
    pub gottlieb_degree: usize,
    /// Gottlieb family selection.
    pub gottlieb_family: GottliebFamily,
    /// Branch toggles for BSRBF ablations (all on by default).
    pub flags: AblationFlags,
    /// Seed for parameter initialization and, in the harness, shuffling.
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for a kind: widths `[784, 64, 10]` (Gottlieb uses
    /// `[784, 64, 64, 10]`), spline grid 5/order 3 on `[-1, 1]`, 8 RBF
    /// centers on `[-2, 2]`, Gottlieb degree 3, seed 0.
    pub fn new(kind: ModelKind) -> Self {
        let widths = match kind {
            ModelKind::Gottlieb => vec![784, 64, 64, 10],
            _ => vec![784, 64, 10],
        };
        ModelConfig {
            kind,
            widths,
            grid_size: 5,
            spline_order: 3,
            rbf_count: 8,
            spline_range: [-1.0, 1.0],
            rbf_range: [-2.0, 2.0],
            gottlieb_degree: 3,
            gottlieb_family: GottliebFamily::default(),
            flags: AblationFlags::default(),
            seed: 0,
        }
    }

    /// Same config with a different seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Same config with different layer widths.
    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.widths = widths;
        self
    }

    /// Same config with different ablation flags.
    pub fn with_flags(mut self, flags: AblationFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(format!(
                "widths must chain at least input -> output, got {:?}",
                self.widths
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "all widths must be positive, got {:?}",
                self.widths
            )));
        }
        if self.grid_size == 0 {
            return Err(Error::Config("grid_size must be at least 1".into()));
        }
        if self.rbf_count < 2 {
            return Err(Error::Config("rbf_count must be at least 2".into()));
        }
        if self.kind == ModelKind::Bsrbf
            && self.flags.use_bspline
            && self.flags.use_rbf
            && self.grid_size + self.spline_order != self.rbf_count
        {
            return Err(Error::Config(format!(
                "BSRBF sums its expansions, so grid_size + spline_order must equal rbf_count; \
                 got {} + {} != {}",
                self.grid_size, self.spline_order, self.rbf_count
            )));
        }
        if self.kind == ModelKind::Gottlieb
            && self.gottlieb_family == GottliebFamily::Bernoulli
            && self.gottlieb_degree > 5
        {
            return Err(Error::Config(
                "Bernoulli Gottlieb family supports degree <= 5".into(),
            ));
        }
        if self.kind != ModelKind::Bsrbf && self.flags != AblationFlags::default() {
            return Err(Error::Config(format!(
                "ablation flags only apply to the bsrbf_kan model, got {:?} for {}",
                self.flags,
                self.kind.name()
            )));
        }
        Ok(())
    }
}

/// One layer of a [`Network`]; enum dispatch keeps the network serializable
/// and monomorphic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub enum NetLayer<F> {
    Bsrbf(BsrbfLayer<F>),
    EfficientKan(EfficientKanLayer<F>),
    FastKan(FastKanLayer<F>),
    FasterKan(FasterKanLayer<F>),
    Gottlieb(GottliebLayer<F>),
    Linear(LinearLayer<F>),
}

macro_rules! dispatch {
    ($self:expr, $layer:pat => $body:expr) => {
        match $self {
            NetLayer::Bsrbf($layer) => $body,
            NetLayer::EfficientKan($layer) => $body,
            NetLayer::FastKan($layer) => $body,
            NetLayer::FasterKan($layer) => $body,
            NetLayer::Gottlieb($layer) => $body,
            NetLayer::Linear($layer) => $body,
        }
    };
}

impl<F: Real> NetLayer<F> {
    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        dispatch!(self, l => l.forward(x, train))
    }

    pub fn backward(&mut self, dy: &Matrix<F>) -> Result<Matrix<F>> {
        dispatch!(self, l => l.backward(dy))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_, F>)) {
        dispatch!(self, l => l.visit_params(f))
    }

    pub fn visit_params_ref(&self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        dispatch!(self, l => l.visit_params_ref(f))
    }

    pub fn input_dim(&self) -> usize {
        dispatch!(self, l => l.input_dim())
    }

    pub fn output_dim(&self) -> usize {
        dispatch!(self, l => l.output_dim())
    }
}

/// A feed-forward stack of [`NetLayer`]s built from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Network<F> {
    config: ModelConfig,
    layers: Vec<NetLayer<F>>,
}

impl<F: Real> Network<F> {
    /// Build the network with freshly initialized parameters.
    ///
    /// Initialization draws come from the `INIT` stream of `config.seed`,
    /// consumed layer by layer in order; two builds from the same config are
    /// bitwise identical.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::with_stream(config.seed, streams::INIT);
        let mut layers = Vec::with_capacity(config.widths.len() - 1);
        let n_layers = config.widths.len() - 1;
        for (idx, pair) in config.widths.windows(2).enumerate() {
            let (d_in, d_out) = (pair[0], pair[1]);
            let is_last = idx + 1 == n_layers;
            // Hidden layers squash their base branch with silu; the final
            // layer emits raw logits.
            let act = if is_last {
                Activation::Identity
            } else {
                Activation::Silu
            };
            let layer = match config.kind {
                ModelKind::Bsrbf => NetLayer::Bsrbf(BsrbfLayer::new(
                    d_in,
                    d_out,
                    config.flags,
                    act,
                    &BsrbfOptions {
                        grid_size: config.grid_size,
                        spline_order: config.spline_order,
                        rbf_count: config.rbf_count,
                        spline_range: config.spline_range,
                        rbf_range: config.rbf_range,
                    },
                    &mut rng,
                )?),
                ModelKind::EfficientKan => NetLayer::EfficientKan(EfficientKanLayer::new(
                    d_in,
                    d_out,
                    act,
                    config.grid_size,
                    config.spline_order,
                    config.spline_range,
                    &mut rng,
                )?),
                ModelKind::FastKan => NetLayer::FastKan(FastKanLayer::new(
                    d_in,
                    d_out,
                    act,
                    config.rbf_count,
                    config.rbf_range,
                    &mut rng,
                )?),
                ModelKind::FasterKan => NetLayer::FasterKan(FasterKanLayer::new(
                    d_in,
                    d_out,
                    config.rbf_count,
                    config.rbf_range,
                    &mut rng,
                )?),
                ModelKind::Gottlieb => NetLayer::Gottlieb(GottliebLayer::new(
                    d_in,
                    d_out,
                    config.gottlieb_degree,
                    config.gottlieb_family,
                    &mut rng,
                )?),
                ModelKind::Mlp => NetLayer::Linear(LinearLayer::new(
                    d_in,
                    d_out,
                    act,
                    config.flags.use_layer_norm,
                    &mut rng,
                )?),
            };
            layers.push(layer);
        }
        Ok(Network {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[NetLayer<F>] {
        &self.layers
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, NetLayer::input_dim)
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, NetLayer::output_dim)
    }

    /// Forward through all layers. `train = true` caches intermediates for
    /// [`Self::backward`].
    pub fn forward(&mut self, x: &Matrix<F>, train: bool) -> Result<Matrix<F>> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "network_forward",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: self.output_dim(),
                right_cols: self.input_dim(),
            });
        }
        let mut h = self.layers[0].forward(x, train)?;
        for layer in &mut self.layers[1..] {
            h = layer.forward(&h, train)?;
        }
        Ok(h)
    }

    /// Inference-mode forward.
    pub fn predict(&mut self, x: &Matrix<F>) -> Result<Matrix<F>> {
        self.forward(x, false)
    }

    /// Backpropagate from the loss gradient with respect to the logits;
    /// accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dlogits: &Matrix<F>) -> Result<Matrix<F>> {
        let mut g = dlogits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Visit every `(value, grad)` pair with its layer index, in the fixed
    /// traversal order shared by the optimizer and the serializer.
    pub fn visit_params(&mut self, f: &mut impl FnMut(usize, ParamMut<'_, F>)) {
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&mut |p| f(idx, p));
        }
    }

    /// Read-only parameter walk in the same order as [`Self::visit_params`].
    pub fn visit_params_ref(&self, f: &mut impl FnMut(usize, ParamRef<'_, F>)) {
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.visit_params_ref(&mut |p| f(idx, p));
        }
    }

    /// Reset all gradient accumulators to zero.
    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.grad.zero_fill());
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params_ref(&mut |_, p| n += p.value.data().len());
        n
    }

    /// Serialize config and parameters to a JSON model file.
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut params = Vec::new();
        self.visit_params_ref(&mut |idx, p| {
            params.push(SavedParam {
                name: format!("layers.{idx}.{}", p.name),
                tensor: p.value.clone(),
            });
        });
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            params,
        };
        let json = serde_json::to_vec(&file)?;
        fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Rebuild a network from a JSON model file; parameter names and shapes
    /// are verified against the rebuilt architecture.
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: ModelFile<F> = serde_json::from_slice(&bytes)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("unexpected format tag {:?}", file.format),
            });
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("unsupported model version {}", file.version),
            });
        }
        let mut net = Network::build(&file.config)?;
        let mut iter = file.params.into_iter();
        let mut failure: Option<String> = None;
        net.visit_params(&mut |idx, p| {
            if failure.is_some() {
                return;
            }
            let expect = format!("layers.{idx}.{}", p.name);
            match iter.next() {
                Some(sp) if sp.name == expect && sp.tensor.shape() == p.value.shape() => {
                    *p.value = sp.tensor;
                }
                Some(sp) => {
                    failure = Some(format!(
                        "parameter mismatch: file has {:?} {:?}, model expects {:?} {:?}",
                        sp.name,
                        sp.tensor.shape(),
                        expect,
                        p.value.shape()
                    ));
                }
                None => failure = Some(format!("file is missing parameter {expect:?}")),
            }
        });
        if failure.is_none() && iter.next().is_some() {
            failure = Some("file contains extra parameters".into());
        }
        match failure {
            Some(reason) => Err(Error::Format {
                path: path.display().to_string(),
                reason,
            }),
            None => Ok(net),
        }
    }
}

const MODEL_FORMAT: &str = "bsrbf-kan-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Real")]
struct ModelFile<F: Real> {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<SavedParam<F>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Real")]
struct SavedParam<F: Real> {
    name: String,
    tensor: Matrix<F>,
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Softmax cross-entropy with mean reduction over the batch.
///
/// Returns `(loss, dloss/dlogits)`. The gradient is `(softmax - onehot) / batch`,
/// ready to feed [`Network::backward`]. Numerically stabilized by
/// subtracting each row's maximum before exponentiation.
pub fn softmax_cross_entropy<F: Real>(
    logits: &Matrix<F>,
    labels: &[u8],
) -> Result<(F, Matrix<F>)> {
    let batch = logits.rows();
    let classes = logits.cols();
    if labels.len() != batch {
        return Err(Error::InvalidParameter {
            what: "softmax_cross_entropy labels",
            details: format!("{} labels for {batch} logit rows", labels.len()),
        });
    }
    if batch == 0 {
        return Err(Error::InvalidParameter {
            what: "softmax_cross_entropy batch",
            details: "mean loss over an empty batch is undefined".into(),
        });
    }
    let mut grad = Matrix::zeros(batch, classes);
    let inv_b = real::<F>(1.0 / batch as f64);
    let mut loss = F::zero();
    for b in 0..batch {
        let label = labels[b] as usize;
        if label >= classes {
            return Err(Error::Data(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = logits.row(b);
        let mut max = row[0];
        for &v in &row[1..] {
            if v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        let grow = grad.row_mut(b);
        for (g, &v) in grow.iter_mut().zip(row) {
            let e = (v - max).exp();
            *g = e;
            sum += e;
        }
        let inv_sum = F::one() / sum;
        for g in grow.iter_mut() {
            *g = *g * inv_sum * inv_b;
        }
        grow[label] -= inv_b;
        // loss_row = log-sum-exp - logit[label].
        loss += max + sum.ln() - row[label];
    }
    Ok((loss * inv_b, grad))
}
