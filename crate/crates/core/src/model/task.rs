use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{LayerShape, ModelParams, ParamSource};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{RandomStream, Seed, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Logistic,
    LeastSquares,
    Mlp,
}

/// Model family and data-generation knobs for one synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    /// Binary logistic regression. Features are `rows × cols` matrices and
    /// the weight layer has the same shape, so the logit is the Frobenius
    /// inner product. Labels come from a planted weight with random flips.
    Logistic {
        rows: usize,
        cols: usize,
        bias: bool,
        label_noise: f64,
    },
    /// Linear regression `y = W x + b + noise` with `W ∈ ℝ^{outputs×inputs}`.
    LeastSquares {
        outputs: usize,
        inputs: usize,
        bias: bool,
        noise_std: f64,
    },
    /// One tanh hidden layer and a softmax head, labels from a teacher net.
    Mlp {
        inputs: usize,
        hidden: usize,
        classes: usize,
    },
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Logistic { .. } => TaskKind::Logistic,
            TaskSpec::LeastSquares { .. } => TaskKind::LeastSquares,
            TaskSpec::Mlp { .. } => TaskKind::Mlp,
        }
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        match *self {
            TaskSpec::Logistic { rows, cols, bias, .. } => {
                let mut s = vec![LayerShape::Matrix { rows, cols }];
                if bias {
                    s.push(LayerShape::Vector { len: 1 });
                }
                s
            }
            TaskSpec::LeastSquares {
                outputs,
                inputs,
                bias,
                ..
            } => {
                let mut s = vec![LayerShape::Matrix {
                    rows: outputs,
                    cols: inputs,
                }];
                if bias {
                    s.push(LayerShape::Vector { len: outputs });
                }
                s
            }
            TaskSpec::Mlp {
                inputs,
                hidden,
                classes,
            } => vec![
                LayerShape::Matrix {
                    rows: hidden,
                    cols: inputs,
                },
                LayerShape::Vector { len: hidden },
                LayerShape::Matrix {
                    rows: classes,
                    cols: hidden,
                },
                LayerShape::Vector { len: classes },
            ],
        }
    }

    fn feature_dim(&self) -> usize {
        match *self {
            TaskSpec::Logistic { rows, cols, .. } => rows * cols,
            TaskSpec::LeastSquares { inputs, .. } => inputs,
            TaskSpec::Mlp { inputs, .. } => inputs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RemainderPolicy {
    /// Sample count must divide evenly across clients.
    Strict,
    /// Leftover samples go one each to the lowest-numbered clients.
    #[default]
    Spread,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub spec: TaskSpec,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub remainder: RemainderPolicy,
}

impl TaskConfig {
    pub fn new(spec: TaskSpec) -> Self {
        TaskConfig {
            spec,
            train_samples: 1024,
            eval_samples: 500,
            remainder: RemainderPolicy::Spread,
        }
    }

    pub fn logistic(rows: usize, cols: usize) -> Self {
        Self::new(TaskSpec::Logistic {
            rows,
            cols,
            bias: false,
            label_noise: 0.05,
        })
    }

    pub fn least_squares(outputs: usize, inputs: usize) -> Self {
        Self::new(TaskSpec::LeastSquares {
            outputs,
            inputs,
            bias: false,
            noise_std: 0.0,
        })
    }

    pub fn mlp(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self::new(TaskSpec::Mlp {
            inputs,
            hidden,
            classes,
        })
    }

    pub fn with_samples(mut self, train: usize, eval: usize) -> Self {
        self.train_samples = train;
        self.eval_samples = eval;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for s in self.spec.layer_shapes() {
            s.validate()?;
        }
        match self.spec {
            TaskSpec::Logistic { label_noise, .. } if !(0.0..=0.5).contains(&label_noise) => {
                return Err(Error::InvalidArgument(format!(
                    "label_noise {label_noise} outside [0, 0.5]"
                )))
            }
            TaskSpec::LeastSquares { noise_std, .. } if !(noise_std >= 0.0) => {
                return Err(Error::InvalidArgument(format!("noise_std {noise_std} < 0")))
            }
            TaskSpec::Mlp { classes, .. } if classes < 2 => {
                return Err(Error::InvalidArgument("mlp needs at least 2 classes".into()))
            }
            _ => {}
        }
        if self.train_samples == 0 {
            return Err(Error::InvalidArgument("train_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<F> {
    /// Labels in `{-1, +1}`.
    Binary(Vec<F>),
    Regression { dim: usize, values: Vec<F> },
    Class(Vec<usize>),
}

/// Row-major sample matrix plus targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub feature_dim: usize,
    pub features: Vec<F>,
    pub targets: Targets<F>,
}

impl<F: Real> Dataset<F> {
    pub fn len(&self) -> usize {
        if self.feature_dim == 0 {
            0
        } else {
            self.features.len() / self.feature_dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, index: usize) -> &[F] {
        &self.features[index * self.feature_dim..(index + 1) * self.feature_dim]
    }

    pub fn all(&self) -> Batch<'_, F> {
        Batch {
            data: self,
            indices: None,
        }
    }

    pub fn batch<'a>(&'a self, indices: &'a [usize]) -> Batch<'a, F> {
        Batch {
            data: self,
            indices: Some(indices),
        }
    }
}

/// A minibatch: a view of selected rows of a dataset (or all of them).
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, F> {
    pub data: &'a Dataset<F>,
    indices: Option<&'a [usize]>,
}

impl<'a, F: Real> Batch<'a, F> {
    pub fn len(&self) -> usize {
        self.indices.map_or(self.data.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self) -> impl Iterator<Item = usize> + 'a {
        let n = self.data.len();
        let explicit = self.indices;
        (0..explicit.map_or(n, <[usize]>::len)).map(move |k| match explicit {
            Some(ix) => ix[k],
            None => k,
        })
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty minibatch".into()));
        }
        if let Some(ix) = self.indices {
            let n = self.data.len();
            if let Some(bad) = ix.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "sample index {bad} out of range for {n} samples"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Task<F> {
    pub config: TaskConfig,
    shapes: Vec<LayerShape>,
    pub train: Dataset<F>,
    pub eval: Dataset<F>,
    shards: Vec<Vec<usize>>,
    ground_truth: Option<ModelParams<F>>,
}

impl<F: Real> Task<F> {
    /// Deterministically builds the data for `config` and splits the training
    /// set into `n_clients` contiguous, disjoint shards.
    pub fn generate(config: &TaskConfig, seed: Seed, n_clients: usize) -> Result<Self> {
        config.validate()?;
        if n_clients < 1 {
            return Err(Error::InvalidArgument("n_clients must be >= 1".into()));
        }
        if config.train_samples < n_clients {
            return Err(Error::InvalidArgument(format!(
                "{} samples cannot cover {n_clients} clients",
                config.train_samples
            )));
        }
        if config.remainder == RemainderPolicy::Strict && config.train_samples % n_clients != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} samples not divisible by {n_clients} clients",
                config.train_samples
            )));
        }

        let shapes = config.spec.layer_shapes();
        let mut stream = RandomStream::derived(seed, StreamDomain::TaskData, 0);
        let truth = planted_params::<F>(&config.spec, &shapes, &mut stream)?;
        let train = sample_dataset(&config.spec, &truth, config.train_samples, &mut stream);
        let eval = sample_dataset(&config.spec, &truth, config.eval_samples, &mut stream);

        let base = config.train_samples / n_clients;
        let extra = config.train_samples % n_clients;
        let mut shards = Vec::with_capacity(n_clients);
        let mut start = 0;
        for c in 0..n_clients {
            let size = base + usize::from(c < extra);
            shards.push((start..start + size).collect());
            start += size;
        }

        Ok(Task {
            config: config.clone(),
            shapes,
            train,
            eval,
            shards,
            ground_truth: Some(truth),
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.config.spec.kind()
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }

    /// Planted parameters used to label the data. For logistic tasks only the
    /// direction is meaningful.
    pub fn ground_truth(&self) -> Option<&ModelParams<F>> {
        self.ground_truth.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.shapes.iter().map(LayerShape::len).sum()
    }

    /// Starting point shared by every client: zeros for the linear tasks,
    /// scaled Gaussian weights for the MLP (zero biases).
    pub fn initial_params(&self, seed: Seed) -> Result<ModelParams<F>> {
        let mut p = ModelParams::zeros(&self.shapes)?;
        if self.kind() == TaskKind::Mlp {
            let mut stream = RandomStream::derived(seed, StreamDomain::Initialization, 0);
            for (l, shape) in self.shapes.clone().iter().enumerate() {
                if let LayerShape::Matrix { cols, .. } = *shape {
                    let scale = 1.0 / libm::sqrt(cols as f64);
                    for x in p.layer_mut(l) {
                        *x = F::from_f64(scale * stream.gaussian());
                    }
                }
            }
        }
        Ok(p)
    }

    fn check_params<P: ParamSource<F>>(&self, params: &P) -> Result<()> {
        if params.shapes() != self.shapes.as_slice() {
            return Err(Error::InvalidArgument(format!(
                "parameter shapes {:?} do not match task shapes {:?}",
                params.shapes(),
                self.shapes
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch<'_, F>) -> Result<()> {
        batch.check()?;
        if batch.data.feature_dim != self.config.spec.feature_dim() {
            return Err(Error::InvalidArgument(format!(
                "batch feature dimension {} != task feature dimension {}",
                batch.data.feature_dim,
                self.config.spec.feature_dim()
            )));
        }
        Ok(())
    }

    /// Mean loss over the batch.
    pub fn loss<P: ParamSource<F>>(&self, params: &P, batch: Batch<'_, F>) -> Result<F> {
        self.check_params(params)?;
        self.check_batch(&batch)?;
        let total = match self.config.spec {
            TaskSpec::Logistic { bias, .. } => {
                let w = params.layer(0);
                let b = if bias { params.layer(1)[0] } else { F::ZERO };
                let labels = binary_labels(batch.data)?;
                let mut acc = F::ZERO;
                for row in batch.rows() {
                    let margin = labels[row] * (dot(&w, batch.data.sample(row)) + b);
                    acc += softplus(-margin);
                }
                acc
            }
            TaskSpec::LeastSquares { outputs, bias, .. } => {
                let w = params.layer(0);
                let b = if bias { Some(params.layer(1)) } else { None };
                let (dim, values) = regression_targets(batch.data)?;
                let mut acc = F::ZERO;
                let mut pred = vec![F::ZERO; outputs];
                for row in batch.rows() {
                    affine(&w, b.as_deref(), batch.data.sample(row), &mut pred);
                    let y = &values[row * dim..(row + 1) * dim];
                    let sq: F = pred.iter().zip(y).map(|(p, t)| (*p - *t) * (*p - *t)).sum();
                    acc += F::from_f64(0.5) * sq;
                }
                acc
            }
            TaskSpec::Mlp { hidden, classes, .. } => {
                let (w1, b1, w2, b2) = (
                    params.layer(0),
                    params.layer(1),
                    params.layer(2),
                    params.layer(3),
                );
                let labels = class_labels(batch.data)?;
                let mut h = vec![F::ZERO; hidden];
                let mut o = vec![F::ZERO; classes];
                let mut acc = F::ZERO;
                for row in batch.rows() {
                    mlp_forward(&w1, &b1, &w2, &b2, batch.data.sample(row), &mut h, &mut o);
                    acc += log_sum_exp(&o) - o[labels[row]];
                }
                acc
            }
        };
        let mean = total / F::from_f64(batch.len() as f64);
        if !mean.is_finite() {
            return Err(Error::NumericOverflow(format!("loss evaluated to {mean}")));
        }
        Ok(mean)
    }

    /// Analytic gradient of [`Task::loss`].
    pub fn true_gradient<P: ParamSource<F>>(
        &self,
        params: &P,
        batch: Batch<'_, F>,
    ) -> Result<ModelParams<F>> {
        self.check_params(params)?;
        self.check_batch(&batch)?;
        let mut grad = ModelParams::zeros(&self.shapes)?;
        match self.config.spec {
            TaskSpec::Logistic { bias, .. } => {
                let w = params.layer(0);
                let b = if bias { params.layer(1)[0] } else { F::ZERO };
                let labels = binary_labels(batch.data)?;
                let mut gb = F::ZERO;
                for row in batch.rows() {
                    let x = batch.data.sample(row);
                    let y = labels[row];
                    let margin = y * (dot(&w, x) + b);
                    let coeff = -y * sigmoid(-margin);
                    for (g, xi) in grad.layer_mut(0).iter_mut().zip(x) {
                        *g += coeff * *xi;
                    }
                    gb += coeff;
                }
                if bias {
                    grad.layer_mut(1)[0] = gb;
                }
            }
            TaskSpec::LeastSquares {
                outputs,
                inputs,
                bias,
                ..
            } => {
                let w = params.layer(0);
                let b = if bias { Some(params.layer(1)) } else { None };
                let (dim, values) = regression_targets(batch.data)?;
                let mut pred = vec![F::ZERO; outputs];
                let mut gb = vec![F::ZERO; outputs];
                for row in batch.rows() {
                    let x = batch.data.sample(row);
                    affine(&w, b.as_deref(), x, &mut pred);
                    let y = &values[row * dim..(row + 1) * dim];
                    let gw = grad.layer_mut(0);
                    for o in 0..outputs {
                        let r = pred[o] - y[o];
                        for i in 0..inputs {
                            gw[o * inputs + i] += r * x[i];
                        }
                        gb[o] += r;
                    }
                }
                if bias {
                    grad.layer_mut(1).copy_from_slice(&gb);
                }
            }
            TaskSpec::Mlp {
                inputs,
                hidden,
                classes,
            } => {
                let (w1, b1, w2, b2) = (
                    params.layer(0),
                    params.layer(1),
                    params.layer(2),
                    params.layer(3),
                );
                let labels = class_labels(batch.data)?;
                let mut h = vec![F::ZERO; hidden];
                let mut o = vec![F::ZERO; classes];
                let mut dh = vec![F::ZERO; hidden];
                for row in batch.rows() {
                    let x = batch.data.sample(row);
                    mlp_forward(&w1, &b1, &w2, &b2, x, &mut h, &mut o);
                    let lse = log_sum_exp(&o);
                    for (c, oc) in o.iter_mut().enumerate() {
                        let p = (*oc - lse).exp();
                        *oc = if c == labels[row] { p - F::ONE } else { p };
                    }
                    // o now holds dL/dlogits.
                    dh.iter_mut().for_each(|v| *v = F::ZERO);
                    {
                        let gw2 = grad.layer_mut(2);
                        for c in 0..classes {
                            for j in 0..hidden {
                                gw2[c * hidden + j] += o[c] * h[j];
                                dh[j] += w2[c * hidden + j] * o[c];
                            }
                        }
                    }
                    for (g, d) in grad.layer_mut(3).iter_mut().zip(&o) {
                        *g += *d;
                    }
                    for j in 0..hidden {
                        dh[j] *= F::ONE - h[j] * h[j];
                    }
                    {
                        let gw1 = grad.layer_mut(0);
                        for j in 0..hidden {
                            for i in 0..inputs {
                                gw1[j * inputs + i] += dh[j] * x[i];
                            }
                        }
                    }
                    for (g, d) in grad.layer_mut(1).iter_mut().zip(&dh) {
                        *g += *d;
                    }
                }
            }
        }
        grad.scale(F::ONE / F::from_f64(batch.len() as f64));
        if !grad.all_finite() {
            return Err(Error::NumericOverflow("non-finite gradient".into()));
        }
        Ok(grad)
    }

    /// Classification accuracy; `None` for regression tasks.
    pub fn accuracy<P: ParamSource<F>>(&self, params: &P, batch: Batch<'_, F>) -> Result<Option<f64>> {
        self.check_params(params)?;
        self.check_batch(&batch)?;
        let mut correct = 0usize;
        match self.config.spec {
            TaskSpec::Logistic { bias, .. } => {
                let w = params.layer(0);
                let b = if bias { params.layer(1)[0] } else { F::ZERO };
                let labels = binary_labels(batch.data)?;
                for row in batch.rows() {
                    let z = dot(&w, batch.data.sample(row)) + b;
                    if (z >= F::ZERO) == (labels[row] > F::ZERO) {
                        correct += 1;
                    }
                }
            }
            TaskSpec::LeastSquares { .. } => return Ok(None),
            TaskSpec::Mlp { hidden, classes, .. } => {
                let (w1, b1, w2, b2) = (
                    params.layer(0),
                    params.layer(1),
                    params.layer(2),
                    params.layer(3),
                );
                let labels = class_labels(batch.data)?;
                let mut h = vec![F::ZERO; hidden];
                let mut o = vec![F::ZERO; classes];
                for row in batch.rows() {
                    mlp_forward(&w1, &b1, &w2, &b2, batch.data.sample(row), &mut h, &mut o);
                    if argmax(&o) == labels[row] {
                        correct += 1;
                    }
                }
            }
        }
        Ok(Some(correct as f64 / batch.len() as f64))
    }
}

fn planted_params<F: Real>(
    spec: &TaskSpec,
    shapes: &[LayerShape],
    stream: &mut RandomStream,
) -> Result<ModelParams<F>> {
    let mut p = ModelParams::<F>::zeros(shapes)?;
    for (l, shape) in shapes.iter().enumerate() {
        let scale = match (spec, shape) {
            (TaskSpec::Logistic { .. }, _) => 1.0,
            (_, LayerShape::Matrix { cols, .. }) => 1.0 / libm::sqrt(*cols as f64),
            (TaskSpec::Mlp { .. }, LayerShape::Vector { .. }) => 0.1,
            (_, LayerShape::Vector { .. }) => 1.0,
        };
        for x in p.layer_mut(l) {
            *x = F::from_f64(scale * stream.gaussian());
        }
    }
    Ok(p)
}

fn sample_dataset<F: Real>(
    spec: &TaskSpec,
    truth: &ModelParams<F>,
    samples: usize,
    stream: &mut RandomStream,
) -> Dataset<F> {
    let dim = spec.feature_dim();
    let mut features = Vec::with_capacity(samples * dim);
    for _ in 0..samples * dim {
        features.push(F::from_f64(stream.gaussian()));
    }
    let targets = match *spec {
        TaskSpec::Logistic {
            bias, label_noise, ..
        } => {
            let w = truth.layer(0);
            let b = if bias { truth.layer(1)[0] } else { F::ZERO };
            let labels = (0..samples)
                .map(|s| {
                    let z = dot(w, &features[s * dim..(s + 1) * dim]) + b;
                    let clean = if z >= F::ZERO { F::ONE } else { -F::ONE };
                    if stream.uniform() < label_noise {
                        -clean
                    } else {
                        clean
                    }
                })
                .collect();
            Targets::Binary(labels)
        }
        TaskSpec::LeastSquares {
            outputs,
            bias,
            noise_std,
            ..
        } => {
            let w = truth.layer(0);
            let b = if bias { Some(truth.layer(1)) } else { None };
            let mut values = vec![F::ZERO; samples * outputs];
            for s in 0..samples {
                let out = &mut values[s * outputs..(s + 1) * outputs];
                affine(w, b, &features[s * dim..(s + 1) * dim], out);
                if noise_std > 0.0 {
                    for v in out.iter_mut() {
                        *v += F::from_f64(noise_std * stream.gaussian());
                    }
                }
            }
            Targets::Regression {
                dim: outputs,
                values,
            }
        }
        TaskSpec::Mlp { hidden, classes, .. } => {
            let mut h = vec![F::ZERO; hidden];
            let mut o = vec![F::ZERO; classes];
            let labels = (0..samples)
                .map(|s| {
                    mlp_forward(
                        truth.layer(0),
                        truth.layer(1),
                        truth.layer(2),
                        truth.layer(3),
                        &features[s * dim..(s + 1) * dim],
                        &mut h,
                        &mut o,
                    );
                    argmax(&o)
                })
                .collect();
            Targets::Class(labels)
        }
    };
    Dataset {
        feature_dim: dim,
        features,
        targets,
    }
}

fn binary_labels<F: Real>(data: &Dataset<F>) -> Result<&[F]> {
    match &data.targets {
        Targets::Binary(y) => Ok(y),
        _ => Err(Error::InvalidArgument("dataset lacks binary labels".into())),
    }
}

fn regression_targets<F: Real>(data: &Dataset<F>) -> Result<(usize, &[F])> {
    match &data.targets {
        Targets::Regression { dim, values } => Ok((*dim, values)),
        _ => Err(Error::InvalidArgument("dataset lacks regression targets".into())),
    }
}

fn class_labels<F: Real>(data: &Dataset<F>) -> Result<&[usize]> {
    match &data.targets {
        Targets::Class(y) => Ok(y),
        _ => Err(Error::InvalidArgument("dataset lacks class labels".into())),
    }
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// `out = W x + b` for a row-major `W`.
fn affine<F: Real>(w: &[F], b: Option<&[F]>, x: &[F], out: &mut [F]) {
    let cols = x.len();
    for (o, dst) in out.iter_mut().enumerate() {
        let mut acc = dot(&w[o * cols..(o + 1) * cols], x);
        if let Some(b) = b {
            acc += b[o];
        }
        *dst = acc;
    }
}

fn mlp_forward<F: Real>(
    w1: &[F],
    b1: &[F],
    w2: &[F],
    b2: &[F],
    x: &[F],
    h: &mut [F],
    o: &mut [F],
) {
    affine(w1, Some(b1), x, h);
    for v in h.iter_mut() {
        *v = v.tanh();
    }
    affine(w2, Some(b2), h, o);
}

/// `ln(1 + e^x)` without overflow.
fn softplus<F: Real>(x: F) -> F {
    if x > F::ZERO {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::ZERO {
        F::ONE / (F::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::ONE + e)
    }
}

fn log_sum_exp<F: Real>(v: &[F]) -> F {
    let m = v.iter().copied().fold(v[0], F::max);
    m + v.iter().map(|x| (*x - m).exp()).sum::<F>().ln()
}

fn argmax<F: Real>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
