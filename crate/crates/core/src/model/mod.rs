//! Layered parameter containers and the synthetic training tasks.

mod task;

pub use task::{
    Batch, Dataset, RemainderPolicy, Targets, Task, TaskConfig, TaskKind, TaskSpec,
};

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerShape {
    /// Row-major `rows × cols` weight matrix.
    Matrix { rows: usize, cols: usize },
    Vector { len: usize },
}

impl LayerShape {
    pub fn len(&self) -> usize {
        match *self {
            LayerShape::Matrix { rows, cols } => rows * cols,
            LayerShape::Vector { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self, LayerShape::Matrix { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerShape::Matrix { rows, cols } => {
                rows >= 1 && cols >= 1 && rows.checked_mul(cols).is_some()
            }
            LayerShape::Vector { len } => len >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidShape(format!("{self:?}")))
        }
    }
}

/// Read access to the effective value of every layer.
///
/// Plain [`ModelParams`] borrow their storage; buffered models materialize
/// `base + U A Vᵀ` for layers whose coordinate buffer is non-zero.
pub trait ParamSource<F: Real> {
    fn shapes(&self) -> &[LayerShape];
    fn layer(&self, index: usize) -> Cow<'_, [F]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    shapes: Vec<LayerShape>,
    layers: Vec<Vec<F>>,
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(shapes: &[LayerShape]) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::InvalidShape("model has no layers".into()));
        }
        for s in shapes {
            s.validate()?;
        }
        Ok(ModelParams {
            shapes: shapes.to_vec(),
            layers: shapes.iter().map(|s| vec![F::ZERO; s.len()]).collect(),
        })
    }

    pub fn from_layers(shapes: &[LayerShape], layers: Vec<Vec<F>>) -> Result<Self> {
        let mut p = Self::zeros(shapes)?;
        if layers.len() != shapes.len() {
            return Err(Error::InvalidShape(format!(
                "{} layers given for {} shapes",
                layers.len(),
                shapes.len()
            )));
        }
        for (i, (layer, shape)) in layers.iter().zip(shapes).enumerate() {
            if layer.len() != shape.len() {
                return Err(Error::InvalidShape(format!(
                    "layer {i} has {} entries, shape {shape:?} needs {}",
                    layer.len(),
                    shape.len()
                )));
            }
        }
        p.layers = layers;
        Ok(p)
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn from_flat(shapes: &[LayerShape], flat: &[F]) -> Result<Self> {
        let mut p = Self::zeros(shapes)?;
        if flat.len() != p.dim() {
            return Err(Error::InvalidShape(format!(
                "flat vector of length {} for a model of dimension {}",
                flat.len(),
                p.dim()
            )));
        }
        let mut rest = flat;
        for layer in &mut p.layers {
            let (head, tail) = rest.split_at(layer.len());
            layer.copy_from_slice(head);
            rest = tail;
        }
        Ok(p)
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total dimension `d`.
    pub fn dim(&self) -> usize {
        self.shapes.iter().map(LayerShape::len).sum()
    }

    pub fn layer(&self, index: usize) -> &[F] {
        &self.layers[index]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut [F] {
        &mut self.layers[index]
    }

    pub fn layers(&self) -> &[Vec<F>] {
        &self.layers
    }

    pub fn iter(&self) -> impl Iterator<Item = &F> + '_ {
        self.layers.iter().flatten()
    }

    pub fn to_flat(&self) -> Vec<F> {
        self.iter().copied().collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shapes == other.shapes
    }

    pub fn check_shapes(&self, shapes: &[LayerShape]) -> Result<()> {
        if self.shapes.as_slice() == shapes {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "parameter shapes {:?} do not match {:?}",
                self.shapes, shapes
            )))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: F, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * *s;
            }
        }
    }

    pub fn scale(&mut self, a: F) {
        for x in self.layers.iter_mut().flatten() {
            *x *= a;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (*a - *b).abs().to_f64())
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.iter().map(|x| x.to_f64() * x.to_f64()).sum::<f64>())
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.same_shape(other) && self.iter().zip(other.iter()).all(|(a, b)| a.bits() == b.bits())
    }

    /// Average of several models computed as `m₀ + (1/n) Σ (mᵢ − m₀)`, which is
    /// bit-exactly `m₀` whenever all models are equal.
    pub fn mean_of(models: &[&Self]) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero models".into()))?;
        if models.iter().any(|m| !m.same_shape(first)) {
            return Err(Error::InvalidArgument("models differ in shape".into()));
        }
        let inv = F::ONE / F::from_f64(models.len() as f64);
        let mut out = (*first).clone();
        for (l, dst) in out.layers.iter_mut().enumerate() {
            for (k, d) in dst.iter_mut().enumerate() {
                let base = first.layers[l][k];
                let dev: F = models.iter().map(|m| m.layers[l][k] - base).sum();
                *d = base + dev * inv;
            }
        }
        Ok(out)
    }
}

impl<F: Real> ParamSource<F> for ModelParams<F> {
    fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    fn layer(&self, index: usize) -> Cow<'_, [F]> {
        Cow::Borrowed(&self.layers[index])
    }
}
