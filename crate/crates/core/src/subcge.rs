//! Shared low-rank subspaces and the coordinate buffer.
//!
//! Every 2D layer `θ_ℓ ∈ ℝ^{n×m}` gets globally shared Gaussian factors
//! `U_ℓ ∈ ℝ^{n×r}` and `V_ℓ ∈ ℝ^{m×r}`. A perturbation picks one canonical
//! coordinate `(i, j)` per layer, so its direction is `U_ℓ e_i e_jᵀ V_ℓᵀ`,
//! and a batch of updates collapses to `U_ℓ (Σ_k v_k E_{i_k j_k}) V_ℓᵀ`.
//!
//! Updates are accumulated into an `r × r` matrix `A_ℓ` per layer; the
//! logical layer value is always `base + U_ℓ A_ℓ V_ℓᵀ`. Accumulating a
//! message costs one scalar update per layer, and the dense `O(r·d)` work is
//! paid once per flush or evaluation regardless of how many messages landed.

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{LayerShape, ModelParams, ParamSource};
use crate::real::Real;
use crate::rng::{RandomStream, Seed};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFactors<F> {
    pub rows: usize,
    pub cols: usize,
    /// `rows × r`, row-major.
    pub u: Vec<F>,
    /// `cols × r`, row-major.
    pub v: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis<F> {
    epoch: u32,
    rank: usize,
    seed: Seed,
    factors: Vec<Option<LayerFactors<F>>>,
}

impl<F: Real> SubspaceBasis<F> {
    /// Draws `U_ℓ` then `V_ℓ` for every 2D layer, in layer order, from a
    /// stream seeded with `seed`.
    pub fn generate(seed: Seed, epoch: u32, shapes: &[LayerShape], rank: usize) -> Result<Self> {
        for (layer, shape) in shapes.iter().enumerate() {
            shape.validate()?;
            if let LayerShape::Matrix { rows, cols } = *shape {
                if rank < 1 || rank > rows.min(cols) {
                    return Err(Error::InvalidRank {
                        rank,
                        layer,
                        rows,
                        cols,
                    });
                }
            }
        }
        if rank < 1 {
            return Err(Error::InvalidRank {
                rank,
                layer: 0,
                rows: 0,
                cols: 0,
            });
        }
        let mut stream = RandomStream::from_seed(seed);
        let factors = shapes
            .iter()
            .map(|shape| match *shape {
                LayerShape::Matrix { rows, cols } => {
                    let mut u = vec![F::ZERO; rows * rank];
                    let mut v = vec![F::ZERO; cols * rank];
                    stream.fill_gaussian(&mut u);
                    stream.fill_gaussian(&mut v);
                    Some(LayerFactors { rows, cols, u, v })
                }
                LayerShape::Vector { .. } => None,
            })
            .collect();
        Ok(SubspaceBasis {
            epoch,
            rank,
            seed,
            factors,
        })
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    pub fn factors(&self, layer: usize) -> Option<&LayerFactors<F>> {
        self.factors.get(layer).and_then(Option::as_ref)
    }

    pub fn num_layers(&self) -> usize {
        self.factors.len()
    }

    pub fn check_epoch(&self, epoch: u32) -> Result<()> {
        if self.epoch == epoch {
            Ok(())
        } else {
            Err(Error::EpochMismatch {
                expected: self.epoch,
                found: epoch,
            })
        }
    }
}

/// Basis for iteration `t`, seeded with `global_seed + t`. Only valid at
/// refresh points (`t mod τ = 0`); the epoch is `t / τ`.
pub fn refresh_basis<F: Real>(
    global_seed: Seed,
    t: u64,
    tau: u64,
    shapes: &[LayerShape],
    rank: usize,
) -> Result<SubspaceBasis<F>> {
    if tau == 0 {
        return Err(Error::InvalidArgument("refresh period must be >= 1".into()));
    }
    if t % tau != 0 {
        return Err(Error::InvalidArgument(format!(
            "basis refresh at t = {t} is not a multiple of tau = {tau}"
        )));
    }
    let epoch = u32::try_from(t / tau)
        .map_err(|_| Error::InvalidArgument(format!("epoch {} overflows u32", t / tau)))?;
    SubspaceBasis::generate(global_seed.offset(t), epoch, shapes, rank)
}

/// One layer of a SubCGE direction.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerDirection<F> {
    /// `U[:, row] V[:, col]ᵀ`.
    Canonical { row: usize, col: usize },
    /// Full Gaussian slice, used for 1D layers.
    Dense(Vec<F>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPerturbation<F> {
    pub epoch: u32,
    pub layers: Vec<LayerDirection<F>>,
}

impl<F: Real> CanonicalPerturbation<F> {
    /// Dense direction vector per layer. Only for checks and small layers.
    pub fn densify(&self, basis: &SubspaceBasis<F>) -> Result<Vec<Vec<F>>> {
        basis.check_epoch(self.epoch)?;
        self.layers
            .iter()
            .enumerate()
            .map(|(l, dir)| match dir {
                LayerDirection::Dense(z) => Ok(z.clone()),
                LayerDirection::Canonical { row, col } => {
                    let f = basis
                        .factors(l)
                        .ok_or_else(|| Error::InvalidShape(format!("layer {l} has no factors")))?;
                    let r = basis.rank();
                    let mut out = vec![F::ZERO; f.rows * f.cols];
                    for a in 0..f.rows {
                        for b in 0..f.cols {
                            out[a * f.cols + b] = f.u[a * r + row] * f.v[b * r + col];
                        }
                    }
                    Ok(out)
                }
            })
            .collect()
    }
}

/// Draws one direction from `stream`: a coordinate pair `(i_ℓ, j_ℓ)` for
/// each 2D layer and a Gaussian slice for each 1D layer, in layer order.
pub fn sample_canonical_perturbation<F: Real>(
    stream: &mut RandomStream,
    basis: &SubspaceBasis<F>,
    shapes: &[LayerShape],
) -> Result<CanonicalPerturbation<F>> {
    if shapes.len() != basis.num_layers() {
        return Err(Error::InvalidShape(format!(
            "{} layers but basis covers {}",
            shapes.len(),
            basis.num_layers()
        )));
    }
    let r = basis.rank();
    let layers = shapes
        .iter()
        .map(|shape| match *shape {
            LayerShape::Matrix { .. } => {
                let row = stream.index_unchecked(r);
                let col = stream.index_unchecked(r);
                LayerDirection::Canonical { row, col }
            }
            LayerShape::Vector { len } => {
                let mut z = vec![F::ZERO; len];
                stream.fill_gaussian(&mut z);
                LayerDirection::Dense(z)
            }
        })
        .collect();
    Ok(CanonicalPerturbation {
        epoch: basis.epoch(),
        layers,
    })
}

/// Scalar multiply-add counts for update application.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplyCounters {
    /// O(1) coordinate writes into `A_ℓ`.
    pub coordinate_updates: u64,
    /// Dense work folding `U A Vᵀ` into weights (flush or evaluation).
    pub flush_madds: u64,
    /// Dense per-message work: 1D layers, or rank-1 application in the naive path.
    pub dense_madds: u64,
}

impl ApplyCounters {
    pub fn total(&self) -> u64 {
        self.coordinate_updates + self.flush_madds + self.dense_madds
    }

    pub fn merge(&mut self, other: &ApplyCounters) {
        self.coordinate_updates += other.coordinate_updates;
        self.flush_madds += other.flush_madds;
        self.dense_madds += other.dense_madds;
    }
}

/// Per-layer `r × r` accumulators `A_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordBuffer<F> {
    rank: usize,
    coords: Vec<Option<Vec<F>>>,
    dirty: Vec<bool>,
    pub counters: ApplyCounters,
}

impl<F: Real> CoordBuffer<F> {
    pub fn new(shapes: &[LayerShape], rank: usize) -> Self {
        CoordBuffer {
            rank,
            coords: shapes
                .iter()
                .map(|s| s.is_matrix().then(|| vec![F::ZERO; rank * rank]))
                .collect(),
            dirty: vec![false; shapes.len()],
            counters: ApplyCounters::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty.iter().any(|d| *d)
    }

    pub fn layer_dirty(&self, layer: usize) -> bool {
        self.dirty[layer]
    }

    pub fn coords(&self, layer: usize) -> Option<&[F]> {
        self.coords.get(layer).and_then(|c| c.as_deref())
    }

    pub fn get(&self, layer: usize, row: usize, col: usize) -> Result<F> {
        let r = self.rank;
        let a = self.layer_coords(layer, row, col)?;
        Ok(a[row * r + col])
    }

    pub fn set(&mut self, layer: usize, row: usize, col: usize, value: F) -> Result<()> {
        let r = self.rank;
        let a = self.layer_coords_mut(layer, row, col)?;
        a[row * r + col] = value;
        self.dirty[layer] = true;
        Ok(())
    }

    fn layer_coords(&self, layer: usize, row: usize, col: usize) -> Result<&[F]> {
        if row >= self.rank || col >= self.rank {
            return Err(Error::CorruptedMessage(format!(
                "coordinate ({row}, {col}) outside rank {}",
                self.rank
            )));
        }
        self.coords
            .get(layer)
            .and_then(|c| c.as_deref())
            .ok_or_else(|| Error::CorruptedMessage(format!("layer {layer} has no coordinate buffer")))
    }

    fn layer_coords_mut(&mut self, layer: usize, row: usize, col: usize) -> Result<&mut [F]> {
        let rank = self.rank;
        if row >= rank || col >= rank {
            return Err(Error::CorruptedMessage(format!(
                "coordinate ({row}, {col}) outside rank {rank}"
            )));
        }
        self.coords
            .get_mut(layer)
            .and_then(|c| c.as_deref_mut())
            .ok_or_else(|| Error::CorruptedMessage(format!("layer {layer} has no coordinate buffer")))
    }

    /// `A_ℓ[i, j] −= v` for one update on one layer.
    pub fn accumulate_one(&mut self, layer: usize, row: usize, col: usize, coefficient: F) -> Result<()> {
        let r = self.rank;
        let a = self.layer_coords_mut(layer, row, col)?;
        a[row * r + col] -= coefficient;
        self.dirty[layer] = true;
        self.counters.coordinate_updates += 1;
        Ok(())
    }

    /// Applies each `(v_k, coordinates_k)` in the order given. Callers that
    /// need bit-identical buffers across clients must pass a canonical order.
    /// Coordinates are validated before anything is written.
    pub fn accumulate(&mut self, updates: &[(F, &[Option<(usize, usize)>])]) -> Result<()> {
        for (_, coords) in updates {
            if coords.len() != self.coords.len() {
                return Err(Error::CorruptedMessage(format!(
                    "update covers {} layers, model has {}",
                    coords.len(),
                    self.coords.len()
                )));
            }
            for (layer, c) in coords.iter().enumerate() {
                if let Some((row, col)) = *c {
                    self.layer_coords(layer, row, col)?;
                }
            }
        }
        for (v, coords) in updates {
            for (layer, c) in coords.iter().enumerate() {
                if let Some((row, col)) = *c {
                    self.accumulate_one(layer, row, col, *v)?;
                }
            }
        }
        Ok(())
    }

    /// Folds `U A Vᵀ` into `params` for every dirty layer and zeroes `A`.
    pub fn flush(&mut self, params: &mut ModelParams<F>, basis: &SubspaceBasis<F>) -> Result<()> {
        if basis.rank() != self.rank {
            return Err(Error::InvalidArgument(format!(
                "basis rank {} != buffer rank {}",
                basis.rank(),
                self.rank
            )));
        }
        for layer in 0..self.coords.len() {
            if !self.dirty[layer] {
                continue;
            }
            if let (Some(a), Some(f)) = (self.coords[layer].as_mut(), basis.factors(layer)) {
                let madds = add_low_rank(params.layer_mut(layer), a, f, self.rank);
                self.counters.flush_madds += madds;
                a.iter_mut().for_each(|x| *x = F::ZERO);
            }
            self.dirty[layer] = false;
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        for a in self.coords.iter_mut().flatten() {
            a.iter_mut().for_each(|x| *x = F::ZERO);
        }
        self.dirty.iter_mut().for_each(|d| *d = false);
    }
}

/// `dst += U A Vᵀ`, computed as `T = U A` then `dst[a][b] += Σ_k T[a][k] V[b][k]`.
/// Returns the multiply-add count.
fn add_low_rank<F: Real>(dst: &mut [F], a: &[F], f: &LayerFactors<F>, r: usize) -> u64 {
    let mut t = vec![F::ZERO; f.rows * r];
    for row in 0..f.rows {
        let u_row = &f.u[row * r..(row + 1) * r];
        for k in 0..r {
            let mut acc = F::ZERO;
            for (p, u) in u_row.iter().enumerate() {
                acc += *u * a[p * r + k];
            }
            t[row * r + k] = acc;
        }
    }
    for row in 0..f.rows {
        let t_row = &t[row * r..(row + 1) * r];
        for col in 0..f.cols {
            let v_row = &f.v[col * r..(col + 1) * r];
            let mut acc = F::ZERO;
            for k in 0..r {
                acc += t_row[k] * v_row[k];
            }
            dst[row * f.cols + col] += acc;
        }
    }
    (f.rows * r * r + f.rows * f.cols * r) as u64
}

/// `params_ℓ −= v · U[:, row] V[:, col]ᵀ` directly on dense weights. This is
/// the per-message path the buffer replaces; it is also how messages from
/// an archived basis are applied after an epoch change.
pub fn apply_rank1_dense<F: Real>(
    params: &mut ModelParams<F>,
    basis: &SubspaceBasis<F>,
    layer: usize,
    row: usize,
    col: usize,
    coefficient: F,
    counters: &mut ApplyCounters,
) -> Result<()> {
    let r = basis.rank();
    if row >= r || col >= r {
        return Err(Error::CorruptedMessage(format!(
            "coordinate ({row}, {col}) outside rank {r}"
        )));
    }
    let f = basis
        .factors(layer)
        .ok_or_else(|| Error::CorruptedMessage(format!("layer {layer} is not a matrix")))?;
    let w = params.layer_mut(layer);
    for a in 0..f.rows {
        let ua = coefficient * f.u[a * r + row];
        for b in 0..f.cols {
            w[a * f.cols + b] -= ua * f.v[b * r + col];
        }
    }
    counters.dense_madds += (f.rows * f.cols) as u64;
    Ok(())
}

/// A client's weights in buffered form: `base + U A Vᵀ` per 2D layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferedModel<F> {
    pub base: ModelParams<F>,
    pub buffer: CoordBuffer<F>,
}

impl<F: Real> BufferedModel<F> {
    pub fn new(base: ModelParams<F>, rank: usize) -> Self {
        let buffer = CoordBuffer::new(base.shapes(), rank);
        BufferedModel { base, buffer }
    }

    pub fn view<'a>(&'a self, basis: &'a SubspaceBasis<F>) -> BufferedView<'a, F> {
        BufferedView {
            model: self,
            basis: Some(basis),
        }
    }

    /// View without a basis. Panics on access to a layer whose buffer is
    /// dirty, since its logical value cannot be formed.
    pub fn view_unbuffered(&self) -> BufferedView<'_, F> {
        BufferedView {
            model: self,
            basis: None,
        }
    }

    pub fn view_opt<'a>(&'a self, basis: Option<&'a SubspaceBasis<F>>) -> BufferedView<'a, F> {
        BufferedView { model: self, basis }
    }

    pub fn flush(&mut self, basis: &SubspaceBasis<F>) -> Result<()> {
        self.buffer.flush(&mut self.base, basis)
    }

    /// Materialized logical parameters.
    pub fn logical(&self, basis: &SubspaceBasis<F>) -> ModelParams<F> {
        let view = self.view(basis);
        let layers = (0..self.base.num_layers())
            .map(|l| view.layer(l).into_owned())
            .collect();
        ModelParams::from_layers(self.base.shapes(), layers).expect("shapes are preserved")
    }

    /// Bitwise equality of base weights and buffers.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.base.bit_eq(&other.base)
            && self.buffer.coords.len() == other.buffer.coords.len()
            && self
                .buffer
                .coords
                .iter()
                .zip(&other.buffer.coords)
                .all(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x.bits() == y.bits()),
                    (None, None) => true,
                    _ => false,
                })
    }
}

/// Evaluation view: dirty 2D layers are materialized on access.
pub struct BufferedView<'a, F> {
    model: &'a BufferedModel<F>,
    basis: Option<&'a SubspaceBasis<F>>,
}

impl<F: Real> ParamSource<F> for BufferedView<'_, F> {
    fn shapes(&self) -> &[LayerShape] {
        self.model.base.shapes()
    }

    fn layer(&self, index: usize) -> Cow<'_, [F]> {
        let base = self.model.base.layer(index);
        if !self.model.buffer.layer_dirty(index) {
            return Cow::Borrowed(base);
        }
        let basis = self
            .basis
            .expect("dirty coordinate buffer evaluated without a subspace basis");
        match (self.model.buffer.coords(index), basis.factors(index)) {
            (Some(a), Some(f)) => {
                let mut out = base.to_vec();
                add_low_rank(&mut out, a, f, self.model.buffer.rank());
                Cow::Owned(out)
            }
            _ => Cow::Borrowed(base),
        }
    }
}

/// Measured multiply-add counts for applying `n_updates` random messages
/// through the buffer (accumulate + one flush) and through the naive dense
/// rank-1 path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApplyCostReport {
    pub n_updates: usize,
    pub dim: usize,
    pub buffered: ApplyCounters,
    pub naive: ApplyCounters,
}

pub fn count_apply_ops(
    n_updates: usize,
    rank: usize,
    shapes: &[LayerShape],
    seed: Seed,
) -> Result<ApplyCostReport> {
    let basis = SubspaceBasis::<f64>::generate(seed, 0, shapes, rank)?;
    let mut stream = RandomStream::from_seed(seed.offset(1));
    let mut buffered = BufferedModel::new(ModelParams::zeros(shapes)?, rank);
    let mut naive = ModelParams::<f64>::zeros(shapes)?;
    let mut naive_counters = ApplyCounters::default();
    for _ in 0..n_updates {
        let v = stream.gaussian() * 1e-3;
        let dir = sample_canonical_perturbation(&mut stream, &basis, shapes)?;
        for (layer, d) in dir.layers.iter().enumerate() {
            match d {
                LayerDirection::Canonical { row, col } => {
                    buffered.buffer.accumulate_one(layer, *row, *col, v)?;
                    apply_rank1_dense(&mut naive, &basis, layer, *row, *col, v, &mut naive_counters)?;
                }
                LayerDirection::Dense(z) => {
                    for (w, zk) in buffered.base.layer_mut(layer).iter_mut().zip(z) {
                        *w -= v * zk;
                    }
                    buffered.buffer.counters.dense_madds += z.len() as u64;
                    for (w, zk) in naive.layer_mut(layer).iter_mut().zip(z) {
                        *w -= v * zk;
                    }
                    naive_counters.dense_madds += z.len() as u64;
                }
            }
        }
    }
    buffered.flush(&basis)?;
    Ok(ApplyCostReport {
        n_updates,
        dim: shapes.iter().map(LayerShape::len).sum(),
        buffered: buffered.buffer.counters,
        naive: naive_counters,
    })
}
