//! Two-point zeroth-order estimation with seed replay.
//!
//! A perturbation is never stored: it is rebuilt from its seed each time it
//! is applied. Perturbed evaluations write `saved + k·ε·z` for the current
//! net offset `k`, so undoing a perturbation restores the saved values bit
//! for bit instead of relying on `(x + εz) − εz == x`, which floating point
//! does not guarantee. SubCGE perturbations only touch one `A_ℓ` entry per
//! 2D layer, so the saved state there is a handful of scalars.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{LayerShape, Task};
use crate::real::Real;
use crate::rng::{RandomStream, Seed};
use crate::subcge::{
    sample_canonical_perturbation, ApplyCounters, BufferedModel, BufferedView, LayerDirection,
    SubspaceBasis,
};

/// Default perturbation scale ε.
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbationKind {
    /// `z ~ N(0, I_d)` over every layer.
    FullGaussian,
    /// Canonical subspace coordinates on 2D layers, Gaussian on 1D layers.
    SubCge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub seed: Seed,
    pub kind: PerturbationKind,
    /// Subspace epoch the coordinates refer to; ignored for full Gaussian.
    pub epoch: u32,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
    /// Back to the unperturbed parameters.
    Reset,
}

/// Directional coefficient of one local step, ready for dissemination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoUpdate {
    pub origin: u32,
    pub iteration: u32,
    pub epoch: u32,
    pub seed: Seed,
    pub kind: PerturbationKind,
    /// `(f(θ+εz) − f(θ−εz)) / 2ε`.
    pub alpha: f64,
    /// Prefolded descent coefficient `v = η·α/n`; receivers apply `θ −= v·z`.
    pub coefficient: f64,
}

/// Per-layer direction of a perturbation, rebuilt from its seed.
pub(crate) enum Walk<F> {
    Gaussian(RandomStream),
    Canonical(Vec<LayerDirection<F>>),
}

pub(crate) fn walk<F: Real>(
    seed: Seed,
    kind: PerturbationKind,
    epoch: u32,
    shapes: &[LayerShape],
    basis: Option<&SubspaceBasis<F>>,
) -> Result<Walk<F>> {
    let mut stream = RandomStream::from_seed(seed);
    match kind {
        PerturbationKind::FullGaussian => Ok(Walk::Gaussian(stream)),
        PerturbationKind::SubCge => {
            let basis = basis.ok_or_else(|| {
                Error::InvalidArgument("SubCGE perturbation needs a subspace basis".into())
            })?;
            basis.check_epoch(epoch)?;
            Ok(Walk::Canonical(
                sample_canonical_perturbation(&mut stream, basis, shapes)?.layers,
            ))
        }
    }
}

enum Saved<F> {
    Dense(Vec<F>),
    Coordinate { row: usize, col: usize, value: F },
}

/// An in-progress perturbation of a model. Dropping the guard restores the
/// parameters.
pub struct PerturbGuard<'a, F: Real> {
    model: &'a mut BufferedModel<F>,
    basis: Option<&'a SubspaceBasis<F>>,
    pert: Perturbation,
    offset: i32,
    saved: Vec<Saved<F>>,
    pub madds: u64,
}

impl<'a, F: Real> PerturbGuard<'a, F> {
    pub fn new(
        model: &'a mut BufferedModel<F>,
        basis: Option<&'a SubspaceBasis<F>>,
        pert: Perturbation,
    ) -> Result<Self> {
        if !(pert.scale > 0.0) || !pert.scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "perturbation scale {} must be positive",
                pert.scale
            )));
        }
        let shapes = model.base.shapes().to_vec();
        let saved = match walk(pert.seed, pert.kind, pert.epoch, &shapes, basis)? {
            Walk::Gaussian(_) => (0..shapes.len())
                .map(|l| Saved::Dense(model.base.layer(l).to_vec()))
                .collect(),
            Walk::Canonical(dirs) => dirs
                .iter()
                .enumerate()
                .map(|(l, d)| match d {
                    LayerDirection::Canonical { row, col } => Ok(Saved::Coordinate {
                        row: *row,
                        col: *col,
                        value: model.buffer.get(l, *row, *col)?,
                    }),
                    LayerDirection::Dense(_) => Ok(Saved::Dense(model.base.layer(l).to_vec())),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(PerturbGuard {
            model,
            basis,
            pert,
            offset: 0,
            saved,
            madds: 0,
        })
    }

    /// Net number of `+εz` steps currently applied.
    pub fn offset(&self) -> i32 {
        self.offset
    }

    pub fn view(&self) -> BufferedView<'_, F> {
        self.model.view_opt(self.basis)
    }

    /// Moves by `+εz`, `−εz`, or back to the start.
    pub fn perturb(&mut self, sign: Sign) -> Result<()> {
        self.offset = match sign {
            Sign::Plus => self.offset + 1,
            Sign::Minus => self.offset - 1,
            Sign::Reset => 0,
        };
        self.write()
    }

    fn write(&mut self) -> Result<()> {
        if self.offset == 0 {
            self.restore();
            return Ok(());
        }
        let step = F::from_f64(self.offset as f64 * self.pert.scale);
        let shapes = self.model.base.shapes().to_vec();
        match walk(self.pert.seed, self.pert.kind, self.pert.epoch, &shapes, self.basis)? {
            Walk::Gaussian(mut stream) => {
                for (l, saved) in self.saved.iter().enumerate() {
                    if let Saved::Dense(orig) = saved {
                        for (x, o) in self.model.base.layer_mut(l).iter_mut().zip(orig) {
                            *x = *o + step * F::from_f64(stream.gaussian());
                        }
                        self.madds += orig.len() as u64;
                    }
                }
            }
            Walk::Canonical(dirs) => {
                for (l, (dir, saved)) in dirs.iter().zip(&self.saved).enumerate() {
                    match (dir, saved) {
                        (LayerDirection::Dense(z), Saved::Dense(orig)) => {
                            for ((x, o), zk) in
                                self.model.base.layer_mut(l).iter_mut().zip(orig).zip(z)
                            {
                                *x = *o + step * *zk;
                            }
                            self.madds += z.len() as u64;
                        }
                        (LayerDirection::Canonical { .. }, Saved::Coordinate { row, col, value }) => {
                            self.model.buffer.set(l, *row, *col, *value + step)?;
                            self.madds += 1;
                        }
                        _ => unreachable!("saved state follows the same walk"),
                    }
                }
            }
        }
        Ok(())
    }

    fn restore(&mut self) {
        for (l, saved) in self.saved.iter().enumerate() {
            match saved {
                Saved::Dense(orig) => self.model.base.layer_mut(l).copy_from_slice(orig),
                Saved::Coordinate { row, col, value } => {
                    // Coordinates were validated when the guard was built.
                    let _ = self.model.buffer.set(l, *row, *col, *value);
                }
            }
        }
    }
}

impl<F: Real> Drop for PerturbGuard<'_, F> {
    fn drop(&mut self) {
        if self.offset != 0 {
            self.offset = 0;
            self.restore();
        }
    }
}

/// Applies one signed step of `pert` and leaves it in place. Pairs of calls
/// with the same guard compose; see [`PerturbGuard`] for bit-exact undo.
pub fn perturb_in_place<F: Real>(guard: &mut PerturbGuard<'_, F>, sign: Sign) -> Result<()> {
    guard.perturb(sign)
}

/// `(f(θ+εz) − f(θ−εz)) / 2ε` for an arbitrary loss closure. The model is
/// restored bit-exactly before returning, including on error.
pub fn two_point_alpha_with<F, L>(
    model: &mut BufferedModel<F>,
    basis: Option<&SubspaceBasis<F>>,
    pert: Perturbation,
    mut loss: L,
) -> Result<(f64, u64)>
where
    F: Real,
    L: FnMut(&BufferedView<'_, F>) -> Result<F>,
{
    let mut guard = PerturbGuard::new(model, basis, pert)?;
    guard.perturb(Sign::Plus)?;
    let plus = loss(&guard.view())?;
    guard.perturb(Sign::Minus)?;
    guard.perturb(Sign::Minus)?;
    let minus = loss(&guard.view())?;
    guard.perturb(Sign::Reset)?;
    let alpha = (plus.to_f64() - minus.to_f64()) / (2.0 * pert.scale);
    if !alpha.is_finite() {
        return Err(Error::NumericOverflow(format!("directional coefficient {alpha}")));
    }
    Ok((alpha, guard.madds))
}

pub fn two_point_alpha<F: Real>(
    task: &Task<F>,
    model: &mut BufferedModel<F>,
    basis: Option<&SubspaceBasis<F>>,
    batch: &[usize],
    pert: Perturbation,
) -> Result<f64> {
    two_point_alpha_with(model, basis, pert, |view| task.loss(view, task.train.batch(batch)))
        .map(|(a, _)| a)
}

/// Applies `θ −= v·z` for the direction addressed by `(seed, kind, epoch)`.
pub fn apply_update<F: Real>(
    model: &mut BufferedModel<F>,
    basis: Option<&SubspaceBasis<F>>,
    seed: Seed,
    kind: PerturbationKind,
    epoch: u32,
    coefficient: f64,
) -> Result<()> {
    let v = F::from_f64(coefficient);
    let shapes = model.base.shapes().to_vec();
    match walk(seed, kind, epoch, &shapes, basis)? {
        Walk::Gaussian(mut stream) => {
            for l in 0..shapes.len() {
                let layer = model.base.layer_mut(l);
                for x in layer.iter_mut() {
                    *x -= v * F::from_f64(stream.gaussian());
                }
                model.buffer.counters.dense_madds += layer.len() as u64;
            }
        }
        Walk::Canonical(dirs) => {
            for (l, dir) in dirs.iter().enumerate() {
                match dir {
                    LayerDirection::Canonical { row, col } => {
                        model.buffer.accumulate_one(l, *row, *col, v)?
                    }
                    LayerDirection::Dense(z) => {
                        for (x, zk) in model.base.layer_mut(l).iter_mut().zip(z) {
                            *x -= v * *zk;
                        }
                        model.buffer.counters.dense_madds += z.len() as u64;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Applies a SubCGE update from an older epoch directly to the base weights
/// using that epoch's basis (no buffer involvement).
pub fn apply_update_dense<F: Real>(
    model: &mut BufferedModel<F>,
    basis: &SubspaceBasis<F>,
    seed: Seed,
    epoch: u32,
    coefficient: f64,
) -> Result<()> {
    let v = F::from_f64(coefficient);
    let shapes = model.base.shapes().to_vec();
    let Walk::Canonical(dirs) = walk(seed, PerturbationKind::SubCge, epoch, &shapes, Some(basis))?
    else {
        unreachable!()
    };
    let mut counters = ApplyCounters::default();
    for (l, dir) in dirs.iter().enumerate() {
        match dir {
            LayerDirection::Canonical { row, col } => crate::subcge::apply_rank1_dense(
                &mut model.base,
                basis,
                l,
                *row,
                *col,
                v,
                &mut counters,
            )?,
            LayerDirection::Dense(z) => {
                for (x, zk) in model.base.layer_mut(l).iter_mut().zip(z) {
                    *x -= v * *zk;
                }
                counters.dense_madds += z.len() as u64;
            }
        }
    }
    model.buffer.counters.merge(&counters);
    Ok(())
}

/// Settings for one local step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub kind: PerturbationKind,
    pub epsilon: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Number of clients `n`; the coefficient is divided by it.
    pub n_clients: usize,
}

/// With-replacement minibatch from a shard, drawn from the client stream.
pub fn sample_batch(stream: &mut RandomStream, shard: &[usize], batch_size: usize) -> Result<Vec<usize>> {
    if shard.is_empty() {
        return Err(Error::InvalidArgument("empty data shard".into()));
    }
    (0..batch_size)
        .map(|_| Ok(shard[stream.uniform_index(shard.len())?]))
        .collect()
}

/// Samples a batch and a fresh seed from `stream`, then estimates the
/// directional coefficient. Does not modify the model.
#[allow(clippy::too_many_arguments)]
pub fn estimate_update<F: Real>(
    task: &Task<F>,
    model: &mut BufferedModel<F>,
    basis: Option<&SubspaceBasis<F>>,
    stream: &mut RandomStream,
    shard: &[usize],
    settings: &StepSettings,
    origin: u32,
    iteration: u32,
) -> Result<(ZoUpdate, u64)> {
    let batch = sample_batch(stream, shard, settings.batch_size)?;
    let seed = stream.next_seed();
    let epoch = match settings.kind {
        PerturbationKind::SubCge => basis.map_or(0, SubspaceBasis::epoch),
        PerturbationKind::FullGaussian => 0,
    };
    let pert = Perturbation {
        seed,
        kind: settings.kind,
        epoch,
        scale: settings.epsilon,
    };
    let (alpha, madds) = two_point_alpha_with(model, basis, pert, |view| {
        task.loss(view, task.train.batch(&batch))
    })?;
    let coefficient = settings.learning_rate * alpha / settings.n_clients as f64;
    Ok((
        ZoUpdate {
            origin,
            iteration,
            epoch,
            seed,
            kind: settings.kind,
            alpha,
            coefficient,
        },
        madds,
    ))
}

/// One full local step: estimate, then apply the own update `θ −= (η α / n) z`.
#[allow(clippy::too_many_arguments)]
pub fn local_zo_step<F: Real>(
    task: &Task<F>,
    model: &mut BufferedModel<F>,
    basis: Option<&SubspaceBasis<F>>,
    stream: &mut RandomStream,
    shard: &[usize],
    settings: &StepSettings,
    origin: u32,
    iteration: u32,
) -> Result<ZoUpdate> {
    let (update, _) =
        estimate_update(task, model, basis, stream, shard, settings, origin, iteration)?;
    apply_update(
        model,
        basis,
        update.seed,
        update.kind,
        update.epoch,
        update.coefficient,
    )?;
    Ok(update)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, ParamSource, TaskConfig};

    fn shapes() -> Vec<LayerShape> {
        alloc::vec![
            LayerShape::Matrix { rows: 4, cols: 4 },
            LayerShape::Vector { len: 3 },
        ]
    }

    fn model(seed: u64) -> BufferedModel<f64> {
        let mut p = ModelParams::zeros(&shapes()).unwrap();
        let mut s = RandomStream::from_seed(Seed(seed));
        for l in 0..2 {
            s.fill_gaussian(p.layer_mut(l));
        }
        BufferedModel::new(p, 2)
    }

    #[test]
    fn plus_then_minus_is_bit_exact() {
        let basis = SubspaceBasis::generate(Seed(1), 0, &shapes(), 2).unwrap();
        for kind in [PerturbationKind::FullGaussian, PerturbationKind::SubCge] {
            let mut m = model(4);
            m.buffer.accumulate_one(0, 1, 1, 0.125).unwrap();
            let start = m.clone();
            let pert = Perturbation {
                seed: Seed(77),
                kind,
                epoch: 0,
                scale: 1e-3,
            };
            {
                let mut g = PerturbGuard::new(&mut m, Some(&basis), pert).unwrap();
                g.perturb(Sign::Plus).unwrap();
                g.perturb(Sign::Minus).unwrap();
            }
            assert!(m.bit_eq(&start));
            {
                let mut g = PerturbGuard::new(&mut m, Some(&basis), pert).unwrap();
                g.perturb(Sign::Plus).unwrap();
                g.perturb(Sign::Minus).unwrap();
                g.perturb(Sign::Minus).unwrap();
                g.perturb(Sign::Reset).unwrap();
            }
            assert!(m.bit_eq(&start));
        }
    }

    #[test]
    fn full_gaussian_displacement_norm() {
        let s = [LayerShape::Vector { len: 10 }];
        let mut m = BufferedModel::new(ModelParams::<f64>::zeros(&s).unwrap(), 1);
        let pert = Perturbation {
            seed: Seed(5),
            kind: PerturbationKind::FullGaussian,
            epoch: 0,
            scale: 1e-3,
        };
        let z = RandomStream::from_seed(Seed(5)).gaussian_tensor(&[10]).unwrap();
        let znorm = libm::sqrt(z.iter().map(|x| x * x).sum::<f64>());
        let mut g = PerturbGuard::new(&mut m, None, pert).unwrap();
        g.perturb(Sign::Plus).unwrap();
        let moved = g.view().layer(0).into_owned();
        let norm = libm::sqrt(moved.iter().map(|x| x * x).sum::<f64>());
        assert!((norm - 1e-3 * znorm).abs() < 1e-15);
    }

    #[test]
    fn quadratic_is_exact() {
        let basis = SubspaceBasis::generate(Seed(1), 0, &shapes(), 2).unwrap();
        for kind in [PerturbationKind::FullGaussian, PerturbationKind::SubCge] {
            let mut m = model(9);
            let theta = m.logical(&basis);
            let pert = Perturbation {
                seed: Seed(31),
                kind,
                epoch: 0,
                scale: 1e-3,
            };
            let z: Vec<f64> = match kind {
                PerturbationKind::FullGaussian => {
                    RandomStream::from_seed(Seed(31)).gaussian_tensor(&[19]).unwrap()
                }
                PerturbationKind::SubCge => {
                    let mut st = RandomStream::from_seed(Seed(31));
                    sample_canonical_perturbation(&mut st, &basis, &shapes())
                        .unwrap()
                        .densify(&basis)
                        .unwrap()
                        .concat()
                }
            };
            let expected: f64 = theta.iter().zip(&z).map(|(a, b)| a * b).sum();
            let (alpha, _) = two_point_alpha_with(&mut m, Some(&basis), pert, |v| {
                Ok((0..2)
                    .map(|l| v.layer(l).iter().map(|x| 0.5 * x * x).sum::<f64>())
                    .sum())
            })
            .unwrap();
            assert!((alpha - expected).abs() <= 1e-10, "{kind:?}: {alpha} vs {expected}");
        }
    }

    #[test]
    fn ignored_layer_gives_zero_alpha() {
        let basis = SubspaceBasis::generate(Seed(1), 0, &shapes(), 2).unwrap();
        let mut m = model(2);
        let pert = Perturbation {
            seed: Seed(3),
            kind: PerturbationKind::SubCge,
            epoch: 0,
            scale: 1e-3,
        };
        // Loss only reads the 1D layer, perturbation also moves the matrix.
        let (alpha, _) = two_point_alpha_with(&mut m, Some(&basis), pert, |v| {
            Ok(v.layer(0).iter().sum::<f64>() * 0.0 + 1.0)
        })
        .unwrap();
        assert_eq!(alpha, 0.0);
    }

    #[test]
    fn non_finite_loss_restores_params() {
        let basis = SubspaceBasis::generate(Seed(1), 0, &shapes(), 2).unwrap();
        let mut m = model(2);
        let start = m.clone();
        let pert = Perturbation {
            seed: Seed(3),
            kind: PerturbationKind::FullGaussian,
            epoch: 0,
            scale: 1e-3,
        };
        let mut calls = 0;
        let r = two_point_alpha_with(&mut m, Some(&basis), pert, |_| {
            calls += 1;
            if calls == 2 {
                Err(Error::NumericOverflow("boom".into()))
            } else {
                Ok(1.0)
            }
        });
        assert!(matches!(r, Err(Error::NumericOverflow(_))));
        assert!(m.bit_eq(&start));
    }

    #[test]
    fn stale_epoch_rejected() {
        let basis = SubspaceBasis::generate(Seed(1), 3, &shapes(), 2).unwrap();
        let mut m = model(2);
        let pert = Perturbation {
            seed: Seed(3),
            kind: PerturbationKind::SubCge,
            epoch: 2,
            scale: 1e-3,
        };
        assert!(matches!(
            PerturbGuard::new(&mut m, Some(&basis), pert).err(),
            Some(Error::EpochMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn zero_alpha_leaves_params_and_emits_update() {
        let task = Task::<f64>::generate(&TaskConfig::least_squares(2, 3), Seed(1), 1).unwrap();
        let truth = task.ground_truth().unwrap().clone();
        let mut m = BufferedModel::new(truth.clone(), 1);
        let mut stream = RandomStream::from_seed(Seed(4));
        let settings = StepSettings {
            kind: PerturbationKind::FullGaussian,
            epsilon: 1e-3,
            batch_size: 4,
            learning_rate: 0.1,
            n_clients: 1,
        };
        // At the exact optimum of a noiseless quadratic both sides agree.
        let u = local_zo_step(&task, &mut m, None, &mut stream, task.shard(0), &settings, 0, 0)
            .unwrap();
        assert!(u.alpha.abs() < 1e-12);
        assert!(m.base.max_abs_diff(&truth) < 1e-12);
    }
}
