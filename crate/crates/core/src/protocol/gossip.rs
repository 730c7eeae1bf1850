use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use super::message::{MessageId, UpdateMessage};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::real::Real;
use crate::topology::MixingMatrix;

fn check_mixing(n: usize, mixing: &MixingMatrix) -> Result<()> {
    if mixing.n() != n {
        return Err(Error::InvalidMixing(format!(
            "mixing matrix is {}x{} but there are {n} clients",
            mixing.n(),
            mixing.n()
        )));
    }
    mixing.validate()
}

/// One synchronous dense gossip step `θ_i ← Σ_j w_ij θ_j`.
///
/// Sums run over nonzero weights in ascending `j`, so results are
/// deterministic.
pub fn gossip_average<F: Real>(models: &mut [ModelParams<F>], mixing: &MixingMatrix) -> Result<()> {
    let n = models.len();
    check_mixing(n, mixing)?;
    if let Some(first) = models.first() {
        if models.iter().any(|m| !m.same_shape(first)) {
            return Err(Error::InvalidShape("gossip over mismatched models".into()));
        }
    }
    let mixed: Vec<ModelParams<F>> = (0..n)
        .map(|i| {
            let mut acc = ModelParams::zeros(models[i].shapes())?;
            for (j, &w) in mixing.row(i).iter().enumerate() {
                if w != 0.0 {
                    acc.axpy(F::from_f64(w), &models[j]);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    for (m, new) in models.iter_mut().zip(mixed) {
        *m = new;
    }
    Ok(())
}

/// Same as [`gossip_average`] on flat vectors.
pub fn gossip_average_flat<F: Real>(vectors: &mut [Vec<F>], mixing: &MixingMatrix) -> Result<()> {
    let n = vectors.len();
    check_mixing(n, mixing)?;
    let d = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidShape("gossip over mismatched vectors".into()));
    }
    let mixed: Vec<Vec<F>> = (0..n)
        .map(|i| {
            let mut acc = alloc::vec![F::ZERO; d];
            for (j, &w) in mixing.row(i).iter().enumerate() {
                if w != 0.0 {
                    let w = F::from_f64(w);
                    for (a, x) in acc.iter_mut().zip(&vectors[j]) {
                        *a += w * *x;
                    }
                }
            }
            acc
        })
        .collect();
    for (v, new) in vectors.iter_mut().zip(mixed) {
        *v = new;
    }
    Ok(())
}

/// One client's seed history under seed-gossip with shared randomness:
/// every known update with its current mixing coefficient `c_i(m)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedHistory {
    entries: BTreeMap<MessageId, (UpdateMessage, f64)>,
}

/// A coefficient change a client must re-apply: `θ −= delta · coefficient · z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reapplication {
    pub message: UpdateMessage,
    pub delta: f64,
}

impl SeedHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records the client's own update with weight one.
    pub fn record_own(&mut self, message: UpdateMessage) -> Result<()> {
        let id = message.id();
        if self.entries.contains_key(&id) {
            return Err(Error::CorruptedMessage(format!("duplicate own update {id:?}")));
        }
        self.entries.insert(id, (message, 1.0));
        Ok(())
    }

    pub fn coefficient(&self, id: MessageId) -> f64 {
        self.entries.get(&id).map_or(0.0, |e| e.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UpdateMessage, f64)> + '_ {
        self.entries.values().map(|(m, c)| (m, *c))
    }
}

/// One synchronous round of coefficient mixing `c_i(m) ← Σ_j w_ij c_j(m)`
/// over the union of neighbor histories. Returns, per client, every entry
/// whose coefficient changed, in canonical order; each needs a full
/// re-application to the weights.
pub fn seed_gossip_round(histories: &mut [SeedHistory], mixing: &MixingMatrix) -> Result<Vec<Vec<Reapplication>>> {
    let n = histories.len();
    check_mixing(n, mixing)?;
    let mut next: Vec<SeedHistory> = Vec::with_capacity(n);
    let mut changes: Vec<Vec<Reapplication>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut mixed: BTreeMap<MessageId, (UpdateMessage, f64)> = BTreeMap::new();
        for (j, &w) in mixing.row(i).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (id, (msg, c)) in &histories[j].entries {
                let e = mixed.entry(*id).or_insert((*msg, 0.0));
                if !e.0.same_payload(msg) {
                    return Err(Error::CorruptedMessage(format!(
                        "conflicting payloads for {id:?}"
                    )));
                }
                e.1 += w * c;
            }
        }
        let mut delta = Vec::new();
        for (id, (msg, c)) in &mixed {
            let old = histories[i].coefficient(*id);
            if c.to_bits() != old.to_bits() {
                delta.push(Reapplication {
                    message: *msg,
                    delta: c - old,
                });
            }
        }
        next.push(SeedHistory { entries: mixed });
        changes.push(delta);
    }
    for (h, new) in histories.iter_mut().zip(next) {
        *h = new;
    }
    Ok(changes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerShape;
    use crate::rng::Seed;
    use crate::topology::Topology;

    #[test]
    fn dense_gossip_preserves_mean() {
        let topo = Topology::ring(5).unwrap();
        let w = MixingMatrix::metropolis(&topo);
        let shapes = [LayerShape::Vector { len: 3 }];
        let mut models: Vec<ModelParams<f64>> = (0..5)
            .map(|i| {
                ModelParams::from_layers(&shapes, alloc::vec![alloc::vec![i as f64, 1.0, -(i as f64)]])
                    .unwrap()
            })
            .collect();
        gossip_average(&mut models, &w).unwrap();
        let mean: f64 = models.iter().map(|m| m.layer(0)[0]).sum::<f64>() / 5.0;
        assert!((mean - 2.0).abs() < 1e-12);
        assert!(models.iter().all(|m| (m.layer(0)[1] - 1.0).abs() < 1e-15));
    }

    #[test]
    fn mismatched_mixing_rejected() {
        let w = MixingMatrix::identity(3);
        let mut v = alloc::vec![alloc::vec![0.0f64; 2]; 4];
        assert!(gossip_average_flat(&mut v, &w).is_err());
    }

    #[test]
    fn seed_gossip_coefficients_mix() {
        let topo = Topology::path(3).unwrap();
        let w = MixingMatrix::metropolis(&topo);
        let mut h = alloc::vec![SeedHistory::new(); 3];
        let m = UpdateMessage {
            origin: 0,
            iteration: 0,
            seed: Seed(1),
            coefficient: 0.1,
            epoch: 0,
        };
        h[0].record_own(m).unwrap();
        let ch = seed_gossip_round(&mut h, &w).unwrap();
        assert_eq!(ch[0].len(), 1);
        assert_eq!(ch[1].len(), 1);
        assert!(ch[2].is_empty());
        let total: f64 = h.iter().map(|x| x.coefficient(m.id())).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
