use alloc::format;
use alloc::vec::Vec;

use super::ledger::Payload;
use crate::error::{Error, Result};
use crate::real::Real;

/// Sparse vector produced by Top-K selection; indices ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector<F> {
    pub len: usize,
    pub indices: Vec<u32>,
    pub values: Vec<F>,
}

impl<F: Real> SparseVector<F> {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn payload(&self) -> Payload {
        Payload::Sparse {
            nnz: self.nnz(),
            bytes_per_value: F::BYTES,
        }
    }

    pub fn decompress(&self) -> Vec<F> {
        let mut out = alloc::vec![F::ZERO; self.len];
        self.add_to(&mut out, F::ONE);
        out
    }

    /// `dst += scale · self`.
    pub fn add_to(&self, dst: &mut [F], scale: F) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            dst[i as usize] += scale * v;
        }
    }
}

/// Number of entries kept for a fraction `keep` of `len`: `⌈keep·len⌉`, at least one.
pub fn topk_count(len: usize, keep: f64) -> Result<usize> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction {keep} outside (0, 1]"
        )));
    }
    let raw = keep * len as f64;
    // absorb representation error such as 0.07 * 100 = 7.000000000000001
    let k = libm::ceil(raw - 1e-9 * raw.max(1.0)) as usize;
    Ok(k.clamp(1, len.max(1)).min(len))
}

/// Keeps the `⌈keep·d⌉` largest-magnitude entries. Ties go to the lower index.
pub fn compress_topk<F: Real>(delta: &[F], keep: f64) -> Result<SparseVector<F>> {
    let k = topk_count(delta.len(), keep)?;
    if delta.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("vector too long for u32 indices".into()));
    }
    let mut order: Vec<u32> = (0..delta.len() as u32).collect();
    let key = |i: &u32| delta[*i as usize].abs();
    order.sort_by(|a, b| {
        key(b)
            .to_f64()
            .partial_cmp(&key(a).to_f64())
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    let mut indices: Vec<u32> = order.into_iter().take(k).collect();
    indices.sort_unstable();
    let values = indices.iter().map(|&i| delta[i as usize]).collect();
    Ok(SparseVector {
        len: delta.len(),
        indices,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn picks_largest() {
        let d = [0.1f64, -5.0, 2.0, 0.0, 3.0];
        let s = compress_topk(&d, 0.4).unwrap();
        assert_eq!(s.indices, [1, 4]);
        assert_eq!(s.decompress(), [0.0, -5.0, 0.0, 0.0, 3.0]);
        assert_eq!(s.payload().wire_bytes(), 4 + 2 * 12);
    }

    #[test]
    fn counts() {
        assert_eq!(topk_count(100, 0.07).unwrap(), 7);
        assert_eq!(topk_count(100, 0.001).unwrap(), 1);
        assert_eq!(topk_count(10, 1.0).unwrap(), 10);
        assert!(topk_count(10, 0.0).is_err());
        assert!(topk_count(10, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn full_keep_is_identity(v in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let s = compress_topk(&v, 1.0).unwrap();
            prop_assert_eq!(s.decompress(), v);
        }

        #[test]
        fn kept_dominate_dropped(v in proptest::collection::vec(-1e3f64..1e3, 1..64),
                                 keep in 0.01f64..1.0) {
            let s = compress_topk(&v, keep).unwrap();
            let min_kept = s.values.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
            for (i, x) in v.iter().enumerate() {
                if !s.indices.contains(&(i as u32)) {
                    prop_assert!(x.abs() <= min_kept);
                }
            }
        }
    }
}
