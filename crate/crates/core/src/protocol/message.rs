use alloc::format;

use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::zo::ZoUpdate;

/// Network-wide unique key of an update. Orders by `(iteration, origin)`,
/// which is the canonical application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageId {
    pub iteration: u32,
    pub origin: u32,
}

/// Seed/scalar update as it travels between clients.
///
/// Wire layout, little-endian, 28 bytes:
///
/// | offset | size | field         |
/// |--------|------|---------------|
/// | 0      | 4    | origin (u32)  |
/// | 4      | 4    | iteration (u32) |
/// | 8      | 8    | seed (u64)    |
/// | 16     | 8    | coefficient (f64) |
/// | 24     | 4    | epoch (u32)   |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMessage {
    pub origin: u32,
    pub iteration: u32,
    pub seed: Seed,
    /// `η·α/n`, applied by receivers as `θ −= coefficient · z`.
    pub coefficient: f64,
    pub epoch: u32,
}

impl UpdateMessage {
    pub const WIRE_SIZE: usize = 28;

    pub fn id(&self) -> MessageId {
        MessageId {
            iteration: self.iteration,
            origin: self.origin,
        }
    }

    pub fn encode(&self) -> [u8; Self::WIRE_SIZE] {
        let mut out = [0u8; Self::WIRE_SIZE];
        out[0..4].copy_from_slice(&self.origin.to_le_bytes());
        out[4..8].copy_from_slice(&self.iteration.to_le_bytes());
        out[8..16].copy_from_slice(&self.seed.0.to_le_bytes());
        out[16..24].copy_from_slice(&self.coefficient.to_le_bytes());
        out[24..28].copy_from_slice(&self.epoch.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::WIRE_SIZE {
            return Err(Error::CorruptedMessage(format!(
                "expected {} bytes, got {}",
                Self::WIRE_SIZE,
                bytes.len()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let coefficient = f64::from_bits(u64_at(16));
        if !coefficient.is_finite() {
            return Err(Error::CorruptedMessage(format!(
                "non-finite coefficient {coefficient}"
            )));
        }
        Ok(UpdateMessage {
            origin: u32_at(0),
            iteration: u32_at(4),
            seed: Seed(u64_at(8)),
            coefficient,
            epoch: u32_at(24),
        })
    }

    /// Bitwise payload equality (coefficients compared by bit pattern).
    pub fn same_payload(&self, other: &Self) -> bool {
        self.origin == other.origin
            && self.iteration == other.iteration
            && self.seed == other.seed
            && self.coefficient.to_bits() == other.coefficient.to_bits()
            && self.epoch == other.epoch
    }
}

impl From<&ZoUpdate> for UpdateMessage {
    fn from(u: &ZoUpdate) -> Self {
        UpdateMessage {
            origin: u.origin,
            iteration: u.iteration,
            seed: u.seed,
            coefficient: u.coefficient,
            epoch: u.epoch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn wire_round_trip(origin: u32, iteration: u32, seed: u64, epoch: u32,
                           coefficient in -1e300f64..1e300) {
            let m = UpdateMessage { origin, iteration, seed: Seed(seed), coefficient, epoch };
            let bytes = m.encode();
            prop_assert_eq!(bytes.len(), 28);
            let back = UpdateMessage::decode(&bytes).unwrap();
            prop_assert!(back.same_payload(&m));
        }
    }

    #[test]
    fn byte_layout() {
        let m = UpdateMessage {
            origin: 1,
            iteration: 2,
            seed: Seed(0x0102_0304_0506_0708),
            coefficient: 1.0,
            epoch: 3,
        };
        let b = m.encode();
        assert_eq!(&b[0..4], &[1, 0, 0, 0]);
        assert_eq!(&b[4..8], &[2, 0, 0, 0]);
        assert_eq!(&b[8..16], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&b[24..28], &[3, 0, 0, 0]);
    }

    #[test]
    fn corrupt_inputs() {
        assert!(UpdateMessage::decode(&[0u8; 27]).is_err());
        let mut b = [0u8; 28];
        b[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            UpdateMessage::decode(&b),
            Err(Error::CorruptedMessage(_))
        ));
    }

    #[test]
    fn canonical_order() {
        let a = MessageId { iteration: 1, origin: 9 };
        let b = MessageId { iteration: 2, origin: 0 };
        let c = MessageId { iteration: 2, origin: 3 };
        assert!(a < b && b < c);
    }
}
