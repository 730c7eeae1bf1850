use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::UpdateMessage;

/// Serialized size of one SR-gossip history entry: an update message plus
/// the sender's current mixing coefficient as an `f64`.
pub const SR_ENTRY_WIRE_SIZE: usize = UpdateMessage::WIRE_SIZE + 8;

/// Length header of a sparse payload.
pub const SPARSE_HEADER_BYTES: usize = 4;
/// Width of one sparse index.
pub const SPARSE_INDEX_BYTES: usize = 4;

/// Anything sent across an edge, with its exact serialized size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Message,
    SrEntry,
    /// Full tensor of `elements` values.
    Dense {
        elements: usize,
        bytes_per_element: usize,
    },
    /// Top-K payload: header, then `nnz` (index, value) pairs.
    Sparse {
        nnz: usize,
        bytes_per_value: usize,
    },
}

impl Payload {
    pub fn wire_bytes(&self) -> u64 {
        (match *self {
            Payload::Message => UpdateMessage::WIRE_SIZE,
            Payload::SrEntry => SR_ENTRY_WIRE_SIZE,
            Payload::Dense {
                elements,
                bytes_per_element,
            } => elements * bytes_per_element,
            Payload::Sparse {
                nnz,
                bytes_per_value,
            } => SPARSE_HEADER_BYTES + nnz * (SPARSE_INDEX_BYTES + bytes_per_value),
        }) as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub messages: u64,
    pub bytes: u64,
}

impl Traffic {
    fn add(&mut self, other: Traffic) {
        self.messages += other.messages;
        self.bytes += other.bytes;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    /// From the lower-numbered endpoint to the higher one.
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// One line of the ledger export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerRow {
    pub iteration: u32,
    pub edge_u: u32,
    pub edge_v: u32,
    pub direction: Direction,
    pub messages: u64,
    pub bytes: u64,
}

/// Exact per-edge, per-direction, per-iteration traffic counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    directed: BTreeMap<(u32, u32), Traffic>,
    rows: BTreeMap<(u32, u32, u32), Traffic>,
}

impl TrafficLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn account(&mut self, iteration: u32, from: usize, to: usize, payload: Payload) {
        self.account_many(iteration, from, to, payload, 1);
    }

    pub fn account_many(&mut self, iteration: u32, from: usize, to: usize, payload: Payload, count: u64) {
        if count == 0 {
            return;
        }
        let t = Traffic {
            messages: count,
            bytes: count * payload.wire_bytes(),
        };
        let (from, to) = (from as u32, to as u32);
        self.directed.entry((from, to)).or_default().add(t);
        self.rows.entry((iteration, from, to)).or_default().add(t);
    }

    pub fn directed(&self, from: usize, to: usize) -> Traffic {
        self.directed
            .get(&(from as u32, to as u32))
            .copied()
            .unwrap_or_default()
    }

    /// Both directions of an undirected edge.
    pub fn edge(&self, u: usize, v: usize) -> Traffic {
        let mut t = self.directed(u, v);
        t.add(self.directed(v, u));
        t
    }

    pub fn total(&self) -> Traffic {
        let mut t = Traffic::default();
        for v in self.directed.values() {
            t.add(*v);
        }
        t
    }

    /// Largest undirected per-edge byte total.
    pub fn max_edge_bytes(&self) -> u64 {
        let mut per_edge: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (&(a, b), t) in &self.directed {
            *per_edge.entry((a.min(b), a.max(b))).or_default() += t.bytes;
        }
        per_edge.values().copied().max().unwrap_or(0)
    }

    /// Undirected per-edge totals keyed by `(u, v)` with `u < v`.
    pub fn per_edge(&self) -> BTreeMap<(u32, u32), Traffic> {
        let mut out: BTreeMap<(u32, u32), Traffic> = BTreeMap::new();
        for (&(a, b), t) in &self.directed {
            out.entry((a.min(b), a.max(b))).or_default().add(*t);
        }
        out
    }

    pub fn iteration_total(&self, iteration: u32) -> Traffic {
        let mut t = Traffic::default();
        for (_, v) in self
            .rows
            .range((iteration, 0, 0)..=(iteration, u32::MAX, u32::MAX))
        {
            t.add(*v);
        }
        t
    }

    /// Rows sorted by iteration, then edge, then direction.
    pub fn rows(&self) -> Vec<LedgerRow> {
        let mut out: Vec<LedgerRow> = self
            .rows
            .iter()
            .map(|(&(iteration, from, to), t)| LedgerRow {
                iteration,
                edge_u: from.min(to),
                edge_v: from.max(to),
                direction: if from < to {
                    Direction::Forward
                } else {
                    Direction::Backward
                },
                messages: t.messages,
                bytes: t.bytes,
            })
            .collect();
        out.sort_by_key(|r| (r.iteration, r.edge_u, r.edge_v, r.direction));
        out
    }

    /// Per-directed-edge totals, ignoring iteration. Equal across runs that
    /// differ only in model size for seed-based protocols.
    pub fn directed_totals(&self) -> &BTreeMap<(u32, u32), Traffic> {
        &self.directed
    }
}
