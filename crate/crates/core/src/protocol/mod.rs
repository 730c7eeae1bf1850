//! Wire format, flooding, gossip and traffic accounting.

mod compress;
mod flood;
mod gossip;
mod ledger;
mod message;

pub use compress::{compress_topk, topk_count, SparseVector};
pub use flood::{Delivery, FloodNetwork, RoundReport};
pub use gossip::{gossip_average, gossip_average_flat, seed_gossip_round, Reapplication, SeedHistory};
pub use ledger::{Direction, LedgerRow, Payload, Traffic, TrafficLedger, SR_ENTRY_WIRE_SIZE};
pub use message::{MessageId, UpdateMessage};
