use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use super::ledger::{Payload, TrafficLedger};
use super::message::{MessageId, UpdateMessage};
use crate::error::{Error, Result};
use crate::topology::Topology;

/// First receipt of a message by a client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub client: usize,
    pub message: UpdateMessage,
    /// Iteration during whose round the message arrived.
    pub iteration: u32,
    /// Hop within that round, 1-based. Own injections are hop 0.
    pub hop: usize,
    /// Network-wide hop counter at arrival, counted from the first round.
    pub global_hop: u64,
}

impl Delivery {
    /// Iterations between creation and application.
    pub fn staleness(&self) -> u32 {
        self.iteration - self.message.iteration
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundReport {
    pub iteration: u32,
    pub hops: usize,
    pub deliveries: Vec<Delivery>,
    /// Copies dropped because the receiver had already seen them.
    pub duplicates: u64,
}

impl RoundReport {
    pub fn max_staleness(&self) -> u32 {
        self.deliveries
            .iter()
            .map(Delivery::staleness)
            .max()
            .unwrap_or(0)
    }

    /// Newly known messages per client, in canonical `(iteration, origin)` order.
    pub fn by_client(&self, n: usize) -> Vec<Vec<UpdateMessage>> {
        let mut out: Vec<Vec<UpdateMessage>> = (0..n).map(|_| Vec::new()).collect();
        for d in &self.deliveries {
            out[d.client].push(d.message);
        }
        for msgs in &mut out {
            msgs.sort_by_key(UpdateMessage::id);
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
struct ClientState {
    seen: BTreeMap<MessageId, UpdateMessage>,
    /// Messages first received on the previous hop, with the sender.
    relay: Vec<(UpdateMessage, Option<usize>)>,
}

/// Synchronous multi-hop flooding with per-client deduplication.
///
/// Each client forwards a message only on the hop after its first receipt, so
/// every message crosses each directed edge at most once. The relay set
/// persists across rounds: with fewer hops per round than the diameter,
/// messages still in flight continue at the start of the next round.
#[derive(Debug, Clone)]
pub struct FloodNetwork {
    topology: Topology,
    clients: Vec<ClientState>,
    exclude_sender: bool,
    global_hop: u64,
    /// Ids below this iteration are forgotten and treated as already seen.
    watermark: u32,
}

impl FloodNetwork {
    pub fn new(topology: Topology) -> Self {
        let n = topology.n();
        FloodNetwork {
            topology,
            clients: alloc::vec![ClientState::default(); n],
            exclude_sender: false,
            global_hop: 0,
            watermark: 0,
        }
    }

    /// Skip sending a message back to the neighbor it came from.
    pub fn with_sender_exclusion(mut self, exclude: bool) -> Self {
        self.exclude_sender = exclude;
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn has_seen(&self, client: usize, id: MessageId) -> bool {
        id.iteration < self.watermark || self.clients[client].seen.contains_key(&id)
    }

    pub fn seen_count(&self, client: usize) -> usize {
        self.clients[client].seen.len()
    }

    /// Messages waiting to be forwarded on the next hop.
    pub fn in_flight(&self) -> usize {
        self.clients.iter().map(|c| c.relay.len()).sum()
    }

    /// Adds a client's own fresh message to its seen and relay sets.
    pub fn inject(&mut self, client: usize, message: UpdateMessage) -> Result<()> {
        if client >= self.n() {
            return Err(Error::InvalidArgument(format!(
                "client {client} out of range for {} clients",
                self.n()
            )));
        }
        let id = message.id();
        if self.has_seen(client, id) {
            return Err(Error::CorruptedMessage(format!(
                "client {client} injected duplicate id {id:?}"
            )));
        }
        let state = &mut self.clients[client];
        state.seen.insert(id, message);
        state.relay.push((message, None));
        Ok(())
    }

    /// One synchronous hop. Returns first receipts in arrival order.
    pub fn hop(
        &mut self,
        iteration: u32,
        hop: usize,
        ledger: &mut TrafficLedger,
        report: &mut RoundReport,
    ) -> Result<()> {
        let n = self.n();
        let mut inbox: Vec<Vec<(UpdateMessage, usize)>> = (0..n).map(|_| Vec::new()).collect();
        for u in 0..n {
            let relay = core::mem::take(&mut self.clients[u].relay);
            for &v in self.topology.neighbors(u) {
                let mut sent = 0u64;
                for &(msg, from) in &relay {
                    if self.exclude_sender && from == Some(v) {
                        continue;
                    }
                    inbox[v].push((msg, u));
                    sent += 1;
                }
                ledger.account_many(iteration, u, v, Payload::Message, sent);
            }
        }
        self.global_hop += 1;
        for (v, incoming) in inbox.into_iter().enumerate() {
            let mut fresh = Vec::new();
            for (msg, from) in incoming {
                let id = msg.id();
                if id.iteration < self.watermark {
                    report.duplicates += 1;
                    continue;
                }
                let state = &mut self.clients[v];
                match state.seen.get(&id) {
                    Some(known) => {
                        if !known.same_payload(&msg) {
                            return Err(Error::CorruptedMessage(format!(
                                "client {v} received conflicting payloads for {id:?}"
                            )));
                        }
                        report.duplicates += 1;
                    }
                    None => {
                        state.seen.insert(id, msg);
                        fresh.push((msg, Some(from)));
                        report.deliveries.push(Delivery {
                            client: v,
                            message: msg,
                            iteration,
                            hop,
                            global_hop: self.global_hop,
                        });
                    }
                }
            }
            self.clients[v].relay = fresh;
        }
        Ok(())
    }

    /// Injects `fresh` (one message per origin client), runs `hops` hops and
    /// reports every first receipt, own messages included at hop 0.
    pub fn round(
        &mut self,
        iteration: u32,
        hops: usize,
        fresh: &[UpdateMessage],
        ledger: &mut TrafficLedger,
    ) -> Result<RoundReport> {
        let mut report = RoundReport {
            iteration,
            hops,
            ..RoundReport::default()
        };
        for msg in fresh {
            self.inject(msg.origin as usize, *msg)?;
            report.deliveries.push(Delivery {
                client: msg.origin as usize,
                message: *msg,
                iteration,
                hop: 0,
                global_hop: self.global_hop,
            });
        }
        for h in 1..=hops {
            self.hop(iteration, h, ledger, &mut report)?;
        }
        Ok(report)
    }

    /// [`round`](Self::round), then calls `apply(client, messages)` once per
    /// client with its newly known messages in canonical order.
    pub fn flood_round<A>(
        &mut self,
        iteration: u32,
        hops: usize,
        fresh: &[UpdateMessage],
        ledger: &mut TrafficLedger,
        mut apply: A,
    ) -> Result<RoundReport>
    where
        A: FnMut(usize, &[UpdateMessage]) -> Result<()>,
    {
        let report = self.round(iteration, hops, fresh, ledger)?;
        for (client, msgs) in report.by_client(self.n()).iter().enumerate() {
            if !msgs.is_empty() {
                apply(client, msgs)?;
            }
        }
        Ok(report)
    }

    /// Forgets ids older than `iteration`. Safe once no copy of them can still
    /// be in flight, i.e. more than `diameter + 1` hops after their creation.
    pub fn prune_before(&mut self, iteration: u32) {
        if iteration <= self.watermark {
            return;
        }
        self.watermark = iteration;
        let cut = MessageId {
            iteration,
            origin: 0,
        };
        for c in &mut self.clients {
            c.seen = c.seen.split_off(&cut);
        }
    }

    /// Iterations after which no copy of a message can still be in flight
    /// when running `hops` hops per round.
    pub fn retention_rounds(&self, hops: usize) -> u32 {
        let hops = hops.max(1);
        ((self.topology.diameter() + 1).div_ceil(hops) + 1) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    fn msg(origin: u32, iteration: u32) -> UpdateMessage {
        UpdateMessage {
            origin,
            iteration,
            seed: Seed(origin as u64 * 1000 + iteration as u64),
            coefficient: 0.5,
            epoch: 0,
        }
    }

    fn all_fresh(n: usize, t: u32) -> Vec<UpdateMessage> {
        (0..n as u32).map(|i| msg(i, t)).collect()
    }

    #[test]
    fn full_flood_reaches_everyone_at_bfs_distance() {
        let topo = Topology::mesh_grid(3, 4).unwrap();
        let dist = topo.distance_matrix();
        let d = topo.diameter();
        let mut net = FloodNetwork::new(topo);
        let mut ledger = TrafficLedger::new();
        let report = net.round(0, d, &all_fresh(12, 0), &mut ledger).unwrap();
        assert_eq!(report.deliveries.len(), 12 * 12);
        for del in &report.deliveries {
            assert_eq!(del.hop, dist[del.message.origin as usize][del.client]);
        }
    }

    #[test]
    fn delayed_flood_staleness() {
        let topo = Topology::ring(10).unwrap();
        let dist = topo.distance_matrix();
        let k = 2;
        let mut net = FloodNetwork::new(topo);
        let mut ledger = TrafficLedger::new();
        let mut all = Vec::new();
        for t in 0..8 {
            let r = net.round(t, k, &all_fresh(10, t), &mut ledger).unwrap();
            all.extend(r.deliveries);
        }
        for del in all.iter().filter(|d| d.message.iteration == 0) {
            let delta = dist[del.message.origin as usize][del.client];
            assert_eq!(del.staleness() as usize, delta.div_ceil(k).saturating_sub(1));
        }
        assert_eq!(all.iter().filter(|d| d.message.iteration == 0).count(), 100);
    }

    #[test]
    fn each_directed_edge_carries_each_message_once() {
        let topo = Topology::torus(3, 3).unwrap();
        let edges = topo.edges();
        let d = topo.diameter();
        let mut net = FloodNetwork::new(topo);
        let mut ledger = TrafficLedger::new();
        net.round(0, d + 1, &all_fresh(9, 0), &mut ledger).unwrap();
        for (u, v) in edges {
            assert_eq!(ledger.directed(u, v).messages, 9);
            assert_eq!(ledger.directed(v, u).messages, 9);
        }
    }

    #[test]
    fn conflicting_payload_is_rejected() {
        let topo = Topology::path(3).unwrap();
        let mut net = FloodNetwork::new(topo);
        let mut ledger = TrafficLedger::new();
        net.inject(0, msg(0, 0)).unwrap();
        let mut bad = msg(0, 0);
        bad.coefficient = 1.0;
        net.inject(2, bad).unwrap();
        let mut report = RoundReport::default();
        assert!(matches!(
            net.hop(0, 1, &mut ledger, &mut report),
            Err(Error::CorruptedMessage(_))
        ));
    }

    #[test]
    fn apply_sees_canonical_order() {
        let topo = Topology::star(5).unwrap();
        let mut net = FloodNetwork::new(topo);
        let mut ledger = TrafficLedger::new();
        let mut fresh = all_fresh(5, 3);
        fresh.reverse();
        net.flood_round(3, 2, &fresh, &mut ledger, |_, msgs| {
            assert_eq!(msgs.len(), 5);
            assert!(msgs.windows(2).all(|w| w[0].id() < w[1].id()));
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn pruning_keeps_behavior() {
        let topo = Topology::ring(6).unwrap();
        let mut a = FloodNetwork::new(topo.clone());
        let mut b = FloodNetwork::new(topo);
        let keep = b.retention_rounds(1);
        let (mut la, mut lb) = (TrafficLedger::new(), TrafficLedger::new());
        for t in 0..20 {
            let ra = a.round(t, 1, &all_fresh(6, t), &mut la).unwrap();
            let rb = b.round(t, 1, &all_fresh(6, t), &mut lb).unwrap();
            assert_eq!(ra.deliveries, rb.deliveries);
            b.prune_before(t.saturating_sub(keep));
        }
        assert_eq!(la, lb);
        assert!(b.seen_count(0) < a.seen_count(0));
    }
}
