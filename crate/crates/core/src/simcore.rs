//! Round-synchronous execution engine.
//!
//! A round is opened by [`World::begin_round`] (churn, then delivery of the
//! previous round's envelopes), filled with sends and edge operations, and
//! sealed by [`World::end_round`]. [`World::run_round`] packages the three
//! steps around a per-node [`Protocol`] step function; the maintenance
//! phases drive the same primitives directly through a [`Fabric`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::adversary::RoundChurn;
use crate::key::{Key, NodeId};
use crate::skiplist::Journal;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("node {node} exceeded the message cap with {count} messages")]
    MessageBudgetExceeded { node: NodeId, count: u32 },
    #[error("payload of {bits} bits exceeds the {cap}-bit budget")]
    PayloadTooLarge { bits: u32, cap: u32 },
    #[error("peer {0} is not alive")]
    PeerDeparted(NodeId),
    #[error("inconsistent world: {0}")]
    InconsistentWorld(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseTag {
    Bootstrap,
    Maintenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CyclePhase {
    Bootstrap,
    Idle,
    Delete,
    BufferCreate,
    Merge,
    Update,
}

/// Message bodies. Sizes are computed from the ID width so that the bit
/// budget check is meaningful at every `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Raw {
        bits: u32,
    },
    RedNotice {
        level: u32,
    },
    TreeJoin {
        tree: u32,
        level: u32,
    },
    Boundary {
        tree: u32,
        lo: Key,
        lo_dot: bool,
        hi: Key,
        hi_dot: bool,
    },
    Introduce {
        level: u32,
        peer: Key,
    },
    Register {
        joiner: Key,
    },
    Wire {
        index: u32,
    },
    Compare {
        layer: u32,
        value: Key,
    },
    Chain {
        left: Key,
        right: Key,
    },
    GroupId {
        key: Key,
    },
    Leader {
        key: Key,
    },
    Trace {
        v: Key,
        z: Key,
        level: u32,
        down: bool,
    },
    Splice {
        level: u32,
        left: Key,
        right: Key,
    },
    Query {
        target: Key,
    },
    Cover {
        departed: Key,
    },
}

impl Payload {
    pub fn size_bits(&self, id_bits: u32) -> u32 {
        let key = id_bits + 3;
        let lvl = 8;
        let tag = 8;
        tag + match self {
            Payload::Raw { bits } => *bits,
            Payload::RedNotice { .. } => lvl,
            Payload::TreeJoin { .. } => 2 * lvl,
            Payload::Boundary { .. } => lvl + 2 * key + 2,
            Payload::Introduce { .. } => lvl + key,
            Payload::Register { .. } => key,
            Payload::Wire { .. } => 32,
            Payload::Compare { .. } => lvl + key,
            Payload::Chain { .. } => 2 * key,
            Payload::GroupId { .. } | Payload::Leader { .. } => key,
            Payload::Trace { .. } => 2 * key + lvl + 1,
            Payload::Splice { .. } => 2 * key + lvl,
            Payload::Query { .. } => key,
            Payload::Cover { .. } => key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Payload,
    pub size_bits: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Work {
    pub messages: u64,
    pub edges_formed: u64,
    pub edges_deleted: u64,
}

impl Work {
    pub fn total(&self) -> u64 {
        self.messages + self.edges_formed + self.edges_deleted
    }

    pub fn add(&mut self, o: &Work) {
        self.messages += o.messages;
        self.edges_formed += o.edges_formed;
        self.edges_deleted += o.edges_deleted;
    }
}

/// Who a unit of work is attributed to. Protocol work belongs to the
/// maintenance phase running in that round; background work is covering,
/// joins and query routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkClass {
    Protocol,
    Background,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkRecord {
    pub round: u64,
    pub churn_in: u64,
    pub churn_out: u64,
    pub phase_tag: PhaseTag,
    pub cycle_phase: CyclePhase,
    pub protocol: Work,
    pub background: Work,
}

impl WorkRecord {
    fn new(round: u64, phase_tag: PhaseTag) -> Self {
        WorkRecord {
            round,
            churn_in: 0,
            churn_out: 0,
            phase_tag,
            cycle_phase: if phase_tag == PhaseTag::Bootstrap {
                CyclePhase::Bootstrap
            } else {
                CyclePhase::Idle
            },
            protocol: Work::default(),
            background: Work::default(),
        }
    }

    pub fn total(&self) -> Work {
        let mut w = self.protocol;
        w.add(&self.background);
        w
    }

    pub fn churn(&self) -> u64 {
        self.churn_in + self.churn_out
    }

    pub fn trace(&self) -> TraceRecord {
        let t = self.total();
        TraceRecord {
            round: self.round,
            churn_in: self.churn_in,
            churn_out: self.churn_out,
            messages_sent: t.messages,
            edges_formed: t.edges_formed,
            edges_deleted: t.edges_deleted,
            phase_tag: self.phase_tag,
            cycle_phase: self.cycle_phase,
        }
    }
}

/// The per-round line written to the trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: u64,
    pub churn_in: u64,
    pub churn_out: u64,
    pub messages_sent: u64,
    pub edges_formed: u64,
    pub edges_deleted: u64,
    pub phase_tag: PhaseTag,
    pub cycle_phase: CyclePhase,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkLedger {
    records: Vec<WorkRecord>,
}

impl WorkLedger {
    pub fn records(&self) -> &[WorkRecord] {
        &self.records
    }

    pub fn push(&mut self, r: WorkRecord) {
        if let Some(last) = self.records.last() {
            assert!(r.round > last.round, "ledger rows are append-only");
        }
        self.records.push(r);
    }

    pub fn get(&self, round: u64) -> Option<&WorkRecord> {
        let i = self.records.partition_point(|r| r.round < round);
        self.records.get(i).filter(|r| r.round == round)
    }

    /// Rows with `from <= round < to`.
    pub fn window(&self, from: u64, to: u64) -> &[WorkRecord] {
        let a = self.records.partition_point(|r| r.round < from);
        let b = self.records.partition_point(|r| r.round < to);
        &self.records[a..b.max(a)]
    }

    pub fn totals(&self) -> Work {
        let mut w = Work::default();
        for r in &self.records {
            w.add(&r.total());
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub msg_cap: u32,
    pub bit_cap: u32,
    pub id_bits: u32,
}

impl Budget {
    /// `c_msg * log2(n)^2` for both the per-round count and the bit size.
    pub fn for_n(n: usize, c_msg: f64) -> Self {
        let lg = log2(n);
        let cap = (c_msg * lg * lg).floor().max(1.0) as u32;
        Budget {
            msg_cap: cap,
            bit_cap: cap,
            id_bits: id_bits(n),
        }
    }
}

pub fn log2(n: usize) -> f64 {
    (n.max(2) as f64).log2()
}

/// Bits for an ID drawn from a space of size n^3.
pub fn id_bits(n: usize) -> u32 {
    (3.0 * log2(n)).ceil() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Overlay,
    Cover,
    Shortcut,
    Tree,
    Host,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DropRecord {
    pub round: u64,
    pub src: NodeId,
    pub dst: NodeId,
}

/// Nodes, mailboxes, explicit edges and the ledger.
#[derive(Debug, Clone)]
pub struct World {
    round: u64,
    bootstrap_rounds: u64,
    open: bool,
    alive: BTreeSet<NodeId>,
    budget: Budget,
    mailbox: Vec<Envelope>,
    inbox: BTreeMap<NodeId, Vec<Envelope>>,
    sent: HashMap<NodeId, u32>,
    received: HashMap<NodeId, u32>,
    edges: HashSet<(EdgeKind, NodeId, NodeId)>,
    current: WorkRecord,
    ledger: WorkLedger,
    pub drops: Vec<DropRecord>,
}

impl World {
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        budget: Budget,
        bootstrap_rounds: u64,
    ) -> Self {
        World {
            round: 0,
            bootstrap_rounds,
            open: false,
            alive: nodes.into_iter().collect(),
            budget,
            mailbox: Vec::new(),
            inbox: BTreeMap::new(),
            sent: HashMap::new(),
            received: HashMap::new(),
            edges: HashSet::new(),
            current: WorkRecord::new(0, Self::tag_for(0, bootstrap_rounds)),
            ledger: WorkLedger::default(),
            drops: Vec::new(),
        }
    }

    fn tag_for(round: u64, b: u64) -> PhaseTag {
        if round < b {
            PhaseTag::Bootstrap
        } else {
            PhaseTag::Maintenance
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn phase_tag(&self) -> PhaseTag {
        Self::tag_for(self.round, self.bootstrap_rounds)
    }

    pub fn bootstrap_rounds(&self) -> u64 {
        self.bootstrap_rounds
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn alive(&self) -> &BTreeSet<NodeId> {
        &self.alive
    }

    pub fn is_alive(&self, v: NodeId) -> bool {
        self.alive.contains(&v)
    }

    pub fn ledger(&self) -> &WorkLedger {
        &self.ledger
    }

    pub fn current(&self) -> &WorkRecord {
        &self.current
    }

    pub fn set_cycle_phase(&mut self, p: CyclePhase) {
        self.current.cycle_phase = p;
    }

    pub fn inbox(&self, v: NodeId) -> &[Envelope] {
        self.inbox.get(&v).map(|x| x.as_slice()).unwrap_or(&[])
    }

    pub fn has_edge(&self, kind: EdgeKind, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&(kind, a.min(b), a.max(b)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn work(&mut self, class: WorkClass) -> &mut Work {
        match class {
            WorkClass::Protocol => &mut self.current.protocol,
            WorkClass::Background => &mut self.current.background,
        }
    }

    /// Applies churn and delivers last round's envelopes. Returns departed
    /// nodes in schedule order.
    pub fn begin_round(&mut self, churn: Option<&RoundChurn>) -> Result<Vec<NodeId>, SimError> {
        if self.open {
            return Err(SimError::InconsistentWorld("round already open".into()));
        }
        self.open = true;
        let mut departed = Vec::new();
        if let Some(c) = churn {
            for &v in &c.leaves {
                if !self.alive.remove(&v) {
                    return Err(SimError::InconsistentWorld(format!(
                        "leaving node {v} is not alive"
                    )));
                }
                departed.push(v);
                self.current.churn_out += 1;
            }
            if !departed.is_empty() {
                let gone: HashSet<NodeId> = departed.iter().copied().collect();
                let before = self.edges.len();
                self.edges
                    .retain(|(_, a, b)| !gone.contains(a) && !gone.contains(b));
                let dropped = (before - self.edges.len()) as u64;
                self.current.background.edges_deleted += dropped;
            }
            for &(v, host) in &c.joins {
                if !self.alive.contains(&host) {
                    return Err(SimError::InconsistentWorld(format!(
                        "attach target {host} is not alive"
                    )));
                }
                if !self.alive.insert(v) {
                    return Err(SimError::InconsistentWorld(format!(
                        "joining node {v} already present"
                    )));
                }
                self.current.churn_in += 1;
                self.form_edge(EdgeKind::Host, v, host, WorkClass::Background)?;
            }
        }
        self.inbox.clear();
        for env in std::mem::take(&mut self.mailbox) {
            if self.alive.contains(&env.dst) {
                self.inbox.entry(env.dst).or_default().push(env);
            } else {
                self.drops.push(DropRecord {
                    round: self.round,
                    src: env.src,
                    dst: env.dst,
                });
            }
        }
        Ok(departed)
    }

    pub fn end_round(&mut self) {
        debug_assert!(self.open);
        self.open = false;
        self.sent.clear();
        self.received.clear();
        self.round += 1;
        let next = WorkRecord::new(self.round, self.phase_tag());
        let sealed = std::mem::replace(&mut self.current, next);
        self.ledger.push(sealed);
    }

    pub fn send(
        &mut self,
        src: NodeId,
        dst: NodeId,
        payload: Payload,
        class: WorkClass,
    ) -> Result<(), SimError> {
        if !self.alive.contains(&src) {
            return Err(SimError::PeerDeparted(src));
        }
        if !self.alive.contains(&dst) {
            return Err(SimError::PeerDeparted(dst));
        }
        let bits = payload.size_bits(self.budget.id_bits);
        if bits > self.budget.bit_cap {
            return Err(SimError::PayloadTooLarge {
                bits,
                cap: self.budget.bit_cap,
            });
        }
        let s = self.sent.entry(src).or_insert(0);
        *s += 1;
        if *s > self.budget.msg_cap {
            return Err(SimError::MessageBudgetExceeded {
                node: src,
                count: *s,
            });
        }
        let r = self.received.entry(dst).or_insert(0);
        *r += 1;
        if *r > self.budget.msg_cap {
            return Err(SimError::MessageBudgetExceeded {
                node: dst,
                count: *r,
            });
        }
        self.work(class).messages += 1;
        self.mailbox.push(Envelope {
            src,
            dst,
            payload,
            size_bits: bits,
        });
        Ok(())
    }

    /// Idempotent: re-forming a present edge is free.
    pub fn form_edge(
        &mut self,
        kind: EdgeKind,
        a: NodeId,
        b: NodeId,
        class: WorkClass,
    ) -> Result<(), SimError> {
        for v in [a, b] {
            if !self.alive.contains(&v) {
                return Err(SimError::PeerDeparted(v));
            }
        }
        if self.edges.insert((kind, a.min(b), a.max(b))) {
            self.work(class).edges_formed += 1;
        }
        Ok(())
    }

    pub fn delete_edge(
        &mut self,
        kind: EdgeKind,
        a: NodeId,
        b: NodeId,
        class: WorkClass,
    ) -> Result<(), SimError> {
        if self.edges.remove(&(kind, a.min(b), a.max(b))) {
            self.work(class).edges_deleted += 1;
        }
        Ok(())
    }

    /// Charges links of a virtual network (skip-list pointers) that are not
    /// materialised in the edge registry.
    pub fn charge(&mut self, w: Work, class: WorkClass) {
        self.work(class).add(&w);
    }

    pub fn run_round(
        &mut self,
        churn: Option<&RoundChurn>,
        proto: &mut dyn Protocol,
    ) -> Result<(), SimError> {
        self.begin_round(churn)?;
        let nodes: Vec<NodeId> = self.alive.iter().copied().collect();
        for v in nodes {
            let inbox = self.inbox.get(&v).cloned().unwrap_or_default();
            let mut ctx = NodeCtx {
                world: self,
                node: v,
            };
            proto.step(v, &inbox, &mut ctx)?;
        }
        self.end_round();
        Ok(())
    }
}

/// A node's view of the world during its step.
pub struct NodeCtx<'a> {
    world: &'a mut World,
    node: NodeId,
}

impl NodeCtx<'_> {
    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn round(&self) -> u64 {
        self.world.round
    }

    pub fn send(&mut self, dst: NodeId, payload: Payload) -> Result<(), SimError> {
        self.world
            .send(self.node, dst, payload, WorkClass::Protocol)
    }

    pub fn form_edge(&mut self, peer: NodeId) -> Result<(), SimError> {
        self.world
            .form_edge(EdgeKind::Overlay, self.node, peer, WorkClass::Protocol)
    }

    pub fn delete_edge(&mut self, peer: NodeId) -> Result<(), SimError> {
        self.world
            .delete_edge(EdgeKind::Overlay, self.node, peer, WorkClass::Protocol)
    }
}

pub trait Protocol {
    fn step(
        &mut self,
        node: NodeId,
        inbox: &[Envelope],
        ctx: &mut NodeCtx<'_>,
    ) -> Result<(), SimError>;
}

/// Transport used by the maintenance phases. Endpoints are list keys; the
/// implementation decides which peer physically acts for a key.
pub trait Fabric {
    fn round(&self) -> u64;
    /// Cumulative protocol work charged through this fabric.
    fn work(&self) -> Work;
    fn send(&mut self, src: Key, dst: Key, payload: Payload) -> Result<(), SimError>;
    fn charge_links(&mut self, journal: &Journal);
    /// Charges explicit edges formed/deleted outside any skip list.
    fn charge_edges(&mut self, formed: u64, deleted: u64);
    /// Closes the current round and opens the next one.
    fn barrier(&mut self) -> Result<(), SimError>;
}

/// Standalone fabric: every key acts for itself, virtual endpoints are
/// free, and only counts are kept.
#[derive(Debug, Clone, Default)]
pub struct LocalFabric {
    pub round: u64,
    pub work: Work,
    pub cap: Option<u32>,
    sent: HashMap<Key, u32>,
}

impl LocalFabric {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cap(cap: u32) -> Self {
        LocalFabric {
            cap: Some(cap),
            ..Self::default()
        }
    }
}

impl Fabric for LocalFabric {
    fn round(&self) -> u64 {
        self.round
    }

    fn work(&self) -> Work {
        self.work
    }

    fn send(&mut self, src: Key, dst: Key, _payload: Payload) -> Result<(), SimError> {
        if src.is_virtual() && dst.is_virtual() {
            return Ok(());
        }
        if let (Some(cap), Some(id)) = (self.cap, src.id()) {
            let c = self.sent.entry(src).or_insert(0);
            *c += 1;
            if *c > cap {
                return Err(SimError::MessageBudgetExceeded {
                    node: id,
                    count: *c,
                });
            }
        }
        self.work.messages += 1;
        Ok(())
    }

    fn charge_links(&mut self, journal: &Journal) {
        let (f, d) = journal.charged();
        self.work.edges_formed += f;
        self.work.edges_deleted += d;
    }

    fn charge_edges(&mut self, formed: u64, deleted: u64) {
        self.work.edges_formed += formed;
        self.work.edges_deleted += deleted;
    }

    fn barrier(&mut self) -> Result<(), SimError> {
        self.round += 1;
        self.sent.clear();
        Ok(())
    }
}
