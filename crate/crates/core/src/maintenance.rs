//! The maintenance cycle: delete, buffer, merge, update, forever, with
//! churn absorbed by committee covering and queries served on the live
//! list in every round.
//!
//! [`Simulation`] is the [`Fabric`] the phases run on. Each phase works on
//! a private copy of the list it rewrites, so barriers inside a phase still
//! see the last published live and clean lists when they handle churn and
//! queries.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{classify, ChurnSchedule, GroundTruth, Lifetime, Query, QueryWorkload};
use crate::key::{Key, NodeId};
use crate::phase_buffer::{buffer_phase, BufferError, BufferSummary};
use crate::phase_delete::{delete_phase, oracle_delete_all, DeleteSummary};
use crate::phase_merge::{oracle_merge, wave_merge, MergeEvent, MergeSummary};
use crate::phase_update::{update_phase, UpdateRecord};
use crate::simcore::{
    log2, Budget, CyclePhase, Fabric, Payload, SimError, Work, WorkClass, WorkLedger, World,
};
use crate::skiplist::{sample_height, Edge, Journal, SkipList};
use crate::spartan::{dimension_for, Census, SpartanError, SpartanParams, SpartanState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub n: usize,
    /// Coin bias for tower heights.
    pub p: f64,
    pub c_msg: f64,
    pub c_cycle: f64,
    pub beta_boot: f64,
    pub spartan: SpartanParams,
}

impl SimParams {
    pub fn new(n: usize) -> Self {
        SimParams {
            n,
            p: 0.5,
            c_msg: 4.0,
            c_cycle: 4.0,
            beta_boot: 16.0,
            spartan: SpartanParams::default(),
        }
    }

    pub fn lg(&self) -> f64 {
        log2(self.n)
    }

    pub fn budget(&self) -> Budget {
        Budget::for_n(self.n, self.c_msg)
    }

    pub fn bootstrap_rounds(&self) -> u64 {
        (self.beta_boot * self.lg()).ceil() as u64
    }

    /// Round budget of one cycle, `c_cycle * log2(n)^2`.
    pub fn cycle_budget(&self) -> u64 {
        (self.c_cycle * self.lg() * self.lg()).ceil() as u64
    }

    /// Committee reassignment period.
    pub fn tick_every(&self) -> u64 {
        (2.0 * self.lg().log2()).ceil().max(1.0) as u64
    }

    pub fn q_budget(&self) -> u64 {
        self.cycle_budget()
    }

    /// A key alive this long before a query is certainly in the live list.
    pub fn present_lag(&self) -> u64 {
        2 * self.cycle_budget()
    }

    /// A key gone this long before a query is certainly out of it.
    pub fn absent_lag(&self) -> u64 {
        3 * self.cycle_budget()
    }

    pub fn alpha(&self) -> u64 {
        (2.0 * self.lg()).ceil() as u64
    }

    pub fn beta_bound(&self) -> f64 {
        self.lg().powi(3)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaintenanceError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Spartan(#[from] SpartanError),
    #[error("bootstrap list construction failed: {0}")]
    Buffer(#[from] BufferError),
    #[error("bootstrap needed {used} rounds but only {budget} are churn-free")]
    BootstrapOverrun { used: u64, budget: u64 },
    #[error("schedule bootstrap {schedule} differs from the configured {expected}")]
    ScheduleMismatch { schedule: u64, expected: u64 },
    #[error("no initial nodes")]
    EmptyNetwork,
    #[error("bootstrap has not run")]
    NotBootstrapped,
    #[error("bootstrap already ran")]
    AlreadyBootstrapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    CommitteeDestroyed,
    Unreachable,
    BudgetExceeded,
    QueryStalled,
    QueryTimeout,
    PhaseError,
}

/// A protocol failure. Counted, never fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub round: u64,
    pub cycle: u64,
    pub kind: FailureKind,
    pub detail: String,
}

/// Replacement of a departed node by its committee.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverEvent {
    pub round: u64,
    pub departed: NodeId,
    pub committee: usize,
    pub speaker: Option<NodeId>,
    pub survivors: usize,
    /// Real skip-list neighbours in the published live and clean lists.
    pub neighbours: usize,
    /// Of those, how many reach a live peer acting for them.
    pub linked: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub x: NodeId,
    pub r: u64,
    pub s: NodeId,
    /// `None` if the search hit a key nobody acts for.
    pub answer: Option<bool>,
    pub answered_round: u64,
    pub truth: GroundTruth,
    pub correct: bool,
    pub late: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub cycle: u64,
    pub start_round: u64,
    pub end_round: u64,
    /// Delete, buffer creation, merge, update.
    pub phase_rounds: [u64; 4],
    pub reds: u64,
    pub joiners: u64,
    pub failures: u64,
    pub queries_served: u64,
    pub q_violations: u64,
    pub labels_flipped: u64,
    /// Live and clean lists had identical edge sets after the update.
    pub lc_equal: bool,
}

impl CycleSummary {
    pub fn rounds(&self) -> u64 {
        self.end_round - self.start_round
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n: usize,
    pub k: u32,
    pub overlay_rounds: u64,
    pub list_rounds: u64,
    /// Rounds reserved for bootstrap by the schedule.
    pub budget: u64,
}

#[derive(Debug, Clone, Copy)]
struct CoverLinks {
    committee: usize,
    nbrs: u64,
    links: u64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    params: SimParams,
    world: World,
    spartan: SpartanState,
    rng: ChaCha8Rng,
    schedule: ChurnSchedule,
    workload: QueryWorkload,
    lifetimes: HashMap<NodeId, Lifetime>,
    live: SkipList,
    clean: SkipList,
    pending: Vec<(NodeId, u32)>,
    covered: BTreeMap<NodeId, CoverLinks>,
    retired: BTreeSet<Edge>,
    phase: CyclePhase,
    bootstrapped: bool,
    protocol_total: Work,
    cycle_queries: u64,
    cycle_violations: u64,
    failures: Vec<FailureEvent>,
    cover_events: Vec<CoverEvent>,
    queries: Vec<QueryRecord>,
    overlay_ledger: Vec<(u64, Work)>,
    cycles: Vec<CycleSummary>,
    deletes: Vec<DeleteSummary>,
    buffers: Vec<BufferSummary>,
    merges: Vec<MergeSummary>,
    updates: Vec<UpdateRecord>,
    merge_events: Vec<MergeEvent>,
    censuses: Vec<Census>,
}

impl Simulation {
    /// Opens round 0. The schedule and workload are frozen from here on.
    pub fn new(
        params: SimParams,
        schedule: ChurnSchedule,
        workload: QueryWorkload,
        seed_alg: u64,
    ) -> Result<Self, MaintenanceError> {
        if schedule.initial.is_empty() {
            return Err(MaintenanceError::EmptyNetwork);
        }
        let b = params.bootstrap_rounds();
        if schedule.bootstrap != b {
            return Err(MaintenanceError::ScheduleMismatch {
                schedule: schedule.bootstrap,
                expected: b,
            });
        }
        let world = World::new(schedule.initial.iter().copied(), params.budget(), b);
        let mut sim = Simulation {
            params,
            world,
            spartan: SpartanState::degenerate(&[], params.spartan),
            rng: ChaCha8Rng::seed_from_u64(seed_alg),
            lifetimes: schedule.lifetimes(),
            schedule,
            workload,
            live: SkipList::clean(),
            clean: SkipList::clean(),
            pending: Vec::new(),
            covered: BTreeMap::new(),
            retired: BTreeSet::new(),
            phase: CyclePhase::Bootstrap,
            bootstrapped: false,
            protocol_total: Work::default(),
            cycle_queries: 0,
            cycle_violations: 0,
            failures: Vec::new(),
            cover_events: Vec::new(),
            queries: Vec::new(),
            overlay_ledger: Vec::new(),
            cycles: Vec::new(),
            deletes: Vec::new(),
            buffers: Vec::new(),
            merges: Vec::new(),
            updates: Vec::new(),
            merge_events: Vec::new(),
            censuses: Vec::new(),
        };
        sim.open_round()?;
        Ok(sim)
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn ledger(&self) -> &WorkLedger {
        self.world.ledger()
    }

    pub fn spartan(&self) -> &SpartanState {
        &self.spartan
    }

    pub fn schedule(&self) -> &ChurnSchedule {
        &self.schedule
    }

    pub fn live(&self) -> &SkipList {
        &self.live
    }

    pub fn clean(&self) -> &SkipList {
        &self.clean
    }

    pub fn failures(&self) -> &[FailureEvent] {
        &self.failures
    }

    pub fn cover_events(&self) -> &[CoverEvent] {
        &self.cover_events
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    /// Committee reassignment work, kept apart from the protocol ledger.
    pub fn overlay_ledger(&self) -> &[(u64, Work)] {
        &self.overlay_ledger
    }

    pub fn cycles(&self) -> &[CycleSummary] {
        &self.cycles
    }

    pub fn delete_summaries(&self) -> &[DeleteSummary] {
        &self.deletes
    }

    pub fn buffer_summaries(&self) -> &[BufferSummary] {
        &self.buffers
    }

    pub fn merge_summaries(&self) -> &[MergeSummary] {
        &self.merges
    }

    pub fn update_records(&self) -> &[UpdateRecord] {
        &self.updates
    }

    pub fn merge_events(&self) -> &[MergeEvent] {
        &self.merge_events
    }

    /// Committee sizes at the end of each cycle.
    pub fn censuses(&self) -> &[Census] {
        &self.censuses
    }

    /// Departed nodes still acted for by a committee.
    pub fn covered_count(&self) -> usize {
        self.covered.len()
    }

    pub fn pending_joiners(&self) -> &[(NodeId, u32)] {
        &self.pending
    }

    fn cycle_index(&self) -> u64 {
        self.cycles.len() as u64
    }

    fn fail(&mut self, kind: FailureKind, detail: String) {
        let f = FailureEvent {
            round: self.world.round(),
            cycle: self.cycle_index(),
            kind,
            detail,
        };
        self.failures.push(f);
    }

    fn charge_protocol(&mut self, w: Work) {
        self.world.charge(w, WorkClass::Protocol);
        self.protocol_total.add(&w);
    }

    fn enter(&mut self, phase: CyclePhase) {
        self.phase = phase;
        self.world.set_cycle_phase(phase);
    }

    /// Begins the current round: churn, joins, committee ticks, queries.
    fn open_round(&mut self) -> Result<(), SimError> {
        let t = self.world.round();
        let churn = self.schedule.round(t).cloned();
        let departed = self.world.begin_round(churn.as_ref())?;
        self.world.set_cycle_phase(self.phase);
        for v in departed {
            self.on_depart(v, t);
        }
        if let Some(c) = churn {
            for (v, host) in c.joins {
                self.spartan.add_joiner(v, host);
                let h = sample_height(&mut self.rng, self.params.p);
                self.pending.push((v, h));
            }
        }
        let b = self.params.bootstrap_rounds();
        if self.bootstrapped && t >= b {
            if (t - b).is_multiple_of(self.params.tick_every()) {
                self.tick(t);
            }
            self.serve_queries(t);
        }
        Ok(())
    }

    fn neighbour_ids(&self, v: NodeId) -> BTreeSet<NodeId> {
        let k = Key::Id(v);
        let mut out = BTreeSet::new();
        for list in [&self.live, &self.clean] {
            if list.contains(k) {
                out.extend(list.neighbours(k).into_iter().filter_map(|x| x.id()));
            }
        }
        out
    }

    fn on_depart(&mut self, v: NodeId, t: u64) {
        // v's committee loses its share of every cover link it maintained
        if let Some(c) = self.spartan.home(v) {
            let mut dropped = 0;
            for cl in self.covered.values_mut().filter(|cl| cl.committee == c) {
                cl.links = cl.links.saturating_sub(cl.nbrs);
                dropped += cl.nbrs;
            }
            self.world.charge(
                Work {
                    edges_deleted: dropped,
                    ..Work::default()
                },
                WorkClass::Background,
            );
        }
        let nbrs = self.neighbour_ids(v);
        match self.spartan.cover_node(v) {
            Ok(rec) => {
                let members = self.spartan.committee(rec.committee).members.len() as u64;
                let links = members * nbrs.len() as u64;
                self.world.charge(
                    Work {
                        edges_formed: links,
                        ..Work::default()
                    },
                    WorkClass::Background,
                );
                let linked = nbrs
                    .iter()
                    .filter(|&&u| self.spartan.representative(u).is_some())
                    .count();
                self.covered.insert(
                    v,
                    CoverLinks {
                        committee: rec.committee,
                        nbrs: nbrs.len() as u64,
                        links,
                    },
                );
                self.cover_events.push(CoverEvent {
                    round: t,
                    departed: v,
                    committee: rec.committee,
                    speaker: Some(rec.speaker),
                    survivors: rec.survivors,
                    neighbours: nbrs.len(),
                    linked,
                });
            }
            Err(e) => {
                let committee = self.spartan.covered_by(v).unwrap_or(usize::MAX);
                self.covered.insert(
                    v,
                    CoverLinks {
                        committee,
                        nbrs: nbrs.len() as u64,
                        links: 0,
                    },
                );
                self.cover_events.push(CoverEvent {
                    round: t,
                    departed: v,
                    committee,
                    speaker: None,
                    survivors: 0,
                    neighbours: nbrs.len(),
                    linked: 0,
                });
                self.fail(
                    FailureKind::CommitteeDestroyed,
                    format!("{e} while covering {v}"),
                );
            }
        }
    }

    fn release(&mut self, v: NodeId) {
        if let Some(cl) = self.covered.remove(&v) {
            self.world.charge(
                Work {
                    edges_deleted: cl.links,
                    ..Work::default()
                },
                WorkClass::Background,
            );
        }
        self.spartan.release_cover(v);
    }

    fn tick(&mut self, t: u64) {
        let mut w = self.spartan.maintenance_tick(&mut self.rng);
        for cl in self.covered.values_mut() {
            let members = self.spartan.committee(cl.committee).members.len() as u64;
            w.edges_deleted += cl.links;
            cl.links = members * cl.nbrs;
            w.edges_formed += cl.links;
        }
        self.overlay_ledger.push((t, w));
    }

    fn serve_queries(&mut self, t: u64) {
        let qs: Vec<Query> = self.workload.at(t).to_vec();
        for q in qs {
            let spartan = &self.spartan;
            let res = self
                .live
                .search_with(self.live.head(), Key::Id(q.x), |k| match k.id() {
                    Some(id) if spartan.representative(id).is_none() => Err(k),
                    _ => Ok(()),
                });
            let hops = spartan
                .home(q.s)
                .map(|c| spartan.hops_to_leader(c) as u64)
                .unwrap_or(0);
            let truth = classify(
                &q,
                &self.lifetimes,
                self.params.present_lag(),
                self.params.absent_lag(),
                self.params.q_budget(),
            );
            let (answer, path) = match res {
                Ok(o) => (Some(o.found), o.path_rounds),
                Err(k) => {
                    self.fail(
                        FailureKind::QueryStalled,
                        format!("query for {} stalled at {k}", q.x),
                    );
                    (None, 0)
                }
            };
            let answered_round = t + hops + path;
            let late = answered_round - q.r > self.params.q_budget();
            if late {
                self.fail(
                    FailureKind::QueryTimeout,
                    format!("query for {} answered at {answered_round}", q.x),
                );
            }
            let correct = match (truth, answer) {
                (_, None) => false,
                (GroundTruth::Present, Some(a)) => a,
                (GroundTruth::Absent, Some(a)) => !a,
                (GroundTruth::Mixed, Some(_)) => true,
            };
            self.cycle_queries += 1;
            if late || !correct {
                self.cycle_violations += 1;
            }
            self.queries.push(QueryRecord {
                x: q.x,
                r: q.r,
                s: q.s,
                answer,
                answered_round,
                truth,
                correct,
                late,
            });
        }
    }

    /// Builds the committee overlay, then the initial lists with the buffer
    /// machinery, then idles until the churn-free window ends.
    pub fn bootstrap_all(&mut self) -> Result<BootstrapSummary, MaintenanceError> {
        if self.bootstrapped {
            return Err(MaintenanceError::AlreadyBootstrapped);
        }
        let nodes = self.schedule.initial.clone();
        let start = self.world.round();
        let (spartan, report) = match dimension_for(nodes.len(), self.params.spartan.c_comm) {
            Some(_) => SpartanState::bootstrap(&nodes, &mut self.rng, self.params.spartan)?,
            None => (
                SpartanState::degenerate(&nodes, self.params.spartan),
                Default::default(),
            ),
        };
        self.spartan = spartan;
        self.charge_protocol(report.work);
        for _ in 0..report.rounds {
            self.barrier()?;
        }
        let overlay_rounds = self.world.round() - start;
        let joiners: Vec<(NodeId, u32)> = nodes
            .iter()
            .map(|&v| (v, sample_height(&mut self.rng, self.params.p)))
            .collect();
        let (b, _) = buffer_phase(&joiners, self, 0)?;
        let list = b.with_sentinels(Key::NegInf, Key::PosInf);
        self.live = list.clone();
        self.clean = list;
        let used = self.world.round() - start;
        let budget = self.params.bootstrap_rounds();
        if used > budget {
            return Err(MaintenanceError::BootstrapOverrun { used, budget });
        }
        self.bootstrapped = true;
        while self.world.round() < budget {
            self.barrier()?;
        }
        self.enter(CyclePhase::Idle);
        Ok(BootstrapSummary {
            n: nodes.len(),
            k: self.spartan.k(),
            overlay_rounds,
            list_rounds: used - overlay_rounds,
            budget,
        })
    }

    /// One pass of the four phases. Phase errors are recorded as failures
    /// and repaired with the sequential reference so the run can go on.
    pub fn run_cycle(&mut self) -> Result<CycleSummary, MaintenanceError> {
        if !self.bootstrapped {
            return Err(MaintenanceError::NotBootstrapped);
        }
        let cycle = self.cycle_index();
        let start = self.world.round();
        let fails0 = self.failures.len();
        self.cycle_queries = 0;
        self.cycle_violations = 0;
        self.retired.clear();
        let mut marks = [0u64; 5];
        marks[0] = start;

        // Phase 1: departed nodes leave the clean list.
        self.enter(CyclePhase::Delete);
        let reds: BTreeSet<Key> = self
            .clean
            .ids()
            .filter(|&v| !self.world.is_alive(v))
            .map(Key::Id)
            .collect();
        let pre = self.clean.clone();
        let mut c = pre.clone();
        match delete_phase(&mut c, &reds, self, cycle) {
            Ok(s) => self.deletes.push(s),
            Err(e) => {
                self.fail(FailureKind::PhaseError, format!("delete: {e}"));
                c = oracle_delete_all(&pre, &reds);
                self.retire_diff(&pre, &c);
            }
        }
        self.clean = c;
        marks[1] = self.world.round();

        // Phase 2: joiners seen so far form the buffer.
        self.enter(CyclePhase::BufferCreate);
        let cut = std::mem::take(&mut self.pending);
        let mut joiners = Vec::with_capacity(cut.len());
        for (v, h) in cut {
            if self.world.is_alive(v) {
                joiners.push((v, h));
            } else {
                self.release(v);
            }
        }
        let b = match buffer_phase(&joiners, self, cycle) {
            Ok((b, s)) => {
                self.buffers.push(s);
                b
            }
            Err(e) => {
                self.fail(FailureKind::PhaseError, format!("buffer: {e}"));
                let mut sorted = joiners.clone();
                sorted.sort_unstable();
                let (ks, hs): (Vec<NodeId>, Vec<u32>) = sorted.into_iter().unzip();
                SkipList::build_between(Key::BufNegInf, Key::BufPosInf, &ks, &hs)
                    .expect("sorted unique joiners")
            }
        };
        marks[2] = self.world.round();

        // Phase 3: merge the buffer into the clean list.
        self.enter(CyclePhase::Merge);
        let pre = self.clean.clone();
        let mut c = pre.clone();
        match wave_merge(&mut c, &b, self, cycle) {
            Ok(out) => {
                self.merges.push(out.summary);
                self.merge_events.extend(out.events);
            }
            Err(e) => {
                self.fail(FailureKind::PhaseError, format!("merge: {e}"));
                c = oracle_merge(&pre, &b);
                self.retire_diff(&pre, &c);
            }
        }
        self.clean = c;
        marks[3] = self.world.round();

        // Phase 4: flip labels; the clean list goes live.
        self.enter(CyclePhase::Update);
        let clean = self.clean.clone();
        let retired = std::mem::take(&mut self.retired);
        let mut live = self.live.clone();
        let flipped = match update_phase(&mut live, &clean, &retired, self, cycle) {
            Ok(r) => {
                self.updates.push(r);
                r.labels_flipped
            }
            Err(e) => {
                self.fail(FailureKind::PhaseError, format!("update: {e}"));
                live = clean.clone();
                self.barrier()?;
                0
            }
        };
        self.live = live;
        let lc_equal = self.live.edges() == self.clean.edges();
        marks[4] = self.world.round();
        self.enter(CyclePhase::Idle);

        let in_lists: Vec<NodeId> = self
            .covered
            .keys()
            .copied()
            .filter(|&v| {
                !self.live.contains(Key::Id(v)) && !self.pending.iter().any(|&(p, _)| p == v)
            })
            .collect();
        for v in in_lists {
            self.release(v);
        }

        let summary = CycleSummary {
            cycle,
            start_round: start,
            end_round: marks[4],
            phase_rounds: [
                marks[1] - marks[0],
                marks[2] - marks[1],
                marks[3] - marks[2],
                marks[4] - marks[3],
            ],
            reds: reds.len() as u64,
            joiners: joiners.len() as u64,
            failures: (self.failures.len() - fails0) as u64,
            queries_served: self.cycle_queries,
            q_violations: self.cycle_violations,
            labels_flipped: flipped,
            lc_equal,
        };
        self.cycles.push(summary.clone());
        self.censuses.push(self.spartan.census(marks[4]));
        Ok(summary)
    }

    fn retire_diff(&mut self, before: &SkipList, after: &SkipList) {
        let now = after.edges();
        self.retired
            .extend(before.edges().into_iter().filter(|e| !now.contains(e)));
    }

    /// Bootstrap (if needed) followed by `cycles` cycles.
    pub fn run(&mut self, cycles: u64) -> Result<(), MaintenanceError> {
        if !self.bootstrapped {
            self.bootstrap_all()?;
        }
        for _ in 0..cycles {
            self.run_cycle()?;
        }
        Ok(())
    }
}

impl Fabric for Simulation {
    fn round(&self) -> u64 {
        self.world.round()
    }

    fn work(&self) -> Work {
        self.protocol_total
    }

    /// Keys are mapped to the peers acting for them. Two keys served by the
    /// same peer talk for free; virtual endpoints are simulator-owned.
    fn send(&mut self, src: Key, dst: Key, payload: Payload) -> Result<(), SimError> {
        let (a, b) = match (src.id(), dst.id()) {
            (None, None) => return Ok(()),
            (Some(a), Some(b)) => (a, b),
            _ => {
                self.charge_protocol(Work {
                    messages: 1,
                    ..Work::default()
                });
                return Ok(());
            }
        };
        let (Some(ra), Some(rb)) = (
            self.spartan.representative(a),
            self.spartan.representative(b),
        ) else {
            self.fail(
                FailureKind::Unreachable,
                format!("{src} -> {dst}: no live representative"),
            );
            return Ok(());
        };
        if ra == rb {
            return Ok(());
        }
        match self.world.send(ra, rb, payload, WorkClass::Protocol) {
            Ok(()) => {
                self.protocol_total.messages += 1;
                Ok(())
            }
            Err(
                e @ (SimError::MessageBudgetExceeded { .. } | SimError::PayloadTooLarge { .. }),
            ) => {
                self.fail(FailureKind::BudgetExceeded, format!("{src} -> {dst}: {e}"));
                self.charge_protocol(Work {
                    messages: 1,
                    ..Work::default()
                });
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn charge_links(&mut self, journal: &Journal) {
        let (f, d) = journal.charged();
        self.charge_protocol(Work {
            messages: 0,
            edges_formed: f,
            edges_deleted: d,
        });
        self.retired.extend(journal.removed.iter().copied());
    }

    fn charge_edges(&mut self, formed: u64, deleted: u64) {
        self.charge_protocol(Work {
            messages: 0,
            edges_formed: formed,
            edges_deleted: deleted,
        });
    }

    fn barrier(&mut self) -> Result<(), SimError> {
        self.world.end_round();
        self.open_round()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{gen_queries, gen_schedule, ScheduleParams, Strategy};

    fn sim(n: usize, rate: usize, cycles: u64, density: f64) -> Simulation {
        let params = SimParams::new(n);
        let horizon = params.bootstrap_rounds() + (cycles + 1) * params.cycle_budget();
        let sp = ScheduleParams::new(
            n,
            rate,
            horizon,
            params.bootstrap_rounds(),
            Strategy::UniformRandom,
        );
        let schedule = gen_schedule(7, &sp).unwrap();
        let workload = gen_queries(7, &schedule, density);
        Simulation::new(params, schedule, workload, 11).unwrap()
    }

    #[test]
    fn bootstrap_builds_equal_lists() {
        let mut s = sim(64, 0, 1, 0.0);
        let b = s.bootstrap_all().unwrap();
        assert!(b.overlay_rounds + b.list_rounds <= b.budget);
        assert_eq!(s.world().round(), s.params().bootstrap_rounds());
        s.live().validate().unwrap();
        assert_eq!(s.live(), s.clean());
        assert_eq!(s.live().len(), 64);
    }

    #[test]
    fn single_node() {
        let mut s = sim(1, 0, 1, 0.0);
        s.bootstrap_all().unwrap();
        assert_eq!(s.live().ids().collect::<Vec<_>>(), s.schedule().initial);
    }

    #[test]
    fn quiet_cycle_only_updates() {
        let mut s = sim(64, 0, 2, 0.0);
        s.run(2).unwrap();
        let c = &s.cycles()[1];
        assert_eq!(c.phase_rounds, [0, 0, 0, 1]);
        assert!(c.lc_equal);
        assert!(s.failures().is_empty());
    }

    #[test]
    fn churn_cycles_stay_consistent() {
        let mut s = sim(256, 2, 6, 0.05);
        s.run(6).unwrap();
        assert!(
            s.failures().is_empty(),
            "{:?}",
            &s.failures()[..s.failures().len().min(5)]
        );
        for c in s.cycles() {
            assert!(c.lc_equal);
            assert!(c.rounds() <= s.params().cycle_budget(), "{c:?}");
        }
        let alive: BTreeSet<NodeId> = s.world().alive().clone();
        for v in s.live().ids() {
            assert!(alive.contains(&v) || s.spartan().representative(v).is_some());
        }
        s.live().validate().unwrap();
        assert!(s.queries().iter().all(|q| q.correct && !q.late));
    }
}
