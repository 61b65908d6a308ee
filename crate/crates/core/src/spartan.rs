//! Committee overlay: a wrapped butterfly whose vertices are random
//! `Θ(log n)`-sized cliques.
//!
//! Committee `(row, level)` lives at index `level * 2^k + row`. Clique edges
//! are implicit in membership; the committee graph is kept as an explicit
//! edge set so the shape validator can compare it against the rule.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::key::NodeId;
use crate::simcore::{log2, Work};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpartanParams {
    pub c_comm: f64,
    pub c_lo: f64,
    pub c_hi: f64,
    pub alpha_r: f64,
    pub beta_r: f64,
}

impl Default for SpartanParams {
    fn default() -> Self {
        SpartanParams {
            c_comm: 2.0,
            c_lo: 1.0,
            c_hi: 8.0,
            alpha_r: 1.5,
            beta_r: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ButterflyAddress {
    pub row: u32,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Committee {
    pub address: ButterflyAddress,
    pub members: BTreeSet<NodeId>,
    /// Departed nodes this committee answers for.
    pub covered: BTreeSet<NodeId>,
}

impl Committee {
    fn new(address: ButterflyAddress) -> Self {
        Committee {
            address,
            members: BTreeSet::new(),
            covered: BTreeSet::new(),
        }
    }

    /// Lowest surviving member acts for the committee.
    pub fn speaker(&self) -> Option<NodeId> {
        self.members.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpartanError {
    #[error("{n} nodes are too few for a butterfly with k >= 1")]
    TooFewNodes { n: usize },
    #[error("committee {0} has no surviving members")]
    CommitteeDestroyed(usize),
    #[error("committees disagree; reshape skipped")]
    NoAgreement,
    #[error("cannot shrink below k = 1")]
    CannotShrink,
}

/// Largest `k >= 1` with `k * 2^k <= n / (c_comm * log2 n)`.
pub fn dimension_for(n: usize, c_comm: f64) -> Option<u32> {
    let bound = n as f64 / (c_comm * log2(n));
    let mut best = None;
    for k in 1..31u32 {
        if (k as f64) * 2f64.powi(k as i32) <= bound {
            best = Some(k);
        } else {
            break;
        }
    }
    best
}

fn index(k: u32, a: ButterflyAddress) -> usize {
    (a.level as usize) << k | a.row as usize
}

fn address(k: u32, idx: usize) -> ButterflyAddress {
    ButterflyAddress {
        row: (idx & ((1 << k) - 1)) as u32,
        level: (idx >> k) as u32,
    }
}

/// Committee-graph edges of the wrapped butterfly of dimension `k`, as
/// unordered index pairs without self-loops.
pub fn butterfly_links(k: u32) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    if k == 0 {
        return out;
    }
    for level in 0..k {
        for row in 0..1u32 << k {
            let next = (level + 1) % k;
            let a = index(k, ButterflyAddress { row, level });
            for b in [
                index(k, ButterflyAddress { row, level: next }),
                index(
                    k,
                    ButterflyAddress {
                        row: row ^ (1 << next),
                        level: next,
                    },
                ),
            ] {
                if a != b {
                    out.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub round: u64,
    pub k: u32,
    pub committee_count: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub mean_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Opinion {
    Grow,
    Shrink,
    Stay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverRecord {
    pub departed: NodeId,
    pub committee: usize,
    pub speaker: NodeId,
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReshapeReport {
    pub from_k: u32,
    pub to_k: u32,
    pub agreement_rounds: u64,
    pub recruit_rounds: u64,
    pub rounds: u64,
    pub work: Work,
}

#[derive(Debug, Clone)]
pub struct SpartanState {
    k: u32,
    committees: Vec<Committee>,
    home: HashMap<NodeId, usize>,
    covered_by: HashMap<NodeId, usize>,
    links: BTreeSet<(usize, usize)>,
    hops_to_leader: Vec<u32>,
    pub params: SpartanParams,
}

/// Serialisable snapshot of the committee graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayDump {
    pub k: u32,
    pub committees: Vec<Vec<NodeId>>,
    pub links: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BootstrapReport {
    pub rounds: u64,
    pub work: Work,
}

impl SpartanState {
    fn empty(k: u32, params: SpartanParams) -> Self {
        let count = if k == 0 { 1 } else { (k as usize) << k };
        let committees = (0..count).map(|i| Committee::new(address(k, i))).collect();
        let mut s = SpartanState {
            k,
            committees,
            home: HashMap::new(),
            covered_by: HashMap::new(),
            links: BTreeSet::new(),
            hops_to_leader: vec![],
            params,
        };
        s.install_links();
        s
    }

    fn install_links(&mut self) {
        self.links = butterfly_links(self.k);
        let n = self.committees.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.links {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut dist = vec![u32::MAX; n];
        let mut q = VecDeque::from([0usize]);
        dist[0] = 0;
        while let Some(u) = q.pop_front() {
            for &w in &adj[u] {
                if dist[w] == u32::MAX {
                    dist[w] = dist[u] + 1;
                    q.push_back(w);
                }
            }
        }
        self.hops_to_leader = dist;
    }

    /// Builds the overlay over `nodes` during bootstrap.
    pub fn bootstrap<R: Rng + ?Sized>(
        nodes: &[NodeId],
        rng: &mut R,
        params: SpartanParams,
    ) -> Result<(Self, BootstrapReport), SpartanError> {
        let n = nodes.len();
        let k = dimension_for(n, params.c_comm).ok_or(SpartanError::TooFewNodes { n })?;
        Ok(Self::bootstrap_with_k(nodes, k, rng, params))
    }

    /// Single committee holding everyone, for networks too small for k >= 1.
    pub fn degenerate(nodes: &[NodeId], params: SpartanParams) -> Self {
        let mut s = Self::empty(0, params);
        for &v in nodes {
            s.committees[0].members.insert(v);
            s.home.insert(v, 0);
        }
        s
    }

    fn bootstrap_with_k<R: Rng + ?Sized>(
        nodes: &[NodeId],
        k: u32,
        rng: &mut R,
        params: SpartanParams,
    ) -> (Self, BootstrapReport) {
        let mut s = Self::empty(k, params);
        let count = s.committees.len();
        // leaders are the first `count` IDs in ascending order
        let mut sorted = nodes.to_vec();
        sorted.sort_unstable();
        for (i, &v) in sorted.iter().take(count).enumerate() {
            s.committees[i].members.insert(v);
            s.home.insert(v, i);
        }
        for &v in sorted.iter().skip(count) {
            let c = rng.random_range(0..count);
            s.committees[c].members.insert(v);
            s.home.insert(v, c);
        }
        let lg = log2(nodes.len()).ceil() as u64;
        // leader election and tree (2 log n), leader cycle, random joins
        // routed on the tree, clique formation, bipartite wiring
        let rounds = 2 * lg + 3;
        let work = Work {
            messages: nodes.len() as u64 * (lg + 1),
            edges_formed: s.edge_work(),
            edges_deleted: 0,
        };
        (s, BootstrapReport { rounds, work })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn committees(&self) -> &[Committee] {
        &self.committees
    }

    pub fn committee(&self, idx: usize) -> &Committee {
        &self.committees[idx]
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    pub fn home(&self, v: NodeId) -> Option<usize> {
        self.home.get(&v).copied()
    }

    pub fn covered_by(&self, v: NodeId) -> Option<usize> {
        self.covered_by.get(&v).copied()
    }

    pub fn covered_count(&self) -> usize {
        self.covered_by.len()
    }

    pub fn node_count(&self) -> usize {
        self.home.len()
    }

    pub fn hops_to_leader(&self, idx: usize) -> u32 {
        self.hops_to_leader.get(idx).copied().unwrap_or(0)
    }

    pub fn diameter_to_leader(&self) -> u32 {
        self.hops_to_leader
            .iter()
            .copied()
            .filter(|&d| d != u32::MAX)
            .max()
            .unwrap_or(0)
    }

    /// Clique edges plus complete bipartite graphs along committee links.
    pub fn edge_work(&self) -> u64 {
        let sizes: Vec<u64> = self
            .committees
            .iter()
            .map(|c| c.members.len() as u64)
            .collect();
        let clique: u64 = sizes.iter().map(|&m| m * m.saturating_sub(1) / 2).sum();
        let bip: u64 = self.links.iter().map(|&(a, b)| sizes[a] * sizes[b]).sum();
        clique + bip
    }

    pub fn census(&self, round: u64) -> Census {
        let sizes: Vec<usize> = self.committees.iter().map(|c| c.members.len()).collect();
        Census {
            round,
            k: self.k,
            committee_count: sizes.len(),
            min_size: sizes.iter().copied().min().unwrap_or(0),
            max_size: sizes.iter().copied().max().unwrap_or(0),
            mean_size: sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64,
        }
    }

    /// A joiner is placed in its attach target's committee until the next
    /// reassignment tick.
    pub fn add_joiner(&mut self, v: NodeId, host: NodeId) {
        let c = self.home.get(&host).copied().unwrap_or(0);
        self.committees[c].members.insert(v);
        self.home.insert(v, c);
    }

    /// Removes a departing member and registers it as covered by the
    /// committee it belonged to.
    pub fn cover_node(&mut self, v: NodeId) -> Result<CoverRecord, SpartanError> {
        let c = self
            .home
            .remove(&v)
            .expect("departing node has a committee");
        let com = &mut self.committees[c];
        com.members.remove(&v);
        com.covered.insert(v);
        self.covered_by.insert(v, c);
        let speaker = com.speaker().ok_or(SpartanError::CommitteeDestroyed(c))?;
        Ok(CoverRecord {
            departed: v,
            committee: c,
            speaker,
            survivors: com.members.len(),
        })
    }

    pub fn release_cover(&mut self, v: NodeId) {
        if let Some(c) = self.covered_by.remove(&v) {
            self.committees[c].covered.remove(&v);
        }
    }

    /// The peer that acts for `v`: itself while alive, else its covering
    /// committee's speaker.
    pub fn representative(&self, v: NodeId) -> Option<NodeId> {
        if self.home.contains_key(&v) {
            return Some(v);
        }
        self.covered_by
            .get(&v)
            .and_then(|&c| self.committees[c].speaker())
    }

    /// Reassigns every current member uniformly at random. Covered state
    /// stays with committee identity.
    pub fn maintenance_tick<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Work {
        let before = self.edge_work();
        let count = self.committees.len();
        let mut nodes: Vec<NodeId> = self.home.keys().copied().collect();
        nodes.sort_unstable();
        for c in &mut self.committees {
            c.members.clear();
        }
        for v in nodes {
            let c = rng.random_range(0..count);
            self.committees[c].members.insert(v);
            self.home.insert(v, c);
        }
        Work {
            messages: self.home.len() as u64,
            edges_formed: self.edge_work(),
            edges_deleted: before,
        }
    }

    /// Opinion of each committee relative to a target size.
    pub fn opinions(&self, target: f64) -> Vec<Opinion> {
        self.committees
            .iter()
            .map(|c| {
                let m = c.members.len() as f64;
                if m > self.params.alpha_r * target {
                    Opinion::Grow
                } else if m < self.params.beta_r * target {
                    Opinion::Shrink
                } else {
                    Opinion::Stay
                }
            })
            .collect()
    }

    /// Checks the committee graph against the butterfly rule and the
    /// membership maps against each other.
    pub fn validate_shape(&self) -> Result<(), String> {
        let expected = if self.k == 0 {
            1
        } else {
            (self.k as usize) << self.k
        };
        if self.committees.len() != expected {
            return Err(format!(
                "{} committees, expected {expected}",
                self.committees.len()
            ));
        }
        for (i, c) in self.committees.iter().enumerate() {
            if self.k > 0 && index(self.k, c.address) != i {
                return Err(format!("committee {i} carries address {:?}", c.address));
            }
            for v in &c.members {
                if self.home.get(v) != Some(&i) {
                    return Err(format!("member {v} of committee {i} is homed elsewhere"));
                }
            }
        }
        let members: usize = self.committees.iter().map(|c| c.members.len()).sum();
        if members != self.home.len() {
            return Err(format!(
                "{members} memberships for {} nodes",
                self.home.len()
            ));
        }
        let rule = butterfly_links(self.k);
        if let Some(e) = rule.difference(&self.links).next() {
            return Err(format!("missing committee link {e:?}"));
        }
        if let Some(e) = self.links.difference(&rule).next() {
            return Err(format!("extra committee link {e:?}"));
        }
        Ok(())
    }

    pub fn to_dump(&self) -> OverlayDump {
        OverlayDump {
            k: self.k,
            committees: self
                .committees
                .iter()
                .map(|c| c.members.iter().copied().collect())
                .collect(),
            links: self.links.iter().copied().collect(),
        }
    }

    /// Rebuilds membership and links as recorded; the result may well fail
    /// [`SpartanState::validate_shape`].
    pub fn from_dump(d: &OverlayDump, params: SpartanParams) -> Result<Self, String> {
        let count = if d.k == 0 { 1 } else { (d.k as usize) << d.k };
        if d.committees.len() != count {
            return Err(format!(
                "{} committees, expected {count}",
                d.committees.len()
            ));
        }
        let mut s = Self::empty(d.k, params);
        for (i, members) in d.committees.iter().enumerate() {
            for &v in members {
                s.committees[i].members.insert(v);
                s.home.insert(v, i);
            }
        }
        s.links = d.links.iter().copied().collect();
        Ok(s)
    }

    /// Adds scripted members to random committees (used to emulate growth).
    pub fn admit<R: Rng + ?Sized>(&mut self, nodes: &[NodeId], rng: &mut R) {
        let count = self.committees.len();
        for &v in nodes {
            let c = rng.random_range(0..count);
            self.committees[c].members.insert(v);
            self.home.insert(v, c);
        }
    }

    pub fn evict(&mut self, nodes: &[NodeId]) {
        for v in nodes {
            if let Some(c) = self.home.remove(v) {
                self.committees[c].members.remove(v);
            }
        }
    }

    /// Agreement, then grow or shrink by one dimension followed by
    /// recruitment until every committee holds `⌊3n'/(4N')⌋` members.
    pub fn reshape<R: Rng + ?Sized>(
        &mut self,
        opinions: &[Opinion],
        rng: &mut R,
    ) -> Result<ReshapeReport, SpartanError> {
        let first = *opinions.first().unwrap_or(&Opinion::Stay);
        if opinions.iter().any(|o| *o != first) {
            return Err(SpartanError::NoAgreement);
        }
        // convergecast to C(0,0) and broadcast of the decision
        let agreement_rounds = 2 * self.diameter_to_leader() as u64;
        let mut work = Work {
            messages: 2 * self.committees.len() as u64,
            ..Work::default()
        };
        let from_k = self.k;
        let before = self.edge_work();
        let recruit_rounds = match first {
            Opinion::Stay => {
                return Ok(ReshapeReport {
                    from_k,
                    to_k: from_k,
                    agreement_rounds,
                    recruit_rounds: 0,
                    rounds: agreement_rounds,
                    work,
                })
            }
            Opinion::Grow => self.grow(rng, &mut work),
            Opinion::Shrink => self.shrink(rng, &mut work)?,
        };
        work.edges_deleted += before;
        work.edges_formed += self.edge_work();
        Ok(ReshapeReport {
            from_k,
            to_k: self.k,
            agreement_rounds,
            recruit_rounds,
            rounds: agreement_rounds + 1 + recruit_rounds,
            work,
        })
    }

    fn rebuild(&mut self, k: u32, placement: Vec<(usize, BTreeSet<NodeId>, BTreeSet<NodeId>)>) {
        let mut next = Self::empty(k, self.params);
        for (idx, members, covered) in placement {
            for &v in &members {
                next.home.insert(v, idx);
            }
            for &v in &covered {
                next.covered_by.insert(v, idx);
            }
            next.committees[idx].members.extend(members);
            next.committees[idx].covered.extend(covered);
        }
        *self = next;
    }

    fn grow<R: Rng + ?Sized>(&mut self, rng: &mut R, work: &mut Work) -> u64 {
        let k = self.k.max(1);
        let old_k = self.k;
        let rows = 1usize << k;
        let nk = k + 1;
        let mut old = std::mem::take(&mut self.committees);
        if old_k == 0 {
            // a degenerate overlay grows straight into k = 1
            let members = std::mem::take(&mut old[0].members);
            let covered = std::mem::take(&mut old[0].covered);
            self.rebuild(1, vec![(0, members, covered)]);
            return self.recruit(rng, work, BTreeSet::new());
        }
        let mut leaders: Vec<(usize, NodeId)> = Vec::new();
        // copies (2^k + i, j + 1) take a leader from old (i, j)
        for c in old.iter_mut() {
            let a = c.address;
            if let Some(v) = c.members.pop_last() {
                let dst = index(
                    nk,
                    ButterflyAddress {
                        row: a.row + rows as u32,
                        level: a.level + 1,
                    },
                );
                leaders.push((dst, v));
            }
        }
        // new level 0: row r takes a leader from old (r mod 2^k, ⌊r/2^k⌋ mod k)
        for r in 0..2 * rows {
            let src = index(
                k,
                ButterflyAddress {
                    row: (r % rows) as u32,
                    level: ((r / rows) % k as usize) as u32,
                },
            );
            if let Some(v) = old[src].members.pop_last() {
                leaders.push((
                    index(
                        nk,
                        ButterflyAddress {
                            row: r as u32,
                            level: 0,
                        },
                    ),
                    v,
                ));
            }
        }
        let mut placement = Vec::new();
        for c in old {
            let a = c.address;
            let dst = index(
                nk,
                ButterflyAddress {
                    row: a.row,
                    level: a.level + 1,
                },
            );
            placement.push((dst, c.members, c.covered));
        }
        for (dst, v) in leaders {
            placement.push((dst, BTreeSet::from([v]), BTreeSet::new()));
        }
        work.messages += placement.len() as u64;
        self.rebuild(nk, placement);
        self.recruit(rng, work, BTreeSet::new())
    }

    fn shrink<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        work: &mut Work,
    ) -> Result<u64, SpartanError> {
        if self.k <= 1 {
            return Err(SpartanError::CannotShrink);
        }
        let k = self.k;
        let nk = k - 1;
        let half = 1u32 << nk;
        let mut pool = BTreeSet::new();
        let mut orphaned = BTreeSet::new();
        let mut placement = Vec::new();
        for c in std::mem::take(&mut self.committees) {
            let a = c.address;
            if a.level == 0 || a.row >= half {
                pool.extend(c.members);
                orphaned.extend(c.covered);
            } else {
                let dst = index(
                    nk,
                    ButterflyAddress {
                        row: a.row,
                        level: a.level - 1,
                    },
                );
                placement.push((dst, c.members, c.covered));
            }
        }
        placement.push((0, BTreeSet::new(), orphaned));
        work.messages += pool.len() as u64;
        self.rebuild(nk, placement);
        Ok(self.recruit(rng, work, pool))
    }

    /// Each committee below `b` pulls one node per round: first from the
    /// pool, otherwise from a committee holding more than `b`. Leftover
    /// pool nodes then probe random committees.
    fn recruit<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        work: &mut Work,
        pool: BTreeSet<NodeId>,
    ) -> u64 {
        let n_total = self.home.len() + pool.len();
        let count = self.committees.len();
        let b = (3 * n_total) / (4 * count);
        let mut pool: Vec<NodeId> = pool.into_iter().collect();
        let mut rounds = 0;
        loop {
            let needy: Vec<usize> = (0..count)
                .filter(|&i| self.committees[i].members.len() < b)
                .collect();
            if needy.is_empty() {
                break;
            }
            let mut moved = false;
            for i in needy {
                let v = if let Some(v) = pool.pop() {
                    Some(v)
                } else {
                    let donors: Vec<usize> = (0..count)
                        .filter(|&j| self.committees[j].members.len() > b)
                        .collect();
                    donors.choose(rng).and_then(|&j| {
                        let m: Vec<NodeId> = self.committees[j].members.iter().copied().collect();
                        let v = *m.choose(rng)?;
                        self.committees[j].members.remove(&v);
                        Some(v)
                    })
                };
                if let Some(v) = v {
                    self.committees[i].members.insert(v);
                    self.home.insert(v, i);
                    work.messages += 2;
                    moved = true;
                }
            }
            rounds += 1;
            if !moved {
                break;
            }
        }
        if !pool.is_empty() {
            rounds += 1;
            for v in pool {
                let c = rng.random_range(0..count);
                self.committees[c].members.insert(v);
                self.home.insert(v, c);
                work.messages += 2;
            }
        }
        rounds
    }

    /// Committee of every member, for diagnostics.
    pub fn assignment(&self) -> BTreeMap<NodeId, usize> {
        self.home.iter().map(|(&v, &c)| (v, c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<NodeId> {
        (1..=n as u64).map(|v| v * 7919).collect()
    }

    #[test]
    fn dimension_arithmetic() {
        assert_eq!(dimension_for(16, 2.0), Some(1));
        assert_eq!(dimension_for(1024, 2.0), Some(3));
        assert_eq!(dimension_for(4, 2.0), None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, _) =
            SpartanState::bootstrap(&ids(1024), &mut rng, SpartanParams::default()).unwrap();
        assert_eq!(s.committees().len(), 24);
        assert!((s.census(0).mean_size - 1024.0 / 24.0).abs() < 1e-9);
        s.validate_shape().unwrap();
    }

    #[test]
    fn small_butterfly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s, _) = SpartanState::bootstrap(&ids(16), &mut rng, SpartanParams::default()).unwrap();
        assert_eq!(s.k(), 1);
        assert_eq!(s.committees().len(), 2);
        assert_eq!(s.links().len(), 1);
        assert!(matches!(
            SpartanState::bootstrap(&ids(4), &mut rng, SpartanParams::default()),
            Err(SpartanError::TooFewNodes { n: 4 })
        ));
    }

    #[test]
    fn link_rule_k3() {
        let l = butterfly_links(3);
        // every vertex has out-degree 2 into the next level, no duplicates
        assert_eq!(l.len(), 48);
        let a = index(3, ButterflyAddress { row: 0, level: 0 });
        let b = index(3, ButterflyAddress { row: 2, level: 1 });
        assert!(l.contains(&(a.min(b), a.max(b))));
    }

    #[test]
    fn covering_two_departures() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut s, _) =
            SpartanState::bootstrap(&ids(256), &mut rng, SpartanParams::default()).unwrap();
        let c = s.home(ids(256)[10]).unwrap();
        let two: Vec<NodeId> = s.committee(c).members.iter().take(2).copied().collect();
        for v in &two {
            s.cover_node(*v).unwrap();
        }
        assert_eq!(s.committee(c).covered.len(), 2);
        let sp = s.committee(c).speaker().unwrap();
        assert_eq!(s.representative(two[0]), Some(sp));
    }

    #[test]
    fn last_member_leaves() {
        let mut s = SpartanState::degenerate(&[5, 9], SpartanParams::default());
        s.cover_node(5).unwrap();
        assert_eq!(s.representative(5), Some(9));
        assert_eq!(s.cover_node(9), Err(SpartanError::CommitteeDestroyed(0)));
        assert_eq!(s.representative(5), None);
    }

    #[test]
    fn tick_keeps_sizes_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut s, _) =
            SpartanState::bootstrap(&ids(1024), &mut rng, SpartanParams::default()).unwrap();
        let lg = 10.0;
        for t in 0..100 {
            s.maintenance_tick(&mut rng);
            let c = s.census(t);
            assert!(
                c.min_size as f64 >= lg && c.max_size as f64 <= 8.0 * lg,
                "{c:?}"
            );
        }
        s.validate_shape().unwrap();
    }

    #[test]
    fn mixed_opinions_are_a_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut s, _) =
            SpartanState::bootstrap(&ids(256), &mut rng, SpartanParams::default()).unwrap();
        let mut ops = vec![Opinion::Grow; s.committees().len()];
        ops[0] = Opinion::Stay;
        assert_eq!(
            s.reshape(&ops, &mut rng).unwrap_err(),
            SpartanError::NoAgreement
        );
        let before = s.assignment();
        let stay = vec![Opinion::Stay; s.committees().len()];
        s.reshape(&stay, &mut rng).unwrap();
        assert_eq!(s.assignment(), before);
    }

    #[test]
    fn grow_from_k1_then_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nodes = ids(64);
        let (mut s, _) =
            SpartanState::bootstrap(&nodes[..32], &mut rng, SpartanParams::default()).unwrap();
        assert_eq!(s.k(), 1);
        s.admit(&nodes[32..], &mut rng);
        let r = s.reshape(&[Opinion::Grow; 2], &mut rng).unwrap();
        assert_eq!((r.from_k, r.to_k), (1, 2));
        assert_eq!(s.committees().len(), 8);
        s.validate_shape().unwrap();
        assert!(s
            .committees()
            .iter()
            .all(|c| c.members.len() >= 64 * 3 / 32));
        let r = s.reshape(&[Opinion::Shrink; 8], &mut rng).unwrap();
        assert_eq!(r.to_k, 1);
        s.validate_shape().unwrap();
        assert_eq!(s.node_count(), 64);
    }
}
