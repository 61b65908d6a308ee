//! Batch removal of red nodes from a list, all levels in parallel.
//!
//! For every level `l` the black nodes next to a red run become leaves of a
//! tree rooted at the left-topmost sentinel. Leaves emit boundary pairs,
//! internal positions fold their children's pairs in key order, and every
//! fold of `(w, x·)` with `(·y, z)` introduces `x` to `y`. After the fold
//! completes each maximal red run at level `l` is bridged by exactly one new
//! link.
//!
//! The bridging engine is generic over the tree so the buffer phase can run
//! it over the index tree of its sorted chain.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Debug;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::key::Key;
use crate::simcore::{Fabric, Payload, SimError};
use crate::skiplist::{Edge, SkipList};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeleteError {
    #[error("leaf {key} at level {level} cannot reach the root")]
    OrphanLeaf { key: Key, level: u32 },
    #[error("inconsistent dots merging at {at} for level {level}")]
    MessageShapeViolation { at: Key, level: u32 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One side of a boundary pair; `dot` marks a red neighbour on that side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryMessage {
    pub lo: Key,
    pub lo_dot: bool,
    pub hi: Key,
    pub hi_dot: bool,
}

impl BoundaryMessage {
    fn payload(&self, tree: u32) -> Payload {
        Payload::Boundary {
            tree,
            lo: self.lo,
            lo_dot: self.lo_dot,
            hi: self.hi,
            hi_dot: self.hi_dot,
        }
    }
}

/// Spanning structure the boundary pairs travel along.
pub trait BridgeTree {
    type Pos: Copy + Eq + Hash + Ord + Debug;

    fn leaf(&self, b: Key, level: u32) -> Self::Pos;
    /// Parent position and this child's slot there: 1 for the lower/left
    /// child, 2 for the right child (slot 0 is the position's own leaf).
    fn parent(&self, p: Self::Pos) -> Option<(Self::Pos, u8)>;
    fn host(&self, p: Self::Pos) -> Key;
}

/// Backtracking tree over `(key, level)` positions: from a position either
/// climb the node's own tower or step left along the level.
pub struct PositionTree<'a> {
    pub list: &'a SkipList,
}

impl BridgeTree for PositionTree<'_> {
    type Pos = (Key, u32);

    fn leaf(&self, b: Key, level: u32) -> Self::Pos {
        (b, level)
    }

    fn parent(&self, (x, l): Self::Pos) -> Option<(Self::Pos, u8)> {
        let h = self.list.height(x)?;
        if x == self.list.head() && l == self.list.top() {
            return None;
        }
        if h > l {
            Some(((x, l + 1), 1))
        } else {
            self.list.left(x, l).map(|y| ((y, l), 2))
        }
    }

    fn host(&self, (x, _): Self::Pos) -> Key {
        x
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BridgeOutcome {
    pub bridges: Vec<Edge>,
    pub leaves: usize,
    pub rounds: u64,
}

/// Leaves of the level-`l` tree with their initial boundary pairs.
pub fn boundary_leaves(
    list: &SkipList,
    level: u32,
    red: &dyn Fn(Key, u32) -> bool,
) -> Vec<BoundaryMessage> {
    let keys = list.level_keys(level);
    let mut out = Vec::new();
    for (i, &k) in keys.iter().enumerate() {
        if red(k, level) {
            continue;
        }
        let l = i > 0 && red(keys[i - 1], level);
        let r = i + 1 < keys.len() && red(keys[i + 1], level);
        if l || r {
            out.push(BoundaryMessage {
                lo: k,
                lo_dot: l,
                hi: k,
                hi_dot: r,
            });
        }
    }
    out
}

fn fold(
    acc: BoundaryMessage,
    next: BoundaryMessage,
    level: u32,
    bridges: &mut Vec<Edge>,
) -> Result<BoundaryMessage, DeleteError> {
    if acc.hi_dot != next.lo_dot {
        return Err(DeleteError::MessageShapeViolation { at: acc.hi, level });
    }
    if acc.hi_dot {
        bridges.push(Edge {
            a: acc.hi,
            b: next.lo,
            level,
        });
    }
    Ok(BoundaryMessage {
        lo: acc.lo,
        lo_dot: acc.lo_dot,
        hi: next.hi,
        hi_dot: next.hi_dot,
    })
}

/// Per-position child messages, tagged with the child slot.
type Inbox<P> = BTreeMap<(u32, P), Vec<(u8, BoundaryMessage)>>;

/// Runs red detection, (optionally) tree formation and propagation on all
/// `levels` concurrently. Returns the bridges to install; the list itself is
/// not modified. Every round ends with a fabric barrier.
pub fn run_bridging<T: BridgeTree>(
    list: &SkipList,
    levels: &[u32],
    red: &dyn Fn(Key, u32) -> bool,
    tree: &T,
    fabric: &mut dyn Fabric,
    formation: bool,
) -> Result<BridgeOutcome, DeleteError> {
    let mut out = BridgeOutcome::default();
    let start = fabric.round();
    let mut leaves: Vec<(u32, BoundaryMessage)> = Vec::new();
    // detection: every red tells its black neighbours at each level
    for &l in levels {
        let keys = list.level_keys(l);
        for (i, &k) in keys.iter().enumerate() {
            if !red(k, l) {
                continue;
            }
            for j in [i.wrapping_sub(1), i + 1] {
                if let Some(&nb) = keys.get(j) {
                    if !red(nb, l) {
                        fabric.send(k, nb, Payload::RedNotice { level: l })?;
                    }
                }
            }
        }
        for m in boundary_leaves(list, l, red) {
            leaves.push((l, m));
        }
    }
    out.leaves = leaves.len();
    fabric.barrier()?;
    if leaves.is_empty() {
        out.rounds = fabric.round() - start;
        return Ok(out);
    }

    // expected input slots per position
    let mut expected: HashMap<(u32, T::Pos), BTreeSet<u8>> = HashMap::new();
    for (l, m) in &leaves {
        expected
            .entry((*l, tree.leaf(m.lo, *l)))
            .or_default()
            .insert(0);
    }
    if formation {
        let mut visited: BTreeSet<(u32, T::Pos)> = expected.keys().copied().collect();
        let mut pending: Vec<(u32, T::Pos)> = visited.iter().copied().collect();
        while !pending.is_empty() {
            let mut arrivals: Vec<(u32, T::Pos, u8)> = Vec::new();
            for (l, p) in pending {
                let mut cur = p;
                loop {
                    let Some((q, slot)) = tree.parent(cur) else {
                        if tree.host(cur) != tree.host(tree.leaf(list.head(), l)) {
                            return Err(DeleteError::OrphanLeaf {
                                key: tree.host(p),
                                level: l,
                            });
                        }
                        break;
                    };
                    if tree.host(q) != tree.host(cur) {
                        fabric.send(
                            tree.host(cur),
                            tree.host(q),
                            Payload::TreeJoin { tree: l, level: l },
                        )?;
                        arrivals.push((l, q, slot));
                        break;
                    }
                    expected.entry((l, q)).or_default().insert(slot);
                    if !visited.insert((l, q)) {
                        break;
                    }
                    cur = q;
                }
            }
            pending = Vec::new();
            if !arrivals.is_empty() {
                fabric.barrier()?;
                arrivals.sort();
                for (l, q, slot) in arrivals {
                    expected.entry((l, q)).or_default().insert(slot);
                    if visited.insert((l, q)) {
                        pending.push((l, q));
                    }
                }
            }
        }
    } else {
        // the tree is known in advance: register every ancestor directly
        for (l, m) in &leaves {
            let mut cur = tree.leaf(m.lo, *l);
            while let Some((q, slot)) = tree.parent(cur) {
                let e = expected.entry((*l, q)).or_default();
                let fresh = e.is_empty();
                e.insert(slot);
                if !fresh {
                    break;
                }
                cur = q;
            }
        }
    }

    // propagation
    let mut inputs: Inbox<T::Pos> = BTreeMap::new();
    let mut ready: Vec<(u32, T::Pos)> = Vec::new();
    for (l, m) in &leaves {
        let p = tree.leaf(m.lo, *l);
        inputs.entry((*l, p)).or_default().push((0, *m));
        if inputs[&(*l, p)].len() == expected[&(*l, p)].len() {
            ready.push((*l, p));
        }
    }
    let mut finished = 0usize;
    let trees: BTreeSet<u32> = leaves.iter().map(|(l, _)| *l).collect();
    while finished < trees.len() {
        let mut arrivals: Vec<(u32, T::Pos, u8, BoundaryMessage)> = Vec::new();
        while let Some((l, p)) = ready.pop() {
            let mut got = inputs.remove(&(l, p)).unwrap_or_default();
            got.sort_by_key(|(s, _)| *s);
            let before = out.bridges.len();
            let mut acc = got[0].1;
            for (_, m) in &got[1..] {
                acc = fold(acc, *m, l, &mut out.bridges)?;
            }
            let host = tree.host(p);
            for e in &out.bridges[before..] {
                for end in [e.a, e.b] {
                    if end != host {
                        fabric.send(
                            host,
                            end,
                            Payload::Introduce {
                                level: l,
                                peer: if end == e.a { e.b } else { e.a },
                            },
                        )?;
                    }
                }
            }
            match tree.parent(p) {
                None => finished += 1,
                Some((q, slot)) => {
                    if tree.host(q) == host {
                        let v = inputs.entry((l, q)).or_default();
                        v.push((slot, acc));
                        if v.len() == expected[&(l, q)].len() {
                            ready.push((l, q));
                        }
                    } else {
                        fabric.send(host, tree.host(q), acc.payload(l))?;
                        arrivals.push((l, q, slot, acc));
                    }
                }
            }
        }
        if finished >= trees.len() {
            break;
        }
        if arrivals.is_empty() {
            let (l, p) = *inputs
                .keys()
                .next()
                .expect("stuck propagation leaves partial inputs");
            return Err(DeleteError::OrphanLeaf {
                key: tree.host(p),
                level: l,
            });
        }
        fabric.barrier()?;
        arrivals.sort_by_key(|a| (a.0, a.1, a.2));
        for (l, q, slot, m) in arrivals {
            let v = inputs.entry((l, q)).or_default();
            v.push((slot, m));
            if v.len() == expected[&(l, q)].len() {
                ready.push((l, q));
            }
        }
        ready.sort();
        ready.reverse();
    }
    // introductions land next round
    fabric.barrier()?;
    out.rounds = fabric.round() - start;
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteSummary {
    pub cycle: u64,
    pub reds_removed: u64,
    pub bridge_edges_created: u64,
    pub rounds_used: u64,
    pub messages_used: u64,
}

/// Removes every red key from `list` using the backtracking tree.
pub fn delete_phase(
    list: &mut SkipList,
    reds: &BTreeSet<Key>,
    fabric: &mut dyn Fabric,
    cycle: u64,
) -> Result<DeleteSummary, DeleteError> {
    let start_round = fabric.round();
    let start_msgs = fabric.work().messages;
    let reds: BTreeSet<Key> = reds
        .iter()
        .copied()
        .filter(|k| list.contains(*k) && !list.is_sentinel(*k))
        .collect();
    let mut summary = DeleteSummary {
        cycle,
        reds_removed: reds.len() as u64,
        ..Default::default()
    };
    if reds.is_empty() {
        return Ok(summary);
    }
    let top = reds
        .iter()
        .filter_map(|k| list.height(*k))
        .max()
        .unwrap_or(0);
    let levels: Vec<u32> = (0..=top).collect();
    let is_red = |k: Key, _l: u32| reds.contains(&k);
    let outcome = run_bridging(list, &levels, &is_red, &PositionTree { list }, fabric, true)?;
    list.start_journal();
    for e in &outcome.bridges {
        list.set_right(e.a, e.level, e.b);
    }
    for k in &reds {
        list.remove_tower(*k);
    }
    list.normalize_top();
    let journal = list.stop_journal();
    fabric.charge_links(&journal);
    fabric.barrier()?;
    summary.bridge_edges_created = outcome.bridges.len() as u64;
    summary.rounds_used = fabric.round() - start_round;
    summary.messages_used = fabric.work().messages - start_msgs;
    Ok(summary)
}

/// Sequential reference: remove reds one by one.
pub fn oracle_delete_all(list: &SkipList, reds: &BTreeSet<Key>) -> SkipList {
    let mut out = list.clone();
    for k in reds {
        out.oracle_delete(*k);
    }
    out
}

/// Black keys that are consecutive at `level` once reds are skipped.
pub fn black_successor(list: &SkipList, reds: &BTreeSet<Key>, a: Key, level: u32) -> Option<Key> {
    let mut cur = list.right(a, level)?;
    while reds.contains(&cur) {
        cur = list.right(cur, level)?;
    }
    Some(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::LocalFabric;

    fn ids(v: &[u64]) -> BTreeSet<Key> {
        v.iter().map(|&x| Key::Id(x)).collect()
    }

    #[test]
    fn no_reds_no_work() {
        let mut s = SkipList::oracle_build(&[1, 2, 3], &[0, 1, 0]).unwrap();
        let mut f = LocalFabric::new();
        let sum = delete_phase(&mut s, &BTreeSet::new(), &mut f, 0).unwrap();
        assert_eq!(sum.reds_removed, 0);
        assert_eq!(f.work.total(), 0);
    }

    #[test]
    fn minimal_bridge() {
        let mut s = SkipList::oracle_build(&[1, 2, 3, 4], &[0, 0, 0, 0]).unwrap();
        let reds = ids(&[2, 3]);
        let want = oracle_delete_all(&s, &reds);
        let mut f = LocalFabric::new();
        let sum = delete_phase(&mut s, &reds, &mut f, 0).unwrap();
        assert_eq!(sum.bridge_edges_created, 1);
        assert_eq!(s, want);
    }

    #[test]
    fn single_tall_red() {
        let mut s = SkipList::oracle_build(&[1, 5, 23, 25, 50, 98], &[0, 2, 1, 0, 3, 0]).unwrap();
        let reds = ids(&[50]);
        let want = oracle_delete_all(&s, &reds);
        let mut f = LocalFabric::new();
        let sum = delete_phase(&mut s, &reds, &mut f, 0).unwrap();
        assert_eq!(s, want);
        s.validate().unwrap();
        assert!(sum.bridge_edges_created <= 4);
    }

    #[test]
    fn everything_red() {
        let mut s = SkipList::oracle_build(&[1, 2, 3], &[2, 0, 1]).unwrap();
        let reds = ids(&[1, 2, 3]);
        let mut f = LocalFabric::new();
        delete_phase(&mut s, &reds, &mut f, 0).unwrap();
        assert_eq!(s, SkipList::clean());
    }
}
