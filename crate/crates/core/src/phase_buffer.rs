//! Buffer creation: sort the cycle's joiners on a comparator network laid
//! over the joiners themselves, link the sorted chain, copy it to every
//! level and rewire fill-in entries away.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::key::{Key, NodeId};
use crate::phase_delete::{run_bridging, BridgeTree, DeleteError};
use crate::simcore::{Fabric, Payload, SimError};
use crate::skiplist::SkipList;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BufferError {
    #[error("no joiners this cycle")]
    NoJoiners,
    #[error(transparent)]
    Bridge(#[from] DeleteError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Layers of disjoint comparators; `(i, j)` with `i < j` leaves the minimum
/// on wire `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparatorNetwork {
    pub width: usize,
    pub layers: Vec<Vec<(usize, usize)>>,
}

/// Batcher's bitonic sorter in its all-ascending form, padded to the next
/// power of two.
pub fn build_bitonic(m: usize) -> ComparatorNetwork {
    let width = m.max(1).next_power_of_two();
    let mut layers = Vec::new();
    let lg = width.trailing_zeros();
    for p in 1..=lg {
        let block = 1usize << p;
        let mut flip = Vec::new();
        for b in (0..width).step_by(block) {
            for i in 0..block / 2 {
                flip.push((b + i, b + block - 1 - i));
            }
        }
        layers.push(flip);
        for q in (0..p - 1).rev() {
            let j = 1usize << q;
            let layer = (0..width)
                .filter(|i| i & j == 0)
                .map(|i| (i, i + j))
                .collect();
            layers.push(layer);
        }
    }
    ComparatorNetwork { width, layers }
}

pub fn bitonic_depth(width: usize) -> usize {
    let lg = width.max(1).next_power_of_two().trailing_zeros() as usize;
    lg * (lg + 1) / 2
}

impl ComparatorNetwork {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn comparator_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// No wire appears twice in one layer and every pair is ordered.
    pub fn validate(&self) -> Result<(), String> {
        for (d, layer) in self.layers.iter().enumerate() {
            let mut seen = vec![false; self.width];
            for &(i, j) in layer {
                if i >= j || j >= self.width {
                    return Err(format!("layer {d}: bad comparator ({i}, {j})"));
                }
                for w in [i, j] {
                    if std::mem::replace(&mut seen[w], true) {
                        return Err(format!("layer {d}: wire {w} used twice"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply<T: Ord>(&self, values: &mut [T]) {
        assert_eq!(values.len(), self.width);
        for layer in &self.layers {
            for &(i, j) in layer {
                if values[i] > values[j] {
                    values.swap(i, j);
                }
            }
        }
    }

    /// Exhaustive 0-1 check; only sensible for small widths.
    pub fn sorts_all_binary(&self) -> bool {
        assert!(self.width <= 24);
        (0u32..1 << self.width).all(|bits| {
            let mut v: Vec<u8> = (0..self.width).map(|i| (bits >> i & 1) as u8).collect();
            self.apply(&mut v);
            v.windows(2).all(|w| w[0] <= w[1])
        })
    }
}

/// A comparator network whose wires are hosted by joiners; wires past the
/// joiner count are virtual padding carrying `+∞`.
#[derive(Debug, Clone)]
pub struct SortingOverlay {
    pub network: ComparatorNetwork,
    pub hosts: Vec<Option<Key>>,
    pub edges: u64,
    pub rounds: u64,
}

/// Assigns wire indices by a prefix count over a binary tree of the
/// joiners, then wires up comparator partners.
pub fn build_sorting_overlay(
    joiners: &[Key],
    fabric: &mut dyn Fabric,
) -> Result<SortingOverlay, BufferError> {
    if joiners.is_empty() {
        return Err(BufferError::NoJoiners);
    }
    let start = fabric.round();
    let m = joiners.len();
    let network = build_bitonic(m);
    // counts flow up the tree, offsets flow down
    let levels = usize::BITS - m.leading_zeros();
    for sweep in [true, false] {
        for d in 0..levels {
            let mut sent = false;
            for i in 1..m {
                let depth = usize::BITS - (i + 1).leading_zeros() - 1;
                let active = if sweep {
                    depth == levels - 1 - d
                } else {
                    depth == d + 1
                };
                if active {
                    let p = (i - 1) / 2;
                    let (a, b) = if sweep {
                        (joiners[i], joiners[p])
                    } else {
                        (joiners[p], joiners[i])
                    };
                    fabric.send(a, b, Payload::Wire { index: i as u32 })?;
                    sent = true;
                }
            }
            if sent {
                fabric.barrier()?;
            }
        }
    }
    let hosts: Vec<Option<Key>> = (0..network.width)
        .map(|i| joiners.get(i).copied())
        .collect();
    // each real-real comparator forms one edge (deduplicated over layers)
    let mut pairs: Vec<(usize, usize)> = network
        .layers
        .iter()
        .flatten()
        .copied()
        .filter(|&(i, j)| j < m && i < m)
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    for &(i, j) in &pairs {
        fabric.send(joiners[i], joiners[j], Payload::Wire { index: j as u32 })?;
    }
    fabric.charge_edges(pairs.len() as u64, 0);
    fabric.barrier()?;
    Ok(SortingOverlay {
        network,
        hosts,
        edges: pairs.len() as u64,
        rounds: fabric.round() - start,
    })
}

/// One round per layer; real-real comparators exchange values. Returns the
/// sorted keys (padding stripped).
pub fn run_network_sort(
    overlay: &SortingOverlay,
    fabric: &mut dyn Fabric,
) -> Result<Vec<Key>, BufferError> {
    let w = overlay.network.width;
    let mut values: Vec<Option<Key>> = overlay.hosts.clone();
    for layer in &overlay.network.layers {
        for &(i, j) in layer {
            if let (Some(hi), Some(hj)) = (overlay.hosts[i], overlay.hosts[j]) {
                fabric.send(
                    hi,
                    hj,
                    Payload::Compare {
                        layer: 0,
                        value: values[i].unwrap(),
                    },
                )?;
                fabric.send(
                    hj,
                    hi,
                    Payload::Compare {
                        layer: 0,
                        value: values[j].unwrap(),
                    },
                )?;
            }
            // padding sorts as +∞
            let swap = match (values[i], values[j]) {
                (Some(a), Some(b)) => a > b,
                (None, Some(_)) => true,
                _ => false,
            };
            if swap {
                values.swap(i, j);
            }
        }
        fabric.barrier()?;
    }
    debug_assert_eq!(values.len(), w);
    Ok(values.into_iter().flatten().collect())
}

/// Index tree over the sorted chain: leaf `i` at `(0, i)`, internal node
/// `(d, j)` spans indices `[j·2^d, (j+1)·2^d)` and is hosted by its
/// leftmost key.
pub struct IndexTree {
    keys: Vec<Key>,
    pos: HashMap<Key, usize>,
    depth: u32,
}

impl IndexTree {
    pub fn new(keys: Vec<Key>) -> Self {
        let pos = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let depth = keys.len().max(1).next_power_of_two().trailing_zeros();
        IndexTree { keys, pos, depth }
    }
}

impl BridgeTree for IndexTree {
    type Pos = (u32, usize);

    fn leaf(&self, b: Key, _level: u32) -> Self::Pos {
        (0, self.pos[&b])
    }

    fn parent(&self, (d, j): Self::Pos) -> Option<(Self::Pos, u8)> {
        (d < self.depth).then(|| ((d + 1, j / 2), if j % 2 == 0 { 1 } else { 2 }))
    }

    fn host(&self, (d, j): Self::Pos) -> Key {
        self.keys[j << d]
    }
}

/// Links the level-0 chain, copies it to every level and bridges over
/// fill-in entries.
pub fn raise_levels(
    sorted: &[(Key, u32)],
    fabric: &mut dyn Fabric,
) -> Result<SkipList, BufferError> {
    let top = sorted.iter().map(|(_, h)| *h).max().unwrap_or(0);
    let mut chain = SkipList::buffer();
    chain.ensure_top(top);
    chain.start_journal();
    for (k, _) in sorted {
        chain.insert_tower(*k, top);
    }
    let mut order: Vec<Key> = vec![chain.head()];
    order.extend(sorted.iter().map(|(k, _)| *k));
    order.push(chain.tail());
    for l in 0..=top {
        for w in order.windows(2) {
            chain.set_right(w[0], l, w[1]);
        }
    }
    let journal = chain.take_journal();
    fabric.charge_links(&journal);
    fabric.barrier()?;
    if top > 0 {
        let heights: HashMap<Key, u32> = sorted.iter().copied().collect();
        let fill_in = |k: Key, l: u32| heights.get(&k).is_some_and(|h| *h < l);
        let levels: Vec<u32> = (1..=top).collect();
        let tree = IndexTree::new(order);
        let outcome = run_bridging(&chain, &levels, &fill_in, &tree, fabric, false)?;
        for e in &outcome.bridges {
            chain.set_right(e.a, e.level, e.b);
        }
        for (k, h) in sorted {
            chain.truncate_tower(*k, *h);
        }
        let journal = chain.take_journal();
        fabric.charge_links(&journal);
        fabric.barrier()?;
    }
    chain.stop_journal();
    Ok(chain)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSummary {
    pub cycle: u64,
    pub joiners: u64,
    pub padded_width: u64,
    pub sort_depth: u64,
    pub rounds_used: u64,
    pub messages_used: u64,
    pub edges_formed: u64,
}

/// Builds the buffer list from `(id, height)` pairs given in arrival order.
pub fn buffer_phase(
    joiners: &[(NodeId, u32)],
    fabric: &mut dyn Fabric,
    cycle: u64,
) -> Result<(SkipList, BufferSummary), BufferError> {
    let start_round = fabric.round();
    let start = fabric.work();
    let mut summary = BufferSummary {
        cycle,
        joiners: joiners.len() as u64,
        ..Default::default()
    };
    if joiners.is_empty() {
        return Ok((SkipList::buffer(), summary));
    }
    let keys: Vec<Key> = joiners.iter().map(|(v, _)| Key::Id(*v)).collect();
    let overlay = build_sorting_overlay(&keys, fabric)?;
    summary.padded_width = overlay.network.width as u64;
    summary.sort_depth = overlay.network.depth() as u64;
    let sorted = run_network_sort(&overlay, fabric)?;
    // sorted positions tell each key its chain neighbours; the overlay is torn down
    for (i, k) in sorted.iter().enumerate() {
        if let Some(host) = overlay.hosts[i] {
            if host != *k {
                fabric.send(
                    host,
                    *k,
                    Payload::Chain {
                        left: *k,
                        right: *k,
                    },
                )?;
            }
        }
    }
    fabric.charge_edges(0, overlay.edges);
    fabric.barrier()?;
    let heights: HashMap<NodeId, u32> = joiners.iter().copied().collect();
    let with_h: Vec<(Key, u32)> = sorted
        .iter()
        .map(|k| (*k, heights[&k.id().unwrap()]))
        .collect();
    let list = raise_levels(&with_h, fabric)?;
    let end = fabric.work();
    summary.rounds_used = fabric.round() - start_round;
    summary.messages_used = end.messages - start.messages;
    summary.edges_formed = end.edges_formed - start.edges_formed;
    Ok((list, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::LocalFabric;

    #[test]
    fn four_wire_shape() {
        let n = build_bitonic(4);
        assert_eq!(n.depth(), 3);
        assert_eq!(n.comparator_count(), 6);
        n.validate().unwrap();
    }

    #[test]
    fn single_wire_is_empty() {
        let n = build_bitonic(1);
        assert_eq!(n.depth(), 0);
        assert_eq!(n.width, 1);
    }

    #[test]
    fn eight_wire_zero_one() {
        assert!(build_bitonic(8).sorts_all_binary());
    }

    #[test]
    fn depth_formula() {
        for m in [2usize, 3, 5, 16, 100, 128, 512] {
            let n = build_bitonic(m);
            assert_eq!(n.depth(), bitonic_depth(m));
        }
        assert_eq!(bitonic_depth(128), 28);
    }

    #[test]
    fn reverse_sorted_128() {
        let keys: Vec<Key> = (0..128u64).rev().map(Key::Id).collect();
        let mut f = LocalFabric::new();
        let ov = build_sorting_overlay(&keys, &mut f).unwrap();
        let r0 = f.round;
        let out = run_network_sort(&ov, &mut f).unwrap();
        assert_eq!(f.round - r0, 28);
        let mut want = keys.clone();
        want.sort();
        assert_eq!(out, want);
    }

    #[test]
    fn all_height_zero_is_chain() {
        let mut f = LocalFabric::new();
        let (b, _) = buffer_phase(&[(9, 0), (3, 0), (5, 0)], &mut f, 0).unwrap();
        assert_eq!(
            b,
            SkipList::build_between(Key::BufNegInf, Key::BufPosInf, &[3, 5, 9], &[0, 0, 0])
                .unwrap()
        );
    }

    #[test]
    fn single_joiner() {
        let mut f = LocalFabric::new();
        let (b, s) = buffer_phase(&[(7, 2)], &mut f, 0).unwrap();
        b.validate().unwrap();
        assert_eq!(s.padded_width, 1);
        assert_eq!(b.top(), 2);
    }

    #[test]
    fn mixed_heights_match_oracle() {
        let js = [(50, 1), (1, 0), (98, 3), (23, 3), (25, 1), (55, 0)];
        let mut f = LocalFabric::new();
        let (b, _) = buffer_phase(&js, &mut f, 0).unwrap();
        let want = SkipList::build_between(
            Key::BufNegInf,
            Key::BufPosInf,
            &[1, 23, 25, 50, 55, 98],
            &[0, 3, 1, 1, 0, 3],
        )
        .unwrap();
        assert_eq!(b, want);
    }
}
