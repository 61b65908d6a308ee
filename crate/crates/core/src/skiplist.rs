//! Skip-list substrate shared by the live, clean and buffer networks.
//!
//! A list is a map from key to tower. Sentinel towers are stored like any
//! other tower but always span the full height of the list. Every mutation
//! that changes a right-pointer can be journaled so callers can charge the
//! formed and dropped links to a work ledger; an edge is identified by its
//! left endpoint's right-pointer `(a, right(a, l), l)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::key::{Key, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NetworkTag {
    Live,
    Clean,
    Buffer,
}

impl NetworkTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            NetworkTag::Live => "L",
            NetworkTag::Clean => "C",
            NetworkTag::Buffer => "B",
        }
    }
}

/// Geometric height: number of successes before the first failure.
pub fn sample_height<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u32 {
    let mut h = 0;
    while h < 64 && rng.random::<f64>() < p {
        h += 1;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: Key,
    pub b: Key,
    pub level: u32,
}

impl Edge {
    /// Links between two simulator-owned endpoints cost nothing.
    pub fn is_charged(&self) -> bool {
        !(self.a.is_virtual() && self.b.is_virtual())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Journal {
    pub formed: Vec<Edge>,
    pub removed: Vec<Edge>,
}

impl Journal {
    pub fn charged(&self) -> (u64, u64) {
        (
            self.formed.iter().filter(|e| e.is_charged()).count() as u64,
            self.removed.iter().filter(|e| e.is_charged()).count() as u64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tower {
    pub height: u32,
    left: Vec<Option<Key>>,
    right: Vec<Option<Key>>,
}

impl Tower {
    fn new(height: u32) -> Self {
        let n = height as usize + 1;
        Tower {
            height,
            left: vec![None; n],
            right: vec![None; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("sentinel height mismatch: top={top}, tallest node={tallest}")]
    SentinelHeight { top: u32, tallest: u32 },
    #[error("missing link at ({key}, {level})")]
    MissingLink { key: Key, level: u32 },
    #[error("link from ({key}, {level}) points to {target}, which is absent at that level")]
    DanglingLink { key: Key, level: u32, target: Key },
    #[error("keys not increasing at ({key}, {level})")]
    Unsorted { key: Key, level: u32 },
    #[error("doubly-linked violation at ({key}, {level})")]
    BrokenBackLink { key: Key, level: u32 },
    #[error("level {level} membership differs from heights near {key}")]
    Membership { key: Key, level: u32 },
}

impl Violation {
    pub fn location(&self) -> Option<(Key, u32)> {
        match *self {
            Violation::SentinelHeight { .. } => None,
            Violation::MissingLink { key, level }
            | Violation::DanglingLink { key, level, .. }
            | Violation::Unsorted { key, level }
            | Violation::BrokenBackLink { key, level }
            | Violation::Membership { key, level } => Some((key, level)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("keys are not strictly increasing at index {0}")]
    UnsortedInput(usize),
    #[error("{keys} keys but {heights} heights")]
    LengthMismatch { keys: usize, heights: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SearchOutcome {
    pub found: bool,
    pub path_rounds: u64,
    pub horizontal: u64,
}

#[derive(Debug, Clone)]
pub struct SkipList {
    head: Key,
    tail: Key,
    towers: BTreeMap<Key, Tower>,
    journal: Option<Journal>,
}

impl PartialEq for SkipList {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.tail == other.tail && self.towers == other.towers
    }
}

impl Eq for SkipList {}

impl SkipList {
    pub fn new(head: Key, tail: Key) -> Self {
        assert!(head < tail);
        let mut towers = BTreeMap::new();
        let mut h = Tower::new(0);
        let mut t = Tower::new(0);
        h.right[0] = Some(tail);
        t.left[0] = Some(head);
        towers.insert(head, h);
        towers.insert(tail, t);
        SkipList {
            head,
            tail,
            towers,
            journal: None,
        }
    }

    pub fn clean() -> Self {
        Self::new(Key::NegInf, Key::PosInf)
    }

    pub fn buffer() -> Self {
        Self::new(Key::BufNegInf, Key::BufPosInf)
    }

    /// Deterministic list with exactly the given towers.
    pub fn oracle_build(keys: &[NodeId], heights: &[u32]) -> Result<Self, BuildError> {
        Self::build_between(Key::NegInf, Key::PosInf, keys, heights)
    }

    pub fn build_between(
        head: Key,
        tail: Key,
        keys: &[NodeId],
        heights: &[u32],
    ) -> Result<Self, BuildError> {
        if keys.len() != heights.len() {
            return Err(BuildError::LengthMismatch {
                keys: keys.len(),
                heights: heights.len(),
            });
        }
        if let Some(i) = keys.windows(2).position(|w| w[0] >= w[1]) {
            return Err(BuildError::UnsortedInput(i + 1));
        }
        let top = heights.iter().copied().max().unwrap_or(0);
        let mut s = Self::new(head, tail);
        s.ensure_top(top);
        let mut last: Vec<Key> = vec![head; top as usize + 1];
        for (&k, &h) in keys.iter().zip(heights) {
            let k = Key::Id(k);
            s.towers.insert(k, Tower::new(h));
            for l in 0..=h {
                s.set_right(last[l as usize], l, k);
                last[l as usize] = k;
            }
        }
        for l in 0..=top {
            s.set_right(last[l as usize], l, tail);
        }
        Ok(s)
    }

    pub fn head(&self) -> Key {
        self.head
    }

    pub fn tail(&self) -> Key {
        self.tail
    }

    pub fn top(&self) -> u32 {
        self.towers[&self.head].height
    }

    pub fn len(&self) -> usize {
        self.towers.len() - 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_sentinel(&self, k: Key) -> bool {
        k == self.head || k == self.tail
    }

    /// Non-sentinel keys in ascending order.
    pub fn keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.towers
            .keys()
            .copied()
            .filter(move |k| !self.is_sentinel(*k))
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.keys().filter_map(|k| k.id())
    }

    pub fn contains(&self, k: Key) -> bool {
        self.towers.contains_key(&k)
    }

    pub fn height(&self, k: Key) -> Option<u32> {
        self.towers.get(&k).map(|t| t.height)
    }

    pub fn right(&self, k: Key, level: u32) -> Option<Key> {
        self.towers
            .get(&k)
            .and_then(|t| t.right.get(level as usize).copied().flatten())
    }

    pub fn left(&self, k: Key, level: u32) -> Option<Key> {
        self.towers
            .get(&k)
            .and_then(|t| t.left.get(level as usize).copied().flatten())
    }

    /// Distinct keys adjacent to `k` at any level.
    pub fn neighbours(&self, k: Key) -> BTreeSet<Key> {
        let mut out = BTreeSet::new();
        if let Some(t) = self.towers.get(&k) {
            for x in t.left.iter().chain(t.right.iter()).flatten() {
                out.insert(*x);
            }
        }
        out
    }

    pub fn start_journal(&mut self) {
        self.journal = Some(Journal::default());
    }

    pub fn take_journal(&mut self) -> Journal {
        match self.journal.as_mut() {
            Some(j) => std::mem::take(j),
            None => Journal::default(),
        }
    }

    pub fn stop_journal(&mut self) -> Journal {
        self.journal.take().unwrap_or_default()
    }

    fn note_removed(&mut self, e: Edge) {
        if let Some(j) = self.journal.as_mut() {
            j.removed.push(e);
        }
    }

    fn note_formed(&mut self, e: Edge) {
        if let Some(j) = self.journal.as_mut() {
            j.formed.push(e);
        }
    }

    /// Points `a` right to `b` and `b` left to `a` at `level`.
    pub fn set_right(&mut self, a: Key, level: u32, b: Key) {
        debug_assert!(a < b, "set_right({a}, {level}, {b})");
        let l = level as usize;
        let old = self
            .towers
            .get_mut(&a)
            .expect("left endpoint present")
            .right[l]
            .replace(b);
        if old != Some(b) {
            if let Some(o) = old {
                self.note_removed(Edge { a, b: o, level });
            }
            self.note_formed(Edge { a, b, level });
        }
        self.towers
            .get_mut(&b)
            .expect("right endpoint present")
            .left[l] = Some(a);
    }

    /// Adds an unlinked tower.
    pub fn insert_tower(&mut self, k: Key, height: u32) {
        assert!(!self.is_sentinel(k));
        self.towers.insert(k, Tower::new(height));
    }

    /// Drops a tower; its outgoing right links are recorded as removed.
    pub fn remove_tower(&mut self, k: Key) -> Option<u32> {
        let t = self.towers.remove(&k)?;
        for (l, r) in t.right.iter().enumerate() {
            if let Some(r) = r {
                self.note_removed(Edge {
                    a: k,
                    b: *r,
                    level: l as u32,
                });
            }
        }
        Some(t.height)
    }

    /// Lowers a tower to `h`, dropping (and journaling) links above it.
    pub fn truncate_tower(&mut self, k: Key, h: u32) {
        let t = self.towers.get_mut(&k).expect("tower present");
        if h >= t.height {
            return;
        }
        let dropped: Vec<(u32, Key)> = t.right[h as usize + 1..]
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|r| (h + 1 + i as u32, r)))
            .collect();
        t.height = h;
        t.left.truncate(h as usize + 1);
        t.right.truncate(h as usize + 1);
        for (level, r) in dropped {
            self.note_removed(Edge { a: k, b: r, level });
        }
    }

    /// Same list with its sentinels renamed (buffer → clean after bootstrap).
    pub fn with_sentinels(&self, head: Key, tail: Key) -> SkipList {
        let map = |k: Key| {
            if k == self.head {
                head
            } else if k == self.tail {
                tail
            } else {
                k
            }
        };
        let towers = self
            .towers
            .iter()
            .map(|(k, t)| {
                let t = Tower {
                    height: t.height,
                    left: t.left.iter().map(|x| x.map(map)).collect(),
                    right: t.right.iter().map(|x| x.map(map)).collect(),
                };
                (map(*k), t)
            })
            .collect();
        SkipList {
            head,
            tail,
            towers,
            journal: None,
        }
    }

    /// Grows both sentinel towers to `h`, linking them directly on new levels.
    pub fn ensure_top(&mut self, h: u32) {
        let top = self.top();
        if h <= top {
            return;
        }
        for k in [self.head, self.tail] {
            let t = self.towers.get_mut(&k).unwrap();
            t.height = h;
            t.left.resize(h as usize + 1, None);
            t.right.resize(h as usize + 1, None);
        }
        for l in top + 1..=h {
            self.set_right(self.head, l, self.tail);
        }
    }

    /// Shrinks sentinel towers to the tallest remaining node. Levels being
    /// dropped must already be empty.
    pub fn normalize_top(&mut self) {
        let tallest = self
            .keys()
            .map(|k| self.towers[&k].height)
            .max()
            .unwrap_or(0);
        let top = self.top();
        for l in tallest + 1..=top {
            debug_assert_eq!(self.right(self.head, l), Some(self.tail));
            self.note_removed(Edge {
                a: self.head,
                b: self.tail,
                level: l,
            });
        }
        for k in [self.head, self.tail] {
            let t = self.towers.get_mut(&k).unwrap();
            t.height = tallest;
            t.left.truncate(tallest as usize + 1);
            t.right.truncate(tallest as usize + 1);
        }
    }

    /// Keys present at `level`, sentinels included, following right links.
    pub fn level_keys(&self, level: u32) -> Vec<Key> {
        let mut out = vec![self.head];
        let mut cur = self.head;
        while let Some(r) = self.right(cur, level) {
            out.push(r);
            cur = r;
            if out.len() > self.towers.len() + 1 {
                break;
            }
        }
        out
    }

    /// All links as `(a, right(a), level)`.
    pub fn edges(&self) -> BTreeSet<Edge> {
        let mut out = BTreeSet::new();
        for (&a, t) in &self.towers {
            for (l, r) in t.right.iter().enumerate() {
                if let Some(b) = r {
                    out.insert(Edge {
                        a,
                        b: *b,
                        level: l as u32,
                    });
                }
            }
        }
        out
    }

    /// Predecessors of `k` at every level up to `h` (classic top-down walk).
    pub fn predecessors(&self, k: Key, h: u32) -> Vec<Key> {
        let mut pred = vec![self.head; h as usize + 1];
        let mut cur = self.head;
        for l in (0..=self.top()).rev() {
            while let Some(r) = self.right(cur, l) {
                if r < k {
                    cur = r;
                } else {
                    break;
                }
            }
            if l <= h {
                pred[l as usize] = cur;
            }
        }
        pred
    }

    /// Sequential single-key insertion used as the merge oracle.
    pub fn oracle_insert(&mut self, k: Key, h: u32) {
        assert!(!self.contains(k), "duplicate key {k}");
        self.ensure_top(h);
        let pred = self.predecessors(k, h);
        self.insert_tower(k, h);
        for l in 0..=h {
            let p = pred[l as usize];
            let r = self.right(p, l).expect("predecessor has a right link");
            self.set_right(p, l, k);
            self.set_right(k, l, r);
        }
    }

    /// Sequential single-key removal used as the delete oracle.
    pub fn oracle_delete(&mut self, k: Key) -> bool {
        let Some(h) = self.height(k) else {
            return false;
        };
        for l in 0..=h {
            let a = self.left(k, l).expect("left link");
            let b = self.right(k, l).expect("right link");
            self.set_right(a, l, b);
        }
        self.remove_tower(k);
        self.normalize_top();
        true
    }

    /// Top-down search from `start` (at its top level) towards `target`,
    /// always finishing on level 0. `visit` is called for every node the
    /// walk steps onto and may veto the step.
    pub fn search_with<E>(
        &self,
        start: Key,
        target: Key,
        mut visit: impl FnMut(Key) -> Result<(), E>,
    ) -> Result<SearchOutcome, E> {
        let mut out = SearchOutcome::default();
        let Some(mut l) = self.height(start) else {
            return Ok(out);
        };
        let mut cur = start;
        loop {
            while let Some(r) = self.right(cur, l) {
                if r <= target {
                    visit(r)?;
                    cur = r;
                    out.horizontal += 1;
                } else {
                    break;
                }
            }
            if l == 0 {
                break;
            }
            l -= 1;
            out.path_rounds += 1;
        }
        out.path_rounds += out.horizontal;
        out.found = cur == target;
        Ok(out)
    }

    pub fn search(&self, start: Key, target: Key) -> SearchOutcome {
        self.search_with::<()>(start, target, |_| Ok(())).unwrap()
    }

    pub fn validate(&self) -> Result<(), Violation> {
        let top = self.top();
        let tallest = self
            .keys()
            .map(|k| self.towers[&k].height)
            .max()
            .unwrap_or(0);
        if self.towers[&self.tail].height != top || tallest != top {
            return Err(Violation::SentinelHeight { top, tallest });
        }
        for (&k, t) in &self.towers {
            for l in 0..=t.height {
                let li = l as usize;
                match t.right[li] {
                    None if k != self.tail => {
                        return Err(Violation::MissingLink { key: k, level: l })
                    }
                    Some(r) => {
                        let ok = self.height(r).is_some_and(|h| h >= l);
                        if !ok {
                            return Err(Violation::DanglingLink {
                                key: k,
                                level: l,
                                target: r,
                            });
                        }
                        if r <= k {
                            return Err(Violation::Unsorted { key: k, level: l });
                        }
                        if self.left(r, l) != Some(k) {
                            return Err(Violation::BrokenBackLink { key: k, level: l });
                        }
                    }
                    None => {}
                }
                match t.left[li] {
                    None if k != self.head => {
                        return Err(Violation::MissingLink { key: k, level: l })
                    }
                    Some(x) => {
                        let ok = self.height(x).is_some_and(|h| h >= l);
                        if !ok {
                            return Err(Violation::DanglingLink {
                                key: k,
                                level: l,
                                target: x,
                            });
                        }
                        if x >= k {
                            return Err(Violation::Unsorted { key: k, level: l });
                        }
                        if self.right(x, l) != Some(k) {
                            return Err(Violation::BrokenBackLink { key: k, level: l });
                        }
                    }
                    None => {}
                }
            }
        }
        for l in 0..=top {
            let walked = self.level_keys(l);
            let expected: Vec<Key> = self
                .towers
                .iter()
                .filter(|(_, t)| t.height >= l)
                .map(|(k, _)| *k)
                .collect();
            if walked != expected {
                let at = walked
                    .iter()
                    .zip(&expected)
                    .find(|(a, b)| a != b)
                    .map(|(a, _)| *a)
                    .unwrap_or(self.head);
                return Err(Violation::Membership { key: at, level: l });
            }
        }
        Ok(())
    }

    /// One line per tower: `tag key height left/right ...` from level 0 up.
    pub fn dump(&self, tag: NetworkTag) -> String {
        let mut s = String::new();
        for (k, t) in &self.towers {
            let _ = write!(s, "{} {} {}", tag.as_str(), k, t.height);
            for l in 0..=t.height as usize {
                let f = |x: Option<Key>| x.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
                let _ = write!(s, " {}/{}", f(t.left[l]), f(t.right[l]));
            }
            s.push('\n');
        }
        s
    }

    /// Inverse of [`SkipList::dump`] for a single network's lines.
    pub fn parse_dump(lines: &[&str]) -> Result<Self, String> {
        let mut towers = BTreeMap::new();
        for (i, line) in lines.iter().enumerate() {
            let bad = |what: &str| format!("line {}: {what}", i + 1);
            let mut it = line.split_whitespace();
            let _tag = it.next().ok_or_else(|| bad("empty"))?;
            let key: Key = it
                .next()
                .ok_or_else(|| bad("no key"))?
                .parse()
                .map_err(|_| bad("bad key"))?;
            let height: u32 = it
                .next()
                .ok_or_else(|| bad("no height"))?
                .parse()
                .map_err(|_| bad("bad height"))?;
            let mut t = Tower::new(height);
            for l in 0..=height as usize {
                let cell = it.next().ok_or_else(|| bad("missing level"))?;
                let (a, b) = cell.split_once('/').ok_or_else(|| bad("bad cell"))?;
                let p = |x: &str| -> Result<Option<Key>, String> {
                    if x == "-" {
                        Ok(None)
                    } else {
                        x.parse().map(Some).map_err(|_| bad("bad link"))
                    }
                };
                t.left[l] = p(a)?;
                t.right[l] = p(b)?;
            }
            towers.insert(key, t);
        }
        let head = *towers.keys().next().ok_or("no towers")?;
        let tail = *towers.keys().next_back().ok_or("no towers")?;
        if !head.is_virtual() || !tail.is_virtual() || head == tail {
            return Err("dump lacks sentinels".into());
        }
        Ok(SkipList {
            head,
            tail,
            towers,
            journal: None,
        })
    }

    /// Test hook: overwrite a raw pointer without touching its mirror.
    pub fn corrupt_right(&mut self, k: Key, level: u32, to: Option<Key>) {
        self.towers.get_mut(&k).unwrap().right[level as usize] = to;
    }

    pub fn corrupt_left(&mut self, k: Key, level: u32, to: Option<Key>) {
        self.towers.get_mut(&k).unwrap().left[level as usize] = to;
    }

    /// Maximal runs of consecutive equal-height towers at each level
    /// (only towers whose height is exactly that level), as lengths.
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in 0..=self.top() {
            let mut run = 0;
            for k in self.level_keys(l) {
                if !self.is_sentinel(k) && self.towers[&k].height == l {
                    run += 1;
                } else if run > 0 {
                    out.push(run);
                    run = 0;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo() -> SkipList {
        SkipList::oracle_build(&[1, 5, 23, 25, 50, 98], &[0, 2, 1, 0, 3, 0]).unwrap()
    }

    #[test]
    fn empty_list_has_only_sentinels() {
        let s = SkipList::oracle_build(&[], &[]).unwrap();
        assert_eq!(s.len(), 0);
        assert_eq!(s.level_keys(0), vec![Key::NegInf, Key::PosInf]);
        s.validate().unwrap();
    }

    #[test]
    fn build_keeps_order_and_validates() {
        let s = demo();
        s.validate().unwrap();
        let ids: Vec<_> = s.level_keys(0).into_iter().filter_map(|k| k.id()).collect();
        assert_eq!(ids, vec![1, 5, 23, 25, 50, 98]);
        assert_eq!(
            s.level_keys(2),
            vec![Key::NegInf, Key::Id(5), Key::Id(50), Key::PosInf]
        );
        assert_eq!(s.top(), 3);
    }

    #[test]
    fn unsorted_input_rejected() {
        assert_eq!(
            SkipList::oracle_build(&[3, 2], &[0, 0]),
            Err(BuildError::UnsortedInput(1))
        );
    }

    #[test]
    fn reversed_link_is_located() {
        let mut s = demo();
        // point 23's level-1 right link back at 5
        s.corrupt_right(Key::Id(23), 1, Some(Key::Id(5)));
        let v = s.validate().unwrap_err();
        assert_eq!(v.location(), Some((Key::Id(23), 1)));
    }

    #[test]
    fn search_costs() {
        let s = demo();
        let r = s.search(Key::NegInf, Key::NegInf);
        assert!(r.found);
        assert_eq!(r.path_rounds, s.top() as u64);
        assert!(s.search(Key::NegInf, Key::Id(25)).found);
        assert!(!s.search(Key::NegInf, Key::Id(26)).found);
    }

    #[test]
    fn insert_delete_roundtrip() {
        let mut s = demo();
        let before = s.clone();
        s.oracle_insert(Key::Id(88), 4);
        s.validate().unwrap();
        assert_eq!(s.top(), 4);
        s.oracle_delete(Key::Id(88));
        s.validate().unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn dump_roundtrip() {
        let s = demo();
        let text = s.dump(NetworkTag::Clean);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(SkipList::parse_dump(&lines).unwrap(), s);
    }

    #[test]
    fn journal_counts_links() {
        let mut s = demo();
        s.start_journal();
        s.oracle_delete(Key::Id(23));
        let j = s.stop_journal();
        // two levels: each drops two links, forms one bridge
        assert_eq!(j.formed.len(), 2);
        assert_eq!(j.removed.len(), 4);
    }

    #[test]
    fn height_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut sum = 0u64;
        let mut ge1 = 0;
        let mut ge4 = 0;
        for _ in 0..n {
            let h = sample_height(&mut rng, 0.5);
            sum += h as u64;
            ge1 += (h >= 1) as u32;
            ge4 += (h >= 4) as u32;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((ge1 as f64 / n as f64 - 0.5).abs() < 0.005);
        assert!((ge4 as f64 / n as f64 - 0.0625).abs() < 0.002);
    }
}
