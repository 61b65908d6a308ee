//! Merge phase: the buffer is cut into cohesive groups (maximal runs of
//! equal height), and the groups walk down the clean list top-down, each
//! one starting where its parents' walks prove its search path begins.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::key::Key;
use crate::simcore::{Fabric, Payload, SimError};
use crate::skiplist::SkipList;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MergeError {
    #[error("malformed buffer: {0}")]
    MalformedBuffer(String),
    #[error("splice conflict at {at} on level {level}")]
    SpliceConflict { at: Key, level: u32 },
    #[error("merge made no progress in round {round}")]
    Stalled { round: u64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Equal-height buffer nodes that are contiguous on their top level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohesiveGroup {
    pub members: Vec<Key>,
    pub height: u32,
    /// Nearest taller buffer nodes; `None` only for the top group.
    pub left_parent: Option<Key>,
    pub right_parent: Option<Key>,
}

impl CohesiveGroup {
    pub fn leader(&self) -> Key {
        self.members[0]
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    /// `groups[0]` is the top group.
    pub groups: Vec<CohesiveGroup>,
    pub children: HashMap<Key, Vec<usize>>,
    pub rounds: u64,
    pub shortcut_edges: u64,
}

impl Preprocessed {
    pub fn max_group(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.members.len())
            .max()
            .unwrap_or(0)
    }
}

/// Pure group/parent computation from the buffer's links.
pub fn cohesive_groups(buffer: &SkipList) -> Vec<CohesiveGroup> {
    let top = buffer.top();
    let mut groups = Vec::new();
    for h in (0..=top).rev() {
        let keys = buffer.level_keys(h);
        let mut run: Vec<Key> = Vec::new();
        let mut before: Option<Key> = None;
        for (i, &k) in keys.iter().enumerate() {
            if buffer.height(k) == Some(h) {
                run.push(k);
                if i + 1 < keys.len() {
                    continue;
                }
            }
            if !run.is_empty() {
                let after = (buffer.height(k) != Some(h)).then_some(k);
                groups.push(CohesiveGroup {
                    members: std::mem::take(&mut run),
                    height: h,
                    left_parent: before,
                    right_parent: after,
                });
            }
            before = Some(k);
        }
    }
    groups
}

/// Group identification by leftward ID forwarding over the group's own
/// level, leader announcement, parent discovery and child registration.
pub fn preprocess(buffer: &SkipList, fabric: &mut dyn Fabric) -> Result<Preprocessed, MergeError> {
    buffer
        .validate()
        .map_err(|v| MergeError::MalformedBuffer(v.to_string()))?;
    let start = fabric.round();
    let groups = cohesive_groups(buffer);
    let max_run = groups.iter().map(|g| g.members.len()).max().unwrap_or(1);
    for d in 1..max_run {
        for g in &groups {
            for j in 0..g.members.len().saturating_sub(d) {
                fabric.send(
                    g.members[j + d],
                    g.members[j],
                    Payload::GroupId {
                        key: g.members[j + d],
                    },
                )?;
            }
        }
        fabric.barrier()?;
    }
    let shortcut_edges: u64 = groups
        .iter()
        .map(|g| {
            let s = g.members.len() as u64;
            s * s.saturating_sub(1) / 2 - s.saturating_sub(1)
        })
        .sum();
    fabric.charge_edges(shortcut_edges, 0);
    for g in &groups {
        for &m in &g.members[1..] {
            fabric.send(g.leader(), m, Payload::Leader { key: g.leader() })?;
        }
    }
    fabric.barrier()?;
    for g in &groups {
        let (first, last) = (g.members[0], *g.members.last().unwrap());
        for &m in &g.members {
            if let (Some(p), true) = (g.left_parent, m != first) {
                fabric.send(first, m, Payload::Leader { key: p })?;
            }
            if let (Some(p), true) = (g.right_parent, m != last) {
                fabric.send(last, m, Payload::Leader { key: p })?;
            }
        }
    }
    fabric.barrier()?;
    let mut children: HashMap<Key, Vec<usize>> = HashMap::new();
    for (gid, g) in groups.iter().enumerate() {
        for p in [g.left_parent, g.right_parent].into_iter().flatten() {
            children.entry(p).or_default().push(gid);
            for &m in &g.members {
                fabric.send(m, p, Payload::Register { joiner: m })?;
            }
        }
    }
    fabric.barrier()?;
    // state initialisation is local
    fabric.barrier()?;
    Ok(Preprocessed {
        groups,
        children,
        rounds: fabric.round() - start,
        shortcut_edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeEventKind {
    Start,
    Split,
    MoveRight,
    MoveDown,
    MergedAtLevel,
    Done,
}

impl MergeEventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MergeEventKind::Start => "start",
            MergeEventKind::Split => "split",
            MergeEventKind::MoveRight => "move_right",
            MergeEventKind::MoveDown => "move_down",
            MergeEventKind::MergedAtLevel => "merged_at_level",
            MergeEventKind::Done => "done",
        }
    }
}

/// One group action. `at` is the clean-side node involved: the start point,
/// the split/move target `z`, or the left splice neighbour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub cycle: u64,
    pub round: u64,
    pub group_leader: Key,
    pub event: MergeEventKind,
    pub level: u32,
    pub at: Key,
    /// Start events only: activated before both parents merged.
    pub early: bool,
}

impl fmt::Display for MergeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.round,
            self.group_leader,
            self.event.as_str(),
            self.level,
            self.at
        )?;
        if self.early {
            write!(f, " early")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupTiming {
    pub leader: Key,
    pub height: u32,
    pub size: usize,
    pub start: u64,
    pub done: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeSummary {
    pub cycle: u64,
    pub groups: u64,
    pub max_group: u64,
    pub prep_rounds: u64,
    pub rounds_used: u64,
    pub messages_used: u64,
    pub edges_formed: u64,
    pub edges_deleted: u64,
}

#[derive(Debug, Clone, Default)]
pub struct MergeOutcome {
    pub summary: MergeSummary,
    pub events: Vec<MergeEvent>,
    pub timings: Vec<GroupTiming>,
}

impl MergeOutcome {
    pub fn trace_text(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Scan { v: Key, level: u32 },
    Splice { v: Key, z: Key, level: u32 },
    Handoff { v: Key, level: u32, resume: u64 },
    Descend { v: Key, z: Key, level: u32 },
    Done,
}

#[derive(Debug)]
struct Walker {
    gid: usize,
    height: u32,
    members: Vec<Key>,
    step: Step,
}

#[derive(Debug, Default)]
struct Waiting {
    best_left: Option<Key>,
    right_free: bool,
    /// Rightmost known entry point `(node, level)` left of the group.
    entry: Option<(Key, u32)>,
}

struct Run<'a> {
    cycle: u64,
    t: u64,
    clean: &'a mut SkipList,
    pre: &'a Preprocessed,
    buffered: HashSet<Key>,
    lowest: HashMap<Key, u32>,
    waiting: BTreeMap<usize, Waiting>,
    reports: Vec<(u64, usize, Key, u32)>,
    events: Vec<MergeEvent>,
}

impl Run<'_> {
    fn merged(&self, k: Key, level: u32) -> bool {
        !self.buffered.contains(&k) || self.lowest.get(&k).is_some_and(|m| *m <= level)
    }

    fn event(&mut self, leader: Key, event: MergeEventKind, level: u32, at: Key, early: bool) {
        self.events.push(MergeEvent {
            cycle: self.cycle,
            round: self.t,
            group_leader: leader,
            event,
            level,
            at,
            early,
        });
    }

    /// Sends `payload` from each member to its still-idle child groups.
    fn notify_children(
        &mut self,
        members: &[Key],
        payload: Payload,
        report: &[Key],
        level: u32,
        fabric: &mut dyn Fabric,
    ) -> Result<(), SimError> {
        for &m in members {
            let Some(kids) = self.pre.children.get(&m) else {
                continue;
            };
            for &gid in kids {
                if self.waiting.contains_key(&gid) {
                    fabric.send(m, self.pre.groups[gid].leader(), payload.clone())?;
                    for &k in report {
                        self.reports.push((self.t + 1, gid, k, level));
                    }
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self) {
        let t = self.t;
        let (now, later): (Vec<_>, Vec<_>) = self.reports.drain(..).partition(|r| r.0 <= t);
        self.reports = later;
        for (_, gid, k, level) in now {
            let g = &self.pre.groups[gid];
            let Some(w) = self.waiting.get_mut(&gid) else {
                continue;
            };
            // only clean nodes tall enough to be on the group's top level qualify
            if self.buffered.contains(&k) || self.clean.height(k).is_none_or(|h| h < g.height) {
                continue;
            }
            let (lo, hi) = (g.members[0], *g.members.last().unwrap());
            if k < lo {
                let e = (k, level.max(g.height));
                if w.entry
                    .is_none_or(|(b, bl)| (k, std::cmp::Reverse(e.1)) > (b, std::cmp::Reverse(bl)))
                {
                    w.entry = Some(e);
                }
            }
            if g.left_parent.is_some_and(|p| p < k) && k < lo {
                w.best_left = w.best_left.max(Some(k));
            }
            if g.right_parent.is_some_and(|p| k < p) && hi < k {
                w.right_free = true;
            }
        }
    }

    /// Moving right on or above the group's own top level continues from the
    /// new node's top, like a finger search; lower levels are already fenced
    /// in by the splice one level up.
    fn resume_level(&self, w: &Walker, z: Key, level: u32) -> u32 {
        if level >= w.height {
            self.clean
                .height(z)
                .expect("scanned node present")
                .max(level)
        } else {
            level
        }
    }

    /// Reads `right(v, level)` for the walker and decides its next step.
    fn scan(
        &mut self,
        w: &mut Walker,
        v: Key,
        level: u32,
        spawned: &mut Vec<Walker>,
        fabric: &mut dyn Fabric,
    ) -> Result<(), MergeError> {
        let leader = w.members[0];
        let z = self.clean.right(v, level).expect("scan point is linked");
        fabric.send(
            v,
            leader,
            Payload::Trace {
                v,
                z,
                level,
                down: false,
            },
        )?;
        let members = w.members.clone();
        self.notify_children(
            &members,
            Payload::Trace {
                v,
                z,
                level,
                down: false,
            },
            &[v, z],
            level,
            fabric,
        )?;
        if level > w.height {
            // above the group's own top: search only, nothing to splice
            if z < leader {
                self.event(leader, MergeEventKind::MoveRight, level, z, false);
                w.step = Step::Scan {
                    v: z,
                    level: self.resume_level(w, z, level),
                };
            } else {
                self.event(leader, MergeEventKind::MoveDown, level - 1, v, false);
                w.step = Step::Scan {
                    v,
                    level: level - 1,
                };
            }
            return Ok(());
        }
        let cut = w.members.partition_point(|m| *m < z);
        assert!(
            w.members[..cut].iter().all(|m| *m < z) && w.members[cut..].iter().all(|m| *m > z),
            "split is not a prefix/suffix partition"
        );
        if cut == w.members.len() {
            for &m in &w.members[1..] {
                fabric.send(
                    leader,
                    m,
                    Payload::Trace {
                        v,
                        z,
                        level,
                        down: false,
                    },
                )?;
            }
            w.step = Step::Splice { v, z, level };
        } else if cut == 0 {
            self.event(leader, MergeEventKind::MoveRight, level, z, false);
            w.step = Step::Scan {
                v: z,
                level: self.resume_level(w, z, level),
            };
        } else {
            self.event(leader, MergeEventKind::Split, level, z, false);
            let right = w.members.split_off(cut);
            fabric.send(leader, right[0], Payload::Leader { key: right[0] })?;
            for &m in &w.members[1..] {
                fabric.send(
                    leader,
                    m,
                    Payload::Trace {
                        v,
                        z,
                        level,
                        down: false,
                    },
                )?;
            }
            w.step = Step::Splice { v, z, level };
            let resume_level = self.resume_level(w, z, level);
            spawned.push(Walker {
                gid: w.gid,
                height: w.height,
                members: right,
                step: Step::Handoff {
                    v: z,
                    level: resume_level,
                    resume: self.t + 3,
                },
            });
        }
        Ok(())
    }
}

/// Merges `buffer` into `clean` in place. The buffer sentinels ride along
/// as ordinary top-group members and are unlinked at the end.
pub fn wave_merge(
    clean: &mut SkipList,
    buffer: &SkipList,
    fabric: &mut dyn Fabric,
    cycle: u64,
) -> Result<MergeOutcome, MergeError> {
    let mut out = MergeOutcome {
        summary: MergeSummary {
            cycle,
            ..Default::default()
        },
        ..Default::default()
    };
    if buffer.is_empty() {
        return Ok(out);
    }
    let start_round = fabric.round();
    let start_work = fabric.work();
    let pre = preprocess(buffer, fabric)?;
    let top = buffer.top();
    clean.start_journal();
    clean.ensure_top(top);

    let walk_start = fabric.round();
    let mut run = Run {
        cycle,
        t: 0,
        clean,
        pre: &pre,
        buffered: buffer
            .keys()
            .chain([buffer.head(), buffer.tail()])
            .collect(),
        lowest: HashMap::new(),
        waiting: (1..pre.groups.len())
            .map(|g| (g, Waiting::default()))
            .collect(),
        reports: Vec::new(),
        events: Vec::new(),
    };
    let mut timings: Vec<GroupTiming> = pre
        .groups
        .iter()
        .map(|g| GroupTiming {
            leader: g.leader(),
            height: g.height,
            size: g.members.len(),
            start: 0,
            done: 0,
        })
        .collect();
    let top_group = &pre.groups[0];
    for &m in &top_group.members {
        run.clean.insert_tower(m, top);
    }
    run.event(
        top_group.leader(),
        MergeEventKind::Start,
        top,
        Key::NegInf,
        false,
    );
    let mut walkers = vec![Walker {
        gid: 0,
        height: top,
        members: top_group.members.clone(),
        step: Step::Scan {
            v: Key::NegInf,
            level: top,
        },
    }];

    loop {
        run.t = fabric.round() - walk_start;
        run.deliver();
        let mut progressed = false;

        let ready: Vec<(usize, (Key, u32), bool)> = run
            .waiting
            .iter()
            .filter_map(|(&gid, w)| {
                let g = &pre.groups[gid];
                let (pl, pr) = (g.left_parent.unwrap(), g.right_parent.unwrap());
                let (lm, rm) = (run.merged(pl, g.height), run.merged(pr, g.height));
                let left = lm || w.best_left.is_some();
                let right = rm || w.right_free;
                (left && right).then(|| {
                    let mut from = w.entry;
                    if lm && from.is_none_or(|(k, _)| k < pl) {
                        from = Some((pl, g.height));
                    }
                    (
                        gid,
                        from.expect("a resolved left side yields an entry"),
                        !(lm && rm),
                    )
                })
            })
            .collect();
        for (gid, (v, level), early) in ready {
            run.waiting.remove(&gid);
            let g = &pre.groups[gid];
            for &m in &g.members {
                run.clean.insert_tower(m, g.height);
            }
            run.event(g.leader(), MergeEventKind::Start, level, v, early);
            timings[gid].start = run.t;
            walkers.push(Walker {
                gid,
                height: g.height,
                members: g.members.clone(),
                step: Step::Scan { v, level },
            });
        }
        walkers.sort_by_key(|w| w.members[0]);

        let mut spawned = Vec::new();
        let mut splices: Vec<(Vec<Key>, Key, Key, u32)> = Vec::new();
        for w in walkers.iter_mut() {
            let leader = w.members[0];
            match w.step {
                Step::Scan { v, level } => {
                    progressed = true;
                    run.scan(w, v, level, &mut spawned, fabric)?;
                }
                Step::Splice { v, z, level } => {
                    progressed = true;
                    let mut chain = vec![v];
                    chain.extend(&w.members);
                    chain.push(z);
                    for p in chain.windows(2) {
                        fabric.send(
                            p[0],
                            p[1],
                            Payload::Splice {
                                level,
                                left: p[0],
                                right: p[1],
                            },
                        )?;
                    }
                    splices.push((w.members.clone(), v, z, level));
                    run.event(leader, MergeEventKind::MergedAtLevel, level, v, false);
                    run.notify_children(
                        &w.members,
                        Payload::Splice {
                            level,
                            left: v,
                            right: z,
                        },
                        &[],
                        level,
                        fabric,
                    )?;
                    if level == 0 {
                        run.event(leader, MergeEventKind::Done, 0, v, false);
                        timings[w.gid].done = timings[w.gid].done.max(run.t);
                        w.step = Step::Done;
                    } else {
                        w.step = Step::Descend { v, z, level };
                    }
                }
                Step::Descend { v, z, level } => {
                    // the splice neighbours must already sit one level down
                    if run.merged(v, level - 1) && run.merged(z, level - 1) {
                        progressed = true;
                        run.event(leader, MergeEventKind::MoveDown, level - 1, v, false);
                        run.scan(w, v, level - 1, &mut spawned, fabric)?;
                    }
                }
                Step::Handoff { v, level, resume } => {
                    progressed = true;
                    if run.t >= resume {
                        run.scan(w, v, level, &mut spawned, fabric)?;
                    } else if run.t + 1 == resume {
                        for &m in &w.members[1..] {
                            fabric.send(leader, m, Payload::Leader { key: leader })?;
                        }
                    }
                }
                Step::Done => {}
            }
        }

        for (members, v, z, level) in splices {
            if run.clean.right(v, level) != Some(z) {
                return Err(MergeError::SpliceConflict { at: v, level });
            }
            let mut prev = v;
            for &m in &members {
                run.clean.set_right(prev, level, m);
                prev = m;
                run.lowest.insert(m, level);
            }
            run.clean.set_right(prev, level, z);
        }
        let journal = run.clean.take_journal();
        fabric.charge_links(&journal);
        walkers.retain(|w| !matches!(w.step, Step::Done));
        walkers.extend(spawned);
        if !progressed {
            return Err(MergeError::Stalled { round: run.t });
        }
        fabric.barrier()?;
        if walkers.is_empty() && run.waiting.is_empty() {
            break;
        }
    }

    let events = std::mem::take(&mut run.events);
    // drop the buffer sentinels and the group shortcuts
    for s in [Key::BufNegInf, Key::BufPosInf] {
        for l in 0..=top {
            let a = clean.left(s, l).expect("sentinel linked on the left");
            let b = clean.right(s, l).expect("sentinel linked on the right");
            fabric.send(s, a, Payload::Introduce { level: l, peer: b })?;
            fabric.send(s, b, Payload::Introduce { level: l, peer: a })?;
            clean.set_right(a, l, b);
        }
        clean.remove_tower(s);
    }
    clean.normalize_top();
    let journal = clean.stop_journal();
    fabric.charge_links(&journal);
    fabric.charge_edges(0, pre.shortcut_edges);
    fabric.barrier()?;

    let end = fabric.work();
    out.summary.groups = pre.groups.len() as u64;
    out.summary.max_group = pre.max_group() as u64;
    out.summary.prep_rounds = pre.rounds;
    out.summary.rounds_used = fabric.round() - start_round;
    out.summary.messages_used = end.messages - start_work.messages;
    out.summary.edges_formed = end.edges_formed - start_work.edges_formed;
    out.summary.edges_deleted = end.edges_deleted - start_work.edges_deleted;
    out.events = events;
    out.timings = timings;
    Ok(out)
}

/// Sequential reference: insert every buffer key with its height.
pub fn oracle_merge(clean: &SkipList, buffer: &SkipList) -> SkipList {
    let mut c = clean.clone();
    for k in buffer.keys() {
        c.oracle_insert(k, buffer.height(k).unwrap());
    }
    c.normalize_top();
    c
}

/// Rounds a classic top-down insertion of `k` into `clean` would spend:
/// one per horizontal step plus one per level.
pub fn classic_insertion_rounds(clean: &SkipList, k: Key, h: u32) -> u64 {
    let out = clean.search(clean.head(), k);
    out.path_rounds + u64::from(h) + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::LocalFabric;

    fn buffer(keys: &[u64], heights: &[u32]) -> SkipList {
        SkipList::build_between(Key::BufNegInf, Key::BufPosInf, keys, heights).unwrap()
    }

    #[test]
    fn groups_of_a_small_buffer() {
        let b = buffer(&[1, 23, 25, 55, 98], &[0, 3, 1, 0, 3]);
        let gs = cohesive_groups(&b);
        assert_eq!(
            gs[0].members,
            vec![Key::BufNegInf, Key::Id(23), Key::Id(98), Key::BufPosInf]
        );
        assert_eq!(gs[0].left_parent, None);
        let g25 = gs.iter().find(|g| g.members == vec![Key::Id(25)]).unwrap();
        assert_eq!(
            (g25.left_parent, g25.right_parent),
            (Some(Key::Id(23)), Some(Key::Id(98)))
        );
        let g55 = gs.iter().find(|g| g.members == vec![Key::Id(55)]).unwrap();
        assert_eq!(
            (g55.left_parent, g55.right_parent),
            (Some(Key::Id(25)), Some(Key::Id(98)))
        );
        assert_eq!(gs.len(), 4);
    }

    #[test]
    fn flat_buffer_is_one_group() {
        let b = buffer(&[4, 8, 15], &[0, 0, 0]);
        let gs = cohesive_groups(&b);
        assert_eq!(gs.len(), 1);
        assert_eq!(gs[0].members.len(), 5);
    }

    #[test]
    fn empty_buffer_is_noop() {
        let mut c = SkipList::oracle_build(&[3, 9], &[1, 0]).unwrap();
        let before = c.clone();
        let mut f = LocalFabric::new();
        let out = wave_merge(&mut c, &SkipList::buffer(), &mut f, 0).unwrap();
        assert_eq!(c, before);
        assert_eq!(f.work, Default::default());
        assert_eq!(out.summary.rounds_used, 0);
    }

    #[test]
    fn merges_into_empty_clean() {
        let mut c = SkipList::clean();
        let b = buffer(&[2, 7, 11], &[1, 0, 2]);
        let want = oracle_merge(&c, &b);
        wave_merge(&mut c, &b, &mut LocalFabric::new(), 0).unwrap();
        c.validate().unwrap();
        assert_eq!(c, want);
    }

    #[test]
    fn interleaved_matches_oracle() {
        let mut c = SkipList::oracle_build(&[10, 20, 30, 40, 50], &[2, 0, 1, 3, 0]).unwrap();
        let b = buffer(&[5, 15, 25, 35, 45, 55], &[0, 2, 0, 1, 4, 0]);
        let want = oracle_merge(&c, &b);
        let out = wave_merge(&mut c, &b, &mut LocalFabric::new(), 0).unwrap();
        c.validate().unwrap();
        assert_eq!(c, want);
        assert!(out.events.iter().any(|e| e.event == MergeEventKind::Done));
    }
}
