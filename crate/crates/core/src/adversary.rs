//! Oblivious churn schedules and query workloads.
//!
//! Everything here is a pure function of `seed_adv` and the parameters; the
//! schedule is generated in full before the simulation starts.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::key::NodeId;
use crate::simcore::log2;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundChurn {
    pub leaves: Vec<NodeId>,
    /// `(new node, attach target)`.
    pub joins: Vec<(NodeId, NodeId)>,
}

impl RoundChurn {
    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty() && self.joins.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    UniformRandom,
    TargetedCommittee,
    Burst,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform_random" => Ok(Strategy::UniformRandom),
            "targeted_committee" => Ok(Strategy::TargetedCommittee),
            "burst" => Ok(Strategy::Burst),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    pub n: usize,
    pub rate: usize,
    /// Total rounds, bootstrap included.
    pub horizon: u64,
    pub bootstrap: u64,
    pub strategy: Strategy,
    pub c_churn: f64,
    /// Victim set size for `targeted_committee`.
    pub victim_size: usize,
    pub burst_on: u64,
    pub burst_off: u64,
}

impl ScheduleParams {
    pub fn new(n: usize, rate: usize, horizon: u64, bootstrap: u64, strategy: Strategy) -> Self {
        ScheduleParams {
            n,
            rate,
            horizon,
            bootstrap,
            strategy,
            c_churn: 1.0,
            victim_size: (2.0 * log2(n)).ceil() as usize,
            burst_on: 20,
            burst_off: 400,
        }
    }

    pub fn rate_cap(&self) -> usize {
        rate_cap(self.n, self.c_churn)
    }
}

pub fn rate_cap(n: usize, c_churn: f64) -> usize {
    (c_churn * n as f64 / log2(n)).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdversaryError {
    #[error("churn rate {rate} exceeds the cap {cap}")]
    RateTooHigh { rate: usize, cap: usize },
    #[error("horizon {horizon} is shorter than the bootstrap length {bootstrap}")]
    HorizonTooShort { horizon: u64, bootstrap: u64 },
    #[error("schedule parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnSchedule {
    pub n: usize,
    pub bootstrap: u64,
    pub initial: Vec<NodeId>,
    pub rounds: Vec<RoundChurn>,
}

/// Join round and (optional) departure round of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Lifetime {
    pub joined: u64,
    pub left: Option<u64>,
}

impl Lifetime {
    /// Alive during every round of `[a, b]`.
    pub fn covers(&self, a: i64, b: i64) -> bool {
        (self.joined as i64) <= a && self.left.is_none_or(|l| (l as i64) > b)
    }

    /// Alive during some round of `[a, b]`.
    pub fn meets(&self, a: i64, b: i64) -> bool {
        (self.joined as i64) <= b && self.left.is_none_or(|l| (l as i64) > a)
    }
}

struct IdSpace {
    size: u64,
    used: HashSet<NodeId>,
}

impl IdSpace {
    fn new(n: usize) -> Self {
        let n = n.max(2) as u64;
        IdSpace {
            size: n.saturating_mul(n).saturating_mul(n),
            used: HashSet::new(),
        }
    }

    fn fresh(&mut self, rng: &mut impl Rng) -> NodeId {
        loop {
            let v = rng.random_range(1..self.size);
            if self.used.insert(v) {
                return v;
            }
        }
    }
}

pub fn gen_schedule(seed_adv: u64, p: &ScheduleParams) -> Result<ChurnSchedule, AdversaryError> {
    if p.rate > p.rate_cap() {
        return Err(AdversaryError::RateTooHigh {
            rate: p.rate,
            cap: p.rate_cap(),
        });
    }
    if p.horizon < p.bootstrap {
        return Err(AdversaryError::HorizonTooShort {
            horizon: p.horizon,
            bootstrap: p.bootstrap,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_adv);
    let mut ids = IdSpace::new(p.n);
    let initial: Vec<NodeId> = (0..p.n).map(|_| ids.fresh(&mut rng)).collect();
    let mut alive: BTreeSet<NodeId> = initial.iter().copied().collect();
    let mut victims: Vec<NodeId> = Vec::new();
    let mut rounds = Vec::with_capacity(p.horizon as usize);
    for t in 0..p.horizon {
        let mut rc = RoundChurn::default();
        let k = if t < p.bootstrap {
            0
        } else {
            match p.strategy {
                Strategy::Burst => {
                    let period = (p.burst_on + p.burst_off).max(1);
                    if (t - p.bootstrap) % period < p.burst_on {
                        p.rate
                    } else {
                        0
                    }
                }
                _ => p.rate,
            }
        };
        // keep enough survivors to host every joiner at a distinct node
        let k = k.min(alive.len() / 2);
        if k > 0 {
            match p.strategy {
                Strategy::TargetedCommittee => {
                    victims.retain(|v| alive.contains(v));
                    while rc.leaves.len() < k {
                        if victims.is_empty() {
                            let sorted: Vec<NodeId> = alive
                                .iter()
                                .copied()
                                .filter(|v| !rc.leaves.contains(v))
                                .collect();
                            let m = p.victim_size.clamp(1, sorted.len());
                            let start = rng.random_range(0..=sorted.len() - m);
                            victims = sorted[start..start + m].to_vec();
                        }
                        rc.leaves.push(victims.remove(0));
                    }
                }
                _ => {
                    let pool: Vec<NodeId> = alive.iter().copied().collect();
                    rc.leaves = pool.choose_multiple(&mut rng, k).copied().collect();
                    rc.leaves.sort_unstable();
                }
            }
            for v in &rc.leaves {
                alive.remove(v);
            }
            let hosts: Vec<NodeId> = alive.iter().copied().collect();
            let mut targets: Vec<NodeId> = hosts.choose_multiple(&mut rng, k).copied().collect();
            targets.shuffle(&mut rng);
            for host in targets {
                let v = ids.fresh(&mut rng);
                rc.joins.push((v, host));
            }
            for (v, _) in &rc.joins {
                alive.insert(*v);
            }
        }
        rounds.push(rc);
    }
    Ok(ChurnSchedule {
        n: p.n,
        bootstrap: p.bootstrap,
        initial,
        rounds,
    })
}

impl ChurnSchedule {
    pub fn horizon(&self) -> u64 {
        self.rounds.len() as u64
    }

    pub fn round(&self, t: u64) -> Option<&RoundChurn> {
        self.rounds.get(t as usize)
    }

    pub fn lifetimes(&self) -> HashMap<NodeId, Lifetime> {
        let mut m: HashMap<NodeId, Lifetime> = self
            .initial
            .iter()
            .map(|&v| {
                (
                    v,
                    Lifetime {
                        joined: 0,
                        left: None,
                    },
                )
            })
            .collect();
        for (t, rc) in self.rounds.iter().enumerate() {
            for v in &rc.leaves {
                if let Some(l) = m.get_mut(v) {
                    l.left = Some(t as u64);
                }
            }
            for (v, _) in &rc.joins {
                m.insert(
                    *v,
                    Lifetime {
                        joined: t as u64,
                        left: None,
                    },
                );
            }
        }
        m
    }

    /// Checks the stable-size and attachment rules; returns the first
    /// offending round.
    pub fn validate(&self, rate: usize) -> Result<(), String> {
        let mut alive: HashSet<NodeId> = self.initial.iter().copied().collect();
        if alive.len() != self.initial.len() {
            return Err("duplicate initial ids".into());
        }
        let mut seen = alive.clone();
        for (t, rc) in self.rounds.iter().enumerate() {
            let t = t as u64;
            if t < self.bootstrap && !rc.is_empty() {
                return Err(format!("round {t}: churn during bootstrap"));
            }
            if rc.leaves.len() != rc.joins.len() {
                return Err(format!(
                    "round {t}: {} leaves vs {} joins",
                    rc.leaves.len(),
                    rc.joins.len()
                ));
            }
            if rc.leaves.len() > rate {
                return Err(format!(
                    "round {t}: {} exceeds rate {rate}",
                    rc.leaves.len()
                ));
            }
            for v in &rc.leaves {
                if !alive.remove(v) {
                    return Err(format!("round {t}: leaver {v} not alive"));
                }
            }
            let mut hosts = HashSet::new();
            for (v, h) in &rc.joins {
                if !alive.contains(h) {
                    return Err(format!("round {t}: attach target {h} not a survivor"));
                }
                if !hosts.insert(*h) {
                    return Err(format!("round {t}: attach target {h} reused"));
                }
                if !seen.insert(*v) {
                    return Err(format!("round {t}: id {v} reused"));
                }
            }
            for (v, _) in &rc.joins {
                alive.insert(*v);
            }
        }
        Ok(())
    }

    /// Header line followed by one line per round:
    /// `<round> <leaves|-> <joins as id@host|->`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let init: Vec<String> = self.initial.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            s,
            "n={} bootstrap={} initial={}",
            self.n,
            self.bootstrap,
            init.join(",")
        );
        for (t, rc) in self.rounds.iter().enumerate() {
            let leaves = if rc.leaves.is_empty() {
                "-".to_string()
            } else {
                rc.leaves
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let joins = if rc.joins.is_empty() {
                "-".to_string()
            } else {
                rc.joins
                    .iter()
                    .map(|(v, h)| format!("{v}@{h}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let _ = writeln!(s, "{t} {leaves} {joins}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, AdversaryError> {
        let bad = |m: String| AdversaryError::Parse(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty schedule".into()))?;
        let mut n = None;
        let mut bootstrap = None;
        let mut initial = Vec::new();
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("bad header field {field}")))?;
            match k {
                "n" => n = v.parse().ok(),
                "bootstrap" => bootstrap = v.parse().ok(),
                "initial" => {
                    initial = if v.is_empty() {
                        vec![]
                    } else {
                        v.split(',')
                            .map(|x| x.parse())
                            .collect::<Result<_, _>>()
                            .map_err(|e| bad(format!("{e}")))?
                    }
                }
                _ => return Err(bad(format!("unknown header field {k}"))),
            }
        }
        let mut rounds = Vec::new();
        for (i, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0].parse::<usize>().ok() != Some(i) {
                return Err(bad(format!("bad round line {line:?}")));
            }
            let mut rc = RoundChurn::default();
            if parts[1] != "-" {
                for x in parts[1].split(',') {
                    rc.leaves
                        .push(x.parse().map_err(|_| bad(format!("bad id {x}")))?);
                }
            }
            if parts[2] != "-" {
                for x in parts[2].split(',') {
                    let (v, h) = x
                        .split_once('@')
                        .ok_or_else(|| bad(format!("bad join {x}")))?;
                    let v = v.parse().map_err(|_| bad(format!("bad id {v}")))?;
                    let h = h.parse().map_err(|_| bad(format!("bad id {h}")))?;
                    rc.joins.push((v, h));
                }
            }
            rounds.push(rc);
        }
        Ok(ChurnSchedule {
            n: n.ok_or_else(|| bad("missing n".into()))?,
            bootstrap: bootstrap.ok_or_else(|| bad("missing bootstrap".into()))?,
            initial,
            rounds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub x: NodeId,
    pub r: u64,
    pub s: NodeId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryWorkload {
    pub queries: Vec<Query>,
}

impl QueryWorkload {
    pub fn at(&self, r: u64) -> &[Query] {
        let a = self.queries.partition_point(|q| q.r < r);
        let b = self.queries.partition_point(|q| q.r <= r);
        &self.queries[a..b]
    }
}

/// Queries drawn from a stream derived from `seed_adv`. A third of the
/// targets are alive at issue time, a third were touched by recent churn
/// and a third never exist.
pub fn gen_queries(seed_adv: u64, schedule: &ChurnSchedule, density: f64) -> QueryWorkload {
    let mut out = QueryWorkload::default();
    if density <= 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_adv ^ 0x9e37_79b9_7f4a_7c15);
    let mut ids = IdSpace::new(schedule.n);
    ids.used.extend(schedule.initial.iter().copied());
    for rc in &schedule.rounds {
        ids.used.extend(rc.joins.iter().map(|(v, _)| *v));
    }
    let mut alive: BTreeSet<NodeId> = schedule.initial.iter().copied().collect();
    let mut recent: Vec<NodeId> = Vec::new();
    let per_round = density * schedule.n as f64;
    for (t, rc) in schedule.rounds.iter().enumerate() {
        for v in &rc.leaves {
            alive.remove(v);
            recent.push(*v);
        }
        for (v, _) in &rc.joins {
            alive.insert(*v);
            recent.push(*v);
        }
        if recent.len() > 4 * schedule.n.max(1) {
            recent.drain(..recent.len() - schedule.n.max(1));
        }
        let t = t as u64;
        if t < schedule.bootstrap || alive.is_empty() {
            continue;
        }
        let mut count = per_round.floor() as usize;
        if rng.random::<f64>() < per_round.fract() {
            count += 1;
        }
        if count == 0 {
            continue;
        }
        let pool: Vec<NodeId> = alive.iter().copied().collect();
        for _ in 0..count {
            let s = *pool.choose(&mut rng).unwrap();
            let x = match rng.random_range(0..3) {
                0 => *pool.choose(&mut rng).unwrap(),
                1 if !recent.is_empty() => *recent.choose(&mut rng).unwrap(),
                _ => ids.fresh(&mut rng),
            };
            out.queries.push(Query { x, r: t, s });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Present,
    Absent,
    Mixed,
}

/// Classifies a query given how far membership of the queried list may lag
/// the schedule: a key is `Present` if alive over `[r - present_lag, r + q]`
/// and `Absent` if never alive over `[r - absent_lag, r + q]`.
pub fn classify(
    query: &Query,
    lifetimes: &HashMap<NodeId, Lifetime>,
    present_lag: u64,
    absent_lag: u64,
    q: u64,
) -> GroundTruth {
    let r = query.r as i64;
    match lifetimes.get(&query.x) {
        None => GroundTruth::Absent,
        Some(life) => {
            if life.covers(r - present_lag as i64, r + q as i64) {
                GroundTruth::Present
            } else if !life.meets(r - absent_lag as i64, r + q as i64) {
                GroundTruth::Absent
            } else {
                GroundTruth::Mixed
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_empty() {
        let p = ScheduleParams::new(64, 0, 100, 10, Strategy::UniformRandom);
        let s = gen_schedule(1, &p).unwrap();
        assert!(s.rounds.iter().all(|r| r.is_empty()));
    }

    #[test]
    fn uniform_rate_ten() {
        let p = ScheduleParams::new(1024, 10, 100 + 320, 320, Strategy::UniformRandom);
        let s = gen_schedule(3, &p).unwrap();
        s.validate(10).unwrap();
        for t in 320..420 {
            let rc = s.round(t).unwrap();
            assert_eq!(rc.leaves.len(), 10);
            assert_eq!(rc.joins.len(), 10);
        }
    }

    #[test]
    fn targeted_respects_rate() {
        let p = ScheduleParams::new(1024, 10, 400, 320, Strategy::TargetedCommittee);
        let s = gen_schedule(5, &p).unwrap();
        s.validate(10).unwrap();
        assert_eq!(p.victim_size, 20);
    }

    #[test]
    fn rate_cap_enforced() {
        let p = ScheduleParams::new(1024, 103, 400, 320, Strategy::UniformRandom);
        assert_eq!(
            gen_schedule(5, &p),
            Err(AdversaryError::RateTooHigh {
                rate: 103,
                cap: 102
            })
        );
        let p = ScheduleParams::new(1024, 1, 100, 320, Strategy::UniformRandom);
        assert!(matches!(
            gen_schedule(5, &p),
            Err(AdversaryError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn text_roundtrip_is_frozen() {
        let p = ScheduleParams::new(32, 2, 60, 10, Strategy::Burst);
        let s = gen_schedule(9, &p).unwrap();
        let text = s.to_text();
        assert_eq!(ChurnSchedule::from_text(&text).unwrap(), s);
        assert_eq!(gen_schedule(9, &p).unwrap().to_text(), text);
    }

    #[test]
    fn query_truths() {
        let p = ScheduleParams::new(64, 1, 200, 10, Strategy::UniformRandom);
        let s = gen_schedule(2, &p).unwrap();
        assert!(gen_queries(2, &s, 0.0).queries.is_empty());
        let life = s.lifetimes();
        let never = Query {
            x: 0,
            r: 50,
            s: s.initial[0],
        };
        assert_eq!(classify(&never, &life, 0, 0, 30), GroundTruth::Absent);
        // a key churned out one round after issue is mixed
        let (t, v) = (100u64, s.rounds[101].leaves[0]);
        let q = Query {
            x: v,
            r: t,
            s: s.initial[0],
        };
        assert_eq!(classify(&q, &life, 0, 0, 30), GroundTruth::Mixed);
        let w = gen_queries(2, &s, 0.05);
        assert!(w.queries.iter().all(|q| q.r >= 10));
        assert!(!w.queries.is_empty());
    }
}
