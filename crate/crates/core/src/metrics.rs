//! Post-processing: the competitiveness audit, query and covering audits,
//! skip-list shape statistics and the report formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    gen_schedule, AdversaryError, GroundTruth, QueryWorkload, ScheduleParams, Strategy,
};
use crate::key::Key;
use crate::maintenance::{FailureKind, MaintenanceError, QueryRecord, SimParams, Simulation};
use crate::phase_delete::delete_phase;
use crate::phase_merge::wave_merge;
use crate::simcore::{log2, CyclePhase, LocalFabric, Work, WorkLedger};
use crate::skiplist::{sample_height, SkipList};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("window [{t_s}, {t_e}) is empty")]
    EmptyWindow { t_s: u64, t_e: u64 },
}

/// Work over `[t_s, t_e)` against churn over `[t_s - alpha, t_e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetitivenessReport {
    pub t_s: u64,
    pub t_e: u64,
    pub alpha: u64,
    pub work: u64,
    pub churn_shifted: u64,
    pub ratio: f64,
    pub beta_bound: f64,
    pub flagged: bool,
}

pub fn competitiveness(
    ledger: &WorkLedger,
    t_s: u64,
    t_e: u64,
    alpha: u64,
    beta_bound: f64,
) -> Result<CompetitivenessReport, MetricsError> {
    if t_e <= t_s {
        return Err(MetricsError::EmptyWindow { t_s, t_e });
    }
    let work: u64 = ledger
        .window(t_s, t_e)
        .iter()
        .map(|r| r.total().total())
        .sum();
    let churn_shifted: u64 = ledger
        .window(t_s.saturating_sub(alpha), t_e)
        .iter()
        .map(|r| r.churn())
        .sum();
    let ratio = work as f64 / churn_shifted.max(1) as f64;
    Ok(CompetitivenessReport {
        t_s,
        t_e,
        alpha,
        work,
        churn_shifted,
        ratio,
        beta_bound,
        flagged: ratio > beta_bound,
    })
}

/// One window per completed cycle.
pub fn cycle_reports(sim: &Simulation, alpha: u64) -> Vec<CompetitivenessReport> {
    let beta = sim.params().beta_bound();
    sim.cycles()
        .iter()
        .filter_map(|c| competitiveness(sim.ledger(), c.start_round, c.end_round, alpha, beta).ok())
        .collect()
}

/// Ledger totals per cycle phase label.
pub fn phase_totals(ledger: &WorkLedger) -> BTreeMap<CyclePhase, Work> {
    let mut out: BTreeMap<CyclePhase, Work> = BTreeMap::new();
    for r in ledger.records() {
        out.entry(r.cycle_phase).or_default().add(&r.total());
    }
    out
}

/// Every unit of work sits in exactly one labelled row.
pub fn ledger_complete(ledger: &WorkLedger) -> bool {
    let mut sum = Work::default();
    for w in phase_totals(ledger).values() {
        sum.add(w);
    }
    sum == ledger.totals()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryStats {
    pub served: u64,
    pub present: u64,
    pub absent: u64,
    pub mixed: u64,
    /// Wrong answers to non-mixed queries.
    pub incorrect: u64,
    pub late: u64,
    pub stalled: u64,
}

pub fn query_stats(records: &[QueryRecord]) -> QueryStats {
    let mut s = QueryStats::default();
    for q in records {
        s.served += 1;
        match q.truth {
            GroundTruth::Present => s.present += 1,
            GroundTruth::Absent => s.absent += 1,
            GroundTruth::Mixed => s.mixed += 1,
        }
        s.incorrect += u64::from(!q.correct && q.answer.is_some());
        s.late += u64::from(q.late);
        s.stalled += u64::from(q.answer.is_none());
    }
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverAudit {
    pub departures: u64,
    /// Departures with no covering record in their own round.
    pub late: u64,
    /// Departures where some former neighbour reached no live peer.
    pub unlinked: u64,
}

pub fn cover_audit(sim: &Simulation) -> CoverAudit {
    let mut a = CoverAudit::default();
    let mut events = sim.cover_events().iter().peekable();
    for (t, rc) in sim
        .schedule()
        .rounds
        .iter()
        .enumerate()
        .take(sim.world().round() as usize + 1)
    {
        for &v in &rc.leaves {
            a.departures += 1;
            match events.peek() {
                Some(e) if e.departed == v && e.round == t as u64 => {
                    a.unlinked += u64::from(e.linked < e.neighbours || e.speaker.is_none());
                    events.next();
                }
                _ => a.late += 1,
            }
        }
    }
    a
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateAudit {
    pub rows: u64,
    /// Update rows with any protocol work.
    pub working_rows: u64,
    /// Cycles whose live and clean lists differed afterwards.
    pub unequal: u64,
}

pub fn update_audit(sim: &Simulation) -> UpdateAudit {
    let mut a = UpdateAudit::default();
    for r in sim
        .ledger()
        .records()
        .iter()
        .filter(|r| r.cycle_phase == CyclePhase::Update)
    {
        a.rows += 1;
        a.working_rows += u64::from(r.protocol.total() > 0);
    }
    a.unequal = sim.cycles().iter().filter(|c| !c.lc_equal).count() as u64;
    a
}

/// Shape statistics of one list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ListStats {
    pub n: usize,
    pub max_height: u32,
    pub height_bound: f64,
    pub runs: usize,
    pub mean_run: f64,
    pub searches: usize,
    pub max_horizontal: u64,
    pub search_bound: f64,
    /// Searches with more than `search_bound` horizontal moves.
    pub long_searches: usize,
}

/// `n` random keys with geometric heights.
pub fn random_list<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> SkipList {
    let mut keys: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    keys.sort_unstable();
    keys.dedup();
    let heights: Vec<u32> = keys.iter().map(|_| sample_height(rng, p)).collect();
    SkipList::oracle_build(&keys, &heights).expect("sorted unique keys")
}

/// Height, run length and search length of `list`, searching every key
/// from the head.
pub fn list_stats(list: &SkipList) -> ListStats {
    let n = list.len();
    let lg = log2(n);
    let max_height = list
        .keys()
        .filter_map(|k| list.height(k))
        .max()
        .unwrap_or(0);
    let runs = list.run_lengths();
    let search_bound = 16.0 * lg;
    let mut max_horizontal = 0;
    let mut long_searches = 0;
    let mut searches = 0;
    for k in list.keys() {
        let o = list.search(list.head(), k);
        searches += 1;
        max_horizontal = max_horizontal.max(o.horizontal);
        long_searches += usize::from(o.horizontal as f64 > search_bound);
    }
    ListStats {
        n,
        max_height,
        height_bound: 4.0 * lg + 1.0,
        runs: runs.len(),
        mean_run: runs.iter().sum::<usize>() as f64 / runs.len().max(1) as f64,
        searches,
        max_horizontal,
        search_bound,
        long_searches,
    }
}

/// Empirical counts over a corpus of seeded runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WhpSummary {
    pub lists: u64,
    pub runs: u64,
    pub failures: u64,
    pub failures_by_kind: BTreeMap<String, u64>,
    pub committee_excursions: u64,
    pub height_violations: u64,
    pub long_searches: u64,
    pub max_horizontal: u64,
    pub run_count: u64,
    pub run_total: u64,
}

impl WhpSummary {
    pub fn add_list(&mut self, s: &ListStats) {
        self.lists += 1;
        self.height_violations += u64::from(s.max_height as f64 > s.height_bound);
        self.long_searches += s.long_searches as u64;
        self.max_horizontal = self.max_horizontal.max(s.max_horizontal);
        self.run_count += s.runs as u64;
        self.run_total += (s.mean_run * s.runs as f64).round() as u64;
    }

    /// Counts failures and committee sizes outside `[c_lo, c_hi] * log2 n`.
    pub fn add_run(&mut self, sim: &Simulation) {
        self.runs += 1;
        self.failures += sim.failures().len() as u64;
        for f in sim.failures() {
            *self
                .failures_by_kind
                .entry(kind_name(f.kind).to_string())
                .or_default() += 1;
        }
        let p = sim.params();
        let (lo, hi) = (p.spartan.c_lo * p.lg(), p.spartan.c_hi * p.lg());
        self.committee_excursions += sim
            .censuses()
            .iter()
            .filter(|c| (c.min_size as f64) < lo || (c.max_size as f64) > hi)
            .count() as u64;
    }

    pub fn mean_run(&self) -> f64 {
        self.run_total as f64 / self.run_count.max(1) as f64
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lists               {}", self.lists);
        let _ = writeln!(s, "runs                {}", self.runs);
        let _ = writeln!(s, "failures            {}", self.failures);
        for (k, v) in &self.failures_by_kind {
            let _ = writeln!(s, "  {k:<18}{v}");
        }
        let _ = writeln!(s, "committee excursions {}", self.committee_excursions);
        let _ = writeln!(s, "height violations   {}", self.height_violations);
        let _ = writeln!(s, "long searches       {}", self.long_searches);
        let _ = writeln!(s, "max horizontal      {}", self.max_horizontal);
        let _ = writeln!(s, "mean run length     {:.3}", self.mean_run());
        s
    }
}

fn kind_name(k: FailureKind) -> &'static str {
    match k {
        FailureKind::CommitteeDestroyed => "committee_destroyed",
        FailureKind::Unreachable => "unreachable",
        FailureKind::BudgetExceeded => "budget_exceeded",
        FailureKind::QueryStalled => "query_stalled",
        FailureKind::QueryTimeout => "query_timeout",
        FailureKind::PhaseError => "phase_error",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub n: usize,
    pub seed: u64,
    pub cycle: u64,
    pub rounds: u64,
    pub ratio: f64,
}

pub fn csv_rows(sim: &Simulation, seed: u64, alpha: u64) -> Vec<CsvRow> {
    let reports = cycle_reports(sim, alpha);
    sim.cycles()
        .iter()
        .zip(reports)
        .map(|(c, r)| CsvRow {
            n: sim.params().n,
            seed,
            cycle: c.cycle,
            rounds: c.rounds(),
            ratio: r.ratio,
        })
        .collect()
}

pub fn to_csv(rows: &[CsvRow]) -> String {
    let mut s = String::from("n,seed,cycle,rounds,ratio\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.4}",
            r.n, r.seed, r.cycle, r.rounds, r.ratio
        );
    }
    s
}

/// Fixed-width table of cycle rows for humans.
pub fn text_table(rows: &[CsvRow]) -> String {
    let mut s = format!(
        "{:>6} {:>6} {:>6} {:>7} {:>10}\n",
        "n", "seed", "cycle", "rounds", "ratio"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6} {:>6} {:>6} {:>7} {:>10.3}",
            r.n, r.seed, r.cycle, r.rounds, r.ratio
        );
    }
    s
}

/// A churn spike followed by the delayed work it causes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstDemo {
    pub burst_end: u64,
    pub without_shift: CompetitivenessReport,
    pub with_shift: CompetitivenessReport,
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Maintenance(#[from] MaintenanceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One burst of `rate` churn per round right after bootstrap, then quiet.
/// The window opens when the burst ends and lasts one cycle budget; its
/// churn is zero unless the window is shifted back by `alpha`.
pub fn burst_demo(n: usize, rate: usize, seed: u64) -> Result<BurstDemo, DemoError> {
    let params = SimParams::new(n);
    let b = params.bootstrap_rounds();
    let budget = params.cycle_budget();
    let mut sp = ScheduleParams::new(n, rate, b + 3 * budget, b, Strategy::Burst);
    sp.burst_off = 3 * budget;
    let schedule = gen_schedule(seed, &sp)?;
    let burst_end = b + sp.burst_on;
    let mut sim = Simulation::new(params, schedule, QueryWorkload::default(), seed)?;
    sim.bootstrap_all()?;
    while sim.world().round() < burst_end + budget {
        sim.run_cycle()?;
    }
    let beta = params.beta_bound();
    Ok(BurstDemo {
        burst_end,
        without_shift: competitiveness(sim.ledger(), burst_end, burst_end + budget, 0, beta)?,
        with_shift: competitiveness(
            sim.ledger(),
            burst_end,
            burst_end + budget,
            params.alpha(),
            beta,
        )?,
    })
}

/// One row of the size sweep: a balanced merge and a quarter-size delete.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub merge_rounds: u64,
    pub rounds_per_lg: f64,
    pub merge_work_per_key: f64,
    pub delete_rounds: u64,
    pub reds: usize,
    pub work_per_red: f64,
    pub lg3: f64,
}

/// Random clean and buffer lists of `n` keys each, merged; then a random
/// quarter of the result is deleted.
pub fn scaling_row(n: usize, seed: u64) -> Result<ScalingRow, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
    let (c, b) = balanced_pair(n, n, 0.5, &mut rng);
    let mut merged = c.clone();
    let mut f = LocalFabric::new();
    let out = wave_merge(&mut merged, &b, &mut f, 0).map_err(|e| e.to_string())?;
    let lg = log2(n);
    let merge_work = f.work.total();
    let mut ids: Vec<u64> = merged.ids().collect();
    ids.shuffle(&mut rng);
    let reds: BTreeSet<Key> = ids.iter().take(n / 2).map(|&v| Key::Id(v)).collect();
    let mut f = LocalFabric::new();
    let d = delete_phase(&mut merged, &reds, &mut f, 0).map_err(|e| e.to_string())?;
    Ok(ScalingRow {
        n,
        merge_rounds: out.summary.rounds_used,
        rounds_per_lg: out.summary.rounds_used as f64 / lg,
        merge_work_per_key: merge_work as f64 / n.max(1) as f64,
        delete_rounds: d.rounds_used,
        reds: reds.len(),
        work_per_red: f.work.total() as f64 / reds.len().max(1) as f64,
        lg3: lg.powi(3),
    })
}

/// Disjoint random clean (`nc` keys) and buffer (`nb` keys) lists.
pub fn balanced_pair<R: Rng + ?Sized>(
    nc: usize,
    nb: usize,
    p: f64,
    rng: &mut R,
) -> (SkipList, SkipList) {
    let mut keys = BTreeSet::new();
    while keys.len() < nc + nb {
        keys.insert(rng.random_range(1..u64::MAX / 2));
    }
    let mut keys: Vec<u64> = keys.into_iter().collect();
    keys.shuffle(rng);
    let (mut ck, mut bk) = (keys[..nc].to_vec(), keys[nc..].to_vec());
    ck.sort_unstable();
    bk.sort_unstable();
    let ch: Vec<u32> = ck.iter().map(|_| sample_height(rng, p)).collect();
    let bh: Vec<u32> = bk.iter().map(|_| sample_height(rng, p)).collect();
    (
        SkipList::oracle_build(&ck, &ch).expect("sorted keys"),
        SkipList::build_between(Key::BufNegInf, Key::BufPosInf, &bk, &bh).expect("sorted keys"),
    )
}

pub fn scaling_table(rows: &[ScalingRow]) -> String {
    let mut s = format!(
        "{:>6} {:>8} {:>9} {:>10} {:>8} {:>6} {:>9} {:>8}\n",
        "n", "merge_r", "r/log2n", "work/key", "delete_r", "reds", "work/red", "log2^3n"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6} {:>8} {:>9.2} {:>10.2} {:>8} {:>6} {:>9.2} {:>8.0}",
            r.n,
            r.merge_rounds,
            r.rounds_per_lg,
            r.merge_work_per_key,
            r.delete_rounds,
            r.reds,
            r.work_per_red,
            r.lg3
        );
    }
    s
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = String::from(
        "n,merge_rounds,rounds_per_lg,merge_work_per_key,delete_rounds,reds,work_per_red,lg3\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.4},{},{},{:.4},{:.1}",
            r.n,
            r.merge_rounds,
            r.rounds_per_lg,
            r.merge_work_per_key,
            r.delete_rounds,
            r.reds,
            r.work_per_red,
            r.lg3
        );
    }
    s
}
