//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL ...` line before asserting. Tolerances are the
//! constants at the top of each test.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resilient_skiplist::adversary::Strategy;
use resilient_skiplist::config::RunConfig;
use resilient_skiplist::fixtures;
use resilient_skiplist::key::Key;
use resilient_skiplist::metrics::{
    balanced_pair, burst_demo, cover_audit, cycle_reports, list_stats, query_stats, random_list,
    scaling_row, update_audit, CoverAudit, QueryStats, UpdateAudit, WhpSummary,
};
use resilient_skiplist::phase_buffer::build_bitonic;
use resilient_skiplist::phase_delete::{
    black_successor, delete_phase, oracle_delete_all, run_bridging, PositionTree,
};
use resilient_skiplist::phase_merge::{cohesive_groups, oracle_merge, wave_merge, MergeEventKind};
use resilient_skiplist::simcore::{log2, LocalFabric};
use resilient_skiplist::spartan::{Opinion, SpartanParams, SpartanState};

fn report(n: u32, pass: bool, detail: String) {
    println!(
        "criterion {n}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_01_sorting_network() {
    const EXHAUSTIVE_MAX: usize = 16;
    const RANDOM_WIDTHS: [usize; 3] = [32, 128, 512];
    const RANDOM_TRIALS: usize = 500;
    let mut bad = Vec::new();
    for m in 1..=EXHAUSTIVE_MAX {
        let net = build_bitonic(m);
        if net.validate().is_err() || !net.sorts_all_binary() {
            bad.push(format!("0-1 width {m}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for w in RANDOM_WIDTHS {
        let net = build_bitonic(w);
        for _ in 0..RANDOM_TRIALS {
            let mut v: Vec<u32> = (0..w as u32).collect();
            v.shuffle(&mut rng);
            net.apply(&mut v);
            if v.iter().enumerate().any(|(i, &x)| x != i as u32) {
                bad.push(format!("permutation width {w}"));
                break;
            }
        }
    }
    report(
        1,
        bad.is_empty(),
        format!("exhaustive 0-1 widths 1..={EXHAUSTIVE_MAX}, {RANDOM_TRIALS} permutations at {RANDOM_WIDTHS:?}; bad {bad:?}"),
    );
}

fn random_reds(
    list: &resilient_skiplist::skiplist::SkipList,
    density: f64,
    rng: &mut ChaCha8Rng,
) -> BTreeSet<Key> {
    list.ids()
        .filter(|_| rng.random_bool(density))
        .map(Key::Id)
        .collect()
}

#[test]
fn criterion_02_batch_delete() {
    const SIZES: [usize; 2] = [64, 512];
    const PAIRS_PER_SIZE: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mismatches, mut stray_bridges, mut pairs) = (0, 0, 0);
    for n in SIZES {
        for i in 0..PAIRS_PER_SIZE {
            let list = random_list(n, 0.5, &mut rng);
            let density = [0.1, 0.5, 0.9][i % 3];
            let reds = random_reds(&list, density, &mut rng);
            let top = reds
                .iter()
                .filter_map(|k| list.height(*k))
                .max()
                .unwrap_or(0);
            let levels: Vec<u32> = (0..=top).collect();
            let is_red = |k: Key, _l: u32| reds.contains(&k);
            let out = run_bridging(
                &list,
                &levels,
                &is_red,
                &PositionTree { list: &list },
                &mut LocalFabric::new(),
                true,
            )
            .unwrap();
            let mut expected = BTreeSet::new();
            for &l in &levels {
                let keys = list.level_keys(l);
                for w in keys.windows(2) {
                    if !reds.contains(&w[0]) && reds.contains(&w[1]) {
                        expected.insert((w[0], l, black_successor(&list, &reds, w[0], l)));
                    }
                }
            }
            let got: BTreeSet<_> = out
                .bridges
                .iter()
                .map(|e| (e.a, e.level, Some(e.b)))
                .collect();
            stray_bridges += got.symmetric_difference(&expected).count();

            let mut l = list.clone();
            delete_phase(&mut l, &reds, &mut LocalFabric::new(), 0).unwrap();
            mismatches +=
                usize::from(l != oracle_delete_all(&list, &reds) || l.validate().is_err());
            pairs += 1;
        }
    }
    let (mut l, reds) = fixtures::delete_list();
    delete_phase(&mut l, &reds, &mut LocalFabric::new(), 0).unwrap();
    let fixture_ok = fixtures::levels(&l) == fixtures::DELETE_RESULT;
    report(
        2,
        mismatches == 0 && stray_bridges == 0 && fixture_ok,
        format!("{pairs} random deletes: {mismatches} oracle mismatches, {stray_bridges} bridges not between level-consecutive blacks; fixture {fixture_ok}"),
    );
}

#[test]
fn criterion_03_wave_merge() {
    const PAIRS: usize = 200;
    const SIZE: usize = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mismatches, mut splits, mut bad_splits) = (0, 0, 0);
    for _ in 0..PAIRS {
        let (clean, buffer) = balanced_pair(SIZE, SIZE, 0.5, &mut rng);
        let mut merged = clean.clone();
        let out = wave_merge(&mut merged, &buffer, &mut LocalFabric::new(), 0).unwrap();
        mismatches +=
            usize::from(merged != oracle_merge(&clean, &buffer) || merged.validate().is_err());
        let groups = cohesive_groups(&buffer);
        let group_of: HashMap<Key, usize> = groups
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.members.iter().map(move |&m| (m, i)))
            .collect();
        let leaders: BTreeSet<Key> = out.events.iter().map(|e| e.group_leader).collect();
        for e in out
            .events
            .iter()
            .filter(|e| e.event == MergeEventKind::Split)
        {
            splits += 1;
            // members before z stay, the first member after z leads the rest
            let g = &groups[group_of[&e.group_leader]];
            let next = g.members.iter().find(|&&m| m > e.at);
            let ok = clean.level_keys(e.level).contains(&e.at)
                && e.group_leader < e.at
                && next.is_some_and(|m| leaders.contains(m));
            bad_splits += usize::from(!ok);
        }
    }
    let mut c = fixtures::wave_clean();
    let out = wave_merge(&mut c, &fixtures::wave_buffer(), &mut LocalFabric::new(), 0).unwrap();
    let golden =
        out.trace_text() == fixtures::WAVE_TRACE && fixtures::levels(&c) == fixtures::WAVE_RESULT;
    report(
        3,
        mismatches == 0 && bad_splits == 0 && golden,
        format!("{PAIRS} merges of {SIZE}+{SIZE}: {mismatches} oracle mismatches, {splits} splits ({bad_splits} not a clean cut); golden trace {golden}"),
    );
}

#[test]
fn criterion_04_scaling() {
    const SIZES: [usize; 5] = [256, 512, 1024, 2048, 4096];
    const FACTOR: f64 = 2.0;
    let rows: Vec<_> = SIZES.iter().map(|&n| scaling_row(n, 4).unwrap()).collect();
    let base = rows[0].rounds_per_lg;
    let within = |x: f64| x <= FACTOR * base && x >= base / FACTOR;
    let ok = rows
        .iter()
        .all(|r| within(r.rounds_per_lg) && r.work_per_red <= r.lg3);
    let shape: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "n={} {:.1}/lg {:.1}w/red",
                r.n, r.rounds_per_lg, r.work_per_red
            )
        })
        .collect();
    report(
        4,
        ok,
        format!(
            "merge rounds/lg within x{FACTOR} of n=256 fit {base:.1}; delete work/red <= lg^3; {}",
            shape.join(", ")
        ),
    );
}

/// Results of the shared seeded runs at n = 1024.
struct RunOutcome {
    failures: usize,
    queries: QueryStats,
    over_budget: usize,
    worst_ratio: f64,
    flagged: usize,
    beta: f64,
    covers: CoverAudit,
    updates: UpdateAudit,
    excursions: u64,
}

const RUN_N: usize = 1024;
const RUN_SEEDS: u64 = 20;
const RUN_CYCLES: u64 = 50;

fn runs() -> &'static [RunOutcome] {
    static RUNS: OnceLock<Vec<RunOutcome>> = OnceLock::new();
    RUNS.get_or_init(|| {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..RUN_SEEDS)
                .map(|seed| s.spawn(move || one_run(seed)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    })
}

fn one_run(seed: u64) -> RunOutcome {
    let cfg = RunConfig {
        n: RUN_N,
        seed_adv: seed,
        seed_alg: 1000 + seed,
        churn_rate_expr: "n/(10*log2(n)^2)".into(),
        strategy: Strategy::UniformRandom,
        horizon_cycles: RUN_CYCLES,
        query_density: 0.01,
        p: 0.5,
        constants: Default::default(),
    };
    let mut sim = cfg.build().unwrap();
    sim.bootstrap_all().unwrap();
    sim.run(RUN_CYCLES).unwrap();
    let p = *sim.params();
    let reports = cycle_reports(&sim, p.alpha());
    let mut whp = WhpSummary::default();
    whp.add_run(&sim);
    RunOutcome {
        failures: sim.failures().len(),
        queries: query_stats(sim.queries()),
        over_budget: sim
            .cycles()
            .iter()
            .filter(|c| c.rounds() > p.cycle_budget())
            .count(),
        worst_ratio: reports.iter().map(|r| r.ratio).fold(0.0, f64::max),
        flagged: reports.iter().filter(|r| r.flagged).count(),
        beta: p.beta_bound(),
        covers: cover_audit(&sim),
        updates: update_audit(&sim),
        excursions: whp.committee_excursions,
    }
}

#[test]
fn criterion_05_eventual_consistency() {
    let rs = runs();
    let failures: usize = rs.iter().map(|r| r.failures).sum();
    let over: usize = rs.iter().map(|r| r.over_budget).sum();
    let stalled: u64 = rs.iter().map(|r| r.queries.stalled).sum();
    let late: u64 = rs.iter().map(|r| r.queries.late).sum();
    let wrong: u64 = rs.iter().map(|r| r.queries.incorrect).sum();
    let served: u64 = rs.iter().map(|r| r.queries.served).sum();
    let excursions: u64 = rs.iter().map(|r| r.excursions).sum();
    report(
        5,
        failures + over == 0 && stalled + late + wrong == 0 && excursions == 0,
        format!(
            "{RUN_SEEDS} seeds x {RUN_CYCLES} cycles at n={RUN_N}: {failures} failures, {over} cycles over budget, \
             {served} queries ({wrong} wrong, {late} late, {stalled} stalled), {excursions} committee-size excursions"
        ),
    );
}

#[test]
fn criterion_06_competitiveness() {
    let rs = runs();
    let worst = rs.iter().map(|r| r.worst_ratio).fold(0.0, f64::max);
    let flagged: usize = rs.iter().map(|r| r.flagged).sum();
    let beta = rs[0].beta;
    const DEMO_N: usize = 1024;
    const DEMO_RATES: [usize; 3] = [1, 4, 20];
    let mut demo_ok = true;
    let mut demo = Vec::new();
    for rate in DEMO_RATES {
        let d = burst_demo(DEMO_N, rate, 6).unwrap();
        demo_ok &= d.without_shift.flagged && !d.with_shift.flagged;
        demo.push(format!(
            "rate {rate}: {:.0} -> {:.0}",
            d.without_shift.ratio, d.with_shift.ratio
        ));
    }
    report(
        6,
        flagged == 0 && worst <= beta && demo_ok,
        format!("worst cycle ratio {worst:.1} vs lg^3 {beta:.0} ({flagged} flagged); burst demo without/with shift {}", demo.join(", ")),
    );
}

#[test]
fn criterion_07_update_is_free() {
    let rs = runs();
    let rows: u64 = rs.iter().map(|r| r.updates.rows).sum();
    let working: u64 = rs.iter().map(|r| r.updates.working_rows).sum();
    let unequal: u64 = rs.iter().map(|r| r.updates.unequal).sum();
    report(7, rows > 0 && working == 0 && unequal == 0, format!("{rows} update rounds, {working} with protocol work, {unequal} cycles with live != clean"));
}

#[test]
fn criterion_08_covering() {
    let rs = runs();
    let departures: u64 = rs.iter().map(|r| r.covers.departures).sum();
    let late: u64 = rs.iter().map(|r| r.covers.late).sum();
    let unlinked: u64 = rs.iter().map(|r| r.covers.unlinked).sum();
    report(
        8,
        departures > 0 && late == 0 && unlinked == 0,
        format!(
            "{departures} departures, {late} covered late, {unlinked} left a neighbour unlinked"
        ),
    );
}

#[test]
fn criterion_09_list_shape() {
    const LISTS: u64 = 50;
    const N: usize = 4096;
    const RUN_RANGE: (f64, f64) = (1.8, 2.2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut whp = WhpSummary::default();
    for _ in 0..LISTS {
        whp.add_list(&list_stats(&random_list(N, 0.5, &mut rng)));
    }
    let mean = whp.mean_run();
    let ok = whp.height_violations == 0
        && whp.long_searches == 0
        && (RUN_RANGE.0..=RUN_RANGE.1).contains(&mean);
    report(
        9,
        ok,
        format!(
            "{LISTS} lists of {N}: {} over 4lg+1, mean run {mean:.3} (want {RUN_RANGE:?}), {} searches over 16lg (max horizontal {})",
            whp.height_violations, whp.long_searches, whp.max_horizontal
        ),
    );
}

#[test]
fn criterion_10_overlay_reshape() {
    const N: usize = 256;
    // recruitment must finish within this many lg n' rounds
    const ROUND_FACTOR: f64 = 8.0;
    let params = SpartanParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let nodes: Vec<u64> = (1..=2 * N as u64).map(|v| v * 7919).collect();
    let (mut s, _) = SpartanState::bootstrap(&nodes[..N], &mut rng, params).unwrap();
    let mut steps = Vec::new();
    let mut ok = s.validate_shape().is_ok();

    let mut check = |s: &SpartanState, r: &resilient_skiplist::spartan::ReshapeReport, n: usize| {
        let lg = log2(n);
        let c = s.census(0);
        let sized = c.min_size as f64 >= params.c_lo * lg && c.max_size as f64 <= params.c_hi * lg;
        let fast = r.rounds as f64 <= ROUND_FACTOR * lg;
        steps.push(format!(
            "k {}->{} n'={n} sizes [{}, {}] in {} rounds",
            r.from_k, r.to_k, c.min_size, c.max_size, r.rounds
        ));
        s.validate_shape().is_ok() && sized && fast && s.node_count() == n
    };

    // scripted: double the population, then every committee votes grow
    s.admit(&nodes[N..], &mut rng);
    let r = s
        .reshape(&vec![Opinion::Grow; s.committees().len()], &mut rng)
        .unwrap();
    ok &= r.to_k == r.from_k + 1 && check(&s, &r, 2 * N);

    // halve it again, then every committee votes shrink
    s.evict(&nodes[N..]);
    let r = s
        .reshape(&vec![Opinion::Shrink; s.committees().len()], &mut rng)
        .unwrap();
    ok &= r.to_k + 1 == r.from_k && check(&s, &r, N);

    report(10, ok, format!("grow to 2n and back, committees within [c_lo, c_hi] lg n' inside {ROUND_FACTOR} lg n' rounds: {}", steps.join("; ")));
}
