use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use resilient_skiplist::config::RunConfig;
use resilient_skiplist::fixtures;
use resilient_skiplist::maintenance::Simulation;
use resilient_skiplist::metrics::{self, WhpSummary};
use resilient_skiplist::phase_buffer::raise_levels;
use resilient_skiplist::phase_delete::delete_phase;
use resilient_skiplist::phase_merge::wave_merge;
use resilient_skiplist::simcore::{CyclePhase, LocalFabric, PhaseTag, TraceRecord};
use resilient_skiplist::skiplist::{NetworkTag, SkipList};
use resilient_skiplist::spartan::{OverlayDump, SpartanParams, SpartanState};

#[derive(Parser)]
#[command(
    name = "rsl",
    version,
    about = "Churn-resilient distributed skip list simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Delete,
    Buffer,
    Wave,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Bootstrap and run maintenance cycles; exits 0 iff no failure and
    /// no query violation occurred.
    Simulate {
        #[arg(long, required_unless_present = "fixture")]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        fixture: Option<Fixture>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed_adv: Option<u64>,
        #[arg(long)]
        seed_alg: Option<u64>,
    },
    /// Check a list dump, an overlay dump (.json) or a round trace (.jsonl),
    /// or replay a fixture against its frozen result.
    Validate {
        path: Option<PathBuf>,
        #[arg(long)]
        fixture: Option<Fixture>,
    },
    /// Merge and delete scaling over a size sweep.
    Bench {
        /// Comma-separated sizes; empty gives an empty table.
        #[arg(long, default_value = "256,512,1024,2048,4096")]
        sizes: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            fixture: Some(f),
            out,
            ..
        } => {
            debug_assert!(config.is_none());
            simulate_fixture(f, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate {
            config,
            out,
            seed_adv,
            seed_alg,
            ..
        } => {
            let path = config.expect("clap enforces --config");
            let text =
                fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg = RunConfig::from_toml(&text)?;
            cfg.seed_adv = seed_adv.unwrap_or(cfg.seed_adv);
            cfg.seed_alg = seed_alg.unwrap_or(cfg.seed_alg);
            simulate(&cfg, &out)
        }
        Cmd::Validate { path, fixture } => validate(path.as_deref(), fixture),
        Cmd::Bench {
            sizes,
            seed,
            format,
        } => {
            let mut rows = Vec::new();
            for tok in sizes.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let n: usize = tok.parse().with_context(|| format!("bad size {tok:?}"))?;
                rows.push(metrics::scaling_row(n, seed).map_err(anyhow::Error::msg)?);
            }
            match format {
                Format::Text => print!("{}", metrics::scaling_table(&rows)),
                Format::Csv => print!("{}", metrics::scaling_csv(&rows)),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut s = String::new();
    for x in items {
        s.push_str(&serde_json::to_string(&x)?);
        s.push('\n');
    }
    Ok(s)
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let mut sim: Simulation = cfg.build()?;
    let boot = sim.bootstrap_all()?;
    for _ in 0..cfg.horizon_cycles {
        sim.run_cycle()?;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let alpha = sim.params().alpha();
    write(out, "config.toml", cfg.to_toml())?;
    write(
        out,
        "trace.jsonl",
        jsonl(sim.ledger().records().iter().map(|r| r.trace()))?,
    )?;
    write(out, "cycles.jsonl", jsonl(sim.cycles())?)?;
    write(out, "failures.jsonl", jsonl(sim.failures())?)?;
    write(out, "covers.jsonl", jsonl(sim.cover_events())?)?;
    write(
        out,
        "merge_trace.txt",
        sim.merge_events()
            .iter()
            .map(|e| format!("{} {e}\n", e.cycle))
            .collect::<String>(),
    )?;
    write(out, "schedule.txt", sim.schedule().to_text())?;
    write(out, "live.dump", sim.live().dump(NetworkTag::Live))?;
    write(out, "clean.dump", sim.clean().dump(NetworkTag::Clean))?;
    write(
        out,
        "overlay.json",
        serde_json::to_string_pretty(&sim.spartan().to_dump())?,
    )?;

    let rows = metrics::csv_rows(&sim, cfg.seed_adv, alpha);
    write(out, "cycles.csv", metrics::to_csv(&rows))?;
    let reports = metrics::cycle_reports(&sim, alpha);
    let mut whp = WhpSummary::default();
    whp.add_run(&sim);
    whp.add_list(&metrics::list_stats(sim.live()));
    let queries = metrics::query_stats(sim.queries());
    let report = serde_json::json!({
        "bootstrap": boot,
        "queries": queries,
        "cover": metrics::cover_audit(&sim),
        "update": metrics::update_audit(&sim),
        "ledger_complete": metrics::ledger_complete(sim.ledger()),
        "competitiveness": reports,
        "whp": whp,
    });
    write(out, "metrics.json", serde_json::to_string_pretty(&report)?)?;
    let mut summary = metrics::text_table(&rows);
    summary.push('\n');
    summary.push_str(&whp.text());
    write(out, "summary.txt", &summary)?;

    let violations: u64 = sim.cycles().iter().map(|c| c.q_violations).sum();
    let flagged = reports.iter().filter(|r| r.flagged).count();
    println!(
        "n={} cycles={} rounds={} failures={} queries={} q_violations={} flagged_windows={}",
        cfg.n,
        sim.cycles().len(),
        sim.world().round(),
        sim.failures().len(),
        queries.served,
        violations,
        flagged
    );
    Ok(if sim.failures().is_empty() && violations == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn fixture_run(f: Fixture) -> Result<(Vec<String>, Option<String>)> {
    Ok(match f {
        Fixture::Delete => {
            let (mut l, reds) = fixtures::delete_list();
            delete_phase(&mut l, &reds, &mut LocalFabric::new(), 0)?;
            (fixtures::levels(&l), None)
        }
        Fixture::Buffer => {
            let b = raise_levels(&fixtures::buffer_input(), &mut LocalFabric::new())?;
            (fixtures::levels(&b), None)
        }
        Fixture::Wave => {
            let mut c = fixtures::wave_clean();
            let out = wave_merge(&mut c, &fixtures::wave_buffer(), &mut LocalFabric::new(), 0)?;
            (fixtures::levels(&c), Some(out.trace_text()))
        }
    })
}

fn frozen(f: Fixture) -> (Vec<&'static str>, Option<&'static str>) {
    match f {
        Fixture::Delete => (fixtures::DELETE_RESULT.to_vec(), None),
        Fixture::Buffer => (fixtures::BUFFER_RESULT.to_vec(), None),
        Fixture::Wave => (fixtures::WAVE_RESULT.to_vec(), Some(fixtures::WAVE_TRACE)),
    }
}

fn simulate_fixture(f: Fixture, out: &Path) -> Result<()> {
    let (levels, trace) = fixture_run(f)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(out, "levels.txt", levels.join("\n") + "\n")?;
    if let Some(t) = &trace {
        write(out, "merge_trace.txt", t)?;
        print!("{t}");
    }
    for l in &levels {
        println!("{l}");
    }
    Ok(())
}

fn first_diff(want: &str, got: &str) -> Option<(usize, String, String)> {
    let (mut a, mut b) = (want.lines(), got.lines());
    for i in 1.. {
        match (a.next(), b.next()) {
            (None, None) => return None,
            (x, y) if x == y => continue,
            (x, y) => return Some((i, x.unwrap_or("<end>").into(), y.unwrap_or("<end>").into())),
        }
    }
    unreachable!()
}

fn validate(path: Option<&Path>, fixture: Option<Fixture>) -> Result<ExitCode> {
    let verdict = match (path, fixture) {
        (None, None) => bail!("give a path, a fixture, or both"),
        (p, Some(f)) => {
            let (levels, trace) = fixture_run(f)?;
            let (want_levels, want_trace) = frozen(f);
            // a path stands in for the frozen trace (or level listing)
            let (want, got) = match (p, trace) {
                (Some(p), Some(t)) => (fs::read_to_string(p)?, t),
                (Some(p), None) => (fs::read_to_string(p)?, levels.join("\n") + "\n"),
                (None, Some(t)) if levels == want_levels => {
                    (want_trace.unwrap_or_default().to_string(), t)
                }
                (None, _) => (want_levels.join("\n") + "\n", levels.join("\n") + "\n"),
            };
            match first_diff(&want, &got) {
                None => Ok(()),
                Some((i, w, g)) => Err(format!("line {i}: expected `{w}`, got `{g}`")),
            }
        }
        (Some(p), None) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            match p.extension().and_then(|e| e.to_str()) {
                Some("jsonl") => validate_trace(&text),
                Some("json") => validate_overlay(&text),
                _ => validate_dump(&text),
            }
        }
    };
    match verdict {
        Ok(()) => {
            println!("OK");
            Ok(ExitCode::SUCCESS)
        }
        Err(msg) => {
            println!("{msg}");
            Ok(ExitCode::from(1))
        }
    }
}

fn validate_dump(text: &str) -> Result<(), String> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let list = SkipList::parse_dump(&lines).map_err(|e| format!("format error: {e}"))?;
    list.validate().map_err(|v| match v.location() {
        Some((k, l)) => format!("violation at ({k}, {l}): {v}"),
        None => format!("violation: {v}"),
    })
}

fn validate_overlay(text: &str) -> Result<(), String> {
    let d: OverlayDump = serde_json::from_str(text).map_err(|e| format!("format error: {e}"))?;
    let s = SpartanState::from_dump(&d, SpartanParams::default())
        .map_err(|e| format!("violation: {e}"))?;
    s.validate_shape().map_err(|e| format!("violation: {e}"))
}

/// Rows must parse, count rounds from 0 without gaps, and carry the
/// bootstrap label exactly while in bootstrap.
fn validate_trace(text: &str) -> Result<(), String> {
    for (i, line) in text.lines().enumerate() {
        let r: TraceRecord =
            serde_json::from_str(line).map_err(|e| format!("line {}: format error: {e}", i + 1))?;
        if r.round != i as u64 {
            return Err(format!("line {}: round {} out of sequence", i + 1, r.round));
        }
        if (r.phase_tag == PhaseTag::Bootstrap) != (r.cycle_phase == CyclePhase::Bootstrap) {
            return Err(format!(
                "line {}: phase tag {:?} with cycle phase {:?}",
                i + 1,
                r.phase_tag,
                r.cycle_phase
            ));
        }
        if r.phase_tag == PhaseTag::Bootstrap && r.churn_in + r.churn_out > 0 {
            return Err(format!("line {}: churn during bootstrap", i + 1));
        }
    }
    Ok(())
}
