use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
n = 64
seed_adv = 3
seed_alg = 4
churn_rate_expr = "1"
horizon_cycles = 2
query_density = 0.05
"#;

fn rsl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, out: &str) -> Output {
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    rsl(&["simulate", "--config", "run.toml", "--out", out], dir)
}

#[test]
fn simulate_is_clean_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a");
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    assert!(stdout(&a).contains("failures=0"));
    let b = simulate(dir.path(), "b");
    assert_eq!(b.status.code(), Some(0));
    for f in [
        "trace.jsonl",
        "live.dump",
        "merge_trace.txt",
        "schedule.txt",
        "cycles.csv",
    ] {
        let (x, y) = (
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
        );
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn outputs_validate() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simulate(dir.path(), "o").status.code(), Some(0));
    for f in [
        "o/live.dump",
        "o/clean.dump",
        "o/overlay.json",
        "o/trace.jsonl",
    ] {
        let v = rsl(&["validate", f], dir.path());
        assert_eq!((v.status.code(), stdout(&v).trim()), (Some(0), "OK"), "{f}");
    }
}

#[test]
fn corrupted_dump_names_the_position() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simulate(dir.path(), "o").status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("o/live.dump")).unwrap();
    // drop one base-level tower so its left neighbour points at nothing
    let lines: Vec<&str> = text.lines().collect();
    let victim = lines
        .iter()
        .position(|l| l.split(' ').nth(2) == Some("0"))
        .unwrap();
    let broken: String = lines
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != victim)
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    fs::write(dir.path().join("broken.dump"), broken).unwrap();
    let v = rsl(&["validate", "broken.dump"], dir.path());
    assert_eq!(v.status.code(), Some(1));
    assert!(stdout(&v).starts_with("violation at ("), "{}", stdout(&v));
}

#[test]
fn rate_above_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("hot.toml"),
        CONFIG.replace("\"1\"", "\"n/2\""),
    )
    .unwrap();
    let o = rsl(&["simulate", "--config", "hot.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rate"));
}

#[test]
fn fixtures_match_their_frozen_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["wave", "delete", "buffer"] {
        let v = rsl(&["validate", "--fixture", f], dir.path());
        assert_eq!((v.status.code(), stdout(&v).trim()), (Some(0), "OK"), "{f}");
    }
    let s = rsl(&["simulate", "--fixture", "wave", "--out", "w"], dir.path());
    assert_eq!(s.status.code(), Some(0));
    let v = rsl(
        &["validate", "w/merge_trace.txt", "--fixture", "wave"],
        dir.path(),
    );
    assert_eq!(stdout(&v).trim(), "OK");
    fs::write(dir.path().join("wrong.txt"), "0 ls start 2 -inf\n").unwrap();
    let v = rsl(&["validate", "wrong.txt", "--fixture", "wave"], dir.path());
    assert_eq!(v.status.code(), Some(1));
    assert!(stdout(&v).starts_with("line 1:"));
}

#[test]
fn bench_with_no_sizes_prints_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = rsl(&["bench", "--sizes", "", "--format", "csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1, "header only: {}", stdout(&o));
    let o = rsl(&["bench", "--sizes", "64", "--format", "csv"], dir.path());
    assert_eq!(stdout(&o).lines().count(), 2);
}
