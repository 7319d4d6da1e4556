use std::path::Path;
use std::process::{Command, Output};

fn rcache(args: &str, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcache"))
        .args(args.split_whitespace())
        .args(extra)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn gen(dir: &Path, name: &str, args: &str) -> String {
    let path = dir.join(name).to_str().unwrap().to_string();
    let o = rcache(&format!("gen {args}"), &["--out", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

const RESERVE_TRACE: &str = "--model zipf --m 2 --k 3 --reserves 1,0 --pages-per-agent 3,4 --t 10 --seed 9";
const CLASSIC_TRACE: &str = "--model uniform --m 1 --k 2 --reserves 0 --pages-per-agent 4 --t 15 --seed 2";

#[test]
fn gen_is_deterministic() {
    let args = "gen --model uniform --m 2 --k 2 --reserves 1,0 --pages-per-agent 2,3 --t 20 --seed 4";
    let a = rcache(args, &[]);
    let b = rcache(args, &[]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("{\"m\":2,\"k\":2,\"reserves\":[1,0]"));
}

#[test]
fn cycle_trace_from_gen() {
    let o = rcache(
        "gen --model cycle-adversary --m 1 --k 2 --reserves 0 --pages-per-agent 3 --t 9",
        &[],
    );
    assert!(stdout(&o).contains(r#""requests":["0/a","0/b","0/c","0/a","0/b","0/c","0/a","0/b","0/c"]"#));
}

#[test]
fn pipeline_on_a_reserve_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen(dir.path(), "t.json", RESERVE_TRACE);

    let run_dir = dir.path().join("run");
    let o = rcache("run", &["--trace", &trace, "--out", run_dir.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("invariant_violations=0 accounting_clean=true"));
    let steps = std::fs::read_to_string(run_dir.join("steps.csv")).unwrap();
    assert!(steps.starts_with("t,agent,page,fetch_cost,classification,r0\n"));
    assert_eq!(steps.lines().count(), 11);

    let cert = dir.path().join("c.json");
    let o = rcache("certify", &["--trace", &trace, "--out", cert.to_str().unwrap()]);
    assert!(stdout(&o).contains("dual="));
    let json = std::fs::read_to_string(&cert).unwrap();
    assert!(json.contains("\"lp_lower_bound\""));

    let audit = dir.path().join("a.csv");
    let o = rcache("round --seed 1", &["--trace", &trace, "--out", audit.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(std::fs::read_to_string(&audit).unwrap().starts_with("t,removals,"));

    let o = rcache("opt", &["--trace", &trace]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("opt_cost="));
}

#[test]
fn paging_on_a_classic_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen(dir.path(), "p.json", CLASSIC_TRACE);
    let o = rcache("paging --samples 200", &["--trace", &trace]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("holds=true"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen(dir.path(), "t.json", RESERVE_TRACE);
    assert_eq!(rcache("paging", &["--trace", &trace]).status.code(), Some(2));
    assert_eq!(rcache("run --trace /nonexistent.json", &[]).status.code(), Some(2));
    let bad_reserves = "gen --model zipf --m 1 --k 2 --reserves 2 --pages-per-agent 3 --t 1";
    assert_eq!(rcache(bad_reserves, &[]).status.code(), Some(2));
}
