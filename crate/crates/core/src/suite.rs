//! The full acceptance battery: seeded batches, per-criterion verdicts and
//! report files.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::accounting::EPS;
use crate::engine::run_trace;
use crate::harness::{run_experiment, ExperimentOptions, Report};
use crate::instance::Instance;
use crate::opt::brute_opt_with_limit;
use crate::paging::{check_fm_bound, fm_run, rm_exact_marginals, rm_sample_stats, ENUM_MAX_K, ENUM_MAX_T};
use crate::ratio::{fmt_exact, to_f64};
use crate::workload::{generate, random_paging_specs, random_specs, Limits, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub traces: usize,
    pub tiny_seed: u64,
    pub tiny_traces: usize,
    pub paging_seed: u64,
    pub paging_traces: usize,
    /// Traces of the paging batch that get the RM sampling check.
    pub sampled_traces: usize,
    pub rm_seeds: u64,
    pub oracle_max_universe: usize,
    pub n_override: Option<u64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            traces: 1000,
            tiny_seed: 7,
            tiny_traces: 250,
            paging_seed: 11,
            paging_traces: 300,
            sampled_traces: 4,
            rm_seeds: 10_000,
            oracle_max_universe: Limits::TINY.max_universe,
            n_override: None,
        }
    }
}

/// Single-agent traces small enough for exhaustive RM enumeration.
pub const PAGING_TINY: Limits = Limits {
    max_m: 1,
    max_k: ENUM_MAX_K,
    max_universe: 8,
    max_t: ENUM_MAX_T,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    /// Labels of the failing sub-checks.
    pub failed_parts: Vec<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PagingRow {
    pub id: String,
    pub k: usize,
    pub t: usize,
    pub universe: usize,
    pub fm_cost: String,
    pub fm_cost_f64: f64,
    pub engine_matches: bool,
    pub sum_ell: usize,
    pub fm_bound_rhs: f64,
    pub fm_bound_holds: bool,
    pub exhaustive_matches: Option<bool>,
    pub rm_mean: Option<f64>,
    pub rm_std_error: Option<f64>,
    pub rm_within_4se: Option<bool>,
    pub opt_cost: Option<u64>,
    pub ell_within_2opt: Option<bool>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutputs {
    pub criteria: Vec<CriterionResult>,
    pub batch: Report,
    pub tiny: Report,
    pub paging: Vec<PagingRow>,
}

fn labelled(prefix: &str, specs: Vec<WorkloadSpec>) -> Vec<(String, Instance)> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (
                format!("{prefix}-{i:05}"),
                generate(s).expect("random specs are consistent"),
            )
        })
        .collect()
}

fn paging_row(id: &str, inst: &Instance, rm_seeds: Option<u64>, oracle_max_universe: usize) -> PagingRow {
    let mut row = PagingRow {
        id: id.to_string(),
        k: inst.k(),
        t: inst.requests().len(),
        universe: inst.universe().len(),
        fm_cost: String::new(),
        fm_cost_f64: 0.0,
        engine_matches: false,
        sum_ell: 0,
        fm_bound_rhs: 0.0,
        fm_bound_holds: false,
        exhaustive_matches: None,
        rm_mean: None,
        rm_std_error: None,
        rm_within_4se: None,
        opt_cost: None,
        ell_within_2opt: None,
        error: String::new(),
    };
    let fm = match fm_run(inst) {
        Ok(fm) => fm,
        Err(e) => {
            row.error = e.to_string();
            return row;
        }
    };
    let cost = fm.total_cost();
    row.fm_cost = fmt_exact(&cost);
    row.fm_cost_f64 = to_f64(&cost);
    row.engine_matches = match run_trace(inst) {
        Ok((log, _)) => log
            .steps
            .iter()
            .map(|s| &s.fetch_cost)
            .eq(fm.steps.iter().map(|s| &s.cost)),
        Err(e) => {
            row.error = e.to_string();
            false
        }
    };
    let bound = check_fm_bound(&fm);
    row.sum_ell = bound.sum_ell;
    row.fm_bound_rhs = bound.rhs;
    row.fm_bound_holds = bound.holds;
    if let Ok(marginals) = rm_exact_marginals(inst) {
        let mut replay = crate::paging::FmState::new(inst).expect("classic instance");
        row.exhaustive_matches = Some(
            inst.requests()
                .iter()
                .zip(&marginals)
                .all(|(&p, m)| replay.fm_step(p).is_ok() && m.as_slice() == replay.y_values()),
        );
    }
    if let Some(seeds) = rm_seeds {
        let (mean, se) = rm_sample_stats(inst, 0..seeds);
        row.rm_mean = Some(mean);
        row.rm_std_error = Some(se);
        row.rm_within_4se = Some((mean - row.fm_cost_f64).abs() <= 4.0 * se + EPS);
    }
    if let Ok(opt) = brute_opt_with_limit(inst, oracle_max_universe) {
        row.opt_cost = Some(opt.opt_cost);
        row.ell_within_2opt = Some(bound.sum_ell as u64 <= 2 * opt.opt_cost);
    }
    row
}

fn verdict(id: u8, title: &str, parts: Vec<(&str, usize, String)>) -> CriterionResult {
    let failed_parts: Vec<String> = parts
        .iter()
        .filter(|(_, n, _)| *n > 0)
        .map(|(l, _, _)| l.to_string())
        .collect();
    let detail = parts
        .iter()
        .map(|(l, n, what)| {
            let head = if l.is_empty() { String::new() } else { format!("({l}) ") };
            if *n == 0 {
                format!("{head}{what}: ok")
            } else {
                format!("{head}{what}: {n} failing")
            }
        })
        .collect::<Vec<_>>()
        .join("; ");
    CriterionResult {
        id,
        title: title.to_string(),
        passed: failed_parts.is_empty(),
        failed_parts,
        detail,
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> SuiteOutputs {
    let batch_inputs = labelled("batch", random_specs(cfg.seed, cfg.traces, Limits::STANDARD));
    let batch = run_experiment(
        &batch_inputs,
        &ExperimentOptions {
            rounding_seed: Some(cfg.seed),
            rounding_max_k: 4,
            n_override: cfg.n_override,
            oracle_max_universe: None,
        },
    );
    let tiny_inputs = labelled("tiny", random_specs(cfg.tiny_seed, cfg.tiny_traces, Limits::TINY));
    let tiny = run_experiment(
        &tiny_inputs,
        &ExperimentOptions {
            oracle_max_universe: Some(cfg.oracle_max_universe),
            ..Default::default()
        },
    );
    let mut paging_inputs = labelled(
        "paging",
        random_paging_specs(cfg.paging_seed, cfg.paging_traces, Limits::STANDARD),
    );
    paging_inputs.extend(labelled(
        "paging-tiny",
        random_paging_specs(cfg.paging_seed.wrapping_add(1), cfg.paging_traces, PAGING_TINY),
    ));
    let paging: Vec<PagingRow> = paging_inputs
        .par_iter()
        .enumerate()
        .map(|(i, (id, inst))| {
            let sampled = (i < cfg.sampled_traces).then_some(cfg.rm_seeds);
            paging_row(id, inst, sampled, cfg.oracle_max_universe)
        })
        .collect();

    let criteria = vec![
        criterion_engine(&batch),
        criterion_potential(&batch),
        criterion_dual(&batch),
        criterion_sandwich(&tiny),
        criterion_rounding(&batch),
        criterion_paging(&paging, cfg),
    ];
    SuiteOutputs {
        criteria,
        batch,
        tiny,
        paging,
    }
}

fn criterion_engine(batch: &Report) -> CriterionResult {
    let rows = &batch.rows;
    let steps: usize = rows.iter().map(|r| r.steps_checked).sum();
    let errors = rows.iter().filter(|r| r.failures.contains("engine:")).count();
    let violations: usize = rows.iter().map(|r| r.invariant_violations).sum();
    let mut out = verdict(
        1,
        "engine invariants",
        vec![
            ("", errors, "engine errors".into()),
            ("", violations, "state invariants".into()),
        ],
    );
    out.detail = format!("{} traces, {steps} steps; {}", rows.len(), out.detail);
    out
}

fn criterion_potential(batch: &Report) -> CriterionResult {
    let rows = &batch.rows;
    let fails = |f: &dyn Fn(&crate::harness::TraceRow) -> bool| rows.iter().filter(|r| f(r)).count();
    verdict(
        2,
        "potential bounds",
        vec![
            ("step", fails(&|r| r.step_bound_violations > 0), "per-step bound".into()),
            ("phase", fails(&|r| r.phase_drop_violations > 0), "phase drop".into()),
            (
                "cost",
                fails(&|r| !r.cost_bound_holds || r.failures.contains("accounting")),
                "cost bound".into(),
            ),
        ],
    )
}

fn criterion_dual(batch: &Report) -> CriterionResult {
    let rows = &batch.rows;
    let fails = |f: &dyn Fn(&crate::harness::TraceRow) -> bool| rows.iter().filter(|r| f(r)).count();
    let max_slack = batch.summary().max_slack;
    verdict(
        3,
        "dual certificate",
        vec![
            (
                "a",
                fails(&|r| !r.slack_within_bound),
                format!("slack ≤ 5 (max {max_slack})"),
            ),
            ("b", fails(&|r| !r.sums_are_one), "per-phase sums equal 1".into()),
            ("c", fails(&|r| !r.stage_deltas_match), "stage deltas".into()),
            ("d", fails(&|r| !r.ell_closed_form_matches), "ℓ closed form".into()),
            (
                "e",
                fails(&|r| !r.cost_within_dual_bound),
                "cost ≤ 2ln(1+k)(mk + dual)".into(),
            ),
            (
                "other",
                fails(&|r| {
                    r.failures.split(';').any(|f| {
                        f.starts_with("engine")
                            || matches!(
                                f,
                                "dual-pseudo-clean" | "dual-monotone" | "dual-objective" | "dual-nonnegative"
                            )
                    })
                }),
                "pseudo-clean, monotone, objective, sign checks".into(),
            ),
        ],
    )
}

fn criterion_sandwich(tiny: &Report) -> CriterionResult {
    let rows = &tiny.rows;
    let with_opt = rows.iter().filter(|r| r.opt_cost.is_some()).count();
    let mut out = verdict(
        4,
        "ground-truth sandwich",
        vec![
            (
                "size",
                usize::from(with_opt < 200),
                format!("{with_opt} instances with oracle (need ≥ 200)"),
            ),
            (
                "lb",
                rows.iter().filter(|r| r.lower_bound_below_opt == Some(false)).count(),
                "dual/5 ≤ OPT".into(),
            ),
            (
                "cost",
                rows.iter().filter(|r| r.cost_within_opt_bound == Some(false)).count(),
                "cost ≤ 2ln(1+k)(mk + 5·OPT)".into(),
            ),
            (
                "engine",
                rows.iter().filter(|r| r.failures.contains("engine:")).count(),
                "engine errors".into(),
            ),
        ],
    );
    out.detail = format!("{} instances; {}", rows.len(), out.detail);
    out
}

fn criterion_rounding(batch: &Report) -> CriterionResult {
    let rows: Vec<_> = batch.rows.iter().filter(|r| r.k <= 4).collect();
    let missing = rows.iter().filter(|r| r.rounding_failures.is_none()).count();
    let failing = rows
        .iter()
        .filter(|r| r.rounding_failures.is_some_and(|n| n > 0))
        .count();
    let mut out = verdict(
        5,
        "rounding suite",
        vec![
            ("run", missing, "rounding runs completed".into()),
            ("checks", failing, "per-step checks".into()),
        ],
    );
    out.detail = format!("{} traces with k ≤ 4; {}", rows.len(), out.detail);
    out
}

fn criterion_paging(rows: &[PagingRow], cfg: &SuiteConfig) -> CriterionResult {
    let n = |f: &dyn Fn(&PagingRow) -> bool| rows.iter().filter(|r| f(r)).count();
    let exhaustive = n(&|r| r.exhaustive_matches.is_some());
    let sampled = n(&|r| r.rm_within_4se.is_some());
    let with_opt = n(&|r| r.ell_within_2opt.is_some());
    let mut out = verdict(
        6,
        "paging equivalences",
        vec![
            ("a", n(&|r| !r.engine_matches), "engine matches FM".into()),
            (
                "b",
                n(&|r| r.exhaustive_matches == Some(false)) + usize::from(exhaustive == 0),
                format!("exhaustive RM marginals on {exhaustive} traces"),
            ),
            (
                "c",
                n(&|r| r.rm_within_4se == Some(false)) + usize::from(sampled == 0),
                format!("RM mean over {} seeds on {sampled} traces", cfg.rm_seeds),
            ),
            ("d", n(&|r| !r.fm_bound_holds), "FM cost bound".into()),
            (
                "e",
                n(&|r| r.ell_within_2opt == Some(false)) + usize::from(with_opt == 0),
                format!("Σℓ ≤ 2·OPT on {with_opt} traces"),
            ),
            ("error", n(&|r| !r.error.is_empty()), "run errors".into()),
        ],
    );
    out.detail = format!("{} traces; {}", rows.len(), out.detail);
    out
}

impl SuiteOutputs {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    /// Writes every report file into `dir`. No timing or host data goes into
    /// the files, so identical configs give identical bytes.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let csv_err = |e: csv::Error| io::Error::other(e);
        self.batch
            .write_csv(fs::File::create(dir.join("batch.csv"))?)
            .map_err(csv_err)?;
        fs::write(dir.join("batch_summary.json"), self.batch.summary_json())?;
        self.tiny
            .write_csv(fs::File::create(dir.join("tiny.csv"))?)
            .map_err(csv_err)?;
        fs::write(dir.join("tiny_summary.json"), self.tiny.summary_json())?;
        let mut w = csv::Writer::from_path(dir.join("paging.csv")).map_err(csv_err)?;
        for row in &self.paging {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        let criteria = serde_json::to_string_pretty(&self.criteria).expect("criteria serialize");
        fs::write(dir.join("criteria.json"), criteria)?;
        Ok(())
    }
}

pub const OUTPUT_FILES: [&str; 6] = [
    "batch.csv",
    "batch_summary.json",
    "tiny.csv",
    "tiny_summary.json",
    "paging.csv",
    "criteria.json",
];

/// Runs the suite twice into `a` and `b` and compares every output file
/// byte for byte.
pub fn check_determinism(cfg: &SuiteConfig, a: &Path, b: &Path) -> io::Result<(SuiteOutputs, CriterionResult)> {
    let first = run_suite(cfg);
    first.write(a)?;
    run_suite(cfg).write(b)?;
    let mut parts = Vec::new();
    for name in OUTPUT_FILES {
        let same = fs::read(a.join(name))? == fs::read(b.join(name))?;
        parts.push((name, usize::from(!same), "byte-identical".to_string()));
    }
    Ok((first, verdict(7, "determinism", parts)))
}

/// One summary line per criterion.
pub fn format_line(c: &CriterionResult) -> String {
    let tag = if c.passed { "PASS" } else { "FAIL" };
    format!("{tag} criterion {}: {} | {}", c.id, c.title, c.detail)
}
