//! Batch runs over many instances with per-trace checks and aggregate
//! reports.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::accounting::{audit, PotentialRecorder};
use crate::dual::certify;
use crate::engine::{run_trace_observed, InvariantChecker};
use crate::instance::Instance;
use crate::opt::brute_opt_with_limit;
use crate::ratio::{fmt_exact, int, to_f64, zero, Rational};
use crate::rounding::run_randomized;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentOptions {
    /// Seed for the rounding follow index; rounding is skipped when `None`.
    pub rounding_seed: Option<u64>,
    /// Largest k for which rounding runs.
    pub rounding_max_k: usize,
    pub n_override: Option<u64>,
    /// Universe limit for the brute-force optimum; skipped when `None`.
    pub oracle_max_universe: Option<usize>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            rounding_seed: None,
            rounding_max_k: 4,
            n_override: None,
            oracle_max_universe: None,
        }
    }
}

/// One report row. Exact values are "num/den" strings next to binary64
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub id: String,
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub universe: usize,
    pub steps_checked: usize,
    pub phases: usize,
    pub alg_cost: String,
    pub alg_cost_f64: f64,
    pub invariant_violations: usize,
    pub step_bound_violations: usize,
    pub phase_drop_violations: usize,
    pub cost_bound_holds: bool,
    pub dual_value: String,
    pub lp_lower_bound: String,
    pub lp_lower_bound_f64: f64,
    pub max_slack: String,
    pub max_slack_f64: f64,
    pub ratio_bound: Option<f64>,
    pub slack_within_bound: bool,
    pub sums_are_one: bool,
    pub stage_deltas_match: bool,
    pub ell_closed_form_matches: bool,
    pub cost_within_dual_bound: bool,
    pub certificate_valid: bool,
    pub rounding_expected_cost: Option<String>,
    pub rounding_integral_cost: Option<u64>,
    pub rounding_failures: Option<usize>,
    pub opt_cost: Option<u64>,
    pub lower_bound_below_opt: Option<bool>,
    pub cost_within_opt_bound: Option<bool>,
    /// Semicolon-separated failed checks; empty when the trace passes.
    pub failures: String,
}

impl TraceRow {
    pub fn failed(&self) -> bool {
        !self.failures.is_empty()
    }
}

fn exact_max(a: Rational, b: &Rational) -> Rational {
    if *b > a {
        b.clone()
    } else {
        a
    }
}

/// Runs every check on one instance. Failures are recorded in the row; the
/// function itself never fails.
pub fn run_instance(id: &str, instance: &Instance, opts: &ExperimentOptions) -> TraceRow {
    let (k, m) = (instance.k(), instance.m());
    let mut failures: Vec<String> = Vec::new();
    let mut obs = (InvariantChecker::new(), PotentialRecorder::new());
    let log = match run_trace_observed(instance, &mut obs) {
        Ok((log, _)) => Some(log),
        Err(e) => {
            failures.push(format!("engine: {e}"));
            None
        }
    };
    let (checker, recorder) = obs;
    if !checker.is_clean() {
        failures.push("invariants".into());
    }
    let mut row = TraceRow {
        id: id.to_string(),
        m,
        k,
        t: instance.requests().len(),
        universe: instance.universe().len(),
        steps_checked: checker.steps_checked,
        phases: 0,
        alg_cost: String::new(),
        alg_cost_f64: 0.0,
        invariant_violations: checker.violations.len(),
        step_bound_violations: 0,
        phase_drop_violations: 0,
        cost_bound_holds: false,
        dual_value: String::new(),
        lp_lower_bound: String::new(),
        lp_lower_bound_f64: 0.0,
        max_slack: String::new(),
        max_slack_f64: 0.0,
        ratio_bound: None,
        slack_within_bound: false,
        sums_are_one: false,
        stage_deltas_match: false,
        ell_closed_form_matches: false,
        cost_within_dual_bound: false,
        certificate_valid: false,
        rounding_expected_cost: None,
        rounding_integral_cost: None,
        rounding_failures: None,
        opt_cost: None,
        lower_bound_below_opt: None,
        cost_within_opt_bound: None,
        failures: String::new(),
    };
    let Some(log) = log else {
        row.failures = failures.join(";");
        return row;
    };

    let cost = log.total_cost();
    row.phases = log.phases.len();
    row.alg_cost = fmt_exact(&cost);
    row.alg_cost_f64 = to_f64(&cost);

    let acc = audit(&log, &recorder, k, m);
    row.step_bound_violations = acc.step_violations.len();
    row.phase_drop_violations = acc.phase_drop_violations.len();
    row.cost_bound_holds = acc.cost_bound.holds;
    if !acc.is_clean() {
        failures.push("accounting".into());
    }

    let cert = certify(instance, &log);
    row.dual_value = fmt_exact(&cert.dual_value);
    row.lp_lower_bound = fmt_exact(&cert.lp_lower_bound);
    row.lp_lower_bound_f64 = to_f64(&cert.lp_lower_bound);
    row.max_slack = fmt_exact(&cert.max_slack);
    row.max_slack_f64 = to_f64(&cert.max_slack);
    row.ratio_bound = cert.ratio_bound;
    row.slack_within_bound = cert.checks.feasible;
    row.sums_are_one = cert.checks.sums_are_one;
    row.stage_deltas_match = cert.checks.stage_deltas_match;
    row.ell_closed_form_matches = cert.checks.ell_closed_form_matches;
    row.cost_within_dual_bound = cert.checks.cost_within_dual_bound;
    row.certificate_valid = cert.valid;
    let named = [
        ("dual-slack", cert.checks.feasible),
        ("dual-sums", cert.checks.sums_are_one),
        ("dual-stage-deltas", cert.checks.stage_deltas_match),
        ("dual-ell-closed-form", cert.checks.ell_closed_form_matches),
        ("dual-cost-bound", cert.checks.cost_within_dual_bound),
        ("dual-pseudo-clean", cert.checks.pseudo_clean_bounded),
        ("dual-monotone", cert.checks.monotone),
        ("dual-objective", cert.checks.objective_consistent),
        ("dual-nonnegative", cert.checks.nonnegative),
    ];
    failures.extend(named.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.to_string()));

    if let Some(seed) = opts.rounding_seed.filter(|_| k <= opts.rounding_max_k) {
        match run_randomized(instance, seed, opts.n_override) {
            Ok(run) => {
                row.rounding_expected_cost = Some(fmt_exact(&run.expected_cost));
                row.rounding_integral_cost = Some(run.integral_cost);
                row.rounding_failures = Some(run.failures.len());
                if !run.is_clean() {
                    failures.push("rounding".into());
                }
            }
            Err(e) => failures.push(format!("rounding: {e}")),
        }
    }

    if let Some(limit) = opts.oracle_max_universe {
        if let Ok(opt) = brute_opt_with_limit(instance, limit) {
            let lb_ok = cert.lp_lower_bound <= int(opt.opt_cost as i64);
            let w = crate::accounting::full_weight(k);
            let rhs = w * ((m * k) as f64 + 5.0 * opt.opt_cost as f64);
            let cost_ok = to_f64(&cost) <= rhs + crate::accounting::EPS;
            row.opt_cost = Some(opt.opt_cost);
            row.lower_bound_below_opt = Some(lb_ok);
            row.cost_within_opt_bound = Some(cost_ok);
            if !lb_ok {
                failures.push("oracle-lower-bound".into());
            }
            if !cost_ok {
                failures.push("oracle-cost-bound".into());
            }
        }
    }
    row.failures = failures.join(";");
    row
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub traces: usize,
    pub failures: usize,
    pub max_slack: String,
    pub worst_ratio_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<TraceRow>,
}

impl Report {
    pub fn summary(&self) -> Summary {
        let max_slack = self
            .rows
            .iter()
            .filter_map(|r| crate::ratio::parse_exact(&r.max_slack))
            .fold(zero(), |acc, s| exact_max(acc, &s));
        Summary {
            traces: self.rows.len(),
            failures: self.rows.iter().filter(|r| r.failed()).count(),
            max_slack: fmt_exact(&max_slack),
            worst_ratio_bound: self.rows.iter().filter_map(|r| r.ratio_bound).reduce(f64::max),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }
}

/// Runs every instance on the worker pool; rows come back ordered by id.
pub fn run_experiment(instances: &[(String, Instance)], opts: &ExperimentOptions) -> Report {
    let mut rows: Vec<TraceRow> = instances
        .par_iter()
        .map(|(id, inst)| run_instance(id, inst, opts))
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    Report { rows }
}
