//! Dual-fitting lower bound built by replaying sealed phases.
//!
//! Variables: α(t) per timestep, β(t, i) per timestep and agent, γ(q, a) per
//! page and request ordinal. After every sealed phase two update stages run;
//! their objective gains are checked against closed forms read off the phase
//! records, and the final solution is checked to violate no constraint by
//! more than a factor [`SLACK_BOUND`].

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_traits::{One, Signed};
use serde::Serialize;

use crate::accounting::{full_weight, stale_evictions, EPS};
use crate::engine::{EventLog, PhaseRecord};
use crate::instance::{AgentId, Instance, PageId, Universe};
use crate::ratio::{exact_str, fmt_exact, int, one, to_f64, zero, Rational};

/// Every constraint Σ_{t∈I(q,a)} (α(t) − β(t,ag(q))) − γ(q,a) ≤ 1 holds up to
/// this factor.
pub const SLACK_BOUND: i64 = 5;

/// Request times per page, used to evaluate a(q, t) and the intervals
/// I(q, a).
#[derive(Debug, Clone)]
pub struct RequestIndex {
    times: Vec<Vec<usize>>,
}

impl RequestIndex {
    pub fn new(instance: &Instance) -> Self {
        let mut times = vec![Vec::new(); instance.universe().len()];
        for (s, &p) in instance.requests().iter().enumerate() {
            times[p.idx()].push(s + 1);
        }
        Self { times }
    }

    /// a(q, t): requests to q in steps 1..=t.
    pub fn ordinal(&self, q: PageId, t: usize) -> usize {
        self.times[q.idx()].partition_point(|&s| s <= t)
    }

    /// Interval I(q, a) = (t_{q,a}, t_{q,a+1}) truncated at `horizon`, as an
    /// inclusive range that may be empty.
    pub fn interval(&self, q: PageId, a: usize, horizon: usize) -> (usize, usize) {
        let times = &self.times[q.idx()];
        let start = if a == 0 { 1 } else { times[a - 1] + 1 };
        let end = times.get(a).map_or(horizon, |&s| (s - 1).min(horizon));
        (start, end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DualSolution {
    pub alpha: BTreeMap<usize, Rational>,
    pub beta: BTreeMap<(usize, AgentId), Rational>,
    pub gamma: BTreeMap<(PageId, usize), Rational>,
}

impl DualSolution {
    pub fn alpha(&self, t: usize) -> Rational {
        self.alpha.get(&t).cloned().unwrap_or_else(zero)
    }

    pub fn beta(&self, t: usize, agent: AgentId) -> Rational {
        self.beta.get(&(t, agent)).cloned().unwrap_or_else(zero)
    }

    pub fn gamma(&self, q: PageId, a: usize) -> Rational {
        self.gamma.get(&(q, a)).cloned().unwrap_or_else(zero)
    }

    pub fn has_negative(&self) -> bool {
        self.alpha
            .values()
            .chain(self.beta.values())
            .chain(self.gamma.values())
            .any(|v| v.is_negative())
    }
}

/// Σ(n−k)α − Σ(nᵢ−kᵢ)β − Σγ, with γ summed over every ordinal including 0.
pub fn dual_objective(dual: &DualSolution, universe: &Universe, k: usize, reserves: &[usize]) -> Rational {
    let n = universe.len() as i64;
    let mut total = zero();
    for a in dual.alpha.values() {
        total += a * int(n - k as i64);
    }
    for (&(_, i), b) in &dual.beta {
        total -= b * int(universe.agent_len(i) as i64 - reserves[i] as i64);
    }
    for g in dual.gamma.values() {
        total -= g;
    }
    total
}

fn count(n: usize) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// C(r₀) re-derived from the step reports, and the closed form
/// Σ_{i ∉ ℐ(r₀−1) ∪ ℐ(r₀)} |P(i,rᵢ)\P(i,rᵢ−1)| + Σ_{i ∈ ℐ(r₀−1)\ℐ(r₀)} (|P(i,rᵢ)| − kᵢ).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseCount {
    pub c: Vec<usize>,
    pub ell: usize,
    pub closed_form: i64,
    /// Members of C(r₀) whose requester ends the phase isolated. The closed
    /// form cannot see these: such agents take no snapshot.
    pub from_isolated_at_end: usize,
}

impl PhaseCount {
    pub fn matches(&self) -> bool {
        self.ell as i64 == self.closed_form
    }
}

pub fn compute_c(log: &EventLog, phase: &PhaseRecord, reserves: &[usize]) -> PhaseCount {
    let c: Vec<usize> = phase.steps().filter(|&t| log.step(t).counts_toward_phase()).collect();
    let mut closed_form = 0i64;
    for r in &phase.resets {
        if phase.isolated_at_start(r.agent) {
            closed_form += r.snapshot.len() as i64 - reserves[r.agent] as i64;
        } else {
            closed_form += r.snapshot.iter().filter(|p| !r.stale_before.contains(p)).count() as i64;
        }
    }
    let from_isolated_at_end = c.iter().filter(|&&t| phase.isolated_at_end(log.step(t).agent)).count();
    PhaseCount {
        ell: c.len(),
        c,
        closed_form,
        from_isolated_at_end,
    }
}

/// i-pages outside P(i, rᵢ−1) ∪ P(i, rᵢ) for the reset of `agent` in `phase`.
fn outside_pages(universe: &Universe, phase: &PhaseRecord, agent: AgentId) -> Vec<PageId> {
    let r = phase.reset_of(agent).expect("agent reset in this phase");
    let known: BTreeSet<PageId> = r.stale_before.iter().chain(&r.snapshot).copied().collect();
    universe.agent_pages(agent).filter(|q| !known.contains(q)).collect()
}

fn union_len(phase: &PhaseRecord, agent: AgentId) -> usize {
    let r = phase.reset_of(agent).expect("agent reset in this phase");
    r.stale_before.iter().chain(&r.snapshot).collect::<BTreeSet<_>>().len()
}

struct Context<'a> {
    universe: &'a Universe,
    index: RequestIndex,
    k: usize,
    reserves: &'a [usize],
}

impl Context<'_> {
    fn raise_gamma(&self, dual: &mut DualSolution, q: PageId, t: usize, v: &Rational) {
        *dual.gamma.entry((q, self.index.ordinal(q, t))).or_insert_with(zero) += v;
    }

    fn n_minus_k(&self) -> Rational {
        int(self.universe.len() as i64 - self.k as i64)
    }

    fn agent_slack(&self, i: AgentId) -> Rational {
        int(self.universe.agent_len(i) as i64 - self.reserves[i] as i64)
    }
}

/// update(r₀, 1). Returns the objective change computed from the increments.
pub fn update_stage1(
    dual: &mut DualSolution,
    phase: &PhaseRecord,
    c: &[usize],
    universe: &Universe,
    index: &RequestIndex,
    k: usize,
    reserves: &[usize],
) -> Rational {
    let ctx = Context {
        universe,
        index: index.clone(),
        k,
        reserves,
    };
    stage1(&ctx, dual, phase, c)
}

fn stage1(ctx: &Context<'_>, dual: &mut DualSolution, phase: &PhaseRecord, c: &[usize]) -> Rational {
    if c.is_empty() {
        return zero();
    }
    let share = one() / count(c.len());
    let outside: Vec<(AgentId, Vec<PageId>)> = phase
        .resets
        .iter()
        .map(|r| (r.agent, outside_pages(ctx.universe, phase, r.agent)))
        .collect();
    let mut delta = zero();
    for &t in c {
        *dual.alpha.entry(t).or_insert_with(zero) += &share;
        delta += &share * ctx.n_minus_k();
        for &i in &phase.isolated_at_end {
            *dual.beta.entry((t, i)).or_insert_with(zero) += &share;
            delta -= &share * ctx.agent_slack(i);
        }
        for (_, pages) in &outside {
            for &q in pages {
                ctx.raise_gamma(dual, q, t, &share);
                delta -= &share;
            }
        }
    }
    delta
}

/// update(r₀, 2) for the agents that were isolated at the end of the previous
/// phase `prev` and reset in `phase`.
pub fn update_stage2(
    dual: &mut DualSolution,
    phase: &PhaseRecord,
    prev: Option<&PhaseRecord>,
    universe: &Universe,
    index: &RequestIndex,
    k: usize,
    reserves: &[usize],
) -> Rational {
    let ctx = Context {
        universe,
        index: index.clone(),
        k,
        reserves,
    };
    stage2(&ctx, dual, phase, prev)
}

fn stage2(ctx: &Context<'_>, dual: &mut DualSolution, phase: &PhaseRecord, prev: Option<&PhaseRecord>) -> Rational {
    let Some(prev) = prev else { return zero() };
    let mut delta = zero();
    for &i in &phase.isolated_at_start {
        if phase.isolated_at_end(i) {
            continue;
        }
        let pages = outside_pages(ctx.universe, phase, i);
        for t in prev.steps() {
            let b = dual.beta(t, i);
            if !b.is_positive() {
                continue;
            }
            for &q in &pages {
                ctx.raise_gamma(dual, q, t, &b);
                delta -= &b;
            }
            delta += &b * ctx.agent_slack(i);
            dual.beta.remove(&(t, i));
        }
    }
    delta
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlackViolation {
    pub page: String,
    pub ordinal: usize,
    #[serde(with = "exact_str")]
    pub slack: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Feasibility {
    #[serde(with = "exact_str")]
    pub max_slack: Rational,
    pub constraints: usize,
    pub violations: Vec<SlackViolation>,
}

/// Evaluates every constraint (q, a) with a ≤ a(q, T) over intervals
/// truncated at `horizon` = T.
pub fn check_feasibility(
    dual: &DualSolution,
    instance: &Instance,
    index: &RequestIndex,
    horizon: usize,
) -> Feasibility {
    let u = instance.universe();
    let bound = int(SLACK_BOUND);
    // prefix[i][t] = Σ_{s ≤ t} (α(s) − β(s, i))
    let prefix: Vec<Vec<Rational>> = (0..instance.m())
        .map(|i| {
            let mut acc = zero();
            let mut out = vec![zero()];
            for t in 1..=horizon {
                acc += dual.alpha(t) - dual.beta(t, i);
                out.push(acc.clone());
            }
            out
        })
        .collect();
    let mut max_slack: Option<Rational> = None;
    let mut constraints = 0;
    let mut violations = Vec::new();
    for q in u.pages() {
        let i = u.owner(q);
        for a in 0..=index.ordinal(q, horizon) {
            let (start, end) = index.interval(q, a, horizon);
            let sum = if start <= end {
                &prefix[i][end] - &prefix[i][start - 1]
            } else {
                zero()
            };
            let slack = sum - dual.gamma(q, a);
            constraints += 1;
            if slack > bound {
                violations.push(SlackViolation {
                    page: u.page_ref(q).to_string(),
                    ordinal: a,
                    slack: slack.clone(),
                });
            }
            if max_slack.as_ref().is_none_or(|m| slack > *m) {
                max_slack = Some(slack);
            }
        }
    }
    Feasibility {
        max_slack: max_slack.unwrap_or_else(zero),
        constraints,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgentSum {
    pub agent: AgentId,
    #[serde(with = "exact_str")]
    pub sum: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseAudit {
    pub r0: u32,
    pub ell: usize,
    /// Closed-form value of ℓ from the snapshots.
    pub ell_closed_form: i64,
    pub ell_from_isolated_at_end: usize,
    /// Updates were skipped because C(r₀) is empty.
    pub skipped: bool,
    #[serde(with = "exact_str")]
    pub stage1_delta: Rational,
    pub stage1_expected: usize,
    #[serde(with = "exact_str")]
    pub stage2_delta: Rational,
    pub stage2_expected: i64,
    /// Σ α(t) over the phase right after stage 1.
    #[serde(with = "exact_str")]
    pub alpha_sum: Rational,
    /// Σ β(t, i) over the phase right after stage 1, for i ∈ ℐ(r₀).
    pub beta_sums: Vec<AgentSum>,
    /// Agents de-isolated in this phase whose pseudo-clean requests exceed
    /// |P(i, rᵢ)| − kᵢ.
    pub pseudo_clean_excess: Vec<AgentId>,
}

impl PhaseAudit {
    pub fn ell_matches(&self) -> bool {
        self.ell as i64 == self.ell_closed_form
    }

    pub fn stage1_matches(&self) -> bool {
        self.stage1_delta == int(self.stage1_expected as i64)
    }

    pub fn stage2_matches(&self) -> bool {
        self.stage2_delta == int(self.stage2_expected)
    }

    /// Σα = 1 and Σβ(·, i) = 1 over the phase; phases whose updates were skipped have nothing
    /// to normalize.
    pub fn sums_are_one(&self) -> bool {
        self.skipped || (self.alpha_sum.is_one() && self.beta_sums.iter().all(|b| b.sum.is_one()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CertificateChecks {
    pub feasible: bool,
    pub sums_are_one: bool,
    pub stage_deltas_match: bool,
    pub ell_closed_form_matches: bool,
    pub cost_within_dual_bound: bool,
    pub pseudo_clean_bounded: bool,
    pub monotone: bool,
    pub objective_consistent: bool,
    pub nonnegative: bool,
}

impl CertificateChecks {
    pub fn all(&self) -> bool {
        self.feasible
            && self.sums_are_one
            && self.stage_deltas_match
            && self.ell_closed_form_matches
            && self.cost_within_dual_bound
            && self.pseudo_clean_bounded
            && self.monotone
            && self.objective_consistent
            && self.nonnegative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// Algorithm cost through the last sealed phase.
    #[serde(with = "exact_str")]
    pub alg_cost: Rational,
    #[serde(with = "exact_str")]
    pub total_cost: Rational,
    pub horizon: usize,
    #[serde(with = "exact_str")]
    pub dual_value: Rational,
    #[serde(with = "exact_str")]
    pub max_slack: Rational,
    #[serde(with = "exact_str")]
    pub lp_lower_bound: Rational,
    /// alg_cost / lp_lower_bound; absent when the lower bound is 0.
    pub ratio_bound: Option<f64>,
    /// 2ln(1+k)·(mk + dual)
    pub cost_bound_rhs: f64,
    pub skipped_phases: usize,
    pub phases: Vec<PhaseAudit>,
    pub feasibility: Feasibility,
    pub checks: CertificateChecks,
    pub valid: bool,
}

impl Certificate {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("certificate serializes")
    }
}

/// Builds the dual through the last sealed phase and runs every check.
pub fn build_dual(instance: &Instance, log: &EventLog) -> (DualSolution, Certificate) {
    let u = instance.universe();
    let k = instance.k();
    let m = instance.m();
    let reserves = instance.reserves();
    let ctx = Context {
        universe: u,
        index: RequestIndex::new(instance),
        k,
        reserves,
    };
    let mut dual = DualSolution::default();
    let mut phases = Vec::new();
    let mut running = zero();
    let mut monotone = true;

    for (idx, phase) in log.phases.iter().enumerate() {
        let pc = compute_c(log, phase, reserves);
        let skipped = pc.ell == 0;
        let stage1_delta = stage1(&ctx, &mut dual, phase, &pc.c);
        let alpha_sum = phase.steps().fold(zero(), |acc, t| acc + dual.alpha(t));
        let beta_sums = phase
            .isolated_at_end
            .iter()
            .map(|&i| AgentSum {
                agent: i,
                sum: phase.steps().fold(zero(), |acc, t| acc + dual.beta(t, i)),
            })
            .collect();
        let prev = idx.checked_sub(1).map(|j| &log.phases[j]);
        let stage2_delta = stage2(&ctx, &mut dual, phase, prev);

        let deisolated: Vec<AgentId> = phase
            .isolated_at_start
            .iter()
            .copied()
            .filter(|&i| !phase.isolated_at_end(i))
            .collect();
        let stage2_expected = deisolated
            .iter()
            .map(|&i| union_len(phase, i) as i64 - reserves[i] as i64)
            .sum();
        let pseudo_clean_excess = deisolated
            .iter()
            .copied()
            .filter(|&i| {
                let snap = phase.reset_of(i).expect("reset").snapshot.len() as i64;
                (phase.pseudo_clean[i] as i64) > snap - reserves[i] as i64
            })
            .collect();

        for d in [&stage1_delta, &stage2_delta] {
            if d.is_negative() {
                monotone = false;
            }
            running += d;
        }
        phases.push(PhaseAudit {
            r0: phase.r0,
            ell: pc.ell,
            ell_closed_form: pc.closed_form,
            ell_from_isolated_at_end: pc.from_isolated_at_end,
            skipped,
            stage1_delta,
            stage1_expected: stale_evictions(phase),
            stage2_delta,
            stage2_expected,
            alpha_sum,
            beta_sums,
            pseudo_clean_excess,
        });
    }

    let horizon = log.sealed_horizon();
    let dual_value = dual_objective(&dual, u, k, reserves);
    let feasibility = check_feasibility(&dual, instance, &ctx.index, horizon);
    let alg_cost = log.cost_through(horizon);
    let lp_lower_bound = &dual_value / int(SLACK_BOUND);
    let cost_bound_rhs = full_weight(k) * (m as f64 * k as f64 + to_f64(&dual_value));
    let ratio_bound = lp_lower_bound
        .is_positive()
        .then(|| to_f64(&(&alg_cost / &lp_lower_bound)));

    let checks = CertificateChecks {
        feasible: feasibility.violations.is_empty(),
        sums_are_one: phases.iter().all(PhaseAudit::sums_are_one),
        stage_deltas_match: phases.iter().all(|p| p.stage1_matches() && p.stage2_matches()),
        ell_closed_form_matches: phases.iter().all(PhaseAudit::ell_matches),
        cost_within_dual_bound: to_f64(&alg_cost) <= cost_bound_rhs + EPS,
        pseudo_clean_bounded: phases.iter().all(|p| p.pseudo_clean_excess.is_empty()),
        monotone,
        objective_consistent: running == dual_value,
        nonnegative: !dual.has_negative(),
    };
    let valid = checks.all();
    let cert = Certificate {
        alg_cost,
        total_cost: log.total_cost(),
        horizon,
        dual_value,
        max_slack: feasibility.max_slack.clone(),
        lp_lower_bound,
        ratio_bound,
        cost_bound_rhs,
        skipped_phases: phases.iter().filter(|p| p.skipped).count(),
        phases,
        feasibility,
        checks,
        valid,
    };
    (dual, cert)
}

pub fn certify(instance: &Instance, log: &EventLog) -> Certificate {
    build_dual(instance, log).1
}

/// Human-readable one-liner used by the CLI.
pub fn summary_line(cert: &Certificate) -> String {
    format!(
        "sealed_cost={} dual={} max_slack={} lower_bound={} ratio_bound={} valid={}",
        fmt_exact(&cert.alg_cost),
        fmt_exact(&cert.dual_value),
        fmt_exact(&cert.max_slack),
        fmt_exact(&cert.lp_lower_bound),
        cert.ratio_bound
            .map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}")),
        cert.valid
    )
}
