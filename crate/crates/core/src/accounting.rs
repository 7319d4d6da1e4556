//! The potential Ψ = Σ φ(y_p) over unmarked stale pages, with
//! φ(h) = 2h·ln(1+kh), and the cost bounds it supports.
//!
//! This is the only place where floating point enters: every φ input is an
//! exact rational converted at the last moment, and every comparison uses the
//! absolute tolerance [`EPS`].

use serde::Serialize;
use thiserror::Error;

use crate::engine::{Classification, EngineState, EventLog, PhaseRecord, StepObserver, StepReport};
use crate::instance::PageId;
use crate::ratio::{fmt_exact, one, to_f64, zero, Rational};

pub const EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
#[error("φ is defined on [0, 1], got {0}")]
pub struct DomainError(pub String);

/// φ(h) = 2h·ln(1+kh) for an exact `h ∈ [0,1]`.
pub fn phi(h: &Rational, k: usize) -> Result<f64, DomainError> {
    if *h < zero() || *h > one() {
        return Err(DomainError(fmt_exact(h)));
    }
    Ok(phi_f64(to_f64(h), k))
}

pub fn phi_f64(h: f64, k: usize) -> f64 {
    2.0 * h * (k as f64 * h).ln_1p()
}

/// φ′(h) = 2(1 − 1/(1+kh) + ln(1+kh)).
pub fn phi_prime(h: f64, k: usize) -> f64 {
    let kh = k as f64 * h;
    2.0 * (1.0 - 1.0 / (1.0 + kh) + kh.ln_1p())
}

/// 2·ln(1+k), the value of φ at 1.
pub fn full_weight(k: usize) -> f64 {
    2.0 * (k as f64).ln_1p()
}

/// Checks φ(h) ≥ h and φ′(h) ≥ 1 + 2ln(1+kh) on `samples` evenly spaced
/// points of [1/k, 1]. Returns the failing points.
pub fn check_phi_facts(k: usize, samples: usize) -> Vec<f64> {
    let lo = 1.0 / k as f64;
    let n = samples.max(2);
    (0..n)
        .map(|j| lo + (1.0 - lo) * j as f64 / (n - 1) as f64)
        .filter(|&h| phi_f64(h, k) < h - EPS || phi_prime(h, k) < 1.0 + 2.0 * (k as f64 * h).ln_1p() - EPS)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSnapshot {
    pub t: usize,
    pub psi: f64,
    pub contributions: Vec<(PageId, f64)>,
}

/// Ψ of the current state: unmarked stale pages only.
pub fn potential(state: &EngineState) -> PotentialSnapshot {
    let k = state.k();
    let mut contributions = Vec::new();
    for i in 0..state.num_agents() {
        for p in state.unmarked_stale(i) {
            contributions.push((p, phi_f64(to_f64(state.y(p)), k)));
        }
    }
    contributions.sort_by_key(|c| c.0);
    PotentialSnapshot {
        t: state.t(),
        psi: contributions.iter().map(|c| c.1).sum(),
        contributions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDrop {
    pub r0: u32,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepPotential {
    pub t: usize,
    pub before: f64,
    pub after: f64,
    pub phase_drops: Vec<PhaseDrop>,
}

impl StepPotential {
    /// ΔΨ(t): the change caused by serving the request, phase ends excluded.
    pub fn service_delta(&self) -> f64 {
        let start = self.phase_drops.last().map_or(self.before, |d| d.after);
        self.after - start
    }
}

/// Records Ψ around every step and every phase end.
#[derive(Debug, Default)]
pub struct PotentialRecorder {
    pub steps: Vec<StepPotential>,
    current: Option<StepPotential>,
    pending_before: f64,
}

impl PotentialRecorder {
    pub fn new() -> Self {
        Self::default()
    }
}

impl StepObserver for PotentialRecorder {
    fn before_step(&mut self, state: &EngineState, t: usize, _page: PageId) {
        let psi = potential(state).psi;
        self.current = Some(StepPotential {
            t,
            before: psi,
            after: psi,
            phase_drops: Vec::new(),
        });
    }

    fn before_phase_end(&mut self, state: &EngineState) {
        self.pending_before = potential(state).psi;
    }

    fn after_phase_end(&mut self, state: &EngineState, record: &PhaseRecord) {
        let after = potential(state).psi;
        if let Some(cur) = self.current.as_mut() {
            cur.phase_drops.push(PhaseDrop {
                r0: record.r0,
                before: self.pending_before,
                after,
            });
        }
    }

    fn after_step(&mut self, state: &EngineState, _report: &StepReport) {
        if let Some(mut cur) = self.current.take() {
            cur.after = potential(state).psi;
            self.steps.push(cur);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepCheck {
    /// cost ≤ ΔΨ for a fractional fetch.
    FractionalFetch,
    /// ΔΨ ≥ 1 on a clean fetch.
    Clean,
    /// ΔΨ ≥ 1 − 2ln(1+k) on a pseudo-clean fetch.
    PseudoClean,
    /// 0 ≤ Ψ ≤ 2mk·ln(1+k).
    Range,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepViolation {
    pub t: usize,
    pub check: StepCheck,
    pub cost: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDropViolation {
    pub r0: u32,
    pub observed: f64,
    pub expected: f64,
}

/// Per-step potential checks.
pub fn check_step_bound(log: &EventLog, steps: &[StepPotential], k: usize, m: usize) -> Vec<StepViolation> {
    let w = full_weight(k);
    let cap = m as f64 * k as f64 * w;
    let mut out = Vec::new();
    for (report, pot) in log.steps.iter().zip(steps) {
        let delta = pot.service_delta();
        let cost = to_f64(&report.fetch_cost);
        let fail = match report.classification {
            Classification::Hit | Classification::StaleFetch => cost > delta + EPS,
            Classification::Clean => delta < 1.0 - EPS,
            Classification::PseudoClean => delta < 1.0 - w - EPS,
        };
        if fail {
            let check = match report.classification {
                Classification::Clean => StepCheck::Clean,
                Classification::PseudoClean => StepCheck::PseudoClean,
                _ => StepCheck::FractionalFetch,
            };
            out.push(StepViolation {
                t: report.t,
                check,
                cost,
                delta,
            });
        }
        let values = std::iter::once(pot.after).chain(pot.phase_drops.iter().flat_map(|d| [d.before, d.after]));
        for psi in values {
            if psi < -EPS || psi > cap + EPS {
                out.push(StepViolation {
                    t: report.t,
                    check: StepCheck::Range,
                    cost,
                    delta: psi,
                });
            }
        }
    }
    out
}

/// |P(i, rᵢ−1) \ P(i, rᵢ)| summed over the agents reset in this phase.
pub fn stale_evictions(phase: &PhaseRecord) -> usize {
    phase
        .resets
        .iter()
        .map(|r| r.stale_before.iter().filter(|p| !r.snapshot.contains(p)).count())
        .sum()
}

/// ΔΨ at each phase end against −2ln(1+k)·Σ_{i ∉ ℐ(r₀)} |P(i,rᵢ−1)\P(i,rᵢ)|.
pub fn check_phase_drops(log: &EventLog, steps: &[StepPotential], k: usize) -> Vec<PhaseDropViolation> {
    let w = full_weight(k);
    let mut out = Vec::new();
    for drop in steps.iter().flat_map(|s| &s.phase_drops) {
        let phase = &log.phases[drop.r0 as usize - 1];
        let expected = -w * stale_evictions(phase) as f64;
        let observed = drop.after - drop.before;
        if (observed - expected).abs() > EPS {
            out.push(PhaseDropViolation {
                r0: drop.r0,
                observed,
                expected,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBoundReport {
    /// Cost through the last sealed phase, exact.
    pub lhs: String,
    pub lhs_f64: f64,
    pub rhs: f64,
    pub pseudo_clean_count: usize,
    pub stale_eviction_sum: usize,
    pub margin: f64,
    /// Requests after the last phase end.
    pub tail_steps: usize,
    pub tail_cost: String,
    pub holds: bool,
}

/// cost ≤ 2ln(1+k)·(mk + #pseudo-clean + Σ|P(i,rᵢ−1)\P(i,rᵢ)|), evaluated at
/// the last sealed phase.
pub fn check_cost_bound(log: &EventLog, k: usize, m: usize) -> CostBoundReport {
    let horizon = log.sealed_horizon();
    let lhs = log.cost_through(horizon);
    let pseudo_clean_count: usize = log.phases.iter().map(|p| p.pseudo_clean.iter().sum::<usize>()).sum();
    let stale_eviction_sum: usize = log.phases.iter().map(stale_evictions).sum();
    let rhs = full_weight(k) * (m * k + pseudo_clean_count + stale_eviction_sum) as f64;
    let lhs_f64 = to_f64(&lhs);
    let tail = log.total_cost() - &lhs;
    CostBoundReport {
        lhs: fmt_exact(&lhs),
        lhs_f64,
        rhs,
        pseudo_clean_count,
        stale_eviction_sum,
        margin: rhs - lhs_f64,
        tail_steps: log.steps.len() - horizon,
        tail_cost: fmt_exact(&tail),
        holds: lhs_f64 <= rhs + EPS,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountingReport {
    pub step_violations: Vec<StepViolation>,
    pub phase_drop_violations: Vec<PhaseDropViolation>,
    pub phi_fact_failures: Vec<f64>,
    pub cost_bound: CostBoundReport,
}

impl AccountingReport {
    pub fn is_clean(&self) -> bool {
        self.step_violations.is_empty()
            && self.phase_drop_violations.is_empty()
            && self.phi_fact_failures.is_empty()
            && self.cost_bound.holds
    }
}

pub fn audit(log: &EventLog, recorder: &PotentialRecorder, k: usize, m: usize) -> AccountingReport {
    AccountingReport {
        step_violations: check_step_bound(log, &recorder.steps, k, m),
        phase_drop_violations: check_phase_drops(log, &recorder.steps, k),
        phi_fact_failures: check_phi_facts(k, 257),
        cost_bound: check_cost_bound(log, k, m),
    }
}
