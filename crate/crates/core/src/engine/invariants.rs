//! Exact structural checks run alongside the engine.

use num_traits::{One, Zero};

use super::log::{PhaseRecord, StepReport};
use super::state::EngineState;
use super::StepObserver;
use crate::instance::{AgentId, PageId};
use crate::ratio::{fmt_exact, frac, int, Rational};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantViolation {
    pub t: usize,
    pub what: String,
}

/// Observer that checks the state after every step and at every phase end.
#[derive(Debug, Default)]
pub struct InvariantChecker {
    pub violations: Vec<InvariantViolation>,
    pub steps_checked: usize,
    before_y: Vec<Rational>,
    before_isolated: Vec<bool>,
    frontier: Option<Rational>,
    t: usize,
}

impl InvariantChecker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn fail(&mut self, what: String) {
        self.violations.push(InvariantViolation { t: self.t, what });
    }

    fn check_state(&mut self, s: &EngineState) {
        let k = int(s.k() as i64);
        let total = s.total_mass();
        if total != k {
            self.fail(format!("cache mass {} ≠ k", fmt_exact(&total)));
        }
        let min_positive = frac(1, s.k() as i64);
        for p in s.pages() {
            let y = s.y(p);
            if y.is_zero() {
                continue;
            }
            if s.is_marked(p) {
                self.fail(format!("marked page {} has y = {}", p.0, fmt_exact(y)));
            }
            if *y < min_positive || *y > Rational::one() {
                self.fail(format!(
                    "page {} has y = {} outside {{0}} ∪ [1/k, 1]",
                    p.0,
                    fmt_exact(y)
                ));
            }
        }
        for i in 0..s.num_agents() {
            let mass = s.agent_mass(i);
            let reserve = int(s.reserve(i) as i64);
            if mass < reserve {
                self.fail(format!("agent {i} holds {} < reserve", fmt_exact(&mass)));
            }
            if s.is_isolated(i) && mass != reserve {
                self.fail(format!("isolated agent {i} is not tight"));
            }
            let levels = unmarked_stale_levels(s, i);
            if levels.windows(2).any(|w| w[0] != w[1]) {
                self.fail(format!("unmarked stale pages of agent {i} differ in y"));
            }
            if s.was_isolated_at_phase_start(i) {
                for y in &levels {
                    if (*y < Rational::one()) != s.is_isolated(i) {
                        self.fail(format!(
                            "agent {i}: unmarked stale page at y = {} while isolated = {}",
                            fmt_exact(y),
                            s.is_isolated(i)
                        ));
                    }
                }
            }
        }
        self.check_frontier(s);
    }

    /// Among agents that entered the phase non-isolated, the non-tight ones
    /// have their unmarked stale pages on one common level that bounds every
    /// other unmarked stale page and never decreases within a phase.
    fn check_frontier(&mut self, s: &EngineState) {
        let mut level: Option<Rational> = None;
        let mut max_seen: Option<Rational> = None;
        for i in (0..s.num_agents()).filter(|&i| !s.was_isolated_at_phase_start(i)) {
            let levels = unmarked_stale_levels(s, i);
            if let Some(top) = levels.iter().max() {
                if max_seen.as_ref().is_none_or(|m| top > m) {
                    max_seen = Some(top.clone());
                }
            }
            if s.is_tight(i) {
                continue;
            }
            for y in levels {
                match &level {
                    None => level = Some(y),
                    Some(h) if *h != y => {
                        self.fail(format!(
                            "non-tight frontier levels {} and {} differ",
                            fmt_exact(h),
                            fmt_exact(&y)
                        ));
                        return;
                    }
                    _ => {}
                }
            }
        }
        let Some(h) = level else { return };
        if let Some(top) = max_seen {
            if top > h {
                self.fail(format!(
                    "unmarked stale page at {} above frontier {}",
                    fmt_exact(&top),
                    fmt_exact(&h)
                ));
            }
        }
        if let Some(prev) = &self.frontier {
            if h < *prev {
                self.fail(format!("frontier fell from {} to {}", fmt_exact(prev), fmt_exact(&h)));
            }
        }
        self.frontier = Some(h);
    }
}

fn unmarked_stale_levels(s: &EngineState, agent: AgentId) -> Vec<Rational> {
    s.unmarked_stale(agent).map(|p| s.y(p).clone()).collect()
}

impl StepObserver for InvariantChecker {
    fn before_step(&mut self, state: &EngineState, t: usize, _page: PageId) {
        self.t = t;
        self.before_y = state.pages().map(|p| state.y(p).clone()).collect();
        self.before_isolated = (0..state.num_agents()).map(|i| state.is_isolated(i)).collect();
    }

    fn after_phase_end(&mut self, state: &EngineState, record: &PhaseRecord) {
        for p in state.pages().filter(|&p| state.is_marked(p)) {
            let owner = state.owner(p);
            if !record.isolated_at_end(owner) {
                self.fail(format!(
                    "phase {} ended with marked page {} of non-isolated agent {owner}",
                    record.r0, p.0
                ));
            }
        }
        self.frontier = None;
    }

    fn after_step(&mut self, state: &EngineState, report: &StepReport) {
        self.steps_checked += 1;
        for p in state.pages() {
            let owner = state.owner(p);
            if owner != report.agent && self.before_isolated[owner] && *state.y(p) != self.before_y[p.idx()] {
                self.fail(format!(
                    "page {} of isolated agent {owner} moved on a foreign request",
                    p.0
                ));
            }
        }
        self.check_state(state);
    }
}
