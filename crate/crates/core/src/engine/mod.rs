//! Exact execution of the fractional marking algorithm.

mod invariants;
mod log;
mod state;
mod waterfill;

use std::collections::BTreeMap;

use num_traits::{One, Zero};

pub use invariants::{InvariantChecker, InvariantViolation};
pub use log::{Classification, EventLog, LocalReset, OpenPhase, PhaseRecord, PhaseReset, StepReport};
pub use state::EngineState;
pub use waterfill::{waterfill, CandidateRule, Waterfill};

use crate::instance::{AgentId, Instance, PageId};
use crate::ratio::{fmt_exact, zero, Rational};

/// Phase transitions allowed while serving one request.
const MAX_TRANSITIONS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("request {t} could not be served after {MAX_TRANSITIONS} phase transitions")]
    Stuck { t: usize },
    #[error("request {t}: eviction stopped with residual {residual} after partial progress")]
    PartialWaterfill { t: usize, residual: String },
    #[error("request {t}: isolated agent {agent} cannot evict enough of its own pages")]
    IsolatedFetchInfeasible { t: usize, agent: AgentId },
    #[error("request {t}: {what}")]
    Invariant { t: usize, what: String },
}

/// Hooks into the engine's step loop. All methods default to no-ops.
pub trait StepObserver {
    fn before_step(&mut self, _state: &EngineState, _t: usize, _page: PageId) {}
    fn before_phase_end(&mut self, _state: &EngineState) {}
    fn after_phase_end(&mut self, _state: &EngineState, _record: &PhaseRecord) {}
    fn after_step(&mut self, _state: &EngineState, _report: &StepReport) {}
}

impl StepObserver for () {}

impl<A: StepObserver, B: StepObserver> StepObserver for (A, B) {
    fn before_step(&mut self, state: &EngineState, t: usize, page: PageId) {
        self.0.before_step(state, t, page);
        self.1.before_step(state, t, page);
    }
    fn before_phase_end(&mut self, state: &EngineState) {
        self.0.before_phase_end(state);
        self.1.before_phase_end(state);
    }
    fn after_phase_end(&mut self, state: &EngineState, record: &PhaseRecord) {
        self.0.after_phase_end(state, record);
        self.1.after_phase_end(state, record);
    }
    fn after_step(&mut self, state: &EngineState, report: &StepReport) {
        self.0.after_step(state, report);
        self.1.after_step(state, report);
    }
}

impl<O: StepObserver + ?Sized> StepObserver for &mut O {
    fn before_step(&mut self, state: &EngineState, t: usize, page: PageId) {
        (**self).before_step(state, t, page);
    }
    fn before_phase_end(&mut self, state: &EngineState) {
        (**self).before_phase_end(state);
    }
    fn after_phase_end(&mut self, state: &EngineState, record: &PhaseRecord) {
        (**self).after_phase_end(state, record);
    }
    fn after_step(&mut self, state: &EngineState, report: &StepReport) {
        (**self).after_step(state, report);
    }
}

pub struct MarkingEngine<'a> {
    instance: &'a Instance,
    state: EngineState,
    steps: Vec<StepReport>,
    phases: Vec<PhaseRecord>,
    initial_stale: Vec<Vec<PageId>>,
    open: OpenPhase,
}

struct Service {
    cost: Rational,
    evictions: BTreeMap<PageId, Rational>,
}

impl<'a> MarkingEngine<'a> {
    pub fn new(instance: &'a Instance) -> Self {
        let state = EngineState::init(instance);
        let m = instance.m();
        let initial_stale = (0..m).map(|i| state.stale(i).iter().copied().collect()).collect();
        Self {
            instance,
            state,
            steps: Vec::new(),
            phases: Vec::new(),
            initial_stale,
            open: OpenPhase {
                r0: 1,
                first_step: 1,
                isolated_at_start: Vec::new(),
                c_steps: Vec::new(),
                pseudo_clean: vec![0; m],
            },
        }
    }

    pub fn instance(&self) -> &Instance {
        self.instance
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn steps(&self) -> &[StepReport] {
        &self.steps
    }

    pub fn phases(&self) -> &[PhaseRecord] {
        &self.phases
    }

    pub fn serve(&mut self, page: PageId) -> Result<&StepReport, EngineError> {
        self.serve_observed(page, &mut ())
    }

    pub fn serve_observed<O: StepObserver>(&mut self, page: PageId, obs: &mut O) -> Result<&StepReport, EngineError> {
        let t = self.state.t + 1;
        let agent = self.state.owner(page);
        obs.before_step(&self.state, t, page);

        let mut phase_resets = Vec::new();
        let service = loop {
            if let Some(s) = self.try_serve(t, page, agent)? {
                break s;
            }
            if phase_resets.len() == MAX_TRANSITIONS {
                return Err(EngineError::Stuck { t });
            }
            phase_resets.push(self.end_phase(t, obs));
        };

        let classification = if service.cost.is_zero() {
            Classification::Hit
        } else if !service.cost.is_one() {
            Classification::StaleFetch
        } else if self.state.stale(agent).contains(&page) {
            Classification::PseudoClean
        } else {
            Classification::Clean
        };
        let requester_isolated = self.state.is_isolated(agent);

        self.state.y[page.idx()] = zero();
        for (q, d) in &service.evictions {
            self.state.y[q.idx()] += d;
        }
        self.state.marked[page.idx()] = true;
        let deisolated = self.deisolate_if_full(t, agent)?;
        self.state.t = t;

        let report = StepReport {
            t,
            page,
            agent,
            fetch_cost: service.cost,
            classification,
            r0: self.state.r0,
            requester_isolated,
            deisolated,
            phase_resets,
            evictions: service.evictions,
        };
        if report.counts_toward_phase() {
            self.open.c_steps.push(t);
        }
        if classification == Classification::PseudoClean {
            self.open.pseudo_clean[agent] += 1;
        }
        obs.after_step(&self.state, &report);
        self.steps.push(report);
        Ok(self.steps.last().expect("just pushed"))
    }

    /// `None` when the request needs a phase transition first.
    fn try_serve(&self, t: usize, page: PageId, agent: AgentId) -> Result<Option<Service>, EngineError> {
        let cost = self.state.y(page).clone();
        if cost.is_zero() {
            return Ok(Some(Service {
                cost,
                evictions: BTreeMap::new(),
            }));
        }
        let isolated = self.state.is_isolated(agent);
        let rule = if isolated {
            CandidateRule::OwnUnmarked { agent }
        } else {
            CandidateRule::Frontier
        };
        let plan = waterfill(&self.state, page, &cost, rule);
        if plan.is_complete() {
            return Ok(Some(Service {
                cost,
                evictions: plan.deltas,
            }));
        }
        if isolated {
            return Err(EngineError::IsolatedFetchInfeasible { t, agent });
        }
        if plan.deltas.is_empty() {
            return Ok(None);
        }
        Err(EngineError::PartialWaterfill {
            t,
            residual: fmt_exact(&plan.residual),
        })
    }

    /// An isolated agent becomes non-isolated as soon as it holds kᵢ marks,
    /// whether the last mark came from a fetch or a hit.
    fn deisolate_if_full(&mut self, t: usize, agent: AgentId) -> Result<bool, EngineError> {
        if !self.state.is_isolated(agent) || self.state.marked_count(agent) < self.state.reserve(agent) {
            return Ok(false);
        }
        if let Some(q) = self
            .state
            .agent_pages(agent)
            .find(|&q| !self.state.is_marked(q) && !self.state.y(q).is_one())
        {
            return Err(EngineError::Invariant {
                t,
                what: format!(
                    "agent {agent} de-isolates while unmarked page {} has y = {}",
                    self.instance.universe().page_ref(q),
                    fmt_exact(self.state.y(q))
                ),
            });
        }
        self.state.isolated[agent] = false;
        Ok(true)
    }

    fn end_phase<O: StepObserver>(&mut self, t: usize, obs: &mut O) -> PhaseReset {
        obs.before_phase_end(&self.state);
        let ended = self.state.r0;
        let mut resets = Vec::new();
        for i in 0..self.state.num_agents() {
            let marked: Vec<PageId> = self.state.marked_pages(i).collect();
            if marked.len() < self.state.reserve(i) {
                self.state.isolated[i] = true;
                continue;
            }
            let stale_before: Vec<PageId> = self.state.stale[i].iter().copied().collect();
            for &p in &marked {
                self.state.marked[p.idx()] = false;
            }
            self.state.stale[i] = marked.iter().copied().collect();
            resets.push(LocalReset {
                agent: i,
                local_phase: self.state.r[i],
                stale_before,
                snapshot: marked,
            });
            self.state.r[i] += 1;
        }
        let isolated: Vec<AgentId> = (0..self.state.num_agents())
            .filter(|&i| self.state.is_isolated(i))
            .collect();

        let m = self.state.num_agents();
        let open = std::mem::replace(
            &mut self.open,
            OpenPhase {
                r0: ended + 1,
                first_step: t,
                isolated_at_start: isolated.clone(),
                c_steps: Vec::new(),
                pseudo_clean: vec![0; m],
            },
        );
        let record = PhaseRecord {
            r0: ended,
            first_step: open.first_step,
            last_step: t - 1,
            ell: open.c_steps.len(),
            c_steps: open.c_steps,
            isolated_at_start: open.isolated_at_start,
            isolated_at_end: isolated.clone(),
            resets,
            pseudo_clean: open.pseudo_clean,
        };
        self.state.r0 = ended + 1;
        self.state.isolated_at_phase_start = self.state.isolated.clone();
        obs.after_phase_end(&self.state, &record);

        let reset = PhaseReset {
            ended_r0: ended,
            reset_agents: record.resets.iter().map(|r| r.agent).collect(),
            isolated,
        };
        self.phases.push(record);
        reset
    }

    pub fn finish(self) -> EventLog {
        EventLog {
            steps: self.steps,
            phases: self.phases,
            initial_stale: self.initial_stale,
            open: self.open,
        }
    }
}

/// Serves every request of the instance and returns the log and the exact
/// total cost.
pub fn run_trace(instance: &Instance) -> Result<(EventLog, Rational), EngineError> {
    run_trace_observed(instance, &mut ())
}

pub fn run_trace_observed<O: StepObserver>(
    instance: &Instance,
    obs: &mut O,
) -> Result<(EventLog, Rational), EngineError> {
    let mut engine = MarkingEngine::new(instance);
    for &p in instance.requests() {
        engine.serve_observed(p, obs)?;
    }
    let log = engine.finish();
    let cost = log.total_cost();
    Ok((log, cost))
}
