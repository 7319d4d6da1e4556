use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::instance::{AgentId, Instance, PageId};
use crate::ratio::{fmt_exact, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Hit,
    StaleFetch,
    Clean,
    PseudoClean,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Hit => "hit",
            Classification::StaleFetch => "stale-fetch",
            Classification::Clean => "clean",
            Classification::PseudoClean => "pseudo-clean",
        }
    }
}

/// One global phase transition that happened while serving a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseReset {
    pub ended_r0: u32,
    pub reset_agents: Vec<AgentId>,
    /// ℐ(r₀) of the ended phase.
    pub isolated: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    /// 1-based timestep.
    pub t: usize,
    pub page: PageId,
    pub agent: AgentId,
    /// y of the page right before it was fetched, in the phase that served it.
    pub fetch_cost: Rational,
    pub classification: Classification,
    /// Global phase in which the request was served.
    pub r0: u32,
    /// Requester isolation status when the request was served.
    pub requester_isolated: bool,
    pub deisolated: bool,
    pub phase_resets: Vec<PhaseReset>,
    pub evictions: BTreeMap<PageId, Rational>,
}

impl StepReport {
    /// Membership in C(r₀): a full miss by a non-isolated requester.
    pub fn counts_toward_phase(&self) -> bool {
        !self.requester_isolated && matches!(self.classification, Classification::Clean | Classification::PseudoClean)
    }
}

/// A local phase reset of one agent at the end of a global phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalReset {
    pub agent: AgentId,
    /// The local phase rᵢ that just ended.
    pub local_phase: u32,
    /// P(i, rᵢ − 1)
    pub stale_before: Vec<PageId>,
    /// P(i, rᵢ)
    pub snapshot: Vec<PageId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub r0: u32,
    /// Inclusive range of timesteps served in this phase.
    pub first_step: usize,
    pub last_step: usize,
    /// C(r₀)
    pub c_steps: Vec<usize>,
    /// ℓ^(r₀) = |C(r₀)|
    pub ell: usize,
    /// ℐ(r₀ − 1)
    pub isolated_at_start: Vec<AgentId>,
    /// ℐ(r₀)
    pub isolated_at_end: Vec<AgentId>,
    pub resets: Vec<LocalReset>,
    /// Pseudo-clean requests per agent.
    pub pseudo_clean: Vec<usize>,
}

impl PhaseRecord {
    pub fn steps(&self) -> std::ops::RangeInclusive<usize> {
        self.first_step..=self.last_step
    }

    pub fn reset_of(&self, agent: AgentId) -> Option<&LocalReset> {
        self.resets.iter().find(|r| r.agent == agent)
    }

    pub fn isolated_at_end(&self, agent: AgentId) -> bool {
        self.isolated_at_end.contains(&agent)
    }

    pub fn isolated_at_start(&self, agent: AgentId) -> bool {
        self.isolated_at_start.contains(&agent)
    }
}

/// The phase still running when the trace ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenPhase {
    pub r0: u32,
    pub first_step: usize,
    pub isolated_at_start: Vec<AgentId>,
    pub c_steps: Vec<usize>,
    pub pseudo_clean: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub steps: Vec<StepReport>,
    pub phases: Vec<PhaseRecord>,
    /// P(i, 0)
    pub initial_stale: Vec<Vec<PageId>>,
    pub open: OpenPhase,
}

impl EventLog {
    pub fn step(&self, t: usize) -> &StepReport {
        &self.steps[t - 1]
    }

    /// Last timestep of the last sealed phase (0 if no phase has ended).
    pub fn sealed_horizon(&self) -> usize {
        self.phases.last().map_or(0, |p| p.last_step)
    }

    pub fn total_cost(&self) -> Rational {
        self.cost_through(self.steps.len())
    }

    pub fn cost_through(&self, t: usize) -> Rational {
        self.steps[..t]
            .iter()
            .fold(crate::ratio::zero(), |acc, s| acc + &s.fetch_cost)
    }

    /// Writes `t,agent,page,fetch_cost,classification,r0`.
    pub fn write_csv<W: Write>(&self, instance: &Instance, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "agent", "page", "fetch_cost", "classification", "r0"])?;
        for s in &self.steps {
            let page = instance.universe().page_ref(s.page);
            w.write_record([
                s.t.to_string(),
                s.agent.to_string(),
                page.page.clone(),
                fmt_exact(&s.fetch_cost),
                s.classification.as_str().to_string(),
                s.r0.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Phase-record sidecar with page names resolved.
    pub fn phases_json(&self, instance: &Instance) -> serde_json::Value {
        let u = instance.universe();
        let names = |pages: &[PageId]| -> Vec<String> { pages.iter().map(|&p| u.page_ref(p).to_string()).collect() };
        let phases: Vec<serde_json::Value> = self
            .phases
            .iter()
            .map(|p| {
                serde_json::json!({
                    "r0": p.r0,
                    "first_step": p.first_step,
                    "last_step": p.last_step,
                    "C": p.c_steps,
                    "ell": p.ell,
                    "isolated_at_start": p.isolated_at_start,
                    "isolated_at_end": p.isolated_at_end,
                    "pseudo_clean": p.pseudo_clean,
                    "snapshots": p.resets.iter().map(|r| serde_json::json!({
                        "agent": r.agent,
                        "local_phase": r.local_phase,
                        "stale_before": names(&r.stale_before),
                        "snapshot": names(&r.snapshot),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "initial_stale": self.initial_stale.iter().map(|s| names(s)).collect::<Vec<_>>(),
            "phases": phases,
            "open_phase": {
                "r0": self.open.r0,
                "first_step": self.open.first_step,
                "isolated_at_start": self.open.isolated_at_start,
            },
        })
    }
}
