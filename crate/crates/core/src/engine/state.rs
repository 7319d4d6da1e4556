use std::collections::BTreeSet;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::instance::{AgentId, Instance, PageId};
use crate::ratio::{int, one, zero, Rational};

/// Mutable state of the fractional marking algorithm.
///
/// `y[p]` is the evicted fraction of page `p`; pages that never entered the
/// cache sit at exactly 1. Every value is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineState {
    pub(crate) k: usize,
    pub(crate) reserves: Vec<usize>,
    pub(crate) owner: Vec<AgentId>,
    pub(crate) y: Vec<Rational>,
    pub(crate) marked: Vec<bool>,
    pub(crate) isolated: Vec<bool>,
    pub(crate) isolated_at_phase_start: Vec<bool>,
    pub(crate) r0: u32,
    pub(crate) r: Vec<u32>,
    pub(crate) stale: Vec<BTreeSet<PageId>>,
    pub(crate) t: usize,
}

impl EngineState {
    /// r₀ = rᵢ = 1, stale sets are the initial cache split by owner, nothing
    /// marked or isolated.
    pub fn init(instance: &Instance) -> Self {
        let u = instance.universe();
        let n = u.len();
        let owner: Vec<AgentId> = u.pages().map(|p| u.owner(p)).collect();
        let mut y = vec![one(); n];
        let mut stale = vec![BTreeSet::new(); instance.m()];
        for &p in instance.initial_cache() {
            y[p.idx()] = zero();
            stale[owner[p.idx()]].insert(p);
        }
        Self {
            k: instance.k(),
            reserves: instance.reserves().to_vec(),
            owner,
            y,
            marked: vec![false; n],
            isolated: vec![false; instance.m()],
            isolated_at_phase_start: vec![false; instance.m()],
            r0: 1,
            r: vec![1; instance.m()],
            stale,
            t: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_agents(&self) -> usize {
        self.reserves.len()
    }

    pub fn num_pages(&self) -> usize {
        self.y.len()
    }

    pub fn reserve(&self, agent: AgentId) -> usize {
        self.reserves[agent]
    }

    pub fn owner(&self, page: PageId) -> AgentId {
        self.owner[page.idx()]
    }

    pub fn y(&self, page: PageId) -> &Rational {
        &self.y[page.idx()]
    }

    pub fn x(&self, page: PageId) -> Rational {
        one() - &self.y[page.idx()]
    }

    /// The in-cache fractions of all pages, in page-id order.
    pub fn x_vector(&self) -> Vec<Rational> {
        self.y.iter().map(|y| one() - y).collect()
    }

    pub fn is_marked(&self, page: PageId) -> bool {
        self.marked[page.idx()]
    }

    pub fn is_isolated(&self, agent: AgentId) -> bool {
        self.isolated[agent]
    }

    pub fn was_isolated_at_phase_start(&self, agent: AgentId) -> bool {
        self.isolated_at_phase_start[agent]
    }

    pub fn r0(&self) -> u32 {
        self.r0
    }

    pub fn local_phase(&self, agent: AgentId) -> u32 {
        self.r[agent]
    }

    /// P(i, rᵢ − 1)
    pub fn stale(&self, agent: AgentId) -> &BTreeSet<PageId> {
        &self.stale[agent]
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn pages(&self) -> impl Iterator<Item = PageId> {
        (0..self.y.len()).map(|i| PageId(i as u32))
    }

    pub fn agent_pages(&self, agent: AgentId) -> impl Iterator<Item = PageId> + '_ {
        self.pages().filter(move |&p| self.owner(p) == agent)
    }

    pub fn marked_pages(&self, agent: AgentId) -> impl Iterator<Item = PageId> + '_ {
        self.agent_pages(agent).filter(move |&p| self.is_marked(p))
    }

    pub fn marked_count(&self, agent: AgentId) -> usize {
        self.marked_pages(agent).count()
    }

    /// U(i, t): stale pages of the agent that are not marked.
    pub fn unmarked_stale(&self, agent: AgentId) -> impl Iterator<Item = PageId> + '_ {
        self.stale[agent].iter().copied().filter(move |&p| !self.is_marked(p))
    }

    /// Σ_{p ∈ 𝒫(i)} x_p
    pub fn agent_mass(&self, agent: AgentId) -> Rational {
        self.agent_pages(agent).fold(zero(), |acc, p| acc + self.x(p))
    }

    pub fn total_mass(&self) -> Rational {
        self.y.iter().fold(zero(), |acc, y| acc + (one() - y))
    }

    /// Recomputed from exact sums every time.
    pub fn is_tight(&self, agent: AgentId) -> bool {
        self.agent_mass(agent) == int(self.reserves[agent] as i64)
    }

    pub fn is_fully_cached(&self, page: PageId) -> bool {
        self.y[page.idx()].is_zero()
    }

    pub fn is_fully_evicted(&self, page: PageId) -> bool {
        self.y[page.idx()].is_one()
    }
}
