use std::collections::BTreeSet;

use crate::instance::{Instance, PageId};

use super::{DiscreteVector, RoundingError};

/// N integral cache states; page p lies in exactly counts_p of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ensemble {
    pub states: Vec<BTreeSet<PageId>>,
}

impl Ensemble {
    /// N copies of the initial cache.
    pub fn new(instance: &Instance, n: usize) -> Self {
        let init: BTreeSet<PageId> = instance.initial_cache().iter().copied().collect();
        Self { states: vec![init; n] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn multiplicity(&self, p: PageId) -> u64 {
        self.states.iter().filter(|s| s.contains(&p)).count() as u64
    }

    fn agent_count(instance: &Instance, state: &BTreeSet<PageId>, agent: usize) -> usize {
        let u = instance.universe();
        state.iter().filter(|&&p| u.owner(p) == agent).count()
    }

    /// Marginal mismatches and invalid states.
    pub fn check(&self, dv: &DiscreteVector, instance: &Instance) -> Vec<String> {
        let u = instance.universe();
        let mut out = Vec::new();
        if self.states.len() as u64 != dv.n {
            out.push(format!("{} states for N = {}", self.states.len(), dv.n));
        }
        for p in u.pages() {
            let have = self.multiplicity(p);
            if have != dv.counts[p.idx()] {
                out.push(format!(
                    "{} in {have} states, expected {}",
                    u.page_ref(p),
                    dv.counts[p.idx()]
                ));
            }
        }
        for (j, s) in self.states.iter().enumerate() {
            if s.len() != instance.k() {
                out.push(format!("state {j} holds {} pages", s.len()));
            }
            for a in 0..instance.m() {
                if Self::agent_count(instance, s, a) < instance.reserve(a) {
                    out.push(format!("state {j} below reserve of agent {a}"));
                }
            }
        }
        out
    }

    fn remove(&mut self, j: usize, p: PageId, per_state: &mut [u64]) {
        let removed = self.states[j].remove(&p);
        debug_assert!(removed);
        per_state[j] += 1;
    }

    /// Moves 1/N of `p` in and 1/N of `q` out, then repairs reserves.
    /// Returns the number of page removals; `per_state` gains one per removal
    /// from each state.
    pub fn apply_pair(
        &mut self,
        p: PageId,
        q: PageId,
        instance: &Instance,
        per_state: &mut [u64],
    ) -> Result<u64, RoundingError> {
        let not_applicable = RoundingError::PairNotApplicable { p: p.0, q: q.0 };
        let mut removals = 0u64;
        let mut touched: Vec<usize> = Vec::with_capacity(2);
        if let Some(s) = self.states.iter().position(|s| !s.contains(&p) && s.contains(&q)) {
            self.states[s].insert(p);
            self.remove(s, q, per_state);
            removals += 1;
            touched.push(s);
        } else {
            let s = self.states.iter().position(|s| !s.contains(&p)).ok_or(not_applicable)?;
            let t = self
                .states
                .iter()
                .position(|s| s.contains(&q))
                .ok_or(RoundingError::PairNotApplicable { p: p.0, q: q.0 })?;
            self.states[s].insert(p);
            self.remove(t, q, per_state);
            let r = *self.states[s]
                .difference(&self.states[t])
                .next()
                .expect("|S| = k + 1 > |T| = k - 1");
            self.remove(s, r, per_state);
            self.states[t].insert(r);
            removals += 2;
            touched.extend([t, s]);
        }

        while let Some((v, agent)) = self.violation(instance, &touched) {
            removals += self.repair(v, agent, instance, per_state)?;
        }
        Ok(removals)
    }

    fn violation(&self, instance: &Instance, touched: &[usize]) -> Option<(usize, usize)> {
        touched.iter().find_map(|&j| {
            (0..instance.m())
                .find(|&a| Self::agent_count(instance, &self.states[j], a) < instance.reserve(a))
                .map(|a| (j, a))
        })
    }

    /// Moves an `agent` page into V from a state W holding more than its
    /// reserve, then returns a surplus page of V to W.
    fn repair(
        &mut self,
        v: usize,
        agent: usize,
        instance: &Instance,
        per_state: &mut [u64],
    ) -> Result<u64, RoundingError> {
        let u = instance.universe();
        let (w, g) = (0..self.states.len())
            .filter(|&w| w != v && Self::agent_count(instance, &self.states[w], agent) > instance.reserve(agent))
            .find_map(|w| {
                self.states[w]
                    .difference(&self.states[v])
                    .find(|&&g| u.owner(g) == agent)
                    .map(|&g| (w, g))
            })
            .ok_or_else(|| self.failure(format!("no donor state for agent {agent} into state {v}"), instance))?;
        self.remove(w, g, per_state);
        self.states[v].insert(g);

        let h = (0..instance.m())
            .filter(|&j| Self::agent_count(instance, &self.states[v], j) > instance.reserve(j))
            .find_map(|j| {
                self.states[v]
                    .difference(&self.states[w])
                    .find(|&&h| u.owner(h) == j)
                    .copied()
            })
            .ok_or_else(|| {
                self.failure(
                    format!("no surplus page to return from state {v} to state {w}"),
                    instance,
                )
            })?;
        self.remove(v, h, per_state);
        self.states[w].insert(h);
        Ok(2)
    }

    fn failure(&self, what: String, instance: &Instance) -> RoundingError {
        let u = instance.universe();
        let dump = self
            .states
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let pages: Vec<String> = s.iter().map(|&p| u.page_ref(p).to_string()).collect();
                format!("  state {j}: {{{}}}", pages.join(", "))
            })
            .collect::<Vec<_>>()
            .join("\n");
        RoundingError::RepairFailed { what, dump }
    }
}
