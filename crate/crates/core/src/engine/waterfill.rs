//! Continuous uniform eviction realized as a breakpoint loop.
//!
//! The candidate pages with the lowest `y` form the active group and are
//! raised at one common rate. The rate only has to change when one of four
//! events happens: the deficit is covered, an owning agent becomes tight,
//! the group reaches the next candidate level (the groups merge), or the
//! group reaches `y = 1`. Between those breakpoints every increment is a
//! single exact rational.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use super::state::EngineState;
use crate::instance::{AgentId, PageId};
use crate::ratio::{int, one, zero, Rational};

/// Which pages may absorb the eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateRule {
    /// Isolated requester: only its own unmarked pages.
    OwnUnmarked { agent: AgentId },
    /// Non-isolated requester: unmarked pages of non-isolated, non-tight
    /// agents. Agent slack is measured with the requested page already fully
    /// fetched, which keeps the requester's own agent non-tight for the whole
    /// step.
    Frontier,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Waterfill {
    /// Exact per-page increase of `y`.
    pub deltas: BTreeMap<PageId, Rational>,
    /// Zero when the deficit was fully covered.
    pub residual: Rational,
}

impl Waterfill {
    pub fn is_complete(&self) -> bool {
        self.residual.is_zero()
    }

    pub fn total(&self) -> Rational {
        self.deltas.values().fold(zero(), |a, d| a + d)
    }
}

/// Plans the eviction of `deficit` mass while `requested` is fetched. Does not
/// modify the state.
pub fn waterfill(state: &EngineState, requested: PageId, deficit: &Rational, rule: CandidateRule) -> Waterfill {
    let mut level: BTreeMap<PageId, Rational> = state
        .pages()
        .filter(|&q| q != requested && !state.is_marked(q) && !state.y(q).is_one())
        .filter(|&q| match rule {
            CandidateRule::OwnUnmarked { agent } => state.owner(q) == agent,
            CandidateRule::Frontier => !state.is_isolated(state.owner(q)),
        })
        .map(|q| (q, state.y(q).clone()))
        .collect();

    let mut slack: Vec<Rational> = (0..state.num_agents())
        .map(|i| state.agent_mass(i) - int(state.reserve(i) as i64))
        .collect();
    let req_agent = state.owner(requested);
    slack[req_agent] += state.y(requested);

    let mut deltas: BTreeMap<PageId, Rational> = BTreeMap::new();
    let mut residual = deficit.clone();

    while residual.is_positive() {
        let eligible = |q: &PageId, y: &Rational| {
            !y.is_one()
                && match rule {
                    CandidateRule::OwnUnmarked { .. } => true,
                    CandidateRule::Frontier => slack[state.owner(*q)].is_positive(),
                }
        };
        let candidates: Vec<(PageId, Rational)> = level
            .iter()
            .filter(|(q, y)| eligible(q, y))
            .map(|(q, y)| (*q, y.clone()))
            .collect();
        let Some(low) = candidates.iter().map(|(_, y)| y).min().cloned() else {
            break;
        };
        let group: Vec<PageId> = candidates.iter().filter(|(_, y)| *y == low).map(|(q, _)| *q).collect();
        let size = Rational::from_integer(BigInt::from(group.len()));

        let mut step = &residual / &size;
        step = step.min(one() - &low);
        if let Some(next) = candidates.iter().map(|(_, y)| y).filter(|y| **y > low).min() {
            step = step.min(next - &low);
        }
        if rule == CandidateRule::Frontier {
            let mut per_agent: BTreeMap<AgentId, i64> = BTreeMap::new();
            for &q in &group {
                *per_agent.entry(state.owner(q)).or_default() += 1;
            }
            for (agent, count) in per_agent {
                step = step.min(&slack[agent] / int(count));
            }
        }
        debug_assert!(step.is_positive());

        for &q in &group {
            *level.get_mut(&q).expect("group member") += &step;
            *deltas.entry(q).or_insert_with(zero) += &step;
            slack[state.owner(q)] -= &step;
        }
        residual -= &step * &size;
    }

    Waterfill { deltas, residual }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Instance, PageRef, TraceFile};
    use crate::ratio::frac;

    fn instance(m: usize, k: usize, reserves: &[usize], init: &[&str], req: &[&str]) -> Instance {
        let p = |s: &&str| s.parse::<PageRef>().unwrap();
        Instance::new(TraceFile {
            m,
            k,
            reserves: reserves.to_vec(),
            initial_cache: init.iter().map(p).collect(),
            requests: req.iter().map(p).collect(),
        })
        .unwrap()
    }

    fn id(inst: &Instance, s: &str) -> PageId {
        inst.universe().id(&s.parse().unwrap()).unwrap()
    }

    #[test]
    fn uniform_split_without_breakpoints() {
        // After b2: a1, a2, b1 at 1/3, then a1 requested.
        let inst = instance(2, 3, &[1, 0], &["0/a1", "0/a2", "1/b1"], &["1/b2", "0/a1"]);
        let mut s = EngineState::init(&inst);
        for name in ["0/a1", "0/a2", "1/b1"] {
            s.y[id(&inst, name).idx()] = frac(1, 3);
        }
        let b2 = id(&inst, "1/b2");
        s.y[b2.idx()] = zero();
        s.marked[b2.idx()] = true;
        let a1 = id(&inst, "0/a1");
        let plan = waterfill(&s, a1, &frac(1, 3), CandidateRule::Frontier);
        assert!(plan.is_complete());
        assert_eq!(plan.deltas.len(), 2);
        assert_eq!(plan.deltas[&id(&inst, "0/a2")], frac(1, 6));
        assert_eq!(plan.deltas[&id(&inst, "1/b1")], frac(1, 6));
    }

    #[test]
    fn tightening_agent_leaves_and_residual_is_reported() {
        // Agent 0 (reserve 1) holds q fully and r at y = 3/4, so its slack is
        // 1/4; b is marked. Serving c with deficit 1/2: q rises by 1/4, agent 0
        // goes tight, nothing else is evictable.
        let inst = instance(2, 2, &[1, 0], &["0/q", "1/b"], &["0/r", "1/c"]);
        let mut s = EngineState::init(&inst);
        let (q, r, b, c) = (id(&inst, "0/q"), id(&inst, "0/r"), id(&inst, "1/b"), id(&inst, "1/c"));
        s.y[r.idx()] = frac(3, 4);
        s.stale[0].insert(r);
        s.marked[b.idx()] = true;
        let plan = waterfill(&s, c, &frac(1, 2), CandidateRule::Frontier);
        assert_eq!(plan.deltas.get(&q), Some(&frac(1, 4)));
        assert_eq!(plan.deltas.get(&r), None);
        assert_eq!(plan.residual, frac(1, 4));
    }

    #[test]
    fn zero_deficit_is_empty() {
        let inst = instance(1, 2, &[0], &["0/a", "0/b"], &["0/a"]);
        let s = EngineState::init(&inst);
        let plan = waterfill(&s, id(&inst, "0/a"), &zero(), CandidateRule::Frontier);
        assert!(plan.deltas.is_empty());
        assert!(plan.is_complete());
    }

    #[test]
    fn groups_merge_at_next_level() {
        // Single agent without reserve: a at 0, b at 1/2, request clean c.
        let inst = instance(1, 2, &[0], &["0/a", "0/b"], &["0/c"]);
        let mut s = EngineState::init(&inst);
        let (a, b, c) = (id(&inst, "0/a"), id(&inst, "0/b"), id(&inst, "0/c"));
        s.y[b.idx()] = frac(1, 2);
        s.y[c.idx()] = frac(1, 2);
        let plan = waterfill(&s, c, &frac(1, 2), CandidateRule::Frontier);
        // a alone rises 0 → 1/2 using the whole deficit.
        assert_eq!(plan.deltas.get(&a), Some(&frac(1, 2)));
        assert!(plan.is_complete());

        let plan = waterfill(&s, c, &frac(3, 4), CandidateRule::Frontier);
        // a reaches 1/2 (cost 1/2), then a and b share the last 1/4.
        assert_eq!(plan.deltas[&a], frac(5, 8));
        assert_eq!(plan.deltas[&b], frac(1, 8));
        assert_eq!(plan.total(), frac(3, 4));
    }

    #[test]
    fn saturated_pages_leave_candidates() {
        let inst = instance(1, 1, &[0], &["0/a"], &["0/b", "0/c"]);
        let s = EngineState::init(&inst);
        let (a, b) = (id(&inst, "0/a"), id(&inst, "0/b"));
        let plan = waterfill(&s, b, &frac(3, 2), CandidateRule::Frontier);
        assert_eq!(plan.deltas[&a], one());
        assert_eq!(plan.residual, frac(1, 2));
    }

    #[test]
    fn isolated_rule_only_touches_own_pages() {
        let inst = instance(2, 3, &[2, 0], &["0/a1", "0/a2", "1/b1"], &["0/a3"]);
        let s = EngineState::init(&inst);
        let a3 = id(&inst, "0/a3");
        let plan = waterfill(&s, a3, &one(), CandidateRule::OwnUnmarked { agent: 0 });
        assert_eq!(plan.deltas.len(), 2);
        assert_eq!(plan.deltas[&id(&inst, "0/a1")], frac(1, 2));
        assert!(plan.is_complete());
    }
}
