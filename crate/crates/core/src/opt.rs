//! Exact offline optimum for tiny instances by shortest path over feasible
//! cache sets.

use serde::Serialize;
use thiserror::Error;

use crate::instance::{Instance, PageId};

pub const MAX_UNIVERSE: usize = 12;
pub const MAX_K: usize = 4;
pub const MAX_T: usize = 14;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OptError {
    #[error("{what} = {value} exceeds the brute-force limit {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OptResult {
    pub opt_cost: u64,
    /// Cache contents after serving each request.
    pub schedule: Vec<Vec<PageId>>,
}

fn guard(what: &'static str, value: usize, limit: usize) -> Result<(), OptError> {
    if value > limit {
        Err(OptError::TooLarge { what, value, limit })
    } else {
        Ok(())
    }
}

/// Minimum number of fetches over all cache schedules that keep exactly k
/// pages, hold the requested page at every step and meet every reserve.
pub fn brute_opt(instance: &Instance) -> Result<OptResult, OptError> {
    brute_opt_with_limit(instance, MAX_UNIVERSE)
}

/// As [`brute_opt`] with a custom universe limit (still capped by what fits a
/// 32-bit set).
pub fn brute_opt_with_limit(instance: &Instance, max_universe: usize) -> Result<OptResult, OptError> {
    let u = instance.universe();
    guard("universe size", u.len(), max_universe.min(32))?;
    guard("k", instance.k(), MAX_K)?;
    guard("T", instance.requests().len(), MAX_T)?;

    let owner_masks: Vec<u32> = (0..instance.m())
        .map(|i| u.agent_pages(i).fold(0u32, |acc, p| acc | bit(p)))
        .collect();
    let feasible: Vec<u32> = k_subsets(u.len(), instance.k())
        .filter(|&s| {
            owner_masks
                .iter()
                .zip(instance.reserves())
                .all(|(&mask, &r)| (s & mask).count_ones() as usize >= r)
        })
        .collect();

    let start = instance.initial_cache().iter().fold(0u32, |acc, &p| acc | bit(p));
    let mut layer: Vec<(u32, u64)> = vec![(start, 0)];
    let mut back: Vec<Vec<usize>> = Vec::new();
    let mut layers: Vec<Vec<u32>> = Vec::new();
    for &p in instance.requests() {
        let candidates: Vec<u32> = feasible.iter().copied().filter(|s| s & bit(p) != 0).collect();
        let mut next = Vec::with_capacity(candidates.len());
        let mut from = Vec::with_capacity(candidates.len());
        for &s in &candidates {
            let (j, cost) = layer
                .iter()
                .enumerate()
                .map(|(j, &(prev, c))| (j, c + u64::from((s & !prev).count_ones())))
                .min_by_key(|&(j, c)| (c, j))
                .expect("previous layer is non-empty");
            next.push((s, cost));
            from.push(j);
        }
        back.push(from);
        layers.push(candidates);
        layer = next;
    }

    let (mut j, opt_cost) = layer
        .iter()
        .enumerate()
        .map(|(j, &(_, c))| (j, c))
        .min_by_key(|&(j, c)| (c, j))
        .expect("final layer is non-empty");
    let mut schedule = vec![Vec::new(); layers.len()];
    for t in (0..layers.len()).rev() {
        schedule[t] = members(layers[t][j]);
        j = back[t][j];
    }
    Ok(OptResult { opt_cost, schedule })
}

fn bit(p: PageId) -> u32 {
    1u32 << p.0
}

fn members(s: u32) -> Vec<PageId> {
    (0..32).filter(|b| s & (1 << b) != 0).map(PageId).collect()
}

/// All n-bit masks with exactly k bits set, in increasing order.
fn k_subsets(n: usize, k: usize) -> impl Iterator<Item = u32> {
    let limit = 1u64 << n;
    let mut cur: Option<u64> = if k <= n { Some((1u64 << k) - 1) } else { None };
    std::iter::from_fn(move || {
        let s = cur?;
        if s >= limit {
            return None;
        }
        // Gosper's hack for the next mask with the same popcount.
        cur = if s == 0 {
            None
        } else {
            let c = s & s.wrapping_neg();
            let r = s + c;
            Some((((r ^ s) >> 2) / c) | r)
        };
        Some(s as u32)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{PageRef, TraceFile};
    use proptest::prelude::*;

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

    #[test]
    fn subsets_are_enumerated_once() {
        assert_eq!(k_subsets(5, 2).count(), 10);
        assert_eq!(k_subsets(12, 4).count(), 495);
        assert_eq!(k_subsets(3, 0).collect::<Vec<_>>(), vec![0]);
        assert_eq!(k_subsets(2, 3).count(), 0);
    }

    #[test]
    fn all_hits_cost_nothing() {
        let inst = instance(1, 2, &[0], &["0/a", "0/b"], &["0/a", "0/b", "0/b"]);
        assert_eq!(brute_opt(&inst).unwrap().opt_cost, 0);
    }

    #[test]
    fn three_page_cycle() {
        let inst = instance(1, 2, &[0], &["0/a", "0/b"], &["0/a", "0/b", "0/c", "0/a", "0/b", "0/c"]);
        let r = brute_opt(&inst).unwrap();
        assert_eq!(r.opt_cost, 2);
        for (t, set) in r.schedule.iter().enumerate() {
            assert_eq!(set.len(), 2);
            assert!(set.contains(&inst.requests()[t]));
        }
    }

    #[test]
    fn reserves_can_force_extra_misses() {
        let inst = instance(2, 2, &[1, 0], &["0/a", "1/x"], &["1/y", "1/x"]);
        assert_eq!(brute_opt(&inst).unwrap().opt_cost, 2);
        assert_eq!(brute_opt(&inst.without_reserves()).unwrap().opt_cost, 1);
    }

    #[test]
    fn guards_reject_large_instances() {
        let init: Vec<String> = (0..5).map(|j| format!("0/p{j}")).collect();
        let refs: Vec<&str> = init.iter().map(String::as_str).collect();
        let inst = instance(1, 5, &[0], &refs, &[]);
        assert!(matches!(brute_opt(&inst), Err(OptError::TooLarge { what: "k", .. })));
    }

    fn tiny_instance() -> impl Strategy<Value = Instance> {
        (
            1usize..=3,
            1usize..=2,
            prop::collection::vec((0usize..2, 0usize..4), 0..10),
        )
            .prop_map(|(k, m, reqs)| {
                let reserves = if m == 2 {
                    vec![k.saturating_sub(1).min(1), 0]
                } else {
                    vec![0]
                };
                let mut initial: Vec<PageRef> = Vec::new();
                for (i, &r) in reserves.iter().enumerate() {
                    for j in 0..r {
                        initial.push(PageRef::new(i, format!("p{j}")));
                    }
                }
                let mut j = 0;
                while initial.len() < k {
                    let p = PageRef::new(m - 1, format!("q{j}"));
                    initial.push(p);
                    j += 1;
                }
                let requests = reqs
                    .into_iter()
                    .map(|(a, p)| PageRef::new(a % m, format!("p{p}")))
                    .collect();
                Instance::new(TraceFile {
                    m,
                    k,
                    reserves,
                    initial_cache: initial,
                    requests,
                })
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn removing_a_request_never_costs_more(inst in tiny_instance(), drop in any::<prop::sample::Index>()) {
            let full = brute_opt(&inst).unwrap().opt_cost;
            let mut trace = inst.trace().clone();
            if !trace.requests.is_empty() {
                trace.requests.remove(drop.index(trace.requests.len()));
                let shorter = brute_opt(&Instance::new(trace).unwrap()).unwrap().opt_cost;
                prop_assert!(shorter <= full);
            }
        }

        #[test]
        fn dropping_reserves_never_costs_more(inst in tiny_instance()) {
            let with = brute_opt(&inst).unwrap().opt_cost;
            let without = brute_opt(&inst.without_reserves()).unwrap().opt_cost;
            prop_assert!(without <= with);
        }
    }
}
