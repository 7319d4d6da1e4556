//! Unweighted paging: randomized marking (RM) and its fractional
//! counterpart (FM).
//!
//! Phases end lazily: a phase is closed by the first request that needs an
//! eviction when no unmarked page is left to evict. That request is then
//! served in the new phase, exactly as in the reserves engine.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::accounting::{full_weight, phi_f64, EPS};
use crate::instance::{Instance, PageId};
use crate::ratio::{exact_str, fmt_exact, one, to_f64, zero, Rational};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PagingError {
    #[error("classic paging needs a single agent without reserve (m = {m}, reserves = {reserves:?})")]
    NotClassic { m: usize, reserves: Vec<usize> },
    #[error("request {t}: unmarked pages cannot absorb the eviction")]
    Infeasible { t: usize },
    #[error("exhaustive enumeration is limited to T ≤ {max_t} and k ≤ {max_k}")]
    TooLarge { max_t: usize, max_k: usize },
}

pub fn ensure_classic(instance: &Instance) -> Result<(), PagingError> {
    if instance.m() != 1 || instance.reserve(0) != 0 {
        return Err(PagingError::NotClassic {
            m: instance.m(),
            reserves: instance.reserves().to_vec(),
        });
    }
    Ok(())
}

/// Randomized marking over a set of exactly k cached pages.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RmState {
    pub cache: BTreeSet<PageId>,
    pub marked: BTreeSet<PageId>,
    pub phase: u32,
}

impl RmState {
    pub fn new(instance: &Instance) -> Self {
        Self {
            cache: instance.initial_cache().iter().copied().collect(),
            marked: BTreeSet::new(),
            phase: 1,
        }
    }

    fn unmarked(&self) -> Vec<PageId> {
        self.cache.difference(&self.marked).copied().collect()
    }

    /// Pages that may be evicted for a miss on `page`, after closing the
    /// phase if needed. Does not change `self`.
    fn eviction_choices(&self) -> (bool, Vec<PageId>) {
        let unmarked = self.unmarked();
        if unmarked.is_empty() {
            (true, self.cache.iter().copied().collect())
        } else {
            (false, unmarked)
        }
    }

    fn apply_miss(&mut self, page: PageId, roll: bool, victim: PageId) {
        if roll {
            self.marked.clear();
            self.phase += 1;
        }
        self.cache.remove(&victim);
        self.cache.insert(page);
        self.marked.insert(page);
    }

    /// Serves `page`; returns whether it was a miss.
    pub fn rm_step<R: Rng>(&mut self, page: PageId, rng: &mut R) -> bool {
        if self.cache.contains(&page) {
            self.marked.insert(page);
            return false;
        }
        let (roll, choices) = self.eviction_choices();
        let victim = choices[rng.random_range(0..choices.len())];
        self.apply_miss(page, roll, victim);
        true
    }
}

/// Total RM misses on the instance for one random stream.
pub fn rm_run<R: Rng>(instance: &Instance, rng: &mut R) -> u64 {
    let mut s = RmState::new(instance);
    instance.requests().iter().map(|&p| u64::from(s.rm_step(p, rng))).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmPhase {
    pub r: u32,
    pub first_step: usize,
    /// `None` while the phase is still open.
    pub last_step: Option<usize>,
    /// Requests in the phase that found their page fully evicted.
    pub ell: usize,
    pub psi_before_end: Option<f64>,
    pub psi_after_end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmStep {
    pub t: usize,
    #[serde(with = "exact_str")]
    pub cost: Rational,
    pub phase: u32,
    pub psi_before: f64,
    /// Ψ right before the request is served, after any phase end.
    pub psi_served_from: f64,
    pub psi_after: f64,
}

impl FmStep {
    pub fn service_delta(&self) -> f64 {
        self.psi_after - self.psi_served_from
    }
}

/// Fractional marking state.
#[derive(Debug, Clone, PartialEq)]
pub struct FmState {
    k: usize,
    y: Vec<Rational>,
    marked: Vec<bool>,
    stale: BTreeSet<PageId>,
    t: usize,
    pub phases: Vec<FmPhase>,
    pub steps: Vec<FmStep>,
}

impl FmState {
    pub fn new(instance: &Instance) -> Result<Self, PagingError> {
        ensure_classic(instance)?;
        let n = instance.universe().len();
        let mut y = vec![one(); n];
        for &p in instance.initial_cache() {
            y[p.idx()] = zero();
        }
        Ok(Self {
            k: instance.k(),
            y,
            marked: vec![false; n],
            stale: instance.initial_cache().iter().copied().collect(),
            t: 0,
            phases: vec![FmPhase {
                r: 1,
                first_step: 1,
                last_step: None,
                ell: 0,
                psi_before_end: None,
                psi_after_end: None,
            }],
            steps: Vec::new(),
        })
    }

    pub fn y(&self, p: PageId) -> &Rational {
        &self.y[p.idx()]
    }

    pub fn y_values(&self) -> &[Rational] {
        &self.y
    }

    /// Ψ over unmarked stale pages.
    pub fn potential(&self) -> f64 {
        self.stale
            .iter()
            .filter(|p| !self.marked[p.idx()])
            .map(|p| phi_f64(to_f64(&self.y[p.idx()]), self.k))
            .sum()
    }

    fn candidates(&self, page: PageId) -> Vec<PageId> {
        (0..self.y.len())
            .map(|i| PageId(i as u32))
            .filter(|&q| q != page && !self.marked[q.idx()] && !self.y[q.idx()].is_one())
            .collect()
    }

    fn end_phase(&mut self) {
        let before = self.potential();
        let snapshot: BTreeSet<PageId> = (0..self.y.len())
            .filter(|&i| self.marked[i])
            .map(|i| PageId(i as u32))
            .collect();
        self.marked.iter_mut().for_each(|m| *m = false);
        self.stale = snapshot;
        let after = self.potential();
        let cur = self.phases.last_mut().expect("open phase");
        cur.last_step = Some(self.t);
        cur.psi_before_end = Some(before);
        cur.psi_after_end = Some(after);
        let r = cur.r + 1;
        self.phases.push(FmPhase {
            r,
            first_step: self.t + 1,
            last_step: None,
            ell: 0,
            psi_before_end: None,
            psi_after_end: None,
        });
    }

    /// Serves `page`; returns its fractional miss cost y_p.
    pub fn fm_step(&mut self, page: PageId) -> Result<Rational, PagingError> {
        let t = self.t + 1;
        let psi_before = self.potential();
        let cost = self.y[page.idx()].clone();
        let mut psi_served_from = psi_before;
        if !cost.is_zero() {
            let mut cands = self.candidates(page);
            if cands.is_empty() {
                self.end_phase();
                psi_served_from = self.potential();
                cands = self.candidates(page);
            }
            if cands.is_empty() {
                return Err(PagingError::Infeasible { t });
            }
            let share = &cost / Rational::from_integer(BigInt::from(cands.len()));
            for q in cands {
                let v = &self.y[q.idx()] + &share;
                if v > one() {
                    return Err(PagingError::Infeasible { t });
                }
                self.y[q.idx()] = v;
            }
            self.y[page.idx()] = zero();
        }
        self.marked[page.idx()] = true;
        self.t = t;
        if cost.is_one() {
            self.phases.last_mut().expect("open phase").ell += 1;
        }
        self.steps.push(FmStep {
            t,
            cost: cost.clone(),
            phase: self.phases.last().expect("open phase").r,
            psi_before,
            psi_served_from,
            psi_after: self.potential(),
        });
        Ok(cost)
    }

    pub fn total_cost(&self) -> Rational {
        self.steps.iter().fold(zero(), |acc, s| acc + &s.cost)
    }

    pub fn sum_ell(&self) -> usize {
        self.phases.iter().map(|p| p.ell).sum()
    }
}

/// Runs FM over the whole trace, returning the final state with its per-step
/// and per-phase records.
pub fn fm_run(instance: &Instance) -> Result<FmState, PagingError> {
    let mut s = FmState::new(instance)?;
    for &p in instance.requests() {
        s.fm_step(p)?;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmBoundReport {
    pub cost: String,
    pub cost_f64: f64,
    pub sum_ell: usize,
    /// 2k·ln(1+k) + (1 + 2ln(1+k))·Σℓ
    pub rhs: f64,
    /// Steps with y < 1 where ΔΨ < y.
    pub step_violations: Vec<usize>,
    /// Phases whose end-of-phase drop differs from −2ℓ·ln(1+k).
    pub phase_drop_violations: Vec<u32>,
    pub holds: bool,
}

pub fn check_fm_bound(fm: &FmState) -> FmBoundReport {
    let k = fm.k;
    let w = full_weight(k);
    let cost = fm.total_cost();
    let sum_ell = fm.sum_ell();
    let rhs = k as f64 * w + (1.0 + w) * sum_ell as f64;
    let step_violations: Vec<usize> = fm
        .steps
        .iter()
        .filter(|s| !s.cost.is_one() && to_f64(&s.cost) > s.service_delta() + EPS)
        .map(|s| s.t)
        .collect();
    let phase_drop_violations: Vec<u32> = fm
        .phases
        .iter()
        .filter_map(|p| {
            let drop = p.psi_after_end? - p.psi_before_end?;
            ((drop + w * p.ell as f64).abs() > EPS).then_some(p.r)
        })
        .collect();
    let cost_f64 = to_f64(&cost);
    FmBoundReport {
        cost: fmt_exact(&cost),
        cost_f64,
        sum_ell,
        rhs,
        holds: cost_f64 <= rhs + EPS && step_violations.is_empty() && phase_drop_violations.is_empty(),
        step_violations,
        phase_drop_violations,
    }
}

pub const ENUM_MAX_T: usize = 10;
pub const ENUM_MAX_K: usize = 3;

/// Exact RM eviction probabilities after every step, from the full tree of
/// random choices: `out[t][p]` is P[p not cached after step t+1].
pub fn rm_exact_marginals(instance: &Instance) -> Result<Vec<Vec<Rational>>, PagingError> {
    ensure_classic(instance)?;
    if instance.requests().len() > ENUM_MAX_T || instance.k() > ENUM_MAX_K {
        return Err(PagingError::TooLarge {
            max_t: ENUM_MAX_T,
            max_k: ENUM_MAX_K,
        });
    }
    let n = instance.universe().len();
    let mut dist: BTreeMap<RmState, Rational> = BTreeMap::new();
    dist.insert(RmState::new(instance), one());
    let mut out = Vec::with_capacity(instance.requests().len());
    for &p in instance.requests() {
        let mut next: BTreeMap<RmState, Rational> = BTreeMap::new();
        for (state, prob) in dist {
            if state.cache.contains(&p) {
                let mut s = state;
                s.marked.insert(p);
                *next.entry(s).or_insert_with(zero) += prob;
                continue;
            }
            let (roll, choices) = state.eviction_choices();
            let share = &prob / Rational::from_integer(BigInt::from(choices.len()));
            for victim in choices {
                let mut s = state.clone();
                s.apply_miss(p, roll, victim);
                *next.entry(s).or_insert_with(zero) += &share;
            }
        }
        dist = next;
        let mut evicted = vec![one(); n];
        for (state, prob) in &dist {
            for q in &state.cache {
                evicted[q.idx()] -= prob;
            }
        }
        out.push(evicted);
    }
    Ok(out)
}

/// Sample mean and standard error of RM's total cost over `seeds`.
pub fn rm_sample_stats(instance: &Instance, seeds: std::ops::Range<u64>) -> (f64, f64) {
    use rand::SeedableRng;
    let costs: Vec<f64> = seeds
        .map(|s| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            rm_run(instance, &mut rng) as f64
        })
        .collect();
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_trace;
    use crate::instance::{PageRef, TraceFile};
    use crate::ratio::frac;
    use rand::SeedableRng;

    fn paging(k: usize, init: &[&str], req: &[&str]) -> Instance {
        let p = |s: &&str| s.parse::<PageRef>().unwrap();
        Instance::new(TraceFile {
            m: 1,
            k,
            reserves: vec![0],
            initial_cache: init.iter().map(p).collect(),
            requests: req.iter().map(p).collect(),
        })
        .unwrap()
    }

    fn id(inst: &Instance, s: &str) -> PageId {
        inst.universe().id(&s.parse().unwrap()).unwrap()
    }

    #[test]
    fn fm_hand_trace() {
        let inst = paging(2, &["0/a", "0/b"], &["0/c", "0/a"]);
        let mut fm = FmState::new(&inst).unwrap();
        assert_eq!(fm.fm_step(id(&inst, "0/c")).unwrap(), one());
        assert_eq!(fm.y(id(&inst, "0/a")), &frac(1, 2));
        assert_eq!(fm.y(id(&inst, "0/b")), &frac(1, 2));
        assert_eq!(fm.fm_step(id(&inst, "0/a")).unwrap(), frac(1, 2));
        assert_eq!(fm.y(id(&inst, "0/b")), &one());
    }

    #[test]
    fn fm_marked_request_is_free() {
        let inst = paging(2, &["0/a", "0/b"], &["0/c", "0/c"]);
        let fm = fm_run(&inst).unwrap();
        assert_eq!(fm.steps[1].cost, zero());
    }

    #[test]
    fn rm_hit_marks_without_eviction() {
        let inst = paging(2, &["0/a", "0/b"], &["0/a"]);
        let mut s = RmState::new(&inst);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(!s.rm_step(id(&inst, "0/a"), &mut rng));
        assert_eq!(s.cache.len(), 2);
        assert!(s.marked.contains(&id(&inst, "0/a")));
    }

    #[test]
    fn rm_evicts_each_unmarked_page_half_the_time() {
        let inst = paging(2, &["0/a", "0/b"], &["0/c"]);
        let m = rm_exact_marginals(&inst).unwrap();
        assert_eq!(m[0][id(&inst, "0/a").idx()], frac(1, 2));
        assert_eq!(m[0][id(&inst, "0/b").idx()], frac(1, 2));
        assert_eq!(m[0][id(&inst, "0/c").idx()], zero());
    }

    #[test]
    fn exhaustive_marginals_match_fm() {
        let inst = paging(
            3,
            &["0/a", "0/b", "0/c"],
            &["0/d", "0/a", "0/e", "0/b", "0/d", "0/f", "0/c", "0/a", "0/e", "0/b"],
        );
        let m = rm_exact_marginals(&inst).unwrap();
        let mut fm = FmState::new(&inst).unwrap();
        for (t, &p) in inst.requests().iter().enumerate() {
            fm.fm_step(p).unwrap();
            assert_eq!(m[t].as_slice(), fm.y_values(), "step {}", t + 1);
        }
    }

    #[test]
    fn cycle_has_one_clean_page_per_phase() {
        let inst = paging(2, &["0/a", "0/b"], &["0/c", "0/a", "0/b", "0/c", "0/a", "0/b", "0/c"]);
        let fm = fm_run(&inst).unwrap();
        let report = check_fm_bound(&fm);
        assert!(report.holds, "{report:?}");
        assert!(fm.phases.iter().all(|p| p.ell == 1));
    }

    #[test]
    fn zero_miss_bound() {
        let inst = paging(2, &["0/a", "0/b"], &["0/a", "0/b"]);
        let report = check_fm_bound(&fm_run(&inst).unwrap());
        assert_eq!(report.cost_f64, 0.0);
        assert!(report.holds);
    }

    #[test]
    fn reserves_engine_reduces_to_fm() {
        let inst = paging(
            3,
            &["0/a", "0/b", "0/c"],
            &["0/d", "0/a", "0/e", "0/f", "0/b", "0/d", "0/a", "0/c"],
        );
        let fm = fm_run(&inst).unwrap();
        let (log, _) = run_trace(&inst).unwrap();
        let ours: Vec<&Rational> = log.steps.iter().map(|s| &s.fetch_cost).collect();
        let theirs: Vec<&Rational> = fm.steps.iter().map(|s| &s.cost).collect();
        assert_eq!(ours, theirs);
    }

    #[test]
    fn rejects_reserve_instances() {
        let inst = Instance::new(TraceFile {
            m: 2,
            k: 2,
            reserves: vec![1, 0],
            initial_cache: vec!["0/a".parse().unwrap(), "1/b".parse().unwrap()],
            requests: vec![],
        })
        .unwrap();
        assert!(FmState::new(&inst).is_err());
    }
}
