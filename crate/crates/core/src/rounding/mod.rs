//! Online rounding of the fractional solution: discretization to multiples
//! of 1/N and an ensemble of N integral cache states realizing it.

mod ensemble;

use std::io::Write;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{EngineError, MarkingEngine};
use crate::instance::{Instance, PageId, Universe};
use crate::ratio::{exact_str, floor_times, fmt_exact, frac, int, zero, Rational};

pub use ensemble::Ensemble;

#[derive(Debug, Error)]
pub enum RoundingError {
    #[error("page order is not agent-contiguous at position {position}")]
    OrderNotContiguous { position: usize },
    #[error("page order does not list every universe page exactly once")]
    OrderIncomplete,
    #[error("N must be positive")]
    ZeroN,
    #[error("matching sides differ: |P| = {p}, |Q| = {q}")]
    Unbalanced { p: usize, q: usize },
    #[error("pair ({p}, {q}) is not applicable to the ensemble")]
    PairNotApplicable { p: u32, q: u32 },
    #[error("reserve repair failed: {what}\n{dump}")]
    RepairFailed { what: String, dump: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Default N = k³.
pub fn default_n(k: usize) -> u64 {
    (k as u64).pow(3)
}

/// x̃ = counts / N, indexed by `PageId`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscreteVector {
    pub n: u64,
    pub counts: Vec<u64>,
}

impl DiscreteVector {
    pub fn value(&self, p: PageId) -> Rational {
        frac(self.counts[p.idx()] as i64, self.n as i64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn agent_total(&self, universe: &Universe, agent: usize) -> u64 {
        universe.agent_pages(agent).map(|p| self.counts[p.idx()]).sum()
    }

    /// Half the L1 distance, as a count of 1/N units.
    pub fn half_l1(&self, other: &Self) -> u64 {
        let l1: u64 = self.counts.iter().zip(&other.counts).map(|(a, b)| a.abs_diff(*b)).sum();
        l1 / 2
    }
}

/// Agents in index order, each agent's pages in identifier order.
pub fn default_order(universe: &Universe) -> Vec<PageId> {
    universe.pages().collect()
}

/// Prefix-sum floor rounding along `order`.
pub fn discretize(
    x: &[Rational],
    order: &[PageId],
    universe: &Universe,
    n: u64,
) -> Result<DiscreteVector, RoundingError> {
    if n == 0 {
        return Err(RoundingError::ZeroN);
    }
    let mut seen = vec![false; universe.len()];
    let mut done_agents = vec![false; universe.num_agents()];
    for (pos, &p) in order.iter().enumerate() {
        if p.idx() >= seen.len() || std::mem::replace(&mut seen[p.idx()], true) {
            return Err(RoundingError::OrderIncomplete);
        }
        let a = universe.owner(p);
        if pos > 0 {
            let prev = universe.owner(order[pos - 1]);
            if prev != a {
                done_agents[prev] = true;
            }
        }
        if done_agents[a] {
            return Err(RoundingError::OrderNotContiguous { position: pos });
        }
    }
    if seen.iter().any(|s| !s) || x.len() != universe.len() {
        return Err(RoundingError::OrderIncomplete);
    }

    let mut counts = vec![0u64; universe.len()];
    let mut prefix = zero();
    let mut prev_floor = 0u64;
    for &p in order {
        prefix += &x[p.idx()];
        let f = floor_times(&prefix, n);
        counts[p.idx()] = f - prev_floor;
        prev_floor = f;
    }
    Ok(DiscreteVector { n, counts })
}

/// Violations of the discretization guarantees, the per-agent reserve feasibility and
/// the total-distortion bound.
pub fn check_discretization(x: &[Rational], dv: &DiscreteVector, instance: &Instance) -> Vec<String> {
    let u = instance.universe();
    let n = dv.n;
    let n_r = int(n as i64);
    let inv_n = frac(1, n as i64);
    let mut out = Vec::new();
    let mut distortion = zero();
    for p in u.pages() {
        let c = dv.counts[p.idx()];
        if c > n {
            out.push(format!("count of {} exceeds N", u.page_ref(p)));
        }
        let diff = (dv.value(p) - &x[p.idx()]).abs();
        if diff >= inv_n {
            out.push(format!("|x̃ − x| ≥ 1/N on {}", u.page_ref(p)));
        }
        let xp = &x[p.idx()];
        if (xp.is_zero() || *xp == int(1)) && int(c as i64) != xp * &n_r {
            out.push(format!("integral value of {} moved", u.page_ref(p)));
        }
        distortion += diff;
    }
    for a in 0..instance.m() {
        let sx: Rational = u.agent_pages(a).fold(zero(), |acc, p| acc + &x[p.idx()]);
        let st = frac(dv.agent_total(u, a) as i64, n as i64);
        if (st.clone() - &sx).abs() >= inv_n {
            out.push(format!("agent {a} total moved by ≥ 1/N"));
        }
        if dv.agent_total(u, a) < n * instance.reserve(a) as u64 {
            out.push(format!("agent {a} below reserve"));
        }
    }
    if dv.total() != n * instance.k() as u64 {
        out.push(format!("total {} ≠ N·k", dv.total()));
    }
    let k = instance.k() as i64;
    if distortion > frac(k * k, n as i64) {
        out.push(format!("Σ|x̃ − x| = {} exceeds k²/N", fmt_exact(&distortion)));
    }
    out
}

/// Matches increases P against decreases Q: same-agent pages first, then the
/// rest in page order.
pub fn diff_matching(
    before: &DiscreteVector,
    after: &DiscreteVector,
    universe: &Universe,
) -> Result<Vec<(PageId, PageId)>, RoundingError> {
    let m = universe.num_agents();
    let mut ups: Vec<Vec<PageId>> = vec![Vec::new(); m];
    let mut downs: Vec<Vec<PageId>> = vec![Vec::new(); m];
    for p in universe.pages() {
        let (b, a) = (before.counts[p.idx()], after.counts[p.idx()]);
        let agent = universe.owner(p);
        if a > b {
            ups[agent].extend(std::iter::repeat_n(p, (a - b) as usize));
        } else {
            downs[agent].extend(std::iter::repeat_n(p, (b - a) as usize));
        }
    }
    let (np, nq): (usize, usize) = (ups.iter().map(Vec::len).sum(), downs.iter().map(Vec::len).sum());
    if np != nq {
        return Err(RoundingError::Unbalanced { p: np, q: nq });
    }
    let mut pairs = Vec::with_capacity(np);
    let mut rest_p = Vec::new();
    let mut rest_q = Vec::new();
    for (u, d) in ups.into_iter().zip(downs) {
        let same = u.len().min(d.len());
        pairs.extend(u[..same].iter().copied().zip(d[..same].iter().copied()));
        rest_p.extend_from_slice(&u[same..]);
        rest_q.extend_from_slice(&d[same..]);
    }
    pairs.extend(rest_p.into_iter().zip(rest_q));
    Ok(pairs)
}

/// Whether every prefix of `pairs`, applied to `before` in 1/N units, keeps
/// every reserve.
pub fn prefixes_meet_reserves(before: &DiscreteVector, pairs: &[(PageId, PageId)], instance: &Instance) -> bool {
    let u = instance.universe();
    let mut totals: Vec<u64> = (0..instance.m()).map(|a| before.agent_total(u, a)).collect();
    let floor: Vec<u64> = (0..instance.m())
        .map(|a| before.n * instance.reserve(a) as u64)
        .collect();
    pairs.iter().all(|&(p, q)| {
        totals[u.owner(p)] += 1;
        totals[u.owner(q)] -= 1;
        totals.iter().zip(&floor).all(|(t, f)| t >= f)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundingStep {
    pub t: usize,
    pub removals: u64,
    pub pairs: u64,
    #[serde(with = "exact_str")]
    pub discretized_cost: Rational,
    #[serde(with = "exact_str")]
    pub fractional_cost: Rational,
    /// Pages fetched into the followed state at this step.
    pub followed_state_miss: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundingFailure {
    pub t: usize,
    pub what: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundingRun {
    pub n: u64,
    pub follow_index: usize,
    pub integral_cost: u64,
    #[serde(with = "exact_str")]
    pub expected_cost: Rational,
    #[serde(with = "exact_str")]
    pub fractional_cost: Rational,
    #[serde(with = "exact_str")]
    pub discretized_cost: Rational,
    /// Total fetches of every ensemble state, by state index.
    pub state_costs: Vec<u64>,
    pub steps: Vec<RoundingStep>,
    pub failures: Vec<RoundingFailure>,
    /// Bound checks downgraded because N < k³.
    pub warnings: Vec<RoundingFailure>,
}

impl RoundingRun {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }

    /// Mean integral cost over all N follow indices.
    pub fn mean_integral_cost(&self) -> Rational {
        let total: u64 = self.state_costs.iter().sum();
        frac(total as i64, self.n as i64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "removals",
            "discretized_cost",
            "fractional_cost",
            "followed_state_miss",
        ])?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.removals.to_string(),
                fmt_exact(&s.discretized_cost),
                fmt_exact(&s.fractional_cost),
                s.followed_state_miss.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Drives the engine, discretizes after every step and keeps the ensemble in
/// sync. Randomness is limited to the follow index drawn from `seed`.
pub fn run_randomized(instance: &Instance, seed: u64, n_override: Option<u64>) -> Result<RoundingRun, RoundingError> {
    let k = instance.k();
    let n = n_override.unwrap_or_else(|| default_n(k));
    if n == 0 {
        return Err(RoundingError::ZeroN);
    }
    let full_n = n >= default_n(k);
    let u = instance.universe();
    let order = default_order(u);
    let follow_index = ChaCha8Rng::seed_from_u64(seed).random_range(0..n as usize);

    let mut engine = MarkingEngine::new(instance);
    let mut x = engine.state().x_vector();
    let mut dv = discretize(&x, &order, u, n)?;
    let mut ensemble = Ensemble::new(instance, n as usize);
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    let mut record = |t: usize, bound: bool, what: String, failures: &mut Vec<RoundingFailure>| {
        if bound && !full_n {
            warnings.push(RoundingFailure { t, what });
        } else {
            failures.push(RoundingFailure { t, what });
        }
    };
    for what in check_discretization(&x, &dv, instance) {
        record(0, false, what, &mut failures);
    }
    for what in ensemble.check(&dv, instance) {
        record(0, false, what, &mut failures);
    }

    let mut steps = Vec::with_capacity(instance.requests().len());
    let mut state_costs = vec![0u64; n as usize];
    let mut expected = zero();
    let mut fractional = zero();
    let mut discretized = zero();
    let n_r = int(n as i64);
    for &page in instance.requests() {
        let report = engine.serve(page)?;
        let t = report.t;
        let c = report.fetch_cost.clone();
        let x_next = engine.state().x_vector();
        let dv_next = discretize(&x_next, &order, u, n)?;
        for what in check_discretization(&x_next, &dv_next, instance) {
            record(t, false, what, &mut failures);
        }

        let l1: Rational = x.iter().zip(&x_next).fold(zero(), |acc, (a, b)| acc + (a - b).abs());
        if l1 != &c * int(2) {
            record(
                t,
                false,
                format!(
                    "half L1 move {} ≠ fetch cost {}",
                    fmt_exact(&(l1 / int(2))),
                    fmt_exact(&c)
                ),
                &mut failures,
            );
        }
        if !c.is_zero() && c < frac(1, k as i64) {
            record(
                t,
                false,
                format!("fractional cost {} below 1/k", fmt_exact(&c)),
                &mut failures,
            );
        }

        let units = dv.half_l1(&dv_next);
        let dcost = frac(units as i64, n as i64);
        if c.is_zero() && units != 0 {
            record(
                t,
                false,
                "zero fractional cost moved the discretization".into(),
                &mut failures,
            );
        }
        if dcost > &c * int(2) {
            record(
                t,
                true,
                format!("discretized cost {} exceeds 2× {}", fmt_exact(&dcost), fmt_exact(&c)),
                &mut failures,
            );
        }

        let pairs = diff_matching(&dv, &dv_next, u)?;
        if !prefixes_meet_reserves(&dv, &pairs, instance) {
            record(t, false, "matching prefix violates a reserve".into(), &mut failures);
        }
        let mut removals = 0u64;
        let mut per_state = vec![0u64; n as usize];
        for &(p, q) in &pairs {
            let r = ensemble.apply_pair(p, q, instance, &mut per_state)?;
            if r > 6 {
                record(
                    t,
                    false,
                    format!("pair ({}, {}) used {r} removals", u.page_ref(p), u.page_ref(q)),
                    &mut failures,
                );
            }
            removals += r;
        }
        if removals > 6 * units {
            record(
                t,
                false,
                format!("{removals} removals exceed 6× {units} discretized units"),
                &mut failures,
            );
        }
        for what in ensemble.check(&dv_next, instance) {
            record(t, false, what, &mut failures);
        }

        for (acc, r) in state_costs.iter_mut().zip(&per_state) {
            *acc += r;
        }
        expected += frac(removals as i64, n as i64);
        fractional += &c;
        discretized += &dcost;
        if expected > &fractional * int(12) {
            record(
                t,
                true,
                format!(
                    "expected cost {} exceeds 12× {}",
                    fmt_exact(&expected),
                    fmt_exact(&fractional)
                ),
                &mut failures,
            );
        }
        steps.push(RoundingStep {
            t,
            removals,
            pairs: pairs.len() as u64,
            discretized_cost: dcost,
            fractional_cost: c,
            followed_state_miss: per_state[follow_index],
        });
        x = x_next;
        dv = dv_next;
    }

    let integral_cost = state_costs[follow_index];
    let mean = Rational::new(BigInt::from(state_costs.iter().sum::<u64>()), BigInt::from(1)) / &n_r;
    if mean != expected {
        failures.push(RoundingFailure {
            t: instance.requests().len(),
            what: format!(
                "mean integral cost {} ≠ expected cost {}",
                fmt_exact(&mean),
                fmt_exact(&expected)
            ),
        });
    }
    Ok(RoundingRun {
        n,
        follow_index,
        integral_cost,
        expected_cost: expected,
        fractional_cost: fractional,
        discretized_cost: discretized,
        state_costs,
        steps,
        failures,
        warnings,
    })
}

#[cfg(test)]
mod tests;
