//! Seeded synthetic traces.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{Instance, InstanceError, PageRef, TraceFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Zipf,
    CycleAdversary,
    IsolationAdversary,
    Uniform,
}

impl Model {
    pub const ALL: [Model; 4] = [
        Model::Zipf,
        Model::CycleAdversary,
        Model::IsolationAdversary,
        Model::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Model::Zipf => "zipf",
            Model::CycleAdversary => "cycle-adversary",
            Model::IsolationAdversary => "isolation-adversary",
            Model::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Model::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| WorkloadError::Inconsistent(format!("unknown model {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub model: Model,
    pub m: usize,
    pub k: usize,
    pub reserves: Vec<usize>,
    pub pages_per_agent: Vec<usize>,
    pub t: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("inconsistent workload spec: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// Page names within an agent: a, b, …, z, aa, ab, …
pub fn page_name(mut j: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (j % 26) as u8);
        if j < 26 {
            break;
        }
        j = j / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

impl WorkloadSpec {
    pub fn check(&self) -> Result<(), WorkloadError> {
        let bad = |s: String| Err(WorkloadError::Inconsistent(s));
        if self.m == 0 || self.k == 0 {
            return bad("m and k must be positive".into());
        }
        if self.reserves.len() != self.m || self.pages_per_agent.len() != self.m {
            return bad("reserves and pages-per-agent need one entry per agent".into());
        }
        let sum: usize = self.reserves.iter().sum();
        if sum >= self.k {
            return bad(format!("reserves sum to {sum}, need < k = {}", self.k));
        }
        if let Some(i) = (0..self.m).find(|&i| self.pages_per_agent[i] < self.reserves[i]) {
            return bad(format!("agent {i} has fewer pages than its reserve"));
        }
        if self.pages_per_agent.iter().sum::<usize>() < self.k {
            return bad("fewer pages than cache slots".into());
        }
        if self.model == Model::Zipf && (self.zipf_exponent.is_nan() || self.zipf_exponent < 0.0) {
            return bad("zipf exponent must be non-negative".into());
        }
        Ok(())
    }

    fn pages(&self) -> Vec<PageRef> {
        (0..self.m)
            .flat_map(|i| (0..self.pages_per_agent[i]).map(move |j| PageRef::new(i, page_name(j))))
            .collect()
    }
}

/// Builds the instance described by `spec`. The same spec always yields the
/// same instance.
pub fn generate(spec: &WorkloadSpec) -> Result<Instance, WorkloadError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all = spec.pages();

    let mut initial: Vec<PageRef> = Vec::with_capacity(spec.k);
    let mut rest: Vec<PageRef> = Vec::new();
    for i in 0..spec.m {
        for j in 0..spec.pages_per_agent[i] {
            let p = PageRef::new(i, page_name(j));
            if j < spec.reserves[i] {
                initial.push(p);
            } else {
                rest.push(p);
            }
        }
    }
    rest.shuffle(&mut rng);
    initial.extend(rest.into_iter().take(spec.k - initial.len()));
    initial.sort();

    let requests = match spec.model {
        Model::Uniform => (0..spec.t)
            .map(|_| all[rng.random_range(0..all.len())].clone())
            .collect(),
        Model::Zipf => {
            let mut ranked = all.clone();
            ranked.shuffle(&mut rng);
            let zipf = Zipf::new(ranked.len() as f64, spec.zipf_exponent)
                .map_err(|e| WorkloadError::Inconsistent(e.to_string()))?;
            (0..spec.t)
                .map(|_| {
                    let rank = zipf.sample(&mut rng) as usize;
                    ranked[rank.clamp(1, ranked.len()) - 1].clone()
                })
                .collect()
        }
        Model::CycleAdversary => {
            let agent = (0..spec.m)
                .max_by_key(|&i| (spec.pages_per_agent[i], std::cmp::Reverse(i)))
                .expect("m ≥ 1");
            let len = (spec.k + 1).min(spec.pages_per_agent[agent]);
            (0..spec.t).map(|s| PageRef::new(agent, page_name(s % len))).collect()
        }
        Model::IsolationAdversary => isolation_requests(spec, &all, &mut rng),
    };

    Ok(Instance::new(TraceFile {
        m: spec.m,
        k: spec.k,
        reserves: spec.reserves.clone(),
        initial_cache: initial,
        requests,
    })?)
}

/// Rounds of one request to the target agent (a different page each round)
/// followed by k + 1 requests to other agents' pages, so that phases keep
/// ending while the target holds fewer marks than its reserve.
fn isolation_requests(spec: &WorkloadSpec, all: &[PageRef], rng: &mut ChaCha8Rng) -> Vec<PageRef> {
    let target = (0..spec.m)
        .max_by_key(|&i| (spec.reserves[i], std::cmp::Reverse(i)))
        .expect("m ≥ 1");
    let others: Vec<&PageRef> = all.iter().filter(|p| p.agent != target).collect();
    let own = spec.pages_per_agent[target];
    let mut out = Vec::with_capacity(spec.t);
    let mut round = 0;
    while out.len() < spec.t {
        if own > 0 {
            out.push(PageRef::new(target, page_name(round % own)));
        }
        for _ in 0..=spec.k {
            if out.len() == spec.t {
                break;
            }
            if others.is_empty() {
                out.push(all[rng.random_range(0..all.len())].clone());
            } else {
                out.push(others[rng.random_range(0..others.len())].clone());
            }
        }
        round += 1;
    }
    out.truncate(spec.t);
    out
}

/// Size limits for randomly drawn specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_m: usize,
    pub max_k: usize,
    pub max_universe: usize,
    pub max_t: usize,
}

impl Limits {
    /// Batch size used by the engine, potential, dual and rounding checks.
    pub const STANDARD: Limits = Limits {
        max_m: 4,
        max_k: 6,
        max_universe: 20,
        max_t: 200,
    };

    /// Small enough for the brute-force optimum.
    pub const TINY: Limits = Limits {
        max_m: 3,
        max_k: 3,
        max_universe: 8,
        max_t: 12,
    };
}

/// Draws a consistent spec within `limits`.
pub fn random_spec<R: Rng>(rng: &mut R, limits: Limits) -> WorkloadSpec {
    let k = rng.random_range(1..=limits.max_k);
    let universe = if k < limits.max_universe {
        rng.random_range(k + 1..=limits.max_universe)
    } else {
        limits.max_universe.max(k)
    };
    let m = rng.random_range(1..=limits.max_m);
    let mut reserves = vec![0; m];
    let reserved = rng.random_range(0..k);
    for _ in 0..reserved {
        reserves[rng.random_range(0..m)] += 1;
    }
    let mut pages_per_agent = reserves.clone();
    for _ in 0..universe - reserved {
        pages_per_agent[rng.random_range(0..m)] += 1;
    }
    WorkloadSpec {
        model: Model::ALL[rng.random_range(0..Model::ALL.len())],
        m,
        k,
        reserves,
        pages_per_agent,
        t: rng.random_range(1..=limits.max_t),
        zipf_exponent: rng.random_range(0.5..1.5),
        seed: rng.random(),
    }
}

/// `count` specs drawn from a master seed.
pub fn random_specs(master_seed: u64, count: usize, limits: Limits) -> Vec<WorkloadSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..count).map(|_| random_spec(&mut rng, limits)).collect()
}

/// `count` single-agent specs without reserves, for classic paging.
pub fn random_paging_specs(master_seed: u64, count: usize, limits: Limits) -> Vec<WorkloadSpec> {
    let single = Limits { max_m: 1, ..limits };
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..count)
        .map(|_| {
            let mut spec = random_spec(&mut rng, single);
            spec.pages_per_agent = vec![spec.pages_per_agent.iter().sum()];
            spec.reserves = vec![0];
            spec
        })
        .collect()
}
