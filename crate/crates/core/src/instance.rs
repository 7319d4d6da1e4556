//! Problem instances: agents, reserves, the realized page universe and the
//! trace file format.
//!
//! A trace file is a compact JSON object
//!
//! ```text
//! {"m":2,"k":3,"reserves":[1,0],"initial_cache":["0/a1","0/a2","1/b1"],"requests":["1/b2","0/a1"]}
//! ```
//!
//! Page references are written `agent/page`; the agent part is a 0-based
//! integer and the page part is any string unique within that agent.
//! Internally every page of the realized universe (initial cache plus every
//! requested page) gets a dense [`PageId`], ordered agent-major and by page
//! name inside an agent.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type AgentId = usize;

/// A page identifier as it appears in trace files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PageRef {
    pub agent: AgentId,
    pub page: String,
}

impl PageRef {
    pub fn new(agent: AgentId, page: impl Into<String>) -> Self {
        Self {
            agent,
            page: page.into(),
        }
    }
}

impl fmt::Display for PageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.agent, self.page)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed page reference {0:?} (expected \"agent/page\")")]
pub struct PageRefParseError(String);

impl FromStr for PageRef {
    type Err = PageRefParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (agent, page) = s.split_once('/').ok_or_else(|| PageRefParseError(s.to_string()))?;
        let agent = agent.parse::<AgentId>().map_err(|_| PageRefParseError(s.to_string()))?;
        if page.is_empty() {
            return Err(PageRefParseError(s.to_string()));
        }
        Ok(PageRef::new(agent, page))
    }
}

impl Serialize for PageRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PageRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense index of a page in the realized universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageId(pub u32);

impl PageId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// The on-disk trace format. Field order is the canonical key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFile {
    pub m: usize,
    pub k: usize,
    pub reserves: Vec<usize>,
    pub initial_cache: Vec<PageRef>,
    pub requests: Vec<PageRef>,
}

impl TraceFile {
    /// Canonical serialization: keys in declaration order, no whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("trace serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, InstanceError> {
        serde_json::from_str(s).map_err(|e| InstanceError::Parse(e.to_string()))
    }
}

/// One violated instance invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoAgents,
    ZeroCapacity,
    ReserveCount {
        expected: usize,
        found: usize,
    },
    ReserveSum {
        sum: usize,
        k: usize,
    },
    InitialCacheSize {
        expected: usize,
        found: usize,
    },
    DuplicateInitialPage(PageRef),
    AgentOutOfRange(PageRef),
    ReserveUnmet {
        agent: AgentId,
        reserve: usize,
        present: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoAgents => write!(f, "m ≥ 1 violated"),
            Violation::ZeroCapacity => write!(f, "k ≥ 1 violated"),
            Violation::ReserveCount { expected, found } => {
                write!(f, "reserves length {found} ≠ m = {expected}")
            }
            Violation::ReserveSum { sum, k } => {
                write!(f, "Σ kᵢ < k violated (Σ kᵢ = {sum}, k = {k})")
            }
            Violation::InitialCacheSize { expected, found } => {
                write!(f, "initial cache size ≠ k ({found} pages, k = {expected})")
            }
            Violation::DuplicateInitialPage(p) => {
                write!(f, "initial cache lists page {p} more than once")
            }
            Violation::AgentOutOfRange(p) => write!(f, "page {p} names an agent ≥ m"),
            Violation::ReserveUnmet {
                agent,
                reserve,
                present,
            } => write!(
                f,
                "reserve of agent {agent} unmet initially ({present} pages, reserve {reserve})"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse error: {0}")]
    Parse(String),
    #[error("invalid instance: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("page {0} is not part of the universe")]
    UnknownPage(PageRef),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Checks every instance invariant; an empty list means the trace is valid.
pub fn validate(trace: &TraceFile) -> Vec<Violation> {
    let mut out = Vec::new();
    if trace.m == 0 {
        out.push(Violation::NoAgents);
    }
    if trace.k == 0 {
        out.push(Violation::ZeroCapacity);
    }
    if trace.reserves.len() != trace.m {
        out.push(Violation::ReserveCount {
            expected: trace.m,
            found: trace.reserves.len(),
        });
    }
    let sum: usize = trace.reserves.iter().sum();
    if sum >= trace.k {
        out.push(Violation::ReserveSum { sum, k: trace.k });
    }
    if trace.initial_cache.len() != trace.k {
        out.push(Violation::InitialCacheSize {
            expected: trace.k,
            found: trace.initial_cache.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for p in &trace.initial_cache {
        if !seen.insert(p) {
            out.push(Violation::DuplicateInitialPage(p.clone()));
        }
    }
    let mut reported = BTreeSet::new();
    for p in trace.initial_cache.iter().chain(&trace.requests) {
        if p.agent >= trace.m && reported.insert(p) {
            out.push(Violation::AgentOutOfRange(p.clone()));
        }
    }
    for (agent, &reserve) in trace.reserves.iter().enumerate() {
        let present = seen.iter().filter(|p| p.agent == agent).count();
        if present < reserve {
            out.push(Violation::ReserveUnmet {
                agent,
                reserve,
                present,
            });
        }
    }
    out
}

/// The realized page universe: initial cache ∪ requested pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Universe {
    pages: Vec<PageRef>,
    agent_ranges: Vec<Range<usize>>,
    index: HashMap<PageRef, PageId>,
}

impl Universe {
    pub fn build<'a>(m: usize, refs: impl IntoIterator<Item = &'a PageRef>) -> Self {
        let set: BTreeSet<&PageRef> = refs.into_iter().collect();
        let pages: Vec<PageRef> = set.into_iter().cloned().collect();
        let mut agent_ranges = Vec::with_capacity(m);
        let mut start = 0;
        for agent in 0..m {
            let end = start + pages[start..].iter().take_while(|p| p.agent == agent).count();
            agent_ranges.push(start..end);
            start = end;
        }
        let index = pages
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), PageId(i as u32)))
            .collect();
        Self {
            pages,
            agent_ranges,
            index,
        }
    }

    /// n
    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// nᵢ
    pub fn agent_len(&self, agent: AgentId) -> usize {
        self.agent_ranges[agent].len()
    }

    pub fn agent_pages(&self, agent: AgentId) -> impl Iterator<Item = PageId> + '_ {
        self.agent_ranges[agent].clone().map(|i| PageId(i as u32))
    }

    pub fn pages(&self) -> impl Iterator<Item = PageId> + '_ {
        (0..self.pages.len()).map(|i| PageId(i as u32))
    }

    pub fn owner(&self, page: PageId) -> AgentId {
        self.pages[page.idx()].agent
    }

    pub fn page_ref(&self, page: PageId) -> &PageRef {
        &self.pages[page.idx()]
    }

    pub fn id(&self, page: &PageRef) -> Option<PageId> {
        self.index.get(page).copied()
    }

    pub fn num_agents(&self) -> usize {
        self.agent_ranges.len()
    }
}

/// A validated instance with its universe and dense request sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    trace: TraceFile,
    universe: Universe,
    initial: Vec<PageId>,
    requests: Vec<PageId>,
}

impl Instance {
    pub fn new(trace: TraceFile) -> Result<Self, InstanceError> {
        let violations = validate(&trace);
        if !violations.is_empty() {
            return Err(InstanceError::Invalid(violations));
        }
        let universe = Universe::build(trace.m, trace.initial_cache.iter().chain(&trace.requests));
        let lookup = |p: &PageRef| universe.id(p).expect("universe covers every trace page");
        let initial = trace.initial_cache.iter().map(lookup).collect();
        let requests = trace.requests.iter().map(lookup).collect();
        Ok(Self {
            trace,
            universe,
            initial,
            requests,
        })
    }

    pub fn m(&self) -> usize {
        self.trace.m
    }

    pub fn k(&self) -> usize {
        self.trace.k
    }

    pub fn reserves(&self) -> &[usize] {
        &self.trace.reserves
    }

    pub fn reserve(&self, agent: AgentId) -> usize {
        self.trace.reserves[agent]
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn initial_cache(&self) -> &[PageId] {
        &self.initial
    }

    pub fn requests(&self) -> &[PageId] {
        &self.requests
    }

    pub fn trace(&self) -> &TraceFile {
        &self.trace
    }

    /// Same instance restricted to the first `len` requests. The universe is
    /// recomputed from the shorter request list.
    pub fn truncated(&self, len: usize) -> Instance {
        let mut trace = self.trace.clone();
        trace.requests.truncate(len);
        Instance::new(trace).expect("a prefix of a valid instance is valid")
    }

    /// Same trace with every reserve set to zero.
    pub fn without_reserves(&self) -> Instance {
        let mut trace = self.trace.clone();
        trace.reserves = vec![0; trace.m];
        Instance::new(trace).expect("dropping reserves keeps an instance valid")
    }
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    let text = fs::read_to_string(path)?;
    Instance::new(TraceFile::from_json(&text)?)
}

pub fn save_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    fs::write(path, instance.trace().to_canonical_json())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(list: &[&str]) -> Vec<PageRef> {
        list.iter().map(|s| s.parse().unwrap()).collect()
    }

    fn trace(m: usize, k: usize, reserves: &[usize], init: &[&str], req: &[&str]) -> TraceFile {
        TraceFile {
            m,
            k,
            reserves: reserves.to_vec(),
            initial_cache: refs(init),
            requests: refs(req),
        }
    }

    #[test]
    fn minimal_single_agent_instance() {
        let inst = Instance::new(trace(1, 2, &[0], &["0/a", "0/b"], &["0/c"])).unwrap();
        assert_eq!(inst.universe().len(), 3);
    }

    #[test]
    fn reserve_sum_boundary_is_rejected() {
        let t = trace(2, 2, &[1, 1], &["0/a", "1/b"], &[]);
        let v = validate(&t);
        assert_eq!(v, vec![Violation::ReserveSum { sum: 2, k: 2 }]);
        assert!(v[0].to_string().starts_with("Σ kᵢ < k violated"));
        assert!(Instance::new(t).is_err());
    }

    #[test]
    fn realized_universe_counts() {
        let inst = Instance::new(trace(2, 3, &[1, 0], &["0/a1", "0/a2", "1/b1"], &["1/b2", "0/a1"])).unwrap();
        let u = inst.universe();
        assert_eq!(u.agent_len(0), 2);
        assert_eq!(u.agent_len(1), 2);
        assert_eq!(u.len(), 4);
        // agent-major, name-ordered ids
        let names: Vec<String> = u.pages().map(|p| u.page_ref(p).to_string()).collect();
        assert_eq!(names, ["0/a1", "0/a2", "1/b1", "1/b2"]);
    }

    #[test]
    fn validate_reports_each_invariant() {
        assert!(validate(&trace(1, 2, &[0], &["0/a", "0/b"], &["0/a"])).is_empty());

        let short = validate(&trace(1, 2, &[0], &["0/a"], &[]));
        assert_eq!(short.len(), 1);
        assert!(short[0].to_string().starts_with("initial cache size ≠ k"));

        let unmet = validate(&trace(2, 3, &[2, 0], &["0/a", "1/b", "1/c"], &[]));
        assert_eq!(unmet.len(), 1);
        assert!(unmet[0].to_string().starts_with("reserve of agent 0 unmet initially"));

        let range = validate(&trace(1, 1, &[0], &["0/a"], &["3/x"]));
        assert!(matches!(range[0], Violation::AgentOutOfRange(_)));

        let dup = validate(&trace(1, 2, &[0], &["0/a", "0/a"], &[]));
        assert!(matches!(dup[0], Violation::DuplicateInitialPage(_)));
    }

    #[test]
    fn canonical_json_round_trip() {
        let t = trace(2, 3, &[1, 0], &["0/a1", "0/a2", "1/b1"], &["1/b2", "0/a1"]);
        let s = t.to_canonical_json();
        assert_eq!(
            s,
            r#"{"m":2,"k":3,"reserves":[1,0],"initial_cache":["0/a1","0/a2","1/b1"],"requests":["1/b2","0/a1"]}"#
        );
        let back = TraceFile::from_json(&s).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_canonical_json(), s);
    }

    #[test]
    fn load_and_save_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let inst = Instance::new(trace(1, 2, &[0], &["0/a", "0/b"], &["0/c"])).unwrap();
        save_instance(&inst, &path).unwrap();
        let loaded = load_instance(&path).unwrap();
        assert_eq!(loaded, inst);

        fs::write(&path, "{\"m\":1").unwrap();
        assert!(matches!(load_instance(&path), Err(InstanceError::Parse(_))));
        fs::write(
            &path,
            r#"{"m":2,"k":2,"reserves":[1,1],"initial_cache":["0/a","1/b"],"requests":[]}"#,
        )
        .unwrap();
        let err = load_instance(&path).unwrap_err();
        assert!(err.to_string().contains("Σ kᵢ < k violated"));
    }

    #[test]
    fn malformed_page_refs() {
        assert!("x/a".parse::<PageRef>().is_err());
        assert!("0".parse::<PageRef>().is_err());
        assert!("0/".parse::<PageRef>().is_err());
        assert_eq!("1/a/b".parse::<PageRef>().unwrap(), PageRef::new(1, "a/b"));
    }
}
