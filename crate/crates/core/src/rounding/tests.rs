use super::*;
use crate::engine::run_trace;
use crate::instance::{PageRef, TraceFile};
use crate::ratio::one;

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
fn aligned_prefixes_are_kept() {
    let inst = instance(1, 2, &[0], &["0/a", "0/b"], &["0/c"]);
    let x = vec![one(), frac(1, 2), frac(1, 2)];
    let dv = discretize(&x, &default_order(inst.universe()), inst.universe(), 8).unwrap();
    assert_eq!(dv.counts, vec![8, 4, 4]);
}

#[test]
fn prefix_floor_hand_case() {
    let inst = instance(1, 1, &[0], &["0/a"], &["0/b"]);
    let x = vec![frac(3, 10), frac(7, 10)];
    let dv = discretize(&x, &default_order(inst.universe()), inst.universe(), 4).unwrap();
    assert_eq!(dv.value(PageId(0)), frac(1, 4));
    assert_eq!(dv.value(PageId(1)), frac(3, 4));
}

#[test]
fn integral_vectors_are_fixed() {
    let inst = instance(2, 3, &[1, 1], &["0/a", "1/b", "1/c"], &["0/d"]);
    let x = inst
        .universe()
        .pages()
        .map(|p| {
            if inst.initial_cache().contains(&p) {
                one()
            } else {
                zero()
            }
        })
        .collect::<Vec<_>>();
    let dv = discretize(&x, &default_order(inst.universe()), inst.universe(), 27).unwrap();
    for p in inst.universe().pages() {
        assert_eq!(dv.value(p), x[p.idx()]);
    }
    assert!(check_discretization(&x, &dv, &inst).is_empty());
}

#[test]
fn interleaved_order_is_rejected() {
    let inst = instance(2, 2, &[0, 0], &["0/a", "1/b"], &["0/c"]);
    let u = inst.universe();
    let order = vec![id(&inst, "0/a"), id(&inst, "1/b"), id(&inst, "0/c")];
    let x = vec![one(), zero(), one()];
    assert!(matches!(
        discretize(&x, &order, u, 8),
        Err(RoundingError::OrderNotContiguous { position: 2 })
    ));
}

#[test]
fn matching_cases() {
    let inst = instance(2, 3, &[1, 0], &["0/a1", "0/a2", "1/b1"], &["0/a3", "1/b2"]);
    let u = inst.universe();
    let dv = |c: [u64; 5]| DiscreteVector {
        n: 4,
        counts: c.to_vec(),
    };
    // order: a1 a2 a3 b1 b2
    let base = dv([4, 4, 0, 4, 0]);
    assert!(diff_matching(&base, &base, u).unwrap().is_empty());

    let swap = dv([3, 4, 1, 4, 0]);
    assert_eq!(
        diff_matching(&base, &swap, u).unwrap(),
        vec![(id(&inst, "0/a3"), id(&inst, "0/a1"))]
    );

    let cross = dv([4, 4, 2, 2, 0]);
    let pairs = diff_matching(&base, &cross, u).unwrap();
    assert_eq!(pairs, vec![(id(&inst, "0/a3"), id(&inst, "1/b1")); 2]);
    assert!(prefixes_meet_reserves(&base, &pairs, &inst));

    let mixed = dv([3, 4, 2, 3, 0]);
    let pairs = diff_matching(&base, &mixed, u).unwrap();
    assert_eq!(pairs[0], (id(&inst, "0/a3"), id(&inst, "0/a1")));
    assert_eq!(pairs[1], (id(&inst, "0/a3"), id(&inst, "1/b1")));

    assert!(matches!(
        diff_matching(&base, &dv([4, 4, 1, 4, 0]), u),
        Err(RoundingError::Unbalanced { .. })
    ));
}

#[test]
fn swap_costs_one_removal() {
    let inst = instance(1, 2, &[0], &["0/a", "0/b"], &["0/c"]);
    let mut e = Ensemble::new(&inst, 2);
    let mut per = vec![0; 2];
    let r = e
        .apply_pair(id(&inst, "0/c"), id(&inst, "0/a"), &inst, &mut per)
        .unwrap();
    assert_eq!(r, 1);
    assert_eq!(per, vec![1, 0]);
}

#[test]
fn two_state_move() {
    // p = c is in every state holding q = a, so c must enter S = {b, d}
    // while a leaves T and some r ∈ S \ T moves over.
    let inst = instance(1, 2, &[0], &["0/a", "0/c"], &["0/b", "0/d"]);
    let (a, b, c, d) = (id(&inst, "0/a"), id(&inst, "0/b"), id(&inst, "0/c"), id(&inst, "0/d"));
    let mut e = Ensemble {
        states: vec![[a, c].into(), [b, d].into(), [b, c].into()],
    };
    let mut per = vec![0; 3];
    let r = e.apply_pair(c, a, &inst, &mut per).unwrap();
    assert_eq!(r, 2);
    assert_eq!(e.multiplicity(a), 0);
    assert_eq!(e.multiplicity(c), 3);
    assert!(e.states.iter().all(|s| s.len() == 2));
    assert_eq!(per.iter().sum::<u64>(), 2);
}

#[test]
fn reserve_repair_restores_validity() {
    // Agent 0 reserves 1. State 0 = {a1, b1} swaps a1 out for b2, leaving it
    // without an agent-0 page; state 1 = {a1, a2} donates.
    let inst = instance(2, 2, &[1, 0], &["0/a1", "1/b1"], &["0/a2", "1/b2"]);
    let (a1, a2, b1, b2) = (
        id(&inst, "0/a1"),
        id(&inst, "0/a2"),
        id(&inst, "1/b1"),
        id(&inst, "1/b2"),
    );
    let mut e = Ensemble {
        states: vec![[a1, b1].into(), [a1, a2].into()],
    };
    let mut per = vec![0; 2];
    let r = e.apply_pair(b2, a1, &inst, &mut per).unwrap();
    assert_eq!(r, 3);
    let target = DiscreteVector {
        n: 2,
        counts: vec![1, 1, 1, 1],
    };
    assert!(e.check(&target, &inst).is_empty(), "{:?}", e.states);
}

#[test]
fn zero_miss_trace_costs_nothing() {
    let inst = instance(1, 2, &[0], &["0/a", "0/b"], &["0/a", "0/b"]);
    let run = run_randomized(&inst, 3, None).unwrap();
    assert_eq!(run.expected_cost, zero());
    assert_eq!(run.integral_cost, 0);
    assert!(run.is_clean());
}

#[test]
fn e1_within_factor_twelve() {
    let inst = instance(2, 3, &[1, 0], &["0/a1", "0/a2", "1/b1"], &["1/b2", "0/a1"]);
    let (_, cost) = run_trace(&inst).unwrap();
    let run = run_randomized(&inst, 11, None).unwrap();
    assert!(run.is_clean(), "{:?}", run.failures);
    assert_eq!(run.fractional_cost, cost);
    assert!(run.expected_cost >= run.fractional_cost);
    assert!(run.expected_cost <= &cost * int(12));
    assert_eq!(run.mean_integral_cost(), run.expected_cost);
}

#[test]
fn follow_index_is_seeded() {
    let inst = instance(
        2,
        3,
        &[1, 0],
        &["0/a1", "1/b1", "1/b2"],
        &["1/b3", "1/b4", "1/b5", "0/a2", "0/a1"],
    );
    let a = run_randomized(&inst, 42, None).unwrap();
    let b = run_randomized(&inst, 42, None).unwrap();
    assert_eq!(a, b);
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("t,removals,discretized_cost,fractional_cost,followed_state_miss\n"));
}

#[test]
fn small_n_downgrades_bounds_to_warnings() {
    let inst = instance(
        2,
        3,
        &[1, 0],
        &["0/a1", "1/b1", "1/b2"],
        &["1/b3", "1/b4", "1/b5", "0/a2", "0/a1"],
    );
    let run = run_randomized(&inst, 1, Some(3)).unwrap();
    assert!(run
        .failures
        .iter()
        .all(|f| !f.what.contains("exceeds 2×") && !f.what.contains("12×")));
}
