use proptest::prelude::*;

use reserve_caching::accounting::{audit, PotentialRecorder};
use reserve_caching::dual::certify;
use reserve_caching::engine::{run_trace, run_trace_observed, InvariantChecker};
use reserve_caching::instance::{Instance, PageRef, TraceFile};
use reserve_caching::opt::brute_opt;
use reserve_caching::paging::{fm_run, rm_exact_marginals, FmState};
use reserve_caching::ratio::{frac, int, zero, Rational};
use reserve_caching::rounding::{default_order, discretize, run_randomized};
use reserve_caching::suite::PAGING_TINY;
use reserve_caching::workload::{generate, random_paging_specs, random_specs, Limits};

fn one_spec_instance(seed: u64, limits: Limits) -> Instance {
    generate(&random_specs(seed, 1, limits)[0]).unwrap()
}

/// A universe with the given page counts per agent and an arbitrary x.
fn universe_and_x(d: i64) -> impl Strategy<Value = (Instance, Vec<Rational>)> {
    prop::collection::vec(1usize..4, 1..4)
        .prop_flat_map(move |sizes| {
            let n: usize = sizes.iter().sum();
            (Just(sizes), prop::collection::vec(0..=d, n))
        })
        .prop_map(move |(sizes, c)| {
            let mut pages = Vec::new();
            for (a, &s) in sizes.iter().enumerate() {
                for j in 0..s {
                    pages.push(PageRef::new(a, format!("p{j}")));
                }
            }
            let inst = Instance::new(TraceFile {
                m: sizes.len(),
                k: 1,
                reserves: vec![0; sizes.len()],
                initial_cache: vec![pages[0].clone()],
                requests: pages[1..].to_vec(),
            })
            .unwrap();
            let x = c.iter().map(|&v| frac(v, d)).collect();
            (inst, x)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn discretization_guarantees((inst, x) in universe_and_x(7), n in 1u64..30) {
        let u = inst.universe();
        let dv = discretize(&x, &default_order(u), u, n).unwrap();
        let inv = frac(1, n as i64);
        for p in u.pages() {
            let diff = dv.value(p) - &x[p.idx()];
            prop_assert!(diff < inv && -diff < inv);
            if x[p.idx()] == zero() || x[p.idx()] == int(1) {
                prop_assert_eq!(dv.value(p), x[p.idx()].clone());
            }
        }
        let total: Rational = x.iter().fold(zero(), |a, b| a + b);
        prop_assert_eq!(frac(dv.total() as i64, n as i64), (total * int(n as i64)).floor() / int(n as i64));
        for a in 0..inst.m() {
            let sx: Rational = u.agent_pages(a).fold(zero(), |acc, p| acc + &x[p.idx()]);
            let st = frac(dv.agent_total(u, a) as i64, n as i64);
            prop_assert!(st >= sx.floor());
            let d = st - sx;
            prop_assert!(d < inv && -d < inv);
        }
    }

    #[test]
    fn generated_instances_are_valid_and_deterministic(seed in any::<u64>()) {
        let spec = &random_specs(seed, 1, Limits::STANDARD)[0];
        let a = generate(spec).unwrap();
        let b = generate(spec).unwrap();
        prop_assert_eq!(a.trace().to_canonical_json(), b.trace().to_canonical_json());
        prop_assert!(a.requests().len() == spec.t);
    }

    #[test]
    fn engine_checks_hold(seed in any::<u64>()) {
        let inst = one_spec_instance(seed, Limits::STANDARD);
        let mut obs = (InvariantChecker::new(), PotentialRecorder::new());
        let (log, cost) = run_trace_observed(&inst, &mut obs).unwrap();
        prop_assert!(obs.0.is_clean(), "{:?}", obs.0.violations);
        let report = audit(&log, &obs.1, inst.k(), inst.m());
        prop_assert!(report.step_violations.is_empty() && report.phase_drop_violations.is_empty());
        prop_assert!(report.cost_bound.holds);
        prop_assert_eq!(cost, log.total_cost());
    }

    #[test]
    fn certificate_is_sound_where_it_is_checkable(seed in any::<u64>()) {
        let inst = one_spec_instance(seed, Limits::TINY);
        let (log, _) = run_trace(&inst).unwrap();
        let cert = certify(&inst, &log);
        prop_assert!(cert.checks.nonnegative && cert.checks.monotone && cert.checks.objective_consistent);
        prop_assert!(cert.checks.stage_deltas_match && cert.checks.sums_are_one);
        let opt = brute_opt(&inst).unwrap().opt_cost;
        prop_assert!(cert.lp_lower_bound <= int(opt as i64));
    }

    #[test]
    fn rounding_keeps_every_check(seed in any::<u64>(), follow in any::<u64>()) {
        let inst = one_spec_instance(seed, Limits { max_k: 4, ..Limits::STANDARD });
        let run = run_randomized(&inst, follow, None).unwrap();
        prop_assert!(run.is_clean(), "{:?}", &run.failures[..run.failures.len().min(3)]);
        prop_assert_eq!(run.mean_integral_cost(), run.expected_cost.clone());
        prop_assert!(run.expected_cost <= &run.fractional_cost * int(12));
        let again = run_randomized(&inst, follow, None).unwrap();
        prop_assert_eq!(run, again);
    }

    #[test]
    fn randomized_marking_realizes_fractional_marking(seed in any::<u64>()) {
        let inst = generate(&random_paging_specs(seed, 1, PAGING_TINY)[0]).unwrap();
        let marginals = rm_exact_marginals(&inst).unwrap();
        let mut fm = FmState::new(&inst).unwrap();
        for (t, &p) in inst.requests().iter().enumerate() {
            fm.fm_step(p).unwrap();
            prop_assert_eq!(marginals[t].as_slice(), fm.y_values());
        }
        let (log, _) = run_trace(&inst).unwrap();
        let fm = fm_run(&inst).unwrap();
        prop_assert!(log.steps.iter().map(|s| &s.fetch_cost).eq(fm.steps.iter().map(|s| &s.cost)));
        prop_assert!(fm.sum_ell() as u64 <= 2 * brute_opt(&inst).unwrap().opt_cost);
    }
}
