mod common;

use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;
use transduce::backend::{KernelRequest, MockRule, Producer, RuleMatch};
use transduce::{
    lift_batch, make_transduction, map, map_reduce, reduce, ExecutionPolicy, FailureMode, MockBackend, ProvenanceMap,
    RecordType, Reducer, SlotSpec, State, Status, TransductionConfig, TransductionError, Tracer, TypeExpr,
};

fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_time().build().unwrap()
}

fn num() -> RecordType {
    RecordType::new("Num", vec![SlotSpec::new("n", TypeExpr::integer())]).unwrap()
}

fn total() -> RecordType {
    RecordType::new("Total", vec![SlotSpec::new("total", TypeExpr::integer())]).unwrap()
}

fn nums(values: &[i64]) -> Vec<State> {
    values.iter().map(|n| num().validate(&json!({"n": n})).unwrap()).collect()
}

/// Deterministic sum with a deterministic combiner; no backend involved.
fn batch_sum() -> Reducer {
    let sum = lift_batch(
        "sum",
        |xs: &[State]| json!({"total": xs.iter().map(|x| x.get("n").unwrap().as_i64().unwrap()).sum::<i64>()}),
        &num(),
        &total(),
        ProvenanceMap::new().with("total", ["n"]),
    )
    .unwrap();
    let combine = lift_batch(
        "sum-partials",
        |xs: &[State]| json!({"total": xs.iter().map(|x| x.get("total").unwrap().as_i64().unwrap()).sum::<i64>()}),
        &total(),
        &total(),
        ProvenanceMap::new().with("total", ["total"]),
    )
    .unwrap();
    Reducer::new(sum).unwrap().with_combiner(combine).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn staging_never_changes_a_sum(values in prop::collection::vec(-1000i64..1000, 1..40), b in 2usize..12) {
        let xs = nums(&values);
        let tracer = Tracer::new();
        let out = rt().block_on(reduce(&tracer, &batch_sum(), &xs, &ExecutionPolicy::default().with_batch_size(b))).unwrap();
        prop_assert_eq!(out.result.state.get("total").unwrap().as_i64(), Some(values.iter().sum::<i64>()));
        // Leaves cover the input exactly once, in order.
        let leaves: Vec<usize> = out.batches[0].iter().flat_map(|r| r.clone()).collect();
        prop_assert_eq!(leaves, (0..values.len()).collect::<Vec<_>>());
        prop_assert!(out.batches[0].iter().all(|r| r.len() <= b));
        prop_assert!(tracer.log().records().iter().all(|r| r.status == Status::Ok));
    }

    #[test]
    fn collect_mode_reports_exactly_the_failing_elements(
        failing in prop::collection::btree_set(0usize..20, 0..6),
        max_concurrency in 1usize..6,
    ) {
        let broken = failing.clone();
        let backend = MockBackend::new(vec![MockRule::custom(
            "flaky",
            RuleMatch::any(),
            move |req: &KernelRequest<'_>| {
                let n = req.input.states()[0].get("n").unwrap().as_i64().unwrap() as usize;
                if broken.contains(&n) {
                    "not json".to_string()
                } else {
                    json!({"value": {"n": n}, "explanation": "copy", "relevant_source_attributes": ["n"], "confidence": 1.0}).to_string()
                }
            },
        )]);
        let f = make_transduction(&num(), &num(), TransductionConfig::new(), Arc::new(backend)).unwrap();
        let xs = nums(&(0..20).collect::<Vec<_>>());
        let tracer = Tracer::new();
        let policy = ExecutionPolicy::default().with_concurrency(max_concurrency);
        let result = rt().block_on(map(&tracer, &f, &xs, &policy)).unwrap();
        let errors: Vec<usize> = result.errors().map(|(i, _)| i).collect();
        prop_assert_eq!(errors, failing.iter().copied().collect::<Vec<_>>());
        for (i, t) in result.successes() {
            prop_assert_eq!(t.state.get("n").unwrap().as_i64(), Some(i as i64));
        }
        let root = tracer.log().roots().next().unwrap().clone();
        prop_assert_eq!(root.status, if failing.is_empty() { Status::Ok } else { Status::Error });
    }
}

#[test]
fn fail_fast_stops_at_the_first_error() {
    let backend = MockBackend::new(vec![MockRule::new("broken", RuleMatch::any(), Producer::Envelope(json!({})))]);
    let f = make_transduction(&num(), &num(), TransductionConfig::new(), Arc::new(backend)).unwrap();
    let xs = nums(&(0..10).collect::<Vec<_>>());
    let tracer = Tracer::new();
    let policy = ExecutionPolicy::default().with_concurrency(1).with_failure_mode(FailureMode::FailFast);
    let err = rt().block_on(map(&tracer, &f, &xs, &policy)).unwrap_err();
    assert!(matches!(err, TransductionError::AtIndex { index: 0, .. }), "{err}");
    // With one call in flight, nothing past the first element ever started.
    let started = tracer.log().records().iter().filter(|r| r.parent.is_some()).count();
    assert_eq!(started, 1);
}

#[test]
fn map_reduce_pipes_map_output_into_the_reducer() {
    let double = make_transduction(
        &num(),
        &num(),
        TransductionConfig::new(),
        Arc::new(MockBackend::new(vec![MockRule::custom("double", RuleMatch::any(), |req: &KernelRequest<'_>| {
            let n = req.input.states()[0].get("n").unwrap().as_i64().unwrap();
            json!({"value": {"n": 2 * n}, "explanation": "double", "relevant_source_attributes": ["n"], "confidence": 0.5})
                .to_string()
        })])),
    )
    .unwrap();
    let xs = nums(&(1..=10).collect::<Vec<_>>());
    let tracer = Tracer::new();
    let out = rt()
        .block_on(map_reduce(&tracer, &double, &batch_sum(), &xs, &ExecutionPolicy::default().with_batch_size(3)))
        .unwrap();
    assert_eq!(out.result.state.get("total").unwrap().as_i64(), Some(110));
    assert_eq!(out.result.provenance.get("total").unwrap().iter().collect::<Vec<_>>(), ["n"]);
    let log = tracer.log();
    assert_eq!(log.roots().count(), 1);
}

#[test]
fn empty_input_is_rejected_by_reduce() {
    let err = rt().block_on(reduce(&Tracer::new(), &batch_sum(), &[], &ExecutionPolicy::default())).unwrap_err();
    assert_eq!(err, TransductionError::EmptyCollection);
}
