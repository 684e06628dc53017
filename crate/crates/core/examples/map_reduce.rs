//! Order-preserving map with bounded concurrency, then a staged tree reduce.

use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use transduce::backend::{FieldExpr, MockRule, RuleMatch};
use transduce::mapreduce::reduce_call_count;
use transduce::{
    make_transduction, map, reduce, ExecutionPolicy, MockBackend, RecordType, Reducer, SlotSpec, State,
    TransductionConfig, Tracer, TypeExpr,
};

fn main() {
    let num = RecordType::new("Num", vec![SlotSpec::new("n", TypeExpr::integer())]).unwrap();
    let total = RecordType::new("Total", vec![SlotSpec::new("total", TypeExpr::integer())]).unwrap();

    // Later elements answer sooner; the map still returns them in order.
    let backend = Arc::new(
        MockBackend::new(vec![
            MockRule::copy_slots("echo", RuleMatch::types("Num", "Num")),
            MockRule::fields("sum", RuleMatch::types("Num", "Total"), [("total", FieldExpr::Sum("n".into()))]),
            MockRule::fields("sum-partials", RuleMatch::types("Total", "Total"), [("total", FieldExpr::Sum("total".into()))]),
        ])
        .with_latency(|req| {
            let n = req.input.states()[0].get("n").and_then(|v| v.as_i64()).unwrap_or(0);
            Duration::from_millis(20u64.saturating_sub(2 * n as u64))
        }),
    );
    let echo = make_transduction(&num, &num, TransductionConfig::new(), backend.clone()).unwrap();
    let xs: Vec<State> = (1..=10).map(|n| num.validate(&json!({"n": n})).unwrap()).collect();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let tracer = Tracer::new();
    let policy = ExecutionPolicy::default().with_concurrency(4).with_batch_size(3);
    let mapped = rt.block_on(map(&tracer, &echo, &xs, &policy)).unwrap().states().unwrap();
    let order: Vec<i64> = mapped.iter().map(|s| s.get("n").unwrap().as_i64().unwrap()).collect();
    println!("map order: {order:?}");

    let sum = make_transduction(&total, &num, TransductionConfig::new(), backend.clone()).unwrap();
    let combine = make_transduction(&total, &total, TransductionConfig::new(), backend).unwrap();
    let reducer = Reducer::new(sum).unwrap().with_combiner(combine).unwrap();
    for b in [2, 3, 5, 10] {
        let out = rt.block_on(reduce(&tracer, &reducer, &xs, &policy.clone().with_batch_size(b))).unwrap();
        println!(
            "batch_size {b:>2}: total {} over levels {:?} ({} calls)",
            out.result.state.get("total").unwrap().as_i64().unwrap(),
            out.batches,
            reduce_call_count(xs.len(), b)
        );
    }
}
