//! Every invocation leaves a trace record; lineage walks a record's ancestors.

use serde_json::json;
use transduce::{chain, lift_deterministic, ProvenanceMap, RecordType, SlotSpec, State, TraceLog, Tracer, TypeExpr};

fn main() {
    let raw = RecordType::new(
        "Raw",
        vec![SlotSpec::new("first", TypeExpr::text()), SlotSpec::new("last", TypeExpr::text()), SlotSpec::new("age", TypeExpr::integer())],
    )
    .unwrap();
    let named = RecordType::new("Named", vec![SlotSpec::new("full_name", TypeExpr::text()), SlotSpec::new("adult", TypeExpr::boolean())]).unwrap();
    let card = RecordType::new("Card", vec![SlotSpec::new("label", TypeExpr::text())]).unwrap();

    let join = lift_deterministic(
        "join",
        |s: &State| {
            json!({
                "full_name": format!("{} {}", s.get("first").unwrap().as_text().unwrap(), s.get("last").unwrap().as_text().unwrap()),
                "adult": s.get("age").unwrap().as_i64().unwrap() >= 18,
            })
        },
        &raw,
        &named,
        ProvenanceMap::new().with("full_name", ["first", "last"]).with("adult", ["age"]),
    )
    .unwrap();
    let label = lift_deterministic(
        "label",
        |s: &State| json!({"label": s.get("full_name").unwrap().as_text().unwrap().to_uppercase()}),
        &named,
        &card,
        ProvenanceMap::new().with("label", ["full_name"]),
    )
    .unwrap();

    let tracer = Tracer::new();
    let x = raw.validate(&json!({"first": "Ada", "last": "Lovelace", "age": 36})).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(chain(&[join, label]).unwrap().invoke(&tracer, &x)).unwrap();

    let jsonl = tracer.log().to_jsonl();
    let log = TraceLog::from_jsonl(jsonl.as_bytes()).unwrap();
    for r in log.records() {
        println!("#{} parent={:?} stage={:?} {:?} {} << {}", r.id, r.parent, r.stage, r.function.kind, r.function.target, r.function.source);
    }
    let last = log.records().iter().find(|r| r.stage == Some(1)).unwrap();
    let lineage = log.lineage(last.id).unwrap();
    println!("lineage of #{}: chain {:?}", last.id, lineage.chain);
    for (slot, inputs) in lineage.closure.iter() {
        println!("  {slot} <- {:?}", inputs);
    }
}
