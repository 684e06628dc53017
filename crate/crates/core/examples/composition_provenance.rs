//! Provenance composes across stages: each output slot of a chain traces back
//! to the input slots it ultimately depends on.

use serde_json::json;
use transduce::{chain, identity, lift_deterministic, ProvenanceMap, RecordType, SlotSpec, State, Tracer, TypeExpr};

fn main() {
    let x = RecordType::new(
        "X",
        vec![
            SlotSpec::new("last_name", TypeExpr::text()),
            SlotSpec::new("income", TypeExpr::real()),
            SlotSpec::new("debt", TypeExpr::real()),
            SlotSpec::new("credit_history", TypeExpr::text()),
        ],
    )
    .unwrap();
    let ratio = RecordType::new(
        "Ratio",
        vec![SlotSpec::new("dti", TypeExpr::real()), SlotSpec::new("late", TypeExpr::boolean())],
    )
    .unwrap();
    let risk = RecordType::new("Risk", vec![SlotSpec::new("risk_score", TypeExpr::integer())]).unwrap();

    let ratios = lift_deterministic(
        "ratios",
        |s: &State| {
            let dti = s.get("debt").unwrap().as_f64().unwrap() / s.get("income").unwrap().as_f64().unwrap();
            json!({"dti": dti, "late": s.get("credit_history").unwrap().as_text().unwrap().contains("late")})
        },
        &x,
        &ratio,
        ProvenanceMap::new().with("dti", ["income", "debt"]).with("late", ["credit_history"]),
    )
    .unwrap();
    let score = lift_deterministic(
        "score",
        |s: &State| {
            let base = (s.get("dti").unwrap().as_f64().unwrap() * 100.0).round() as i64;
            json!({"risk_score": base + if s.get("late").unwrap().as_bool().unwrap() { 20 } else { 0 }})
        },
        &ratio,
        &risk,
        ProvenanceMap::new().with("risk_score", ["dti", "late"]),
    )
    .unwrap();

    let pipeline = chain(&[ratios, identity(&ratio), score]).unwrap();
    let input = x
        .validate(&json!({"last_name": "Smith", "income": 60000, "debt": 25000, "credit_history": "late payment in 2021"}))
        .unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let out = rt.block_on(pipeline.invoke(&Tracer::new(), &input)).unwrap();
    println!("{} -> {}", pipeline.name(), out.state.to_json());
    for (slot, inputs) in out.provenance.iter() {
        println!("  {slot} <- {}", inputs.iter().cloned().collect::<Vec<_>>().join(", "));
    }
    println!("confidence {}: {}", out.explanation.confidence, out.explanation.explanation);
}
