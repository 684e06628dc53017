//! Merge (`&`), projection and composition (`@`) on types and states.

use serde_json::json;
use transduce::{merge_types, project_type, RecordType, SlotSpec, TypeExpr};

fn main() {
    let question = RecordType::new(
        "Question",
        vec![
            SlotSpec::new("prompt", TypeExpr::text()),
            SlotSpec::new("options", TypeExpr::list(TypeExpr::text())),
        ],
    )
    .unwrap();
    let answer = RecordType::new(
        "Answer",
        vec![
            SlotSpec::new("options", TypeExpr::list(TypeExpr::text())),
            SlotSpec::new("choice", TypeExpr::text()),
        ],
    )
    .unwrap();

    let merged = merge_types(&answer, &question).unwrap();
    println!("{} = {:?}", merged.name(), merged.slot_names().collect::<Vec<_>>());

    let composed = answer.at(&question);
    println!("{} = {:?}", composed.name(), composed.slot_names().collect::<Vec<_>>());

    let q = question
        .validate(&json!({"prompt": "Pick a color", "options": ["red", "blue"]}))
        .unwrap();
    let a = answer.validate(&json!({"options": ["red", "blue", "green"], "choice": "blue"})).unwrap();
    // The left operand wins where it has a value.
    println!("a & q = {}", a.merge(&q).unwrap().to_json());
    println!("a @ q = {}", a.at(&q).to_json());

    let projected = project_type(&merged, &["prompt", "choice"]).unwrap();
    println!("{} = {:?}", projected.name(), projected.slot_names().collect::<Vec<_>>());
    println!("{}", a.merge(&q).unwrap().project(&["choice"]).unwrap().to_json());
}
