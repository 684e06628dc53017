//! Define record types, validate candidates and look at the emitted JSON Schema.

use serde_json::json;
use transduce::{RecordType, SlotSpec, State, TypeExpr};

fn main() {
    let x = RecordType::new(
        "X",
        vec![
            SlotSpec::new("last_name", TypeExpr::text()),
            SlotSpec::new("income", TypeExpr::real()).described("yearly, in dollars"),
            SlotSpec::new("debt", TypeExpr::real()),
            SlotSpec::new("credit_history", TypeExpr::text()),
        ],
    )
    .unwrap();

    let x_state = x
        .validate(&json!({"last_name": "Smith", "income": 60000, "debt": 25000, "credit_history": "late payment in 2021"}))
        .unwrap();
    println!("valid: {}", x_state.to_json());

    // Integers widen to reals; nothing else is coerced.
    for bad in [
        json!({"last_name": "Smith", "income": "high", "debt": 1, "credit_history": ""}),
        json!({"last_name": "Smith", "income": 1, "debt": 1}),
        json!({"last_name": "Smith", "income": 1, "debt": 1, "credit_history": "", "zip": "02139"}),
    ] {
        println!("rejected: {}", x.validate(&bad).unwrap_err());
    }

    let text = x_state.to_json();
    assert_eq!(State::from_json(&text, &x).unwrap(), x_state);

    println!("{}", serde_json::to_string_pretty(&x.json_schema()).unwrap());
}
