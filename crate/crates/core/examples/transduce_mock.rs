//! `Answer << Question` realized by a rule-driven mock backend.

use std::sync::Arc;

use serde_json::json;
use transduce::backend::{KernelRequest, MockRule, RuleMatch};
use transduce::{make_transduction, MockBackend, RecordType, Reply, SlotSpec, TransductionConfig, Tracer, TypeExpr};

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

    // Picks the longest option: a stand-in for a model's judgement.
    let backend = MockBackend::new(vec![MockRule::custom("longest", RuleMatch::types("Question", "Answer"), |req: &KernelRequest<'_>| {
        let q = &req.input.states()[0];
        let options: Vec<String> = q.get("options").unwrap().as_list().unwrap().iter().map(|v| v.as_text().unwrap().to_string()).collect();
        let choice = options.iter().max_by_key(|o| o.len()).cloned().unwrap_or_default();
        json!({
            "value": {"options": options, "choice": choice},
            "explanation": "the most specific option wins",
            "relevant_source_attributes": ["prompt", "options"],
            "confidence": 0.96,
            "provenance": {"options": ["options"], "choice": ["prompt", "options"]}
        })
        .to_string()
    })]);

    let config = TransductionConfig::new().instructions("Choose the best option.").explanation(true);
    let decide = make_transduction(&answer, &question, config, Arc::new(backend)).unwrap();
    let q = question
        .validate(&json!({"prompt": "Which is a prime?", "options": ["four", "nine", "eleven"]}))
        .unwrap();

    let rt = tokio::runtime::Runtime::new().unwrap();
    match rt.block_on(decide.respond(&Tracer::new(), &q)).unwrap() {
        Reply::Explained(state, explanation) => {
            println!("choice: {}", state.get("choice").unwrap().as_text().unwrap());
            println!("{}", serde_json::to_string_pretty(&explanation).unwrap());
        }
        Reply::Value(state) => println!("{}", state.to_json()),
    }
}
