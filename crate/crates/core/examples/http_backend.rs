//! The HTTP backend against an OpenAI-compatible endpoint.
//!
//! With `OPENAI_API_KEY` set this sends one real request; otherwise it swaps
//! in a scripted transport whose first reply is invalid, to show the retry.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde_json::json;
use transduce::backend::{ChatRequest, Transport};
use transduce::{make_transduction, BackendConfig, HttpBackend, RecordType, SlotSpec, TransductionConfig, Tracer, TypeExpr};

struct Scripted(AtomicU32);

#[async_trait]
impl Transport for Scripted {
    async fn send(&self, request: &ChatRequest) -> transduce::Result<String> {
        let attempt = self.0.fetch_add(1, Ordering::SeqCst);
        println!("attempt {attempt}: {} messages, schema `{}`", request.messages.len(), request.schema_name);
        if attempt == 0 {
            return Ok(r#"{"value": {"sentiment": "great"}}"#.into());
        }
        Ok(json!({
            "value": {"sentiment": "positive"},
            "explanation": "praises the product",
            "relevant_source_attributes": ["review"],
            "confidence": 0.9
        })
        .to_string())
    }
}

fn main() {
    let review = RecordType::new("Review", vec![SlotSpec::new("review", TypeExpr::text())]).unwrap();
    let sentiment = RecordType::new(
        "Sentiment",
        vec![SlotSpec::new("sentiment", TypeExpr::text()).one_of(["negative", "neutral", "positive"])],
    )
    .unwrap();

    let config = BackendConfig::default();
    let backend = match HttpBackend::from_config(config.clone()) {
        Ok(live) => live,
        Err(e) => {
            println!("{e}; using a scripted transport");
            HttpBackend::with_transport(config, Arc::new(Scripted(AtomicU32::new(0)))).unwrap()
        }
    };
    let f = make_transduction(&sentiment, &review, TransductionConfig::new().max_retries(2), Arc::new(backend)).unwrap();
    let x = review.validate(&json!({"review": "Works perfectly, would buy again."})).unwrap();

    let tracer = Tracer::new();
    let rt = tokio::runtime::Runtime::new().unwrap();
    match rt.block_on(f.invoke(&tracer, &x)) {
        Ok(out) => println!("{} (retries: {})", out.state.to_json(), tracer.log().records()[0].retry_count),
        Err(e) => println!("failed: {e}"),
    }
}
