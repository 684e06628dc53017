mod common;

use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;
use transduce::backend::{FieldExpr, MockRule, RuleMatch};
use transduce::ingest::{from_csv, normalize_header};
use transduce::{
    make_transduction, reduce, ExecutionPolicy, MockBackend, RecordType, Reducer, SlotSpec, TransductionConfig,
    Tracer, TypeExpr,
};

fn applicant() -> RecordType {
    RecordType::new(
        "Applicant",
        vec![
            SlotSpec::new("last_name", TypeExpr::text()),
            SlotSpec::new("income", TypeExpr::real()),
            SlotSpec::new("debt", TypeExpr::real()),
            SlotSpec::new("credit_history", TypeExpr::text()),
        ],
    )
    .unwrap()
}

#[test]
fn csv_rows_flow_into_a_staged_reduce() {
    let csv = "Last Name,Income,Debt,Credit History\n\
               Smith,60000,25000,late payment in 2021\n\
               Jones,82000.5,1000,none\n\
               Ng,41000,39000,two defaults\n";
    let rows = from_csv(csv.as_bytes(), &applicant(), None).unwrap();
    assert_eq!(rows.len(), 3);

    let book = RecordType::new(
        "Book",
        vec![SlotSpec::new("applicants", TypeExpr::integer()), SlotSpec::new("total_debt", TypeExpr::real())],
    )
    .unwrap();
    let backend = Arc::new(MockBackend::new(vec![
        MockRule::fields(
            "book",
            RuleMatch::types("Applicant", "Book"),
            [("applicants", FieldExpr::Count), ("total_debt", FieldExpr::Sum("debt".into()))],
        ),
        MockRule::fields(
            "merge-books",
            RuleMatch::types("Book", "Book"),
            [("applicants", FieldExpr::Sum("applicants".into())), ("total_debt", FieldExpr::Sum("total_debt".into()))],
        ),
    ]));
    let f = make_transduction(&book, &applicant(), TransductionConfig::new(), backend.clone()).unwrap();
    let c = make_transduction(&book, &book, TransductionConfig::new(), backend).unwrap();
    let reducer = Reducer::new(f).unwrap().with_combiner(c).unwrap();
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let out = rt
        .block_on(reduce(&Tracer::new(), &reducer, &rows, &ExecutionPolicy::default().with_batch_size(2)))
        .unwrap();
    assert_eq!(out.result.state.to_json_value(), json!({"applicants": 3, "total_debt": 65000.0}));
    assert_eq!(out.result.provenance.get("total_debt").unwrap().iter().collect::<Vec<_>>(), ["debt"]);
}

proptest! {
    /// Any header spelling that normalizes to a slot name binds to it.
    #[test]
    fn decorated_headers_bind(seps in prop::collection::vec(prop::sample::select(vec!["", " ", "_", "-", "."]), 4), upper in any::<bool>()) {
        let spell = |name: &str, sep: &str| {
            let s = name.replace('_', sep);
            if upper { s.to_uppercase() } else { s }
        };
        let header = ["last_name", "income", "debt", "credit_history"]
            .iter()
            .zip(&seps)
            .map(|(n, s)| spell(n, s))
            .collect::<Vec<_>>();
        for (h, n) in header.iter().zip(["last_name", "income", "debt", "credit_history"]) {
            prop_assert_eq!(normalize_header(h), normalize_header(n));
        }
        let csv = format!("{}\nSmith,1,2,ok\n", header.join(","));
        let rows = from_csv(csv.as_bytes(), &applicant(), None).unwrap();
        prop_assert_eq!(rows[0].get("credit_history").unwrap().as_text(), Some("ok"));
    }

    /// Whatever validates as JSON also ingests from the equivalent CSV row.
    #[test]
    fn csv_and_json_ingestion_agree(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let ty = applicant();
        let income: f64 = rng.gen_range(0..100_000) as f64 + 0.5;
        let debt: i64 = rng.gen_range(0..100_000);
        let state = ty.validate(&json!({"last_name": "Smith", "income": income, "debt": debt, "credit_history": "ok"})).unwrap();
        let csv = format!("last_name,income,debt,credit_history\nSmith,{income},{debt},ok\n");
        let rows = from_csv(csv.as_bytes(), &ty, None).unwrap();
        prop_assert_eq!(&rows[0], &state);
    }
}
