//! Runs the bundled evidence-gathering workflow under the mock backend and
//! prints the answer and the shape of the trace.

use std::path::Path;

use transduce::workflow::{cmd_run, cmd_trace_show, cmd_validate, BackendChoice, PolicyOverrides, RunOptions};

fn main() {
    let workflow = Path::new(env!("CARGO_MANIFEST_DIR")).join("demo/workflow.json");
    let (report, ok) = cmd_validate(&workflow);
    print!("{report}");
    assert!(ok);

    let out = std::env::temp_dir().join("transduce-discovery-demo");
    let options = RunOptions {
        backend: BackendChoice::Mock,
        rules: None,
        out_dir: out.clone(),
        trace: None,
        policy: PolicyOverrides::default(),
    };
    let rt = tokio::runtime::Runtime::new().unwrap();
    let summary = rt.block_on(cmd_run(&workflow, &options)).unwrap();
    let answer: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary.output).unwrap()).unwrap();
    println!("{}", serde_json::to_string_pretty(&answer).unwrap());
    print!("{}", cmd_trace_show(&summary.trace, None).unwrap());
}
