//! Typed, explained transductions between record types.
//!
//! Record types and states live in [`schema`], the merge/projection/composition
//! operators in [`algebra`]. A [`TransducibleFunction`] maps states of one
//! record type to another and returns, with every output, an
//! [`Explanation`] and a slot-level [`ProvenanceMap`]. Functions are realized
//! by a [`backend`] (an OpenAI-compatible endpoint or the rule-driven
//! [`MockBackend`]) or by lifted deterministic code, and run over collections
//! with [`mapreduce`]. Every call is recorded by a [`Tracer`].
//!
//! ```
//! use transduce::{identity, RecordType, SlotSpec, Tracer, TypeExpr};
//!
//! # tokio_test();
//! # fn tokio_test() {
//! let rt = tokio::runtime::Runtime::new().unwrap();
//! let ty = RecordType::new("Note", vec![SlotSpec::new("text", TypeExpr::text())]).unwrap();
//! let note = ty.validate(&serde_json::json!({"text": "hi"})).unwrap();
//! let out = rt.block_on(identity(&ty).invoke(&Tracer::new(), &note)).unwrap();
//! assert_eq!(out.state, note);
//! # }
//! ```

pub mod algebra;
pub mod backend;
pub mod error;
pub mod ingest;
pub mod mapreduce;
pub mod provenance;
pub mod schema;
pub mod trace;
pub mod transduction;
pub mod workflow;

pub use algebra::{compose_states, compose_types, merge_states, merge_types, project_state, project_type, AlgebraError};
pub use backend::{Backend, BackendConfig, HttpBackend, MockBackend};
pub use error::{Result, TransductionError};
pub use mapreduce::{map, map_reduce, reduce, ExecutionPolicy, FailureMode, MapReduce, MapResult, ReduceOutcome, Reducer};
pub use provenance::{Explanation, ProvenanceMap, Transduced};
pub use schema::{BasicKind, RecordType, SchemaError, SlotSpec, State, TypeExpr, TypeRegistry, Value};
pub use trace::{KernelKind, Status, TraceLog, TraceRecord, Tracer};
pub use transduction::{
    chain, compose, identity, lift_batch, lift_deterministic, make_transduction, Reply, TransducibleFunction,
    TransductionConfig,
};
