//! Running transducible functions over collections.
//!
//! [`map`] applies a function pointwise with bounded concurrency and keeps
//! input order. [`reduce`] aggregates a collection, splitting it into
//! contiguous batches when it is larger than the batch size and combining the
//! partial results in stages. [`map_reduce`] chains the two.
//!
//! Trace ids for a whole call are reserved up front and assigned in
//! pre-order, so the trace is identical however the tasks interleave.

use std::ops::Range;

use futures::future::{join_all, try_join_all, BoxFuture};
use futures::stream::{self, StreamExt};
use serde_json::Value as Json;
use tokio::sync::Semaphore;

use crate::error::{Result, TransductionError};
use crate::provenance::{Explanation, ProvenanceMap, Transduced};
use crate::schema::{RecordType, State};
use crate::trace::{FunctionDescriptor, KernelKind, RecordId, Status, Tracer};
use crate::transduction::{
    close_record, fill_transduced, open_record, states_json, CancelGuard, Placement, TransducibleFunction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailureMode {
    /// The first failure cancels pending work and is returned.
    FailFast,
    /// Failures occupy their index; siblings run to completion.
    #[default]
    Collect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionPolicy {
    pub max_concurrency: usize,
    pub failure_mode: FailureMode,
    pub batch_size: usize,
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        ExecutionPolicy {
            max_concurrency: 8,
            failure_mode: FailureMode::Collect,
            batch_size: 20,
        }
    }
}

impl ExecutionPolicy {
    pub fn new(max_concurrency: usize, failure_mode: FailureMode, batch_size: usize) -> Result<Self> {
        let policy = ExecutionPolicy {
            max_concurrency,
            failure_mode,
            batch_size,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(TransductionError::Config("max_concurrency must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TransductionError::Config(format!(
                "batch_size {} must be >= 2",
                self.batch_size
            )));
        }
        Ok(())
    }

    pub fn with_concurrency(self, max_concurrency: usize) -> Self {
        ExecutionPolicy { max_concurrency, ..self }
    }

    pub fn with_batch_size(self, batch_size: usize) -> Self {
        ExecutionPolicy { batch_size, ..self }
    }

    pub fn with_failure_mode(self, failure_mode: FailureMode) -> Self {
        ExecutionPolicy { failure_mode, ..self }
    }

    pub fn fail_fast(self) -> Self {
        self.with_failure_mode(FailureMode::FailFast)
    }
}

/// Per-element outcomes of [`map`], index-aligned with the input.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub outputs: Vec<Result<Transduced>>,
}

impl MapResult {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn successes(&self) -> impl Iterator<Item = (usize, &Transduced)> {
        self.outputs.iter().enumerate().filter_map(|(i, r)| r.as_ref().ok().map(|t| (i, t)))
    }

    pub fn errors(&self) -> impl Iterator<Item = (usize, &TransductionError)> {
        self.outputs.iter().enumerate().filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e)))
    }

    /// All outputs, or the lowest-index failure.
    pub fn into_outputs(self) -> Result<Vec<Transduced>> {
        self.outputs
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| TransductionError::at(i, e)))
            .collect()
    }

    pub fn states(&self) -> Result<Vec<State>> {
        self.clone().into_outputs().map(|ts| ts.into_iter().map(|t| t.state).collect())
    }
}

fn check_elements(ty: &RecordType, xs: &[State]) -> Result<()> {
    for (i, x) in xs.iter().enumerate() {
        if x.record_type() != ty {
            return Err(TransductionError::at(
                i,
                TransductionError::TypeMismatch {
                    expected: ty.name().to_string(),
                    found: x.record_type().name().to_string(),
                },
            ));
        }
    }
    Ok(())
}

fn envelope_descriptor(source: &RecordType, target: &RecordType, kind: KernelKind) -> FunctionDescriptor {
    FunctionDescriptor {
        source: source.name().to_string(),
        target: target.name().to_string(),
        kind,
        model: None,
        instructions_digest: None,
    }
}

/// Applies `f` to every element, at most `policy.max_concurrency` at a time.
pub async fn map(tracer: &Tracer, f: &TransducibleFunction, xs: &[State], policy: &ExecutionPolicy) -> Result<MapResult> {
    policy.validate()?;
    check_elements(f.source(), xs)?;
    let id = tracer.reserve(map_footprint(f, xs.len()));
    map_at(tracer, Placement::root(id), f, xs, policy).await
}

fn map_footprint(f: &TransducibleFunction, n: usize) -> u64 {
    1 + n as u64 * f.trace_footprint()
}

async fn map_at(
    tracer: &Tracer,
    at: Placement,
    f: &TransducibleFunction,
    xs: &[State],
    policy: &ExecutionPolicy,
) -> Result<MapResult> {
    let descriptor = envelope_descriptor(f.source(), f.target(), KernelKind::Map);
    let guard = CancelGuard::new(tracer, open_record(&at, descriptor, states_json(xs)));
    let footprint = f.trace_footprint();
    let parent = at.id;
    let mut calls = stream::iter(xs.iter().enumerate())
        .map(|(i, x)| {
            let placement = Placement {
                id: parent + 1 + i as u64 * footprint,
                parent: Some(parent),
                stage: Some(i as u32),
                elements: Some(vec![i]),
            };
            async move { (i, f.invoke_at(tracer, placement, x).await) }
        })
        .buffer_unordered(policy.max_concurrency);

    let mut slots: Vec<Option<Result<Transduced>>> = vec![None; xs.len()];
    let mut failure = None;
    while let Some((i, outcome)) = calls.next().await {
        if policy.failure_mode == FailureMode::FailFast {
            if let Err(e) = &outcome {
                failure = Some(TransductionError::at(i, e.clone()));
                break;
            }
        }
        slots[i] = Some(outcome);
    }
    // dropping the stream cancels whatever is still in flight
    drop(calls);

    let record = guard.disarm();
    let outcome = match failure {
        Some(e) => Err(e),
        None => Ok(MapResult {
            outputs: slots.into_iter().map(|s| s.expect("every element ran")).collect(),
        }),
    };
    close_record(tracer, record, &outcome, |record, result: &MapResult| {
        let outputs = result
            .outputs
            .iter()
            .map(|r| r.as_ref().map_or(Json::Null, |t| t.state.to_json_value()))
            .collect();
        record.output = Some(Json::Array(outputs));
        let failed = result.errors().count();
        if failed > 0 {
            record.status = Status::Error;
            record.error = Some(format!("{failed} of {} elements failed", result.len()));
        }
    })?;
    outcome
}

/// An aggregation `Z << Y^N`, with an optional `Z << Z^N` used to combine
/// partial results when the input has to be staged.
#[derive(Debug, Clone)]
pub struct Reducer {
    function: TransducibleFunction,
    combiner: Option<TransducibleFunction>,
}

impl Reducer {
    pub fn new(function: TransducibleFunction) -> Result<Self> {
        if !function.aggregates() {
            return Err(TransductionError::NotAReducer(function.name().to_string()));
        }
        Ok(Reducer {
            function,
            combiner: None,
        })
    }

    pub fn with_combiner(self, combiner: TransducibleFunction) -> Result<Self> {
        if !combiner.aggregates() {
            return Err(TransductionError::NotAReducer(combiner.name().to_string()));
        }
        for ty in [combiner.source(), combiner.target()] {
            if ty != self.function.target() {
                return Err(TransductionError::CompositionTypeMismatch {
                    produced: self.function.target().name().to_string(),
                    expected: ty.name().to_string(),
                });
            }
        }
        Ok(Reducer {
            combiner: Some(combiner),
            ..self
        })
    }

    pub fn function(&self) -> &TransducibleFunction {
        &self.function
    }

    pub fn combiner(&self) -> Option<&TransducibleFunction> {
        self.combiner.as_ref()
    }

    /// Element type.
    pub fn source(&self) -> &RecordType {
        self.function.source()
    }

    pub fn target(&self) -> &RecordType {
        self.function.target()
    }

    /// What combines partials: the combiner, or the function itself when it
    /// maps its target type to itself.
    fn stage_function(&self) -> Result<&TransducibleFunction> {
        match &self.combiner {
            Some(c) => Ok(c),
            None if self.function.source() == self.function.target() => Ok(&self.function),
            None => Err(TransductionError::NotStageable(self.function.name().to_string())),
        }
    }

    fn batch_size(&self, policy: &ExecutionPolicy) -> usize {
        self.function.config().batch_size.unwrap_or(policy.batch_size)
    }
}

impl TryFrom<TransducibleFunction> for Reducer {
    type Error = TransductionError;

    fn try_from(function: TransducibleFunction) -> Result<Self> {
        Reducer::new(function)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReduceOutcome {
    pub result: Transduced,
    /// Element ranges aggregated by each kernel call, one entry per stage;
    /// the first stage holds the leaf batches.
    pub batches: Vec<Vec<Range<usize>>>,
}

/// One kernel call in a reduction tree; a leaf aggregates elements directly.
#[derive(Debug)]
struct PlanNode {
    id: RecordId,
    level: u32,
    range: Range<usize>,
    children: Vec<PlanNode>,
}

#[derive(Debug)]
struct Plan {
    root: PlanNode,
    batches: Vec<Vec<Range<usize>>>,
    calls: u64,
}

/// Contiguous batches of `b`, then groups of `b` partials per stage until one
/// remains. A partial left alone in its group moves up unchanged.
fn plan(n: usize, b: usize) -> Plan {
    let mut level: Vec<PlanNode> = (0..n)
        .step_by(b)
        .map(|start| PlanNode {
            id: 0,
            level: 0,
            range: start..(start + b).min(n),
            children: Vec::new(),
        })
        .collect();
    let mut batches = vec![level.iter().map(|node| node.range.clone()).collect::<Vec<_>>()];
    let mut depth = 0;
    while level.len() > 1 {
        depth += 1;
        let mut next = Vec::new();
        let mut made = Vec::new();
        let mut nodes = level.into_iter().peekable();
        while nodes.peek().is_some() {
            let group: Vec<PlanNode> = nodes.by_ref().take(b).collect();
            if group.len() == 1 {
                next.extend(group);
                continue;
            }
            let range = group[0].range.start..group[group.len() - 1].range.end;
            made.push(range.clone());
            next.push(PlanNode {
                id: 0,
                level: depth,
                range,
                children: group,
            });
        }
        batches.push(made);
        level = next;
    }
    let mut root = level.pop().expect("non-empty input");
    let mut calls = 0;
    assign_ids(&mut root, &mut calls);
    Plan { root, batches, calls }
}

fn assign_ids(node: &mut PlanNode, next: &mut u64) {
    node.id = *next;
    *next += 1;
    for child in &mut node.children {
        assign_ids(child, next);
    }
}

/// Number of kernel calls a reduction of `n` elements with batch size `b` makes.
pub fn reduce_call_count(n: usize, b: usize) -> u64 {
    if n == 0 {
        0
    } else {
        plan(n, b.max(2)).calls
    }
}

struct ReduceRun<'a> {
    tracer: &'a Tracer,
    reducer: &'a Reducer,
    stage_function: Option<&'a TransducibleFunction>,
    xs: &'a [State],
    base: RecordId,
    permits: Semaphore,
    failure_mode: FailureMode,
    staged: bool,
}

impl<'a> ReduceRun<'a> {
    fn placement(&self, node: &PlanNode, parent: RecordId) -> Placement {
        Placement {
            id: self.base + node.id,
            parent: Some(parent),
            stage: Some(node.level),
            elements: Some(node.range.clone().collect()),
        }
    }

    fn eval(&'a self, node: &'a PlanNode, parent: RecordId) -> BoxFuture<'a, Result<Transduced>> {
        Box::pin(async move {
            let at = self.placement(node, parent);
            let id = at.id;
            if node.children.is_empty() {
                let call = {
                    let _permit = self.permits.acquire().await.expect("semaphore open");
                    self.reducer
                        .function
                        .invoke_many_at(self.tracer, at, &self.xs[node.range.clone()])
                        .await?
                };
                return Ok(if self.staged { label(call, &node.range) } else { call });
            }
            let children = node.children.iter().map(|c| self.eval(c, id));
            let parts = match self.failure_mode {
                FailureMode::FailFast => try_join_all(children).await?,
                FailureMode::Collect => join_all(children).await.into_iter().collect::<Result<Vec<_>>>()?,
            };
            let partials: Vec<State> = parts.iter().map(|p| p.state.clone()).collect();
            let combine = self.stage_function.expect("checked before planning");
            let call = {
                let _permit = self.permits.acquire().await.expect("semaphore open");
                combine.invoke_many_at(self.tracer, at, &partials).await?
            };
            Ok(merge_partials(self.reducer.source(), &node.range, call, &parts))
        })
    }
}

fn range_label(range: &Range<usize>) -> String {
    format!("[elements {}..{}]", range.start, range.end)
}

fn label(mut t: Transduced, range: &Range<usize>) -> Transduced {
    t.explanation.explanation = format!("{} {}", range_label(range), t.explanation.explanation);
    t
}

/// Folds a combining call's output with the partials it combined: slot
/// provenance is chained back to element slots, and confidence is the
/// call's times the weakest partial's.
fn merge_partials(source: &RecordType, range: &Range<usize>, call: Transduced, parts: &[Transduced]) -> Transduced {
    let mut provenance = ProvenanceMap::new();
    for part in parts {
        provenance.union_with(&part.provenance.then(&call.provenance));
    }
    let cited: ProvenanceMap = [(
        "_",
        parts
            .iter()
            .flat_map(|p| p.explanation.relevant_source_attributes.iter().cloned())
            .collect::<Vec<_>>(),
    )]
    .into_iter()
    .collect();
    let weakest = parts.iter().map(|p| p.explanation.confidence).fold(1.0, f64::min);
    let mut text: Vec<String> = parts.iter().map(|p| p.explanation.explanation.clone()).collect();
    text.push(format!("{} {}", range_label(range), call.explanation.explanation));
    Transduced {
        state: call.state,
        explanation: Explanation::new(text.join("\n"), cited.evidence(source), call.explanation.confidence * weakest),
        provenance,
    }
}

/// Aggregates `xs` into one state.
pub async fn reduce(tracer: &Tracer, reducer: &Reducer, xs: &[State], policy: &ExecutionPolicy) -> Result<ReduceOutcome> {
    policy.validate()?;
    if xs.is_empty() {
        return Err(TransductionError::EmptyCollection);
    }
    check_elements(reducer.source(), xs)?;
    let b = reducer.batch_size(policy);
    let stage_function = if xs.len() > b { Some(reducer.stage_function()?) } else { None };
    let plan = plan(xs.len(), b);
    let id = tracer.reserve(1 + plan.calls);
    reduce_at(tracer, Placement::root(id), reducer, stage_function, plan, xs, policy).await
}

fn reduce_footprint(reducer: &Reducer, n: usize, policy: &ExecutionPolicy) -> u64 {
    1 + reduce_call_count(n, reducer.batch_size(policy))
}

async fn reduce_at(
    tracer: &Tracer,
    at: Placement,
    reducer: &Reducer,
    stage_function: Option<&TransducibleFunction>,
    plan: Plan,
    xs: &[State],
    policy: &ExecutionPolicy,
) -> Result<ReduceOutcome> {
    let descriptor = envelope_descriptor(reducer.source(), reducer.target(), KernelKind::Reduce);
    let at = Placement {
        elements: Some((0..xs.len()).collect()),
        ..at
    };
    let guard = CancelGuard::new(tracer, open_record(&at, descriptor, states_json(xs)));
    let run = ReduceRun {
        tracer,
        reducer,
        stage_function,
        xs,
        base: at.id + 1,
        permits: Semaphore::new(policy.max_concurrency),
        failure_mode: policy.failure_mode,
        staged: plan.calls > 1,
    };
    let outcome = run
        .eval(&plan.root, at.id)
        .await
        .and_then(|result| result.check(reducer.source(), reducer.target()).map(|_| result));
    let record = guard.disarm();
    close_record(tracer, record, &outcome, fill_transduced)?;
    outcome.map(|result| ReduceOutcome {
        result,
        batches: plan.batches,
    })
}

/// `reduce(r, map(f, xs))`. Any map failure aborts before the reduce starts.
pub async fn map_reduce(
    tracer: &Tracer,
    f: &TransducibleFunction,
    reducer: &Reducer,
    xs: &[State],
    policy: &ExecutionPolicy,
) -> Result<ReduceOutcome> {
    policy.validate()?;
    if f.target() != reducer.source() {
        return Err(TransductionError::CompositionTypeMismatch {
            produced: f.target().name().to_string(),
            expected: reducer.source().name().to_string(),
        });
    }
    if xs.is_empty() {
        return Err(TransductionError::EmptyCollection);
    }
    check_elements(f.source(), xs)?;
    let b = reducer.batch_size(policy);
    let stage_function = if xs.len() > b { Some(reducer.stage_function()?) } else { None };
    let map_ids = map_footprint(f, xs.len());
    let id = tracer.reserve(1 + map_ids + reduce_footprint(reducer, xs.len(), policy));

    let at = Placement {
        elements: Some((0..xs.len()).collect()),
        ..Placement::root(id)
    };
    let descriptor = envelope_descriptor(f.source(), reducer.target(), KernelKind::MapReduce);
    let guard = CancelGuard::new(tracer, open_record(&at, descriptor, states_json(xs)));
    let outcome = async {
        let map_at_ = Placement {
            id: id + 1,
            parent: Some(id),
            stage: Some(0),
            elements: None,
        };
        let mapped = map_at(tracer, map_at_, f, xs, policy).await?.into_outputs()?;
        let ys: Vec<State> = mapped.iter().map(|t| t.state.clone()).collect();
        let reduce_placement = Placement {
            id: id + 1 + map_ids,
            parent: Some(id),
            stage: Some(1),
            elements: None,
        };
        let reduced = reduce_at(tracer, reduce_placement, reducer, stage_function, plan(xs.len(), b), &ys, policy).await?;
        let result = chain_map(f, &mapped, reduced.result);
        result.check(f.source(), reducer.target())?;
        Ok(ReduceOutcome {
            result,
            batches: reduced.batches,
        })
    }
    .await;
    let record = guard.disarm();
    close_record(tracer, record, &outcome, |record, o: &ReduceOutcome| fill_transduced(record, &o.result))?;
    outcome
}

/// Provenance of `reduce ∘ map`: each element's map provenance, chained into
/// the reduce provenance.
fn chain_map(f: &TransducibleFunction, mapped: &[Transduced], reduced: Transduced) -> Transduced {
    let mut per_element = ProvenanceMap::new();
    for t in mapped {
        per_element.union_with(&t.provenance);
    }
    let provenance = per_element.then(&reduced.provenance);
    let cited: ProvenanceMap = [(
        "_",
        reduced.explanation.relevant_source_attributes.iter().cloned().collect::<Vec<_>>(),
    )]
    .into_iter()
    .collect();
    let weakest = mapped.iter().map(|t| t.explanation.confidence).fold(1.0, f64::min);
    let text = format!(
        "[map] `{}` over {} elements\n[reduce] {}",
        f.name(),
        mapped.len(),
        reduced.explanation.explanation
    );
    Transduced {
        state: reduced.state,
        explanation: Explanation::new(text, per_element.then(&cited).evidence(f.source()), weakest * reduced.explanation.confidence),
        provenance,
    }
}

/// `r ∘ map(f)` packaged as a function from collections of `source` to one `target`.
#[derive(Debug, Clone)]
pub struct MapReduce {
    map: TransducibleFunction,
    reducer: Reducer,
}

impl MapReduce {
    pub fn new(map: TransducibleFunction, reducer: Reducer) -> Result<Self> {
        if map.target() != reducer.source() {
            return Err(TransductionError::CompositionTypeMismatch {
                produced: map.target().name().to_string(),
                expected: reducer.source().name().to_string(),
            });
        }
        Ok(MapReduce { map, reducer })
    }

    pub fn source(&self) -> &RecordType {
        self.map.source()
    }

    pub fn target(&self) -> &RecordType {
        self.reducer.target()
    }

    pub async fn invoke(&self, tracer: &Tracer, xs: &[State], policy: &ExecutionPolicy) -> Result<Transduced> {
        map_reduce(tracer, &self.map, &self.reducer, xs, policy).await.map(|o| o.result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{SlotSpec, TypeExpr};
    use crate::transduction::{identity, lift_batch, lift_deterministic};
    use serde_json::json;

    fn number() -> RecordType {
        RecordType::new("Number", vec![SlotSpec::new("n", TypeExpr::integer())]).unwrap()
    }

    fn numbers(range: std::ops::RangeInclusive<i64>) -> Vec<State> {
        range.map(|n| number().validate(&json!({"n": n})).unwrap()).collect()
    }

    fn summer() -> Reducer {
        let ty = number();
        let sum = lift_batch(
            "sum",
            |xs: &[State]| json!({"n": xs.iter().map(|x| x.get("n").unwrap().as_i64().unwrap()).sum::<i64>()}),
            &ty,
            &ty,
            ProvenanceMap::new().with("n", ["n"]),
        )
        .unwrap();
        Reducer::new(sum).unwrap()
    }

    #[test]
    fn plan_shape_for_ten_by_three() {
        let p = plan(10, 3);
        assert_eq!(p.batches[0], vec![0..3, 3..6, 6..9, 9..10]);
        assert_eq!(p.batches[1], vec![0..9]);
        assert_eq!(p.batches[2], vec![0..10]);
        assert_eq!(p.calls, 6);
        assert_eq!(reduce_call_count(3, 3), 1);
        assert_eq!(reduce_call_count(1, 20), 1);
    }

    #[test]
    fn policy_invariants() {
        assert!(ExecutionPolicy::new(1, FailureMode::Collect, 1).is_err());
        assert!(ExecutionPolicy::new(0, FailureMode::Collect, 2).is_err());
        let p = ExecutionPolicy::default();
        assert_eq!((p.max_concurrency, p.batch_size, p.failure_mode), (8, 20, FailureMode::Collect));
    }

    #[tokio::test]
    async fn sum_is_staging_invariant() {
        let r = summer();
        let xs = numbers(1..=10);
        for b in 2..=11 {
            let tracer = Tracer::new();
            let out = reduce(&tracer, &r, &xs, &ExecutionPolicy::default().with_batch_size(b)).await.unwrap();
            assert_eq!(out.result.state.get("n").unwrap().as_i64(), Some(55), "batch size {b}");
            assert_eq!(tracer.log().len() as u64, 1 + reduce_call_count(10, b));
        }
    }

    #[tokio::test]
    async fn trace_tree_for_staged_reduce() {
        let tracer = Tracer::new();
        reduce(&tracer, &summer(), &numbers(1..=10), &ExecutionPolicy::default().with_batch_size(3))
            .await
            .unwrap();
        let log = tracer.log();
        assert_eq!(log.len(), 7);
        assert_eq!(log.roots().count(), 1);
        assert_eq!(log.leaves().count(), 4);
        let ids: Vec<u64> = log.records().iter().map(|r| r.id).collect();
        assert_eq!(ids, (1..=7).collect::<Vec<_>>());
    }

    #[tokio::test]
    async fn empty_and_mistyped_inputs() {
        let r = summer();
        let policy = ExecutionPolicy::default();
        assert_eq!(reduce(&Tracer::new(), &r, &[], &policy).await.unwrap_err(), TransductionError::EmptyCollection);
        let other = RecordType::new("Other", vec![SlotSpec::new("n", TypeExpr::text())]).unwrap();
        let bad = vec![numbers(1..=1).remove(0), other.validate(&json!({"n": "x"})).unwrap()];
        assert!(matches!(
            reduce(&Tracer::new(), &r, &bad, &policy).await,
            Err(TransductionError::AtIndex { index: 1, .. })
        ));
    }

    #[tokio::test]
    async fn identity_map_then_sum() {
        let ty = number();
        let xs = numbers(1..=10);
        let tracer = Tracer::new();
        let out = map_reduce(&tracer, &identity(&ty), &summer(), &xs, &ExecutionPolicy::default().with_batch_size(4))
            .await
            .unwrap();
        assert_eq!(out.result.state.to_json(), r#"{"n":55}"#);
        assert_eq!(out.result.provenance, ProvenanceMap::new().with("n", ["n"]));
        // envelope + map envelope + 10 identity calls + reduce envelope + calls
        assert_eq!(tracer.log().len() as u64, 1 + 1 + 10 + 1 + reduce_call_count(10, 4));
    }

    #[tokio::test]
    async fn map_preserves_order_and_collects_failures() {
        let ty = number();
        let f = lift_deterministic(
            "fail-on-3",
            |s: &State| {
                let n = s.get("n").unwrap().as_i64().unwrap();
                if n == 3 { json!({}) } else { json!({"n": n * 10}) }
            },
            &ty,
            &ty,
            ProvenanceMap::new().with("n", ["n"]),
        )
        .unwrap();
        let xs = numbers(1..=5);
        let out = map(&Tracer::new(), &f, &xs, &ExecutionPolicy::default().with_concurrency(2)).await.unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out.errors().map(|(i, _)| i).collect::<Vec<_>>(), [2]);
        let values: Vec<_> = out.successes().map(|(_, t)| t.state.get("n").unwrap().as_i64().unwrap()).collect();
        assert_eq!(values, [10, 20, 40, 50]);

        let err = map(&Tracer::new(), &f, &xs, &ExecutionPolicy::default().fail_fast()).await.unwrap_err();
        assert!(matches!(err, TransductionError::AtIndex { index: 2, .. }));
        assert!(map(&Tracer::new(), &f, &[], &ExecutionPolicy::default()).await.unwrap().is_empty());
    }

    #[tokio::test]
    async fn staging_needs_a_combiner_when_types_differ() {
        let ty = number();
        let total = RecordType::new("Total", vec![SlotSpec::new("total", TypeExpr::integer())]).unwrap();
        let f = lift_batch(
            "total",
            |xs: &[State]| json!({"total": xs.len()}),
            &ty,
            &total,
            ProvenanceMap::new().with("total", ["n"]),
        )
        .unwrap();
        let r = Reducer::new(f).unwrap();
        let xs = numbers(1..=5);
        let policy = ExecutionPolicy::default().with_batch_size(2);
        assert!(matches!(reduce(&Tracer::new(), &r, &xs, &policy).await, Err(TransductionError::NotStageable(_))));
        assert!(reduce(&Tracer::new(), &r, &xs, &ExecutionPolicy::default()).await.is_ok());
        assert!(matches!(Reducer::new(identity(&ty)), Err(TransductionError::NotAReducer(_))));
    }
}
