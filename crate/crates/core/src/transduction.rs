//! Transducible functions: typed, explained, provenance-carrying
//! transformations between record types.
//!
//! A [`TransducibleFunction`] is immutable and cheap to clone. Invoking it
//! never mutates it, so one value can serve any number of concurrent calls.
//!
//! Identity stages are neutral under composition. An identity reports every
//! source slot as evidence for every output slot, but when it appears inside a
//! composition it neither widens the chained provenance nor adds an
//! explanation stage, so `f ∘ id` and `id ∘ f` report exactly what `f` does.

use std::fmt;
use std::sync::Arc;

use serde_json::Value as Json;

use crate::backend::{Backend, KernelInput, KernelRequest};
use crate::error::{Result, TransductionError};
use crate::provenance::{Explanation, ProvenanceMap, Transduced};
use crate::schema::{RecordType, State};
use crate::trace::{digest, now_us, FunctionDescriptor, KernelKind, RecordId, Status, TraceRecord, Tracer};

/// Per-function parameters; the equivalent of refining `Y << X` with
/// instructions, model and retry settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TransductionConfig {
    pub instructions: String,
    /// Backend default when `None`.
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub explanation_requested: bool,
    pub max_retries: Option<u32>,
    /// Overrides the execution policy's batch size when reducing.
    pub batch_size: Option<usize>,
    /// Tool invocation is not supported; any entry is rejected.
    pub tools: Vec<String>,
}

impl Default for TransductionConfig {
    fn default() -> Self {
        TransductionConfig {
            instructions: String::new(),
            model: None,
            temperature: None,
            explanation_requested: false,
            max_retries: None,
            batch_size: None,
            tools: Vec::new(),
        }
    }
}

impl TransductionConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn instructions(mut self, text: impl Into<String>) -> Self {
        self.instructions = text.into();
        self
    }

    pub fn model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn explanation(mut self, requested: bool) -> Self {
        self.explanation_requested = requested;
        self
    }

    pub fn max_retries(mut self, n: u32) -> Self {
        self.max_retries = Some(n);
        self
    }

    pub fn batch_size(mut self, b: usize) -> Self {
        self.batch_size = Some(b);
        self
    }

    pub fn tools<I: IntoIterator<Item = S>, S: Into<String>>(mut self, tools: I) -> Self {
        self.tools = tools.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tools.is_empty() {
            return Err(TransductionError::UnsupportedFeature(format!(
                "tools ({})",
                self.tools.join(", ")
            )));
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() || t < 0.0 {
                return Err(TransductionError::Config(format!("temperature {t} must be >= 0")));
            }
        }
        if let Some(b) = self.batch_size {
            if b < 2 {
                return Err(TransductionError::Config(format!("batch_size {b} must be >= 2")));
            }
        }
        Ok(())
    }
}

pub type Procedure = Arc<dyn Fn(&State) -> Json + Send + Sync>;
pub type BatchProcedure = Arc<dyn Fn(&[State]) -> Json + Send + Sync>;

#[derive(Clone)]
pub(crate) enum Kernel {
    Backend(Arc<dyn Backend>),
    Deterministic { procedure: Procedure, provenance: ProvenanceMap },
    Batch { procedure: BatchProcedure, provenance: ProvenanceMap },
    Identity,
    Composed(Vec<TransducibleFunction>),
}

struct Inner {
    name: String,
    source: RecordType,
    target: RecordType,
    config: TransductionConfig,
    kernel: Kernel,
}

/// A typed transformation `target << source`.
#[derive(Clone)]
pub struct TransducibleFunction {
    inner: Arc<Inner>,
}

impl fmt::Debug for TransducibleFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransducibleFunction")
            .field("name", &self.inner.name)
            .field("source", &self.inner.source.name())
            .field("target", &self.inner.target.name())
            .field("kind", &self.kind())
            .finish()
    }
}

/// Caller-facing result of [`TransducibleFunction::respond`].
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Value(State),
    Explained(State, Explanation),
}

impl Reply {
    pub fn state(&self) -> &State {
        match self {
            Reply::Value(s) | Reply::Explained(s, _) => s,
        }
    }
}

/// Where an invocation sits in the trace tree.
#[derive(Debug, Clone)]
pub(crate) struct Placement {
    pub id: RecordId,
    pub parent: Option<RecordId>,
    pub stage: Option<u32>,
    pub elements: Option<Vec<usize>>,
}

impl Placement {
    pub(crate) fn root(id: RecordId) -> Self {
        Placement {
            id,
            parent: None,
            stage: None,
            elements: None,
        }
    }
}

/// Writes a `cancelled` record if dropped before being disarmed, so work
/// abandoned mid-flight still shows up in the trace.
pub(crate) struct CancelGuard<'a> {
    tracer: &'a Tracer,
    pending: Option<TraceRecord>,
}

impl<'a> CancelGuard<'a> {
    pub(crate) fn new(tracer: &'a Tracer, record: TraceRecord) -> Self {
        CancelGuard {
            tracer,
            pending: Some(record),
        }
    }

    pub(crate) fn disarm(mut self) -> TraceRecord {
        self.pending.take().expect("guard armed")
    }
}

impl Drop for CancelGuard<'_> {
    fn drop(&mut self) {
        if let Some(mut record) = self.pending.take() {
            record.status = Status::Cancelled;
            record.finished_at_us = now_us();
            let _ = self.tracer.record(record);
        }
    }
}

pub(crate) fn open_record(
    at: &Placement,
    function: FunctionDescriptor,
    input: Json,
) -> TraceRecord {
    let text = input.to_string();
    TraceRecord {
        id: at.id,
        parent: at.parent,
        stage: at.stage,
        function,
        input_digest: digest(&text),
        input,
        output: None,
        error: None,
        explanation: None,
        provenance: None,
        elements: at.elements.clone(),
        retry_count: 0,
        started_at_us: now_us(),
        finished_at_us: 0,
        status: Status::Ok,
    }
}

/// Fills in the outcome and appends the record. A sink failure on a
/// successful call turns the call into an error.
pub(crate) fn close_record<T>(
    tracer: &Tracer,
    mut record: TraceRecord,
    outcome: &Result<T>,
    fill: impl FnOnce(&mut TraceRecord, &T),
) -> Result<()> {
    record.finished_at_us = now_us();
    match outcome {
        Ok(value) => fill(&mut record, value),
        Err(e) => {
            record.status = Status::Error;
            record.error = Some(e.to_string());
        }
    }
    tracer.record(record).map(|_| ())
}

pub(crate) fn fill_transduced(record: &mut TraceRecord, t: &Transduced) {
    record.output = Some(t.state.to_json_value());
    record.explanation = Some(t.explanation.clone());
    record.provenance = Some(t.provenance.clone());
}

pub(crate) fn states_json(states: &[State]) -> Json {
    Json::Array(states.iter().map(State::to_json_value).collect())
}

/// `target << source` realized by a backend.
pub fn make_transduction(
    target: &RecordType,
    source: &RecordType,
    config: TransductionConfig,
    backend: Arc<dyn Backend>,
) -> Result<TransducibleFunction> {
    config.validate()?;
    Ok(TransducibleFunction::build(
        format!("{} << {}", target.name(), source.name()),
        source.clone(),
        target.clone(),
        config,
        Kernel::Backend(backend),
    ))
}

/// The identity on `ty`.
pub fn identity(ty: &RecordType) -> TransducibleFunction {
    TransducibleFunction::build(
        format!("id[{}]", ty.name()),
        ty.clone(),
        ty.clone(),
        TransductionConfig::default(),
        Kernel::Identity,
    )
}

/// `second ∘ first`.
pub fn compose(second: &TransducibleFunction, first: &TransducibleFunction) -> Result<TransducibleFunction> {
    if first.target() != second.source() {
        return Err(TransductionError::CompositionTypeMismatch {
            produced: first.target().name().to_string(),
            expected: second.source().name().to_string(),
        });
    }
    let mut stages = Vec::new();
    for f in [first, second] {
        match &f.inner.kernel {
            Kernel::Composed(inner) => stages.extend(inner.iter().cloned()),
            _ => stages.push(f.clone()),
        }
    }
    Ok(TransducibleFunction::build(
        format!("{} . {}", second.name(), first.name()),
        first.source().clone(),
        second.target().clone(),
        TransductionConfig::default(),
        Kernel::Composed(stages),
    ))
}

/// Composes a non-empty chain, first stage first.
pub fn chain(stages: &[TransducibleFunction]) -> Result<TransducibleFunction> {
    let (first, rest) = stages
        .split_first()
        .ok_or_else(|| TransductionError::Config("empty composition chain".into()))?;
    rest.iter().try_fold(first.clone(), |acc, next| compose(next, &acc))
}

fn check_declared(source: &RecordType, target: &RecordType, provenance: &ProvenanceMap) -> Result<()> {
    provenance.check(source, target)
}

/// Wraps a deterministic procedure. Its output is validated against `target`
/// on every call and carries `provenance` and a fixed explanation.
pub fn lift_deterministic(
    name: impl Into<String>,
    procedure: impl Fn(&State) -> Json + Send + Sync + 'static,
    source: &RecordType,
    target: &RecordType,
    provenance: ProvenanceMap,
) -> Result<TransducibleFunction> {
    check_declared(source, target, &provenance)?;
    Ok(TransducibleFunction::build(
        name.into(),
        source.clone(),
        target.clone(),
        TransductionConfig::default(),
        Kernel::Deterministic {
            procedure: Arc::new(procedure),
            provenance,
        },
    ))
}

/// Wraps a deterministic aggregation over a collection of `source` states.
pub fn lift_batch(
    name: impl Into<String>,
    procedure: impl Fn(&[State]) -> Json + Send + Sync + 'static,
    source: &RecordType,
    target: &RecordType,
    provenance: ProvenanceMap,
) -> Result<TransducibleFunction> {
    check_declared(source, target, &provenance)?;
    Ok(TransducibleFunction::build(
        name.into(),
        source.clone(),
        target.clone(),
        TransductionConfig::default(),
        Kernel::Batch {
            procedure: Arc::new(procedure),
            provenance,
        },
    ))
}

impl TransducibleFunction {
    fn build(name: String, source: RecordType, target: RecordType, config: TransductionConfig, kernel: Kernel) -> Self {
        TransducibleFunction {
            inner: Arc::new(Inner {
                name,
                source,
                target,
                config,
                kernel,
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    /// Same function under another name (used in traces and diagnostics).
    pub fn named(&self, name: impl Into<String>) -> Self {
        TransducibleFunction::build(
            name.into(),
            self.inner.source.clone(),
            self.inner.target.clone(),
            self.inner.config.clone(),
            self.inner.kernel.clone(),
        )
    }

    pub fn source(&self) -> &RecordType {
        &self.inner.source
    }

    pub fn target(&self) -> &RecordType {
        &self.inner.target
    }

    pub fn config(&self) -> &TransductionConfig {
        &self.inner.config
    }

    pub fn kind(&self) -> KernelKind {
        match self.inner.kernel {
            Kernel::Backend(_) => KernelKind::Backend,
            Kernel::Deterministic { .. } | Kernel::Batch { .. } => KernelKind::Deterministic,
            Kernel::Identity => KernelKind::Identity,
            Kernel::Composed(_) => KernelKind::Composed,
        }
    }

    /// Stages of a composition, in application order; a single-element slice otherwise.
    pub fn stages(&self) -> Vec<TransducibleFunction> {
        match &self.inner.kernel {
            Kernel::Composed(stages) => stages.clone(),
            _ => vec![self.clone()],
        }
    }

    /// Whether the function can be applied to a whole collection in one call.
    pub fn aggregates(&self) -> bool {
        matches!(self.inner.kernel, Kernel::Backend(_) | Kernel::Batch { .. })
    }

    /// Number of trace records one invocation writes.
    pub fn trace_footprint(&self) -> u64 {
        match &self.inner.kernel {
            Kernel::Composed(stages) => 1 + stages.iter().map(|s| s.trace_footprint()).sum::<u64>(),
            _ => 1,
        }
    }

    pub(crate) fn descriptor(&self) -> FunctionDescriptor {
        let model = match &self.inner.kernel {
            Kernel::Backend(_) => Some(self.inner.config.model.clone().unwrap_or_else(|| "default".into())),
            _ => None,
        };
        let instructions = &self.inner.config.instructions;
        FunctionDescriptor {
            source: self.source().name().to_string(),
            target: self.target().name().to_string(),
            kind: self.kind(),
            model,
            instructions_digest: (!instructions.is_empty()).then(|| digest(instructions)),
        }
    }

    fn check_input(&self, x: &State) -> Result<()> {
        if x.record_type() != self.source() {
            return Err(TransductionError::TypeMismatch {
                expected: self.source().name().to_string(),
                found: x.record_type().name().to_string(),
            });
        }
        Ok(())
    }

    /// Applies the function to one state, tracing the call.
    pub async fn invoke(&self, tracer: &Tracer, x: &State) -> Result<Transduced> {
        self.check_input(x)?;
        let id = tracer.reserve(self.trace_footprint());
        self.invoke_at(tracer, Placement::root(id), x).await
    }

    /// Like [`invoke`](Self::invoke), shaped by `explanation_requested`.
    pub async fn respond(&self, tracer: &Tracer, x: &State) -> Result<Reply> {
        let out = self.invoke(tracer, x).await?;
        Ok(if self.inner.config.explanation_requested {
            Reply::Explained(out.state, out.explanation)
        } else {
            Reply::Value(out.state)
        })
    }

    /// One kernel call over a whole collection (no staging).
    pub async fn invoke_many(&self, tracer: &Tracer, xs: &[State]) -> Result<Transduced> {
        for (i, x) in xs.iter().enumerate() {
            self.check_input(x).map_err(|e| TransductionError::at(i, e))?;
        }
        let id = tracer.reserve(1);
        let at = Placement {
            elements: Some((0..xs.len()).collect()),
            ..Placement::root(id)
        };
        self.invoke_many_at(tracer, at, xs).await
    }

    pub(crate) async fn invoke_many_at(&self, tracer: &Tracer, at: Placement, xs: &[State]) -> Result<Transduced> {
        if !self.aggregates() {
            return Err(TransductionError::NotAReducer(self.name().to_string()));
        }
        let guard = CancelGuard::new(tracer, open_record(&at, self.descriptor(), states_json(xs)));
        let outcome = self.run_kernel(KernelInput::Many(xs)).await;
        let mut record = guard.disarm();
        let outcome = outcome.and_then(|(t, retries)| {
            record.retry_count = retries;
            t.check(self.source(), self.target()).map(|_| t)
        });
        close_record(tracer, record, &outcome, fill_transduced)?;
        outcome
    }

    pub(crate) fn invoke_at<'a>(
        &'a self,
        tracer: &'a Tracer,
        at: Placement,
        x: &'a State,
    ) -> futures::future::BoxFuture<'a, Result<Transduced>> {
        Box::pin(async move {
            let guard = CancelGuard::new(tracer, open_record(&at, self.descriptor(), x.to_json_value()));
            let outcome = match &self.inner.kernel {
                Kernel::Composed(stages) => self.run_composed(tracer, &at, stages, x).await,
                _ => self.run_kernel(KernelInput::One(x)).await,
            };
            let mut record = guard.disarm();
            let outcome = outcome.and_then(|(t, retries)| {
                record.retry_count = retries;
                t.check(self.source(), self.target()).map(|_| t)
            });
            close_record(tracer, record, &outcome, fill_transduced)?;
            outcome
        })
    }

    async fn run_kernel(&self, input: KernelInput<'_>) -> Result<(Transduced, u32)> {
        let (source, target) = (self.source(), self.target());
        let fixed = |state: State, provenance: &ProvenanceMap, what: String| Transduced {
            explanation: Explanation::new(what, provenance.evidence(source), 1.0),
            provenance: provenance.clone(),
            state,
        };
        match (&self.inner.kernel, input) {
            (Kernel::Backend(backend), input) => {
                let request = KernelRequest {
                    source,
                    target,
                    config: &self.inner.config,
                    input,
                };
                let out = backend.complete(&request).await?;
                Ok((out.result, out.retries))
            }
            (Kernel::Identity, KernelInput::One(x)) => {
                let provenance = ProvenanceMap::full(source, source);
                let t = fixed(x.clone(), &provenance, "identity: input returned unchanged".into());
                Ok((t, 0))
            }
            (Kernel::Deterministic { procedure, provenance }, KernelInput::One(x)) => {
                let state = target
                    .validate(&procedure(x))
                    .map_err(TransductionError::KernelOutputInvalid)?;
                Ok((fixed(state, provenance, format!("deterministic procedure `{}`", self.name())), 0))
            }
            (Kernel::Batch { procedure, provenance }, input) => {
                let single;
                let xs = match input {
                    KernelInput::Many(xs) => xs,
                    KernelInput::One(x) => {
                        single = [x.clone()];
                        &single[..]
                    }
                };
                let state = target
                    .validate(&procedure(xs))
                    .map_err(TransductionError::KernelOutputInvalid)?;
                Ok((fixed(state, provenance, format!("deterministic aggregate `{}`", self.name())), 0))
            }
            _ => Err(TransductionError::NotAReducer(self.name().to_string())),
        }
    }

    async fn run_composed(
        &self,
        tracer: &Tracer,
        at: &Placement,
        stages: &[TransducibleFunction],
        x: &State,
    ) -> Result<(Transduced, u32)> {
        let mut next_id = at.id + 1;
        let mut current = x.clone();
        let mut outputs = Vec::with_capacity(stages.len());
        for (i, stage) in stages.iter().enumerate() {
            let placement = Placement {
                id: next_id,
                parent: Some(at.id),
                stage: Some(i as u32),
                elements: None,
            };
            next_id += stage.trace_footprint();
            let out = stage.invoke_at(tracer, placement, &current).await?;
            current = out.state.clone();
            outputs.push((stage.kind() == KernelKind::Identity, out));
        }
        Ok((combine_stages(self.source(), current, &outputs), 0))
    }
}

/// Chains stage provenance and explanations; identity stages are skipped.
fn combine_stages(source: &RecordType, state: State, outputs: &[(bool, Transduced)]) -> Transduced {
    let active: Vec<(usize, &Transduced)> = outputs
        .iter()
        .enumerate()
        .filter(|(_, (is_identity, _))| !is_identity)
        .map(|(i, (_, t))| (i, t))
        .collect();
    let Some(((_, last), earlier)) = active.split_last() else {
        let provenance = ProvenanceMap::full(source, source);
        return Transduced {
            explanation: Explanation::new("identity: input returned unchanged", provenance.evidence(source), 1.0),
            provenance,
            state,
        };
    };
    let prefix = earlier
        .iter()
        .map(|(_, t)| t.provenance.clone())
        .reduce(|acc, p| acc.then(&p));
    let (provenance, relevant) = match &prefix {
        None => (last.provenance.clone(), last.explanation.relevant_source_attributes.clone()),
        Some(prefix) => {
            let provenance = prefix.then(&last.provenance);
            let cited: ProvenanceMap = [(
                "_",
                last.explanation.relevant_source_attributes.iter().cloned().collect::<Vec<_>>(),
            )]
            .into_iter()
            .collect();
            (provenance, prefix.then(&cited).evidence(source))
        }
    };
    let explanation = if active.len() == 1 {
        last.explanation.clone()
    } else {
        let text = active
            .iter()
            .map(|(i, t)| format!("[stage {}] {}", i + 1, t.explanation.explanation))
            .collect::<Vec<_>>()
            .join("\n");
        let confidence = active
            .iter()
            .map(|(_, t)| t.explanation.confidence)
            .product::<f64>()
            .clamp(0.0, 1.0);
        Explanation::new(text, relevant, confidence)
    };
    Transduced {
        state,
        explanation,
        provenance,
    }
}
