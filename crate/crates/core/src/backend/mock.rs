//! A deterministic, rule-driven backend for offline runs and tests.
//!
//! Rules are tried in declaration order; the first whose matcher accepts the
//! request produces a reply envelope, which is then decoded and validated
//! exactly like a model's reply.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

use super::{decode_and_validate, Backend, KernelOutput, KernelRequest};
use crate::error::{Result, TransductionError};
use crate::schema::{State, Value};

/// Which requests a rule applies to. Unset fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions_contain: Option<String>,
}

impl RuleMatch {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn types(source: impl Into<String>, target: impl Into<String>) -> Self {
        RuleMatch {
            source: Some(source.into()),
            target: Some(target.into()),
            instructions_contain: None,
        }
    }

    pub fn matches(&self, request: &KernelRequest<'_>) -> bool {
        self.source.as_deref().is_none_or(|s| s == request.source.name())
            && self.target.as_deref().is_none_or(|t| t == request.target.name())
            && self
                .instructions_contain
                .as_deref()
                .is_none_or(|needle| request.config.instructions.contains(needle))
    }
}

/// How one output slot is computed from the input state(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldExpr {
    Const(Json),
    /// The slot's value in the first input.
    Copy(String),
    Sum(String),
    Max(String),
    Min(String),
    Mean(String),
    /// Number of inputs.
    Count,
    Concat {
        slot: String,
        #[serde(default)]
        sep: String,
    },
    /// All values of the slot across inputs, flattening lists.
    Collect(String),
    Any(String),
    All(String),
    /// The input states themselves, as a list.
    States,
    /// Text with `{count}` and `{op:slot}` placeholders, where `op` is one of
    /// `sum`, `mean`, `min`, `max`, `first`, `concat`.
    Template(String),
}

impl FieldExpr {
    fn referenced_slots(&self) -> Vec<String> {
        match self {
            FieldExpr::Copy(s)
            | FieldExpr::Sum(s)
            | FieldExpr::Max(s)
            | FieldExpr::Min(s)
            | FieldExpr::Mean(s)
            | FieldExpr::Collect(s)
            | FieldExpr::Any(s)
            | FieldExpr::All(s)
            | FieldExpr::Concat { slot: s, .. } => vec![s.clone()],
            FieldExpr::Template(t) => placeholders(t).into_iter().filter_map(|(_, s)| s).collect(),
            FieldExpr::Const(_) | FieldExpr::Count | FieldExpr::States => Vec::new(),
        }
    }

    fn evaluate(&self, xs: &[State]) -> Json {
        match self {
            FieldExpr::Const(v) => v.clone(),
            FieldExpr::Copy(slot) => xs
                .first()
                .and_then(|x| x.get(slot))
                .map_or(Json::Null, Value::to_json),
            FieldExpr::Sum(slot) => sum(&values(xs, slot)),
            FieldExpr::Max(slot) => extreme(&values(xs, slot), |a, b| a > b),
            FieldExpr::Min(slot) => extreme(&values(xs, slot), |a, b| a < b),
            FieldExpr::Mean(slot) => mean(&values(xs, slot)).map_or(Json::Null, Json::from),
            FieldExpr::Count => Json::from(xs.len()),
            FieldExpr::Concat { slot, sep } => Json::String(concat(&values(xs, slot), sep)),
            FieldExpr::Collect(slot) => Json::Array(
                values(xs, slot)
                    .into_iter()
                    .flat_map(|v| match v {
                        Value::List(items) => items.iter().map(Value::to_json).collect::<Vec<_>>(),
                        other => vec![other.to_json()],
                    })
                    .collect(),
            ),
            FieldExpr::Any(slot) => Json::Bool(values(xs, slot).iter().any(|v| v.as_bool() == Some(true))),
            FieldExpr::All(slot) => Json::Bool(values(xs, slot).iter().all(|v| v.as_bool() == Some(true))),
            FieldExpr::States => Json::Array(xs.iter().map(State::to_json_value).collect()),
            FieldExpr::Template(t) => Json::String(render(t, xs)),
        }
    }
}

fn values<'a>(xs: &'a [State], slot: &str) -> Vec<&'a Value> {
    xs.iter().filter_map(|x| x.get(slot)).filter(|v| !v.is_null()).collect()
}

fn sum(vs: &[&Value]) -> Json {
    if vs.iter().all(|v| v.as_i64().is_some()) {
        let total = vs.iter().try_fold(0i64, |acc, v| acc.checked_add(v.as_i64().unwrap()));
        if let Some(total) = total {
            return Json::from(total);
        }
    }
    Json::from(vs.iter().filter_map(|v| v.as_f64()).sum::<f64>())
}

fn extreme(vs: &[&Value], better: impl Fn(f64, f64) -> bool) -> Json {
    let mut best: Option<&Value> = None;
    for v in vs {
        let Some(x) = v.as_f64() else { continue };
        if best.and_then(|b| b.as_f64()).is_none_or(|b| better(x, b)) {
            best = Some(v);
        }
    }
    best.map_or(Json::Null, |v| v.to_json())
}

fn mean(vs: &[&Value]) -> Option<f64> {
    let nums: Vec<f64> = vs.iter().filter_map(|v| v.as_f64()).collect();
    (!nums.is_empty()).then(|| nums.iter().sum::<f64>() / nums.len() as f64)
}

fn as_display(v: &Value) -> String {
    match v {
        Value::Text(s) => s.clone(),
        Value::Real(r) => format_real(*r),
        other => other.to_json().to_string(),
    }
}

fn format_real(r: f64) -> String {
    let s = format!("{r:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn concat(vs: &[&Value], sep: &str) -> String {
    vs.iter().map(|v| as_display(v)).collect::<Vec<_>>().join(sep)
}

/// `(op, slot)` pairs in a template, in order of appearance.
fn placeholders(template: &str) -> Vec<(String, Option<String>)> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        let body = &rest[start + 1..start + len];
        match body.split_once(':') {
            Some((op, slot)) => out.push((op.to_string(), Some(slot.to_string()))),
            None => out.push((body.to_string(), None)),
        }
        rest = &rest[start + len + 1..];
    }
    out
}

fn render(template: &str, xs: &[State]) -> String {
    let mut out = template.to_string();
    for (op, slot) in placeholders(template) {
        let replacement = match (op.as_str(), slot.as_deref()) {
            ("count", None) => xs.len().to_string(),
            ("sum", Some(s)) => match sum(&values(xs, s)) {
                Json::Number(n) if n.is_f64() => format_real(n.as_f64().unwrap_or(0.0)),
                other => other.to_string(),
            },
            ("mean", Some(s)) => mean(&values(xs, s)).map_or_else(|| "n/a".into(), format_real),
            ("min", Some(s)) => display_json(extreme(&values(xs, s), |a, b| a < b)),
            ("max", Some(s)) => display_json(extreme(&values(xs, s), |a, b| a > b)),
            ("first", Some(s)) => values(xs, s).first().map_or_else(String::new, |v| as_display(v)),
            ("concat", Some(s)) => concat(&values(xs, s), ", "),
            _ => continue,
        };
        let key = match &slot {
            Some(s) => format!("{{{op}:{s}}}"),
            None => format!("{{{op}}}"),
        };
        out = out.replace(&key, &replacement);
    }
    out
}

fn display_json(v: Json) -> String {
    match v {
        Json::Null => "n/a".into(),
        Json::Number(n) if n.is_f64() => format_real(n.as_f64().unwrap_or(0.0)),
        other => other.to_string(),
    }
}

pub type CustomProducer = Arc<dyn Fn(&KernelRequest<'_>) -> String + Send + Sync>;

/// What a matching rule replies with.
#[derive(Clone)]
pub enum Producer {
    /// Each target slot copies the same-named source slot.
    CopySlots,
    Fields(IndexMap<String, FieldExpr>),
    /// A fixed reply envelope.
    Envelope(Json),
    /// Arbitrary reply text, typically for fault injection.
    Custom(CustomProducer),
}

impl fmt::Debug for Producer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Producer::CopySlots => f.write_str("CopySlots"),
            Producer::Fields(fields) => f.debug_tuple("Fields").field(fields).finish(),
            Producer::Envelope(e) => f.debug_tuple("Envelope").field(e).finish(),
            Producer::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRule {
    pub name: String,
    pub matcher: RuleMatch,
    pub producer: Producer,
    pub explanation: Option<String>,
    pub confidence: f64,
}

impl MockRule {
    pub fn new(name: impl Into<String>, matcher: RuleMatch, producer: Producer) -> Self {
        MockRule {
            name: name.into(),
            matcher,
            producer,
            explanation: None,
            confidence: 1.0,
        }
    }

    pub fn copy_slots(name: impl Into<String>, matcher: RuleMatch) -> Self {
        Self::new(name, matcher, Producer::CopySlots)
    }

    pub fn fields<I, S>(name: impl Into<String>, matcher: RuleMatch, fields: I) -> Self
    where
        I: IntoIterator<Item = (S, FieldExpr)>,
        S: Into<String>,
    {
        let fields = fields.into_iter().map(|(k, v)| (k.into(), v)).collect();
        Self::new(name, matcher, Producer::Fields(fields))
    }

    pub fn custom(
        name: impl Into<String>,
        matcher: RuleMatch,
        producer: impl Fn(&KernelRequest<'_>) -> String + Send + Sync + 'static,
    ) -> Self {
        Self::new(name, matcher, Producer::Custom(Arc::new(producer)))
    }

    pub fn explained(mut self, explanation: impl Into<String>) -> Self {
        self.explanation = Some(explanation.into());
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    /// The reply text this rule produces for a request.
    pub fn reply(&self, request: &KernelRequest<'_>) -> String {
        let (source, target) = (request.source, request.target);
        let xs = request.input.states();
        let mut value = Map::new();
        let mut provenance = Map::new();
        let all_sources = || source.slot_names().map(String::from).collect::<Vec<_>>();
        match &self.producer {
            Producer::Envelope(envelope) => return envelope.to_string(),
            Producer::Custom(f) => return f(request),
            Producer::CopySlots => {
                for slot in target.slot_names() {
                    if source.slot(slot).is_some() {
                        value.insert(slot.into(), FieldExpr::Copy(slot.into()).evaluate(xs));
                        provenance.insert(slot.into(), json!([slot]));
                    } else {
                        value.insert(slot.into(), Json::Null);
                        provenance.insert(slot.into(), json!(all_sources()));
                    }
                }
            }
            Producer::Fields(fields) => {
                for slot in target.slot_names() {
                    let (v, evidence) = match fields.get(slot) {
                        Some(expr) => {
                            let refs = expr.referenced_slots();
                            let refs = if refs.is_empty() { all_sources() } else { refs };
                            (expr.evaluate(xs), refs)
                        }
                        None => (Json::Null, all_sources()),
                    };
                    value.insert(slot.into(), v);
                    provenance.insert(slot.into(), json!(evidence));
                }
            }
        }
        let cited: BTreeSet<&str> = provenance
            .values()
            .flat_map(|v| v.as_array().into_iter().flatten())
            .filter_map(Json::as_str)
            .collect();
        let mut relevant: Vec<&str> = source.slot_names().filter(|s| cited.contains(s)).collect();
        // references to undeclared slots are reported as-is so validation can reject them
        relevant.extend(cited.iter().filter(|c| source.slot(c).is_none()));
        let explanation = self.explanation.clone().unwrap_or_else(|| format!("mock rule `{}`", self.name));
        json!({
            "value": value,
            "explanation": explanation,
            "relevant_source_attributes": relevant,
            "confidence": self.confidence,
            "provenance": provenance,
        })
        .to_string()
    }
}

pub type LatencyFn = Arc<dyn Fn(&KernelRequest<'_>) -> Duration + Send + Sync>;

/// Deterministic backend driven by a rule table.
#[derive(Clone, Default)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    latency: Option<LatencyFn>,
    calls: Arc<AtomicU64>,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockBackend")
            .field("rules", &self.rules.iter().map(|r| &r.name).collect::<Vec<_>>())
            .field("calls", &self.calls())
            .finish()
    }
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockBackend {
            rules,
            ..Default::default()
        }
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Simulated latency per call.
    pub fn with_latency(mut self, latency: impl Fn(&KernelRequest<'_>) -> Duration + Send + Sync + 'static) -> Self {
        self.latency = Some(Arc::new(latency));
        self
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    /// Number of completed-or-attempted calls so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// First matching rule's reply, decoded and validated.
    pub fn mock_invoke(&self, request: &KernelRequest<'_>) -> Result<KernelOutput> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.matcher.matches(request))
            .ok_or_else(|| TransductionError::NoMatchingRule {
                source_type: request.source.name().to_string(),
                target_type: request.target.name().to_string(),
            })?;
        let raw = rule.reply(request);
        let result = decode_and_validate(&raw, request.source, request.target)?;
        Ok(KernelOutput { result, retries: 0 })
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn complete(&self, request: &KernelRequest<'_>) -> Result<KernelOutput> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(latency) = &self.latency {
            tokio::time::sleep(latency(request)).await;
        }
        self.mock_invoke(request)
    }
}

/// One rule as written in a rules file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRuleDecl {
    pub name: String,
    #[serde(flatten)]
    pub matcher: RuleMatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default = "one")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub copy_slots: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<IndexMap<String, FieldExpr>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Json>,
}

fn one() -> f64 {
    1.0
}

impl MockRuleDecl {
    pub fn into_rule(self) -> Result<MockRule> {
        let producer = match (self.copy_slots, self.fields, self.envelope) {
            (true, None, None) => Producer::CopySlots,
            (false, Some(fields), None) => Producer::Fields(fields),
            (false, None, Some(envelope)) => Producer::Envelope(envelope),
            _ => {
                return Err(TransductionError::Config(format!(
                    "rule `{}` must set exactly one of copy_slots, fields, envelope",
                    self.name
                )))
            }
        };
        Ok(MockRule {
            name: self.name,
            matcher: self.matcher,
            producer,
            explanation: self.explanation,
            confidence: self.confidence,
        })
    }
}

/// A rules file: `{"rules": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRules {
    pub rules: Vec<MockRuleDecl>,
}

impl MockRules {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| TransductionError::Config(format!("rules file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TransductionError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn into_backend(self) -> Result<MockBackend> {
        let rules = self.rules.into_iter().map(MockRuleDecl::into_rule).collect::<Result<_>>()?;
        Ok(MockBackend::new(rules))
    }
}
