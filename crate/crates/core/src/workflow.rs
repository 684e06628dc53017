//! Declarative pipelines: a JSON document declaring record types, data
//! sources, backend-realized functions and a linear list of stages.
//!
//! [`check`] performs every wiring check up front, including loading the
//! data, so a workflow that checks clean cannot fail on a wiring error once
//! [`execute`] has started. The `cmd_*` functions are what the command-line
//! front end prints.
//!
//! Data flows through the stages as named groups of states, one group per
//! source to begin with. `map`, `compose` and per-source `reduce` stages work
//! within each group; a `reduce` with scope `all` folds every group into one.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::backend::{Backend, BackendConfig, HttpBackend, MockRules};
use crate::error::TransductionError;
use crate::ingest;
use crate::mapreduce::{self, ExecutionPolicy, FailureMode, Reducer};
use crate::schema::{RecordDecl, RecordType, State, TypeRegistry};
use crate::trace::{RecordId, TraceError, TraceLog, Tracer};
use crate::transduction::{chain, make_transduction, TransducibleFunction, TransductionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowDefinition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub types: IndexMap<String, RecordDecl>,
    pub sources: Vec<SourceBinding>,
    pub functions: IndexMap<String, FunctionDecl>,
    pub stages: Vec<StageDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyDecl>,
    /// Rules file for the mock backend, relative to the workflow file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_rules: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpDecl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceBinding {
    pub name: String,
    /// Relative to the workflow file.
    pub path: String,
    pub format: SourceFormat,
    #[serde(rename = "type")]
    pub type_name: String,
    /// Explicit column → slot bindings (CSV only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header_map: Option<IndexMap<String, String>>,
}

/// `target << source`, refined with instructions and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDecl {
    pub target: String,
    pub source: String,
    #[serde(default)]
    pub instructions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub explanation: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<String>,
    /// Function combining partial results when a reduce is staged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combiner: Option<String>,
}

impl FunctionDecl {
    pub fn config(&self) -> TransductionConfig {
        TransductionConfig {
            instructions: self.instructions.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            explanation_requested: self.explanation,
            max_retries: self.max_retries,
            batch_size: self.batch_size,
            tools: self.tools.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    PerSource,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageDecl {
    /// Apply a function to every state of every group.
    Map {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        function: Option<String>,
        /// Per-source function overrides.
        #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
        per_source: IndexMap<String, String>,
    },
    /// Aggregate each group, or everything, into one state.
    Reduce {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        function: Option<String>,
        #[serde(default)]
        scope: Scope,
        #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
        per_source: IndexMap<String, String>,
    },
    /// Apply a chain of functions, first first, to every state.
    Compose { functions: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBinding {
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default = "default_output_file")]
    pub file: String,
}

fn default_output_file() -> String {
    "output.json".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_concurrency: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail_fast: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl HttpDecl {
    pub fn backend_config(&self) -> BackendConfig {
        let d = BackendConfig::default();
        BackendConfig {
            endpoint: self.endpoint.clone().unwrap_or(d.endpoint),
            model: self.model.clone().unwrap_or(d.model),
            temperature: self.temperature.unwrap_or(d.temperature),
            timeout: self.timeout_secs.map_or(d.timeout, Duration::from_secs),
            api_key_env: self.api_key_env.clone().unwrap_or(d.api_key_env),
            max_retries: self.max_retries.unwrap_or(d.max_retries),
        }
    }
}

/// A problem found while checking a workflow, with where it was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("workflow file is malformed: {0}")]
    Parse(String),
    #[error("workflow has {} problem(s):\n{}", .0.len(), .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Transduction(#[from] TransductionError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{message}")]
    Stage { message: String, partial: Option<PathBuf> },
}

impl WorkflowError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkflowError::Transduction(TransductionError::Config(_))
            | WorkflowError::Transduction(TransductionError::UnsupportedFeature(_)) => 2,
            _ => 1,
        }
    }
}

impl WorkflowDefinition {
    pub fn from_json(text: &str) -> Result<Self, WorkflowError> {
        serde_json::from_str(text).map_err(|e| WorkflowError::Parse(e.to_string()))
    }
}

/// A workflow file together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Workflow {
    pub definition: WorkflowDefinition,
    pub base_dir: PathBuf,
}

impl Workflow {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkflowError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| WorkflowError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Workflow {
            definition: WorkflowDefinition::from_json(&text)?,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    /// The policy declared in the file, with command-line overrides applied.
    pub fn policy(&self, overrides: &PolicyOverrides) -> Result<ExecutionPolicy, TransductionError> {
        let declared = self.definition.policy.unwrap_or_default();
        let d = ExecutionPolicy::default();
        let policy = ExecutionPolicy {
            max_concurrency: overrides.max_concurrency.or(declared.max_concurrency).unwrap_or(d.max_concurrency),
            batch_size: overrides.batch_size.or(declared.batch_size).unwrap_or(d.batch_size),
            failure_mode: if overrides.fail_fast || declared.fail_fast {
                FailureMode::FailFast
            } else {
                FailureMode::Collect
            },
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PolicyOverrides {
    pub max_concurrency: Option<usize>,
    pub batch_size: Option<usize>,
    pub fail_fast: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedSource {
    pub name: String,
    pub record_type: RecordType,
    pub states: Vec<State>,
}

/// A workflow that passed every check, with its types resolved and data loaded.
#[derive(Debug, Clone)]
pub struct Checked {
    pub types: TypeRegistry,
    pub sources: Vec<LoadedSource>,
    /// Group names and state types after the last stage.
    pub final_groups: Vec<(String, RecordType)>,
}

/// Group shape while walking the stages: name, type, number of states.
#[derive(Debug, Clone)]
struct Shape {
    name: String,
    ty: RecordType,
    count: usize,
}

/// Runs every static check. Data files are loaded so that binding and
/// coercion problems surface here rather than mid-run.
pub fn check(workflow: &Workflow, policy: &ExecutionPolicy) -> Result<Checked, Vec<Diagnostic>> {
    let def = &workflow.definition;
    let mut diags = Vec::new();
    let mut types = TypeRegistry::new();
    if let Err(e) = types.define_all(&def.types) {
        diags.push(Diagnostic::new("types", e.to_string()));
        return Err(diags);
    }
    let lookup = |name: &str, location: &str, diags: &mut Vec<Diagnostic>| -> Option<RecordType> {
        let ty = types.get(name).cloned();
        if ty.is_none() {
            diags.push(Diagnostic::new(location, format!("unknown type `{name}`")));
        }
        ty
    };

    let mut sources = Vec::new();
    if def.sources.is_empty() {
        diags.push(Diagnostic::new("sources", "at least one data source is required"));
    }
    for (i, src) in def.sources.iter().enumerate() {
        let location = format!("sources[{i}] `{}`", src.name);
        if def.sources[..i].iter().any(|s| s.name == src.name) {
            diags.push(Diagnostic::new(&location, "duplicate source name"));
        }
        let Some(ty) = lookup(&src.type_name, &location, &mut diags) else { continue };
        let path = workflow.resolve(&src.path);
        if !path.is_file() {
            diags.push(Diagnostic::new(&location, format!("data file `{}` not found", path.display())));
            continue;
        }
        let loaded = match src.format {
            SourceFormat::Csv => ingest::from_csv_path(&path, &ty, src.header_map.as_ref()),
            SourceFormat::Json => {
                if src.header_map.is_some() {
                    diags.push(Diagnostic::new(&location, "header_map applies to csv sources only"));
                }
                ingest::from_json_path(&path, &ty)
            }
        };
        match loaded {
            Ok(states) => sources.push(LoadedSource {
                name: src.name.clone(),
                record_type: ty,
                states,
            }),
            Err(e) => diags.push(Diagnostic::new(&location, e.to_string())),
        }
    }

    let mut signatures: IndexMap<&str, (RecordType, RecordType)> = IndexMap::new();
    for (name, f) in &def.functions {
        let location = format!("functions.{name}");
        let (source, target) = (
            lookup(&f.source, &location, &mut diags),
            lookup(&f.target, &location, &mut diags),
        );
        if let Err(e) = f.config().validate() {
            diags.push(Diagnostic::new(&location, e.to_string()));
        }
        if let (Some(source), Some(target)) = (source, target) {
            signatures.insert(name, (source, target));
        }
    }
    for (name, f) in &def.functions {
        let Some(combiner) = &f.combiner else { continue };
        let location = format!("functions.{name}");
        match (def.functions.get(combiner), signatures.get(name.as_str())) {
            (None, _) => diags.push(Diagnostic::new(&location, format!("unknown combiner `{combiner}`"))),
            (Some(c), Some((_, target))) => {
                if c.source != target.name() || c.target != target.name() {
                    diags.push(Diagnostic::new(
                        &location,
                        format!(
                            "combiner `{combiner}` is `{} << {}` but must be `{t} << {t}`",
                            c.target,
                            c.source,
                            t = target.name()
                        ),
                    ));
                }
            }
            _ => {}
        }
    }

    if diags.is_empty() {
        let mut groups: Vec<Shape> = sources
            .iter()
            .map(|s| Shape {
                name: s.name.clone(),
                ty: s.record_type.clone(),
                count: s.states.len(),
            })
            .collect();
        if def.stages.is_empty() {
            diags.push(Diagnostic::new("stages", "at least one stage is required"));
        }
        for (i, stage) in def.stages.iter().enumerate() {
            let location = format!("stages[{i}]");
            groups = check_stage(def, &signatures, policy, stage, groups, &location, &mut diags);
            if groups.is_empty() {
                break;
            }
        }
        if let (Some(out), false) = (&def.output, groups.is_empty()) {
            for g in &groups {
                if g.ty.name() != out.type_name {
                    diags.push(Diagnostic::new(
                        "output",
                        format!("pipeline ends with `{}` for `{}`, but the output is declared as `{}`", g.ty.name(), g.name, out.type_name),
                    ));
                }
            }
        }
        if diags.is_empty() {
            return Ok(Checked {
                types,
                sources,
                final_groups: groups.into_iter().map(|g| (g.name, g.ty)).collect(),
            });
        }
    }
    Err(diags)
}

fn function_for<'a>(
    function: &'a Option<String>,
    per_source: &'a IndexMap<String, String>,
    group: &str,
) -> Option<&'a str> {
    per_source.get(group).or(function.as_ref()).map(String::as_str)
}

/// Checks one stage against the incoming group shapes and returns the
/// outgoing ones; an empty result means checking cannot continue.
fn check_stage(
    def: &WorkflowDefinition,
    signatures: &IndexMap<&str, (RecordType, RecordType)>,
    policy: &ExecutionPolicy,
    stage: &StageDecl,
    groups: Vec<Shape>,
    location: &str,
    diags: &mut Vec<Diagnostic>,
) -> Vec<Shape> {
    let before = diags.len();
    let apply = |fname: Option<&str>, g: &Shape, diags: &mut Vec<Diagnostic>| -> Option<(RecordType, RecordType)> {
        let Some(fname) = fname else {
            diags.push(Diagnostic::new(location, format!("no function given for source `{}`", g.name)));
            return None;
        };
        let Some((source, target)) = signatures.get(fname) else {
            diags.push(Diagnostic::new(location, format!("unknown function `{fname}`")));
            return None;
        };
        if *source != g.ty {
            diags.push(Diagnostic::new(
                location,
                format!("function `{fname}` expects `{}` but `{}` carries `{}`", source.name(), g.name, g.ty.name()),
            ));
            return None;
        }
        Some((source.clone(), target.clone()))
    };
    let check_overrides = |per_source: &IndexMap<String, String>, diags: &mut Vec<Diagnostic>| {
        for key in per_source.keys() {
            if !groups.iter().any(|g| &g.name == key) {
                diags.push(Diagnostic::new(location, format!("per_source names unknown group `{key}`")));
            }
        }
    };
    let check_staging = |fname: &str, ty: (&RecordType, &RecordType), count: usize, diags: &mut Vec<Diagnostic>| {
        let decl = &def.functions[fname];
        let b = decl.batch_size.unwrap_or(policy.batch_size);
        if count == 0 {
            diags.push(Diagnostic::new(location, format!("`{fname}` would reduce an empty collection")));
        } else if count > b && ty.0 != ty.1 && decl.combiner.is_none() {
            diags.push(Diagnostic::new(
                location,
                format!("`{fname}` reduces {count} states in batches of {b} and needs a combiner (`{t} << {t}`)", t = ty.1.name()),
            ));
        }
    };

    let out = match stage {
        StageDecl::Map { function, per_source } => {
            check_overrides(per_source, diags);
            groups
                .iter()
                .filter_map(|g| {
                    let (_, target) = apply(function_for(function, per_source, &g.name), g, diags)?;
                    Some(Shape { ty: target, ..g.clone() })
                })
                .collect()
        }
        StageDecl::Compose { functions } => {
            if functions.is_empty() {
                diags.push(Diagnostic::new(location, "compose needs at least one function"));
            }
            groups
                .iter()
                .filter_map(|g| {
                    let mut current = g.clone();
                    for f in functions {
                        let (_, target) = apply(Some(f), &current, diags)?;
                        current.ty = target;
                    }
                    Some(current)
                })
                .collect()
        }
        StageDecl::Reduce { function, scope: Scope::PerSource, per_source } => {
            check_overrides(per_source, diags);
            groups
                .iter()
                .filter_map(|g| {
                    let fname = function_for(function, per_source, &g.name);
                    let (source, target) = apply(fname, g, diags)?;
                    check_staging(fname?, (&source, &target), g.count, diags);
                    Some(Shape { ty: target, count: 1, name: g.name.clone() })
                })
                .collect()
        }
        StageDecl::Reduce { function, scope: Scope::All, per_source } => {
            if !per_source.is_empty() {
                diags.push(Diagnostic::new(location, "per_source overrides do not apply to scope `all`"));
            }
            let total = groups.iter().map(|g| g.count).sum();
            let all = Shape {
                name: "all".into(),
                ty: groups[0].ty.clone(),
                count: total,
            };
            for g in &groups[1..] {
                if g.ty != all.ty {
                    diags.push(Diagnostic::new(
                        location,
                        format!("scope `all` needs one type, but `{}` carries `{}` and `{}` carries `{}`", groups[0].name, all.ty.name(), g.name, g.ty.name()),
                    ));
                }
            }
            apply(function.as_deref(), &all, diags)
                .map(|(source, target)| {
                    check_staging(function.as_deref().unwrap_or_default(), (&source, &target), total, diags);
                    vec![Shape { ty: target, count: 1, name: all.name.clone() }]
                })
                .unwrap_or_default()
        }
    };
    if diags.len() > before {
        Vec::new()
    } else {
        out
    }
}

/// States flowing between stages, grouped by source.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub states: Vec<State>,
}

fn build_function(
    def: &WorkflowDefinition,
    types: &TypeRegistry,
    name: &str,
    backend: &Arc<dyn Backend>,
) -> Result<TransducibleFunction, TransductionError> {
    let decl = def
        .functions
        .get(name)
        .ok_or_else(|| TransductionError::Config(format!("unknown function `{name}`")))?;
    let ty = |n: &str| types.get(n).ok_or_else(|| TransductionError::Config(format!("unknown type `{n}`")));
    Ok(make_transduction(ty(&decl.target)?, ty(&decl.source)?, decl.config(), backend.clone())?.named(name))
}

fn build_reducer(
    def: &WorkflowDefinition,
    types: &TypeRegistry,
    name: &str,
    backend: &Arc<dyn Backend>,
) -> Result<Reducer, TransductionError> {
    let mut reducer = Reducer::new(build_function(def, types, name, backend)?)?;
    if let Some(combiner) = &def.functions[name].combiner {
        reducer = reducer.with_combiner(build_function(def, types, combiner, backend)?)?;
    }
    Ok(reducer)
}

/// Writes `partial.json` in `out_dir`: every state produced by the failing
/// stage, with `null` at failed positions and the error beside it.
fn flush_partial(out_dir: &Path, stage: usize, results: &[(String, mapreduce::MapResult)]) -> Option<PathBuf> {
    let entries: Vec<Json> = results
        .iter()
        .flat_map(|(group, result)| {
            result.outputs.iter().enumerate().map(move |(i, r)| match r {
                Ok(t) => json!({"group": group, "index": i, "state": t.state.to_json_value()}),
                Err(e) => json!({"group": group, "index": i, "state": null, "error": e.to_string()}),
            })
        })
        .collect();
    let path = out_dir.join("partial.json");
    let doc = json!({"stage": stage, "outputs": entries});
    std::fs::create_dir_all(out_dir).ok()?;
    std::fs::write(&path, format!("{doc}\n")).ok()?;
    Some(path)
}

/// Runs a checked workflow. `out_dir` receives `partial.json` if a map stage
/// fails in collect mode.
pub async fn execute(
    workflow: &Workflow,
    checked: &Checked,
    backend: Arc<dyn Backend>,
    tracer: &Tracer,
    policy: &ExecutionPolicy,
    out_dir: &Path,
) -> Result<Vec<Group>, WorkflowError> {
    let def = &workflow.definition;
    let types = &checked.types;
    let mut groups: Vec<Group> = checked
        .sources
        .iter()
        .map(|s| Group {
            name: s.name.clone(),
            states: s.states.clone(),
        })
        .collect();
    for (i, stage) in def.stages.iter().enumerate() {
        let fail = |message: String, partial: Option<PathBuf>| WorkflowError::Stage {
            message: format!("stage {i}: {message}"),
            partial,
        };
        groups = match stage {
            StageDecl::Map { .. } | StageDecl::Compose { .. } => {
                let mut results = Vec::new();
                for g in &groups {
                    let f = match stage {
                        StageDecl::Map { function, per_source } => {
                            let name = function_for(function, per_source, &g.name).unwrap_or_default();
                            build_function(def, types, name, &backend)?
                        }
                        StageDecl::Compose { functions } => chain(
                            &functions
                                .iter()
                                .map(|f| build_function(def, types, f, &backend))
                                .collect::<Result<Vec<_>, _>>()?,
                        )?,
                        StageDecl::Reduce { .. } => unreachable!(),
                    };
                    let result = mapreduce::map(tracer, &f, &g.states, policy)
                        .await
                        .map_err(|e| fail(format!("`{}`: {e}", g.name), None))?;
                    results.push((g.name.clone(), result));
                }
                if let Some((group, (index, e))) =
                    results.iter().find_map(|(name, r)| r.errors().next().map(|e| (name, e)))
                {
                    let partial = flush_partial(out_dir, i, &results);
                    return Err(fail(format!("`{group}` element {index}: {e}"), partial));
                }
                results
                    .into_iter()
                    .map(|(name, r)| Ok(Group { name, states: r.states()? }))
                    .collect::<Result<Vec<_>, TransductionError>>()?
            }
            StageDecl::Reduce { function, scope: Scope::PerSource, per_source } => {
                let mut next = Vec::new();
                for g in &groups {
                    let name = function_for(function, per_source, &g.name).unwrap_or_default();
                    let reducer = build_reducer(def, types, name, &backend)?;
                    let out = mapreduce::reduce(tracer, &reducer, &g.states, policy)
                        .await
                        .map_err(|e| fail(format!("`{}`: {e}", g.name), None))?;
                    next.push(Group {
                        name: g.name.clone(),
                        states: vec![out.result.state],
                    });
                }
                next
            }
            StageDecl::Reduce { function, scope: Scope::All, .. } => {
                let reducer = build_reducer(def, types, function.as_deref().unwrap_or_default(), &backend)?;
                let all: Vec<State> = groups.iter().flat_map(|g| g.states.iter().cloned()).collect();
                let out = mapreduce::reduce(tracer, &reducer, &all, policy)
                    .await
                    .map_err(|e| fail(e.to_string(), None))?;
                vec![Group {
                    name: "all".into(),
                    states: vec![out.result.state],
                }]
            }
        };
    }
    Ok(groups)
}

/// Canonical JSON array of every final state, in group order.
pub fn render_output(groups: &[Group]) -> String {
    let states: Vec<Json> = groups.iter().flat_map(|g| g.states.iter().map(State::to_json_value)).collect();
    format!("{}\n", Json::Array(states))
}

// ---- command implementations -------------------------------------------

/// `validate`: the report to print, and whether the workflow is clean.
pub fn cmd_validate(path: impl AsRef<Path>) -> (String, bool) {
    let path = path.as_ref();
    let workflow = match Workflow::load(path) {
        Ok(w) => w,
        Err(e) => return (format!("error: {e}\n"), false),
    };
    let policy = match workflow.policy(&PolicyOverrides::default()) {
        Ok(p) => p,
        Err(e) => return (format!("error: policy: {e}\n"), false),
    };
    match check(&workflow, &policy) {
        Ok(checked) => {
            let rows: usize = checked.sources.iter().map(|s| s.states.len()).sum();
            let ends: Vec<String> = checked.final_groups.iter().map(|(g, t)| format!("{g}: {}", t.name())).collect();
            let report = format!(
                "{}: ok ({} sources, {rows} rows, {} stages; produces {})\n",
                path.display(),
                checked.sources.len(),
                workflow.definition.stages.len(),
                ends.join(", ")
            );
            (report, true)
        }
        Err(diags) => {
            let mut report = String::new();
            for d in &diags {
                let _ = writeln!(report, "error: {d}");
            }
            let _ = writeln!(report, "{}: {} problem(s)", path.display(), diags.len());
            (report, false)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum BackendChoice {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub backend: BackendChoice,
    /// Overrides the workflow's `mock_rules`.
    pub rules: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/trace.jsonl`.
    pub trace: Option<PathBuf>,
    pub policy: PolicyOverrides,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output: PathBuf,
    pub trace: PathBuf,
    pub states: usize,
    pub records: usize,
}

fn make_backend(workflow: &Workflow, options: &RunOptions) -> Result<Arc<dyn Backend>, WorkflowError> {
    Ok(match options.backend {
        BackendChoice::Mock => {
            let rules = options
                .rules
                .clone()
                .or_else(|| workflow.definition.mock_rules.as_ref().map(|r| workflow.resolve(r)))
                .ok_or_else(|| TransductionError::Config("the mock backend needs a rules file (--rules)".into()))?;
            Arc::new(MockRules::load(rules)?.into_backend()?)
        }
        BackendChoice::Http => {
            let cfg = workflow.definition.http.clone().unwrap_or_default().backend_config();
            Arc::new(HttpBackend::from_config(cfg)?)
        }
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), WorkflowError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| WorkflowError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, contents).map_err(|e| WorkflowError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// `run`: checks, builds the backend (failing before any network use if it
/// is misconfigured), executes, and writes the output and the trace. The
/// trace is written even when the run fails.
pub async fn cmd_run(path: impl AsRef<Path>, options: &RunOptions) -> Result<RunSummary, WorkflowError> {
    let workflow = Workflow::load(path)?;
    let policy = workflow.policy(&options.policy)?;
    let checked = check(&workflow, &policy).map_err(WorkflowError::Invalid)?;
    let backend = make_backend(&workflow, options)?;
    let tracer = Tracer::new();
    let outcome = execute(&workflow, &checked, backend, &tracer, &policy, &options.out_dir).await;
    let trace_path = options.trace.clone().unwrap_or_else(|| options.out_dir.join("trace.jsonl"));
    let log = tracer.log();
    write_file(&trace_path, &log.to_jsonl())?;
    let groups = outcome?;
    let file = workflow.definition.output.as_ref().map_or_else(default_output_file, |o| o.file.clone());
    let output = options.out_dir.join(file);
    write_file(&output, &render_output(&groups))?;
    Ok(RunSummary {
        output,
        trace: trace_path,
        states: groups.iter().map(|g| g.states.len()).sum(),
        records: log.len(),
    })
}

fn load_trace(path: &Path) -> Result<TraceLog, WorkflowError> {
    let file = std::fs::File::open(path).map_err(|e| WorkflowError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(TraceLog::from_jsonl(std::io::BufReader::new(file))?)
}

fn kind_name(kind: crate::trace::KernelKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// `trace show`: one line per record in id order, or one record in full.
pub fn cmd_trace_show(path: impl AsRef<Path>, id: Option<RecordId>) -> Result<String, WorkflowError> {
    let log = load_trace(path.as_ref())?;
    let mut out = String::new();
    match id {
        None => {
            for r in log.records() {
                let parent = r.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
                let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                let _ = write!(
                    out,
                    "#{:<4} parent {:<4} {:<13} {} << {}  {status}",
                    r.id,
                    parent,
                    kind_name(r.function.kind),
                    r.function.target,
                    r.function.source
                );
                if let Some(elements) = &r.elements {
                    if let (Some(first), Some(last)) = (elements.first(), elements.last()) {
                        let _ = write!(out, "  elements {first}..={last}");
                    }
                }
                if r.retry_count > 0 {
                    let _ = write!(out, "  retries {}", r.retry_count);
                }
                if let Some(e) = &r.error {
                    let _ = write!(out, "  error: {e}");
                }
                out.push('\n');
            }
            let _ = writeln!(out, "{} records", log.len());
        }
        Some(id) => {
            let r = log.get(id).ok_or(TraceError::UnknownRecord(id))?;
            let pretty = serde_json::to_string_pretty(&r.without_timestamps()).unwrap_or_default();
            let _ = writeln!(out, "{pretty}");
            let _ = writeln!(out, "duration: {} us", r.finished_at_us.saturating_sub(r.started_at_us));
        }
    }
    Ok(out)
}

/// `trace lineage`: the ancestor chain and the per-slot evidence closure.
pub fn cmd_trace_lineage(path: impl AsRef<Path>, id: RecordId) -> Result<String, WorkflowError> {
    let log = load_trace(path.as_ref())?;
    let lineage = log.lineage(id)?;
    let mut out = String::new();
    let chain: Vec<String> = lineage
        .chain
        .iter()
        .map(|i| {
            let r = log.get(*i).expect("chain ids exist");
            format!("#{i} {} ({} << {})", kind_name(r.function.kind), r.function.target, r.function.source)
        })
        .collect();
    let _ = writeln!(out, "chain: {}", chain.join(" <- "));
    let record = log.get(id).expect("lineage checked the id");
    let _ = writeln!(out, "evidence for `{}` slots (from `{}`):", record.function.target, record.function.source);
    if lineage.closure.is_empty() {
        let _ = writeln!(out, "  (none recorded)");
    }
    for (slot, inputs) in lineage.closure.iter() {
        let inputs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        let _ = writeln!(out, "  {slot} <- {}", inputs.join(", "));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    fn workflow_text(stage_fn: &str) -> String {
        json!({
            "types": {
                "Row": {"slots": [{"name": "n", "type": "integer"}]},
                "Total": {"slots": [{"name": "total", "type": "integer"}]}
            },
            "sources": [{"name": "rows", "path": "rows.csv", "format": "csv", "type": "Row"}],
            "functions": {
                "sum": {"target": "Total", "source": "Row", "combiner": "add"},
                "add": {"target": "Total", "source": "Total"},
                "copy": {"target": "Row", "source": "Row"}
            },
            "stages": [{"kind": "reduce", "function": stage_fn}],
            "output": {"type": "Total"},
            "mock_rules": "rules.json"
        })
        .to_string()
    }

    fn setup(stage_fn: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "rows.csv", "n\n1\n2\n3\n4\n5\n6\n7\n8\n9\n10\n");
        write(
            dir.path(),
            "rules.json",
            r#"{"rules": [
                {"name": "sum", "source": "Row", "target": "Total", "fields": {"total": {"sum": "n"}}},
                {"name": "add", "source": "Total", "target": "Total", "fields": {"total": {"sum": "total"}}}
            ]}"#,
        );
        let wf = write(dir.path(), "workflow.json", &workflow_text(stage_fn));
        (dir, wf)
    }

    #[test]
    fn validate_reports_clean_and_mismatched() {
        let (_dir, wf) = setup("sum");
        let (report, ok) = cmd_validate(&wf);
        assert!(ok, "{report}");
        let (_dir, wf) = setup("copy");
        let (report, ok) = cmd_validate(&wf);
        assert!(!ok);
        assert!(report.contains("output"), "{report}");
    }

    #[test]
    fn missing_data_file_is_a_diagnostic() {
        let (dir, wf) = setup("sum");
        std::fs::remove_file(dir.path().join("rows.csv")).unwrap();
        let (report, ok) = cmd_validate(&wf);
        assert!(!ok);
        assert!(report.contains("not found"), "{report}");
    }

    #[tokio::test]
    async fn staged_run_and_trace_commands() {
        let (dir, wf) = setup("sum");
        let options = RunOptions {
            out_dir: dir.path().join("out"),
            policy: PolicyOverrides { batch_size: Some(3), ..Default::default() },
            ..Default::default()
        };
        let summary = cmd_run(&wf, &options).await.unwrap();
        assert_eq!(std::fs::read_to_string(&summary.output).unwrap(), "[{\"total\":55}]\n");
        assert_eq!(summary.records, 7);
        let shown = cmd_trace_show(&summary.trace, None).unwrap();
        assert!(shown.ends_with("7 records\n"));
        let lineage = cmd_trace_lineage(&summary.trace, 1).unwrap();
        assert!(lineage.contains("total <- n"), "{lineage}");
        assert!(matches!(cmd_trace_lineage(&summary.trace, 99), Err(WorkflowError::Trace(TraceError::UnknownRecord(99)))));
    }

    #[tokio::test]
    async fn batch_size_one_is_rejected() {
        let (dir, wf) = setup("sum");
        let options = RunOptions {
            out_dir: dir.path().join("out"),
            policy: PolicyOverrides { batch_size: Some(1), ..Default::default() },
            ..Default::default()
        };
        let err = cmd_run(&wf, &options).await.unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[tokio::test]
    async fn http_without_key_fails_before_running() {
        let (dir, wf) = setup("sum");
        let mut def = Workflow::load(&wf).unwrap().definition;
        def.http = Some(HttpDecl {
            api_key_env: Some("TRANSDUCE_WORKFLOW_TEST_UNSET_KEY".into()),
            ..Default::default()
        });
        let wf = write(dir.path(), "http.json", &serde_json::to_string(&def).unwrap());
        let options = RunOptions {
            backend: BackendChoice::Http,
            out_dir: dir.path().join("out"),
            ..Default::default()
        };
        match cmd_run(&wf, &options).await.unwrap_err() {
            WorkflowError::Transduction(TransductionError::Config(msg)) => {
                assert!(msg.contains("TRANSDUCE_WORKFLOW_TEST_UNSET_KEY"))
            }
            other => panic!("unexpected {other}"),
        }
        assert!(!dir.path().join("out").exists());
    }
}
