//! Record types, states and their JSON forms.
//!
//! A [`RecordType`] is a named, ordered list of described slots. Slot types are
//! basic kinds, lists, or nested records. A [`State`] is a value of a record
//! type that has passed [`RecordType::validate`]; there is no other way to
//! obtain one, so holding a `State` means holding well-typed data.
//!
//! Record types compare structurally: two types are equal when their slots are
//! identical. The name is a label used in prompts, schemas and traces.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

/// Leaf kinds of the type grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasicKind {
    Text,
    Integer,
    Real,
    Boolean,
}

impl BasicKind {
    pub fn name(self) -> &'static str {
        match self {
            BasicKind::Text => "text",
            BasicKind::Integer => "integer",
            BasicKind::Real => "real",
            BasicKind::Boolean => "boolean",
        }
    }

    fn json_type(self) -> &'static str {
        match self {
            BasicKind::Text => "string",
            BasicKind::Integer => "integer",
            BasicKind::Real => "number",
            BasicKind::Boolean => "boolean",
        }
    }
}

/// The type of a slot.
#[derive(Debug, Clone, PartialEq)]
pub enum TypeExpr {
    Basic(BasicKind),
    List(Box<TypeExpr>),
    Record(RecordType),
}

impl TypeExpr {
    pub fn text() -> Self {
        TypeExpr::Basic(BasicKind::Text)
    }

    pub fn integer() -> Self {
        TypeExpr::Basic(BasicKind::Integer)
    }

    pub fn real() -> Self {
        TypeExpr::Basic(BasicKind::Real)
    }

    pub fn boolean() -> Self {
        TypeExpr::Basic(BasicKind::Boolean)
    }

    pub fn list(element: TypeExpr) -> Self {
        TypeExpr::List(Box::new(element))
    }

    pub fn record(ty: &RecordType) -> Self {
        TypeExpr::Record(ty.clone())
    }

    /// Short human-readable form, e.g. `list<text>` or `record Question`.
    pub fn describe(&self) -> String {
        match self {
            TypeExpr::Basic(kind) => kind.name().to_string(),
            TypeExpr::List(elem) => format!("list<{}>", elem.describe()),
            TypeExpr::Record(ty) => format!("record {}", ty.name()),
        }
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// One named, described slot of a record type.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSpec {
    pub name: String,
    pub slot_type: TypeExpr,
    pub description: String,
    pub optional: bool,
    /// Enumerated values for a text slot.
    pub allowed: Option<Vec<String>>,
}

impl SlotSpec {
    pub fn new(name: impl Into<String>, slot_type: TypeExpr) -> Self {
        SlotSpec {
            name: name.into(),
            slot_type,
            description: String::new(),
            optional: false,
            allowed: None,
        }
    }

    pub fn described(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn optional(mut self) -> Self {
        self.optional = true;
        self
    }

    pub fn one_of<I, S>(mut self, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.allowed = Some(values.into_iter().map(Into::into).collect());
        self
    }

    /// Whether two slots can be unified by a merge: same type and same value constraint.
    pub(crate) fn same_shape(&self, other: &SlotSpec) -> bool {
        self.slot_type == other.slot_type && self.allowed == other.allowed
    }
}

#[derive(Debug)]
struct RecordInner {
    name: String,
    slots: Vec<SlotSpec>,
}

/// A named, finite, ordered record of slots. Cheap to clone.
#[derive(Clone)]
pub struct RecordType {
    inner: Arc<RecordInner>,
}

impl fmt::Debug for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecordType")
            .field("name", &self.inner.name)
            .field("slots", &self.inner.slots)
            .finish()
    }
}

impl PartialEq for RecordType {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.slots == other.inner.slots
    }
}

impl RecordType {
    /// Builds a record type, rejecting duplicate or empty slot names and
    /// enumerations on non-text slots.
    ///
    /// Cycles cannot be expressed through this constructor because nested
    /// records must already exist; named declarations that may refer to each
    /// other go through [`TypeRegistry::define_all`].
    pub fn new(name: impl Into<String>, slots: Vec<SlotSpec>) -> Result<Self, SchemaError> {
        let name = name.into();
        let mut seen = HashSet::new();
        for slot in &slots {
            if slot.name.is_empty() {
                return Err(SchemaError::EmptySlotName(name));
            }
            if !seen.insert(slot.name.as_str()) {
                return Err(SchemaError::DuplicateSlot(slot.name.clone()));
            }
            if slot.allowed.is_some() && slot.slot_type != TypeExpr::text() {
                return Err(SchemaError::InvalidEnum(slot.name.clone()));
            }
        }
        Ok(RecordType {
            inner: Arc::new(RecordInner { name, slots }),
        })
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn slots(&self) -> &[SlotSpec] {
        &self.inner.slots
    }

    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.inner.slots.iter().find(|s| s.name == name)
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.inner.slots.iter().position(|s| s.name == name)
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.inner.slots.iter().map(|s| s.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.inner.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.slots.is_empty()
    }

    /// Same slots under a different label.
    pub fn renamed(&self, name: impl Into<String>) -> RecordType {
        RecordType {
            inner: Arc::new(RecordInner {
                name: name.into(),
                slots: self.inner.slots.clone(),
            }),
        }
    }

    /// Checks a candidate JSON object against this type.
    ///
    /// Declared slots are checked in order, then undeclared keys; the first
    /// problem found is returned. The only coercion is integer to real.
    pub fn validate(&self, candidate: &Json) -> Result<State, SchemaError> {
        validate_record(self, candidate, "")
    }

    /// Parses JSON text and validates it.
    pub fn parse(&self, text: &str) -> Result<State, SchemaError> {
        let json: Json =
            serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        self.validate(&json)
    }

    /// JSON Schema describing exactly the objects [`RecordType::validate`] accepts.
    pub fn json_schema(&self) -> Json {
        record_schema(self)
    }
}

fn join_path(prefix: &str, slot: &str) -> String {
    if prefix.is_empty() {
        slot.to_string()
    } else {
        format!("{prefix}.{slot}")
    }
}

fn json_kind(value: &Json) -> &'static str {
    match value {
        Json::Null => "null",
        Json::Bool(_) => "boolean",
        Json::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Json::Number(_) => "real",
        Json::String(_) => "text",
        Json::Array(_) => "list",
        Json::Object(_) => "record",
    }
}

fn validate_record(ty: &RecordType, candidate: &Json, path: &str) -> Result<State, SchemaError> {
    let object = candidate.as_object().ok_or_else(|| SchemaError::TypeMismatch {
        slot: if path.is_empty() { "<root>".into() } else { path.to_string() },
        expected: format!("record {}", ty.name()),
        found: json_kind(candidate).into(),
    })?;
    let mut values = Vec::with_capacity(ty.len());
    for slot in ty.slots() {
        let slot_path = join_path(path, &slot.name);
        let value = match object.get(&slot.name) {
            None | Some(Json::Null) if slot.optional => Value::Null,
            None => return Err(SchemaError::MissingSlot(slot_path)),
            Some(json) => {
                let value = validate_value(&slot.slot_type, json, &slot_path)?;
                if let (Some(allowed), Value::Text(text)) = (&slot.allowed, &value) {
                    if !allowed.iter().any(|a| a == text) {
                        return Err(SchemaError::ValueNotAllowed {
                            slot: slot_path,
                            value: text.clone(),
                        });
                    }
                }
                value
            }
        };
        values.push(value);
    }
    if let Some(extra) = object.keys().find(|k| ty.slot(k).is_none()) {
        return Err(SchemaError::UnknownSlot(join_path(path, extra)));
    }
    Ok(State {
        ty: ty.clone(),
        values,
    })
}

fn validate_value(expected: &TypeExpr, json: &Json, path: &str) -> Result<Value, SchemaError> {
    let mismatch = || SchemaError::TypeMismatch {
        slot: path.to_string(),
        expected: expected.describe(),
        found: json_kind(json).into(),
    };
    match expected {
        TypeExpr::Basic(kind) => match (kind, json) {
            (BasicKind::Text, Json::String(s)) => Ok(Value::Text(s.clone())),
            (BasicKind::Boolean, Json::Bool(b)) => Ok(Value::Boolean(*b)),
            (BasicKind::Integer, Json::Number(n)) => n.as_i64().map(Value::Integer).ok_or_else(mismatch),
            (BasicKind::Real, Json::Number(n)) => n.as_f64().map(Value::Real).ok_or_else(mismatch),
            _ => Err(mismatch()),
        },
        TypeExpr::List(element) => {
            let items = json.as_array().ok_or_else(mismatch)?;
            items
                .iter()
                .enumerate()
                .map(|(i, item)| validate_value(element, item, &format!("{path}[{i}]")))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::List)
        }
        TypeExpr::Record(ty) => validate_record(ty, json, path).map(Value::Record),
    }
}

fn with_description(mut schema: Map<String, Json>, description: &str) -> Json {
    if !description.is_empty() {
        schema.insert("description".into(), Json::String(description.into()));
    }
    Json::Object(schema)
}

fn type_schema(expr: &TypeExpr) -> Map<String, Json> {
    match expr {
        TypeExpr::Basic(kind) => {
            let mut m = Map::new();
            m.insert("type".into(), Json::String(kind.json_type().into()));
            m
        }
        TypeExpr::List(element) => {
            let mut m = Map::new();
            m.insert("type".into(), "array".into());
            m.insert("items".into(), Json::Object(type_schema(element)));
            m
        }
        TypeExpr::Record(ty) => match record_schema(ty) {
            Json::Object(m) => m,
            _ => unreachable!("record schema is an object"),
        },
    }
}

fn record_schema(ty: &RecordType) -> Json {
    let mut properties = Map::new();
    let mut required = Vec::new();
    for slot in ty.slots() {
        let mut schema = type_schema(&slot.slot_type);
        if let Some(allowed) = &slot.allowed {
            schema.insert(
                "enum".into(),
                allowed.iter().map(|a| Json::String(a.clone())).collect(),
            );
        }
        let schema = if slot.optional {
            let mut wrapper = Map::new();
            wrapper.insert(
                "anyOf".into(),
                Json::Array(vec![Json::Object(schema), serde_json::json!({"type": "null"})]),
            );
            wrapper
        } else {
            required.push(Json::String(slot.name.clone()));
            schema
        };
        properties.insert(slot.name.clone(), with_description(schema, &slot.description));
    }
    let mut m = Map::new();
    m.insert("type".into(), "object".into());
    m.insert("title".into(), Json::String(ty.name().into()));
    m.insert("properties".into(), Json::Object(properties));
    m.insert("required".into(), Json::Array(required));
    m.insert("additionalProperties".into(), Json::Bool(false));
    Json::Object(m)
}

/// A slot value inside a [`State`].
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Text(String),
    List(Vec<Value>),
    Record(State),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Integer(i) => Some(*i),
            _ => None,
        }
    }

    /// Integers widen to reals.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_record(&self) -> Option<&State> {
        match self {
            Value::Record(state) => Some(state),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Boolean(b) => Json::Bool(*b),
            Value::Integer(i) => Json::from(*i),
            Value::Real(r) => serde_json::Number::from_f64(*r).map_or(Json::Null, Json::Number),
            Value::Text(s) => Json::String(s.clone()),
            Value::List(items) => Json::Array(items.iter().map(Value::to_json).collect()),
            Value::Record(state) => state.to_json_value(),
        }
    }
}

/// A validated instance of a [`RecordType`]. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    ty: RecordType,
    values: Vec<Value>,
}

impl State {
    /// The one state of a slotless record type.
    pub fn empty(ty: &RecordType) -> Result<State, SchemaError> {
        ty.validate(&Json::Object(Map::new()))
    }

    pub fn record_type(&self) -> &RecordType {
        &self.ty
    }

    pub fn get(&self, slot: &str) -> Option<&Value> {
        self.ty.slot_index(slot).map(|i| &self.values[i])
    }

    /// Slot values in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (&SlotSpec, &Value)> {
        self.ty.slots().iter().zip(&self.values)
    }

    /// JSON object with keys in declaration order; absent optional slots are `null`.
    pub fn to_json_value(&self) -> Json {
        let mut m = Map::with_capacity(self.values.len());
        for (slot, value) in self.iter() {
            m.insert(slot.name.clone(), value.to_json());
        }
        Json::Object(m)
    }

    /// Canonical text: UTF-8, declaration-order keys, no insignificant whitespace.
    pub fn to_json(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn from_json(text: &str, ty: &RecordType) -> Result<State, SchemaError> {
        ty.parse(text)
    }
}

/// Errors raised while defining types or validating candidate data.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("duplicate slot `{0}`")]
    DuplicateSlot(String),
    #[error("record `{0}` has a slot with an empty name")]
    EmptySlotName(String),
    #[error("cyclic type reference: {0}")]
    CyclicType(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("record `{0}` is already defined with different slots")]
    ConflictingDefinition(String),
    #[error("slot `{0}`: enumerated values are only allowed on text slots")]
    InvalidEnum(String),
    #[error("missing slot `{0}`")]
    MissingSlot(String),
    #[error("slot `{slot}`: expected {expected}, found {found}")]
    TypeMismatch {
        slot: String,
        expected: String,
        found: String,
    },
    #[error("unknown slot `{0}`")]
    UnknownSlot(String),
    #[error("slot `{slot}`: `{value}` is not an allowed value")]
    ValueNotAllowed { slot: String, value: String },
    #[error("parse error: {0}")]
    Parse(String),
}

/// Declarative slot, as written in workflow files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDecl {
    pub name: String,
    /// `text`, `integer`, `real`, `boolean`, `list<T>`, or the name of a declared record.
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub optional: bool,
    #[serde(default, rename = "enum", skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
}

/// Declarative record: an ordered list of slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDecl {
    #[serde(default)]
    pub description: String,
    pub slots: Vec<SlotDecl>,
}

/// Named record types. Re-registering an identical definition is a no-op.
#[derive(Debug, Default, Clone)]
pub struct TypeRegistry {
    types: HashMap<String, RecordType>,
}

impl TypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&RecordType> {
        self.types.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.types.contains_key(name)
    }

    pub fn define(&mut self, name: &str, slots: Vec<SlotSpec>) -> Result<RecordType, SchemaError> {
        let ty = RecordType::new(name, slots)?;
        self.insert(ty)
    }

    pub fn insert(&mut self, ty: RecordType) -> Result<RecordType, SchemaError> {
        match self.types.get(ty.name()) {
            Some(existing) if *existing == ty => Ok(existing.clone()),
            Some(_) => Err(SchemaError::ConflictingDefinition(ty.name().to_string())),
            None => {
                self.types.insert(ty.name().to_string(), ty.clone());
                Ok(ty)
            }
        }
    }

    /// Resolves a set of mutually referring declarations, in dependency order.
    pub fn define_all(&mut self, decls: &IndexMap<String, RecordDecl>) -> Result<(), SchemaError> {
        let mut resolver = Resolver {
            decls,
            stack: Vec::new(),
            done: HashSet::new(),
        };
        for name in decls.keys() {
            self.resolve_record(name, &mut resolver)?;
        }
        Ok(())
    }

    fn resolve_record(&mut self, name: &str, r: &mut Resolver<'_>) -> Result<RecordType, SchemaError> {
        if r.done.contains(name) {
            return Ok(self.types[name].clone());
        }
        if let Some(pos) = r.stack.iter().position(|n| n == name) {
            let mut cycle = r.stack[pos..].to_vec();
            cycle.push(name.to_string());
            return Err(SchemaError::CyclicType(cycle.join(" -> ")));
        }
        let Some(decl) = r.decls.get(name) else {
            return self
                .types
                .get(name)
                .cloned()
                .ok_or_else(|| SchemaError::UnknownType(name.to_string()));
        };
        r.stack.push(name.to_string());
        let mut slots = Vec::with_capacity(decl.slots.len());
        for slot in &decl.slots {
            let slot_type = self.resolve_expr(slot.type_name.trim(), r)?;
            slots.push(SlotSpec {
                name: slot.name.clone(),
                slot_type,
                description: slot.description.clone(),
                optional: slot.optional,
                allowed: slot.allowed.clone(),
            });
        }
        r.stack.pop();
        let ty = self.define(name, slots)?;
        r.done.insert(name.to_string());
        Ok(ty)
    }

    fn resolve_expr(&mut self, type_name: &str, r: &mut Resolver<'_>) -> Result<TypeExpr, SchemaError> {
        Ok(match type_name {
            "text" => TypeExpr::text(),
            "integer" => TypeExpr::integer(),
            "real" => TypeExpr::real(),
            "boolean" => TypeExpr::boolean(),
            other => {
                if let Some(inner) = other.strip_prefix("list<").and_then(|r| r.strip_suffix('>')) {
                    TypeExpr::list(self.resolve_expr(inner.trim(), r)?)
                } else {
                    TypeExpr::Record(self.resolve_record(other, r)?)
                }
            }
        })
    }
}

struct Resolver<'a> {
    decls: &'a IndexMap<String, RecordDecl>,
    stack: Vec<String>,
    done: HashSet<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn loan_application() -> RecordType {
        RecordType::new(
            "X",
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
    fn question_has_two_slots() {
        let q = RecordType::new(
            "Question",
            vec![
                SlotSpec::new("prompt", TypeExpr::text()),
                SlotSpec::new("options", TypeExpr::list(TypeExpr::text())),
            ],
        )
        .unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.slot_names().collect::<Vec<_>>(), ["prompt", "options"]);
    }

    #[test]
    fn empty_record_is_valid() {
        let empty = RecordType::new("Empty", vec![]).unwrap();
        assert!(empty.is_empty());
        let state = empty.validate(&json!({})).unwrap();
        assert_eq!(state.to_json(), "{}");
        assert_eq!(State::from_json("{}", &empty).unwrap(), state);
    }

    #[test]
    fn duplicate_slot_rejected() {
        let err = RecordType::new(
            "X",
            vec![
                SlotSpec::new("a", TypeExpr::text()),
                SlotSpec::new("a", TypeExpr::integer()),
            ],
        )
        .unwrap_err();
        assert_eq!(err, SchemaError::DuplicateSlot("a".into()));
    }

    #[test]
    fn enum_only_on_text() {
        let err = RecordType::new("X", vec![SlotSpec::new("n", TypeExpr::integer()).one_of(["1"])])
            .unwrap_err();
        assert_eq!(err, SchemaError::InvalidEnum("n".into()));
    }

    #[test]
    fn loan_application_validates_and_coerces_income() {
        let x = loan_application();
        let state = x
            .validate(&json!({
                "last_name": "Smith", "income": 60000, "debt": 25000,
                "credit_history": "late payment in 2021"
            }))
            .unwrap();
        assert_eq!(state.get("income"), Some(&Value::Real(60000.0)));
        let text = state.to_json();
        assert_eq!(
            text,
            r#"{"last_name":"Smith","income":60000.0,"debt":25000.0,"credit_history":"late payment in 2021"}"#
        );
        let again = State::from_json(&text, &x).unwrap();
        assert_eq!(again, state);
        assert_eq!(again.to_json(), text);
    }

    #[test]
    fn kind_violation_names_the_slot() {
        let err = loan_application()
            .validate(&json!({"last_name": "S", "income": "high", "debt": 1, "credit_history": ""}))
            .unwrap_err();
        assert_eq!(
            err,
            SchemaError::TypeMismatch {
                slot: "income".into(),
                expected: "real".into(),
                found: "text".into()
            }
        );
    }

    #[test]
    fn missing_and_unknown_slots() {
        let x = loan_application();
        let err = x.validate(&json!({"last_name": "S", "income": 1, "debt": 1})).unwrap_err();
        assert_eq!(err, SchemaError::MissingSlot("credit_history".into()));
        let err = x
            .validate(&json!({"last_name": "S", "income": 1, "debt": 1, "credit_history": "", "zip": 1}))
            .unwrap_err();
        assert_eq!(err, SchemaError::UnknownSlot("zip".into()));
    }

    #[test]
    fn no_coercion_from_real_to_integer() {
        let t = RecordType::new("T", vec![SlotSpec::new("n", TypeExpr::integer())]).unwrap();
        assert!(matches!(
            t.validate(&json!({"n": 1.5})),
            Err(SchemaError::TypeMismatch { .. })
        ));
        assert!(matches!(
            t.validate(&json!({"n": true})),
            Err(SchemaError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn malformed_text_is_parse_error() {
        let empty = RecordType::new("Empty", vec![]).unwrap();
        assert!(matches!(State::from_json("{", &empty), Err(SchemaError::Parse(_))));
    }

    #[test]
    fn optional_and_enum_slots() {
        let y = RecordType::new(
            "Y",
            vec![
                SlotSpec::new("risk_score", TypeExpr::integer()),
                SlotSpec::new("risk_class", TypeExpr::text()).one_of(["low", "medium", "high"]),
                SlotSpec::new("note", TypeExpr::text()).optional(),
            ],
        )
        .unwrap();
        let s = y.validate(&json!({"risk_score": 62, "risk_class": "medium"})).unwrap();
        assert_eq!(s.to_json(), r#"{"risk_score":62,"risk_class":"medium","note":null}"#);
        let err = y.validate(&json!({"risk_score": 62, "risk_class": "extreme"})).unwrap_err();
        assert!(matches!(err, SchemaError::ValueNotAllowed { .. }));
        let schema = y.json_schema();
        assert_eq!(schema["properties"]["risk_class"]["enum"], json!(["low", "medium", "high"]));
        assert_eq!(schema["required"], json!(["risk_score", "risk_class"]));
    }

    #[test]
    fn nested_errors_carry_paths() {
        let inner = RecordType::new("Inner", vec![SlotSpec::new("v", TypeExpr::integer())]).unwrap();
        let outer =
            RecordType::new("Outer", vec![SlotSpec::new("items", TypeExpr::list(TypeExpr::record(&inner)))])
                .unwrap();
        let err = outer.validate(&json!({"items": [{"v": 1}, {"v": "x"}]})).unwrap_err();
        assert_eq!(
            err,
            SchemaError::TypeMismatch {
                slot: "items[1].v".into(),
                expected: "integer".into(),
                found: "text".into()
            }
        );
    }

    #[test]
    fn answer_schema_requires_options_and_choice() {
        let answer = RecordType::new(
            "Answer",
            vec![
                SlotSpec::new("options", TypeExpr::list(TypeExpr::text())),
                SlotSpec::new("choice", TypeExpr::text()).described("the selected option"),
            ],
        )
        .unwrap();
        let schema = answer.json_schema();
        assert_eq!(schema["type"], "object");
        assert_eq!(schema["required"], json!(["options", "choice"]));
        assert_eq!(schema["properties"]["choice"]["description"], "the selected option");
        let empty = RecordType::new("Empty", vec![]).unwrap().json_schema();
        assert_eq!(empty["properties"], json!({}));
    }

    #[test]
    fn registry_is_idempotent_and_detects_conflicts() {
        let mut reg = TypeRegistry::new();
        let a = reg.define("A", vec![SlotSpec::new("x", TypeExpr::text())]).unwrap();
        let b = reg.define("A", vec![SlotSpec::new("x", TypeExpr::text())]).unwrap();
        assert_eq!(a, b);
        let err = reg.define("A", vec![SlotSpec::new("x", TypeExpr::integer())]).unwrap_err();
        assert_eq!(err, SchemaError::ConflictingDefinition("A".into()));
    }

    fn decl(slots: &[(&str, &str)]) -> RecordDecl {
        RecordDecl {
            description: String::new(),
            slots: slots
                .iter()
                .map(|(n, t)| SlotDecl {
                    name: n.to_string(),
                    type_name: t.to_string(),
                    description: String::new(),
                    optional: false,
                    allowed: None,
                })
                .collect(),
        }
    }

    #[test]
    fn declarations_resolve_out_of_order() {
        let mut decls = IndexMap::new();
        decls.insert("Answer".to_string(), decl(&[("evidence", "list<Evidence>")]));
        decls.insert("Evidence".to_string(), decl(&[("text", "text")]));
        let mut reg = TypeRegistry::new();
        reg.define_all(&decls).unwrap();
        let answer = reg.get("Answer").unwrap();
        assert_eq!(answer.slots()[0].slot_type.describe(), "list<record Evidence>");
    }

    #[test]
    fn cyclic_declarations_rejected() {
        let mut decls = IndexMap::new();
        decls.insert("A".to_string(), decl(&[("b", "B")]));
        decls.insert("B".to_string(), decl(&[("a", "list<A>")]));
        let err = TypeRegistry::new().define_all(&decls).unwrap_err();
        assert_eq!(err, SchemaError::CyclicType("A -> B -> A".into()));

        let mut selfref = IndexMap::new();
        selfref.insert("Node".to_string(), decl(&[("next", "Node")]));
        assert!(matches!(
            TypeRegistry::new().define_all(&selfref),
            Err(SchemaError::CyclicType(_))
        ));
    }

    #[test]
    fn unknown_type_reference() {
        let mut decls = IndexMap::new();
        decls.insert("A".to_string(), decl(&[("b", "Missing")]));
        assert_eq!(
            TypeRegistry::new().define_all(&decls).unwrap_err(),
            SchemaError::UnknownType("Missing".into())
        );
    }
}
