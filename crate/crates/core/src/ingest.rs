//! Getting typed states out of generic inputs: CSV tables, JSON arrays and
//! free text.
//!
//! The table and JSON paths are pure. Free text goes through a transducible
//! function from [`generic_input`], a one-slot `content: text` record.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use serde_json::{Map, Value as Json};

use crate::backend::Backend;
use crate::error::Result;
use crate::provenance::Transduced;
use crate::schema::{BasicKind, RecordType, SchemaError, SlotSpec, State, TypeExpr};
use crate::trace::Tracer;
use crate::transduction::{make_transduction, TransductionConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("no column binds to required slot `{0}`")]
    HeaderBindingFailure(String),
    #[error("header map names column `{0}`, which is not in the file")]
    UnknownColumn(String),
    #[error("header map binds to `{0}`, which is not a slot")]
    UnknownSlot(String),
    #[error("row {row}, column `{column}`: expected {expected}, found {found:?}")]
    RowCoercionError {
        /// 1-based data row; the header is not counted.
        row: usize,
        column: String,
        expected: String,
        found: String,
    },
    #[error("row {row}: {error}")]
    RowInvalid { row: usize, error: SchemaError },
    #[error("csv: {0}")]
    CsvParse(String),
    #[error("element {index}: {error}")]
    Element { index: usize, error: SchemaError },
    #[error("json: {0}")]
    JsonParse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Lowercase and keep only alphanumerics, so `"Credit History"` and
/// `credit_history` both become `credithistory`.
pub fn normalize_header(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Column index for each slot, or `None` for an unbound optional slot.
fn bind_headers(
    headers: &[String],
    ty: &RecordType,
    header_map: Option<&IndexMap<String, String>>,
) -> Result<Vec<Option<usize>>, IngestError> {
    let mut bound: Vec<Option<usize>> = vec![None; ty.len()];
    if let Some(map) = header_map {
        for (column, slot) in map {
            let col = headers
                .iter()
                .position(|h| h == column)
                .ok_or_else(|| IngestError::UnknownColumn(column.clone()))?;
            let idx = ty.slot_index(slot).ok_or_else(|| IngestError::UnknownSlot(slot.clone()))?;
            bound[idx] = Some(col);
        }
    }
    let normalized: Vec<String> = headers.iter().map(|h| normalize_header(h)).collect();
    for (idx, slot) in ty.slots().iter().enumerate() {
        if bound[idx].is_some() {
            continue;
        }
        let key = normalize_header(&slot.name);
        bound[idx] = normalized.iter().position(|h| *h == key);
        if bound[idx].is_none() && !slot.optional {
            return Err(IngestError::HeaderBindingFailure(slot.name.clone()));
        }
    }
    Ok(bound)
}

fn coerce_cell(cell: &str, slot: &SlotSpec, row: usize, column: &str) -> Result<Json, IngestError> {
    let fail = || IngestError::RowCoercionError {
        row,
        column: column.to_string(),
        expected: slot.slot_type.to_string(),
        found: cell.to_string(),
    };
    let trimmed = cell.trim();
    if trimmed.is_empty() && (slot.optional || !matches!(slot.slot_type, TypeExpr::Basic(BasicKind::Text))) {
        return if slot.optional { Ok(Json::Null) } else { Err(fail()) };
    }
    match &slot.slot_type {
        TypeExpr::Basic(BasicKind::Text) => Ok(Json::String(cell.to_string())),
        TypeExpr::Basic(BasicKind::Integer) => trimmed.parse::<i64>().map(Json::from).map_err(|_| fail()),
        TypeExpr::Basic(BasicKind::Real) => trimmed
            .parse::<f64>()
            .ok()
            .filter(|r| r.is_finite())
            .map(Json::from)
            .ok_or_else(fail),
        TypeExpr::Basic(BasicKind::Boolean) => match trimmed.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(Json::Bool(true)),
            "false" | "no" | "0" => Ok(Json::Bool(false)),
            _ => Err(fail()),
        },
        TypeExpr::List(_) | TypeExpr::Record(_) => serde_json::from_str(trimmed).map_err(|_| fail()),
    }
}

/// One state per data row, in row order.
///
/// Without `header_map` (column → slot), columns bind to slots by
/// [`normalize_header`] equality; explicit entries take precedence.
/// Extra columns are ignored.
pub fn from_csv(
    reader: impl Read,
    ty: &RecordType,
    header_map: Option<&IndexMap<String, String>>,
) -> Result<Vec<State>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = csv
        .headers()
        .map_err(|e| IngestError::CsvParse(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let bound = bind_headers(&headers, ty, header_map)?;
    let mut states = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IngestError::CsvParse(e.to_string()))?;
        let mut object = Map::new();
        for (slot, col) in ty.slots().iter().zip(&bound) {
            let value = match col {
                Some(col) => coerce_cell(record.get(*col).unwrap_or(""), slot, row, &headers[*col])?,
                None => Json::Null,
            };
            object.insert(slot.name.clone(), value);
        }
        let state = ty
            .validate(&Json::Object(object))
            .map_err(|error| IngestError::RowInvalid { row, error })?;
        states.push(state);
    }
    Ok(states)
}

pub fn from_csv_path(
    path: impl AsRef<Path>,
    ty: &RecordType,
    header_map: Option<&IndexMap<String, String>>,
) -> Result<Vec<State>, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    from_csv(std::io::BufReader::new(file), ty, header_map)
}

/// Validates each element of a JSON array, keeping order.
pub fn from_json_array(text: &str, ty: &RecordType) -> Result<Vec<State>, IngestError> {
    let json: Json = serde_json::from_str(text).map_err(|e| IngestError::JsonParse(e.to_string()))?;
    let items = json
        .as_array()
        .ok_or_else(|| IngestError::JsonParse("expected a JSON array".into()))?;
    items
        .iter()
        .enumerate()
        .map(|(index, item)| ty.validate(item).map_err(|error| IngestError::Element { index, error }))
        .collect()
}

pub fn from_json_path(path: impl AsRef<Path>, ty: &RecordType) -> Result<Vec<State>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    from_json_array(&text, ty)
}

/// The built-in generic input: `GenericInput { content: text }`.
pub fn generic_input() -> RecordType {
    RecordType::new(
        "GenericInput",
        vec![SlotSpec::new("content", TypeExpr::text()).described("raw input text")],
    )
    .expect("valid built-in type")
}

/// Types free text as `ty` with a backend-realized `ty << GenericInput`.
pub async fn from_text(
    tracer: &Tracer,
    text: &str,
    ty: &RecordType,
    backend: Arc<dyn Backend>,
    config: TransductionConfig,
) -> Result<Transduced> {
    let g = generic_input();
    let input = g
        .validate(&serde_json::json!({ "content": text }))
        .expect("text always fits GenericInput");
    make_transduction(ty, &g, config, backend)?.invoke(tracer, &input).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FieldExpr, MockBackend, MockRule, RuleMatch};
    use crate::error::TransductionError;
    use serde_json::json;

    fn x() -> RecordType {
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
    fn rows_bind_by_name_in_any_order() {
        let data = "income,debt,credit_history,last_name\n60000,25000,late payment in 2021,Smith\n82000,1000,clean,Jones\n";
        let states = from_csv(data.as_bytes(), &x(), None).unwrap();
        assert_eq!(states.len(), 2);
        assert_eq!(
            states[0].to_json(),
            r#"{"last_name":"Smith","income":60000.0,"debt":25000.0,"credit_history":"late payment in 2021"}"#
        );
    }

    #[test]
    fn normalized_headers() {
        assert_eq!(normalize_header("Credit History"), "credithistory");
        let data = "Last-Name,INCOME,Debt,Credit History,extra\nSmith,1,2,none,ignored\n";
        let states = from_csv(data.as_bytes(), &x(), None).unwrap();
        assert_eq!(states[0].get("credit_history").unwrap().as_text(), Some("none"));
    }

    #[test]
    fn coercion_error_names_row_and_column() {
        let data = "income,debt,credit_history,last_name\n1,2,a,b\nlots,2,a,b\n";
        match from_csv(data.as_bytes(), &x(), None).unwrap_err() {
            IngestError::RowCoercionError { row, column, expected, .. } => {
                assert_eq!((row, column.as_str(), expected.as_str()), (2, "income", "real"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_required_column_and_explicit_map() {
        let data = "surname,income,debt,credit_history\nSmith,1,2,a\n";
        assert_eq!(
            from_csv(data.as_bytes(), &x(), None).unwrap_err(),
            IngestError::HeaderBindingFailure("last_name".into())
        );
        let map: IndexMap<String, String> = [("surname".to_string(), "last_name".to_string())].into_iter().collect();
        let states = from_csv(data.as_bytes(), &x(), Some(&map)).unwrap();
        assert_eq!(states[0].get("last_name").unwrap().as_text(), Some("Smith"));
    }

    #[test]
    fn optional_cells_and_booleans() {
        let ty = RecordType::new(
            "R",
            vec![
                SlotSpec::new("flag", TypeExpr::boolean()),
                SlotSpec::new("note", TypeExpr::text()).optional(),
                SlotSpec::new("n", TypeExpr::integer()).optional(),
                SlotSpec::new("tags", TypeExpr::list(TypeExpr::text())).optional(),
            ],
        )
        .unwrap();
        let data = "flag,note,n,tags\nyes,,,\"[\"\"a\"\"]\"\n0,hi,3,\n";
        let states = from_csv(data.as_bytes(), &ty, None).unwrap();
        assert_eq!(states[0].to_json(), r#"{"flag":true,"note":null,"n":null,"tags":["a"]}"#);
        assert_eq!(states[1].to_json(), r#"{"flag":false,"note":"hi","n":3,"tags":null}"#);
    }

    #[test]
    fn json_arrays() {
        assert!(from_json_array("[]", &x()).unwrap().is_empty());
        let text = r#"[{"last_name":"Smith","income":60000,"debt":25000,"credit_history":"late"},{"last_name":"Jones"}]"#;
        match from_json_array(text, &x()).unwrap_err() {
            IngestError::Element { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected {other}"),
        }
        let ok = r#"[{"last_name":"Smith","income":60000.5,"debt":25000.5,"credit_history":"late"}]"#;
        let states = from_json_array(ok, &x()).unwrap();
        let back: Json = serde_json::from_str(&states[0].to_json()).unwrap();
        assert_eq!(back, serde_json::from_str::<Json>(ok).unwrap()[0]);
    }

    #[tokio::test]
    async fn free_text_through_backend() {
        let all_optional = RecordType::new(
            "Maybe",
            vec![SlotSpec::new("name", TypeExpr::text()).optional()],
        )
        .unwrap();
        let mock = MockBackend::new(vec![
            MockRule::fields("nothing", RuleMatch::types("GenericInput", "Maybe"), [("name", FieldExpr::Const(Json::Null))]),
            MockRule::fields("bad", RuleMatch::types("GenericInput", "X"), [("income", FieldExpr::Const(json!("lots")))]),
        ]);
        let backend: Arc<dyn Backend> = Arc::new(mock);
        let out = from_text(&Tracer::new(), "", &all_optional, backend.clone(), TransductionConfig::default()).await.unwrap();
        assert_eq!(out.state.to_json(), r#"{"name":null}"#);
        let err = from_text(&Tracer::new(), "Smith earns a lot", &x(), backend, TransductionConfig::default()).await.unwrap_err();
        assert!(matches!(err, TransductionError::SchemaViolation(_)));
    }
}
