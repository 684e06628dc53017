use serde_json::Value as Json;

use crate::error::{Result, TransductionError};
use crate::provenance::{Explanation, ProvenanceMap, Transduced};
use crate::schema::{RecordType, SchemaError};

/// Removes a surrounding Markdown code fence, if any.
pub fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn envelope_mismatch(slot: &str, expected: &str, found: &Json) -> TransductionError {
    let found = match found {
        Json::Null => "null",
        Json::Bool(_) => "boolean",
        Json::Number(_) => "number",
        Json::String(_) => "text",
        Json::Array(_) => "list",
        Json::Object(_) => "record",
    };
    TransductionError::SchemaViolation(SchemaError::TypeMismatch {
        slot: slot.into(),
        expected: expected.into(),
        found: found.into(),
    })
}

fn string_list(json: &Json, slot: &str) -> Result<Vec<String>> {
    let items = json
        .as_array()
        .ok_or_else(|| envelope_mismatch(slot, "list<text>", json))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            item.as_str()
                .map(String::from)
                .ok_or_else(|| envelope_mismatch(&format!("{slot}[{i}]"), "text", item))
        })
        .collect()
}

/// Parses a reply envelope and checks every part of the output contract.
///
/// A missing `provenance` field defaults every output slot to the cited
/// `relevant_source_attributes`.
pub fn decode_and_validate(raw: &str, source: &RecordType, target: &RecordType) -> Result<Transduced> {
    let json: Json = serde_json::from_str(strip_code_fence(raw)).map_err(|e| TransductionError::Parse(e.to_string()))?;
    let envelope = json
        .as_object()
        .ok_or_else(|| TransductionError::Parse("reply is not a JSON object".into()))?;
    let field = |name: &str| {
        envelope
            .get(name)
            .ok_or_else(|| TransductionError::SchemaViolation(SchemaError::MissingSlot(name.into())))
    };

    let state = target
        .validate(field("value")?)
        .map_err(TransductionError::SchemaViolation)?;
    let explanation_json = field("explanation")?;
    let explanation = explanation_json
        .as_str()
        .ok_or_else(|| envelope_mismatch("explanation", "text", explanation_json))?
        .to_string();
    let relevant = string_list(field("relevant_source_attributes")?, "relevant_source_attributes")?;
    let confidence_json = field("confidence")?;
    let confidence = confidence_json
        .as_f64()
        .ok_or_else(|| envelope_mismatch("confidence", "real", confidence_json))?;

    let explanation = Explanation::new(explanation, relevant, confidence);
    explanation.check(source)?;

    let provenance = match envelope.get("provenance") {
        None | Some(Json::Null) => {
            ProvenanceMap::uniform(target, explanation.relevant_source_attributes.iter().map(String::as_str))
        }
        Some(Json::Object(entries)) => {
            let mut map = ProvenanceMap::new();
            for (slot, inputs) in entries {
                map.insert(slot.clone(), string_list(inputs, &format!("provenance.{slot}"))?);
            }
            map
        }
        Some(other) => return Err(envelope_mismatch("provenance", "record", other)),
    };
    provenance.check(source, target)?;

    Ok(Transduced {
        state,
        explanation,
        provenance,
    })
}
