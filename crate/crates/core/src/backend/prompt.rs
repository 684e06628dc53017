use std::fmt::Write as _;

use serde_json::{json, Value as Json};

use super::KernelInput;
use crate::schema::{RecordType, SlotSpec, State};
use crate::transduction::TransductionConfig;

/// A fully assembled request: instructions and type descriptions in the
/// system text, canonical input JSON in the user text, and the schema the
/// reply envelope must satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub response_schema: Json,
}

fn describe_slots(out: &mut String, ty: &RecordType) {
    for slot in ty.slots() {
        let SlotSpec { name, slot_type, description, optional, allowed } = slot;
        let _ = write!(out, "- {name} ({slot_type}");
        if *optional {
            out.push_str(", optional");
        }
        if let Some(values) = allowed {
            let _ = write!(out, ", one of: {}", values.join(", "));
        }
        out.push(')');
        if !description.is_empty() {
            let _ = write!(out, ": {description}");
        }
        out.push('\n');
    }
}

/// Schema of the reply: the target state plus explanation and provenance.
pub fn envelope_schema(source: &RecordType, target: &RecordType) -> Json {
    let vocabulary: Vec<&str> = source.slot_names().collect();
    let evidence = json!({
        "type": "array",
        "items": {"type": "string", "enum": vocabulary},
        "minItems": if source.is_empty() { 0 } else { 1 },
    });
    let mut provenance = serde_json::Map::new();
    for slot in target.slot_names() {
        provenance.insert(slot.to_string(), evidence.clone());
    }
    json!({
        "type": "object",
        "title": format!("{}Envelope", target.name()),
        "properties": {
            "value": target.json_schema(),
            "explanation": {"type": "string", "description": "why the value follows from the input"},
            "relevant_source_attributes": evidence,
            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
            "provenance": {
                "type": "object",
                "properties": provenance,
                "additionalProperties": false,
                "description": "for each output slot, the input slots used as evidence",
            },
        },
        "required": ["value", "explanation", "relevant_source_attributes", "confidence"],
        "additionalProperties": false,
    })
}

/// Assembles the prompt for one kernel call. A pure function of its inputs.
pub fn build_prompt(
    source: &RecordType,
    target: &RecordType,
    config: &TransductionConfig,
    input: KernelInput<'_>,
) -> PromptBundle {
    let mut system = String::new();
    if !config.instructions.is_empty() {
        system.push_str(config.instructions.trim());
        system.push_str("\n\n");
    }
    match input {
        KernelInput::One(_) => {
            let _ = writeln!(
                system,
                "Transduce the input `{}` state into one `{}` state.",
                source.name(),
                target.name()
            );
        }
        KernelInput::Many(_) => {
            let _ = writeln!(
                system,
                "The input is a JSON array of `{}` states. Aggregate all of them into one `{}` state.",
                source.name(),
                target.name()
            );
        }
    }
    let _ = writeln!(system, "\nOutput type `{}`:", target.name());
    describe_slots(&mut system, target);
    let _ = writeln!(system, "\nInput type `{}`:", source.name());
    describe_slots(&mut system, source);
    system.push_str(
        "\nReply with a single JSON object with the fields:\n\
         - \"value\": the output state\n\
         - \"explanation\": why the value follows from the input\n\
         - \"relevant_source_attributes\": the input slots used as evidence (non-empty)\n\
         - \"confidence\": a number between 0 and 1\n\
         - \"provenance\": for each output slot, the list of input slots it was derived from\n",
    );
    let user = match input {
        KernelInput::One(state) => state.to_json(),
        KernelInput::Many(states) => Json::Array(states.iter().map(State::to_json_value).collect()).to_string(),
    };
    PromptBundle {
        system,
        user,
        response_schema: envelope_schema(source, target),
    }
}
