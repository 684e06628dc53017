//! Merge, projection and composition of record types and states.
//!
//! Merge keeps the left operand's slots in order, then appends the right
//! operand's new slots. On values, the left side wins wherever it is non-null.

use std::collections::BTreeSet;

use serde_json::{Map, Value as Json};

use crate::schema::{RecordType, SchemaError, SlotSpec, State, TypeExpr};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlgebraError {
    #[error("slot `{0}` has different types on the two sides of a merge")]
    SlotTypeConflict(String),
    #[error("unknown slot `{0}`")]
    UnknownSlot(String),
    #[error("projection onto an empty slot set")]
    EmptyProjection,
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// `left & right` on types.
pub fn merge_types(left: &RecordType, right: &RecordType) -> Result<RecordType, AlgebraError> {
    let mut slots: Vec<SlotSpec> = left.slots().to_vec();
    let mut grew = false;
    for slot in right.slots() {
        match slots.iter_mut().find(|s| s.name == slot.name) {
            Some(existing) => {
                if !existing.same_shape(slot) {
                    return Err(AlgebraError::SlotTypeConflict(slot.name.clone()));
                }
                // required on either side stays required
                existing.optional = existing.optional && slot.optional;
            }
            None => {
                slots.push(slot.clone());
                grew = true;
            }
        }
    }
    if !grew && slots == left.slots() {
        return Ok(left.clone());
    }
    Ok(RecordType::new(format!("{}&{}", left.name(), right.name()), slots)?)
}

/// `left & right` on states; left non-null values take precedence.
pub fn merge_states(left: &State, right: &State) -> Result<State, AlgebraError> {
    let ty = merge_types(left.record_type(), right.record_type())?;
    let mut object = Map::new();
    for slot in ty.slots() {
        let from_left = left.get(&slot.name).filter(|v| !v.is_null());
        let value = from_left.or_else(|| right.get(&slot.name)).map(|v| v.to_json());
        object.insert(slot.name.clone(), value.unwrap_or(Json::Null));
    }
    Ok(ty.validate(&Json::Object(object))?)
}

fn projected_slots<'a>(
    ty: &'a RecordType,
    names: &[&str],
) -> Result<Vec<&'a SlotSpec>, AlgebraError> {
    if names.is_empty() {
        return Err(AlgebraError::EmptyProjection);
    }
    if let Some(missing) = names.iter().find(|n| ty.slot(n).is_none()) {
        return Err(AlgebraError::UnknownSlot(missing.to_string()));
    }
    let wanted: BTreeSet<&str> = names.iter().copied().collect();
    Ok(ty.slots().iter().filter(|s| wanted.contains(s.name.as_str())).collect())
}

/// Restricts a type to a subset of its slots, keeping declaration order.
pub fn project_type(ty: &RecordType, names: &[&str]) -> Result<RecordType, AlgebraError> {
    let slots = projected_slots(ty, names)?;
    if slots.len() == ty.len() {
        return Ok(ty.clone());
    }
    let label = slots.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(",");
    Ok(RecordType::new(
        format!("{}[{}]", ty.name(), label),
        slots.into_iter().cloned().collect(),
    )?)
}

pub fn project_state(state: &State, names: &[&str]) -> Result<State, AlgebraError> {
    let ty = project_type(state.record_type(), names)?;
    let mut object = Map::new();
    for slot in ty.slots() {
        let value = state.get(&slot.name).map(|v| v.to_json()).unwrap_or(Json::Null);
        object.insert(slot.name.clone(), value);
    }
    Ok(ty.validate(&Json::Object(object))?)
}

/// The pair type `{left: left, right: right}`.
pub fn compose_types(left: &RecordType, right: &RecordType) -> RecordType {
    RecordType::new(
        format!("({}, {})", left.name(), right.name()),
        vec![
            SlotSpec::new("left", TypeExpr::record(left)),
            SlotSpec::new("right", TypeExpr::record(right)),
        ],
    )
    .expect("two distinct slot names")
}

pub fn compose_states(left: &State, right: &State) -> State {
    let ty = compose_types(left.record_type(), right.record_type());
    let mut object = Map::new();
    object.insert("left".into(), left.to_json_value());
    object.insert("right".into(), right.to_json_value());
    ty.validate(&Json::Object(object))
        .expect("operands are valid states of the paired types")
}

impl RecordType {
    /// `self & other`.
    pub fn merge(&self, other: &RecordType) -> Result<RecordType, AlgebraError> {
        merge_types(self, other)
    }

    pub fn project(&self, names: &[&str]) -> Result<RecordType, AlgebraError> {
        project_type(self, names)
    }

    /// `self @ other`: the right operand becomes the `left` slot, so derived
    /// states can be paired with the original they came from.
    pub fn at(&self, other: &RecordType) -> RecordType {
        compose_types(other, self)
    }
}

impl State {
    /// `self & other`.
    pub fn merge(&self, other: &State) -> Result<State, AlgebraError> {
        merge_states(self, other)
    }

    pub fn project(&self, names: &[&str]) -> Result<State, AlgebraError> {
        project_state(self, names)
    }

    /// `self @ other`; see [`RecordType::at`].
    pub fn at(&self, other: &State) -> State {
        compose_states(other, self)
    }
}
