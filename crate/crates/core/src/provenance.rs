//! Explanations and slot-level provenance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::TransductionError;
use crate::schema::{RecordType, State};

/// The explanation payload attached to every transduced state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Explanation {
    pub explanation: String,
    pub relevant_source_attributes: Vec<String>,
    pub confidence: f64,
}

impl Explanation {
    pub fn new(
        explanation: impl Into<String>,
        relevant_source_attributes: Vec<String>,
        confidence: f64,
    ) -> Self {
        Explanation {
            explanation: explanation.into(),
            relevant_source_attributes,
            confidence,
        }
    }

    /// Evidence must be non-empty and drawn from the source slots; a slotless
    /// source has no slots to cite, so it is exempt from non-emptiness.
    pub fn check(&self, source: &RecordType) -> Result<(), TransductionError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(TransductionError::InvalidConfidence(self.confidence));
        }
        if self.relevant_source_attributes.is_empty() && !source.is_empty() {
            return Err(TransductionError::InvalidProvenance(
                "relevant_source_attributes is empty".into(),
            ));
        }
        if let Some(bad) = self
            .relevant_source_attributes
            .iter()
            .find(|a| source.slot(a).is_none())
        {
            return Err(TransductionError::InvalidProvenance(format!(
                "`{bad}` is not a slot of `{}`",
                source.name()
            )));
        }
        Ok(())
    }
}

/// For each output slot, the input slots used as its evidence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProvenanceMap(BTreeMap<String, BTreeSet<String>>);

impl ProvenanceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, output: impl Into<String>, inputs: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.0
            .entry(output.into())
            .or_default()
            .extend(inputs.into_iter().map(Into::into));
    }

    pub fn with<I, S>(mut self, output: impl Into<String>, inputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.insert(output, inputs);
        self
    }

    /// Every target slot depends on every source slot.
    pub fn full(source: &RecordType, target: &RecordType) -> Self {
        let all: BTreeSet<String> = source.slot_names().map(String::from).collect();
        ProvenanceMap(
            target
                .slot_names()
                .map(|t| (t.to_string(), all.clone()))
                .collect(),
        )
    }

    /// Every target slot depends on the given source slots.
    pub fn uniform<'a>(target: &RecordType, inputs: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = inputs.into_iter().map(String::from).collect();
        ProvenanceMap(target.slot_names().map(|t| (t.to_string(), set.clone())).collect())
    }

    pub fn get(&self, output: &str) -> Option<&BTreeSet<String>> {
        self.0.get(output)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Relational composition: `self` maps Y←X, `next` maps Z←Y; the result maps Z←X.
    pub fn then(&self, next: &ProvenanceMap) -> ProvenanceMap {
        ProvenanceMap(
            next.0
                .iter()
                .map(|(z, ys)| {
                    let xs = ys
                        .iter()
                        .filter_map(|y| self.0.get(y))
                        .flatten()
                        .cloned()
                        .collect();
                    (z.clone(), xs)
                })
                .collect(),
        )
    }

    /// Entry-wise union.
    pub fn union_with(&mut self, other: &ProvenanceMap) {
        for (k, v) in &other.0 {
            self.0.entry(k.clone()).or_default().extend(v.iter().cloned());
        }
    }

    /// All input slots cited anywhere, in the source type's declaration order.
    pub fn evidence(&self, source: &RecordType) -> Vec<String> {
        let cited: BTreeSet<&String> = self.0.values().flatten().collect();
        source
            .slot_names()
            .filter(|s| cited.iter().any(|c| c.as_str() == *s))
            .map(String::from)
            .collect()
    }

    /// Each target slot has a non-empty entry drawn from the source slots, and
    /// nothing else has an entry.
    pub fn check(&self, source: &RecordType, target: &RecordType) -> Result<(), TransductionError> {
        for slot in target.slot_names() {
            match self.0.get(slot) {
                None => {
                    return Err(TransductionError::InvalidProvenance(format!(
                        "no entry for output slot `{slot}`"
                    )))
                }
                Some(set) if set.is_empty() && !source.is_empty() => {
                    return Err(TransductionError::InvalidProvenance(format!(
                        "empty evidence for output slot `{slot}`"
                    )))
                }
                Some(set) => {
                    if let Some(bad) = set.iter().find(|s| source.slot(s).is_none()) {
                        return Err(TransductionError::InvalidProvenance(format!(
                            "`{bad}` (evidence for `{slot}`) is not a slot of `{}`",
                            source.name()
                        )));
                    }
                }
            }
        }
        if let Some(extra) = self.0.keys().find(|k| target.slot(k).is_none()) {
            return Err(TransductionError::InvalidProvenance(format!(
                "`{extra}` is not a slot of `{}`",
                target.name()
            )));
        }
        Ok(())
    }
}

impl<K: Into<String>, V: Into<String>, I: IntoIterator<Item = V>> FromIterator<(K, I)> for ProvenanceMap {
    fn from_iter<T: IntoIterator<Item = (K, I)>>(iter: T) -> Self {
        let mut map = ProvenanceMap::new();
        for (k, vs) in iter {
            map.insert(k, vs);
        }
        map
    }
}

/// A transduced state together with its explanation and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Transduced {
    pub state: State,
    pub explanation: Explanation,
    pub provenance: ProvenanceMap,
}

impl Transduced {
    /// Checks the output contract against the function's source and target types.
    pub fn check(&self, source: &RecordType, target: &RecordType) -> Result<(), TransductionError> {
        if self.state.record_type() != target {
            return Err(TransductionError::TypeMismatch {
                expected: target.name().to_string(),
                found: self.state.record_type().name().to_string(),
            });
        }
        self.explanation.check(source)?;
        self.provenance.check(source, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{SlotSpec, TypeExpr};

    fn rec(name: &str, slots: &[&str]) -> RecordType {
        RecordType::new(name, slots.iter().map(|s| SlotSpec::new(*s, TypeExpr::text())).collect()).unwrap()
    }

    #[test]
    fn chaining_follows_evidence() {
        let f1: ProvenanceMap = [("b", vec!["a"])].into_iter().collect();
        let f2: ProvenanceMap = [("c", vec!["b"])].into_iter().collect();
        let composed = f1.then(&f2);
        assert_eq!(composed, [("c", vec!["a"])].into_iter().collect());
    }

    #[test]
    fn check_rejects_out_of_vocabulary() {
        let x = rec("X", &["income", "debt"]);
        let y = rec("Y", &["risk"]);
        let bad = ProvenanceMap::new().with("risk", ["zip_code"]);
        assert!(matches!(bad.check(&x, &y), Err(TransductionError::InvalidProvenance(_))));
        let empty = ProvenanceMap::new().with("risk", Vec::<String>::new());
        assert!(matches!(empty.check(&x, &y), Err(TransductionError::InvalidProvenance(_))));
        let missing = ProvenanceMap::new();
        assert!(missing.check(&x, &y).is_err());
        let ok = ProvenanceMap::new().with("risk", ["income", "debt"]);
        ok.check(&x, &y).unwrap();
        assert_eq!(ok.evidence(&x), ["income", "debt"]);
    }

    #[test]
    fn explanation_confidence_bounds() {
        let x = rec("X", &["a"]);
        assert!(Explanation::new("", vec!["a".into()], 1.0).check(&x).is_ok());
        assert_eq!(
            Explanation::new("", vec!["a".into()], 1.5).check(&x),
            Err(TransductionError::InvalidConfidence(1.5))
        );
        assert!(Explanation::new("", vec![], 0.5).check(&x).is_err());
    }

    #[test]
    fn explanation_payload_field_names() {
        let e = Explanation::new("because", vec!["prompt".into(), "options".into()], 0.96);
        let json = serde_json::to_value(&e).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["explanation", "relevant_source_attributes", "confidence"]);
    }
}
