//! Random generators shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value as Json};
use transduce::{BasicKind, RecordType, SlotSpec, TypeExpr};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];

fn basic(rng: &mut ChaCha8Rng) -> TypeExpr {
    match rng.gen_range(0..4) {
        0 => TypeExpr::text(),
        1 => TypeExpr::integer(),
        2 => TypeExpr::real(),
        _ => TypeExpr::boolean(),
    }
}

pub fn type_expr(rng: &mut ChaCha8Rng, depth: u32, name: &str) -> TypeExpr {
    match rng.gen_range(0..10) {
        0..=5 => basic(rng),
        6 | 7 => {
            let inner = if depth > 0 && rng.gen_bool(0.3) {
                type_expr(rng, depth - 1, &format!("{name}I"))
            } else {
                basic(rng)
            };
            TypeExpr::list(inner)
        }
        _ if depth > 0 => TypeExpr::record(&record_type(rng, depth - 1, &format!("{name}R"))),
        _ => basic(rng),
    }
}

/// A record of up to five slots, nesting at most `depth` levels.
pub fn record_type(rng: &mut ChaCha8Rng, depth: u32, name: &str) -> RecordType {
    let n = rng.gen_range(0..=5);
    let slots = (0..n)
        .map(|i| {
            let mut slot = SlotSpec::new(format!("s{i}"), type_expr(rng, depth, &format!("{name}{i}")));
            if rng.gen_bool(0.3) {
                slot = slot.optional();
            }
            if matches!(slot.slot_type, TypeExpr::Basic(BasicKind::Text)) && rng.gen_bool(0.25) {
                slot = slot.one_of(["low", "medium", "high"]);
            }
            slot
        })
        .collect();
    RecordType::new(name, slots).expect("generated names are distinct")
}

/// Never integral, so an integer slot never sees a real that happens to be whole.
fn fractional(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-1000..1000) as f64 + 0.25 + 0.5 * rng.gen_range(0..2) as f64
}

pub fn valid_value(rng: &mut ChaCha8Rng, ty: &TypeExpr, allowed: Option<&[String]>) -> Json {
    match ty {
        TypeExpr::Basic(BasicKind::Text) => match allowed {
            Some(values) => json!(values.choose(rng).unwrap()),
            None => json!(WORDS.choose(rng).unwrap()),
        },
        TypeExpr::Basic(BasicKind::Integer) => json!(rng.gen_range(-1_000_000i64..1_000_000)),
        TypeExpr::Basic(BasicKind::Real) => {
            if rng.gen_bool(0.3) {
                json!(rng.gen_range(-100i64..100))
            } else {
                json!(fractional(rng))
            }
        }
        TypeExpr::Basic(BasicKind::Boolean) => json!(rng.gen_bool(0.5)),
        TypeExpr::List(inner) => {
            let n = rng.gen_range(0..4);
            Json::Array((0..n).map(|_| valid_value(rng, inner, None)).collect())
        }
        TypeExpr::Record(r) => valid_object(rng, r),
    }
}

pub fn valid_object(rng: &mut ChaCha8Rng, ty: &RecordType) -> Json {
    let mut m = Map::new();
    for slot in ty.slots() {
        if slot.optional && rng.gen_bool(0.3) {
            if rng.gen_bool(0.5) {
                m.insert(slot.name.clone(), Json::Null);
            }
            continue;
        }
        m.insert(slot.name.clone(), valid_value(rng, &slot.slot_type, slot.allowed.as_deref()));
    }
    Json::Object(m)
}

/// A value of the wrong kind for `ty`. Integers are not wrong for reals.
fn wrong_value(rng: &mut ChaCha8Rng, ty: &TypeExpr) -> Json {
    let candidates: Vec<Json> = vec![
        json!("oops"),
        json!(7),
        json!(fractional(rng)),
        json!(true),
        json!([1, "x"]),
        json!({"k": 1}),
    ];
    loop {
        let v = candidates.choose(rng).unwrap().clone();
        let wrong = match ty {
            TypeExpr::Basic(BasicKind::Text) => !v.is_string(),
            TypeExpr::Basic(BasicKind::Integer) => !v.is_i64(),
            TypeExpr::Basic(BasicKind::Real) => !v.is_number(),
            TypeExpr::Basic(BasicKind::Boolean) => !v.is_boolean(),
            TypeExpr::List(_) => !v.is_array(),
            TypeExpr::Record(_) => !v.is_object(),
        };
        if wrong {
            return v;
        }
    }
}

/// A candidate that is valid about half the time; the rest carry one or
/// more random defects, possibly deep inside nested values.
pub fn candidate(rng: &mut ChaCha8Rng, ty: &RecordType) -> Json {
    let mut obj = valid_object(rng, ty);
    if rng.gen_bool(0.5) {
        return obj;
    }
    let defects = rng.gen_range(1..=2);
    for _ in 0..defects {
        mutate(rng, &mut obj, ty);
    }
    obj
}

fn mutate(rng: &mut ChaCha8Rng, obj: &mut Json, ty: &RecordType) {
    if rng.gen_ratio(1, 20) {
        *obj = [json!([]), json!("x"), json!(3), Json::Null].choose(rng).unwrap().clone();
        return;
    }
    let m = match obj.as_object_mut() {
        Some(m) => m,
        None => return,
    };
    let slot = ty.slots().choose(rng).cloned();
    match (rng.gen_range(0..6), slot) {
        (0, _) | (_, None) => {
            m.insert(format!("extra{}", rng.gen_range(0..3)), json!(1));
        }
        (1, Some(s)) => {
            m.remove(&s.name);
        }
        (2, Some(s)) => {
            m.insert(s.name.clone(), Json::Null);
        }
        (3, Some(s)) if s.allowed.is_some() => {
            m.insert(s.name.clone(), json!("extreme"));
        }
        (4, Some(s)) => match &s.slot_type {
            TypeExpr::Record(inner) => {
                let mut nested = valid_object(rng, inner);
                mutate(rng, &mut nested, inner);
                m.insert(s.name.clone(), nested);
            }
            TypeExpr::List(inner) => {
                let mut items: Vec<Json> = (0..rng.gen_range(1..3)).map(|_| valid_value(rng, inner, None)).collect();
                let at = rng.gen_range(0..items.len());
                items[at] = wrong_value(rng, inner);
                m.insert(s.name.clone(), Json::Array(items));
            }
            other => {
                m.insert(s.name.clone(), wrong_value(rng, other));
            }
        },
        (_, Some(s)) => {
            m.insert(s.name.clone(), wrong_value(rng, &s.slot_type));
        }
    }
}

/// Text-slot records named `name` with the given slot names.
pub fn text_record(name: &str, slots: &[String]) -> RecordType {
    RecordType::new(name, slots.iter().map(|s| SlotSpec::new(s.clone(), TypeExpr::text())).collect()).unwrap()
}

/// A pool of distinctly named slots; types drawing subsets from one pool
/// always agree on shared slots, so they can be merged.
pub fn slot_pool(rng: &mut ChaCha8Rng, size: usize) -> Vec<SlotSpec> {
    (0..size)
        .map(|i| {
            let slot = SlotSpec::new(format!("p{i}"), type_expr(rng, 1, &format!("Pool{i}")));
            if rng.gen_bool(0.3) {
                slot.optional()
            } else {
                slot
            }
        })
        .collect()
}

/// A record over a non-empty random subset of `pool`, in random order.
pub fn subset_type(rng: &mut ChaCha8Rng, pool: &[SlotSpec], name: &str) -> RecordType {
    let k = rng.gen_range(1..=pool.len());
    let slots: Vec<SlotSpec> = pool.choose_multiple(rng, k).cloned().collect();
    RecordType::new(name, slots).unwrap()
}
