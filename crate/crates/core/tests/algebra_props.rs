mod common;

use proptest::prelude::*;
use serde_json::Value as Json;
use transduce::{compose_states, compose_types, merge_states, merge_types, project_state, project_type, RecordType, State};

fn three_types(seed: u64) -> (RecordType, RecordType, RecordType, rand_chacha::ChaCha8Rng) {
    let mut rng = common::rng(seed);
    let pool = common::slot_pool(&mut rng, 7);
    let a = common::subset_type(&mut rng, &pool, "A");
    let b = common::subset_type(&mut rng, &pool, "B");
    let c = common::subset_type(&mut rng, &pool, "C");
    (a, b, c, rng)
}

fn state(rng: &mut rand_chacha::ChaCha8Rng, ty: &RecordType) -> State {
    ty.validate(&common::valid_object(rng, ty)).unwrap()
}

fn names(ty: &RecordType) -> Vec<&str> {
    ty.slot_names().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn merge_is_associative(seed in any::<u64>()) {
        let (a, b, c, mut rng) = three_types(seed);
        let left = merge_types(&merge_types(&a, &b).unwrap(), &c).unwrap();
        let right = merge_types(&a, &merge_types(&b, &c).unwrap()).unwrap();
        prop_assert_eq!(&left, &right);

        let (x, y, z) = (state(&mut rng, &a), state(&mut rng, &b), state(&mut rng, &c));
        let left = merge_states(&merge_states(&x, &y).unwrap(), &z).unwrap();
        let right = merge_states(&x, &merge_states(&y, &z).unwrap()).unwrap();
        prop_assert_eq!(left.to_json(), right.to_json());
    }

    #[test]
    fn merge_is_idempotent(seed in any::<u64>()) {
        let (a, _, _, mut rng) = three_types(seed);
        prop_assert_eq!(&merge_types(&a, &a).unwrap(), &a);
        let x = state(&mut rng, &a);
        prop_assert_eq!(merge_states(&x, &x).unwrap(), x);
    }

    #[test]
    fn left_operand_wins_where_non_null(seed in any::<u64>()) {
        let (a, b, _, mut rng) = three_types(seed);
        let (x, y) = (state(&mut rng, &a), state(&mut rng, &b));
        let merged = merge_states(&x, &y).unwrap();
        // Left slots first, in order, then the right operand's new ones.
        let mut expected: Vec<&str> = names(&a);
        expected.extend(names(&b).into_iter().filter(|n| a.slot(n).is_none()));
        prop_assert_eq!(names(merged.record_type()), expected);
        for slot in merged.record_type().slot_names() {
            let l = x.get(slot).map(|v| v.to_json()).unwrap_or(Json::Null);
            let r = y.get(slot).map(|v| v.to_json()).unwrap_or(Json::Null);
            let want = if l.is_null() { r } else { l };
            prop_assert_eq!(merged.get(slot).unwrap().to_json(), want, "slot {}", slot);
        }
    }

    #[test]
    fn projections_compose(seed in any::<u64>(), outer in 1usize..=7, inner in 1usize..=7) {
        let (a, _, _, mut rng) = three_types(seed);
        let all = names(&a);
        let outer: Vec<&str> = all.iter().copied().take(outer.min(all.len())).collect();
        let inner: Vec<&str> = outer.iter().copied().take(inner.min(outer.len())).collect();
        let twice = project_type(&project_type(&a, &outer).unwrap(), &inner).unwrap();
        prop_assert_eq!(&twice, &project_type(&a, &inner).unwrap());

        let x = state(&mut rng, &a);
        let twice = project_state(&project_state(&x, &outer).unwrap(), &inner).unwrap();
        prop_assert_eq!(twice, project_state(&x, &inner).unwrap());
    }

    #[test]
    fn compose_then_unpack_is_identity(seed in any::<u64>()) {
        let (a, b, _, mut rng) = three_types(seed);
        let (x, y) = (state(&mut rng, &a), state(&mut rng, &b));
        let pair = compose_states(&x, &y);
        prop_assert_eq!(pair.record_type(), &compose_types(&a, &b));
        prop_assert_eq!(pair.get("left").unwrap().as_record().unwrap(), &x);
        prop_assert_eq!(pair.get("right").unwrap().as_record().unwrap(), &y);
        // The `@` spelling puts the receiver on the right.
        prop_assert_eq!(y.at(&x), pair);
    }

    #[test]
    fn projecting_a_merge_recovers_the_left_operand(seed in any::<u64>()) {
        let (a, b, _, mut rng) = three_types(seed);
        let (x, y) = (state(&mut rng, &a), state(&mut rng, &b));
        let merged = merge_states(&x, &y).unwrap();
        let back = project_state(&merged, &names(&a)).unwrap();
        for (slot, value) in x.iter() {
            if !value.is_null() {
                prop_assert_eq!(back.get(&slot.name).unwrap(), value);
            }
        }
    }
}
