//! A five-slot universe small enough to classify every ordered pair of
//! observations by hand.

use chrono::{Duration, TimeZone, Utc};
use statemem::conflict::{ConflictKind, Observation, ObservationFlags};
use statemem::pattern::ValuePattern;
use statemem::schema::{Cardinality, DomainDef, KnowledgeBase, KnowledgeRule, Proposition, SlotRef, StateSchema};

/// Five slots with three values each and two dependency rules:
/// `a/pick = a_pick_x` rules out `b/multi ∈ {b_multi_x, b_multi_y}`, and
/// `b/multi = b_multi_z` rules out every `c/multi` value.
pub fn micro_universe() -> (StateSchema, KnowledgeBase) {
    let domain = |name: &str, slots: &[(&str, Cardinality)]| DomainDef {
        name: name.into(),
        slots: slots.iter().map(|(s, c)| (s.to_string(), *c)).collect(),
    };
    let schema = StateSchema::from_parts(
        "micro",
        vec![
            domain("a", &[("single", Cardinality::Single), ("pick", Cardinality::Multi)]),
            domain("b", &[("single", Cardinality::Single), ("multi", Cardinality::Multi)]),
            domain("c", &[("multi", Cardinality::Multi)]),
        ],
        [("a".to_string(), "b".to_string()), ("b".to_string(), "c".to_string())],
    )
    .unwrap();
    let pat = |s: &str| ValuePattern::parse(s).unwrap();
    let rules = vec![
        KnowledgeRule::Dependency {
            rule_id: "r1".into(),
            source_slot: "a/pick".parse().unwrap(),
            source_pattern: pat("a_pick_x"),
            target_slot: "b/multi".parse().unwrap(),
            target_pattern: pat("b_multi_x|b_multi_y"),
            replacement: None,
        },
        KnowledgeRule::Dependency {
            rule_id: "r2".into(),
            source_slot: "b/multi".parse().unwrap(),
            source_pattern: pat("b_multi_z"),
            target_slot: "c/multi".parse().unwrap(),
            target_pattern: pat("c_multi_*"),
            replacement: None,
        },
    ];
    let kb = KnowledgeBase::new(rules, &schema).unwrap();
    (schema, kb)
}

pub const SLOTS: [&str; 5] = ["a/single", "a/pick", "b/single", "b/multi", "c/multi"];
pub const SUFFIXES: [&str; 3] = ["x", "y", "z"];

pub fn universe_observations() -> Vec<(&'static str, &'static str)> {
    SLOTS.iter().flat_map(|s| SUFFIXES.iter().map(move |v| (*s, *v))).collect()
}

pub fn observation(i: usize, slot: &str, suffix: &str) -> Observation {
    let value = format!("{}_{suffix}", slot.replace('/', "_"));
    Observation {
        session_id: format!("o{i}"),
        timestamp: Utc.with_ymd_and_hms(2027, 1, 1, 0, 0, 0).unwrap() + Duration::hours(i as i64),
        assertions: vec![Proposition::assert(slot.parse::<SlotRef>().unwrap(), &value)],
        flags: ObservationFlags::default(),
    }
}

/// Expected classification, written out case by case.
pub fn hand_classify(old: (&str, &str), new: (&str, &str)) -> ConflictKind {
    match (old, new) {
        (("a/single", o), ("a/single", n)) | (("b/single", o), ("b/single", n)) if o != n => ConflictKind::TypeI,
        (("b/multi", "x" | "y"), ("a/pick", "x")) => ConflictKind::TypeII,
        (("c/multi", _), ("b/multi", "z")) => ConflictKind::TypeII,
        _ => ConflictKind::None,
    }
}
