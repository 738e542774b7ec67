use super::generate::{placeholder_time, Scenario};
use crate::conflict::{classify_conflict, ConflictKind, Observation};
use crate::dialogue::{Session, SessionKind, TaggedSpan, Turn};
use crate::schema::{KnowledgeBase, StateSchema};
use std::collections::BTreeSet;

fn distractor(id: &str, user: &str, spans: &[(&str, &str)], reply: &str, follow_up: Option<(&str, &str)>) -> Session {
    let spans = spans
        .iter()
        .map(|(slot, value)| TaggedSpan::assert(slot.parse().expect("valid slot literal"), value))
        .collect();
    let mut turns = vec![Turn::user(user, spans), Turn::assistant(reply)];
    if let Some((q, a)) = follow_up {
        turns.push(Turn::user(q, vec![]));
        turns.push(Turn::assistant(a));
    }
    Session {
        session_id: id.to_string(),
        timestamp: placeholder_time(),
        kind: SessionKind::Distractor,
        turns,
    }
}

/// Background sessions about everyday matters. Mutually compatible: no two
/// of them conflict under the default schema and knowledge.
pub fn builtin_distractor_pool() -> Vec<Session> {
    vec![
        distractor("d01", "Can you help me write a birthday message for my aunt?", &[], "Of course, here is a warm draft.", None),
        distractor(
            "d02",
            "I have been learning Portuguese on my lunch breaks.",
            &[("identity_and_background/skill_or_language_background", "portuguese_learner")],
            "That is a great habit.",
            Some(("Any podcast suggestions?", "Try a slow-news podcast for learners.")),
        ),
        distractor("d03", "What is a good ratio of water to rice?", &[], "Roughly two to one for white rice.", None),
        distractor(
            "d04",
            "My sister and I talk on the phone every Sunday.",
            &[("identity_and_background/stable_social_context", "weekly_sister_calls")],
            "That sounds like a lovely tradition.",
            None,
        ),
        distractor(
            "d05",
            "I care a lot about keeping my carbon footprint low.",
            &[("stable_preferences/value_or_priority_tendency", "low_carbon_priority")],
            "Noted, I will keep that in mind.",
            None,
        ),
        distractor("d06", "Explain how compound interest works in simple terms.", &[], "Interest earns interest over time.", None),
        distractor(
            "d07",
            "I always need my morning coffee before anything else.",
            &[("stable_preferences/habitual_choice_pattern", "morning_coffee_ritual")],
            "A classic routine.",
            None,
        ),
        distractor(
            "d08",
            "The pollen count here makes spring a bit rough for me.",
            &[("location_and_living/location_linked_condition", "high_pollen_area")],
            "Spring allergies can be tough.",
            None,
        ),
        distractor(
            "d09",
            "I carry an umbrella in my bag just in case.",
            &[("weather_and_environment/weather_linked_adjustment", "umbrella_in_bag")],
            "Always handy.",
            None,
        ),
        distractor(
            "d10",
            "I have been stretching every night to help my back.",
            &[("health_and_mobility/health_linked_adjustment", "nightly_stretching")],
            "Stretching can really help.",
            None,
        ),
        distractor(
            "d11",
            "This quarter I am leading two product launches.",
            &[("work_and_schedule/current_workload", "two_product_launches")],
            "That is a lot to juggle.",
            Some(("How do I keep both on track?", "Use a shared milestone board.")),
        ),
        distractor(
            "d12",
            "I have a monday book club with some neighbors.",
            &[("work_and_schedule/standing_commitment_or_availability", "monday_book_club")],
            "Enjoy the discussions.",
            None,
        ),
        distractor(
            "d13",
            "I keep an emergency fund in a separate account.",
            &[("finance_and_resources/resource_availability", "emergency_fund")],
            "A smart safety net.",
            None,
        ),
        distractor(
            "d14",
            "I switched to a cheaper phone plan last year.",
            &[("finance_and_resources/resource_linked_adjustment", "cheaper_phone_plan")],
            "Those savings add up.",
            None,
        ),
        distractor(
            "d15",
            "I can borrow my neighbor's ladder whenever I need it.",
            &[("finance_and_resources/resource_access_or_recoverability", "neighbor_ladder_access")],
            "Good neighbors are priceless.",
            None,
        ),
        distractor(
            "d16",
            "I walk our dog twice a day.",
            &[("family_and_caregiving/household_obligation", "dog_walking_duty")],
            "Dogs love a routine.",
            None,
        ),
        distractor(
            "d17",
            "My parents visit for two weeks every December.",
            &[("family_and_caregiving/family_linked_constraint", "december_parent_visits")],
            "That is nice family time.",
            None,
        ),
        distractor(
            "d18",
            "There is a bike-share dock right outside my building.",
            &[("routine_and_transport/transport_access_condition", "bike_share_dock_nearby")],
            "Convenient.",
            None,
        ),
        distractor(
            "d19",
            "I moved my grocery shopping to Thursday evenings.",
            &[("routine_and_transport/routine_shift", "thursday_groceries")],
            "Less crowded then, probably.",
            None,
        ),
        distractor(
            "d20",
            "I am focused on finishing my pottery course.",
            &[("current_focus_and_goals/current_primary_focus", "pottery_course")],
            "Sounds creative.",
            None,
        ),
        distractor(
            "d21",
            "I want to bake a decent sourdough loaf this month.",
            &[("current_focus_and_goals/short_horizon_goal", "learn_sourdough")],
            "Start with a lively starter.",
            None,
        ),
        distractor(
            "d22",
            "I can only practice guitar after the kids are asleep.",
            &[("current_focus_and_goals/goal_linked_constraint", "late_guitar_practice")],
            "Headphones and an amp simulator help.",
            None,
        ),
        distractor("d23", "Summarize the plot of a classic detective novel.", &[], "A detective untangles a locked-room mystery.", None),
        distractor("d24", "Give me three tips for better sleep.", &[], "Keep a schedule, dim lights, skip late caffeine.", None),
        distractor(
            "d25",
            "I really enjoy spicy food of almost any kind.",
            &[("stable_preferences/enduring_preference", "spicy_food")],
            "Bold flavors are fun.",
            None,
        ),
        distractor(
            "d26",
            "I volunteer as a mentor for first-year engineers.",
            &[("identity_and_background/core_identity_or_role", "volunteer_mentor")],
            "Mentoring is rewarding.",
            None,
        ),
        distractor(
            "d27",
            "My wrist gets sore after long typing sessions.",
            &[("health_and_mobility/functional_limitation", "wrist_strain")],
            "Consider an ergonomic keyboard.",
            None,
        ),
        distractor("d28", "How do I remove a coffee stain from a white shirt?", &[], "Blot, then treat with diluted vinegar.", None),
        distractor(
            "d29",
            "Carpooling with a coworker has become my routine for getting around.",
            &[("routine_and_transport/current_commute_mode", "carpool")],
            "Nice way to share the ride.",
            None,
        ),
        distractor(
            "d30",
            "Seattle is where my brother-in-law lives and I visit him often.",
            &[("location_and_living/current_base_location", "seattle")],
            "Sounds like regular trips.",
            None,
        ),
        distractor("d31", "Recommend a board game for four players.", &[], "Try a cooperative game for a change.", None),
        distractor(
            "d32",
            "I am the treasurer of my community garden.",
            &[("identity_and_background/core_identity_or_role", "garden_treasurer")],
            "That is a useful role.",
            None,
        ),
    ]
}

/// `Ok` when `session` may sit anywhere in the scenario's haystack: it does
/// not touch the target slot and conflicts with neither evidence
/// observation in either order.
pub fn is_safe_distractor(
    session: &Session,
    scenario: &Scenario,
    schema: &StateSchema,
    knowledge: &KnowledgeBase,
) -> Result<(), String> {
    if session.spans().any(|(_, _, s)| s.slot == scenario.target_slot) {
        return Err(format!("touches target slot `{}`", scenario.target_slot));
    }
    let d = Observation::from_session(session).map_err(|e| e.to_string())?;
    for evidence in [&scenario.m_o, &scenario.m_n] {
        let e = Observation::from_session(evidence).map_err(|e| e.to_string())?;
        for pair in [[d.clone(), e.clone()], [e, d.clone()]] {
            let w = classify_conflict(&pair, 0, 1, knowledge, schema).map_err(|e| e.to_string())?;
            if w.kind != ConflictKind::None {
                return Err(format!(
                    "conflicts with `{}` ({:?})",
                    evidence.session_id, w.kind
                ));
            }
        }
    }
    Ok(())
}

/// The safe subset of `pool`, first occurrence of each session id kept.
pub fn filter_safe_distractors(
    pool: &[Session],
    scenario: &Scenario,
    schema: &StateSchema,
    knowledge: &KnowledgeBase,
) -> Vec<Session> {
    let mut seen = BTreeSet::new();
    pool.iter()
        .filter(|s| seen.insert(s.session_id.clone()))
        .filter(|s| is_safe_distractor(s, scenario, schema, knowledge).is_ok())
        .cloned()
        .collect()
}
