//! Utterance and probe templates, keyed by slot (same-slot conflicts) or by
//! dependency rule (propagated conflicts).
//!
//! Old-belief templates carry topic words ("neighborhood", "commute") that
//! the implicit probes reuse; new-evidence templates avoid both the topic
//! words and the old value, so the update stays implicit.

/// Placeholder replaced by the rendered value.
pub const VALUE: &str = "{v}";

pub fn render(template: &str, value: &str) -> String {
    template.replace(VALUE, &value.replace('_', " "))
}

#[derive(Debug, Clone, Copy)]
pub struct SameSlotTopic {
    pub slot: &'static str,
    pub old_values: &'static [&'static str],
    /// Values for the new observation. Empty: draw from `old_values`.
    pub new_values: &'static [&'static str],
    pub old_templates: &'static [&'static str],
    pub new_templates: &'static [&'static str],
    pub sr: &'static str,
    pub pr_templates: &'static [&'static str],
    pub ipa_templates: &'static [&'static str],
    pub intent: &'static str,
    pub action: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct PropagationTopic {
    pub rule_id: &'static str,
    pub upstream_values: &'static [&'static str],
    pub upstream_templates: &'static [&'static str],
    pub target_values: &'static [&'static str],
    pub old_templates: &'static [&'static str],
    pub sr: &'static str,
    pub pr_templates: &'static [&'static str],
    pub ipa_templates: &'static [&'static str],
    pub intent: &'static str,
    pub action: &'static str,
}

const LOCATION_OLD: &[&str] = &[
    "I've lived in {v} for a few years now and I really love my neighborhood there.",
    "My apartment in {v} is close to everything I need in the neighborhood.",
];
const LOCATION_SR: &str = "Does the user still live in {v}?";
const LOCATION_PR: &[&str] = &[
    "Since I live in {v}, can you recommend a few neighborhood cafes near me?",
    "Since I'm based in {v}, which neighborhood parks should I visit this spring?",
];
const LOCATION_IPA: &[&str] = &[
    "Can you suggest some weekend outings close to my neighborhood?",
    "Any ideas for a neighborhood walk I could take this weekend?",
];

const COMMUTE_OLD: &[&str] = &[
    "My daily commute to the office is by {v}, which takes about half an hour.",
    "I handle my commute by {v} most days, door to door in forty minutes.",
];
const COMMUTE_SR: &str = "Does the user still commute by {v}?";
const COMMUTE_PR: &[&str] = &[
    "Since I commute by {v}, what gear should I buy for the ride?",
    "Since I commute by {v} every day, how early should I leave home tomorrow?",
];
const COMMUTE_IPA: &[&str] = &[
    "Can you suggest a commute plan for this week?",
    "How should I organize my commute around appointments tomorrow?",
];

pub fn same_slot_topics() -> &'static [SameSlotTopic] {
    const TOPICS: &[SameSlotTopic] = &[
        SameSlotTopic {
            slot: "location_and_living/current_base_location",
            old_values: &["seattle", "portland", "austin", "denver", "boston", "chicago"],
            new_values: &[],
            old_templates: LOCATION_OLD,
            new_templates: &[
                "I finally finished unpacking the last boxes at my place in {v}.",
                "I set up utilities for my new place in {v} this week.",
            ],
            sr: LOCATION_SR,
            pr_templates: LOCATION_PR,
            ipa_templates: LOCATION_IPA,
            intent: "local_recommendation",
            action: "recommend_places",
        },
        SameSlotTopic {
            slot: "weather_and_environment/current_weather_pattern",
            old_values: &["rainy_season", "dry_heat", "heavy_snow", "humid_summer", "coastal_fog"],
            new_values: &[],
            old_templates: &[
                "The {v} around here means I plan every weekend around the forecast.",
                "With the {v} we get, I check the forecast before any weekend plans.",
            ],
            new_templates: &[
                "Lately it has been nothing but {v} outside my window.",
                "I keep stepping outside into {v} these days.",
            ],
            sr: "Is the weather where the user is still mostly {v}?",
            pr_templates: &["Given the {v} here, what should I pack for my weekend hikes?"],
            ipa_templates: &[
                "What should I plan for this weekend given the forecast?",
                "Help me pick clothes for a weekend trip based on the forecast.",
            ],
            intent: "activity_planning",
            action: "plan_weekend",
        },
        SameSlotTopic {
            slot: "health_and_mobility/current_health_state",
            old_values: &["full_health", "mild_cold", "seasonal_allergies", "stomach_bug"],
            new_values: &[],
            old_templates: &[
                "I have been dealing with {v} and my energy levels are all over the place.",
                "Right now it's {v} for me, and my energy levels show it.",
            ],
            new_templates: &["My doctor signed off on {v} at my checkup today."],
            sr: "Is the user's current health state still {v}?",
            pr_templates: &["Since I have {v}, how should I pace my energy this week?"],
            ipa_templates: &["Can you plan my workouts for the coming days based on my energy levels?"],
            intent: "fitness_planning",
            action: "plan_workouts",
        },
        SameSlotTopic {
            slot: "work_and_schedule/schedule_pressure_or_bandwidth",
            old_values: &["overloaded", "wide_open", "steady_pace", "deadline_crunch"],
            new_values: &[],
            old_templates: &["My calendar feels {v} these days and free evenings are rare."],
            new_templates: &[
                "My manager moved me onto a team where things are {v}.",
                "Since the reorg, the team I joined runs {v}.",
            ],
            sr: "Is the user's schedule still {v}?",
            pr_templates: &["Since my calendar is {v}, which evenings should I block for errands?"],
            ipa_templates: &["Can you help me plan my free evenings this month?"],
            intent: "time_planning",
            action: "plan_evenings",
        },
        SameSlotTopic {
            slot: "routine_and_transport/current_commute_mode",
            old_values: &["bicycle", "subway", "bus", "driving", "walking"],
            new_values: &[],
            old_templates: COMMUTE_OLD,
            new_templates: &[
                "These mornings I reach work by {v} and it has been smooth.",
                "Lately I get to work by {v} each morning.",
            ],
            sr: COMMUTE_SR,
            pr_templates: COMMUTE_PR,
            ipa_templates: COMMUTE_IPA,
            intent: "travel_planning",
            action: "plan_commute",
        },
        SameSlotTopic {
            slot: "location_and_living/living_arrangement_or_settlement",
            old_values: &["shared_apartment", "solo_studio", "family_house", "partner_condo"],
            new_values: &[],
            old_templates: &["At home it is a {v} arrangement and we split the chores."],
            new_templates: &["I signed the lease on a {v} and the keys arrive friday."],
            sr: "Does the user still live in a {v}?",
            pr_templates: &["Since I live in a {v}, how should we split the chores fairly?"],
            ipa_templates: &["Can you draft a weekly chores schedule for my home?"],
            intent: "household_planning",
            action: "plan_chores",
        },
        SameSlotTopic {
            slot: "stable_preferences/enduring_preference",
            old_values: &["vegetarian_diet", "vegan_diet"],
            new_values: &["steak_dinners", "bbq_weekends"],
            old_templates: &["I have stuck with a {v} for years and love cooking at home."],
            new_templates: &["I have been hosting {v} for friends every saturday."],
            sr: "Does the user still follow a {v}?",
            pr_templates: &["Since I follow a {v}, what recipes should I cook tonight?"],
            ipa_templates: &["Can you plan a home cooking menu for this week?"],
            intent: "meal_planning",
            action: "plan_menu",
        },
        SameSlotTopic {
            slot: "identity_and_background/current_status_or_affiliation",
            old_values: &["grad_student", "college_student"],
            new_values: &["full_time_nurse", "full_time_analyst"],
            old_templates: &["As a {v} my days revolve around campus and lectures."],
            new_templates: &["I got my first paycheck as a {v} on friday."],
            sr: "Is the user still a {v}?",
            pr_templates: &["Since I am a {v}, which campus discounts can I use?"],
            ipa_templates: &["Can you help me organize my days around my main commitments?"],
            intent: "schedule_planning",
            action: "organize_days",
        },
    ];
    TOPICS
}

pub fn propagation_topics() -> &'static [PropagationTopic] {
    const TOPICS: &[PropagationTopic] = &[
        PropagationTopic {
            rule_id: "leg_injury_blocks_active_commute",
            upstream_values: &["leg_fracture", "knee_ligament_tear", "ankle_sprain"],
            upstream_templates: &[
                "The doctor put me in a cast for a {v} after I slipped on the stairs.",
                "Turns out the pain was a {v}, so crutches for a while.",
            ],
            target_values: &["bicycle", "walking", "running"],
            old_templates: COMMUTE_OLD,
            sr: COMMUTE_SR,
            pr_templates: COMMUTE_PR,
            ipa_templates: COMMUTE_IPA,
            intent: "travel_planning",
            action: "plan_commute",
        },
        PropagationTopic {
            rule_id: "desert_climate_rules_out_rainy_northwest",
            upstream_values: &["desert_heat", "desert_dust"],
            upstream_templates: &["Every afternoon brings {v} and the only plants on my street are cacti."],
            target_values: &["portland", "seattle", "vancouver"],
            old_templates: LOCATION_OLD,
            sr: LOCATION_SR,
            pr_templates: LOCATION_PR,
            ipa_templates: LOCATION_IPA,
            intent: "local_recommendation",
            action: "recommend_places",
        },
        PropagationTopic {
            rule_id: "remote_work_ends_office_commute",
            upstream_values: &["fully_remote_role", "fully_remote_contract"],
            upstream_templates: &["My company switched me to a {v} so I log in from the kitchen table now."],
            target_values: &["subway", "bus", "driving", "bicycle"],
            old_templates: COMMUTE_OLD,
            sr: COMMUTE_SR,
            pr_templates: COMMUTE_PR,
            ipa_templates: COMMUTE_IPA,
            intent: "travel_planning",
            action: "plan_commute",
        },
        PropagationTopic {
            rule_id: "income_loss_ends_fine_dining",
            upstream_values: &["job_loss", "strict_budget"],
            upstream_templates: &["Money is tight because of {v}, so I cancelled most of my subscriptions."],
            target_values: &["fine_dining_weekly", "luxury_spa_visits"],
            old_templates: &["Treating myself to {v} is my favorite way to unwind after a long week."],
            sr: "Does the user still go for {v}?",
            pr_templates: &["Since I enjoy {v}, which spots should I try next month?"],
            ipa_templates: &["How should I unwind after this long week?"],
            intent: "leisure_planning",
            action: "suggest_leisure",
        },
        PropagationTopic {
            rule_id: "newborn_ends_evening_availability",
            upstream_values: &["newborn_daughter", "newborn_son"],
            upstream_templates: &["We brought our {v} home from the hospital on tuesday."],
            target_values: &["evening_choir_practice", "weekend_soccer_league"],
            old_templates: &["I never miss {v}; it is the highlight of my week."],
            sr: "Is the user still available for {v}?",
            pr_templates: &["Since I go to {v} regularly, can you remind me what to bring next time?"],
            ipa_templates: &["What should my week look like outside of work?"],
            intent: "time_planning",
            action: "plan_week",
        },
        PropagationTopic {
            rule_id: "surgery_recovery_pauses_endurance_goal",
            upstream_values: &["knee_surgery_recovery", "hip_surgery_recovery"],
            upstream_templates: &["The nurse said the first six weeks of {v} mean lots of rest."],
            target_values: &["marathon_training", "mountain_summit_trip"],
            old_templates: &["I am working toward {v} and I track every session in my log."],
            sr: "Is the user still pursuing {v}?",
            pr_templates: &["Since I am pursuing {v}, can you build my schedule for next month?"],
            ipa_templates: &["Can you suggest goals to track for next month?"],
            intent: "goal_planning",
            action: "set_goals",
        },
    ];
    TOPICS
}

pub const ASSISTANT_REPLIES: &[&str] = &[
    "Thanks for letting me know.",
    "Got it, noted.",
    "That makes sense.",
    "Understood.",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{default_knowledge, default_schema, KnowledgeRule, Proposition};

    #[test]
    fn render_spaces_values() {
        assert_eq!(render("in {v}.", "new_york"), "in new york.");
    }

    #[test]
    fn topics_reference_declared_slots_and_rules() {
        let schema = default_schema();
        let kb = default_knowledge(&schema);
        for t in same_slot_topics() {
            let slot = t.slot.parse().unwrap();
            assert!(schema.contains_slot(&slot), "{}", t.slot);
            for tpl in t.old_templates.iter().chain(t.new_templates).chain(t.pr_templates) {
                assert!(tpl.contains(VALUE), "{tpl}");
            }
            assert!(t.sr.contains(VALUE));
        }
        for t in propagation_topics() {
            let Some(KnowledgeRule::Dependency {
                source_slot,
                source_pattern,
                target_slot,
                target_pattern,
                ..
            }) = kb.rule(t.rule_id)
            else {
                panic!("{} is not a dependency rule", t.rule_id);
            };
            for v in t.upstream_values {
                assert!(source_pattern.matches(v), "{v}");
                Proposition::new(source_slot.clone(), v, crate::Polarity::Assert).unwrap();
            }
            for v in t.target_values {
                assert!(target_pattern.matches(v), "{v}");
                Proposition::new(target_slot.clone(), v, crate::Polarity::Assert).unwrap();
            }
        }
    }
}
