use super::distractors::is_safe_distractor;
use super::generate::{placeholder_time, Scenario};
use super::SimulatorError;
use crate::dialogue::Session;
use crate::schema::{KnowledgeBase, StateSchema};
use chrono::{DateTime, Duration, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// A scenario's evidence embedded among distractors, in ingestion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Haystack {
    pub scenario_id: String,
    pub sessions: Vec<Session>,
    pub old_index: usize,
    pub new_index: usize,
    /// Set once a schedule is assigned.
    pub query_time: Option<DateTime<Utc>>,
}

impl Haystack {
    pub fn old_session(&self) -> &Session {
        &self.sessions[self.old_index]
    }

    pub fn new_session(&self) -> &Session {
        &self.sessions[self.new_index]
    }
}

/// Places `m_o` in the first half and `m_n` in the second half of an
/// `n_sessions`-long haystack, filling the rest with distractors sampled
/// from `pool`. Every pool entry must be safe for the scenario.
/// Timestamps are provisional (one day apart) until scheduled.
pub fn build_haystack(
    scenario: &Scenario,
    pool: &[Session],
    n_sessions: usize,
    seed: u64,
    schema: &StateSchema,
    knowledge: &KnowledgeBase,
) -> Result<Haystack, SimulatorError> {
    if n_sessions < 2 {
        return Err(SimulatorError::InvalidConfig(format!(
            "a haystack needs at least 2 sessions, got {n_sessions}"
        )));
    }
    let mut seen = BTreeSet::new();
    let mut distinct = Vec::new();
    for s in pool {
        is_safe_distractor(s, scenario, schema, knowledge).map_err(|reason| SimulatorError::UnsafeDistractor {
            session_id: s.session_id.clone(),
            reason,
        })?;
        if seen.insert(s.session_id.as_str()) {
            distinct.push(s);
        }
    }
    let needed = n_sessions - 2;
    if distinct.len() < needed {
        return Err(SimulatorError::PoolTooSmall {
            needed,
            available: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fillers = sample(&mut rng, distinct.len(), needed).into_iter().map(|i| distinct[i].clone());
    let half = n_sessions / 2;
    let old_index = rng.gen_range(0..half);
    let new_index = rng.gen_range(half..n_sessions);
    let sessions = (0..n_sessions)
        .map(|i| {
            let mut s = if i == old_index {
                scenario.m_o.clone()
            } else if i == new_index {
                scenario.m_n.clone()
            } else {
                fillers.next().expect("sampled exactly the filler count")
            };
            s.timestamp = placeholder_time() + Duration::days(i as i64);
            s
        })
        .collect();
    Ok(Haystack {
        scenario_id: scenario.id.clone(),
        sessions,
        old_index,
        new_index,
        query_time: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conflict::ConflictKind;
    use crate::schema::{default_knowledge, default_schema};
    use crate::simulator::distractors::{builtin_distractor_pool, filter_safe_distractors};
    use crate::simulator::generate::{generate_scenario, GeneratorConfig};

    fn fixture(seed: u64) -> (Scenario, Vec<Session>, StateSchema, KnowledgeBase) {
        let s = default_schema();
        let k = default_knowledge(&s);
        let sc = generate_scenario(seed, &s, &k, ConflictKind::TypeI, &GeneratorConfig::default()).unwrap();
        let pool = filter_safe_distractors(&builtin_distractor_pool(), &sc, &s, &k);
        (sc, pool, s, k)
    }

    #[test]
    fn evidence_lands_in_its_half() {
        for seed in 0..50 {
            let (sc, pool, s, k) = fixture(seed);
            for n in [2, 3, 10, 11] {
                let h = build_haystack(&sc, &pool, n, seed, &s, &k).unwrap();
                assert_eq!(h.sessions.len(), n);
                assert!(h.old_index < n / 2 && h.new_index >= n / 2);
                assert_eq!(h.old_session().session_id, sc.m_o.session_id);
                assert_eq!(h.new_session().session_id, sc.m_n.session_id);
                let ids: BTreeSet<_> = h.sessions.iter().map(|x| &x.session_id).collect();
                assert_eq!(ids.len(), n);
                assert!(h.sessions.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
            }
        }
    }

    #[test]
    fn rejects_small_pool_and_unsafe_entries() {
        let (sc, pool, s, k) = fixture(1);
        let err = build_haystack(&sc, &pool[..2], 10, 1, &s, &k).unwrap_err();
        assert_eq!(err, SimulatorError::PoolTooSmall { needed: 8, available: 2 });
        let mut bad = pool.clone();
        bad.push(sc.m_n.clone());
        assert!(matches!(
            build_haystack(&sc, &bad, 10, 1, &s, &k),
            Err(SimulatorError::UnsafeDistractor { .. })
        ));
        assert!(matches!(build_haystack(&sc, &pool, 1, 1, &s, &k), Err(SimulatorError::InvalidConfig(_))));
    }

    #[test]
    fn duplicate_pool_entries_count_once() {
        let (sc, pool, s, k) = fixture(2);
        let doubled: Vec<Session> = pool.iter().chain(pool.iter()).cloned().collect();
        let err = build_haystack(&sc, &doubled, pool.len() + 3, 2, &s, &k).unwrap_err();
        assert!(matches!(err, SimulatorError::PoolTooSmall { available, .. } if available == pool.len()));
    }
}
