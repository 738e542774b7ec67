use super::haystack::Haystack;
use super::{days, SimulatorError};
use chrono::{DateTime, Datelike, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleConfig {
    pub gap_min: Duration,
    pub gap_max: Duration,
    pub target_year: i32,
    /// Distance from the last session to the query.
    pub audit_margin: Duration,
    /// Longest allowed distance from the new evidence to the query.
    pub validity_window: Option<Duration>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            gap_min: days(30),
            gap_max: days(180),
            target_year: 2027,
            audit_margin: days(1),
            validity_window: None,
        }
    }
}

impl ScheduleConfig {
    /// A schedule that reproduces `gap` exactly.
    pub fn exact(gap: Duration, target_year: i32) -> Self {
        Self {
            gap_min: gap,
            gap_max: gap,
            target_year,
            ..Self::default()
        }
    }
}

fn year_bounds(year: i32) -> Result<(i64, i64), SimulatorError> {
    let start = |y: i32| {
        Utc.with_ymd_and_hms(y, 1, 1, 0, 0, 0)
            .single()
            .map(|t| t.timestamp())
            .ok_or_else(|| SimulatorError::InvalidConfig(format!("year {y} is out of range")))
    };
    Ok((start(year)?, start(year + 1)?))
}

/// `k` strictly increasing instants strictly inside `(a, b)`, evenly spaced
/// and jittered by less than half a step. Requires `b - a > k`.
fn interpolate(a: i64, b: i64, k: usize, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let step = (b - a) / (k as i64 + 1);
    let reach = (step - 1) / 2;
    (1..=k as i64)
        .map(|i| a + step * i + if reach > 0 { rng.gen_range(-reach..=reach) } else { 0 })
        .collect()
}

fn instant(secs: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(secs, 0).expect("within the representable range")
}

/// Assigns instants to every session, preserving haystack order. The gap
/// between the evidence sessions is drawn from the configured range, all
/// sessions fall inside the target year, and the query follows the last
/// session by the audit margin.
pub fn schedule_timestamps(haystack: &Haystack, config: &ScheduleConfig, seed: u64) -> Result<Haystack, SimulatorError> {
    if config.gap_min > config.gap_max || config.gap_min < Duration::seconds(1) {
        return Err(SimulatorError::InvalidConfig(format!(
            "gap range [{}, {}] is empty or non-positive",
            config.gap_min, config.gap_max
        )));
    }
    if config.audit_margin < Duration::seconds(1) {
        return Err(SimulatorError::InvalidConfig("audit margin must be positive".into()));
    }
    let len = haystack.sessions.len();
    let (o, n) = (haystack.old_index, haystack.new_index);
    if o >= n || n >= len {
        return Err(SimulatorError::InvalidConfig(format!(
            "evidence indices {o} and {n} are not ordered within {len} sessions"
        )));
    }
    let (year_start, year_end) = year_bounds(config.target_year)?;
    let (pre, mid, post) = (o as i64, (n - o - 1) as i64, (len - n - 1) as i64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = rng.gen_range(config.gap_min.num_seconds()..=config.gap_max.num_seconds());
    if gap < mid + 1 {
        return Err(SimulatorError::InfeasibleSchedule(format!(
            "gap of {gap}s cannot separate {mid} intermediate session(s)"
        )));
    }
    let lo = year_start + pre;
    let hi = year_end - 1 - gap - post;
    if lo > hi {
        return Err(SimulatorError::InfeasibleSchedule(format!(
            "gap of {gap}s with {len} session(s) does not fit in {}",
            config.target_year
        )));
    }
    let t_o = rng.gen_range(lo..=hi);
    let t_n = t_o + gap;
    let step = gap / (mid + 1);

    let before_start = (year_start - 1).max(t_o - step * (pre + 1));
    let mut after_end = year_end.min(t_n + step * (post + 1));
    if let Some(window) = config.validity_window {
        let reach = window.num_seconds() - config.audit_margin.num_seconds();
        if reach < post {
            return Err(SimulatorError::InfeasibleSchedule(format!(
                "validity window of {window} leaves no room for {post} trailing session(s) and the audit margin"
            )));
        }
        after_end = after_end.min(t_n + reach + 1);
    }
    let mut times = interpolate(before_start, t_o, pre as usize, &mut rng);
    times.push(t_o);
    times.extend(interpolate(t_o, t_n, mid as usize, &mut rng));
    times.push(t_n);
    times.extend(interpolate(t_n, after_end, post as usize, &mut rng));

    let mut scheduled = haystack.clone();
    for (s, t) in scheduled.sessions.iter_mut().zip(&times) {
        s.timestamp = instant(*t);
    }
    let last = *times.last().expect("non-empty haystack");
    let query = instant(last) + config.audit_margin;
    if let Some(window) = config.validity_window {
        if query - instant(t_n) > window {
            return Err(SimulatorError::InfeasibleSchedule(format!(
                "query falls {} after the new evidence, beyond the {window} validity window",
                query - instant(t_n)
            )));
        }
    }
    debug_assert!(scheduled.sessions.iter().all(|s| s.timestamp.year() == config.target_year));
    scheduled.query_time = Some(query);
    Ok(scheduled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Session, SessionKind};
    use crate::simulator::generate::placeholder_time;

    fn blank(len: usize, o: usize, n: usize) -> Haystack {
        Haystack {
            scenario_id: "x".into(),
            sessions: (0..len)
                .map(|i| Session {
                    session_id: format!("s{i}"),
                    timestamp: placeholder_time(),
                    kind: SessionKind::Distractor,
                    turns: vec![],
                })
                .collect(),
            old_index: o,
            new_index: n,
            query_time: None,
        }
    }

    fn check(h: &Haystack, cfg: &ScheduleConfig) {
        let ts: Vec<_> = h.sessions.iter().map(|s| s.timestamp).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]), "{ts:?}");
        let gap = ts[h.new_index] - ts[h.old_index];
        assert!(gap >= cfg.gap_min && gap <= cfg.gap_max);
        assert!(ts.iter().all(|t| t.year() == cfg.target_year));
        assert!(h.query_time.unwrap() > *ts.last().unwrap());
    }

    #[test]
    fn ordered_within_year_for_many_seeds() {
        let cfg = ScheduleConfig::default();
        for seed in 0..300 {
            let h = blank(10, (seed % 5) as usize, 5 + (seed % 5) as usize);
            check(&schedule_timestamps(&h, &cfg, seed).unwrap(), &cfg);
        }
    }

    #[test]
    fn exact_gap_is_reproduced_to_the_second() {
        let gap = Duration::seconds(90 * 86_400 + 3_661);
        let cfg = ScheduleConfig::exact(gap, 2027);
        let h = schedule_timestamps(&blank(6, 1, 4), &cfg, 9).unwrap();
        assert_eq!(h.sessions[4].timestamp - h.sessions[1].timestamp, gap);
    }

    #[test]
    fn tight_spacing_still_strict() {
        let cfg = ScheduleConfig::exact(Duration::seconds(4), 2027);
        let h = schedule_timestamps(&blank(6, 0, 4), &cfg, 3).unwrap();
        check(&h, &cfg);
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = ScheduleConfig::default();
        let h = blank(10, 2, 7);
        assert_eq!(schedule_timestamps(&h, &cfg, 5).unwrap(), schedule_timestamps(&h, &cfg, 5).unwrap());
        assert_ne!(schedule_timestamps(&h, &cfg, 5).unwrap(), schedule_timestamps(&h, &cfg, 6).unwrap());
    }

    #[test]
    fn infeasible_and_invalid_configurations() {
        let h = blank(10, 2, 7);
        let too_long = ScheduleConfig::exact(days(400), 2027);
        assert!(matches!(schedule_timestamps(&h, &too_long, 0), Err(SimulatorError::InfeasibleSchedule(_))));
        let crowded = ScheduleConfig::exact(Duration::seconds(3), 2027);
        assert!(matches!(schedule_timestamps(&h, &crowded, 0), Err(SimulatorError::InfeasibleSchedule(_))));
        let inverted = ScheduleConfig {
            gap_min: days(10),
            gap_max: days(5),
            ..ScheduleConfig::default()
        };
        assert!(matches!(schedule_timestamps(&h, &inverted, 0), Err(SimulatorError::InvalidConfig(_))));
    }

    #[test]
    fn validity_window_bounds_the_query() {
        let cfg = ScheduleConfig {
            validity_window: Some(days(3)),
            ..ScheduleConfig::default()
        };
        for seed in 0..50 {
            let h = schedule_timestamps(&blank(10, 2, 6), &cfg, seed).unwrap();
            assert!(h.query_time.unwrap() - h.sessions[6].timestamp <= days(3));
        }
        let none = ScheduleConfig {
            validity_window: Some(Duration::seconds(1)),
            ..cfg
        };
        assert!(schedule_timestamps(&blank(10, 2, 6), &none, 0).is_err());
    }
}
