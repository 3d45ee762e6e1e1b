use std::collections::BTreeSet;

use clickrank::session::compute_stats;
use clickrank::synth::{generate, SynthConfig};
use clickrank::{ActionType, Session};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, seed: u64) -> Vec<Session> {
    let mut sessions = generate(&SynthConfig {
        n_sessions: n,
        n_items: 60,
        mean_session_len: 5.0,
        p: 0.5,
        seed,
    })
    .unwrap()
    .sessions;
    // A few sessions that do not end in a clickout, and a repeat user.
    for (k, s) in sessions.iter_mut().enumerate().filter(|(k, _)| k % 3 == 0) {
        s.events.pop();
        if k % 2 == 0 {
            s.user_id = "shared".into();
        }
    }
    sessions.retain(|s| !s.events.is_empty());
    sessions
}

#[test]
fn stats_match_a_hand_count() {
    let sessions = corpus(10, 4);
    let st = compute_stats(&sessions).unwrap();

    let n = sessions.len();
    let mut total = 0;
    let mut longest = 0;
    let mut ends_click = 0;
    let mut filtered = 0;
    let mut duration = 0i64;
    let mut users = BTreeSet::new();
    for s in &sessions {
        total += s.events.len();
        longest = longest.max(s.events.len());
        if s.events.last().unwrap().action == ActionType::ClickoutItem {
            ends_click += 1;
        }
        if s.events.iter().any(|e| {
            e.action == ActionType::FilterSelection || e.action == ActionType::ChangeOfSortOrder
        }) {
            filtered += 1;
        }
        duration += s.events.last().unwrap().timestamp - s.events[0].timestamp;
        users.insert(s.user_id.clone());
    }
    let mean = total as f64 / n as f64;
    let var = sessions
        .iter()
        .map(|s| (s.events.len() as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;

    assert_eq!(st.n_sessions, n);
    assert_eq!(st.n_users, users.len());
    assert_eq!(st.n_actions, total);
    assert_eq!(st.max_actions_per_session, longest);
    approx::assert_relative_eq!(st.mean_actions_per_session, mean, max_relative = 1e-12);
    approx::assert_relative_eq!(st.std_actions_per_session, var.sqrt(), max_relative = 1e-9);
    approx::assert_relative_eq!(st.clickout_last_ratio, ends_click as f64 / n as f64);
    approx::assert_relative_eq!(st.filter_usage_ratio, filtered as f64 / n as f64);
    approx::assert_relative_eq!(st.mean_session_duration_seconds, duration as f64 / n as f64);
    assert!(st.clickout_last_ratio < 1.0 && st.clickout_last_ratio > 0.0);
}

#[test]
fn stats_ignore_corpus_order() {
    let mut sessions = corpus(200, 5);
    let before = compute_stats(&sessions).unwrap();
    sessions.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(compute_stats(&sessions).unwrap(), before);
}
