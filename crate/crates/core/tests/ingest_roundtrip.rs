use std::collections::HashSet;
use std::path::Path;

use clickrank::ingest::{
    parse_metadata, parse_sessions_from, sessions_to_csv, split_train_validation, write_metadata,
    ItemMetadata,
};
use clickrank::{ActionType, Session, SessionEvent};
use proptest::prelude::*;

const ACTIONS: [&str; 11] = [
    "clickout item",
    "interaction item rating",
    "interaction item deals",
    "interaction item image",
    "interaction item info",
    "search for item",
    "search for destination",
    "search for poi",
    "change of sort order",
    "filter selection",
    "some future action",
];

fn text() -> impl Strategy<Value = String> {
    // Commas, quotes and spaces must survive CSV quoting; pipes are list separators.
    "[a-zA-Z0-9 ,\"']{0,12}"
}

fn event_strategy() -> impl Strategy<Value = (usize, String, String, String, Vec<(String, u32)>)> {
    (
        0..ACTIONS.len(),
        "[0-9]{1,6}",
        text(),
        "[a-zA-Z ]{0,10}(\\|[a-zA-Z ]{1,10}){0,2}",
        prop::collection::vec(("[0-9]{1,6}", 0u32..1000), 1..=25),
    )
}

fn session_strategy() -> impl Strategy<Value = Session> {
    (
        "[a-z0-9]{1,8}",
        "[A-Z0-9]{1,8}",
        prop::sample::select(vec!["desktop", "mobile", "tablet"]),
        prop::sample::select(vec!["US", "DE", "BR"]),
        0i64..2_000_000_000,
        prop::collection::vec(event_strategy(), 1..6),
    )
        .prop_map(|(sid, uid, device, platform, t0, evs)| {
            let events = evs
                .into_iter()
                .enumerate()
                .map(|(k, (a, reference, city, filters, imps))| {
                    let action = ActionType::parse(ACTIONS[a]);
                    let step = k as u32 + 1;
                    let ts = t0 + 10 * k as i64;
                    let mut e = if action == ActionType::ClickoutItem {
                        let (items, prices) = imps.into_iter().unzip();
                        SessionEvent::clickout(step, ts, reference, items, prices)
                    } else {
                        SessionEvent::new(step, ts, action, reference)
                    };
                    e.city = city;
                    e.current_filters = filters;
                    e
                })
                .collect();
            Session {
                session_id: sid,
                user_id: uid,
                device: device.into(),
                platform: platform.into(),
                events,
            }
        })
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Session>> {
    prop::collection::vec(session_strategy(), 1..6).prop_map(|mut v| {
        let mut seen = HashSet::new();
        v.retain(|s| seen.insert(s.session_id.clone()));
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn write_then_parse_is_identity(corpus in corpus_strategy()) {
        let bytes = sessions_to_csv(&corpus);
        let parsed = parse_sessions_from(&bytes[..], Path::new("mem.csv")).unwrap();
        prop_assert!(parsed.rejects.is_empty(), "{:?}", parsed.rejects);
        prop_assert_eq!(parsed.sessions, corpus);
    }

    #[test]
    fn split_is_a_partition(corpus in corpus_strategy(), seed in 0u64..1000, f in 0.05f64..0.95) {
        prop_assume!(corpus.len() >= 2);
        let (train, valid) = split_train_validation(&corpus, f, seed).unwrap();
        prop_assert_eq!(train.len() + valid.len(), corpus.len());
        prop_assert!(!train.is_empty() && !valid.is_empty());
        let ids = |v: &[Session]| v.iter().map(|s| s.session_id.clone()).collect::<HashSet<_>>();
        prop_assert!(ids(&train).is_disjoint(&ids(&valid)));
        let again = split_train_validation(&corpus, f, seed).unwrap();
        prop_assert_eq!(again, (train, valid));
    }
}

#[test]
fn metadata_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut meta = ItemMetadata::default();
    meta.insert("1001", &["Wifi", "Good Rating"]);
    meta.insert("1002", &[] as &[&str]);
    meta.insert("1003", &["Pool, heated", "Wifi"]);
    let path = dir.path().join("meta.csv");
    write_metadata(&path, &meta).unwrap();
    let parsed = parse_metadata(&path).unwrap();
    assert!(parsed.rejects.is_empty() && parsed.warnings.is_empty());
    assert_eq!(parsed.metadata, meta);
}
