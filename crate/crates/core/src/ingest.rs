//! Reading and writing challenge-format session logs and item metadata.
//!
//! The session log is a comma-separated file with the 12-column header in
//! [`SESSION_HEADER`]. List-valued fields (`impressions`, `prices`) are
//! pipe-delimited. Malformed rows are skipped and collected in a rejects report.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::session::{ActionType, Session, SessionEvent};
use crate::{io, Error, Result};

pub const SESSION_HEADER: [&str; 12] = [
    "user_id",
    "session_id",
    "timestamp",
    "step",
    "action_type",
    "reference",
    "platform",
    "city",
    "device",
    "current_filters",
    "impressions",
    "prices",
];

pub const METADATA_HEADER: [&str; 2] = ["item_id", "properties"];

/// One row of the session log, every field as read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRow {
    pub user_id: String,
    pub session_id: String,
    pub timestamp: String,
    pub step: String,
    pub action_type: String,
    pub reference: String,
    pub platform: String,
    pub city: String,
    pub device: String,
    pub current_filters: String,
    pub impressions: String,
    pub prices: String,
}

impl RawRow {
    fn from_record(record: &csv::StringRecord) -> std::result::Result<RawRow, String> {
        if record.len() != SESSION_HEADER.len() {
            return Err(format!(
                "expected {} fields, found {}",
                SESSION_HEADER.len(),
                record.len()
            ));
        }
        let f = |i: usize| record[i].to_string();
        Ok(RawRow {
            user_id: f(0),
            session_id: f(1),
            timestamp: f(2),
            step: f(3),
            action_type: f(4),
            reference: f(5),
            platform: f(6),
            city: f(7),
            device: f(8),
            current_filters: f(9),
            impressions: f(10),
            prices: f(11),
        })
    }

    fn to_event(&self) -> std::result::Result<SessionEvent, String> {
        let timestamp: i64 = self
            .timestamp
            .trim()
            .parse()
            .map_err(|_| format!("unparseable timestamp {:?}", self.timestamp))?;
        let step: u32 = self
            .step
            .trim()
            .parse()
            .map_err(|_| format!("unparseable step {:?}", self.step))?;
        let impressions = split_list(&self.impressions);
        let prices = match split_list(&self.prices) {
            None => None,
            Some(raw) => Some(
                raw.iter()
                    .map(|p| p.trim().parse::<u32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| format!("unparseable prices {:?}", self.prices))?,
            ),
        };
        let event = SessionEvent {
            step,
            timestamp,
            action: ActionType::parse(&self.action_type),
            reference: self.reference.clone(),
            impressions,
            prices,
            city: self.city.clone(),
            current_filters: self.current_filters.clone(),
        };
        event.check()?;
        Ok(event)
    }
}

fn split_list(field: &str) -> Option<Vec<String>> {
    (!field.is_empty()).then(|| field.split('|').map(str::to_string).collect())
}

fn join_list<T: ToString>(items: Option<&[T]>) -> String {
    items
        .map(|xs| xs.iter().map(T::to_string).collect::<Vec<_>>().join("|"))
        .unwrap_or_default()
}

/// A skipped input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    /// 1-based line number in the input file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub sessions: Vec<Session>,
    pub rejects: Vec<Reject>,
}

impl ParsedLog {
    pub fn n_events(&self) -> usize {
        self.sessions.iter().map(|s| s.events.len()).sum()
    }
}

/// Plain-text rejects report: `line N: reason`, one per rejected row.
pub fn rejects_report(rejects: &[Reject]) -> String {
    let mut out = String::new();
    for r in rejects {
        let _ = writeln!(out, "line {}: {}", r.line, r.reason);
    }
    out
}

pub fn parse_sessions(path: impl AsRef<Path>) -> Result<ParsedLog> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_sessions_from(file, path)
}

/// Parses a session log from any reader; `origin` is only used in error messages.
pub fn parse_sessions_from(reader: impl std::io::Read, origin: &Path) -> Result<ParsedLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(origin, e))?.clone();
    if header.iter().map(str::trim).ne(SESSION_HEADER) {
        return Err(Error::format(
            origin,
            format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        ));
    }

    struct Pending {
        user_id: String,
        device: String,
        platform: String,
        events: Vec<SessionEvent>,
    }
    let mut groups: IndexMap<String, Pending> = IndexMap::new();
    let mut rejects = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(csv_error(origin, e)),
            Err(e) => {
                rejects.push(Reject {
                    line: e.position().map_or(line, |p| p.line()),
                    reason: e.to_string(),
                });
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        let parsed = RawRow::from_record(&record).and_then(|row| row.to_event().map(|e| (row, e)));
        match parsed {
            Ok((row, event)) => {
                groups
                    .entry(row.session_id)
                    .or_insert_with(|| Pending {
                        user_id: row.user_id,
                        device: row.device,
                        platform: row.platform,
                        events: Vec::new(),
                    })
                    .events
                    .push(event);
            }
            Err(reason) => rejects.push(Reject { line, reason }),
        }
    }

    let sessions = groups
        .into_iter()
        .map(|(session_id, mut p)| {
            repair_steps(&mut p.events);
            Session {
                session_id,
                user_id: p.user_id,
                device: p.device,
                platform: p.platform,
                events: p.events,
            }
        })
        .collect();
    Ok(ParsedLog { sessions, rejects })
}

/// Orders events by step; when steps are not exactly `1..=n` or timestamps go
/// backwards, re-indexes the session in timestamp order.
fn repair_steps(events: &mut [SessionEvent]) {
    events.sort_by_key(|e| e.step);
    let contiguous = events.iter().zip(1u32..).all(|(e, s)| e.step == s);
    let monotone = events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp);
    if contiguous && monotone {
        return;
    }
    events.sort_by_key(|e| (e.timestamp, e.step));
    for (e, s) in events.iter_mut().zip(1u32..) {
        e.step = s;
    }
}

fn csv_error(origin: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(origin, io),
        other => Error::format(origin, format!("{other:?}")),
    }
}

/// Serialises sessions in the challenge CSV format.
pub fn sessions_to_csv(sessions: &[Session]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(SESSION_HEADER).expect("in-memory write");
    for s in sessions {
        for e in &s.events {
            w.write_record([
                s.user_id.as_str(),
                s.session_id.as_str(),
                &e.timestamp.to_string(),
                &e.step.to_string(),
                e.action.as_str(),
                &e.reference,
                &s.platform,
                &e.city,
                &s.device,
                &e.current_filters,
                &join_list(e.impressions.as_deref()),
                &join_list(e.prices.as_deref()),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_sessions(path: impl AsRef<Path>, sessions: &[Session]) -> Result<()> {
    io::atomic_write(path, &sessions_to_csv(sessions))
}

/// Accommodation properties, indexed into a fixed label vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemMetadata {
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
    items: IndexMap<String, BTreeSet<usize>>,
}

impl ItemMetadata {
    /// Vocabulary size P.
    pub fn n_properties(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    /// Property indices of `item`, ascending; `None` when the item is unknown.
    pub fn property_indices(&self, item: &str) -> Option<&BTreeSet<usize>> {
        self.items.get(item)
    }

    pub fn properties(&self, item: &str) -> Option<BTreeSet<&str>> {
        self.items
            .get(item)
            .map(|ids| ids.iter().map(|&i| self.labels[i].as_str()).collect())
    }

    /// Sets (or replaces) the properties of `item`, growing the vocabulary as needed.
    /// Returns true when an existing entry was replaced.
    pub fn insert<S: AsRef<str>>(&mut self, item: &str, labels: &[S]) -> bool {
        let ids = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                match self.label_index.get(l) {
                    Some(&i) => i,
                    None => {
                        self.labels.push(l.to_string());
                        self.label_index
                            .insert(l.to_string(), self.labels.len() - 1);
                        self.labels.len() - 1
                    }
                }
            })
            .collect();
        self.items.insert(item.to_string(), ids).is_some()
    }

    pub fn items(&self) -> impl Iterator<Item = (&str, &BTreeSet<usize>)> {
        self.items.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Re-indexes onto a fixed label vocabulary; labels outside it are dropped.
    pub fn restricted_to(&self, labels: &[String]) -> ItemMetadata {
        let mut out = ItemMetadata {
            labels: labels.to_vec(),
            label_index: labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), i))
                .collect(),
            items: IndexMap::new(),
        };
        for (item, ids) in &self.items {
            let mapped = ids
                .iter()
                .filter_map(|&i| out.label_index.get(&self.labels[i]).copied())
                .collect();
            out.items.insert(item.clone(), mapped);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ParsedMetadata {
    pub metadata: ItemMetadata,
    pub warnings: Vec<String>,
    pub rejects: Vec<Reject>,
}

pub fn parse_metadata(path: impl AsRef<Path>) -> Result<ParsedMetadata> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().map(str::trim).ne(METADATA_HEADER) {
        return Err(Error::format(
            path,
            "metadata header must be item_id,properties",
        ));
    }
    let mut metadata = ItemMetadata::default();
    let mut warnings = Vec::new();
    let mut rejects = Vec::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(csv_error(path, e)),
            Err(e) => {
                rejects.push(Reject {
                    line: e.position().map_or(0, |p| p.line()),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            rejects.push(Reject {
                line,
                reason: format!("expected 2 fields, found {}", record.len()),
            });
            continue;
        }
        let labels = split_list(&record[1]).unwrap_or_default();
        if metadata.insert(&record[0], &labels) {
            let msg = format!(
                "line {line}: duplicate item_id {:?}, last row wins",
                &record[0]
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(ParsedMetadata {
        metadata,
        warnings,
        rejects,
    })
}

pub fn metadata_to_csv(metadata: &ItemMetadata) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(METADATA_HEADER).expect("in-memory write");
    for (item, ids) in metadata.items() {
        let labels: Vec<&str> = ids.iter().map(|&i| metadata.labels[i].as_str()).collect();
        w.write_record([item, labels.join("|").as_str()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_metadata(path: impl AsRef<Path>, metadata: &ItemMetadata) -> Result<()> {
    io::atomic_write(path, &metadata_to_csv(metadata))
}

/// Splits whole sessions into (train, validation), keeping corpus order within each part.
pub fn split_train_validation(
    corpus: &[Session],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<Session>, Vec<Session>)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction {holdout_fraction} outside (0, 1)"
        )));
    }
    let n = corpus.len();
    let n_valid = (n as f64 * holdout_fraction).round() as usize;
    let n_valid = if n >= 2 {
        n_valid.clamp(1, n - 1)
    } else {
        n_valid.min(n)
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_valid = vec![false; n];
    for &i in &order[..n_valid] {
        in_valid[i] = true;
    }
    let (valid, train): (Vec<_>, Vec<_>) =
        corpus.iter().cloned().zip(in_valid).partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        valid.into_iter().map(|(s, _)| s).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::fixtures::*;
    use std::io::Write;

    const HEADER: &str = "user_id,session_id,timestamp,step,action_type,reference,platform,city,device,current_filters,impressions,prices\n";

    fn parse_str(body: &str) -> ParsedLog {
        parse_sessions_from(format!("{HEADER}{body}").as_bytes(), Path::new("mem")).unwrap()
    }

    #[test]
    fn groups_rows_by_session() {
        let log = parse_str(
            "u1,s1,100,1,search for destination,Paris,FR,Paris,mobile,,,\n\
             u1,s1,110,2,interaction item image,82344,FR,Paris,mobile,,,\n",
        );
        assert_eq!(log.sessions.len(), 1);
        assert_eq!(log.sessions[0].events.len(), 2);
        assert_eq!(log.sessions[0].device, "mobile");
        assert!(log.rejects.is_empty());
    }

    #[test]
    fn pipe_delimited_impressions_and_prices() {
        let log = parse_str(
            "u1,s1,100,1,clickout item,82344,US,\"NYC, USA\",desktop,Sort by Price|Wifi,82344|67268,120|75\n",
        );
        let e = &log.sessions[0].events[0];
        assert_eq!(e.action, ActionType::ClickoutItem);
        assert_eq!(e.impressions.as_deref().unwrap(), ["82344", "67268"]);
        assert_eq!(e.prices.as_deref().unwrap(), [120, 75]);
        assert_eq!(e.city, "NYC, USA");
        assert_eq!(e.current_filters, "Sort by Price|Wifi");
    }

    #[test]
    fn malformed_rows_are_rejected_with_line_numbers() {
        let log = parse_str(
            "u1,s1,100,1,search for item,1,US,c,desktop,,,\n\
             u1,s1,abc,2,search for item,1,US,c,desktop,,,\n\
             u1,s1,120,3,search for item,1,US,c\n\
             u1,s1,130,3,clickout item,1,US,c,desktop,,1|2,5\n",
        );
        assert_eq!(log.n_events(), 1);
        let lines: Vec<u64> = log.rejects.iter().map(|r| r.line).collect();
        assert_eq!(lines, [3, 4, 5]);
        let report = rejects_report(&log.rejects);
        assert!(report.starts_with("line 3: unparseable timestamp"));
        assert_eq!(report.lines().count(), 3);
    }

    #[test]
    fn hundred_rows_with_three_malformed() {
        let mut body = String::new();
        let mut bad = 0;
        for i in 0..100u32 {
            let sid = i / 10;
            let step = i % 10 + 1;
            match i {
                17 => {
                    body.push_str("u,s1,1,2\n");
                    bad += 1;
                }
                45 => {
                    body.push_str(&format!("u,s{sid},x,{step},search for item,1,US,c,d,,,\n"));
                    bad += 1;
                }
                80 => {
                    body.push_str(&format!(
                        "u,s{sid},5,{step},clickout item,1,US,c,d,,1|2,3|4|5\n"
                    ));
                    bad += 1;
                }
                _ => body.push_str(&format!(
                    "u,s{sid},{},{step},search for item,1,US,c,d,,,\n",
                    1000 + i
                )),
            }
        }
        let log = parse_str(&body);
        // independent count: rows written minus rows deliberately corrupted
        assert_eq!(log.n_events(), 100 - bad);
        assert_eq!(log.rejects.len(), bad);
    }

    #[test]
    fn non_contiguous_steps_are_reindexed_by_timestamp() {
        let log = parse_str(
            "u,s,300,7,search for item,C,US,c,d,,,\n\
             u,s,100,2,search for item,A,US,c,d,,,\n\
             u,s,200,5,search for item,B,US,c,d,,,\n",
        );
        let events = &log.sessions[0].events;
        let refs: Vec<_> = events.iter().map(|e| e.reference.as_str()).collect();
        assert_eq!(refs, ["A", "B", "C"]);
        let steps: Vec<_> = events.iter().map(|e| e.step).collect();
        assert_eq!(steps, [1, 2, 3]);
    }

    #[test]
    fn bad_header_is_fatal() {
        let err = parse_sessions_from("a,b\n1,2\n".as_bytes(), Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(matches!(
            parse_sessions("/nonexistent/sessions.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut clickout = click(3, "B", &["A", "B"]);
        clickout.city = "Rome, Italy".into();
        clickout.current_filters = "Wifi|Pool".into();
        let sessions = vec![
            session(
                "s1",
                vec![
                    event(1, ActionType::Other("weird action".into()), "x,y"),
                    event(2, ActionType::InteractionItemDeals, "A"),
                    clickout,
                ],
            ),
            session("s2", vec![click(1, "", &["Z"])]),
        ];
        let bytes = sessions_to_csv(&sessions);
        let log = parse_sessions_from(bytes.as_slice(), Path::new("mem")).unwrap();
        assert!(log.rejects.is_empty());
        assert_eq!(log.sessions, sessions);
    }

    #[test]
    fn metadata_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        write!(
            f,
            "item_id,properties\n1001,Wifi|Good Rating\n1002,\n1003,Pool|Wifi\n1001,Pool\n"
        )
        .unwrap();
        drop(f);
        let parsed = parse_metadata(&path).unwrap();
        let m = &parsed.metadata;
        assert_eq!(m.labels(), ["Wifi", "Good Rating", "Pool"]);
        assert_eq!(m.properties("1002").unwrap().len(), 0);
        assert_eq!(
            m.properties("1003").unwrap(),
            ["Pool", "Wifi"].into_iter().collect()
        );
        // duplicate: last row wins
        assert_eq!(
            m.properties("1001").unwrap(),
            ["Pool"].into_iter().collect()
        );
        assert_eq!(parsed.warnings.len(), 1);
        assert!(m.properties("9999").is_none());
    }

    #[test]
    fn metadata_vocabulary_of_157_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        let mut meta = ItemMetadata::default();
        for i in 0..157 {
            let labels = [
                format!("property {i}"),
                format!("property {}", (i * 7) % 157),
            ];
            meta.insert(&format!("{}", 5000 + i), &labels);
        }
        write_metadata(&path, &meta).unwrap();
        let parsed = parse_metadata(&path).unwrap();
        assert_eq!(parsed.metadata.n_properties(), 157);
        assert_eq!(parsed.metadata, meta);
    }

    fn corpus(n: usize) -> Vec<Session> {
        (0..n)
            .map(|i| item_session(&format!("s{i}"), &["a"]))
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = corpus(10);
        let (t1, v1) = split_train_validation(&c, 0.2, 7).unwrap();
        assert_eq!((t1.len(), v1.len()), (8, 2));
        let (t2, v2) = split_train_validation(&c, 0.2, 7).unwrap();
        assert_eq!((t1, v1), (t2, v2));

        let (t, v) = split_train_validation(&corpus(2), 0.5, 1).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
    }

    #[test]
    fn split_seeds_differ_and_partition() {
        let c = corpus(40);
        let ids = |s: &[Session]| {
            s.iter()
                .map(|x| x.session_id.clone())
                .collect::<BTreeSet<_>>()
        };
        let (ta, va) = split_train_validation(&c, 0.25, 1).unwrap();
        let (tb, vb) = split_train_validation(&c, 0.25, 2).unwrap();
        assert_eq!(va.len(), vb.len());
        assert_ne!(ids(&va), ids(&vb));
        for (t, v) in [(ta, va), (tb, vb)] {
            assert!(ids(&t).is_disjoint(&ids(&v)));
            assert_eq!(ids(&t).union(&ids(&v)).count(), c.len());
        }
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let c = corpus(3);
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                split_train_validation(&c, f, 0),
                Err(Error::InvalidConfig(_))
            ));
        }
        assert!(matches!(
            split_train_validation(&[], 0.5, 0),
            Err(Error::EmptyCorpus)
        ));
    }
}
