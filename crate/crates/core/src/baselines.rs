//! Session co-occurrence baselines: association rules, first-order Markov
//! chains, sequential rules and item-based nearest neighbours.
//!
//! All four only look at item-interaction events (whose reference is an
//! accommodation id). Search and filter references are destinations or filter
//! names and never enter the counts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::RankedList;
use crate::pipeline::Ranker;
use crate::session::{ClickoutInstance, Session};
use crate::{io, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CooccurrenceKind {
    /// Unordered pairs, counted once per session.
    AssociationRules,
    /// Directed transitions between consecutive items.
    MarkovChain,
    /// Directed pairs weighted by `1 / distance`.
    SequentialRules,
}

impl CooccurrenceKind {
    pub fn short_name(self) -> &'static str {
        match self {
            CooccurrenceKind::AssociationRules => "ar",
            CooccurrenceKind::MarkovChain => "mc",
            CooccurrenceKind::SequentialRules => "sr",
        }
    }
}

/// Which history items a co-occurrence model conditions on when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Conditioning {
    /// The last item-interaction reference before the clickout.
    #[default]
    LastItem,
    /// Sum over every distinct item-interaction reference in the history.
    AllItems,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceModel {
    pub kind: CooccurrenceKind,
    pub conditioning: Conditioning,
    pair_counts: BTreeMap<String, BTreeMap<String, f64>>,
    item_counts: BTreeMap<String, f64>,
}

impl CooccurrenceModel {
    fn empty(kind: CooccurrenceKind) -> Self {
        CooccurrenceModel {
            kind,
            conditioning: Conditioning::LastItem,
            pair_counts: BTreeMap::new(),
            item_counts: BTreeMap::new(),
        }
    }

    pub fn with_conditioning(mut self, conditioning: Conditioning) -> Self {
        self.conditioning = conditioning;
        self
    }

    fn add(&mut self, from: &str, to: &str, w: f64) {
        *self
            .pair_counts
            .entry(from.to_string())
            .or_default()
            .entry(to.to_string())
            .or_insert(0.0) += w;
    }

    fn count_item(&mut self, item: &str) {
        *self.item_counts.entry(item.to_string()).or_insert(0.0) += 1.0;
    }

    /// Weight of `from → to`; symmetric for association rules.
    pub fn weight(&self, from: &str, to: &str) -> f64 {
        self.pair_counts
            .get(from)
            .and_then(|m| m.get(to))
            .copied()
            .unwrap_or(0.0)
    }

    /// Sessions containing the item (association rules) or total occurrences (others).
    pub fn item_count(&self, item: &str) -> f64 {
        self.item_counts.get(item).copied().unwrap_or(0.0)
    }

    /// All non-zero `(from, to, weight)` triples in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.pair_counts
            .iter()
            .flat_map(|(a, m)| m.iter().map(move |(b, &w)| (a.as_str(), b.as_str(), w)))
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_counts.values().map(BTreeMap::len).sum()
    }

    pub fn score(&self, instance: &ClickoutInstance) -> RankedList {
        let anchors = history_anchors(instance, self.conditioning);
        let impressions = instance.impressions();
        let scores = impressions
            .iter()
            .map(|c| anchors.iter().map(|a| self.weight(a, c)).sum())
            .collect();
        RankedList::from_scores(impressions, scores)
    }
}

fn history_items(instance: &ClickoutInstance) -> impl Iterator<Item = &str> {
    instance.history.iter().filter_map(|e| e.item_reference())
}

fn history_anchors(instance: &ClickoutInstance, conditioning: Conditioning) -> Vec<&str> {
    match conditioning {
        Conditioning::LastItem => history_items(instance).last().into_iter().collect(),
        Conditioning::AllItems => history_items(instance)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    }
}

pub fn fit_association_rules(train: &[Session]) -> CooccurrenceModel {
    let mut model = CooccurrenceModel::empty(CooccurrenceKind::AssociationRules);
    for session in train {
        let items: BTreeSet<&str> = session.item_sequence().collect();
        for &a in &items {
            model.count_item(a);
            for &b in &items {
                if a != b {
                    model.add(a, b, 1.0);
                }
            }
        }
    }
    model
}

pub fn fit_markov(train: &[Session]) -> CooccurrenceModel {
    let mut model = CooccurrenceModel::empty(CooccurrenceKind::MarkovChain);
    for session in train {
        let seq: Vec<&str> = session.item_sequence().collect();
        seq.iter().for_each(|it| model.count_item(it));
        for w in seq.windows(2) {
            model.add(w[0], w[1], 1.0);
        }
    }
    model
}

pub fn fit_sequential_rules(train: &[Session]) -> CooccurrenceModel {
    let mut model = CooccurrenceModel::empty(CooccurrenceKind::SequentialRules);
    for session in train {
        let seq: Vec<&str> = session.item_sequence().collect();
        seq.iter().for_each(|it| model.count_item(it));
        for (i, a) in seq.iter().enumerate() {
            for (d, b) in seq[i + 1..].iter().enumerate() {
                model.add(a, b, 1.0 / (d + 1) as f64);
            }
        }
    }
    model
}

pub fn fit_cooccurrence(kind: CooccurrenceKind, train: &[Session]) -> CooccurrenceModel {
    match kind {
        CooccurrenceKind::AssociationRules => fit_association_rules(train),
        CooccurrenceKind::MarkovChain => fit_markov(train),
        CooccurrenceKind::SequentialRules => fit_sequential_rules(train),
    }
}

/// Binary item × session incidence for item-KNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IknnIndex {
    n_sessions: usize,
    /// Sorted, distinct session indices per item.
    session_vectors: BTreeMap<String, Vec<u32>>,
    norms: BTreeMap<String, f64>,
}

impl IknnIndex {
    pub fn n_sessions(&self) -> usize {
        self.n_sessions
    }

    /// Session indices where `item` occurs (the non-zero coordinates of its vector).
    pub fn sessions_of(&self, item: &str) -> Option<&[u32]> {
        self.session_vectors.get(item).map(Vec::as_slice)
    }

    pub fn norm(&self, item: &str) -> Option<f64> {
        self.norms.get(item).copied()
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.session_vectors.keys().map(String::as_str)
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (Some(va), Some(vb)) = (self.session_vectors.get(a), self.session_vectors.get(b))
        else {
            return 0.0;
        };
        let dot = sorted_intersection_len(va, vb) as f64;
        dot / (self.norms[a] * self.norms[b])
    }

    pub fn score(&self, instance: &ClickoutInstance) -> RankedList {
        let anchors = history_anchors(instance, Conditioning::AllItems);
        let impressions = instance.impressions();
        let scores = impressions
            .iter()
            .map(|c| anchors.iter().map(|a| self.cosine(a, c)).sum())
            .collect();
        RankedList::from_scores(impressions, scores)
    }
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn fit_iknn(train: &[Session]) -> IknnIndex {
    let mut session_vectors: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for (j, session) in train.iter().enumerate() {
        let items: BTreeSet<&str> = session.item_sequence().collect();
        for item in items {
            session_vectors
                .entry(item.to_string())
                .or_default()
                .push(j as u32);
        }
    }
    let norms = session_vectors
        .iter()
        .map(|(k, v)| (k.clone(), (v.len() as f64).sqrt()))
        .collect();
    IknnIndex {
        n_sessions: train.len(),
        session_vectors,
        norms,
    }
}

/// Any fitted baseline, serialisable to a versioned JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BaselineModel {
    Cooccurrence(CooccurrenceModel),
    Iknn(IknnIndex),
}

const MODEL_FORMAT: &str = "clickrank-baseline";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: BaselineModel,
}

impl BaselineModel {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineModel::Cooccurrence(m) => m.kind.short_name(),
            BaselineModel::Iknn(_) => "iknn",
        }
    }

    pub fn score(&self, instance: &ClickoutInstance) -> RankedList {
        match self {
            BaselineModel::Cooccurrence(m) => m.score(instance),
            BaselineModel::Iknn(m) => m.score(instance),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_vec(&file).expect("baseline models always serialise")
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<BaselineModel> {
        let file: ModelFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::format(origin, format!("baseline model: {e}")))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported model {} v{}", file.format, file.version),
            ));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BaselineModel> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

impl Ranker for BaselineModel {
    fn name(&self) -> &str {
        BaselineModel::name(self)
    }

    fn rank(&self, instance: &ClickoutInstance) -> Result<RankedList> {
        Ok(self.score(instance))
    }
}
