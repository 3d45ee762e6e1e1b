//! Turning sessions into model inputs: the (action, reference) vocabulary,
//! context categories, metadata properties and labelled training examples.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::ingest::ItemMetadata;
use crate::session::{ActionType, ClickoutInstance, Session, SessionEvent};

/// Index of the padding symbol.
pub const PAD: usize = 0;
/// Index shared by every pair not in the vocabulary.
pub const UNK: usize = 1;
const N_SPECIAL: usize = 2;

/// Dense indices for (action, reference) pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    pairs: Vec<(ActionType, String)>,
    index: HashMap<ActionType, HashMap<String, usize>>,
}

impl Vocabulary {
    /// Pairs seen fewer than `min_count` times map to [`UNK`]. Indices are
    /// assigned by descending frequency, then lexicographically.
    pub fn build(train: &[Session], min_count: usize) -> Vocabulary {
        let mut counts: HashMap<(&str, &str), (usize, &ActionType)> = HashMap::new();
        for e in train.iter().flat_map(|s| &s.events) {
            counts
                .entry((e.action.as_str(), e.reference.as_str()))
                .or_insert((0, &e.action))
                .0 += 1;
        }
        let mut ranked: Vec<_> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= min_count)
            .collect();
        ranked.sort_by(|(ka, (ca, _)), (kb, (cb, _))| cb.cmp(ca).then(ka.cmp(kb)));
        Self::from_pairs(
            ranked
                .into_iter()
                .map(|((_, r), (_, a))| (a.clone(), r.to_string())),
        )
    }

    /// Builds a vocabulary with the given pairs at indices `2..`, in order.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (ActionType, String)>) -> Vocabulary {
        let mut vocab = Vocabulary::default();
        for (action, reference) in pairs {
            let next = vocab.pairs.len() + N_SPECIAL;
            let slot = vocab.index.entry(action.clone()).or_default();
            if !slot.contains_key(&reference) {
                slot.insert(reference.clone(), next);
                vocab.pairs.push((action, reference));
            }
        }
        vocab
    }

    /// Total size V including the special symbols.
    pub fn len(&self) -> usize {
        self.pairs.len() + N_SPECIAL
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index(&self, action: &ActionType, reference: &str) -> usize {
        self.index
            .get(action)
            .and_then(|m| m.get(reference))
            .copied()
            .unwrap_or(UNK)
    }

    /// The pair at `index`; `None` for the special symbols and out-of-range indices.
    pub fn pair(&self, index: usize) -> Option<(&ActionType, &str)> {
        index
            .checked_sub(N_SPECIAL)
            .and_then(|i| self.pairs.get(i))
            .map(|(a, r)| (a, r.as_str()))
    }

    pub fn pairs(&self) -> &[(ActionType, String)] {
        &self.pairs
    }
}

/// Device and platform categories seen in training.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextVocab {
    devices: Vec<String>,
    platforms: Vec<String>,
}

impl ContextVocab {
    pub fn build(train: &[Session]) -> ContextVocab {
        let devices: BTreeSet<&str> = train.iter().map(|s| s.device.as_str()).collect();
        let platforms: BTreeSet<&str> = train.iter().map(|s| s.platform.as_str()).collect();
        ContextVocab {
            devices: devices.into_iter().map(str::to_string).collect(),
            platforms: platforms.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn from_parts(devices: Vec<String>, platforms: Vec<String>) -> ContextVocab {
        ContextVocab { devices, platforms }
    }

    pub fn devices(&self) -> &[String] {
        &self.devices
    }

    pub fn platforms(&self) -> &[String] {
        &self.platforms
    }

    /// Width of the one-hot device ⊕ platform input.
    pub fn width(&self) -> usize {
        self.devices.len() + self.platforms.len()
    }

    /// Active one-hot positions; unseen categories contribute nothing.
    pub fn encode(&self, device: &str, platform: &str) -> ContextInput {
        let pos = |v: &[String], s: &str| v.iter().position(|x| x == s);
        ContextInput {
            active: [
                pos(&self.devices, device),
                pos(&self.platforms, platform).map(|p| p + self.devices.len()),
            ]
            .into_iter()
            .flatten()
            .collect(),
        }
    }
}

/// Active positions of the one-hot context vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextInput {
    pub active: Vec<usize>,
}

/// One GRU input: a vocabulary index plus the item's active metadata properties.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Token {
    pub pair: usize,
    pub properties: Vec<usize>,
}

impl Token {
    pub fn new(pair: usize) -> Token {
        Token {
            pair,
            properties: Vec::new(),
        }
    }
}

/// A (history, candidate) pair labelled 1 when the candidate was clicked.
///
/// Examples built from the same clickout share one history allocation; the
/// trainer relies on this to run the history through the GRU once per clickout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub history: Arc<[Token]>,
    pub candidate: Token,
    pub context: ContextInput,
    pub label: f64,
}

/// Maps instances to tokens with a fixed vocabulary and optional side inputs.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub vocab: Vocabulary,
    pub metadata: Option<ItemMetadata>,
    pub context: Option<ContextVocab>,
    pub max_history_len: usize,
}

impl Encoder {
    pub fn n_properties(&self) -> Option<usize> {
        self.metadata.as_ref().map(ItemMetadata::n_properties)
    }

    fn properties_of(&self, item: Option<&str>) -> Vec<usize> {
        match (&self.metadata, item) {
            (Some(meta), Some(item)) => meta
                .property_indices(item)
                .map(|ids| ids.iter().copied().collect())
                .unwrap_or_default(),
            _ => Vec::new(),
        }
    }

    pub fn encode_event(&self, event: &SessionEvent) -> Token {
        Token {
            pair: self.vocab.index(&event.action, &event.reference),
            properties: self.properties_of(event.item_reference()),
        }
    }

    /// The most recent `max_history_len` events of the history.
    pub fn encode_history(&self, instance: &ClickoutInstance) -> Vec<Token> {
        let h = &instance.history;
        let start = h.len().saturating_sub(self.max_history_len);
        h[start..].iter().map(|e| self.encode_event(e)).collect()
    }

    pub fn encode_candidate(&self, candidate: &str) -> Token {
        Token {
            pair: self.vocab.index(&ActionType::ClickoutItem, candidate),
            properties: self.properties_of(Some(candidate)),
        }
    }

    pub fn encode_context(&self, instance: &ClickoutInstance) -> ContextInput {
        self.context
            .as_ref()
            .map(|c| c.encode(&instance.device, &instance.platform))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExampleSet {
    pub examples: Vec<TrainingExample>,
    /// Instances dropped because their truth was absent or not shown.
    pub skipped: usize,
}

/// One positive and one negative per other impression, for every instance with a truth.
pub fn make_examples(instances: &[ClickoutInstance], encoder: &Encoder) -> ExampleSet {
    let mut out = ExampleSet::default();
    for inst in instances {
        let Some(truth) = inst.truth.as_deref() else {
            log::warn!(
                "session {}: clickout without truth skipped",
                inst.session_id
            );
            out.skipped += 1;
            continue;
        };
        if !inst.impressions().iter().any(|i| i == truth) {
            log::warn!(
                "session {}: clicked item not among impressions",
                inst.session_id
            );
            out.skipped += 1;
            continue;
        }
        let history: Arc<[Token]> = encoder.encode_history(inst).into();
        let context = encoder.encode_context(inst);
        for item in inst.impressions() {
            out.examples.push(TrainingExample {
                history: Arc::clone(&history),
                candidate: encoder.encode_candidate(item),
                context: context.clone(),
                label: if item == truth { 1.0 } else { 0.0 },
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::extract_clickouts;
    use crate::session::fixtures::*;

    fn three_pair_corpus() -> Vec<Session> {
        vec![
            session(
                "a",
                vec![
                    event(1, ActionType::SearchForDestination, "Rome"),
                    event(2, ActionType::InteractionItemImage, "1"),
                    event(3, ActionType::InteractionItemImage, "1"),
                ],
            ),
            session("b", vec![event(1, ActionType::SearchForItem, "2")]),
        ]
    }

    #[test]
    fn vocabulary_size_and_order() {
        let v = Vocabulary::build(&three_pair_corpus(), 0);
        assert_eq!(v.len(), 5);
        // most frequent pair first
        assert_eq!(v.index(&ActionType::InteractionItemImage, "1"), 2);
        assert_eq!(v.pair(2), Some((&ActionType::InteractionItemImage, "1")));
        assert_eq!(v.index(&ActionType::ClickoutItem, "1"), UNK);
        assert_ne!(UNK, PAD);
    }

    #[test]
    fn rare_pairs_become_unknown() {
        let v = Vocabulary::build(&three_pair_corpus(), 2);
        assert_eq!(v.len(), 3);
        assert_eq!(v.index(&ActionType::SearchForItem, "2"), UNK);
    }

    #[test]
    fn vocabulary_is_deterministic() {
        let c = three_pair_corpus();
        let v1 = Vocabulary::build(&c, 0);
        let v2 = Vocabulary::build(&c, 0);
        assert_eq!(v1, v2);
        assert_eq!(Vocabulary::from_pairs(v1.pairs().to_vec()), v1);
    }

    #[test]
    fn context_one_hot() {
        let mut c = three_pair_corpus();
        c[1].device = "mobile".into();
        c[1].platform = "BR".into();
        let cv = ContextVocab::build(&c);
        assert_eq!(cv.width(), 4);
        assert_eq!(cv.encode("mobile", "US").active, [1, 3]);
        assert_eq!(cv.encode("tablet", "BR").active, [2]);
    }

    fn encoder(corpus: &[Session]) -> Encoder {
        Encoder {
            vocab: Vocabulary::build(corpus, 0),
            metadata: None,
            context: None,
            max_history_len: 50,
        }
    }

    #[test]
    fn examples_per_impression() {
        let s = session(
            "s",
            vec![
                event(1, ActionType::InteractionItemImage, "C"),
                click(2, "C", &["A", "B", "C", "D", "E"]),
            ],
        );
        let inst = extract_clickouts(std::slice::from_ref(&s), true);
        let set = make_examples(&inst, &encoder(&[s]));
        assert_eq!(set.examples.len(), 5);
        let positives: Vec<_> = set.examples.iter().filter(|e| e.label == 1.0).collect();
        assert_eq!(positives.len(), 1);
        assert!(set
            .examples
            .windows(2)
            .all(|w| Arc::ptr_eq(&w[0].history, &w[1].history)));
    }

    #[test]
    fn single_impression_and_missing_truth() {
        let one = session("a", vec![click(1, "A", &["A"])]);
        let masked = session("b", vec![click(1, "", &["A", "B"])]);
        let corpus = [one, masked];
        let inst = extract_clickouts(&corpus, true);
        let set = make_examples(&inst, &encoder(&corpus));
        assert_eq!(set.examples.len(), 1);
        assert_eq!(set.examples[0].label, 1.0);
        assert_eq!(set.skipped, 1);
    }

    #[test]
    fn history_truncation_keeps_most_recent() {
        let events: Vec<_> = (1..=10)
            .map(|i| event(i, ActionType::SearchForItem, &i.to_string()))
            .chain([click(11, "A", &["A"])])
            .collect();
        let s = session("s", events);
        let mut enc = encoder(std::slice::from_ref(&s));
        enc.max_history_len = 3;
        let inst = &extract_clickouts(&[s], true)[0];
        let h = enc.encode_history(inst);
        assert_eq!(h.len(), 3);
        assert_eq!(
            enc.vocab.pair(h[0].pair),
            Some((&ActionType::SearchForItem, "8"))
        );
    }

    #[test]
    fn metadata_only_on_item_steps() {
        let s = session(
            "s",
            vec![
                event(1, ActionType::SearchForDestination, "A"),
                event(2, ActionType::InteractionItemInfo, "A"),
                click(3, "A", &["A", "B"]),
            ],
        );
        let mut meta = ItemMetadata::default();
        meta.insert("A", &["Wifi", "Pool"]);
        let mut enc = encoder(std::slice::from_ref(&s));
        enc.metadata = Some(meta);
        let inst = &extract_clickouts(&[s], true)[0];
        let h = enc.encode_history(inst);
        assert!(h[0].properties.is_empty());
        assert_eq!(h[1].properties, [0, 1]);
        assert!(enc.encode_candidate("B").properties.is_empty());
    }
}
