//! Recency re-ranking: impressions the user interacted with before the clickout
//! move to the head of the list, most recent interaction first.

use std::collections::{BTreeMap, HashMap};

use crate::eval::RankedList;
use crate::session::ClickoutInstance;
use crate::{Error, Result};

/// Impressions interacted with before the clickout, keyed to the step of their
/// latest item interaction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionSet {
    last_step: BTreeMap<String, u32>,
}

impl InteractionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an interaction, keeping the greatest step per item.
    pub fn record(&mut self, item: &str, step: u32) {
        let slot = self.last_step.entry(item.to_string()).or_insert(step);
        *slot = (*slot).max(step);
    }

    pub fn get(&self, item: &str) -> Option<u32> {
        self.last_step.get(item).copied()
    }

    pub fn len(&self) -> usize {
        self.last_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last_step.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.last_step.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl FromIterator<(String, u32)> for InteractionSet {
    fn from_iter<I: IntoIterator<Item = (String, u32)>>(iter: I) -> Self {
        let mut set = InteractionSet::new();
        for (item, step) in iter {
            set.record(&item, step);
        }
        set
    }
}

pub fn build_interaction_set(instance: &ClickoutInstance) -> InteractionSet {
    let impressions = instance.impressions();
    let mut set = InteractionSet::new();
    for event in &instance.history {
        if let Some(item) = event.item_reference() {
            if impressions.iter().any(|i| i == item) {
                set.record(item, event.step);
            }
        }
    }
    set
}

/// Interacted items by descending step, then the rest in `base` order.
/// Ties on step fall back to `base` position.
pub fn rule_rerank(base: &RankedList, iset: &InteractionSet) -> Result<RankedList> {
    let position: HashMap<&str, usize> = base
        .items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut head = Vec::with_capacity(iset.len());
    for (item, step) in iset.iter() {
        let &pos = position
            .get(item)
            .ok_or_else(|| Error::UnknownImpression(item.to_string()))?;
        head.push((step, pos));
    }
    head.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut order: Vec<usize> = head.iter().map(|&(_, pos)| pos).collect();
    order.extend((0..base.len()).filter(|i| iset.get(&base.items[*i]).is_none()));
    Ok(RankedList {
        items: order.iter().map(|&i| base.items[i].clone()).collect(),
        scores: order.iter().map(|&i| base.scores[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::fixtures::*;
    use crate::session::{extract_clickouts, ActionType};
    use proptest::prelude::*;

    fn base(items: &[&str]) -> RankedList {
        RankedList::identity(&imps(items))
    }

    fn iset(entries: &[(&str, u32)]) -> InteractionSet {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn builds_set_from_history() {
        let s = session(
            "s",
            vec![
                event(1, ActionType::SearchForDestination, "B"),
                event(2, ActionType::InteractionItemInfo, "Z"),
                event(3, ActionType::InteractionItemImage, "B"),
                event(4, ActionType::FilterSelection, "D"),
                event(5, ActionType::InteractionItemRatings, "D"),
                click(6, "D", &["A", "B", "C", "D"]),
                event(7, ActionType::InteractionItemImage, "A"),
            ],
        );
        let inst = &extract_clickouts(&[s], true)[0];
        let set = build_interaction_set(inst);
        assert_eq!(set, iset(&[("B", 3), ("D", 5)]));
    }

    #[test]
    fn latest_interaction_wins() {
        let s = session(
            "s",
            vec![
                event(1, ActionType::InteractionItemImage, "B"),
                event(2, ActionType::InteractionItemImage, "B"),
                event(3, ActionType::InteractionItemImage, "C"),
                event(4, ActionType::InteractionItemDeals, "B"),
                click(5, "B", &["A", "B", "C"]),
            ],
        );
        let set = build_interaction_set(&extract_clickouts(&[s], true)[0]);
        assert_eq!(set.get("B"), Some(4));
    }

    #[test]
    fn empty_history_gives_empty_set() {
        let s = session("s", vec![click(1, "A", &["A", "B"])]);
        assert!(build_interaction_set(&extract_clickouts(&[s], true)[0]).is_empty());
    }

    #[test]
    fn rerank_moves_recent_first() {
        let out = rule_rerank(&base(&["A", "B", "C", "D"]), &iset(&[("B", 3), ("D", 5)])).unwrap();
        assert_eq!(out.items, ["D", "B", "A", "C"]);
    }

    #[test]
    fn rerank_with_empty_set_is_identity() {
        let b = base(&["A", "B", "C"]);
        assert_eq!(rule_rerank(&b, &InteractionSet::new()).unwrap(), b);
    }

    #[test]
    fn rerank_unknown_impression() {
        let err = rule_rerank(&base(&["A"]), &iset(&[("Q", 1)])).unwrap_err();
        assert!(matches!(err, Error::UnknownImpression(ref s) if s == "Q"));
    }

    #[test]
    fn ties_follow_base_order() {
        let out = rule_rerank(&base(&["A", "B", "C"]), &iset(&[("C", 2), ("B", 2)])).unwrap();
        assert_eq!(out.items, ["B", "C", "A"]);
    }

    #[test]
    fn scores_travel_with_items() {
        let b = RankedList::from_scores(&imps(&["A", "B", "C"]), vec![0.9, 0.5, 0.1]);
        let out = rule_rerank(&b, &iset(&[("C", 1)])).unwrap();
        assert_eq!(out.items, ["C", "A", "B"]);
        assert_eq!(out.scores, [0.1, 0.9, 0.5]);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<String>, Vec<(usize, u32)>)> {
        (1usize..=25).prop_flat_map(|n| {
            let items: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
            (
                Just(items).prop_shuffle(),
                proptest::collection::vec((0..n, 1u32..40), 0..=n),
            )
        })
    }

    proptest! {
        #[test]
        fn rerank_properties((items, picks) in arb_case()) {
            let b = RankedList::identity(&items);
            let set: InteractionSet = picks.iter().map(|&(i, s)| (items[i].clone(), s)).collect();
            let out = rule_rerank(&b, &set).unwrap();

            let mut sorted_in = b.items.clone();
            sorted_in.sort();
            let mut sorted_out = out.items.clone();
            sorted_out.sort();
            prop_assert_eq!(sorted_in, sorted_out);

            let k = set.len();
            for w in out.items[..k].windows(2) {
                prop_assert!(set.get(&w[0]).unwrap() >= set.get(&w[1]).unwrap());
            }
            let tail: Vec<_> = b.items.iter().filter(|x| set.get(x).is_none()).cloned().collect();
            prop_assert_eq!(&out.items[k..], &tail[..]);

            prop_assert_eq!(rule_rerank(&out, &set).unwrap(), out);
        }
    }
}
