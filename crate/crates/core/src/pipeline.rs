//! Two-stage ranking: a scorer orders the impressions, then the recency rules
//! optionally lift previously interacted items to the head.

use crate::eval::RankedList;
use crate::rules::{build_interaction_set, rule_rerank};
use crate::session::ClickoutInstance;
use crate::Result;

/// Anything that can order the impression list of a clickout.
pub trait Ranker: Sync {
    fn name(&self) -> &str;

    /// Must return a permutation of `instance.impressions()`.
    fn rank(&self, instance: &ClickoutInstance) -> Result<RankedList>;
}

/// Keeps the order the impressions were shown in.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRanker;

impl Ranker for IdentityRanker {
    fn name(&self) -> &str {
        "identity"
    }

    fn rank(&self, instance: &ClickoutInstance) -> Result<RankedList> {
        Ok(RankedList::identity(instance.impressions()))
    }
}

impl<R: Ranker + ?Sized> Ranker for &R {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn rank(&self, instance: &ClickoutInstance) -> Result<RankedList> {
        (**self).rank(instance)
    }
}

impl<R: Ranker + ?Sized + Send> Ranker for Box<R> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn rank(&self, instance: &ClickoutInstance) -> Result<RankedList> {
        (**self).rank(instance)
    }
}

pub fn combined_rank(
    instance: &ClickoutInstance,
    scorer: &dyn Ranker,
    apply_rules: bool,
) -> Result<RankedList> {
    let stage1 = scorer.rank(instance)?;
    if !apply_rules {
        return Ok(stage1);
    }
    rule_rerank(&stage1, &build_interaction_set(instance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::fixtures::*;
    use crate::session::{extract_clickouts, ActionType};

    /// Scores impressions by reverse alphabetical order, ignoring history.
    struct Reverse;

    impl Ranker for Reverse {
        fn name(&self) -> &str {
            "reverse"
        }

        fn rank(&self, instance: &ClickoutInstance) -> Result<RankedList> {
            let mut items = instance.impressions().to_vec();
            items.sort_by(|a, b| b.cmp(a));
            Ok(RankedList::identity(&items))
        }
    }

    fn instance(history: Vec<crate::SessionEvent>, impressions: &[&str]) -> ClickoutInstance {
        let mut events = history;
        events.push(click(events.len() as u32 + 1, impressions[0], impressions));
        extract_clickouts(&[session("s", events)], true).remove(0)
    }

    #[test]
    fn identity_plus_rules_is_rule_based_method() {
        let inst = instance(
            vec![
                event(1, ActionType::InteractionItemImage, "C"),
                event(2, ActionType::InteractionItemDeals, "B"),
            ],
            &["A", "B", "C", "D"],
        );
        let out = combined_rank(&inst, &IdentityRanker, true).unwrap();
        assert_eq!(out.items, ["B", "C", "A", "D"]);
        let plain = combined_rank(&inst, &IdentityRanker, false).unwrap();
        assert_eq!(plain.items, ["A", "B", "C", "D"]);
    }

    #[test]
    fn empty_interaction_set_keeps_stage_one() {
        let inst = instance(
            vec![event(1, ActionType::SearchForDestination, "Oslo")],
            &["A", "B", "C"],
        );
        let out = combined_rank(&inst, &Reverse, true).unwrap();
        assert_eq!(out.items, ["C", "B", "A"]);
    }

    #[test]
    fn interacted_items_head_the_list_for_any_scorer() {
        let inst = instance(
            vec![
                event(1, ActionType::InteractionItemImage, "A"),
                event(2, ActionType::SearchForItem, "B"),
            ],
            &["A", "B", "C", "D"],
        );
        let out = combined_rank(&inst, &Reverse, true).unwrap();
        assert_eq!(out.items, ["B", "A", "D", "C"]);
    }
}
