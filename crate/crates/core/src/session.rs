//! Session domain types and descriptive corpus statistics.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Longest impression list shown at a clickout.
pub const MAX_IMPRESSIONS: usize = 25;

/// User action kinds, spelled as in the challenge logs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionType {
    ClickoutItem,
    InteractionItemRatings,
    InteractionItemDeals,
    InteractionItemImage,
    InteractionItemInfo,
    SearchForItem,
    SearchForDestination,
    SearchForPoi,
    ChangeOfSortOrder,
    FilterSelection,
    /// Any label outside the known set, kept verbatim.
    Other(String),
}

impl ActionType {
    pub fn parse(raw: &str) -> ActionType {
        match raw.trim().to_ascii_lowercase().as_str() {
            "clickout item" => ActionType::ClickoutItem,
            "interaction item rating" | "interaction item ratings" => {
                ActionType::InteractionItemRatings
            }
            "interaction item deals" => ActionType::InteractionItemDeals,
            "interaction item image" => ActionType::InteractionItemImage,
            "interaction item info" => ActionType::InteractionItemInfo,
            "search for item" => ActionType::SearchForItem,
            "search for destination" => ActionType::SearchForDestination,
            "search for poi" => ActionType::SearchForPoi,
            "change of sort order" => ActionType::ChangeOfSortOrder,
            "filter selection" => ActionType::FilterSelection,
            _ => ActionType::Other(raw.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            ActionType::ClickoutItem => "clickout item",
            ActionType::InteractionItemRatings => "interaction item rating",
            ActionType::InteractionItemDeals => "interaction item deals",
            ActionType::InteractionItemImage => "interaction item image",
            ActionType::InteractionItemInfo => "interaction item info",
            ActionType::SearchForItem => "search for item",
            ActionType::SearchForDestination => "search for destination",
            ActionType::SearchForPoi => "search for poi",
            ActionType::ChangeOfSortOrder => "change of sort order",
            ActionType::FilterSelection => "filter selection",
            ActionType::Other(raw) => raw,
        }
    }

    /// Actions whose reference is an accommodation id.
    pub fn is_item_interaction(&self) -> bool {
        matches!(
            self,
            ActionType::ClickoutItem
                | ActionType::InteractionItemRatings
                | ActionType::InteractionItemDeals
                | ActionType::InteractionItemImage
                | ActionType::InteractionItemInfo
                | ActionType::SearchForItem
        )
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timestamped user step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// 1-based position within the session.
    pub step: u32,
    pub timestamp: i64,
    pub action: ActionType,
    pub reference: String,
    pub impressions: Option<Vec<String>>,
    pub prices: Option<Vec<u32>>,
    /// Retained from the log but not used by any model.
    pub city: String,
    pub current_filters: String,
}

impl SessionEvent {
    pub fn new(
        step: u32,
        timestamp: i64,
        action: ActionType,
        reference: impl Into<String>,
    ) -> Self {
        SessionEvent {
            step,
            timestamp,
            action,
            reference: reference.into(),
            impressions: None,
            prices: None,
            city: String::new(),
            current_filters: String::new(),
        }
    }

    pub fn clickout(
        step: u32,
        timestamp: i64,
        reference: impl Into<String>,
        impressions: Vec<String>,
        prices: Vec<u32>,
    ) -> Self {
        SessionEvent {
            impressions: Some(impressions),
            prices: Some(prices),
            ..SessionEvent::new(step, timestamp, ActionType::ClickoutItem, reference)
        }
    }

    /// The item reference of an item-interaction event, if any.
    pub fn item_reference(&self) -> Option<&str> {
        (self.action.is_item_interaction() && !self.reference.is_empty())
            .then_some(self.reference.as_str())
    }

    pub fn impressions(&self) -> &[String] {
        self.impressions.as_deref().unwrap_or(&[])
    }

    /// Checks the per-event invariants, returning a human-readable reason on failure.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.step == 0 {
            return Err("step must be positive".into());
        }
        let is_clickout = self.action == ActionType::ClickoutItem;
        match (&self.impressions, &self.prices) {
            (Some(imps), Some(prices)) if is_clickout => {
                if imps.is_empty() || imps.len() > MAX_IMPRESSIONS {
                    return Err(format!(
                        "impression list length {} outside 1..={MAX_IMPRESSIONS}",
                        imps.len()
                    ));
                }
                if imps.len() != prices.len() {
                    return Err(format!(
                        "{} impressions but {} prices",
                        imps.len(),
                        prices.len()
                    ));
                }
                Ok(())
            }
            (None, None) if !is_clickout => Ok(()),
            _ if is_clickout => Err("clickout without impressions and prices".into()),
            _ => Err("impressions or prices on a non-clickout action".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub device: String,
    pub platform: String,
    pub events: Vec<SessionEvent>,
}

impl Session {
    /// Item references of the item-interaction events, in step order.
    pub fn item_sequence(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(SessionEvent::item_reference)
    }
}

/// A clickout to be ranked, with everything the user did before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickoutInstance {
    pub session_id: String,
    pub user_id: String,
    pub device: String,
    pub platform: String,
    /// Events strictly before the clickout, in step order.
    pub history: Vec<SessionEvent>,
    pub clickout: SessionEvent,
    /// The clicked reference; `None` for masked clickouts.
    pub truth: Option<String>,
}

impl ClickoutInstance {
    pub fn impressions(&self) -> &[String] {
        self.clickout.impressions()
    }
}

/// One clickout instance per clickout event, or only the last one per session.
pub fn extract_clickouts(corpus: &[Session], mask_last_only: bool) -> Vec<ClickoutInstance> {
    let mut out = Vec::new();
    for session in corpus {
        let positions: Vec<usize> = session
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.action == ActionType::ClickoutItem)
            .map(|(i, _)| i)
            .collect();
        let selected = if mask_last_only {
            &positions[positions.len().saturating_sub(1)..]
        } else {
            &positions[..]
        };
        for &pos in selected {
            let clickout = session.events[pos].clone();
            let truth = (!clickout.reference.is_empty()).then(|| clickout.reference.clone());
            out.push(ClickoutInstance {
                session_id: session.session_id.clone(),
                user_id: session.user_id.clone(),
                device: session.device.clone(),
                platform: session.platform.clone(),
                history: session.events[..pos].to_vec(),
                clickout,
                truth,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sessions: usize,
    pub n_users: usize,
    pub n_actions: usize,
    pub mean_actions_per_session: f64,
    pub std_actions_per_session: f64,
    pub max_actions_per_session: usize,
    pub clickout_last_ratio: f64,
    pub mean_session_duration_seconds: f64,
    pub filter_usage_ratio: f64,
}

impl CorpusStats {
    /// `key = value` lines, one per field.
    pub fn to_key_value(&self) -> String {
        format!(
            "n_sessions = {}\nn_users = {}\nn_actions = {}\nmean_actions_per_session = {}\n\
             std_actions_per_session = {}\nmax_actions_per_session = {}\nclickout_last_ratio = {}\n\
             mean_session_duration_seconds = {}\nfilter_usage_ratio = {}\n",
            self.n_sessions,
            self.n_users,
            self.n_actions,
            self.mean_actions_per_session,
            self.std_actions_per_session,
            self.max_actions_per_session,
            self.clickout_last_ratio,
            self.mean_session_duration_seconds,
            self.filter_usage_ratio,
        )
    }
}

pub fn compute_stats(corpus: &[Session]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len() as f64;
    let lengths: Vec<usize> = corpus.iter().map(|s| s.events.len()).collect();
    let n_actions: usize = lengths.iter().sum();
    let sum_sq: u128 = lengths.iter().map(|&l| (l as u128) * (l as u128)).sum();
    let mean = n_actions as f64 / n;
    let variance = (sum_sq as f64 / n - mean * mean).max(0.0);

    let users: HashSet<&str> = corpus.iter().map(|s| s.user_id.as_str()).collect();
    let clickout_last = corpus
        .iter()
        .filter(|s| matches!(s.events.last(), Some(e) if e.action == ActionType::ClickoutItem))
        .count();
    let filtering = corpus
        .iter()
        .filter(|s| {
            s.events.iter().any(|e| {
                matches!(
                    e.action,
                    ActionType::FilterSelection | ActionType::ChangeOfSortOrder
                )
            })
        })
        .count();
    let total_duration: i128 = corpus
        .iter()
        .map(|s| match (s.events.first(), s.events.last()) {
            (Some(first), Some(last)) => (last.timestamp - first.timestamp) as i128,
            _ => 0,
        })
        .sum();

    Ok(CorpusStats {
        n_sessions: corpus.len(),
        n_users: users.len(),
        n_actions,
        mean_actions_per_session: mean,
        std_actions_per_session: variance.sqrt(),
        max_actions_per_session: lengths.iter().copied().max().unwrap_or(0),
        clickout_last_ratio: clickout_last as f64 / n,
        mean_session_duration_seconds: total_duration as f64 / n,
        filter_usage_ratio: filtering as f64 / n,
    })
}
