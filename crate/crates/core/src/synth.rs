//! Seeded synthetic session logs with a planted interact-then-click pattern.
//!
//! Every session ends in a clickout over (up to) 25 impressions. Before it the
//! user searches a destination, may filter or re-sort, and looks at items from
//! the same cluster as the one they will click. With probability `p` the
//! clicked item itself is the last thing they interacted with. Item popularity
//! is Zipf distributed and items in a cluster share metadata properties.

use std::collections::HashSet;
use std::path::Path;

use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, Zipf};

use crate::ingest::{write_metadata, write_sessions, ItemMetadata};
use crate::session::{ActionType, Session, SessionEvent, MAX_IMPRESSIONS};
use crate::{Error, Result};

pub const DEVICES: [&str; 2] = ["desktop", "mobile"];
pub const PLATFORMS: [&str; 5] = ["US", "DE", "UK", "BR", "IT"];
pub const N_PROPERTY_LABELS: usize = 157;
const CLUSTER_SIZE: usize = 10;
const MOBILE_SHARE: f64 = 0.4;
const CITIES: [&str; 8] = [
    "Lisbon, Portugal",
    "Vienna, Austria",
    "Porto, Portugal",
    "Kyoto, Japan",
    "Austin, USA",
    "Lyon, France",
    "Krakow, Poland",
    "Cusco, Peru",
];
const FILTERS: [&str; 5] = ["Free WiFi", "Pool", "Breakfast", "Pet Friendly", "Parking"];
const SORTS: [&str; 3] = ["price only", "rating only", "distance only"];
const BROWSE_ACTIONS: [ActionType; 5] = [
    ActionType::InteractionItemImage,
    ActionType::InteractionItemInfo,
    ActionType::InteractionItemRatings,
    ActionType::InteractionItemDeals,
    ActionType::SearchForItem,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sessions: usize,
    pub n_items: usize,
    /// Mean number of events per session, clickout included.
    pub mean_session_len: f64,
    /// Probability that the clicked item was interacted with just before the clickout.
    pub p: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sessions: 1000,
            n_items: 500,
            mean_session_len: 6.0,
            p: 0.9,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(Error::InvalidConfig("n_sessions must be positive".into()));
        }
        if self.n_items < MAX_IMPRESSIONS {
            return Err(Error::InvalidConfig(format!(
                "n_items must be at least {MAX_IMPRESSIONS}"
            )));
        }
        if !(self.mean_session_len.is_finite() && self.mean_session_len >= 2.0) {
            return Err(Error::InvalidConfig("mean_session_len must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidConfig("p must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sessions: Vec<Session>,
    pub metadata: ItemMetadata,
    /// Per session, whether the clicked item was planted in the history.
    pub planted: Vec<bool>,
}

impl SynthCorpus {
    /// Writes `sessions.csv` and `metadata.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_sessions(dir.join("sessions.csv"), &self.sessions)?;
        write_metadata(dir.join("metadata.csv"), &self.metadata)
    }
}

pub fn item_id(i: usize) -> String {
    format!("{}", 100_000 + i * 7)
}

fn cluster_of(i: usize) -> usize {
    i / CLUSTER_SIZE
}

fn cluster_members(i: usize, n_items: usize) -> std::ops::Range<usize> {
    let c = cluster_of(i);
    c * CLUSTER_SIZE..((c + 1) * CLUSTER_SIZE).min(n_items)
}

fn build_metadata(n_items: usize, rng: &mut ChaCha8Rng) -> ItemMetadata {
    let label = |k: usize| format!("property {k:03}");
    let mut meta = ItemMetadata::default();
    for i in 0..n_items {
        let c = cluster_of(i);
        let mut labels: Vec<usize> = (0..4)
            .map(|j| (c * 13 + j * 41) % N_PROPERTY_LABELS)
            .collect();
        for _ in 0..rng.random_range(1..=4) {
            labels.push(rng.random_range(0..N_PROPERTY_LABELS));
        }
        labels.sort_unstable();
        labels.dedup();
        let labels: Vec<String> = labels.into_iter().map(label).collect();
        meta.insert(&item_id(i), &labels);
    }
    meta
}

/// Generates a corpus; the same config always yields the same corpus.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let n_items = config.n_items;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Popularity rank r maps to item popularity_order[r].
    let mut popularity_order: Vec<usize> = (0..n_items).collect();
    popularity_order.shuffle(&mut rng);
    let zipf = Zipf::new(n_items as f64, 1.0).expect("valid Zipf parameters");
    let metadata = build_metadata(n_items, &mut rng);

    // Pre-click events besides the destination search and the planted interaction.
    let extra_mean = (config.mean_session_len - 2.0 - config.p).max(0.0);
    let desktop_scale = (1.0 - MOBILE_SHARE * 0.5) / (1.0 - MOBILE_SHARE);
    let poisson = |scale: f64| {
        (extra_mean * scale > 0.0).then(|| Poisson::new(extra_mean * scale).expect("positive rate"))
    };
    let length_dists = [poisson(desktop_scale), poisson(0.5)];

    let mut sessions = Vec::with_capacity(config.n_sessions);
    let mut planted = Vec::with_capacity(config.n_sessions);
    let mut clock: i64 = 1_541_030_400;
    for s in 0..config.n_sessions {
        let device = usize::from(rng.random_bool(MOBILE_SHARE));
        let platform = *PLATFORMS.choose(&mut rng).expect("non-empty");
        let target = popularity_order[zipf.sample(&mut rng) as usize - 1];
        let plant = rng.random_bool(config.p);
        let n_extra = length_dists[device]
            .as_ref()
            .map_or(0, |d| d.sample(&mut rng) as usize);

        let mates: Vec<usize> = cluster_members(target, n_items)
            .filter(|&m| m != target)
            .collect();
        let city = *CITIES.choose(&mut rng).expect("non-empty");
        let mut actions: Vec<(ActionType, String)> =
            vec![(ActionType::SearchForDestination, city.to_string())];
        let mut touched = HashSet::new();
        for _ in 0..n_extra {
            let roll: f64 = rng.random();
            let event = if roll < 0.15 {
                (
                    ActionType::FilterSelection,
                    FILTERS.choose(&mut rng).expect("non-empty").to_string(),
                )
            } else if roll < 0.25 {
                (
                    ActionType::ChangeOfSortOrder,
                    SORTS.choose(&mut rng).expect("non-empty").to_string(),
                )
            } else if let Some(&m) = mates.choose(&mut rng) {
                touched.insert(m);
                (
                    BROWSE_ACTIONS.choose(&mut rng).expect("non-empty").clone(),
                    item_id(m),
                )
            } else {
                (ActionType::SearchForPoi, city.to_string())
            };
            actions.push(event);
        }
        if plant {
            let action = BROWSE_ACTIONS.choose(&mut rng).expect("non-empty").clone();
            actions.push((action, item_id(target)));
        }

        // Impressions: the target plus items the user never touched.
        let pool: Vec<usize> = (0..n_items)
            .filter(|i| *i != target && !touched.contains(i))
            .collect();
        let n_imps = (MAX_IMPRESSIONS - 1).min(pool.len());
        let mut shown: Vec<usize> = pool.choose_multiple(&mut rng, n_imps).copied().collect();
        let pos = rng.random_range(0..=shown.len());
        shown.insert(pos, target);
        let prices: Vec<u32> = shown
            .iter()
            .map(|&i| 40 + (i as u32 * 37) % 200 + rng.random_range(0..20))
            .collect();

        clock += rng.random_range(60..3_600);
        let mut events = Vec::with_capacity(actions.len() + 1);
        for (k, (action, reference)) in actions.into_iter().enumerate() {
            let mut e = SessionEvent::new(k as u32 + 1, clock, action, reference);
            e.city = city.to_string();
            events.push(e);
            clock += rng.random_range(5..120);
        }
        let step = events.len() as u32 + 1;
        let mut click = SessionEvent::clickout(
            step,
            clock,
            item_id(target),
            shown.iter().map(|&i| item_id(i)).collect(),
            prices,
        );
        click.city = city.to_string();
        events.push(click);

        sessions.push(Session {
            session_id: format!("{:08x}", s as u64 * 2_654_435_761 % (1 << 32)),
            user_id: format!("U{:06}", rng.random_range(0..config.n_sessions * 2)),
            device: DEVICES[device].to_string(),
            platform: platform.to_string(),
            events,
        });
        planted.push(plant);
    }
    Ok(SynthCorpus {
        sessions,
        metadata,
        planted,
    })
}
