use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encode::{make_examples, Encoder};
use super::scorer::NeuralModel;
use super::train::train_examples;
use super::{
    parse_mlp, HyperParams, BATCH_SIZES, EMBEDDING_SIZES, EPOCHS, HIDDEN_SIZES, HYPER_KEYS,
    LEARNING_RATES, MLP_LAYER_SIZES,
};
use crate::config::KeyValues;
use crate::eval::evaluate;
use crate::ingest::ItemMetadata;
use crate::session::{extract_clickouts, Session};
use crate::{Error, Result};

/// Value sets searched exhaustively. Non-grid fields come from `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub embedding_sizes: Vec<usize>,
    pub hidden_sizes: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub mlp_layer_sizes: Vec<[usize; 2]>,
    pub base: HyperParams,
    /// Evaluate only this many configurations, sampled with `base.seed`.
    pub budget: Option<usize>,
}

const GRID_KEYS: [&str; 6] = [
    "embedding_size",
    "hidden_size",
    "batch_size",
    "epochs",
    "learning_rate",
    "mlp_layer_sizes",
];

impl HyperGrid {
    /// Every value of the standard search space.
    pub fn full() -> HyperGrid {
        HyperGrid {
            embedding_sizes: EMBEDDING_SIZES.to_vec(),
            hidden_sizes: HIDDEN_SIZES.to_vec(),
            batch_sizes: BATCH_SIZES.to_vec(),
            epochs: EPOCHS.to_vec(),
            learning_rates: LEARNING_RATES.to_vec(),
            mlp_layer_sizes: MLP_LAYER_SIZES.to_vec(),
            base: HyperParams::default(),
            budget: None,
        }
    }

    /// A one-point grid.
    pub fn single(h: &HyperParams) -> HyperGrid {
        HyperGrid {
            embedding_sizes: vec![h.embedding_size],
            hidden_sizes: vec![h.hidden_size],
            batch_sizes: vec![h.batch_size],
            epochs: vec![h.epochs],
            learning_rates: vec![h.learning_rate],
            mlp_layer_sizes: vec![h.mlp_layer_sizes],
            base: h.clone(),
            budget: None,
        }
    }

    /// Comma-separated lists per grid key; missing keys fall back to the full
    /// standard set. `budget`, `max_history_len`, `seed` and `min_count` are scalars.
    pub fn from_key_values(kv: &KeyValues) -> Result<HyperGrid> {
        let mut known: Vec<&str> = HYPER_KEYS.to_vec();
        known.push("budget");
        kv.reject_unknown(&known)?;
        let full = HyperGrid::full();
        let d = HyperParams::default();
        let base = HyperParams {
            max_history_len: kv.get("max_history_len")?.unwrap_or(d.max_history_len),
            seed: kv.get("seed")?.unwrap_or(d.seed),
            min_count: kv.get("min_count")?.unwrap_or(d.min_count),
            ..d
        };
        let mlp = match kv.get_list::<String>("mlp_layer_sizes")? {
            Some(v) => v.iter().map(|s| parse_mlp(s)).collect::<Result<_>>()?,
            None => full.mlp_layer_sizes,
        };
        let grid = HyperGrid {
            embedding_sizes: kv
                .get_list("embedding_size")?
                .unwrap_or(full.embedding_sizes),
            hidden_sizes: kv.get_list("hidden_size")?.unwrap_or(full.hidden_sizes),
            batch_sizes: kv.get_list("batch_size")?.unwrap_or(full.batch_sizes),
            epochs: kv.get_list("epochs")?.unwrap_or(full.epochs),
            learning_rates: kv.get_list("learning_rate")?.unwrap_or(full.learning_rates),
            mlp_layer_sizes: mlp,
            base,
            budget: kv.get("budget")?,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.embedding_sizes.len(),
            self.hidden_sizes.len(),
            self.batch_sizes.len(),
            self.epochs.len(),
            self.learning_rates.len(),
            self.mlp_layer_sizes.len(),
        ];
        if let Some(i) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidConfig(format!(
                "{} grid is empty",
                GRID_KEYS[i]
            )));
        }
        if self.budget == Some(0) {
            return Err(Error::InvalidConfig("budget must be positive".into()));
        }
        self.configs().iter().try_for_each(HyperParams::validate)
    }

    /// Size of the full Cartesian product.
    pub fn len(&self) -> usize {
        self.embedding_sizes.len()
            * self.hidden_sizes.len()
            * self.batch_sizes.len()
            * self.epochs.len()
            * self.learning_rates.len()
            * self.mlp_layer_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, last key varying fastest.
    pub fn product(&self) -> Vec<HyperParams> {
        let mut out = Vec::with_capacity(self.len());
        for &embedding_size in &self.embedding_sizes {
            for &hidden_size in &self.hidden_sizes {
                for &batch_size in &self.batch_sizes {
                    for &epochs in &self.epochs {
                        for &learning_rate in &self.learning_rates {
                            for &mlp_layer_sizes in &self.mlp_layer_sizes {
                                out.push(HyperParams {
                                    embedding_size,
                                    hidden_size,
                                    batch_size,
                                    epochs,
                                    learning_rate,
                                    mlp_layer_sizes,
                                    ..self.base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// The product, or a seeded subsample of it (in product order) under a budget.
    pub fn configs(&self) -> Vec<HyperParams> {
        let all = self.product();
        match self.budget {
            Some(b) if b < all.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.base.seed);
                let mut picked = sample(&mut rng, all.len(), b).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| all[i].clone()).collect()
            }
            _ => all,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub hyper: HyperParams,
    /// `None` when training diverged.
    pub mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub best: HyperParams,
    pub best_mrr: f64,
}

impl GridReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_configs = {}", self.rows.len());
        let _ = writeln!(out, "best = {}", self.best.describe());
        let _ = writeln!(out, "best_mrr = {}", self.best_mrr);
        for (i, row) in self.rows.iter().enumerate() {
            let mrr = row.mrr.map_or("diverged".to_string(), |m| m.to_string());
            let _ = writeln!(out, "config.{i} = {} mrr={mrr}", row.hyper.describe());
        }
        out
    }
}

/// Trains one scorer per configuration and keeps the best validation MRR.
///
/// Validation uses the last clickout of each session. Ties go to the smaller
/// embedding, then the smaller hidden size, then the earlier configuration.
pub fn grid_search(
    train: &[Session],
    valid: &[Session],
    grid: &HyperGrid,
    metadata: Option<&ItemMetadata>,
    use_context: bool,
) -> Result<GridReport> {
    grid.validate()?;
    let encoder = Encoder::fit(train, &grid.base, metadata.cloned(), use_context);
    let examples = make_examples(&extract_clickouts(train, false), &encoder);
    let valid = extract_clickouts(valid, true);

    let mut rows = Vec::new();
    for hyper in grid.configs() {
        let mrr = match train_examples(&examples.examples, hyper.shape_for(&encoder), &hyper) {
            Ok(trained) => {
                let model = NeuralModel::new(trained.params, encoder.clone())?;
                Some(evaluate("rnn", &valid, 1, |i| model.score(i))?.mrr)
            }
            Err(Error::Diverged(why)) => {
                log::warn!("{}: diverged ({why})", hyper.describe());
                None
            }
            Err(e) => return Err(e),
        };
        log::info!("{} mrr={mrr:?}", hyper.describe());
        rows.push(GridRow { hyper, mrr });
    }

    let best = rows
        .iter()
        .filter_map(|r| r.mrr.map(|m| (r, m)))
        .reduce(|a, b| {
            let key = |(r, _): &(&GridRow, f64)| (r.hyper.embedding_size, r.hyper.hidden_size);
            if b.1 > a.1 || (b.1 == a.1 && key(&b) < key(&a)) {
                b
            } else {
                a
            }
        })
        .map(|(r, m)| (r.hyper.clone(), m))
        .ok_or_else(|| Error::Diverged("every configuration diverged".into()))?;
    Ok(GridReport {
        rows,
        best: best.0,
        best_mrr: best.1,
    })
}
