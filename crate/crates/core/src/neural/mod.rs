//! GRU click scorer.
//!
//! Each (action, reference) step of the session is embedded, optionally
//! enriched with the item's metadata properties, and fed to a GRU. The
//! candidate impression is appended as a final clickout step, and a sigmoid
//! head over the last hidden state (plus an MLP over device and platform when
//! context is enabled) gives the probability that the candidate is clicked.

mod adam;
mod encode;
mod grid;
mod model;
mod params;
mod scorer;
mod train;

pub use adam::{clip_global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use encode::{
    make_examples, ContextInput, ContextVocab, Encoder, ExampleSet, Token, TrainingExample,
    Vocabulary, PAD, UNK,
};
pub use grid::{grid_search, GridReport, GridRow, HyperGrid};
pub use model::{bce, forward, loss_and_gradients, score_candidates, sigmoid, Forward, PROB_EPS};
pub use params::{
    ContextShape, GateLayout, Layout, MetadataShape, ModelParameters, ModelShape,
    CHECKPOINT_VERSION, INIT_STD,
};
pub use scorer::NeuralModel;
pub use train::{train, train_examples, TrainedModel, CLIP_NORM};

use crate::config::KeyValues;
use crate::ingest::ItemMetadata;
use crate::session::Session;
use crate::{Error, Result};

pub const EMBEDDING_SIZES: [usize; 4] = [64, 128, 256, 512];
pub const HIDDEN_SIZES: [usize; 2] = [64, 128];
pub const BATCH_SIZES: [usize; 5] = [32, 64, 128, 256, 512];
pub const EPOCHS: [usize; 4] = [5, 10, 15, 20];
pub const LEARNING_RATES: [f64; 5] = [0.0001, 0.0005, 0.001, 0.005, 0.01];
pub const MLP_LAYER_SIZES: [[usize; 2]; 3] = [[256, 128], [128, 64], [64, 32]];

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mlp_layer_sizes: [usize; 2],
    /// Older history events are dropped.
    pub max_history_len: usize,
    pub seed: u64,
    /// Pairs seen fewer times map to the unknown symbol.
    pub min_count: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embedding_size: 64,
            hidden_size: 64,
            batch_size: 64,
            epochs: 10,
            learning_rate: 0.001,
            mlp_layer_sizes: [64, 32],
            max_history_len: 50,
            seed: 0,
            min_count: 1,
        }
    }
}

pub(crate) const HYPER_KEYS: [&str; 9] = [
    "embedding_size",
    "hidden_size",
    "batch_size",
    "epochs",
    "learning_rate",
    "mlp_layer_sizes",
    "max_history_len",
    "seed",
    "min_count",
];

pub(crate) fn parse_mlp(s: &str) -> Result<[usize; 2]> {
    let bad = || Error::InvalidConfig(format!("mlp_layer_sizes: expected AxB, got {s:?}"));
    let (a, b) = s.trim().split_once('x').ok_or_else(bad)?;
    Ok([
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ])
}

impl HyperParams {
    /// Defaults overridden by any key present in `kv`.
    pub fn from_key_values(kv: &KeyValues) -> Result<HyperParams> {
        kv.reject_unknown(&HYPER_KEYS)?;
        let d = HyperParams::default();
        let h = HyperParams {
            embedding_size: kv.get("embedding_size")?.unwrap_or(d.embedding_size),
            hidden_size: kv.get("hidden_size")?.unwrap_or(d.hidden_size),
            batch_size: kv.get("batch_size")?.unwrap_or(d.batch_size),
            epochs: kv.get("epochs")?.unwrap_or(d.epochs),
            learning_rate: kv.get("learning_rate")?.unwrap_or(d.learning_rate),
            mlp_layer_sizes: kv
                .raw("mlp_layer_sizes")
                .map(parse_mlp)
                .transpose()?
                .unwrap_or(d.mlp_layer_sizes),
            max_history_len: kv.get("max_history_len")?.unwrap_or(d.max_history_len),
            seed: kv.get("seed")?.unwrap_or(d.seed),
            min_count: kv.get("min_count")?.unwrap_or(d.min_count),
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("max_history_len", self.max_history_len),
            ("mlp layer 1", self.mlp_layer_sizes[0]),
            ("mlp layer 2", self.mlp_layer_sizes[1]),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// True when every grid field lies in the standard search space.
    pub fn in_standard_grid(&self) -> bool {
        EMBEDDING_SIZES.contains(&self.embedding_size)
            && HIDDEN_SIZES.contains(&self.hidden_size)
            && BATCH_SIZES.contains(&self.batch_size)
            && EPOCHS.contains(&self.epochs)
            && LEARNING_RATES.contains(&self.learning_rate)
            && MLP_LAYER_SIZES.contains(&self.mlp_layer_sizes)
    }

    /// Space-separated `key=value` summary of the grid fields.
    pub fn describe(&self) -> String {
        format!(
            "embedding_size={} hidden_size={} batch_size={} epochs={} learning_rate={} mlp_layer_sizes={}x{}",
            self.embedding_size,
            self.hidden_size,
            self.batch_size,
            self.epochs,
            self.learning_rate,
            self.mlp_layer_sizes[0],
            self.mlp_layer_sizes[1]
        )
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "embedding_size = {}\nhidden_size = {}\nbatch_size = {}\nepochs = {}\nlearning_rate = {}\n\
             mlp_layer_sizes = {}x{}\nmax_history_len = {}\nseed = {}\nmin_count = {}\n",
            self.embedding_size,
            self.hidden_size,
            self.batch_size,
            self.epochs,
            self.learning_rate,
            self.mlp_layer_sizes[0],
            self.mlp_layer_sizes[1],
            self.max_history_len,
            self.seed,
            self.min_count
        )
    }

    /// Model shape for an encoder; metadata is projected to `E / 2` dimensions.
    pub fn shape_for(&self, encoder: &Encoder) -> ModelShape {
        ModelShape {
            vocab: encoder.vocab.len(),
            embed: self.embedding_size,
            hidden: self.hidden_size,
            metadata: encoder.n_properties().map(|p| MetadataShape {
                properties: p,
                dim: (self.embedding_size / 2).max(1),
            }),
            context: encoder.context.as_ref().map(|c| ContextShape {
                inputs: c.width(),
                layer1: self.mlp_layer_sizes[0],
                layer2: self.mlp_layer_sizes[1],
            }),
        }
    }
}

/// Optional side inputs of the scorer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureFlags {
    pub metadata: bool,
    pub context: bool,
}

impl Encoder {
    /// Vocabulary and context categories from `train`; metadata is used only when given.
    pub fn fit(
        train: &[Session],
        hyper: &HyperParams,
        metadata: Option<ItemMetadata>,
        use_context: bool,
    ) -> Encoder {
        Encoder {
            vocab: Vocabulary::build(train, hyper.min_count),
            metadata,
            context: use_context.then(|| ContextVocab::build(train)),
            max_history_len: hyper.max_history_len,
        }
    }
}
