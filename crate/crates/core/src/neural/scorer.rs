use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::encode::{ContextVocab, Encoder, Vocabulary};
use super::model::score_candidates;
use super::params::ModelParameters;
use crate::eval::RankedList;
use crate::ingest::ItemMetadata;
use crate::pipeline::Ranker;
use crate::session::{ActionType, ClickoutInstance};
use crate::{io, Error, Result};

/// Trained parameters together with the encoder they expect.
#[derive(Debug, Clone)]
pub struct NeuralModel {
    pub params: ModelParameters,
    pub encoder: Encoder,
}

const SIDECAR_FORMAT: &str = "clickrank-gru-encoder";
const SIDECAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    max_history_len: usize,
    /// (action label, reference) in vocabulary order, starting at index 2.
    pairs: Vec<(String, String)>,
    devices: Option<Vec<String>>,
    platforms: Option<Vec<String>>,
    property_labels: Option<Vec<String>>,
}

impl NeuralModel {
    pub fn new(params: ModelParameters, encoder: Encoder) -> Result<NeuralModel> {
        let model = NeuralModel { params, encoder };
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let s = &self.params.shape;
        let e = &self.encoder;
        let mismatch = |what: &str, a: usize, b: usize| {
            Err(Error::ShapeMismatch(format!(
                "{what}: model {a}, encoder {b}"
            )))
        };
        if s.vocab != e.vocab.len() {
            return mismatch("vocabulary", s.vocab, e.vocab.len());
        }
        match (s.metadata, e.n_properties()) {
            (None, None) => {}
            (Some(m), Some(p)) if m.properties == p => {}
            (m, p) => {
                return mismatch(
                    "metadata properties",
                    m.map_or(0, |m| m.properties),
                    p.unwrap_or(0),
                )
            }
        }
        match (s.context, &e.context) {
            (None, None) => {}
            (Some(c), Some(v)) if c.inputs == v.width() => {}
            (c, v) => {
                return mismatch(
                    "context width",
                    c.map_or(0, |c| c.inputs),
                    v.as_ref().map_or(0, ContextVocab::width),
                )
            }
        }
        Ok(())
    }

    /// Click probability of every impression, in impression order.
    pub fn probabilities(&self, instance: &ClickoutInstance) -> Result<Vec<f64>> {
        let history = self.encoder.encode_history(instance);
        let candidates: Vec<_> = instance
            .impressions()
            .iter()
            .map(|c| self.encoder.encode_candidate(c))
            .collect();
        let ctx = self.encoder.encode_context(instance);
        score_candidates(&self.params, &history, &candidates, &ctx)
    }

    /// Impressions by descending click probability; ties keep impression order.
    pub fn score(&self, instance: &ClickoutInstance) -> Result<RankedList> {
        Ok(RankedList::from_scores(
            instance.impressions(),
            self.probabilities(instance)?,
        ))
    }

    /// Path of the encoder sidecar written next to a checkpoint.
    pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
        let mut s = checkpoint.as_os_str().to_owned();
        s.push(".encoder.json");
        PathBuf::from(s)
    }

    /// Writes the checkpoint to `path` and the encoder to [`Self::sidecar_path`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let e = &self.encoder;
        let sidecar = Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: SIDECAR_VERSION,
            max_history_len: e.max_history_len,
            pairs: e
                .vocab
                .pairs()
                .iter()
                .map(|(a, r)| (a.as_str().to_string(), r.clone()))
                .collect(),
            devices: e.context.as_ref().map(|c| c.devices().to_vec()),
            platforms: e.context.as_ref().map(|c| c.platforms().to_vec()),
            property_labels: e.metadata.as_ref().map(|m| m.labels().to_vec()),
        };
        let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serialises");
        io::atomic_write(Self::sidecar_path(path), &json)?;
        self.params.save_checkpoint(path)
    }

    /// Loads a checkpoint and its sidecar. Models trained with metadata need the
    /// item metadata again; it is re-indexed onto the training vocabulary.
    pub fn load(path: impl AsRef<Path>, metadata: Option<&ItemMetadata>) -> Result<NeuralModel> {
        let path = path.as_ref();
        let params = ModelParameters::load_checkpoint(path)?;
        let side_path = Self::sidecar_path(path);
        let bytes = std::fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(&side_path, e.to_string()))?;
        if side.format != SIDECAR_FORMAT || side.version != SIDECAR_VERSION {
            return Err(Error::format(&side_path, "unsupported encoder sidecar"));
        }
        let metadata = match (&side.property_labels, metadata) {
            (None, _) => None,
            (Some(labels), Some(m)) => Some(m.restricted_to(labels)),
            (Some(_), None) => {
                return Err(Error::InvalidConfig(
                    "model was trained with item metadata; pass the metadata file".into(),
                ))
            }
        };
        let context = match (side.devices, side.platforms) {
            (Some(d), Some(p)) => Some(ContextVocab::from_parts(d, p)),
            _ => None,
        };
        let encoder = Encoder {
            vocab: Vocabulary::from_pairs(
                side.pairs
                    .into_iter()
                    .map(|(a, r)| (ActionType::parse(&a), r)),
            ),
            metadata,
            context,
            max_history_len: side.max_history_len,
        };
        NeuralModel::new(params, encoder)
    }
}

impl Ranker for NeuralModel {
    fn name(&self) -> &str {
        "rnn"
    }

    fn rank(&self, instance: &ClickoutInstance) -> Result<RankedList> {
        self.score(instance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{HyperParams, ModelParameters};
    use crate::session::fixtures::*;
    use crate::session::{extract_clickouts, Session};
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> Vec<Session> {
        let mut s = session(
            "s",
            vec![
                event(1, ActionType::InteractionItemImage, "B"),
                event(2, ActionType::InteractionItemRatings, "C"),
                click(3, "C", &["A", "B", "C", "D"]),
            ],
        );
        s.device = "mobile".into();
        vec![s, session("t", vec![click(1, "A", &["A", "D"])])]
    }

    fn model(with_meta: bool, with_ctx: bool, zero: bool) -> NeuralModel {
        let mut meta = ItemMetadata::default();
        meta.insert("A", &["Wifi"]);
        meta.insert("C", &["Pool", "Spa"]);
        let h = HyperParams {
            embedding_size: 4,
            hidden_size: 3,
            mlp_layer_sizes: [3, 2],
            ..HyperParams::default()
        };
        let enc = Encoder::fit(&corpus(), &h, with_meta.then_some(meta), with_ctx);
        let shape = h.shape_for(&enc);
        let params = if zero {
            ModelParameters::zeros(shape)
        } else {
            ModelParameters::gaussian(shape, 0.7, 2)
        };
        NeuralModel::new(params, enc).unwrap()
    }

    #[test]
    fn zero_model_keeps_impression_order() {
        let m = model(true, true, true);
        let inst = &extract_clickouts(&corpus(), true)[0];
        let r = m.score(inst).unwrap();
        assert_eq!(r.items, ["A", "B", "C", "D"]);
        assert!(r.scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn output_is_a_permutation() {
        let m = model(true, true, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = extract_clickouts(&corpus(), true).remove(0);
        let pool: Vec<String> = (0..40)
            .map(|i| format!("{}", 100 + i))
            .chain(["A".into(), "C".into()])
            .collect();
        for _ in 0..1000 {
            let mut inst = base.clone();
            let n = rng.random_range(1..=25);
            let imps: Vec<String> = pool.choose_multiple(&mut rng, n).cloned().collect();
            inst.clickout.prices = Some(vec![1; n]);
            inst.clickout.impressions = Some(imps.clone());
            let mut got = m.score(&inst).unwrap().items;
            got.sort();
            let mut want = imps;
            want.sort();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (meta, ctx) in [(false, false), (true, true), (false, true)] {
            let m = model(meta, ctx, false);
            let path = dir.path().join(format!("m{meta}{ctx}.ckpt"));
            m.save(&path).unwrap();
            let metadata = m.encoder.metadata.clone();
            let back = NeuralModel::load(&path, metadata.as_ref()).unwrap();
            assert_eq!(back.params, m.params);
            assert_eq!(back.encoder.vocab, m.encoder.vocab);
            let inst = &extract_clickouts(&corpus(), true)[0];
            assert_eq!(back.score(inst).unwrap(), m.score(inst).unwrap());
            if meta {
                assert!(NeuralModel::load(&path, None).is_err());
            }
        }
    }

    #[test]
    fn inconsistent_encoder_is_rejected() {
        let m = model(false, false, false);
        let other = model(false, true, false);
        assert!(matches!(
            NeuralModel::new(m.params, other.encoder),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
