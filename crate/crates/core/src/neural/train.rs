use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_global_norm, AdamState};
use super::encode::{make_examples, Encoder, TrainingExample};
use super::model::accumulate_gradients;
use super::params::{ModelParameters, ModelShape};
use super::HyperParams;
use crate::session::ClickoutInstance;
use crate::{Error, Result};

/// Global gradient norm ceiling applied before each Adam step.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParameters,
    /// Mean per-example loss of each epoch.
    pub loss_history: Vec<f64>,
    pub batches_per_epoch: usize,
}

/// Consecutive runs of examples sharing one clickout history.
fn clickout_groups(examples: &[TrainingExample]) -> Vec<Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=examples.len() {
        if i == examples.len() || !Arc::ptr_eq(&examples[i].history, &examples[start].history) {
            groups.push(start..i);
            start = i;
        }
    }
    groups
}

/// Mini-batch Adam on mean binary cross-entropy.
///
/// Clickouts are shuffled each epoch with their examples kept adjacent.
/// Deterministic for a given seed.
pub fn train_examples(
    examples: &[TrainingExample],
    shape: ModelShape,
    hyper: &HyperParams,
) -> Result<TrainedModel> {
    hyper.validate()?;
    shape.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    let mut params = ModelParameters::init(shape, hyper.seed);
    let mut adam = AdamState::new(params.len());
    let mut grads = params.zeros_like();
    let mut shuffler = ChaCha8Rng::seed_from_u64(hyper.seed);
    shuffler.set_stream(1);

    let mut groups = clickout_groups(examples);
    let batches_per_epoch = examples.len().div_ceil(hyper.batch_size);
    let mut loss_history = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<&TrainingExample> = Vec::with_capacity(examples.len());

    for epoch in 0..hyper.epochs {
        groups.shuffle(&mut shuffler);
        order.clear();
        order.extend(groups.iter().flat_map(|g| &examples[g.clone()]));

        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            grads.data.iter_mut().for_each(|g| *g = 0.0);
            let loss = accumulate_gradients(&params, batch, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            epoch_loss += loss * batch.len() as f64;
            clip_global_norm(&mut grads.data, CLIP_NORM);
            adam.step(&mut params.data, &grads.data, hyper.learning_rate)
                .map_err(|e| Error::Diverged(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let mean = epoch_loss / examples.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        loss_history.push(mean);
    }
    Ok(TrainedModel {
        params,
        loss_history,
        batches_per_epoch,
    })
}

/// Builds examples from `instances` and trains a scorer shaped for `encoder`.
pub fn train(
    instances: &[ClickoutInstance],
    hyper: &HyperParams,
    encoder: &Encoder,
) -> Result<TrainedModel> {
    let set = make_examples(instances, encoder);
    if set.skipped > 0 {
        log::warn!(
            "{} clickouts without a usable truth were skipped",
            set.skipped
        );
    }
    train_examples(&set.examples, hyper.shape_for(encoder), hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::encode::{ContextInput, Token};

    fn shape() -> ModelShape {
        ModelShape {
            vocab: 8,
            embed: 4,
            hidden: 4,
            metadata: None,
            context: None,
        }
    }

    /// History token 2 means candidate 4 is clicked, token 3 means candidate 5.
    fn separable(n: usize) -> Vec<TrainingExample> {
        let mut out = Vec::new();
        for i in 0..n {
            let cue = 2 + i % 2;
            let history: Arc<[Token]> = vec![Token::new(6), Token::new(cue)].into();
            for cand in [4, 5] {
                out.push(TrainingExample {
                    history: Arc::clone(&history),
                    candidate: Token::new(cand),
                    context: ContextInput::default(),
                    label: if cand == cue + 2 { 1.0 } else { 0.0 },
                });
            }
        }
        out
    }

    fn hyper(batch: usize, epochs: usize, lr: f64) -> HyperParams {
        HyperParams {
            embedding_size: 4,
            hidden_size: 4,
            batch_size: batch,
            epochs,
            learning_rate: lr,
            seed: 3,
            ..HyperParams::default()
        }
    }

    #[test]
    fn ten_examples_fit_in_one_batch() {
        let ex = separable(5);
        assert_eq!(ex.len(), 10);
        let m = train_examples(&ex, shape(), &hyper(32, 1, 0.01)).unwrap();
        assert_eq!(m.batches_per_epoch, 1);
        assert_eq!(m.loss_history.len(), 1);
    }

    #[test]
    fn loss_decreases_on_separable_task() {
        // The cue/candidate interaction starts on a plateau near ln 2.
        let m = train_examples(&separable(200), shape(), &hyper(16, 20, 0.01)).unwrap();
        let l = &m.loss_history;
        assert!(l[0] < 0.7, "{l:?}");
        assert!(l[..5].windows(2).all(|w| w[1] < w[0]), "{l:?}");
        assert!(l[15..].iter().all(|&x| x < 0.01), "{l:?}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let ex = separable(40);
        let a = train_examples(&ex, shape(), &hyper(8, 3, 0.005)).unwrap();
        let b = train_examples(&ex, shape(), &hyper(8, 3, 0.005)).unwrap();
        let bits = |m: &TrainedModel| {
            m.loss_history
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.params, b.params);
        let c = train_examples(
            &ex,
            shape(),
            &HyperParams {
                seed: 4,
                ..hyper(8, 3, 0.005)
            },
        )
        .unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_learning_rate_keeps_initialisation() {
        let h = hyper(8, 2, 0.0);
        let m = train_examples(&separable(10), shape(), &h).unwrap();
        assert_eq!(m.params, ModelParameters::init(shape(), h.seed));
    }

    #[test]
    fn groups_follow_shared_histories() {
        let ex = separable(3);
        assert_eq!(clickout_groups(&ex), vec![0..2, 2..4, 4..6]);
    }

    #[test]
    fn empty_training_set() {
        assert!(train_examples(&[], shape(), &hyper(8, 1, 0.01)).is_err());
    }
}
