//! Shared fixtures for the benchmarks.

use clickrank::neural::{Encoder, HyperParams, ModelParameters, NeuralModel};
use clickrank::synth::{generate, SynthConfig};
use clickrank::{ClickoutInstance, Session};

/// A seeded synthetic corpus and its clickouts.
pub fn corpus(n_sessions: usize) -> (Vec<Session>, Vec<ClickoutInstance>) {
    let corpus = generate(&SynthConfig {
        n_sessions,
        n_items: 500,
        mean_session_len: 6.0,
        p: 0.9,
        seed: 11,
    })
    .expect("valid synth config");
    let instances = clickrank::session::extract_clickouts(&corpus.sessions, false);
    (corpus.sessions, instances)
}

/// An untrained scorer of the given size over `sessions`.
pub fn neural_model(sessions: &[Session], embed: usize, hidden: usize) -> NeuralModel {
    let hyper = HyperParams {
        embedding_size: embed,
        hidden_size: hidden,
        ..HyperParams::default()
    };
    let encoder = Encoder::fit(sessions, &hyper, None, true);
    let params = ModelParameters::init(hyper.shape_for(&encoder), 1);
    NeuralModel::new(params, encoder).expect("consistent shapes")
}
