use std::path::Path;

use anyhow::{bail, Context};
use clickrank::baselines::{
    fit_cooccurrence, fit_iknn, BaselineModel, Conditioning, CooccurrenceKind,
};
use clickrank::config::KeyValues;
use clickrank::eval::{evaluate_rankings, rank_all, write_submission};
use clickrank::ingest::{
    parse_metadata, parse_sessions, rejects_report, split_train_validation, write_sessions,
    ItemMetadata,
};
use clickrank::io::atomic_write;
use clickrank::neural::{grid_search, train, Encoder, HyperGrid, HyperParams, NeuralModel};
use clickrank::pipeline::combined_rank;
use clickrank::session::{compute_stats, extract_clickouts};
use clickrank::synth::{generate, SynthConfig};
use clickrank::{Error, IdentityRanker, Ranker, Session};

use crate::{BaselineMethod, Command, Method};

/// 1 for usage and configuration errors, 2 for bad data, 3 for divergence.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Diverged(_)) => 3,
        Some(Error::InvalidConfig(_)) | None => 1,
        Some(_) => 2,
    }
}

fn load_sessions(path: &Path) -> anyhow::Result<Vec<Session>> {
    let log = parse_sessions(path)?;
    if !log.rejects.is_empty() {
        log::warn!("{}: {} rows rejected", path.display(), log.rejects.len());
    }
    if log.sessions.is_empty() {
        return Err(Error::EmptyCorpus).with_context(|| path.display().to_string());
    }
    log::info!("{}: {} sessions", path.display(), log.sessions.len());
    Ok(log.sessions)
}

fn load_metadata(path: Option<&Path>) -> anyhow::Result<Option<ItemMetadata>> {
    let Some(path) = path else { return Ok(None) };
    let parsed = parse_metadata(path)?;
    if !parsed.rejects.is_empty() {
        log::warn!("{}: {} rows rejected", path.display(), parsed.rejects.len());
    }
    Ok(Some(parsed.metadata))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    Ok(atomic_write(path, text.as_bytes())?)
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Stats {
            sessions,
            out,
            rejects,
        } => {
            let log = parse_sessions(&sessions)?;
            if let Some(path) = rejects {
                write_text(&path, &rejects_report(&log.rejects))?;
            }
            let text = compute_stats(&log.sessions)?.to_key_value();
            print!("{text}");
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
        }

        Command::Generate {
            sessions,
            items,
            p,
            seed,
            mean_len,
            out,
        } => {
            let corpus = generate(&SynthConfig {
                n_sessions: sessions,
                n_items: items,
                mean_session_len: mean_len,
                p,
                seed,
            })?;
            corpus.write(&out)?;
        }

        Command::Split {
            data,
            fraction,
            seed,
            train_out,
            valid_out,
        } => {
            let corpus = load_sessions(&data)?;
            let (train, valid) = split_train_validation(&corpus, fraction, seed)?;
            write_sessions(&train_out, &train)?;
            write_sessions(&valid_out, &valid)?;
        }

        Command::Fit {
            method,
            train,
            all_items,
            out,
        } => {
            let sessions = load_sessions(&train)?;
            let conditioning = if all_items {
                Conditioning::AllItems
            } else {
                Conditioning::LastItem
            };
            let kind = match method {
                BaselineMethod::Ar => Some(CooccurrenceKind::AssociationRules),
                BaselineMethod::Mc => Some(CooccurrenceKind::MarkovChain),
                BaselineMethod::Sr => Some(CooccurrenceKind::SequentialRules),
                BaselineMethod::Iknn => None,
            };
            let model = match kind {
                Some(kind) => BaselineModel::Cooccurrence(
                    fit_cooccurrence(kind, &sessions).with_conditioning(conditioning),
                ),
                None => BaselineModel::Iknn(fit_iknn(&sessions)),
            };
            model.save(&out)?;
        }

        Command::TrainRnn {
            train: train_path,
            metadata,
            context,
            config,
            out,
        } => {
            let hyper = match config {
                Some(path) => HyperParams::from_key_values(&KeyValues::load(&path)?)?,
                None => HyperParams::default(),
            };
            let sessions = load_sessions(&train_path)?;
            let metadata = load_metadata(metadata.as_deref())?;
            let encoder = Encoder::fit(&sessions, &hyper, metadata, context);
            let trained = train(&extract_clickouts(&sessions, false), &hyper, &encoder)?;
            if let Some(loss) = trained.loss_history.last() {
                log::info!("final epoch loss {loss:.6}");
            }
            NeuralModel::new(trained.params, encoder)?.save(&out)?;
        }

        Command::GridSearch {
            train,
            valid,
            grid,
            metadata,
            context,
            out,
            best_config,
        } => {
            let grid = HyperGrid::from_key_values(&KeyValues::load(&grid)?)?;
            let train = load_sessions(&train)?;
            let valid = load_sessions(&valid)?;
            let metadata = load_metadata(metadata.as_deref())?;
            let report = grid_search(&train, &valid, &grid, metadata.as_ref(), context)?;
            write_text(&out, &report.to_key_value())?;
            if let Some(path) = best_config {
                write_text(&path, &report.best.to_key_value())?;
            }
            println!("best = {}", report.best.describe());
            println!("best_mrr = {}", report.best_mrr);
        }

        Command::Evaluate {
            method,
            model,
            metadata,
            data,
            all_clickouts,
            threads,
            report,
            submission,
        } => {
            let ranker: Box<dyn Ranker + Send> = match method {
                Method::Identity | Method::Rules => Box::new(IdentityRanker),
                Method::Ar | Method::Mc | Method::Sr | Method::Iknn => {
                    let Some(path) = model else {
                        bail!("--model is required for this method");
                    };
                    let loaded = BaselineModel::load(&path)?;
                    let wanted = method_name(method);
                    if loaded.name() != wanted {
                        bail!(
                            "{} holds a {} model, not {wanted}",
                            path.display(),
                            loaded.name()
                        );
                    }
                    Box::new(loaded)
                }
                Method::Rnn | Method::RnnRules => {
                    let Some(path) = model else {
                        bail!("--model is required for this method");
                    };
                    let metadata = load_metadata(metadata.as_deref())?;
                    Box::new(NeuralModel::load(&path, metadata.as_ref())?)
                }
            };
            let apply_rules = matches!(method, Method::Rules | Method::RnnRules);
            let sessions = load_sessions(&data)?;
            let instances = extract_clickouts(&sessions, !all_clickouts);
            let rankings = rank_all(&instances, threads, |i| {
                combined_rank(i, ranker.as_ref(), apply_rules)
            })?;
            let result = evaluate_rankings(method_name(method), &instances, &rankings)?;
            let text = result.to_key_value();
            write_text(&report, &text)?;
            if let Some(path) = submission {
                write_submission(&instances, &rankings, &path)?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn method_name(method: Method) -> &'static str {
    match method {
        Method::Identity => "identity",
        Method::Rules => "rules",
        Method::Ar => "ar",
        Method::Mc => "mc",
        Method::Sr => "sr",
        Method::Iknn => "iknn",
        Method::Rnn => "rnn",
        Method::RnnRules => "rnn+rules",
    }
}
