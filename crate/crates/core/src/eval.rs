//! Mean reciprocal rank evaluation and the challenge submission file.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::session::ClickoutInstance;
use crate::{io, Error, Result};

/// Impressions in predicted order with their scores. Item order is authoritative;
/// scores need not be monotone once rules have re-ordered the list.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub items: Vec<String>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// Original impression order, all scores zero.
    pub fn identity(impressions: &[String]) -> RankedList {
        RankedList {
            items: impressions.to_vec(),
            scores: vec![0.0; impressions.len()],
        }
    }

    /// Sorts `impressions` by score descending; equal scores keep impression order.
    pub fn from_scores(impressions: &[String], scores: Vec<f64>) -> RankedList {
        debug_assert_eq!(impressions.len(), scores.len());
        let mut order: Vec<usize> = (0..impressions.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        RankedList {
            items: order.iter().map(|&i| impressions[i].clone()).collect(),
            scores: order.iter().map(|&i| scores[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, item: &str) -> Option<usize> {
        self.items.iter().position(|x| x == item)
    }
}

/// `1 / rank` of `truth` (1-based).
pub fn reciprocal_rank(ranked: &RankedList, truth: &str) -> Result<f64> {
    ranked
        .position(truth)
        .map(|p| 1.0 / (p + 1) as f64)
        .ok_or(Error::TruthNotInImpressions)
}

pub fn mean_reciprocal_rank(reciprocal_ranks: &[f64]) -> Option<f64> {
    (!reciprocal_ranks.is_empty())
        .then(|| reciprocal_ranks.iter().sum::<f64>() / reciprocal_ranks.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    /// Instances that entered the mean.
    pub n_instances: usize,
    /// Instances without a truth or whose truth was not among the impressions.
    pub n_invalid: usize,
    pub mrr: f64,
    pub reciprocal_ranks: Vec<f64>,
}

impl EvalReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method = {}", self.method);
        let _ = writeln!(out, "n_instances = {}", self.n_instances);
        let _ = writeln!(out, "n_invalid = {}", self.n_invalid);
        let _ = writeln!(out, "mrr = {}", self.mrr);
        out
    }
}

/// Ranks every instance with `rank` and averages reciprocal ranks in instance order.
///
/// With `threads > 1` ranking runs on a dedicated pool. The result does not
/// depend on the thread count.
pub fn evaluate<F>(
    method: &str,
    instances: &[ClickoutInstance],
    threads: usize,
    rank: F,
) -> Result<EvalReport>
where
    F: Fn(&ClickoutInstance) -> Result<RankedList> + Sync,
{
    let rankings = rank_all(instances, threads, rank)?;
    evaluate_rankings(method, instances, &rankings)
}

/// Produces one ranking per instance, in instance order.
pub fn rank_all<F>(
    instances: &[ClickoutInstance],
    threads: usize,
    rank: F,
) -> Result<Vec<RankedList>>
where
    F: Fn(&ClickoutInstance) -> Result<RankedList> + Sync,
{
    if threads <= 1 {
        return instances.iter().map(&rank).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| instances.par_iter().map(&rank).collect())
}

pub fn evaluate_rankings(
    method: &str,
    instances: &[ClickoutInstance],
    rankings: &[RankedList],
) -> Result<EvalReport> {
    if instances.len() != rankings.len() {
        return Err(Error::LengthMismatch {
            what: "instances vs rankings",
            left: instances.len(),
            right: rankings.len(),
        });
    }
    let mut rrs = Vec::with_capacity(instances.len());
    let mut n_invalid = 0;
    for (inst, ranked) in instances.iter().zip(rankings) {
        match inst.truth.as_deref().map(|t| reciprocal_rank(ranked, t)) {
            Some(Ok(rr)) => rrs.push(rr),
            _ => n_invalid += 1,
        }
    }
    let mrr = mean_reciprocal_rank(&rrs).ok_or(Error::NoValidInstances)?;
    Ok(EvalReport {
        method: method.to_string(),
        n_instances: rrs.len(),
        n_invalid,
        mrr,
        reciprocal_ranks: rrs,
    })
}

pub const SUBMISSION_HEADER: [&str; 5] = [
    "user_id",
    "session_id",
    "timestamp",
    "step",
    "item_recommendations",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionRow {
    pub user_id: String,
    pub session_id: String,
    pub timestamp: i64,
    pub step: u32,
    pub items: Vec<String>,
}

pub fn submission_to_csv(
    instances: &[ClickoutInstance],
    rankings: &[RankedList],
) -> Result<Vec<u8>> {
    if instances.len() != rankings.len() {
        return Err(Error::LengthMismatch {
            what: "instances vs rankings",
            left: instances.len(),
            right: rankings.len(),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUBMISSION_HEADER).expect("in-memory write");
    for (inst, ranked) in instances.iter().zip(rankings) {
        w.write_record([
            inst.user_id.as_str(),
            inst.session_id.as_str(),
            &inst.clickout.timestamp.to_string(),
            &inst.clickout.step.to_string(),
            &ranked.items.join(" "),
        ])
        .expect("in-memory write");
    }
    Ok(w.into_inner().expect("in-memory flush"))
}

pub fn write_submission(
    instances: &[ClickoutInstance],
    rankings: &[RankedList],
    path: impl AsRef<Path>,
) -> Result<()> {
    io::atomic_write(path, &submission_to_csv(instances, rankings)?)
}

pub fn read_submission(path: impl AsRef<Path>) -> Result<Vec<SubmissionRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let r = record.map_err(|e| Error::format(path, e.to_string()))?;
        if r.len() != SUBMISSION_HEADER.len() {
            return Err(Error::format(
                path,
                format!("expected 5 fields, found {}", r.len()),
            ));
        }
        let num = |s: &str| Error::format(path, format!("bad number {s:?}"));
        rows.push(SubmissionRow {
            user_id: r[0].to_string(),
            session_id: r[1].to_string(),
            timestamp: r[2].parse().map_err(|_| num(&r[2]))?,
            step: r[3].parse().map_err(|_| num(&r[3]))?,
            items: r[4].split_whitespace().map(str::to_string).collect(),
        });
    }
    Ok(rows)
}
