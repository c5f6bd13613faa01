//! Link-prediction evaluation with the tie-aware realistic mean rank.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::Fact;
use crate::kge::EmbeddingSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("entity or relation {0} has no embedding")]
    UnembeddedEntity(u32),
    #[error("non-finite score")]
    NonFiniteScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Both,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Both => "both",
        }
    }
}

/// Expected rank of `scores[true_index]` over all orderings that respect the
/// scores: strictly better count plus half of the tie group, self included.
pub fn realistic_rank(scores: &[f64], true_index: usize) -> Result<f64, RankError> {
    let s = *scores.get(true_index).ok_or(RankError::IndexOutOfRange {
        index: true_index,
        len: scores.len(),
    })?;
    if !s.is_finite() {
        return Err(RankError::NonFiniteScore);
    }
    let (mut better, mut ties) = (0usize, 0usize);
    for &v in scores {
        if v > s {
            better += 1;
        } else if v == s {
            ties += 1;
        }
    }
    Ok(better as f64 + (ties as f64 + 1.0) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub mr_left: Option<f64>,
    pub mr_right: Option<f64>,
    /// Mean over the union of all computed left and right ranks.
    pub mr_both: f64,
    pub left_ranks: Vec<f64>,
    pub right_ranks: Vec<f64>,
}

impl RankReport {
    pub fn value(&self, side: Side) -> Option<f64> {
        match side {
            Side::Left => self.mr_left,
            Side::Right => self.mr_right,
            Side::Both => Some(self.mr_both),
        }
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Raw (unfiltered) mean rank: every embedded entity is a candidate.
pub fn evaluate_mr(facts: &[Fact], emb: &EmbeddingSet, side: Side) -> Result<RankReport, RankError> {
    for f in facts {
        for e in [f.head.0, f.tail.0] {
            if e as usize >= emb.n_entities {
                return Err(RankError::UnembeddedEntity(e));
            }
        }
        if f.relation.0 as usize >= emb.n_relations {
            return Err(RankError::UnembeddedEntity(f.relation.0));
        }
    }
    let ranks = |tail: bool| -> Result<Vec<f64>, RankError> {
        facts
            .par_iter()
            .map(|f| {
                let (anchor, truth) = if tail { (f.head, f.tail) } else { (f.tail, f.head) };
                let scores = emb.score_candidates(anchor.0 as usize, f.relation.0 as usize, tail);
                realistic_rank(&scores, truth.0 as usize)
            })
            .collect()
    };
    let left_ranks = if side != Side::Right { ranks(false)? } else { Vec::new() };
    let right_ranks = if side != Side::Left { ranks(true)? } else { Vec::new() };
    let all: Vec<f64> = left_ranks.iter().chain(&right_ranks).copied().collect();
    Ok(RankReport {
        mr_left: mean(&left_ranks),
        mr_right: mean(&right_ranks),
        mr_both: mean(&all).unwrap_or(f64::NAN),
        left_ranks,
        right_ranks,
    })
}

/// Deterministic split into (train, holdout) with `fraction` held out.
pub fn split_holdout(facts: &[Fact], fraction: f64, seed: u64) -> (Vec<Fact>, Vec<Fact>) {
    let mut idx: Vec<usize> = (0..facts.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((facts.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut test: Vec<usize> = idx[..k].to_vec();
    let mut train: Vec<usize> = idx[k..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (
        train.into_iter().map(|i| facts[i]).collect(),
        test.into_iter().map(|i| facts[i]).collect(),
    )
}

/// One row of a mean-rank sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrRow {
    pub model: String,
    pub buffer_cfg: String,
    pub link_cfg: String,
    pub side: String,
    #[serde(rename = "MR")]
    pub mr: f64,
}

pub fn mr_rows_to_csv(rows: &[MrRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn mr_rows_from_csv(text: &str) -> Result<Vec<MrRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_cases() {
        assert_eq!(realistic_rank(&[5.0, 1.0, 2.0], 0).unwrap(), 1.0);
        assert_eq!(realistic_rank(&[1.0; 7], 3).unwrap(), 4.0);
        assert_eq!(realistic_rank(&[3.0, 2.0, 2.0, 1.0], 1).unwrap(), 2.5);
        assert_eq!(
            realistic_rank(&[1.0], 1),
            Err(RankError::IndexOutOfRange { index: 1, len: 1 })
        );
    }

    #[test]
    fn csv_rows() {
        let rows = vec![MrRow {
            model: "TransE".into(),
            buffer_cfg: "10-100".into(),
            link_cfg: "6".into(),
            side: "both".into(),
            mr: 12.5,
        }];
        let text = mr_rows_to_csv(&rows);
        assert_eq!(text, "model,buffer_cfg,link_cfg,side,MR\nTransE,10-100,6,both,12.5\n");
        assert_eq!(mr_rows_from_csv(&text).unwrap(), rows);
    }
}
