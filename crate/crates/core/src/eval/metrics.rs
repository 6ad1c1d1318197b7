//! Linking and generation scores, per example and averaged.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::vote::{CandidateBundle, VoteOutcome};
use crate::exec::{compare, CompareMode, ResultSet};
use crate::schema::{ColumnRef, SchemaSubset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkingExample {
    pub covered: bool,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub retained_count: usize,
}

pub fn score_linking(pred: &SchemaSubset, gold: &BTreeSet<ColumnRef>) -> LinkingExample {
    let gold: BTreeSet<ColumnRef> = gold.iter().map(ColumnRef::normalized).collect();
    let hit = pred.refs().iter().filter(|r| gold.contains(*r)).count() as f64;
    let recall = if gold.is_empty() { 1.0 } else { hit / gold.len() as f64 };
    let precision = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    };
    LinkingExample {
        covered: recall == 1.0,
        recall,
        precision,
        f1,
        retained_count: pred.len(),
    }
}

/// Macro averages over examples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkingAggregate {
    #[serde(rename = "SRR")]
    pub srr: f64,
    #[serde(rename = "NSR")]
    pub nsr: f64,
    #[serde(rename = "NSP")]
    pub nsp: f64,
    #[serde(rename = "NSF")]
    pub nsf: f64,
    /// Mean number of retained columns.
    #[serde(rename = "C_bar")]
    pub mean_columns: f64,
    pub examples: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn aggregate_linking(examples: &[LinkingExample]) -> LinkingAggregate {
    LinkingAggregate {
        srr: mean(examples.iter().map(|e| f64::from(u8::from(e.covered)))),
        nsr: mean(examples.iter().map(|e| e.recall)),
        nsp: mean(examples.iter().map(|e| e.precision)),
        nsf: mean(examples.iter().map(|e| e.f1)),
        mean_columns: mean(examples.iter().map(|e| e.retained_count as f64)),
        examples: examples.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationExample {
    pub ex: bool,
    pub pass_at_k: bool,
    pub ex_at_k: f64,
    /// Exploration rounds of each sample.
    pub rounds: Vec<usize>,
    /// Exploration queries of each sample.
    pub queries: Vec<usize>,
    pub selected: usize,
    /// Gold query failed to run; the example scores zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_error: Option<String>,
}

/// Correctness of each candidate against the gold result.
pub fn candidate_correctness(bundle: &CandidateBundle, gold: &ResultSet, mode: CompareMode) -> Vec<bool> {
    bundle
        .candidates
        .iter()
        .map(|c| c.episode.final_result.as_ref().is_some_and(|r| compare(r, gold, mode)))
        .collect()
}

pub fn score_example(
    bundle: &CandidateBundle,
    vote: &VoteOutcome,
    gold: Result<&ResultSet, String>,
    mode: CompareMode,
) -> GenerationExample {
    let rounds = bundle.candidates.iter().map(|c| c.episode.rounds).collect();
    let queries = bundle.candidates.iter().map(|c| c.episode.query_count).collect();
    let gold = match gold {
        Ok(g) => g,
        Err(e) => {
            return GenerationExample {
                ex: false,
                pass_at_k: false,
                ex_at_k: 0.0,
                rounds,
                queries,
                selected: vote.index,
                gold_error: Some(e),
            }
        }
    };
    let correct = candidate_correctness(bundle, gold, mode);
    GenerationExample {
        ex: !vote.unselectable && correct.get(vote.index).copied().unwrap_or(false),
        pass_at_k: correct.iter().any(|&c| c),
        ex_at_k: mean(correct.iter().map(|&c| f64::from(u8::from(c)))),
        rounds,
        queries,
        selected: vote.index,
        gold_error: None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationAggregate {
    #[serde(rename = "EX")]
    pub ex: f64,
    #[serde(rename = "Pass@k")]
    pub pass_at_k: f64,
    #[serde(rename = "EX@k")]
    pub ex_at_k: f64,
    /// Mean exploration rounds over every sample of every example.
    #[serde(rename = "R_bar")]
    pub mean_rounds: f64,
    #[serde(rename = "Q_bar")]
    pub mean_queries: f64,
    pub examples: usize,
}

pub fn aggregate_generation(examples: &[GenerationExample]) -> GenerationAggregate {
    GenerationAggregate {
        ex: mean(examples.iter().map(|e| f64::from(u8::from(e.ex)))),
        pass_at_k: mean(examples.iter().map(|e| f64::from(u8::from(e.pass_at_k)))),
        ex_at_k: mean(examples.iter().map(|e| e.ex_at_k)),
        mean_rounds: mean(examples.iter().flat_map(|e| e.rounds.iter().map(|&r| r as f64))),
        mean_queries: mean(examples.iter().flat_map(|e| e.queries.iter().map(|&q| q as f64))),
        examples: examples.len(),
    }
}

/// Scores many bundles at once. `golds[i]` is the gold result of bundle `i`
/// or the reason it could not be computed.
pub fn score_generation(
    bundles: &[CandidateBundle],
    votes: &[VoteOutcome],
    golds: &[Result<ResultSet, String>],
    mode: CompareMode,
) -> (Vec<GenerationExample>, GenerationAggregate) {
    let per: Vec<GenerationExample> = bundles
        .iter()
        .zip(votes)
        .zip(golds)
        .map(|((b, v), g)| score_example(b, v, g.as_ref().map_err(Clone::clone), mode))
        .collect();
    let agg = aggregate_generation(&per);
    (per, agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::EpisodeResult;
    use crate::exec::Value;

    fn subset(cols: &[&str]) -> SchemaSubset {
        cols.iter().map(|c| ColumnRef::new("t", c)).collect()
    }

    fn gold(cols: &[&str]) -> BTreeSet<ColumnRef> {
        cols.iter().map(|c| ColumnRef::new("t", c)).collect()
    }

    #[test]
    fn linking_examples() {
        let same = score_linking(&subset(&["a", "b"]), &gold(&["a", "b"]));
        assert!(same.covered && same.recall == 1.0 && same.precision == 1.0);
        let extra = score_linking(&subset(&["a", "b", "c"]), &gold(&["a", "b"]));
        assert!(extra.covered);
        assert_eq!(extra.precision, 2.0 / 3.0);
        let short = score_linking(&subset(&["a"]), &gold(&["A", "b"]));
        assert_eq!(short.recall, 0.5);
        assert!(!short.covered);
        let empty = score_linking(&subset(&[]), &gold(&["a"]));
        assert_eq!((empty.precision, empty.f1), (0.0, 0.0));
    }

    fn ep(v: i64, rounds: usize) -> EpisodeResult {
        EpisodeResult {
            final_sql: Some(format!("SELECT {v}")),
            final_result: Some(ResultSet::from_rows(&["x"], vec![vec![Value::Integer(v)]])),
            rounds,
            query_count: rounds * 2,
            confirmed: true,
            failed: false,
            action_count: 4,
            token_count: 0,
            trace: Vec::new(),
        }
    }

    fn vote_for(i: usize) -> VoteOutcome {
        VoteOutcome {
            index: i,
            unselectable: false,
            tied: Vec::new(),
            model_pick: false,
        }
    }

    #[test]
    fn generation_examples() {
        let g = ResultSet::from_rows(&["x"], vec![vec![Value::Integer(1)]]);
        let mut eps = vec![ep(1, 1)];
        eps.extend((0..7).map(|_| ep(0, 1)));
        let b = CandidateBundle::new(eps);
        let right = score_example(&b, &vote_for(0), Ok(&g), CompareMode::Strict);
        assert!(right.ex && right.pass_at_k);
        assert_eq!(right.ex_at_k, 0.125);
        let wrong = score_example(&b, &vote_for(3), Ok(&g), CompareMode::Strict);
        assert!(!wrong.ex && wrong.pass_at_k);
    }

    #[test]
    fn rounds_average_over_all_samples() {
        let g = ResultSet::from_rows(&["x"], vec![vec![Value::Integer(1)]]);
        let b1 = CandidateBundle::new(vec![ep(1, 2), ep(1, 4)]);
        let b2 = CandidateBundle::new(vec![ep(1, 1), ep(1, 1), ep(1, 3), ep(1, 3)]);
        let (_, agg) = score_generation(
            &[b1, b2],
            &[vote_for(0), vote_for(0)],
            &[Ok(g.clone()), Ok(g)],
            CompareMode::Strict,
        );
        assert_eq!(agg.mean_rounds, 14.0 / 6.0);
        assert_eq!(agg.mean_queries, 28.0 / 6.0);
    }
}
