//! Synthetic sampled bundles with known ground truth, and every aggregate
//! recomputed from the raw draws.
//!
//! Each candidate answers with one entry of a small pool of results whose
//! row counts all differ, so "same answer" is just "same pool index".

use std::collections::BTreeSet;

use apexsql_core::agent::EpisodeResult;
use apexsql_core::exec::Value;
use apexsql_core::schema::ColumnRef;
use apexsql_core::ResultSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SAMPLES: usize = 8;
pub const POOL: usize = 4;
const COLUMNS: usize = 10;

pub fn pool_result(i: usize) -> ResultSet {
    let rows = (0..=i).map(|r| vec![Value::Integer((r * 7 + i) as i64)]).collect();
    ResultSet::from_rows(&["v"], rows)
}

pub struct Draw {
    /// Pool index each sample answered with; `None` when it never executed.
    pub answers: Vec<Option<usize>>,
    pub rounds: Vec<usize>,
    pub queries: Vec<usize>,
    /// Gold pool index, or `None` when the gold query fails.
    pub gold: Option<usize>,
    /// Index the scripted tie-breaker names, one-based, when there is a tie.
    pub pick: Option<usize>,
    pub predicted: BTreeSet<ColumnRef>,
    pub gold_columns: BTreeSet<ColumnRef>,
}

fn column(i: usize) -> ColumnRef {
    ColumnRef::new("t", format!("c{i}"))
}

fn subset(rng: &mut ChaCha8Rng, p: f64) -> BTreeSet<ColumnRef> {
    (0..COLUMNS).filter(|_| rng.random_bool(p)).map(column).collect()
}

pub fn draws(seed: u64, n: usize) -> Vec<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let answers = (0..SAMPLES)
                .map(|_| rng.random_bool(0.85).then(|| rng.random_range(0..POOL)))
                .collect();
            Draw {
                answers,
                rounds: (0..SAMPLES).map(|_| rng.random_range(0..6)).collect(),
                queries: (0..SAMPLES).map(|_| rng.random_range(0..15)).collect(),
                gold: rng.random_bool(0.9).then(|| rng.random_range(0..POOL)),
                pick: rng.random_bool(0.7).then(|| rng.random_range(1..=SAMPLES)),
                predicted: subset(&mut rng, 0.5),
                gold_columns: subset(&mut rng, 0.3),
            }
        })
        .collect()
}

pub fn episode(d: &Draw, k: usize) -> EpisodeResult {
    EpisodeResult {
        final_sql: d.answers[k].map(|i| format!("SELECT {i}")),
        final_result: d.answers[k].map(pool_result),
        rounds: d.rounds[k],
        query_count: d.queries[k],
        confirmed: d.answers[k].is_some(),
        failed: d.answers[k].is_none(),
        action_count: 0,
        token_count: 0,
        trace: Vec::new(),
    }
}

/// Index the vote should select, with ties broken by the scripted pick when
/// it names a tied representative and by the lowest index otherwise.
pub fn expected_choice(d: &Draw) -> Option<usize> {
    let mut count = [0usize; POOL];
    for a in d.answers.iter().flatten() {
        count[*a] += 1;
    }
    let best = *count.iter().max()?;
    if best == 0 {
        return None;
    }
    let reps: Vec<usize> = (0..POOL)
        .filter(|&p| count[p] == best)
        .map(|p| d.answers.iter().position(|a| *a == Some(p)).unwrap())
        .collect();
    let mut reps = reps;
    reps.sort_unstable();
    if reps.len() == 1 {
        return Some(reps[0]);
    }
    match d.pick {
        Some(p) if reps.contains(&(p - 1)) => Some(p - 1),
        _ => Some(reps[0]),
    }
}

#[derive(Debug, Default)]
pub struct Expected {
    pub srr: f64,
    pub nsr: f64,
    pub nsp: f64,
    pub nsf: f64,
    pub ex: f64,
    pub pass_at_k: f64,
    pub ex_at_k: f64,
    pub mean_rounds: f64,
    pub mean_queries: f64,
}

pub fn expected(draws: &[Draw]) -> Expected {
    let n = draws.len() as f64;
    let mut e = Expected::default();
    let (mut rounds, mut queries, mut samples) = (0usize, 0usize, 0usize);
    for d in draws {
        let hit = d.predicted.intersection(&d.gold_columns).count() as f64;
        let recall = if d.gold_columns.is_empty() { 1.0 } else { hit / d.gold_columns.len() as f64 };
        let precision = if d.predicted.is_empty() { 0.0 } else { hit / d.predicted.len() as f64 };
        let f1 = if recall + precision > 0.0 { 2.0 * recall * precision / (recall + precision) } else { 0.0 };
        e.srr += if d.gold_columns.is_subset(&d.predicted) { 1.0 } else { 0.0 };
        e.nsr += recall;
        e.nsp += precision;
        e.nsf += f1;

        rounds += d.rounds.iter().sum::<usize>();
        queries += d.queries.iter().sum::<usize>();
        samples += d.answers.len();
        let Some(gold) = d.gold else { continue };
        let correct = d.answers.iter().filter(|a| **a == Some(gold)).count();
        if correct > 0 {
            e.pass_at_k += 1.0;
        }
        e.ex_at_k += correct as f64 / d.answers.len() as f64;
        if expected_choice(d).is_some_and(|c| d.answers[c] == Some(gold)) {
            e.ex += 1.0;
        }
    }
    for x in [&mut e.srr, &mut e.nsr, &mut e.nsp, &mut e.nsf, &mut e.ex, &mut e.pass_at_k, &mut e.ex_at_k] {
        *x /= n;
    }
    e.mean_rounds = rounds as f64 / samples as f64;
    e.mean_queries = queries as f64 / samples as f64;
    e
}
