//! Picking one answer out of several sampled episodes.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agent::EpisodeResult;
use crate::exec::{canonicalize, DEFAULT_FLOAT_PRECISION};
use crate::llm::{fenced_blocks, ChatRequest, Gateway};
use crate::prompts::{Prompts, Template};

pub const DEFAULT_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub episode: EpisodeResult,
    /// Order-insensitive key of the final result; `None` when the episode
    /// produced no executable query.
    pub canonical_key: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateBundle {
    pub candidates: Vec<Candidate>,
}

impl CandidateBundle {
    pub fn new(episodes: Vec<EpisodeResult>) -> Self {
        let candidates = episodes
            .into_iter()
            .map(|episode| {
                let canonical_key = episode
                    .final_result
                    .as_ref()
                    .map(|r| canonicalize(r, DEFAULT_FLOAT_PRECISION));
                Candidate {
                    episode,
                    canonical_key,
                }
            })
            .collect();
        Self { candidates }
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Plurality {
    Winner(usize),
    /// First member of each tied key, in order of first appearance.
    Tie(Vec<usize>),
    NoneExecuted,
}

/// Groups candidates by result key and finds the largest group.
pub fn plurality(bundle: &CandidateBundle) -> Plurality {
    // key -> (first index, count); insertion order tracked by first index
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, c) in bundle.candidates.iter().enumerate() {
        if let Some(k) = &c.canonical_key {
            groups.entry(k.as_str()).or_insert((i, 0)).1 += 1;
        }
    }
    let Some(best) = groups.values().map(|g| g.1).max() else {
        return Plurality::NoneExecuted;
    };
    let mut top: Vec<usize> = groups.values().filter(|g| g.1 == best).map(|g| g.0).collect();
    top.sort_unstable();
    if top.len() == 1 {
        Plurality::Winner(top[0])
    } else {
        Plurality::Tie(top)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub index: usize,
    /// No candidate executed; `index` is just the first one.
    pub unselectable: bool,
    /// Representatives the tie-breaker chose between, if there was a tie.
    pub tied: Vec<usize>,
    pub model_pick: bool,
}

static PICK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)candidate_(\d+)\.sql").expect("pick regex"));

/// Candidate index named in a tie-breaker answer: the last file name inside
/// a fenced block, else the last one anywhere.
pub fn parse_pick(content: &str) -> Option<usize> {
    let last_in = |text: &str| {
        PICK.captures_iter(text)
            .last()
            .and_then(|c| c[1].parse::<usize>().ok())
    };
    fenced_blocks(content)
        .iter()
        .rev()
        .find_map(|(_, body)| last_in(body))
        .or_else(|| last_in(content))
        .and_then(|n| n.checked_sub(1))
}

fn strategy(episode: &EpisodeResult) -> String {
    episode
        .trace
        .iter()
        .rev()
        .find(|r| r.kind == "REFINE")
        .map(|r| r.body.clone())
        .unwrap_or_else(|| "(no strategy recorded)".to_string())
}

pub fn render_candidates(bundle: &CandidateBundle, indices: &[usize]) -> String {
    indices
        .iter()
        .map(|&i| {
            let ep = &bundle.candidates[i].episode;
            format!(
                "### candidate_{}.sql\n**Execution Strategy**:\n{}\n**Final SQL**:\n```sql\n{}\n```",
                i + 1,
                strategy(ep),
                ep.final_sql.as_deref().unwrap_or("")
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Majority vote over result keys with a model call to break ties. Never
/// fails: a tie-breaker that errors or names nothing valid falls back to the
/// lowest-index tied candidate.
pub fn vote(
    gateway: &Gateway,
    prompts: &Prompts,
    question: &str,
    schema_text: &str,
    bundle: &CandidateBundle,
    max_output_tokens: u64,
) -> VoteOutcome {
    match plurality(bundle) {
        Plurality::NoneExecuted => VoteOutcome {
            index: 0,
            unselectable: true,
            tied: Vec::new(),
            model_pick: false,
        },
        Plurality::Winner(index) => VoteOutcome {
            index,
            unselectable: false,
            tied: Vec::new(),
            model_pick: false,
        },
        Plurality::Tie(tied) => {
            let fallback = tied[0];
            let pick = prompts
                .render(
                    Template::AnswerSelect,
                    &[
                        ("schema", schema_text),
                        ("question", question),
                        ("candidates", &render_candidates(bundle, &tied)),
                    ],
                )
                .ok()
                .and_then(|prompt| {
                    let req = ChatRequest::user_prompt(
                        Template::AnswerSelect.name(),
                        prompt,
                        0.0,
                        max_output_tokens,
                    );
                    match gateway.complete(&req) {
                        Ok(resp) => parse_pick(&resp.content),
                        Err(e) => {
                            log::warn!("answer selection failed: {e}");
                            None
                        }
                    }
                })
                .filter(|i| tied.contains(i));
            VoteOutcome {
                index: pick.unwrap_or(fallback),
                unselectable: false,
                model_pick: pick.is_some(),
                tied,
            }
        }
    }
}
