//! Layout of a run folder. Everything written here is a pure function of the
//! inputs, so two runs over the same replay scripts produce identical files.

use std::path::{Path, PathBuf};

use apexsql_core::eval::EvalReport;
use apexsql_core::linking::LinkingOutcome;
use apexsql_core::pipeline::{TaskOutcome, TaskRecord};
use apexsql_core::CompareMode;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// What a run was asked to do; eval needs it to rescore without the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub mode: CompareMode,
    pub oracle_schema: bool,
    pub tasks: Vec<TaskRecord>,
}

/// Linking result kept for a later `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedTask {
    pub question_id: String,
    pub evidence: String,
    pub outcome: LinkingOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct GenerationSummary<'a> {
    question_id: &'a str,
    tips: &'a [String],
    realized: &'a apexsql_core::guidance::RealizedPlan,
    vote: &'a apexsql_core::eval::VoteOutcome,
    final_sql: Option<&'a str>,
    candidates: Vec<CandidateSummary<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CandidateSummary<'a> {
    final_sql: Option<&'a str>,
    confirmed: bool,
    failed: bool,
    rounds: usize,
    queries: usize,
    actions: usize,
    result_key: Option<&'a str>,
}

pub struct RunDir {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

/// Task ids become file names; anything outside a safe set is replaced.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

impl RunDir {
    pub fn create(root: PathBuf) -> Result<Self, ArtifactError> {
        for sub in ["traces", "linking", "generation", "outcomes", "answers", "errors"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(Self { root })
    }

    pub fn open(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file(&self, sub: &str, id: &str, ext: &str) -> PathBuf {
        self.root.join(sub).join(format!("{}.{ext}", file_stem(id)))
    }

    pub fn trace_path(&self, id: &str) -> PathBuf {
        self.file("traces", id, "jsonl")
    }

    pub fn write_text(&self, path: &Path, text: &str) -> Result<(), ArtifactError> {
        std::fs::write(path, text).map_err(io_err(path))
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), ArtifactError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|source| ArtifactError::Json { path: path.to_path_buf(), source })?;
        self.write_text(path, &(text + "\n"))
    }

    fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ArtifactError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ArtifactError::Json { path: path.to_path_buf(), source })
    }

    pub fn write_config(&self, snapshot: &str) -> Result<(), ArtifactError> {
        self.write_text(&self.root.join("config.json"), &(snapshot.to_string() + "\n"))
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<(), ArtifactError> {
        self.write_json(&self.root.join("run.json"), m)
    }

    pub fn read_manifest(&self) -> Result<RunManifest, ArtifactError> {
        Self::read_json(&self.root.join("run.json"))
    }

    pub fn write_linked(&self, linked: &LinkedTask) -> Result<(), ArtifactError> {
        let id = &linked.question_id;
        self.write_json(&self.file("linking", id, "json"), &linked.outcome.report(id))?;
        self.write_json(&self.file("linking", id, "linked.json"), linked)
    }

    pub fn read_linked(&self, id: &str) -> Result<LinkedTask, ArtifactError> {
        Self::read_json(&self.file("linking", id, "linked.json"))
    }

    pub fn write_outcome(&self, outcome: &TaskOutcome) -> Result<(), ArtifactError> {
        let id = &outcome.question_id;
        if let Some(l) = &outcome.linking {
            self.write_linked(&LinkedTask {
                question_id: id.clone(),
                evidence: outcome.evidence.clone(),
                outcome: l.clone(),
            })?;
        }
        let g = &outcome.generation;
        let summary = GenerationSummary {
            question_id: id,
            tips: &g.tips,
            realized: &g.realized,
            vote: &g.vote,
            final_sql: g.final_sql.as_deref(),
            candidates: g
                .bundle
                .candidates
                .iter()
                .map(|c| CandidateSummary {
                    final_sql: c.episode.final_sql.as_deref(),
                    confirmed: c.episode.confirmed,
                    failed: c.episode.failed,
                    rounds: c.episode.rounds,
                    queries: c.episode.query_count,
                    actions: c.episode.action_count,
                    result_key: c.canonical_key.as_deref(),
                })
                .collect(),
        };
        self.write_json(&self.file("generation", id, "json"), &summary)?;
        self.write_json(&self.file("outcomes", id, "json"), outcome)?;
        let answer = g.final_sql.clone().map(|s| s + "\n").unwrap_or_default();
        self.write_text(&self.file("answers", id, "sql"), &answer)
    }

    pub fn read_outcome(&self, id: &str) -> Result<Option<TaskOutcome>, ArtifactError> {
        let path = self.file("outcomes", id, "json");
        if !path.exists() {
            return Ok(None);
        }
        Self::read_json(&path).map(Some)
    }

    pub fn write_error(&self, id: &str, error: &str) -> Result<(), ArtifactError> {
        self.write_text(&self.file("errors", id, "txt"), &(error.to_string() + "\n"))
    }

    pub fn read_error(&self, id: &str) -> Option<String> {
        std::fs::read_to_string(self.file("errors", id, "txt")).ok().map(|s| s.trim_end().to_string())
    }

    pub fn write_report(&self, report: &EvalReport) -> Result<(), ArtifactError> {
        self.write_text(&self.root.join("eval.json"), &(report.to_json() + "\n"))?;
        self.write_text(&self.root.join("eval.txt"), &report.render_table())
    }
}

/// Reads `<dir>/<id>.sql` answers.
pub fn read_answer(dir: &Path, id: &str) -> Option<String> {
    std::fs::read_to_string(dir.join(format!("{}.sql", file_stem(id))))
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_path_safe() {
        assert_eq!(file_stem("sf_bq028"), "sf_bq028");
        assert_eq!(file_stem("../a b"), ".._a_b");
    }
}
