//! Declarative tip-selection rules and their interpreter.
//!
//! Terms are case-insensitive phrases. Whitespace inside a term matches any
//! whitespace run, a trailing `*` matches any word continuation, and edges
//! that are word characters must sit on word boundaries.

use serde::{Deserialize, Serialize};

use regex::Regex;

use super::GuidanceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSource {
    Universal,
    Evidence,
    Question,
    Plan,
    Schema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Question,
    Evidence,
    Plan,
    QuestionOrEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    Always,
    ContainsAny { field: Field, terms: Vec<String> },
    ContainsAll { field: Field, terms: Vec<String> },
    StartsWithAny { field: Field, terms: Vec<String> },
    Regex { field: Field, pattern: String },
    /// Splits the field on `;` and newlines; fires when some clause matches
    /// `pattern` and contains none of the `unless` terms.
    ClauseRegex {
        field: Field,
        pattern: String,
        #[serde(default)]
        unless: Vec<String>,
    },
    CountAtLeast { field: Field, term: String, n: usize },
    StepsAtLeast { n: usize },
    /// Distinct schema table names appearing in the plan text.
    TablesMentionedAtLeast { n: usize },
    ColumnNamedAny { names: Vec<String> },
    All { of: Vec<Predicate> },
    Any { of: Vec<Predicate> },
    Not { of: Box<Predicate> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRule {
    pub id: String,
    pub source: RuleSource,
    pub emits: Vec<String>,
    pub when: Predicate,
}

/// Texts a rule set is evaluated against.
#[derive(Debug, Clone, Default)]
pub struct MatchInput {
    pub question: String,
    pub evidence: String,
    pub plan: String,
    pub plan_steps: usize,
    pub tables: Vec<String>,
    pub columns: Vec<String>,
}

impl MatchInput {
    fn field(&self, f: Field) -> std::borrow::Cow<'_, str> {
        match f {
            Field::Question => self.question.as_str().into(),
            Field::Evidence => self.evidence.as_str().into(),
            Field::Plan => self.plan.as_str().into(),
            Field::QuestionOrEvidence => format!("{}\n{}", self.question, self.evidence).into(),
        }
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Regex source for a term, without the case-insensitivity flag. A `*` at
/// the end of any word of the term matches a word continuation.
pub fn term_pattern(term: &str) -> String {
    let t = term.trim().to_lowercase();
    let words: Vec<(&str, bool)> = t
        .split_whitespace()
        .map(|w| match w.strip_suffix('*') {
            Some(b) => (b, true),
            None => (w, false),
        })
        .filter(|(b, _)| !b.is_empty())
        .collect();
    let Some(&(first, _)) = words.first() else {
        return String::new();
    };
    let &(last, last_stem) = words.last().unwrap_or(&(first, false));
    let joined = words
        .iter()
        .map(|(b, stem)| {
            let mut p = regex::escape(b);
            if *stem {
                p.push_str(r"\w*");
            }
            p
        })
        .collect::<Vec<_>>()
        .join(r"\s+");
    let lead = if first.chars().next().is_some_and(is_word) { r"\b" } else { "" };
    let tail = if !last_stem && last.chars().last().is_some_and(is_word) {
        r"\b"
    } else {
        ""
    };
    format!("{lead}{joined}{tail}")
}

fn compile(pattern: &str, rule: &str) -> Result<Regex, GuidanceError> {
    Regex::new(&format!("(?i){pattern}")).map_err(|e| GuidanceError::BadPattern {
        rule: rule.to_string(),
        message: e.to_string(),
    })
}

fn compile_terms(terms: &[String], rule: &str) -> Result<Vec<Regex>, GuidanceError> {
    terms.iter().map(|t| compile(&term_pattern(t), rule)).collect()
}

#[derive(Debug, Clone)]
enum Compiled {
    Always,
    ContainsAny(Field, Vec<Regex>),
    ContainsAll(Field, Vec<Regex>),
    StartsWithAny(Field, Vec<Regex>),
    Regex(Field, Regex),
    ClauseRegex(Field, Regex, Vec<Regex>),
    CountAtLeast(Field, Regex, usize),
    StepsAtLeast(usize),
    TablesMentionedAtLeast(usize),
    ColumnNamedAny(Vec<String>),
    All(Vec<Compiled>),
    Any(Vec<Compiled>),
    Not(Box<Compiled>),
}

impl Compiled {
    fn build(p: &Predicate, rule: &str) -> Result<Self, GuidanceError> {
        Ok(match p {
            Predicate::Always => Compiled::Always,
            Predicate::ContainsAny { field, terms } => Compiled::ContainsAny(*field, compile_terms(terms, rule)?),
            Predicate::ContainsAll { field, terms } => Compiled::ContainsAll(*field, compile_terms(terms, rule)?),
            Predicate::StartsWithAny { field, terms } => Compiled::StartsWithAny(
                *field,
                terms
                    .iter()
                    .map(|t| compile(&format!(r"\A\s*{}", term_pattern(t)), rule))
                    .collect::<Result<_, _>>()?,
            ),
            Predicate::Regex { field, pattern } => Compiled::Regex(*field, compile(pattern, rule)?),
            Predicate::ClauseRegex { field, pattern, unless } => {
                Compiled::ClauseRegex(*field, compile(pattern, rule)?, compile_terms(unless, rule)?)
            }
            Predicate::CountAtLeast { field, term, n } => {
                Compiled::CountAtLeast(*field, compile(&term_pattern(term), rule)?, *n)
            }
            Predicate::StepsAtLeast { n } => Compiled::StepsAtLeast(*n),
            Predicate::TablesMentionedAtLeast { n } => Compiled::TablesMentionedAtLeast(*n),
            Predicate::ColumnNamedAny { names } => {
                Compiled::ColumnNamedAny(names.iter().map(|n| n.trim().to_lowercase()).collect())
            }
            Predicate::All { of } => Compiled::All(of.iter().map(|p| Self::build(p, rule)).collect::<Result<_, _>>()?),
            Predicate::Any { of } => Compiled::Any(of.iter().map(|p| Self::build(p, rule)).collect::<Result<_, _>>()?),
            Predicate::Not { of } => Compiled::Not(Box::new(Self::build(of, rule)?)),
        })
    }

    fn eval(&self, input: &MatchInput) -> bool {
        match self {
            Compiled::Always => true,
            Compiled::ContainsAny(f, rs) | Compiled::StartsWithAny(f, rs) => {
                let text = input.field(*f);
                rs.iter().any(|r| r.is_match(&text))
            }
            Compiled::ContainsAll(f, rs) => {
                let text = input.field(*f);
                rs.iter().all(|r| r.is_match(&text))
            }
            Compiled::Regex(f, r) => r.is_match(&input.field(*f)),
            Compiled::ClauseRegex(f, r, unless) => input
                .field(*f)
                .split([';', '\n'])
                .any(|clause| r.is_match(clause) && !unless.iter().any(|u| u.is_match(clause))),
            Compiled::CountAtLeast(f, r, n) => r.find_iter(&input.field(*f)).count() >= *n,
            Compiled::StepsAtLeast(n) => input.plan_steps >= *n,
            Compiled::TablesMentionedAtLeast(n) => {
                let mut seen: Vec<String> = Vec::new();
                for t in &input.tables {
                    let key = t.to_lowercase();
                    if seen.contains(&key) {
                        continue;
                    }
                    let hit = Regex::new(&format!("(?i){}", term_pattern(t)))
                        .map(|r| r.is_match(&input.plan))
                        .unwrap_or(false);
                    if hit {
                        seen.push(key);
                    }
                }
                seen.len() >= *n
            }
            Compiled::ColumnNamedAny(names) => input
                .columns
                .iter()
                .any(|c| names.contains(&c.trim().to_lowercase())),
            Compiled::All(ps) => ps.iter().all(|p| p.eval(input)),
            Compiled::Any(ps) => ps.iter().any(|p| p.eval(input)),
            Compiled::Not(p) => !p.eval(input),
        }
    }
}

/// A rule with its patterns compiled.
#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule: RetrievalRule,
    predicate: Compiled,
}

impl CompiledRule {
    pub fn new(rule: RetrievalRule) -> Result<Self, GuidanceError> {
        let predicate = Compiled::build(&rule.when, &rule.id)?;
        Ok(Self { rule, predicate })
    }

    pub fn fires(&self, input: &MatchInput) -> bool {
        self.predicate.eval(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fires(p: Predicate, input: &MatchInput) -> bool {
        CompiledRule::new(RetrievalRule {
            id: "t".into(),
            source: RuleSource::Question,
            emits: vec![],
            when: p,
        })
        .unwrap()
        .fires(input)
    }

    fn q(text: &str) -> MatchInput {
        MatchInput {
            question: text.into(),
            ..MatchInput::default()
        }
    }

    fn any(terms: &[&str]) -> Predicate {
        Predicate::ContainsAny {
            field: Field::Question,
            terms: terms.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn word_boundaries() {
        assert!(!fires(any(&["sum"]), &q("a custom summary")));
        assert!(fires(any(&["sum"]), &q("the SUM of x")));
        assert!(fires(any(&["sort*"]), &q("Sorted by age")));
        assert!(!fires(any(&["sort*"]), &q("resorted")));
        assert!(fires(any(&["start* with"]), &q("Names starting  with B")));
        assert!(!fires(any(&["start* with"]), &q("the start* with")));
        assert!(fires(any(&["order by"]), &q("order\n  by name")));
        assert!(fires(any(&["("]), &q("x(y")));
    }

    #[test]
    fn starts_with_is_anchored() {
        let p = Predicate::StartsWithAny {
            field: Field::Question,
            terms: vec!["how many".into()],
        };
        assert!(fires(p.clone(), &q("  How many cats?")));
        assert!(!fires(p.clone(), &q("Tell me how many cats")));
        assert!(!fires(p, &q("how manyfold")));
    }

    #[test]
    fn clause_unless() {
        let p = Predicate::ClauseRegex {
            field: Field::Evidence,
            pattern: r"\w+\s*=\s*[^\s=]".into(),
            unless: vec!["refers to".into()],
        };
        let e = |t: &str| MatchInput {
            evidence: t.into(),
            ..MatchInput::default()
        };
        assert!(fires(p.clone(), &e("status = 'open'")));
        assert!(!fires(p.clone(), &e("open refers to status = 'open'")));
        assert!(fires(p, &e("a refers to b; status = 'open'")));
    }

    #[test]
    fn tables_in_plan() {
        let input = MatchInput {
            plan: "join orders with order_items and users".into(),
            tables: vec!["orders".into(), "order_items".into(), "users".into(), "ORDERS".into()],
            ..MatchInput::default()
        };
        assert!(fires(Predicate::TablesMentionedAtLeast { n: 3 }, &input));
        assert!(!fires(Predicate::TablesMentionedAtLeast { n: 4 }, &input));
    }
}
