//! Reference tip selector written from the retrieval rule list by hand,
//! with plain character scanning instead of compiled patterns.

use std::collections::BTreeSet;

use apexsql_core::guidance::MatchInput;

pub const UNIVERSAL: [&str; 4] = ["TIP009", "TIP019", "TIP035", "TIP038"];

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn chars(s: &str) -> Vec<char> {
    s.to_lowercase().chars().collect()
}

fn skip_ws(t: &[char], mut p: usize) -> usize {
    while p < t.len() && t[p].is_whitespace() {
        p += 1;
    }
    p
}

/// A phrase split into words; a word ending in `*` accepts any word
/// continuation.
struct Phrase {
    words: Vec<(Vec<char>, bool)>,
}

impl Phrase {
    fn new(p: &str) -> Self {
        let words = p
            .to_lowercase()
            .split_whitespace()
            .map(|w| match w.strip_suffix('*') {
                Some(b) => (b.chars().collect(), true),
                None => (w.chars().collect(), false),
            })
            .collect();
        Self { words }
    }

    /// End of a match starting at `i`, boundaries included.
    fn at(&self, t: &[char], i: usize) -> Option<usize> {
        let (first, _) = self.words.first()?;
        if first.first().is_some_and(|&c| is_word(c)) && i > 0 && is_word(t[i - 1]) {
            return None;
        }
        let mut p = i;
        for (k, (w, stem)) in self.words.iter().enumerate() {
            if k > 0 {
                let q = skip_ws(t, p);
                if q == p {
                    return None;
                }
                p = q;
            }
            if p + w.len() > t.len() || t[p..p + w.len()] != w[..] {
                return None;
            }
            p += w.len();
            if *stem {
                while p < t.len() && is_word(t[p]) {
                    p += 1;
                }
            }
        }
        let (last, stem) = self.words.last()?;
        if !stem && last.last().is_some_and(|&c| is_word(c)) && p < t.len() && is_word(t[p]) {
            return None;
        }
        Some(p)
    }

    fn find_from(&self, t: &[char], from: usize) -> Option<(usize, usize)> {
        (from..t.len()).find_map(|i| self.at(t, i).map(|e| (i, e)))
    }

    fn count(&self, t: &[char]) -> usize {
        let mut n = 0;
        let mut i = 0;
        while let Some((_, e)) = self.find_from(t, i) {
            n += 1;
            i = e.max(i + 1);
        }
        n
    }
}

pub fn contains(text: &str, phrase: &str) -> bool {
    Phrase::new(phrase).find_from(&chars(text), 0).is_some()
}

fn contains_any(text: &str, phrases: &[&str]) -> bool {
    phrases.iter().any(|p| contains(text, p))
}

fn contains_all(text: &str, phrases: &[&str]) -> bool {
    phrases.iter().all(|p| contains(text, p))
}

fn starts_with_any(text: &str, phrases: &[&str]) -> bool {
    let t = chars(text);
    let start = skip_ws(&t, 0);
    phrases.iter().any(|p| Phrase::new(p).at(&t, start).is_some())
}

fn count(text: &str, phrase: &str) -> usize {
    Phrase::new(phrase).count(&chars(text))
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'
}

/// `name = value` where the name is a bare identifier or a quoted one and
/// the `=` is not part of `==`, `<=`, `>=` or `!=`.
fn column_equals(t: &[char]) -> bool {
    for p in 0..t.len() {
        if t[p] != '=' {
            continue;
        }
        let q = skip_ws(t, p + 1);
        if q >= t.len() || t[q] == '=' {
            continue;
        }
        let mut b = p;
        while b > 0 && t[b - 1].is_whitespace() {
            b -= 1;
        }
        if b == 0 {
            continue;
        }
        let c = t[b - 1];
        let ok = if is_ident_char(c) {
            let mut s = b - 1;
            while s > 0 && is_ident_char(t[s - 1]) {
                s -= 1;
            }
            (s == 0 || !is_word(t[s - 1])) && (t[s].is_ascii_lowercase() || t[s] == '_')
        } else if c == '`' || c == '"' {
            t[..b - 1].iter().rposition(|&x| x == c).is_some_and(|j| j + 1 < b - 1)
        } else if c == ']' {
            let inner = &t[..b - 1];
            match inner.iter().rposition(|&x| x == '[' || x == ']') {
                Some(j) => inner[j] == '[' && j + 1 < b - 1,
                None => false,
            }
        } else {
            false
        };
        if ok {
            return true;
        }
    }
    false
}

fn represented_as(t: &[char]) -> bool {
    let words: Vec<Vec<char>> = ["can", "be", "represented", "as"].iter().map(|w| w.chars().collect()).collect();
    'start: for i in 0..t.len() {
        let mut p = i;
        for (k, w) in words.iter().enumerate() {
            if k > 0 {
                let q = skip_ws(t, p);
                if q == p {
                    continue 'start;
                }
                p = q;
            }
            if p + w.len() > t.len() || t[p..p + w.len()] != w[..] {
                continue 'start;
            }
            p += w.len();
        }
        let q = skip_ws(t, p);
        if q == p || q >= t.len() {
            continue;
        }
        let mut end = q;
        while end < t.len() && !t[end].is_whitespace() {
            end += 1;
        }
        if t[q + 1..end].contains(&'=') {
            return true;
        }
        let after = skip_ws(t, end);
        if after < t.len() && t[after] == '=' {
            return true;
        }
    }
    false
}

fn evidence_assignment(evidence: &str) -> bool {
    let refers = Phrase::new("refers to");
    evidence.split([';', '\n']).any(|clause| {
        let t = chars(clause);
        (represented_as(&t) || column_equals(&t)) && refers.find_from(&t, 0).is_none()
    })
}

fn prev_non_ws(t: &[char], p: usize) -> Option<(usize, char)> {
    let mut b = p;
    while b > 0 && t[b - 1].is_whitespace() {
        b -= 1;
    }
    (b > 0).then(|| (p - b, t[b - 1]))
}

fn next_non_ws(t: &[char], p: usize) -> Option<(usize, char)> {
    let q = skip_ws(t, p + 1);
    (q < t.len()).then(|| (q - p - 1, t[q]))
}

fn arithmetic(evidence: &str) -> bool {
    let t = chars(evidence);
    let before = |c: char| is_word(c) || matches!(c, ')' | ']' | '\'' | '"');
    let after = |c: char| is_word(c) || matches!(c, '(' | '[' | '\'' | '"');
    (0..t.len()).any(|p| match t[p] {
        '*' | '/' | '+' => {
            prev_non_ws(&t, p).is_some_and(|(_, c)| before(c)) && next_non_ws(&t, p).is_some_and(|(_, c)| after(c))
        }
        '-' => {
            prev_non_ws(&t, p).is_some_and(|(gap, c)| gap > 0 && before(c))
                && next_non_ws(&t, p).is_some_and(|(gap, c)| gap > 0 && after(c))
        }
        _ => false,
    })
}

fn average_equals(evidence: &str) -> bool {
    let t = chars(evidence);
    let w: Vec<char> = "average".chars().collect();
    (0..t.len()).any(|i| {
        (i == 0 || !is_word(t[i - 1]))
            && t.len() >= i + w.len()
            && t[i..i + w.len()] == w[..]
            && {
                let q = skip_ws(&t, i + w.len());
                q < t.len() && t[q] == '='
            }
    })
}

fn has_quoted(t: &[char]) -> bool {
    ['\'', '"'].iter().any(|&q| {
        let pos: Vec<usize> = t.iter().enumerate().filter(|(_, &c)| c == q).map(|(i, _)| i).collect();
        pos.windows(2).any(|w| w[1] > w[0] + 1)
    })
}

fn is_quote(c: char) -> bool {
    c == '\'' || c == '"'
}

fn quoted_then_verb(t: &[char]) -> bool {
    let verbs = [Phrase::new("stands for"), Phrase::new("means"), Phrase::new("is"), Phrase::new("are")];
    (0..t.len()).filter(|&i| is_quote(t[i])).any(|i| {
        let Some(j) = (i + 1..t.len()).find(|&j| is_quote(t[j])) else {
            return false;
        };
        if j < i + 2 {
            return false;
        }
        let q = skip_ws(t, j + 1);
        q > j + 1 && verbs.iter().any(|v| v.at(t, q).is_some())
    })
}

fn value_mapping(evidence: &str) -> bool {
    let t = chars(evidence);
    (contains_any(evidence, &["stands for", "means"]) && has_quoted(&t)) || quoted_then_verb(&t)
}

/// `with`/`where`/`whose`, up to four plain words, then a quoted value.
fn keyword_then_quote(question: &str) -> bool {
    let t = chars(question);
    let kws: Vec<Vec<char>> = ["with", "where", "whose"].iter().map(|w| w.chars().collect()).collect();
    for i in 0..t.len() {
        if i > 0 && !t[i - 1].is_whitespace() {
            continue;
        }
        let Some(kw) = kws.iter().find(|k| t.len() >= i + k.len() && t[i..i + k.len()] == k[..]) else {
            continue;
        };
        let mut p = i + kw.len();
        for _ in 0..=4 {
            let q = skip_ws(&t, p);
            if q == p || q >= t.len() {
                break;
            }
            if is_quote(t[q]) {
                let body = q + 1;
                if body < t.len() && !is_quote(t[body]) && t[body..].iter().any(|&c| is_quote(c)) {
                    return true;
                }
            }
            let mut e = q;
            while e < t.len() && !t[e].is_whitespace() && !is_quote(t[e]) {
                e += 1;
            }
            if e == q || (e < t.len() && is_quote(t[e])) {
                break;
            }
            p = e;
        }
    }
    false
}

/// `X and their Y` / `X and its Y`.
fn and_possessive(question: &str) -> bool {
    let t = chars(question);
    let and: Vec<char> = "and".chars().collect();
    (1..t.len()).any(|i| {
        if t.len() < i + 3 || t[i..i + 3] != and[..] || !t[i - 1].is_whitespace() {
            return false;
        }
        let before = prev_non_ws(&t, i).is_some_and(|(_, c)| is_word(c));
        let q = skip_ws(&t, i + 3);
        if !before || q == i + 3 {
            return false;
        }
        ["their", "its"].iter().any(|w| {
            let w: Vec<char> = w.chars().collect();
            if t.len() < q + w.len() || t[q..q + w.len()] != w[..] {
                return false;
            }
            let r = skip_ws(&t, q + w.len());
            r > q + w.len() && r < t.len() && is_word(t[r])
        })
    })
}

fn whole_word_from(t: &[char], word: &str, from: usize) -> Option<usize> {
    let w: Vec<char> = word.chars().collect();
    (from..t.len()).find_map(|i| {
        let ok = t.len() >= i + w.len()
            && t[i..i + w.len()] == w[..]
            && (i == 0 || !is_word(t[i - 1]))
            && (i + w.len() == t.len() || !is_word(t[i + w.len()]));
        ok.then_some(i + w.len())
    })
}

fn cte_shape(plan: &str) -> bool {
    let t = chars(plan);
    whole_word_from(&t, "with", 0)
        .and_then(|e| whole_word_from(&t, "as", e))
        .and_then(|e| whole_word_from(&t, "select", e))
        .is_some()
}

fn top_n_per(plan: &str) -> bool {
    let t = chars(plan);
    let top = Phrase::new("top");
    let per = Phrase::new("per");
    (0..t.len()).any(|i| {
        let Some(e) = top.at(&t, i) else { return false };
        let q = skip_ws(&t, e);
        if q == e || q >= t.len() {
            return false;
        }
        let mut r = q;
        if t[q] == 'n' {
            r = q + 1;
        } else {
            while r < t.len() && t[r].is_ascii_digit() {
                r += 1;
            }
            if r == q {
                return false;
            }
        }
        let s = skip_ws(&t, r);
        s > r && per.at(&t, s).is_some()
    })
}

fn tables_in_plan(input: &MatchInput) -> usize {
    let mut seen = BTreeSet::new();
    for t in &input.tables {
        if contains(&input.plan, t) {
            seen.insert(t.to_lowercase());
        }
    }
    seen.len()
}

/// One hand-written rule: its tips and when it fires.
pub struct OracleRule {
    pub id: &'static str,
    pub emits: &'static [&'static str],
    pub fires: fn(&MatchInput) -> bool,
}

pub fn rules() -> Vec<OracleRule> {
    vec![
        OracleRule { id: "universal", emits: &UNIVERSAL, fires: |_| true },
        OracleRule { id: "evidence_column_assignment", emits: &["TIP001"], fires: |m| evidence_assignment(&m.evidence) },
        OracleRule {
            id: "evidence_formula",
            emits: &["TIP002", "TIP027", "TIP040"],
            fires: |m| arithmetic(&m.evidence) || contains(&m.evidence, "sum of count") || average_equals(&m.evidence),
        },
        OracleRule { id: "evidence_value_mapping", emits: &["TIP003"], fires: |m| value_mapping(&m.evidence) },
        OracleRule { id: "evidence_refers_to", emits: &["TIP004"], fires: |m| contains(&m.evidence, "refers to") },
        OracleRule { id: "question_quoted_value", emits: &["TIP005", "TIP023"], fires: |m| keyword_then_quote(&m.question) },
        OracleRule {
            id: "question_extreme",
            emits: &["TIP008", "TIP030", "TIP031", "TIP032"],
            fires: |m| {
                contains_any(
                    &m.question,
                    &["highest", "lowest", "top", "bottom", "maximum", "minimum", "best", "worst", "most", "least", "order by", "sort*"],
                )
            },
        },
        OracleRule {
            id: "question_multiple_outputs",
            emits: &["TIP009"],
            fires: |m| contains(&m.question, "and") && !starts_with_any(&m.question, &["how many"]),
        },
        OracleRule {
            id: "question_filter_columns",
            emits: &["TIP010"],
            fires: |m| {
                starts_with_any(&m.question, &["what", "list", "name", "show"])
                    && contains_any(&m.question, &["where", "with", "whose", "that have"])
            },
        },
        OracleRule {
            id: "question_how_many",
            emits: &["TIP011"],
            fires: |m| {
                (starts_with_any(&m.question, &["how many"]) && !contains_any(&m.question, &["what", "which"]))
                    || contains_all(&m.question, &["list", "lowest", "amount"])
            },
        },
        OracleRule {
            id: "parentheses",
            emits: &["TIP015", "TIP016"],
            fires: |m| [&m.question, &m.evidence].iter().any(|s| s.contains('(') || s.contains(')')),
        },
        OracleRule {
            id: "question_comparison",
            emits: &["TIP024"],
            fires: |m| {
                contains_any(
                    &m.question,
                    &["more than", "less than", "greater than", "between", "at least", "at most", "above", "below", "over", "under", "exceed*"],
                )
            },
        },
        OracleRule {
            id: "question_aggregation",
            emits: &["TIP026", "TIP028"],
            fires: |m| {
                contains_any(
                    &m.question,
                    &["total", "sum", "average", "avg", "count", "maximum", "minimum", "aggregate", "group by"],
                )
            },
        },
        OracleRule {
            id: "question_aggregate_comparison",
            emits: &["TIP029"],
            fires: |m| {
                contains_any(&m.question, &["average", "total", "sum", "count"])
                    && contains_any(&m.question, &["more than", "less than", "greater", "between"])
            },
        },
        OracleRule {
            id: "question_calculation",
            emits: &["TIP036", "TIP046"],
            fires: |m| contains_any(&m.question, &["calculate", "ratio", "percentage", "average"]),
        },
        OracleRule {
            id: "question_ratio",
            emits: &["TIP047", "TIP048"],
            fires: |m| contains_any(&m.question, &["ratio", "percentage", "percent", "proportion", "rate"]),
        },
        OracleRule {
            id: "question_listing",
            emits: &["TIP049"],
            fires: |m| starts_with_any(&m.question, &["how many", "what is", "what are", "which", "list all", "list the"]),
        },
        OracleRule {
            id: "question_partial_match",
            emits: &["TIP006"],
            fires: |m| contains_any(&m.question, &["contain*", "include*", "start* with", "end* with", "like"]),
        },
        OracleRule {
            id: "question_text_fields",
            emits: &["TIP025"],
            fires: |m| contains_any(&m.question, &["name*", "title*", "description*"]),
        },
        OracleRule {
            id: "question_nulls",
            emits: &["TIP039"],
            fires: |m| contains_any(&m.question, &["null", "missing", "empty"]),
        },
        OracleRule {
            id: "plan_joins",
            emits: &["TIP012", "TIP013", "TIP020", "TIP021", "TIP022", "TIP042"],
            fires: |m| contains(&m.plan, "join*") || tables_in_plan(m) >= 4 || and_possessive(&m.question),
        },
        OracleRule {
            id: "plan_complexity",
            emits: &["TIP014"],
            fires: |m| contains_all(&m.plan, &["subquer*", "nested"]) || count(&m.plan, "join*") >= 4,
        },
        OracleRule {
            id: "plan_multi_step",
            emits: &["TIP033", "TIP034"],
            fires: |m| m.plan_steps >= 4 || contains_all(&m.plan, &["subquer*", "nested"]) || cte_shape(&m.plan),
        },
        OracleRule {
            id: "plan_conditional_aggregation",
            emits: &["TIP050"],
            fires: |m| contains(&m.plan, "case when") || contains_all(&m.plan, &["different", "aggregat*"]),
        },
        OracleRule {
            id: "plan_ranking",
            emits: &["TIP051", "TIP052"],
            fires: |m| {
                contains_any(&m.plan, &["rank", "ranking", "row number", "row_number", "per group", "partition*"]) || top_n_per(&m.plan)
            },
        },
        OracleRule {
            id: "schema_entity_type",
            emits: &["TIP041"],
            fires: |m| {
                let names = ["metricid", "metric_id", "event_type", "entity_type", "data_type"];
                m.columns.iter().any(|c| names.contains(&c.trim().to_lowercase().as_str()))
                    && contains_any(&m.question, &["specific", "certain", "particular", "only", "filter by type", "where type"])
            },
        },
    ]
}

pub fn select(input: &MatchInput) -> BTreeSet<String> {
    rules()
        .iter()
        .filter(|r| (r.fires)(input))
        .flat_map(|r| r.emits.iter().map(|s| s.to_string()))
        .collect()
}

const QUESTIONS: [&str; 40] = [
    "How many customers live in Paris?",
    "What is the highest score of students whose school is 'Lincoln High'?",
    "List the names and ages of players with more than 10 goals.",
    "Which county has the lowest average enrollment (K-12)?",
    "Show the titles of books that have a rating above 4.5",
    "Calculate the ratio of male to female patients.",
    "What percentage of orders were shipped late?",
    "Name the products whose description contains 'organic'.",
    "How many schools with a 'charter' status are in Fresno and which of them are open?",
    "Please list all movies sorted by release year.",
    "List all employees with missing manager ids.",
    "Give the total sales per region in 2020.",
    "Which drivers finished between 5th and 10th place?",
    "What are the top 3 teams by wins?",
    "Count the accounts that are empty.",
    "Find the average salary of engineers earning more than 50000.",
    "List the lowest amount paid by each customer.",
    "Find members whose names start with 'A'.",
    "Which cities include a station that ends with 'Park'?",
    "Show clients like 'Acme' in the registry",
    "Identify patients where the diagnosis is null.",
    "What is the sum of all invoices over 1000 and their due dates?",
    "Return each author and its publisher.",
    "Which specific event types occurred only once?",
    "How many flights were delayed?",
    "Tell me the best and worst performing stores",
    "What is the proportion of loans that defaulted at least once?",
    "Show the rate of returns under 5 days.",
    "Which products exceed the minimum stock level?",
    "List the aggregate revenue grouped by quarter",
    "Describe the data for a certain metric over time.",
    "What were the sales in 'Q1' where region is 'West'?",
    "How many users signed up, and what plan did they pick?",
    "Order by date the shipments to Rome.",
    "Which teams have less than five players and no coach?",
    "Show me the avg temperature.",
    "What is the title of the oldest film?",
    "Name every island with an area greater than 100 km2.",
    "Which employees earn a salary greater than the average of their department?",
    "Summarize the percent of trips (by bike) in June.",
];

const EVIDENCE: [&str; 24] = [
    "",
    "high school refers to school_type = 'HS'",
    "status = 'completed'",
    "eligible free rate = `Free Meal Count (K-12)` / `Enrollment (K-12)`",
    "'F' stands for female; 'M' means male",
    "percentage = DIVIDE(SUM(late), COUNT(id)) * 100",
    "the sum of count of visits per day",
    "average = total_points / games",
    "gender can be represented as sex='F'",
    "the column city refers to the town name",
    "Paris is the capital",
    "\"Y\" is yes and \"N\" is no",
    "scores range 0 - 100",
    "date format is YYYY-MM-DD",
    "a value of 1 means active",
    "elite refers to rating >= 4.5; budget = price < 20",
    "[Order Date] = '2020-01-01'",
    "`Team Name` = 'Lakers'",
    "total + tax gives the gross amount",
    "x == y is a comparison",
    "the field 'code' are abbreviations",
    "price<=10 counts as cheap",
    "See the notes (appendix)",
    "revenue = units * unit_price; region refers to sales_region",
];

const PLANS: [(&str, usize); 16] = [
    ("", 0),
    ("1. Filter schools by type\n2. Count rows", 2),
    ("1. Join orders with customers\n2. Group by city\n3. Sum amount", 3),
    ("1. Use a nested subquery to find the max\n2. Compare", 2),
    ("1. join a and b\n2. join b and c\n3. join c and d\n4. joins to e", 4),
    ("1. Read customers\n2. Read orders\n3. Read products\n4. Read order_items", 4),
    ("1. WITH totals AS (SELECT ...) then select the largest", 1),
    ("1. Use CASE WHEN to bucket ages\n2. Aggregate", 2),
    ("1. Compare different groups\n2. Aggregating counts per group", 2),
    ("1. Rank teams by wins\n2. Keep rank 1", 2),
    ("1. Take the top 3 per league", 1),
    ("1. Compute row_number over partitions", 1),
    ("1. Filter\n2. Sort\n3. Limit", 3),
    ("1. Look at the nested structure", 1),
    ("1. with care, pick columns\n2. select the rows", 2),
    ("1. Filter by event type\n2. Count\n3. Average\n4. Round\n5. Output", 5),
];

const SCHEMAS: [(&[&str], &[&str]); 6] = [
    (
        &["customers", "orders", "products", "order_items"],
        &["id", "name", "city", "amount", "status", "title", "category", "price", "qty"],
    ),
    (&["schools", "students", "scores"], &["school_type", "county", "grade", "score"]),
    (&["metrics", "readings"], &["MetricId", "value", "ts"]),
    (&["events", "users"], &["event_type", "user_id"]),
    (&[], &[]),
    (&["a", "b", "c", "d", "e"], &["entity_type", "data_type"]),
];

/// 200 inputs built by cycling the parts above at co-prime strides.
pub fn corpus() -> Vec<MatchInput> {
    (0..200)
        .map(|i| {
            let (plan, steps) = PLANS[(i * 5 + 1) % PLANS.len()];
            let (tables, columns) = SCHEMAS[i % SCHEMAS.len()];
            MatchInput {
                question: QUESTIONS[i % QUESTIONS.len()].to_string(),
                evidence: EVIDENCE[(i * 7 + 3) % EVIDENCE.len()].to_string(),
                plan: plan.to_string(),
                plan_steps: steps,
                tables: tables.iter().map(|s| s.to_string()).collect(),
                columns: columns.iter().map(|s| s.to_string()).collect(),
            }
        })
        .collect()
}
