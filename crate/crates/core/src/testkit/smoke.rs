//! Ten small questions over three toy databases.

use std::collections::BTreeSet;
use std::path::Path;

use rusqlite::Connection;

use super::{
    check_equivalent, confirm_action, episode_entries, explore_action, gold_columns,
    linking_entries, load_fixture_schema, realization_entry, sql_action, standard_episode,
    LinkingPlan, RefineText, Scenario, TestkitError,
};
use crate::exec::{CompareMode, Database};
use crate::linking::LinkingConfig;
use crate::llm::{ReplayEntry, ReplayScript};
use crate::pipeline::TaskRecord;
use crate::schema::ColumnRef;

pub const SMOKE_SAMPLES: usize = 3;

const SHOP: &str = "
CREATE TABLE customers(id INTEGER PRIMARY KEY, name TEXT, city TEXT, signup_year INTEGER);
CREATE TABLE orders(id INTEGER PRIMARY KEY, customer_id INTEGER REFERENCES customers(id), amount REAL, status TEXT, order_date TEXT);
CREATE TABLE products(id INTEGER PRIMARY KEY, title TEXT, category TEXT, price REAL);
CREATE TABLE order_items(order_id INTEGER REFERENCES orders(id), product_id INTEGER REFERENCES products(id), qty INTEGER);
INSERT INTO customers VALUES
 (1,'Alice','Paris',2019),(2,'Bob','Lyon',2020),(3,'Chloe','Paris',2021),
 (4,'Dan','Berlin',2020),(5,'Eve','Paris',2022),(6,'Farid','Lyon',2021);
INSERT INTO orders VALUES
 (1,1,120.0,'completed','2023-01-05'),(2,2,80.0,'completed','2023-01-07'),
 (3,1,35.5,'cancelled','2023-02-01'),(4,3,210.0,'completed','2023-02-11'),
 (5,4,99.99,'pending','2023-03-02'),(6,5,150.0,'completed','2023-03-15'),
 (7,6,20.0,'completed','2023-03-20'),(8,2,101.0,'cancelled','2023-04-01');
INSERT INTO products VALUES
 (1,'Robot Kit','toys',49.5),(2,'Puzzle','toys',15.0),(3,'Lamp','home',30.0),
 (4,'Kite','toys',22.5),(5,'Mug','home',8.0),(6,'Novel','books',12.0);
INSERT INTO order_items VALUES
 (1,1,2),(1,3,1),(2,2,3),(4,1,1),(4,4,4),(5,5,6),(6,6,2),(7,2,1),(8,3,2);
";

const SCHOOL: &str = "
CREATE TABLE schools(id INTEGER PRIMARY KEY, name TEXT, school_type TEXT, county TEXT);
CREATE TABLE students(id INTEGER PRIMARY KEY, name TEXT, grade INTEGER, school_id INTEGER REFERENCES schools(id));
CREATE TABLE scores(student_id INTEGER REFERENCES students(id), subject TEXT, score INTEGER);
INSERT INTO schools VALUES
 (1,'North High','HS','Alameda'),(2,'Lake Elementary','ES','Alameda'),
 (3,'Hill High','HS','Fresno'),(4,'River Middle','MS','Fresno'),(5,'Bay High','HS','Marin');
INSERT INTO students VALUES
 (1,'Ann',10,1),(2,'Ben',3,2),(3,'Cal',11,3),(4,'Dee',7,4),(5,'Eli',12,5),
 (6,'Fay',9,1),(7,'Gus',4,2),(8,'Hal',8,4),(9,'Ivy',11,3),(10,'Jo',2,2);
INSERT INTO scores VALUES
 (1,'math',88),(1,'reading',92),(3,'math',97),(5,'math',91),
 (6,'reading',85),(9,'math',79),(2,'math',60),(4,'reading',70);
";

const LIBRARY: &str = "
CREATE TABLE authors(id INTEGER PRIMARY KEY, name TEXT, country TEXT);
CREATE TABLE books(id INTEGER PRIMARY KEY, title TEXT, author_id INTEGER REFERENCES authors(id), year INTEGER, genre TEXT);
INSERT INTO authors VALUES (1,'Le Guin','US'),(2,'Calvino','IT'),(3,'Lem','PL'),(4,'Atwood','CA');
INSERT INTO books VALUES
 (1,'A Wizard of Earthsea',1,1968,'Fiction'),(2,'The Dispossessed',1,1974,'Fiction'),
 (3,'Invisible Cities',2,1972,'Fiction'),(4,'Solaris',3,1961,'Fiction'),
 (5,'Summa Technologiae',3,1964,'Essay'),(6,'The Lathe of Heaven',1,1971,'Fiction'),
 (7,'The Testaments',4,2019,'Fiction'),(8,'Six Memos',2,1988,'Essay');
";

struct Spec {
    id: &'static str,
    db: &'static str,
    question: &'static str,
    evidence: &'static str,
    gold: &'static str,
    plan: &'static [&'static str],
    /// Columns the scripted linker keeps beyond the gold ones.
    extra: &'static [(&'static str, &'static str)],
    samples: Vec<Vec<String>>,
    /// Index of the candidate the vote should land on.
    expected: usize,
    /// Tie-breaker answer, when the samples disagree evenly.
    pick: Option<&'static str>,
}

fn refine(finding: &str, plan: &str) -> RefineText {
    RefineText::new(finding, "- The question needs the columns explored above.", plan)
}

fn same(n: usize, actions: Vec<String>) -> Vec<Vec<String>> {
    vec![actions; n]
}

fn specs() -> Vec<Spec> {
    let paris_ok = standard_episode(
        &["SELECT DISTINCT city FROM customers"],
        &refine("- city holds names such as 'Paris'", "- count customers with city = 'Paris'"),
        "SELECT COUNT(*) FROM customers WHERE city = 'Paris'",
    );
    let paris_wrong = standard_episode(
        &["SELECT * FROM customers LIMIT 3"],
        &refine("- customers have a city", "- count cities"),
        "SELECT COUNT(city) FROM customers",
    );
    let completed_sql = "SELECT SUM(amount) FROM orders WHERE status = 'completed'";
    let completed_explore = explore_action(&["SELECT DISTINCT status FROM orders"]);
    let completed_refine = refine(
        "- status values: completed, cancelled, pending",
        "- sum amount where status = 'completed'",
    )
    .action();
    let completed_fixed = vec![
        completed_explore.clone(),
        completed_refine.clone(),
        sql_action("SELECT SUM(amount) FROM order WHERE status = 'completed'"),
        sql_action(completed_sql),
        confirm_action("Sums the completed orders."),
    ];
    let completed_direct = vec![
        completed_explore,
        completed_refine,
        sql_action(completed_sql),
        confirm_action("Sums the completed orders."),
    ];
    let toys_refine = refine("- category values: toys, home, books", "- average price of toys");
    let toy_sample = |sql: &str| standard_episode(&["SELECT DISTINCT category FROM products"], &toys_refine, sql);

    vec![
        Spec {
            id: "smoke_01",
            db: "shop",
            question: "How many customers live in Paris?",
            evidence: "",
            gold: "SELECT COUNT(*) FROM customers WHERE city = 'Paris'",
            plan: &["Filter customers by city", "Count them"],
            extra: &[("customers", "name")],
            samples: vec![paris_ok.clone(), paris_ok, paris_wrong],
            expected: 0,
            pick: None,
        },
        Spec {
            id: "smoke_02",
            db: "shop",
            question: "What is the total amount of completed orders?",
            evidence: "completed orders refers to status = 'completed'",
            gold: "SELECT SUM(amount) FROM orders WHERE status = 'completed'",
            plan: &["Filter orders by status", "Sum the amount"],
            extra: &[],
            samples: vec![completed_fixed, completed_direct.clone(), completed_direct],
            expected: 0,
            pick: None,
        },
        Spec {
            id: "smoke_03",
            db: "shop",
            question: "Which customers have placed an order over 100?",
            evidence: "",
            gold: "SELECT DISTINCT c.name FROM customers c JOIN orders o ON o.customer_id = c.id WHERE o.amount > 100",
            plan: &["Find orders with amount over 100", "Join to customers", "Return distinct names"],
            extra: &[("orders", "status")],
            samples: same(
                SMOKE_SAMPLES,
                standard_episode(
                    &["SELECT id, customer_id, amount FROM orders LIMIT 3"],
                    &refine("- orders.customer_id links to customers.id", "- join and filter amount > 100"),
                    "SELECT name FROM customers WHERE id IN (SELECT customer_id FROM orders WHERE amount > 100)",
                ),
            ),
            expected: 0,
            pick: None,
        },
        Spec {
            id: "smoke_04",
            db: "shop",
            question: "Which product category has the largest total quantity ordered?",
            evidence: "",
            gold: "SELECT p.category FROM products p JOIN order_items oi ON oi.product_id = p.id GROUP BY p.category ORDER BY SUM(oi.qty) DESC LIMIT 1",
            plan: &["Join order items to products", "Sum quantity per category", "Take the largest"],
            extra: &[],
            samples: same(
                SMOKE_SAMPLES,
                standard_episode(
                    &["SELECT * FROM order_items LIMIT 3", "SELECT DISTINCT category FROM products"],
                    &refine("- order_items.product_id links to products.id", "- group by category, order by SUM(qty)"),
                    "SELECT p.category FROM order_items oi JOIN products p ON p.id = oi.product_id GROUP BY p.category ORDER BY SUM(oi.qty) DESC LIMIT 1",
                ),
            ),
            expected: 0,
            pick: None,
        },
        Spec {
            id: "smoke_05",
            db: "shop",
            question: "What is the average price of toys?",
            evidence: "toys refers to category = 'toys'",
            gold: "SELECT AVG(price) FROM products WHERE category = 'toys'",
            plan: &["Filter products by category", "Average the price"],
            extra: &[("products", "title")],
            samples: vec![
                toy_sample("SELECT SUM(price) / COUNT(*) FROM products WHERE category = 'toys'"),
                toy_sample("SELECT AVG(price) FROM products"),
                toy_sample("SELECT AVG(price) FROM products WHERE title LIKE '%toy%'"),
            ],
            expected: 0,
            pick: Some("The first candidate filters on the category the evidence names.\n```\ncandidate_1.sql\n```"),
        },
        Spec {
            id: "smoke_06",
            db: "school",
            question: "How many students attend high schools?",
            evidence: "high school refers to school_type = 'HS'",
            gold: "SELECT COUNT(*) FROM students s JOIN schools sc ON s.school_id = sc.id WHERE sc.school_type = 'HS'",
            plan: &["Filter schools by type", "Join students", "Count"],
            extra: &[],
            samples: same(
                SMOKE_SAMPLES,
                standard_episode(
                    &["SELECT DISTINCT school_type FROM schools"],
                    &refine("- school_type uses codes HS, ES, MS", "- join students to schools with school_type = 'HS'"),
                    "SELECT COUNT(*) FROM students WHERE school_id IN (SELECT id FROM schools WHERE school_type = 'HS')",
                ),
            ),
            expected: 0,
            pick: None,
        },
        Spec {
            id: "smoke_07",
            db: "school",
            question: "What is the highest math score?",
            evidence: "",
            gold: "SELECT MAX(score) FROM scores WHERE subject = 'math'",
            plan: &["Filter scores by subject", "Take the maximum"],
            extra: &[("scores", "student_id")],
            samples: same(
                SMOKE_SAMPLES,
                standard_episode(
                    &["SELECT DISTINCT subject FROM scores"],
                    &refine("- subjects: math, reading", "- top math score"),
                    "SELECT score FROM scores WHERE subject = 'math' ORDER BY score DESC LIMIT 1",
                ),
            ),
            expected: 0,
            pick: None,
        },
        Spec {
            id: "smoke_08",
            db: "school",
            question: "How many schools are in each county?",
            evidence: "",
            gold: "SELECT county, COUNT(*) FROM schools GROUP BY county",
            plan: &["Group schools by county", "Count each group"],
            extra: &[],
            samples: same(
                SMOKE_SAMPLES,
                standard_episode(
                    &["SELECT county, name FROM schools LIMIT 5"],
                    &refine("- three counties", "- group by county"),
                    "SELECT county, COUNT(id) AS n FROM schools GROUP BY county ORDER BY county",
                ),
            ),
            expected: 0,
            pick: None,
        },
        Spec {
            id: "smoke_09",
            db: "library",
            question: "Which author has written the most books?",
            evidence: "",
            gold: "SELECT a.name FROM authors a JOIN books b ON b.author_id = a.id GROUP BY a.id ORDER BY COUNT(*) DESC LIMIT 1",
            plan: &["Count books per author", "Take the author with the most"],
            extra: &[("books", "title")],
            samples: same(
                SMOKE_SAMPLES,
                standard_episode(
                    &["SELECT author_id, COUNT(*) FROM books GROUP BY author_id"],
                    &refine("- author 1 has three books", "- join authors, order by count"),
                    "SELECT a.name FROM books b JOIN authors a ON a.id = b.author_id GROUP BY a.id, a.name ORDER BY COUNT(b.id) DESC LIMIT 1",
                ),
            ),
            expected: 0,
            pick: None,
        },
        Spec {
            id: "smoke_10",
            db: "library",
            question: "List the titles of fiction books published before 2000.",
            evidence: "",
            gold: "SELECT title FROM books WHERE genre = 'Fiction' AND year < 2000",
            plan: &["Filter books by genre and year", "Return titles"],
            extra: &[],
            samples: same(
                SMOKE_SAMPLES,
                standard_episode(
                    &["SELECT DISTINCT genre FROM books", "SELECT MIN(year), MAX(year) FROM books"],
                    &refine("- genre is capitalized: 'Fiction', 'Essay'", "- filter genre = 'Fiction' and year < 2000"),
                    "SELECT title FROM books WHERE genre = 'Fiction' AND year < 2000 ORDER BY year",
                ),
            ),
            expected: 0,
            pick: None,
        },
    ]
}

fn final_sql(actions: &[String]) -> Option<String> {
    actions
        .iter()
        .rev()
        .find_map(|a| a.strip_prefix("[SQL] ```sql\n"))
        .and_then(|s| s.strip_suffix("\n```"))
        .map(str::to_string)
}

fn create(path: &Path, ddl: &str) -> Result<(), TestkitError> {
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    Connection::open(path)?.execute_batch(ddl)?;
    Ok(())
}

/// Builds the databases under `dir` and returns the scenarios, each checked
/// against its gold query.
pub fn smoke_benchmark(dir: &Path) -> Result<Vec<Scenario>, TestkitError> {
    std::fs::create_dir_all(dir)?;
    for (name, ddl) in [("shop", SHOP), ("school", SCHOOL), ("library", LIBRARY)] {
        create(&dir.join(format!("{name}.sqlite")), ddl)?;
    }
    let config = LinkingConfig::default();
    specs()
        .into_iter()
        .map(|spec| build(dir, spec, &config))
        .collect()
}

fn build(dir: &Path, spec: Spec, config: &LinkingConfig) -> Result<Scenario, TestkitError> {
    let db_path = dir.join(format!("{}.sqlite", spec.db));
    let schema = load_fixture_schema(&db_path)?;
    let db = Database::open(&db_path)?;
    let gold = gold_columns(spec.id, &schema, spec.gold)?;
    let mut keep: BTreeSet<ColumnRef> = gold.clone();
    keep.extend(spec.extra.iter().map(|(t, c)| ColumnRef::new(t, c)));

    let expected_sql = final_sql(&spec.samples[spec.expected]).ok_or_else(|| TestkitError::Inconsistent {
        id: spec.id.into(),
        reason: "expected sample has no SQL action".into(),
    })?;
    check_equivalent(spec.id, &db, &expected_sql, spec.gold, CompareMode::Strict)?;

    let mut entries = linking_entries(&LinkingPlan {
        schema: &schema,
        config,
        plan_steps: spec.plan,
        keep: &keep,
        synthesis_probe: None,
    });
    let keywords: Vec<String> = spec
        .question
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 3)
        .map(str::to_lowercase)
        .collect();
    entries.push(realization_entry(spec.plan, &keywords));
    entries.extend(episode_entries(&spec.samples));
    if let Some(pick) = spec.pick {
        entries.push(ReplayEntry::new("answer_select", pick));
    }

    let task = TaskRecord {
        question_id: spec.id.into(),
        question: spec.question.into(),
        evidence: spec.evidence.into(),
        knowledge_path: None,
        db_path,
        gold_sql: Some(spec.gold.into()),
        gold_columns: Some(gold.into_iter().collect()),
    };
    Ok(Scenario {
        task,
        script: ReplayScript::new(entries),
        mode: CompareMode::Strict,
        expected_sql,
    })
}
