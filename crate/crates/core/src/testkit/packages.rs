//! Package registry fixture: the latest release of each NPM package ranked
//! by the stars of its GitHub project, where the publish timestamp is
//! missing for a large share of releases.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rusqlite::{params, Connection};

use super::{
    check_equivalent, confirm_action, episode_entries, explore_action, gold_columns,
    linking_entries, load_fixture_schema, realization_entry, run, sql_action, LinkingPlan,
    RefineText, Scenario, TestkitError,
};
use crate::exec::{compare, CompareMode, Database, Value};
use crate::linking::LinkingConfig;
use crate::llm::ReplayScript;
use crate::pipeline::TaskRecord;
use crate::schema::ColumnRef;

pub const PACKAGE_TASK_ID: &str = "sf_bq028";
/// NPM rows flagged as releases.
pub const RELEASE_ROWS: usize = 1000;
/// Release rows seeded without a publish timestamp (43.7%).
pub const NULL_RELEASE_ROWS: usize = 437;

const SEED: u64 = 0x5EED_0028;
const NPM_PACKAGES: usize = 150;
const LONG_HISTORY: usize = 100;
/// Packages whose project lives on GitLab instead of GitHub.
const GITLAB_FROM: usize = 140;
/// Top-starred packages whose latest release has no timestamp.
const FORCED_NULL_TOP: usize = 12;
const PYPI_PACKAGES: usize = 20;
const SNAPSHOT_AT: i64 = 1_700_000_000;

pub const QUESTION: &str = "Considering only the latest release versions of NPM packages, which packages are the top 8 most popular based on the Github star number, as well as their versions?";

const DDL: &str = r#"
CREATE TABLE PROJECTS("Name" TEXT, "Type" TEXT, "StarsCount" INTEGER, "SnapshotAt" INTEGER);
CREATE TABLE PACKAGEVERSIONS("Name" TEXT, "Version" TEXT, "System" TEXT, "VersionInfo" TEXT, "UpstreamPublishedAt" INTEGER, "SnapshotAt" INTEGER);
CREATE TABLE PACKAGEVERSIONTOPROJECT("System" TEXT, "Name" TEXT, "Version" TEXT, "ProjectType" TEXT, "ProjectName" TEXT, "RelationType" TEXT);
"#;

pub const GOLD_SQL: &str = r#"WITH latest AS (
  SELECT "Name", "Version",
         ROW_NUMBER() OVER (PARTITION BY "Name" ORDER BY CAST(json_extract("VersionInfo", '$.Ordinal') AS INTEGER) DESC) AS rn
  FROM PACKAGEVERSIONS
  WHERE "System" = 'NPM' AND json_extract("VersionInfo", '$.IsRelease') = 1
)
SELECT l."Name", l."Version"
FROM latest l
JOIN PACKAGEVERSIONTOPROJECT m
  ON m."System" = 'NPM' AND m."Name" = l."Name" AND m."Version" = l."Version" AND m."ProjectType" = 'GITHUB'
JOIN PROJECTS p ON p."Name" = m."ProjectName" AND p."Type" = 'GITHUB'
WHERE l.rn = 1
ORDER BY p."StarsCount" DESC
LIMIT 8"#;

/// Orders by the publish timestamp and drops rows without one.
pub const BASELINE_SQL: &str = r#"WITH latest AS (
  SELECT "Name", "Version",
         ROW_NUMBER() OVER (PARTITION BY "Name" ORDER BY "UpstreamPublishedAt" DESC) AS rn
  FROM PACKAGEVERSIONS
  WHERE "System" = 'NPM' AND json_extract("VersionInfo", '$.IsRelease') = 1
    AND "UpstreamPublishedAt" IS NOT NULL
)
SELECT l."Name", l."Version", p."StarsCount"
FROM latest l
JOIN PACKAGEVERSIONTOPROJECT m ON m."Name" = l."Name" AND m."Version" = l."Version" AND m."ProjectType" = 'GITHUB'
JOIN PROJECTS p ON p."Name" = m."ProjectName" AND p."Type" = 'GITHUB'
WHERE l.rn = 1
ORDER BY p."StarsCount" DESC
LIMIT 8"#;

pub const AGENT_SQL: &str = r#"WITH LatestReleases AS (
  SELECT "Name", "Version",
         ROW_NUMBER() OVER (PARTITION BY "Name" ORDER BY json_extract("VersionInfo", '$.Ordinal') DESC) AS version_rank
  FROM PACKAGEVERSIONS
  WHERE "System" = 'NPM' AND json_extract("VersionInfo", '$.IsRelease') = 1
),
PackageProjects AS (
  SELECT DISTINCT lr."Name", lr."Version", pvp."ProjectName"
  FROM LatestReleases lr
  JOIN PACKAGEVERSIONTOPROJECT pvp
    ON lr."Name" = pvp."Name" AND lr."Version" = pvp."Version" AND pvp."ProjectType" = 'GITHUB'
  WHERE lr.version_rank = 1
)
SELECT pp."Name" AS PackageName, pp."Version", p."StarsCount"
FROM PackageProjects pp
JOIN PROJECTS p ON pp."ProjectName" = p."Name" AND p."Type" = 'GITHUB'
ORDER BY p."StarsCount" DESC
LIMIT 8"#;

const KNOWLEDGE: &str = "# Package registry snapshot

PACKAGEVERSIONS holds one row per published version of a package.
`System` is the package ecosystem (NPM, PYPI, ...). `VersionInfo` is a JSON
object with `IsRelease` (true for release versions, false for pre-releases)
and `Ordinal`, the position of the version in the package's history.
`UpstreamPublishedAt` is the publish time reported by the registry, in
seconds since the epoch. `SnapshotAt` is the time the snapshot was taken.

PACKAGEVERSIONTOPROJECT links a package version to a source project.
`ProjectType` is the hosting service (GITHUB, GITLAB) and `ProjectName` is
the project's name on that service, such as `owner/repo`.

PROJECTS lists source projects with their `StarsCount`.
";

struct Release {
    package: usize,
    ordinal: usize,
    version: String,
}

fn package_name(i: usize) -> String {
    format!("npm-pkg-{i:03}")
}

fn project_name(i: usize) -> String {
    if i >= GITLAB_FROM {
        format!("gitlab-group{i:03}/pkg")
    } else {
        format!("owner{i:03}/pkg-{i:03}")
    }
}

fn releases_of(i: usize) -> usize {
    if i < LONG_HISTORY {
        7
    } else {
        6
    }
}

/// Writes the database and knowledge file under `dir`.
fn build_database(dir: &Path) -> Result<(), TestkitError> {
    let db_path = dir.join(format!("{PACKAGE_TASK_ID}.sqlite"));
    if db_path.exists() {
        std::fs::remove_file(&db_path)?;
    }
    std::fs::write(dir.join(format!("{PACKAGE_TASK_ID}.md")), KNOWLEDGE)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut conn = Connection::open(&db_path)?;
    conn.execute_batch(DDL)?;
    let tx = conn.transaction()?;

    // distinct star counts in shuffled order
    let mut ranks: Vec<usize> = (0..NPM_PACKAGES).collect();
    ranks.shuffle(&mut rng);
    let stars: Vec<i64> = ranks.iter().map(|&r| 500 + 97 * r as i64).collect();
    for i in 0..NPM_PACKAGES {
        let (kind, count) = if i >= GITLAB_FROM {
            // louder than anything on GitHub
            ("GITLAB", 100_000 + i as i64)
        } else {
            ("GITHUB", stars[i])
        };
        tx.execute(
            "INSERT INTO PROJECTS VALUES (?1, ?2, ?3, ?4)",
            params![project_name(i), kind, count, SNAPSHOT_AT],
        )?;
    }
    for j in 0..PYPI_PACKAGES {
        tx.execute(
            "INSERT INTO PROJECTS VALUES (?1, 'GITHUB', ?2, ?3)",
            params![format!("pyowner{j:02}/lib"), 200_000 + j as i64, SNAPSHOT_AT],
        )?;
    }

    let mut releases = Vec::with_capacity(RELEASE_ROWS);
    for i in 0..NPM_PACKAGES {
        for j in 0..releases_of(i) {
            releases.push(Release {
                package: i,
                ordinal: j + 1,
                version: format!("1.{}.0", 2 * j),
            });
        }
    }
    debug_assert_eq!(releases.len(), RELEASE_ROWS);

    let mut github: Vec<usize> = (0..GITLAB_FROM).collect();
    github.sort_by_key(|&i| std::cmp::Reverse(stars[i]));
    let forced: BTreeSet<usize> = github[..FORCED_NULL_TOP]
        .iter()
        .map(|&p| {
            releases
                .iter()
                .rposition(|r| r.package == p)
                .expect("every package has releases")
        })
        .collect();
    let mut others: Vec<usize> = (0..releases.len()).filter(|i| !forced.contains(i)).collect();
    others.shuffle(&mut rng);
    let nulls: BTreeSet<usize> = forced
        .iter()
        .copied()
        .chain(others.into_iter().take(NULL_RELEASE_ROWS - FORCED_NULL_TOP))
        .collect();

    // rows without a timestamp come first, so sampling queries meet them
    let order: Vec<usize> = nulls
        .iter()
        .copied()
        .chain((0..releases.len()).filter(|i| !nulls.contains(i)))
        .collect();
    for idx in order {
        let r = &releases[idx];
        let published = (!nulls.contains(&idx))
            .then(|| 1_500_000_000 + (r.package * 10 + r.ordinal) as i64 * 86_400);
        let name = package_name(r.package);
        tx.execute(
            "INSERT INTO PACKAGEVERSIONS VALUES (?1, ?2, 'NPM', ?3, ?4, ?5)",
            params![
                name,
                r.version,
                format!("{{\"IsRelease\": true, \"Ordinal\": {}}}", r.ordinal),
                published,
                SNAPSHOT_AT
            ],
        )?;
        let kind = if r.package >= GITLAB_FROM { "GITLAB" } else { "GITHUB" };
        tx.execute(
            "INSERT INTO PACKAGEVERSIONTOPROJECT VALUES ('NPM', ?1, ?2, ?3, ?4, 'SOURCE_REPO_TYPE')",
            params![name, r.version, kind, project_name(r.package)],
        )?;
    }
    // pre-releases that sit after the last release
    for i in (0..NPM_PACKAGES).step_by(5) {
        let name = package_name(i);
        let ordinal = releases_of(i) + 1;
        tx.execute(
            "INSERT INTO PACKAGEVERSIONS VALUES (?1, '2.0.0-beta.1', 'NPM', ?2, ?3, ?4)",
            params![
                name,
                format!("{{\"IsRelease\": false, \"Ordinal\": {ordinal}}}"),
                1_600_000_000 + i as i64,
                SNAPSHOT_AT
            ],
        )?;
        let kind = if i >= GITLAB_FROM { "GITLAB" } else { "GITHUB" };
        tx.execute(
            "INSERT INTO PACKAGEVERSIONTOPROJECT VALUES ('NPM', ?1, '2.0.0-beta.1', ?2, ?3, 'SOURCE_REPO_TYPE')",
            params![name, kind, project_name(i)],
        )?;
    }
    for j in 0..PYPI_PACKAGES {
        let name = format!("pylib{j:02}");
        for k in 0..3 {
            let version = format!("0.{k}.0");
            tx.execute(
                "INSERT INTO PACKAGEVERSIONS VALUES (?1, ?2, 'PYPI', ?3, ?4, ?5)",
                params![
                    name,
                    version,
                    format!("{{\"IsRelease\": true, \"Ordinal\": {}}}", k + 1),
                    1_550_000_000 + (j * 3 + k) as i64,
                    SNAPSHOT_AT
                ],
            )?;
            tx.execute(
                "INSERT INTO PACKAGEVERSIONTOPROJECT VALUES ('PYPI', ?1, ?2, 'GITHUB', ?3, 'SOURCE_REPO_TYPE')",
                params![name, version, format!("pyowner{j:02}/lib")],
            )?;
        }
    }
    tx.commit()?;
    Ok(())
}

fn agent_actions(null_count: i64) -> Vec<String> {
    let release_filter = r#"WHERE "System" = 'NPM' AND json_extract("VersionInfo", '$.IsRelease') = 1"#;
    let q = |s: &str| s.replace("{F}", release_filter);
    vec![
        explore_action(&[
            &q(r#"SELECT "UpstreamPublishedAt", "VersionInfo" FROM PACKAGEVERSIONS {F} LIMIT 10"#),
            &q(r#"SELECT "VersionInfo" FROM PACKAGEVERSIONS {F} LIMIT 10"#),
            &q(r#"SELECT "SnapshotAt", "VersionInfo", "UpstreamPublishedAt" FROM PACKAGEVERSIONS {F} AND "UpstreamPublishedAt" IS NULL LIMIT 10"#),
        ]),
        RefineText::new(
            "- UpstreamPublishedAt is NULL in every sampled NPM release row.\n- VersionInfo carries IsRelease and Ordinal, no timestamp.\n- SnapshotAt is the same for every row.",
            "- The publish time cannot identify the latest release.",
            "- Rank releases per package by VersionInfo Ordinal with ROW_NUMBER() OVER (PARTITION BY \"Name\" ORDER BY Ordinal DESC).",
        )
        .action(),
        explore_action(&[&q(
            r#"SELECT COUNT(*) AS null_count FROM PACKAGEVERSIONS {F} AND "UpstreamPublishedAt" IS NULL"#,
        )]),
        RefineText::new(
            &format!("- {null_count} NPM release rows have no UpstreamPublishedAt."),
            "- Filtering on the timestamp would drop a large share of packages.",
            "- Keep the Ordinal ranking; join releases to GitHub projects and order by StarsCount.",
        )
        .action(),
        explore_action(&[
            &q(r#"SELECT "VersionInfo" FROM PACKAGEVERSIONS {F} LIMIT 5"#),
            r#"SELECT DISTINCT "ProjectName" FROM PACKAGEVERSIONTOPROJECT WHERE "ProjectType" = 'GITHUB' LIMIT 5"#,
        ]),
        RefineText::new(
            "- Ordinal is present on every release.\n- ProjectName uses the owner/repo form of PROJECTS.Name.",
            "- Latest release = highest Ordinal among IsRelease rows.",
            "- CTE with ROW_NUMBER by Ordinal, join PACKAGEVERSIONTOPROJECT (GITHUB) and PROJECTS (GITHUB), ORDER BY StarsCount DESC LIMIT 8.",
        )
        .action(),
        sql_action(AGENT_SQL),
        confirm_action("Latest release per package by Ordinal, ranked by GitHub stars."),
    ]
}

const PLAN: &[&str] = &[
    "Restrict package versions to NPM releases",
    "Find the latest release of each package",
    "Link each release to its GitHub project",
    "Rank by star count and keep the top 8",
];

/// Builds the fixture under `dir` and returns its scenario.
pub fn package_versions_scenario(dir: &Path) -> Result<Scenario, TestkitError> {
    std::fs::create_dir_all(dir)?;
    build_database(dir)?;
    let db_path = dir.join(format!("{PACKAGE_TASK_ID}.sqlite"));
    let schema = load_fixture_schema(&db_path)?;
    let db = Database::open(&db_path)?;
    let inconsistent = |reason: String| TestkitError::Inconsistent {
        id: PACKAGE_TASK_ID.into(),
        reason,
    };

    let nulls = run(
        &db,
        r#"SELECT COUNT(*) FROM PACKAGEVERSIONS WHERE "System" = 'NPM' AND json_extract("VersionInfo", '$.IsRelease') = 1 AND "UpstreamPublishedAt" IS NULL"#,
    )?;
    let null_count = match nulls.rows.first().and_then(|r| r.first()) {
        Some(Value::Integer(n)) => *n,
        other => return Err(inconsistent(format!("null count query returned {other:?}"))),
    };
    if null_count != NULL_RELEASE_ROWS as i64 {
        return Err(inconsistent(format!("seeded {null_count} null rows")));
    }
    check_equivalent(PACKAGE_TASK_ID, &db, AGENT_SQL, GOLD_SQL, CompareMode::Relaxed)?;
    if compare(&run(&db, BASELINE_SQL)?, &run(&db, GOLD_SQL)?, CompareMode::Relaxed) {
        return Err(inconsistent("the timestamp-based query already matches gold".into()));
    }

    let gold = gold_columns(PACKAGE_TASK_ID, &schema, GOLD_SQL)?;
    let mut keep = gold.clone();
    keep.insert(ColumnRef::new("PACKAGEVERSIONS", "UpstreamPublishedAt"));
    keep.insert(ColumnRef::new("PACKAGEVERSIONS", "SnapshotAt"));
    let config = LinkingConfig::default();
    let mut entries = linking_entries(&LinkingPlan {
        schema: &schema,
        config: &config,
        plan_steps: PLAN,
        keep: &keep,
        synthesis_probe: Some(
            r#"SELECT COUNT(*) FROM PACKAGEVERSIONTOPROJECT m JOIN PROJECTS p ON p."Name" = m."ProjectName" WHERE m."ProjectType" = 'GITHUB'"#,
        ),
    });
    entries.push(realization_entry(
        PLAN,
        &["PACKAGEVERSIONS".into(), "VersionInfo".into(), "latest".into(), "StarsCount".into()],
    ));
    entries.extend(episode_entries(&[agent_actions(null_count)]));

    Ok(Scenario {
        task: TaskRecord {
            question_id: PACKAGE_TASK_ID.into(),
            question: QUESTION.into(),
            evidence: String::new(),
            knowledge_path: Some(dir.join(format!("{PACKAGE_TASK_ID}.md"))),
            db_path,
            gold_sql: Some(GOLD_SQL.into()),
            gold_columns: Some(gold.into_iter().collect()),
        },
        script: ReplayScript::new(entries),
        mode: CompareMode::Relaxed,
        expected_sql: AGENT_SQL.into(),
    })
}
