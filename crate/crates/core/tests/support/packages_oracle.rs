//! Top packages of the package-versions fixture, computed in plain Rust
//! from full table scans.

use std::collections::BTreeMap;
use std::path::Path;

use apexsql_core::exec::Value;
use apexsql_core::ResultSet;
use rusqlite::{Connection, OpenFlags};

pub fn top_packages(db: &Path, n: usize) -> rusqlite::Result<ResultSet> {
    let conn = Connection::open_with_flags(db, OpenFlags::SQLITE_OPEN_READ_ONLY)?;

    // name -> (ordinal, version) of the latest release
    let mut latest: BTreeMap<String, (i64, String)> = BTreeMap::new();
    let mut stmt = conn.prepare(r#"SELECT "Name", "Version", "System", "VersionInfo" FROM PACKAGEVERSIONS"#)?;
    let rows = stmt.query_map([], |r| {
        Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?))
    })?;
    for row in rows {
        let (name, version, system, info) = row?;
        if system != "NPM" {
            continue;
        }
        let info: serde_json::Value = serde_json::from_str(&info).expect("VersionInfo is JSON");
        if info["IsRelease"] != serde_json::Value::Bool(true) {
            continue;
        }
        let ordinal = info["Ordinal"].as_i64().expect("Ordinal");
        let entry = latest.entry(name).or_insert((i64::MIN, String::new()));
        if ordinal > entry.0 {
            *entry = (ordinal, version);
        }
    }

    let mut github_project: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut stmt = conn.prepare(r#"SELECT "System", "Name", "Version", "ProjectType", "ProjectName" FROM PACKAGEVERSIONTOPROJECT"#)?;
    let rows = stmt.query_map([], |r| {
        Ok((
            r.get::<_, String>(0)?,
            r.get::<_, String>(1)?,
            r.get::<_, String>(2)?,
            r.get::<_, String>(3)?,
            r.get::<_, String>(4)?,
        ))
    })?;
    for row in rows {
        let (system, name, version, kind, project) = row?;
        if system == "NPM" && kind == "GITHUB" {
            github_project.insert((name, version), project);
        }
    }

    let mut stars: BTreeMap<String, i64> = BTreeMap::new();
    let mut stmt = conn.prepare(r#"SELECT "Name", "Type", "StarsCount" FROM PROJECTS"#)?;
    let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, i64>(2)?)))?;
    for row in rows {
        let (name, kind, count) = row?;
        if kind == "GITHUB" {
            stars.insert(name, count);
        }
    }

    let mut ranked: Vec<(i64, String, String)> = latest
        .into_iter()
        .filter_map(|(name, (_, version))| {
            let project = github_project.get(&(name.clone(), version.clone()))?;
            let count = *stars.get(project)?;
            Some((count, name, version))
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let rows = ranked
        .into_iter()
        .take(n)
        .map(|(_, name, version)| vec![Value::Text(name), Value::Text(version)])
        .collect();
    Ok(ResultSet::from_rows(&["Name", "Version"], rows))
}
