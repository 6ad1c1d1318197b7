use std::fmt::Write;

use super::{Annotation, ColumnRef, DatabaseSchema, SchemaError, SchemaSubset, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RenderStyle {
    /// Names, types, descriptions and sample values.
    #[default]
    Full,
    /// Like `Full` without sample values.
    Compact,
}

/// Renders one table block. `members` lists the other tables sharing this
/// table's layout when it stands in for a merged group.
pub fn render_table(table: &Table, style: RenderStyle, members: &[String]) -> String {
    render_table_with(table, style, members, |_| None)
}

fn render_table_with<'a>(
    table: &Table,
    style: RenderStyle,
    members: &[String],
    note: impl Fn(&ColumnRef) -> Option<&'a Annotation>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Table: {}", table.name);
    let others: Vec<&String> = members
        .iter()
        .filter(|m| !m.eq_ignore_ascii_case(&table.name))
        .collect();
    if !others.is_empty() {
        let list: Vec<&str> = others.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(out, "Same columns as: {}", list.join(", "));
    }
    if let Some(pk) = &table.primary_key {
        let _ = writeln!(out, "Primary key: {}", pk.join(", "));
    }
    for fk in &table.foreign_keys {
        let _ = writeln!(
            out,
            "Foreign key: {} -> {}.{}",
            fk.column, fk.foreign_table, fk.foreign_column
        );
    }
    out.push_str("Columns:\n");
    for c in &table.columns {
        let ty = if c.data_type.is_empty() { "UNKNOWN" } else { &c.data_type };
        let _ = write!(out, "- {} ({ty})", c.name);
        if let Some(d) = &c.description {
            let _ = write!(out, ": {}", one_line(d));
        }
        if style == RenderStyle::Full && !c.sample_values.is_empty() {
            let samples: Vec<String> = c.sample_values.iter().map(|s| one_line(s)).collect();
            let _ = write!(out, " | samples: {}", samples.join(", "));
        }
        out.push('\n');
        if let Some(a) = note(&ColumnRef::new(&table.name, &c.name)) {
            if !a.reason.is_empty() {
                let _ = writeln!(out, "    reason: {}", one_line(&a.reason));
            }
            if !a.observations.is_empty() {
                let _ = writeln!(out, "    observed: {}", one_line(&a.observations));
            }
        }
    }
    out
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders every table of the schema, separated by blank lines.
pub fn render_schema(schema: &DatabaseSchema, style: RenderStyle) -> String {
    schema
        .tables
        .iter()
        .map(|t| render_table(t, style, &[]))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the columns of `subset` in schema order, including any
/// annotations. An empty subset renders as empty text.
pub fn render_subset(
    schema: &DatabaseSchema,
    subset: &SchemaSubset,
    style: RenderStyle,
) -> Result<String, SchemaError> {
    let restricted = schema.restrict(subset)?;
    Ok(restricted
        .tables
        .iter()
        .map(|t| render_table_with(t, style, &[], |r| subset.annotation(r)))
        .collect::<Vec<_>>()
        .join("\n"))
}

#[cfg(test)]
mod tests {
    use super::super::tests::users_orders;
    use super::super::{Column, ColumnRef, SchemaSubset};
    use super::*;

    fn column_lines(text: &str) -> usize {
        text.lines().filter(|l| l.starts_with("- ")).count()
    }

    #[test]
    fn empty_subset_is_empty_text() {
        let s = users_orders();
        assert_eq!(render_subset(&s, &SchemaSubset::default(), RenderStyle::Full).unwrap(), "");
    }

    #[test]
    fn single_column_subset() {
        let s = users_orders();
        let sub = SchemaSubset::new([ColumnRef::new("users", "id")]);
        let text = render_subset(&s, &sub, RenderStyle::Full).unwrap();
        assert_eq!(column_lines(&text), 1);
        assert_eq!(column_lines(&render_schema(&s, RenderStyle::Full)), 5);
    }

    #[test]
    fn unresolved_ref_errors() {
        let s = users_orders();
        let sub = SchemaSubset::new([ColumnRef::new("nope", "id")]);
        assert!(matches!(
            render_subset(&s, &sub, RenderStyle::Full),
            Err(SchemaError::UnresolvedRef(_))
        ));
    }

    #[test]
    fn compact_omits_samples() {
        let mut s = users_orders();
        s.tables[0].columns[1] = Column {
            sample_values: vec!["ann".into()],
            ..Column::new("name", "TEXT")
        };
        assert!(render_schema(&s, RenderStyle::Full).contains("samples: ann"));
        assert!(!render_schema(&s, RenderStyle::Compact).contains("ann"));
        assert_eq!(
            render_schema(&s, RenderStyle::Full),
            render_schema(&s, RenderStyle::Full)
        );
    }

    #[test]
    fn annotations_rendered() {
        let s = users_orders();
        let r = ColumnRef::new("users", "email");
        let mut sub = SchemaSubset::new([r.clone()]);
        sub.annotate(
            &r,
            Annotation {
                reason: "contact".into(),
                observations: "12% null".into(),
            },
        );
        let text = render_subset(&s, &sub, RenderStyle::Compact).unwrap();
        assert!(text.contains("reason: contact"));
        assert!(text.contains("observed: 12% null"));
        assert_eq!(column_lines(&text), 1);
    }
}
