//! Lexical helpers for SQL text: statement splitting and keyword peeking.
//! Quotes (`'`, `"`, `` ` ``, `[...]`) and comments (`--`, `/* */`) are
//! respected so semicolons inside them never split.

#[derive(Clone, Copy, PartialEq, Eq)]
enum Lex {
    Code,
    Quote(u8),
    Bracket,
    LineComment,
    BlockComment,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Class {
    Code,
    Quoted,
    Comment,
}

/// Classifies every byte of `sql` as code, quoted text or comment.
fn classify(sql: &str) -> Vec<Class> {
    let b = sql.as_bytes();
    let mut out = vec![Class::Code; b.len()];
    let mut state = Lex::Code;
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let next = b.get(i + 1).copied();
        match state {
            Lex::Code => match c {
                b'\'' | b'"' | b'`' => {
                    state = Lex::Quote(c);
                    out[i] = Class::Quoted;
                }
                b'[' => {
                    state = Lex::Bracket;
                    out[i] = Class::Quoted;
                }
                b'-' if next == Some(b'-') => {
                    state = Lex::LineComment;
                    out[i] = Class::Comment;
                }
                b'/' if next == Some(b'*') => {
                    state = Lex::BlockComment;
                    out[i] = Class::Comment;
                    out[i + 1] = Class::Comment;
                    i += 1;
                }
                _ => {}
            },
            Lex::Quote(q) => {
                out[i] = Class::Quoted;
                if c == q {
                    if next == Some(q) {
                        out[i + 1] = Class::Quoted;
                        i += 1;
                    } else {
                        state = Lex::Code;
                    }
                }
            }
            Lex::Bracket => {
                out[i] = Class::Quoted;
                if c == b']' {
                    state = Lex::Code;
                }
            }
            Lex::LineComment => {
                out[i] = Class::Comment;
                if c == b'\n' {
                    state = Lex::Code;
                }
            }
            Lex::BlockComment => {
                out[i] = Class::Comment;
                if c == b'*' && next == Some(b'/') {
                    out[i + 1] = Class::Comment;
                    i += 1;
                    state = Lex::Code;
                }
            }
        }
        i += 1;
    }
    out
}

/// Splits on semicolons outside quotes and comments. Statements keep their
/// comments; pieces that hold nothing but whitespace and comments are dropped.
/// Returned statements are trimmed and carry no trailing semicolon.
pub fn split_statements(sql: &str) -> Vec<String> {
    let classes = classify(sql);
    let cuts = sql
        .bytes()
        .enumerate()
        .filter(|&(i, c)| c == b';' && classes[i] == Class::Code)
        .map(|(i, _)| i);
    let mut out = Vec::new();
    let mut start = 0;
    for cut in cuts.chain(std::iter::once(sql.len())) {
        let piece = sql[start..cut].trim();
        if has_code(piece) {
            out.push(piece.to_string());
        }
        start = (cut + 1).min(sql.len());
    }
    out
}

/// The text with every comment byte replaced by a space; quoted content is
/// kept verbatim.
pub fn strip_comments(sql: &str) -> String {
    let classes = classify(sql);
    let bytes: Vec<u8> = sql
        .bytes()
        .zip(classes)
        .map(|(c, class)| if class == Class::Comment { b' ' } else { c })
        .collect();
    // Comment bytes may cut a multi-byte character; lossy keeps it total.
    String::from_utf8_lossy(&bytes).into_owned()
}

fn has_code(piece: &str) -> bool {
    !strip_comments(piece).trim().is_empty()
}

/// The first keyword of a statement, uppercased, skipping comments and
/// leading parentheses.
pub fn leading_keyword(sql: &str) -> Option<String> {
    let stripped = strip_comments(sql);
    let rest = stripped.trim_start_matches(|c: char| c.is_whitespace() || c == '(');
    let word: String = rest
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    (!word.is_empty()).then(|| word.to_ascii_uppercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_outside_strings() {
        let s = split_statements("SELECT 'a;b'; SELECT \"x;\" FROM t;\n-- trailing; comment\n");
        assert_eq!(s, vec!["SELECT 'a;b'", "SELECT \"x;\" FROM t"]);
    }

    #[test]
    fn keeps_comments_inside_statements() {
        let s = split_statements("-- pick rows\nSELECT 1 /* one; */ ; SELECT 2");
        assert_eq!(s, vec!["-- pick rows\nSELECT 1 /* one; */", "SELECT 2"]);
    }

    #[test]
    fn escaped_quotes() {
        assert_eq!(split_statements("SELECT 'it''s; fine'; SELECT 2").len(), 2);
    }

    #[test]
    fn keyword_peek() {
        assert_eq!(leading_keyword("  -- c\n /* x */ (select 1)"), Some("SELECT".into()));
        assert_eq!(leading_keyword("with x as (select 1) select * from x"), Some("WITH".into()));
        assert_eq!(leading_keyword("-- only"), None);
    }

    #[test]
    fn strip_keeps_quoted_dashes() {
        assert_eq!(strip_comments("SELECT '--x' -- y").trim_end(), "SELECT '--x'");
    }
}
