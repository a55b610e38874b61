//! Completion text → one SQL statement.

/// Extracts the first SQL statement from a completion.
///
/// Takes the body of the first fenced code block if there is one, drops a
/// leading `SQL:` label, and stops at the first `;` outside a string
/// literal, at a blank line, or at a line that starts a new `Question:`.
/// The kept lines are trimmed and joined with single spaces.
pub fn extract_sql(completion: &str) -> Option<String> {
    let body = fenced_body(completion).unwrap_or(completion);
    let body = body.trim_start();
    let body = strip_label(body);

    let mut kept = String::new();
    let mut quote: Option<char> = None;
    let mut line_start = true;
    let mut blank_run = false;
    for (i, c) in body.char_indices() {
        if quote.is_none() && line_start {
            let rest = body[i..].trim_start_matches([' ', '\t']);
            if rest.starts_with("Question:") {
                break;
            }
        }
        match (quote, c) {
            (None, ';') => break,
            (None, '\'' | '"' | '`') => quote = Some(c),
            (Some(q), c) if c == q => quote = None,
            _ => {}
        }
        if c == '\n' {
            if quote.is_none() && line_start && blank_run && !kept.trim().is_empty() {
                break;
            }
            blank_run = true;
            line_start = true;
        } else if !c.is_whitespace() {
            blank_run = false;
            line_start = false;
        }
        kept.push(c);
    }
    let sql = kept.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    (!sql.is_empty()).then_some(sql)
}

fn fenced_body(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // skip the language tag line
    let body_start = after.find('\n').map(|n| n + 1)?;
    let body = &after[body_start..];
    Some(match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    })
}

fn strip_label(text: &str) -> &str {
    if text.len() >= 4 && text[..4].eq_ignore_ascii_case("sql:") {
        text[4..].trim_start()
    } else {
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_fences() {
        assert_eq!(
            extract_sql("```sql\nSELECT a\nFROM t;\n```").as_deref(),
            Some("SELECT a FROM t")
        );
        assert_eq!(extract_sql("Here:\n```\nSELECT 1\n```\nDone").as_deref(), Some("SELECT 1"));
    }

    #[test]
    fn first_statement_only() {
        assert_eq!(extract_sql("SELECT 1; SELECT 2").as_deref(), Some("SELECT 1"));
        assert_eq!(extract_sql("SELECT 'a;b' FROM t; DROP t").as_deref(), Some("SELECT 'a;b' FROM t"));
        assert_eq!(extract_sql("SELECT 1\n\nThis query counts").as_deref(), Some("SELECT 1"));
        assert_eq!(
            extract_sql("SELECT x FROM t\n\nQuestion: next?").as_deref(),
            Some("SELECT x FROM t")
        );
        assert_eq!(extract_sql("SELECT x\nFROM t\nQuestion: q").as_deref(), Some("SELECT x FROM t"));
    }

    #[test]
    fn label_and_leading_blank_lines() {
        assert_eq!(extract_sql("\n\nSQL: SELECT 1").as_deref(), Some("SELECT 1"));
    }

    #[test]
    fn quoted_newlines_survive_blank_line_rule() {
        assert_eq!(
            extract_sql("SELECT 'x\n\ny' FROM t").as_deref(),
            Some("SELECT 'x y' FROM t")
        );
    }

    #[test]
    fn empty() {
        assert_eq!(extract_sql("   \n ```\n```"), None);
        assert_eq!(extract_sql(";"), None);
    }
}
