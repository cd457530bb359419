//! Recognizes outline lines in free-form assistant output.
//!
//! Accepted shapes, after optional indentation, bullets (`-`, `*`, `+`),
//! heading marks and bold markers:
//!
//! ```text
//! 1. Charging
//!   1.1 Online Charging - real-time credit control
//! [12] Rating Engine
//! ID 7: Tariff
//! - Voucher (ID: 44)
//! ```
//!
//! Dotted numbering gives depth and parent directly; otherwise nesting comes
//! from indentation. Anything else is treated as prose and skipped.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNodeLine {
    pub raw_id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// 1 for top-level lines of a response.
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_hint: Option<String>,
}

/// Longer "titles" are almost always sentences.
const MAX_TITLE_WORDS: usize = 12;

pub fn parse_node_lines(text: &str) -> Vec<RawNodeLine> {
    let mut out = Vec::new();
    // (indent, raw id, depth) of the open ancestors.
    let mut stack: Vec<(usize, String, usize)> = Vec::new();
    for line in text.lines() {
        let expanded = line.replace('\t', "    ");
        let indent = expanded.len() - expanded.trim_start().len();
        let Some((raw_id, title, description)) = recognize(expanded.trim()) else {
            continue;
        };
        while stack.last().is_some_and(|(i, _, _)| *i >= indent) {
            stack.pop();
        }
        let parts: Vec<&str> = raw_id.split('.').collect();
        let (depth, parent_hint) = if parts.len() >= 2 {
            (parts.len(), Some(parts[..parts.len() - 1].join(".")))
        } else {
            match stack.last() {
                Some((_, id, d)) => (d + 1, Some(id.clone())),
                None => (1, None),
            }
        };
        stack.push((indent, raw_id.clone(), depth));
        out.push(RawNodeLine {
            raw_id,
            title,
            description,
            depth,
            parent_hint,
        });
    }
    out
}

fn recognize(line: &str) -> Option<(String, String, Option<String>)> {
    let mut s = line.trim_start_matches('#').trim_start();
    for bullet in ["- ", "* ", "+ ", "• "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim_start();
            break;
        }
    }
    s = strip_emphasis(s);

    let (raw_id, rest) = match leading_id(s) {
        Some(found) => found,
        None => trailing_id(s)?,
    };
    let rest = strip_emphasis(rest.trim_start_matches([':', '-', '–', '—', ' ']));
    let (title, description) = split_description(rest);
    let title = strip_emphasis(title)
        .trim_end_matches(':')
        .trim()
        .to_string();
    if title.is_empty()
        || title.ends_with('?')
        || title.split_whitespace().count() > MAX_TITLE_WORDS
        || !title.chars().any(char::is_alphabetic)
    {
        return None;
    }
    Some((raw_id, title, description))
}

fn strip_emphasis(s: &str) -> &str {
    s.trim()
        .trim_start_matches("**")
        .trim_end_matches("**")
        .trim_start_matches("__")
        .trim_end_matches("__")
        .trim()
}

/// `1.2.3.`, `12)`, `[12]`, `(12)`, `ID 12:` at the start of the line.
fn leading_id(s: &str) -> Option<(String, &str)> {
    let mut body = s;
    let mut closer = None;
    if let Some(rest) = body.strip_prefix('[') {
        body = rest;
        closer = Some(']');
    } else if let Some(rest) = body.strip_prefix('(') {
        body = rest;
        closer = Some(')');
    } else if body.len() > 2 && body[..2].eq_ignore_ascii_case("id") {
        body = body[2..].trim_start_matches([':', ' ', '#']);
    }
    let end = body
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.'))
        .map(|(i, _)| i)
        .unwrap_or(body.len());
    let token = body[..end].trim_end_matches('.');
    if token.is_empty()
        || token
            .split('.')
            .any(|p| p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()))
    {
        return None;
    }
    let mut rest = &body[end..];
    match closer {
        Some(c) => rest = rest.strip_prefix(c)?,
        None => {
            if let Some(r) = rest.strip_prefix([')', ':']) {
                rest = r;
            }
        }
    }
    let rest = rest.trim_start_matches("**");
    // The id must be followed by a separator, not glued to a word.
    if !rest.is_empty() && !rest.starts_with([' ', '-', '–', ':']) {
        return None;
    }
    Some((token.to_string(), rest))
}

/// `Title (ID: 12)` or `Title [ID 12]` at the end of the line.
fn trailing_id(s: &str) -> Option<(String, &str)> {
    let s = s.trim_end();
    let close = s.chars().last()?;
    let open = match close {
        ')' => '(',
        ']' => '[',
        _ => return None,
    };
    let start = s.rfind(open)?;
    let inner = s[start + 1..s.len() - 1].trim();
    if inner.len() < 3 || !inner[..2].eq_ignore_ascii_case("id") {
        return None;
    }
    let token = inner[2..].trim_start_matches([':', ' ', '#']).trim();
    if token.is_empty()
        || token
            .split('.')
            .any(|p| p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()))
    {
        return None;
    }
    Some((token.to_string(), s[..start].trim_end()))
}

fn split_description(s: &str) -> (&str, Option<String>) {
    [" - ", " – ", " — ", ": "]
        .iter()
        .filter_map(|sep| s.find(sep).map(|i| (i, sep.len())))
        .min()
        .map(|(i, len)| {
            let desc = strip_emphasis(&s[i + len..]).to_string();
            (&s[..i], Some(desc).filter(|d| !d.is_empty()))
        })
        .unwrap_or((s, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(lines: &[RawNodeLine]) -> Vec<(&str, usize, Option<&str>)> {
        lines
            .iter()
            .map(|l| (l.raw_id.as_str(), l.depth, l.parent_hint.as_deref()))
            .collect()
    }

    #[test]
    fn canonical_outline() {
        let lines = parse_node_lines("1. Charging\n  1.1 Online Charging");
        assert_eq!(ids(&lines), vec![("1", 1, None), ("1.1", 2, Some("1"))]);
        assert_eq!(lines[1].title, "Online Charging");
    }

    #[test]
    fn prose_is_skipped() {
        let text = "Sure! Here is the taxonomy you asked for.\n\n\
                    1. Charging\n\
                    Would you like me to expand any node?\n\
                    2. Would you like more detail on rating?\n\
                    3. Rating - price determination\n\
                    Let me know.";
        let lines = parse_node_lines(text);
        assert_eq!(ids(&lines), vec![("1", 1, None), ("3", 1, None)]);
        assert_eq!(lines[1].description.as_deref(), Some("price determination"));
    }

    #[test]
    fn zero_outline_lines_in_prose() {
        assert!(parse_node_lines("I cannot think of anything else.\nThat's all.").is_empty());
    }

    #[test]
    fn indentation_nesting_with_plain_ids() {
        let text = "- 10 Charging\n    - 11 Online\n        - 12 Credit Control\n    - 13 Offline\n- 20 Billing";
        let lines = parse_node_lines(text);
        assert_eq!(
            ids(&lines),
            vec![
                ("10", 1, None),
                ("11", 2, Some("10")),
                ("12", 3, Some("11")),
                ("13", 2, Some("10")),
                ("20", 1, None)
            ]
        );
    }

    #[test]
    fn alternate_id_forms() {
        let text = "### 1. **Charging**\n[2] Rating\n(3) Tariff\nID 4: Voucher\n- Account Balance (ID: 5)\n**6. Bundles**\n7) Policy";
        let lines = parse_node_lines(text);
        let got: Vec<(&str, &str)> = lines
            .iter()
            .map(|l| (l.raw_id.as_str(), l.title.as_str()))
            .collect();
        assert_eq!(
            got,
            vec![
                ("1", "Charging"),
                ("2", "Rating"),
                ("3", "Tariff"),
                ("4", "Voucher"),
                ("5", "Account Balance"),
                ("6", "Bundles"),
                ("7", "Policy")
            ]
        );
    }

    #[test]
    fn numbers_glued_to_words_are_not_ids() {
        assert!(parse_node_lines("5G Charging\n3GPP TS 32.240").is_empty());
    }

    /// Independent line classifier: a line is an outline line iff it matches
    /// `^\s*\d+(\.\d+)*\.? +[A-Za-z][A-Za-z ]*$`.
    fn oracle_is_outline(line: &str) -> bool {
        let s = line.trim_start();
        let digits_end = s
            .find(|c: char| !(c.is_ascii_digit() || c == '.'))
            .unwrap_or(s.len());
        let (num, rest) = s.split_at(digits_end);
        let num = num.trim_end_matches('.');
        !num.is_empty()
            && num
                .split('.')
                .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
            && rest.starts_with(' ')
            && rest.trim().starts_with(|c: char| c.is_ascii_alphabetic())
            && rest
                .trim()
                .chars()
                .all(|c| c.is_ascii_alphabetic() || c == ' ')
    }

    #[test]
    fn two_hundred_lines_three_malformed() {
        let mut text = String::new();
        let mut n = 0;
        for top in 1..=20 {
            text.push_str(&format!("{top}. Area {}\n", letters(top)));
            n += 1;
            for sub in 1..=9 {
                if n == 200 {
                    break;
                }
                match n {
                    37 => text.push_str(&format!("  {top}.{sub}\n")),
                    101 => text.push_str(&format!("  {top}..{sub} Broken {}\n", letters(sub))),
                    163 => text.push_str(&format!("  {top}.{sub}Glued {}\n", letters(sub))),
                    _ => text.push_str(&format!(
                        "  {top}.{sub} Topic {}\n",
                        letters(top * 10 + sub)
                    )),
                }
                n += 1;
            }
        }
        assert_eq!(text.lines().count(), 200);
        let expected = text.lines().filter(|l| oracle_is_outline(l)).count();
        assert_eq!(expected, 197);
        assert_eq!(parse_node_lines(&text).len(), expected);
    }

    fn letters(mut n: usize) -> String {
        let mut s = String::new();
        loop {
            s.push((b'a' + (n % 26) as u8) as char);
            n /= 26;
            if n == 0 {
                return s;
            }
        }
    }
}
