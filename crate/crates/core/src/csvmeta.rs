//! `# key=value` metadata lines that may precede the header of the CSV files
//! this crate reads and writes.

use std::collections::BTreeMap;

/// Splits leading metadata lines off `text`. Returns the metadata, the
/// remaining body, and how many lines were consumed.
pub fn split(text: &str) -> (BTreeMap<String, String>, &str, u64) {
    let mut meta = BTreeMap::new();
    let mut rest = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut consumed = 0;
    while let Some(line) = rest.lines().next() {
        let Some(body) = line.strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = body.trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
        consumed += 1;
        rest = match rest.find('\n') {
            Some(pos) => &rest[pos + 1..],
            None => "",
        };
    }
    (meta, rest, consumed)
}

pub fn write(meta: &BTreeMap<String, String>, out: &mut String) {
    for (k, v) in meta {
        let v = v.replace(['\n', '\r'], " ");
        out.push_str(&format!("# {k}={v}\n"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_leading_comment_block() {
        let (meta, rest, n) = split("# name=x\n# model = m=1\nid,title\n# not meta\n");
        assert_eq!(n, 2);
        assert_eq!(meta["name"], "x");
        assert_eq!(meta["model"], "m=1");
        assert_eq!(rest, "id,title\n# not meta\n");
    }

    #[test]
    fn no_metadata() {
        let (meta, rest, n) = split("a,b\n");
        assert!(meta.is_empty());
        assert_eq!((rest, n), ("a,b\n", 0));
    }
}
