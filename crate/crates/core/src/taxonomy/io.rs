//! Taxonomy files: flat CSV (`id,title,parent_id,description,synonyms`) and
//! an equivalent hierarchical JSON form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NodeId, Taxonomy, TaxonomyError, TaxonomyNode};
use crate::csvmeta;

pub const CSV_HEADER: [&str; 5] = ["id", "title", "parent_id", "description", "synonyms"];

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Attach several top-level nodes to a synthesized root named after the
    /// taxonomy instead of rejecting them.
    pub synthesize_root: bool,
}

/// Parses either format, picking JSON when the document starts with `{`.
pub fn parse_taxonomy(
    text: &str,
    default_name: &str,
    opts: LoadOptions,
) -> Result<Taxonomy, TaxonomyError> {
    if text.trim_start().starts_with('{') {
        parse_taxonomy_json(text, default_name, opts)
    } else {
        parse_taxonomy_csv(text, default_name, opts)
    }
}

pub fn read_taxonomy(path: &Path, opts: LoadOptions) -> Result<Taxonomy, TaxonomyError> {
    let text = std::fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("taxonomy");
    parse_taxonomy(&text, stem, opts)
}

pub fn write_taxonomy(path: &Path, t: &Taxonomy) -> Result<(), TaxonomyError> {
    let body = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => to_json(t),
        _ => to_csv(t),
    };
    std::fs::write(path, body)?;
    Ok(())
}

pub fn parse_taxonomy_csv(
    text: &str,
    default_name: &str,
    opts: LoadOptions,
) -> Result<Taxonomy, TaxonomyError> {
    let (mut meta, body, offset) = csvmeta::split(text);
    let name = meta
        .remove("name")
        .unwrap_or_else(|| default_name.to_string());

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let syntax = |line: u64, message: String| TaxonomyError::Syntax {
        line: line + offset,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| syntax(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols.len() < 3 || cols.len() > 5 || cols[..] != CSV_HEADER[..cols.len()] {
        return Err(syntax(
            1,
            format!(
                "expected header `{}`, found `{}`",
                CSV_HEADER.join(","),
                cols.join(",")
            ),
        ));
    }

    let mut nodes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            syntax(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let id = record.get(0).unwrap_or("").trim();
        if id.is_empty() {
            return Err(syntax(line, "empty id".into()));
        }
        let parent = record.get(2).map(str::trim).filter(|p| !p.is_empty());
        let description = record
            .get(3)
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .map(str::to_string);
        let synonyms = record
            .get(4)
            .map(|s| {
                s.split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        nodes.push(TaxonomyNode {
            id: NodeId::from(id),
            title: record.get(1).unwrap_or("").trim().to_string(),
            description,
            synonyms,
            parent: parent.map(NodeId::from),
        });
    }

    finish(name, meta, nodes, opts)
}

fn finish(
    name: String,
    provenance: BTreeMap<String, String>,
    mut nodes: Vec<TaxonomyNode>,
    opts: LoadOptions,
) -> Result<Taxonomy, TaxonomyError> {
    if opts.synthesize_root {
        let tops: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.parent.is_none())
            .map(|(i, _)| i)
            .collect();
        if tops.len() > 1 {
            let root_id = unique_id(&nodes, "root");
            for i in tops {
                nodes[i].parent = Some(root_id.clone());
            }
            let title = if name.trim().is_empty() {
                "root".to_string()
            } else {
                name.clone()
            };
            nodes.insert(0, TaxonomyNode::new(root_id, title, None));
        }
    }
    Ok(Taxonomy::from_nodes(name, nodes)?.with_provenance(provenance))
}

pub(crate) fn unique_id(nodes: &[TaxonomyNode], base: &str) -> NodeId {
    let taken: std::collections::HashSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
    if !taken.contains(base) {
        return NodeId::from(base);
    }
    (1..)
        .map(|i| format!("{base}_{i}"))
        .find(|c| !taken.contains(c.as_str()))
        .map(NodeId::from)
        .expect("unbounded suffix search")
}

pub fn to_csv(t: &Taxonomy) -> String {
    let mut out = String::new();
    let mut meta = t.provenance().clone();
    meta.insert("name".into(), t.name().to_string());
    csvmeta::write(&meta, &mut out);

    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    writer.write_record(CSV_HEADER).expect("in-memory write");
    for n in t.nodes() {
        writer
            .write_record([
                n.id.as_str(),
                n.title.as_str(),
                n.parent.as_ref().map(NodeId::as_str).unwrap_or(""),
                n.description.as_deref().unwrap_or(""),
                n.synonyms.join(";").as_str(),
            ])
            .expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
    out
}

#[derive(Serialize, Deserialize)]
struct JsonDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, String>,
    #[serde(default)]
    children: Vec<JsonNode>,
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    id: String,
    title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    synonyms: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<JsonNode>,
}

pub fn parse_taxonomy_json(
    text: &str,
    default_name: &str,
    opts: LoadOptions,
) -> Result<Taxonomy, TaxonomyError> {
    let doc: JsonDoc = serde_json::from_str(text).map_err(|e| TaxonomyError::Syntax {
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let mut nodes = Vec::new();
    let mut stack: Vec<(JsonNode, Option<NodeId>)> =
        doc.children.into_iter().rev().map(|n| (n, None)).collect();
    while let Some((node, parent)) = stack.pop() {
        let id = NodeId::from(node.id.trim());
        stack.extend(
            node.children
                .into_iter()
                .rev()
                .map(|c| (c, Some(id.clone()))),
        );
        nodes.push(TaxonomyNode {
            id,
            title: node.title.trim().to_string(),
            description: node.description.filter(|d| !d.trim().is_empty()),
            synonyms: node.synonyms,
            parent,
        });
    }
    finish(
        doc.name.unwrap_or_else(|| default_name.to_string()),
        doc.provenance,
        nodes,
        opts,
    )
}

pub fn to_json(t: &Taxonomy) -> String {
    fn build(t: &Taxonomy, i: usize) -> JsonNode {
        let n = &t.nodes()[i];
        JsonNode {
            id: n.id.to_string(),
            title: n.title.clone(),
            description: n.description.clone(),
            synonyms: n.synonyms.clone(),
            children: t.child_positions(i).iter().map(|&c| build(t, c)).collect(),
        }
    }
    let doc = JsonDoc {
        name: Some(t.name().to_string()),
        provenance: t.provenance().clone(),
        children: vec![build(t, t.root_position())],
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("taxonomy serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    const VOICE: &str = "id,title,parent_id,description,synonyms\n\
A1,voice call,root,,\n\
B1,subscriber,root,,\n\
root,charging,,,\n";

    #[test]
    fn parses_worked_example() {
        let t = parse_taxonomy_csv(VOICE, "voice", LoadOptions::default()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.root().title, "charging");
        assert_eq!(t.name(), "voice");
        let ids: Vec<_> = t.nodes().iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["A1", "B1", "root"]);
    }

    #[test]
    fn three_column_header_accepted() {
        let t = parse_taxonomy_csv(
            "id,title,parent_id\nroot,domain,\n",
            "d",
            LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn bad_header_and_ragged_rows() {
        let err = parse_taxonomy_csv("id,name\n", "x", LoadOptions::default()).unwrap_err();
        assert!(
            matches!(err, TaxonomyError::Syntax { line: 1, .. }),
            "{err}"
        );
        let err = parse_taxonomy_csv(
            "# name=t\nid,title,parent_id,description,synonyms\nroot,r,,,\na,b\n",
            "x",
            LoadOptions::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, TaxonomyError::Syntax { line: 4, .. }),
            "{err}"
        );
    }

    #[test]
    fn cycle_and_roots() {
        let text = "id,title,parent_id\nX,x,Y\nY,y,X\n";
        assert!(matches!(
            parse_taxonomy_csv(text, "c", LoadOptions::default()),
            Err(TaxonomyError::CycleDetected(_))
        ));
        let text = "id,title,parent_id\na,Alpha,\nb,Beta,\n";
        assert!(matches!(
            parse_taxonomy_csv(text, "c", LoadOptions::default()),
            Err(TaxonomyError::MultipleRoots(_))
        ));
        let t = parse_taxonomy_csv(
            text,
            "gen",
            LoadOptions {
                synthesize_root: true,
            },
        )
        .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.root().title, "gen");
        assert_eq!(t.root().id.as_str(), "root");
    }

    #[test]
    fn synthesized_root_avoids_id_clash() {
        let text = "id,title,parent_id\nroot,Alpha,\nb,Beta,\n";
        let t = parse_taxonomy_csv(
            text,
            "g",
            LoadOptions {
                synthesize_root: true,
            },
        )
        .unwrap();
        assert_eq!(t.root().id.as_str(), "root_1");
    }

    #[test]
    fn json_round_trip_matches_csv() {
        let t = parse_taxonomy_csv(VOICE, "voice", LoadOptions::default()).unwrap();
        let json = to_json(&t);
        assert!(json.contains("\"children\""));
        let back = parse_taxonomy(&json, "ignored", LoadOptions::default()).unwrap();
        assert_eq!(node_set(&t), node_set(&back));
        assert_eq!(back.name(), "voice");
    }

    #[test]
    fn provenance_survives_csv() {
        let mut t = parse_taxonomy_csv(VOICE, "voice", LoadOptions::default()).unwrap();
        t.set_provenance("strategy", "level_branch");
        let back = parse_taxonomy_csv(&to_csv(&t), "x", LoadOptions::default()).unwrap();
        assert_eq!(back.provenance()["strategy"], "level_branch");
        assert_eq!(back, t);
    }

    type Row = (String, String, Option<String>, Option<String>, Vec<String>);

    fn node_set(t: &Taxonomy) -> BTreeSet<Row> {
        t.nodes()
            .iter()
            .map(|n| {
                (
                    n.id.to_string(),
                    n.title.clone(),
                    n.parent.as_ref().map(|p| p.to_string()),
                    n.description.clone(),
                    n.synonyms.clone(),
                )
            })
            .collect()
    }

    fn arb_taxonomy() -> impl Strategy<Value = Taxonomy> {
        let text = "[A-Za-z][A-Za-z0-9 ,\"'é-]{0,12}[A-Za-z]";
        proptest::collection::vec(
            (
                text,
                proptest::option::of(text),
                proptest::collection::vec("[a-z]{1,6}", 0..3),
                any::<prop::sample::Index>(),
            ),
            1..25,
        )
        .prop_map(|rows| {
            let nodes = rows
                .into_iter()
                .enumerate()
                .map(|(i, (title, desc, syn, parent))| TaxonomyNode {
                    id: NodeId::from(format!("n{i}")),
                    title,
                    description: desc,
                    synonyms: syn,
                    parent: (i > 0).then(|| NodeId::from(format!("n{}", parent.index(i)))),
                })
                .collect();
            Taxonomy::from_nodes("prop", nodes).unwrap()
        })
    }

    proptest! {
        #[test]
        fn csv_and_json_round_trip(t in arb_taxonomy()) {
            let csv_back = parse_taxonomy(&to_csv(&t), "x", LoadOptions::default()).unwrap();
            prop_assert_eq!(node_set(&t), node_set(&csv_back));
            let json_back = parse_taxonomy(&to_json(&t), "x", LoadOptions::default()).unwrap();
            prop_assert_eq!(node_set(&t), node_set(&json_back));
        }

        #[test]
        fn stats_ignore_row_order(t in arb_taxonomy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rows = t.nodes().to_vec();
            rows.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = Taxonomy::from_nodes("p", rows).unwrap();
            prop_assert_eq!(t.stats(), shuffled.stats());
        }

        #[test]
        fn parent_walk_terminates_at_root(t in arb_taxonomy()) {
            let roots = t.nodes().iter().filter(|n| n.parent.is_none()).count();
            prop_assert_eq!(roots, 1);
            for n in t.nodes() {
                let anc = t.ancestors(n.id.as_str()).unwrap();
                prop_assert!(anc.len() < t.len());
                if let Some(first) = anc.first() {
                    prop_assert_eq!(first, &t.root().id);
                }
            }
        }

        #[test]
        fn rich_text_contains_title(t in arb_taxonomy()) {
            for n in t.nodes() {
                let title = t.class_text(n.id.as_str(), super::super::RenderMode::Title).unwrap();
                let rich = t.class_text(n.id.as_str(), super::super::RenderMode::Rich).unwrap();
                prop_assert!(rich.contains(&title));
            }
        }
    }
}
