//! Seeded generators for test fixtures and benchmarks: taxonomies of a given
//! shape, taxonomies with planted duplicates, artifact corpora with planted
//! links, and scripted taxonomy-generation conversations.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ArtifactKind, ArtifactRecord};
use crate::taxgen::{StrategyKind, StrategySpec};
use crate::taxonomy::{Taxonomy, TaxonomyNode};

const WORDS: &[&str] = &[
    "account",
    "balance",
    "billing",
    "bundle",
    "call",
    "cdr",
    "charging",
    "credit",
    "data",
    "debit",
    "discount",
    "event",
    "gateway",
    "invoice",
    "mediation",
    "message",
    "network",
    "offline",
    "online",
    "package",
    "payment",
    "policy",
    "prepaid",
    "postpaid",
    "price",
    "quota",
    "rating",
    "recharge",
    "reservation",
    "roaming",
    "session",
    "settlement",
    "subscriber",
    "subscription",
    "tariff",
    "tax",
    "threshold",
    "top-up",
    "usage",
    "voucher",
    "wallet",
    "voice",
    "sms",
    "mms",
    "video",
    "streaming",
    "allowance",
    "counter",
    "notification",
    "fraud",
    "refund",
    "adjustment",
    "collection",
    "dunning",
    "contract",
    "customer",
    "product",
    "offer",
    "catalog",
    "promotion",
    "loyalty",
    "partner",
    "interconnect",
    "wholesale",
    "retail",
    "currency",
    "exchange",
    "unit",
    "volume",
    "duration",
];

const FILLER: &[&str] = &[
    "the", "system", "shall", "support", "handle", "when", "a", "an", "is", "for", "with", "each",
    "verify", "that", "process", "report", "provide", "ensure", "between", "of", "to", "in",
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Titles {
    used: HashSet<String>,
}

impl Titles {
    fn new() -> Self {
        Titles {
            used: HashSet::new(),
        }
    }

    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        for words in 2.. {
            for _ in 0..50 {
                let title = (0..words)
                    .map(|_| *WORDS.choose(rng).expect("non-empty vocabulary"))
                    .collect::<Vec<_>>()
                    .join(" ");
                if self.used.insert(title.clone()) {
                    return title;
                }
            }
        }
        unreachable!()
    }
}

/// A taxonomy with a root plus exactly `categories` internal nodes and
/// `leaves` leaves, `depth` levels deep (root is level 1). Titles are unique.
pub fn shaped_taxonomy(
    leaves: usize,
    categories: usize,
    depth: usize,
    seed: u64,
) -> Result<Taxonomy, String> {
    let mut rng = rng(seed);
    let infeasible = || {
        Err(format!(
            "no tree with l={leaves}, c={categories}, d={depth}"
        ))
    };
    match depth {
        0 => return infeasible(),
        1 if leaves > 0 || categories > 0 => return infeasible(),
        2 if categories > 0 || leaves == 0 => return infeasible(),
        d if d >= 3 && (categories < d - 2 || leaves == 0) => return infeasible(),
        _ => {}
    }

    // Category levels: a chain guarantees every level 2..depth-1 exists.
    let mut cat_level = Vec::with_capacity(categories);
    let mut cat_parent: Vec<Option<usize>> = Vec::with_capacity(categories);
    for i in 0..categories {
        if i + 2 < depth {
            cat_level.push(i + 2);
            cat_parent.push(i.checked_sub(1));
        } else {
            let level = rng.gen_range(2..depth);
            let candidates: Vec<usize> = (0..i).filter(|&j| cat_level[j] + 1 == level).collect();
            cat_level.push(level);
            cat_parent.push(if level == 2 {
                None
            } else {
                Some(*candidates.choose(&mut rng).expect("chain"))
            });
        }
    }
    let mut has_child = vec![false; categories];
    for p in cat_parent.iter().flatten() {
        has_child[*p] = true;
    }
    let childless: Vec<usize> = (0..categories).filter(|&i| !has_child[i]).collect();
    if childless.len() > leaves {
        return infeasible();
    }
    let mut leaf_parent: Vec<Option<usize>> = childless.iter().map(|&c| Some(c)).collect();
    if depth == 2 {
        leaf_parent.clear();
    }
    while leaf_parent.len() < leaves {
        let pick = rng.gen_range(0..=categories);
        leaf_parent.push(pick.checked_sub(1));
    }
    leaf_parent.shuffle(&mut rng);

    let mut titles = Titles::new();
    let mut nodes = vec![TaxonomyNode::new("root", "charging management", None)];
    titles.used.insert("charging management".into());
    let cat_id = |i: usize| format!("c{:04}", i + 1);
    for (i, p) in cat_parent.iter().enumerate() {
        let parent = p.map(cat_id).unwrap_or_else(|| "root".into());
        nodes.push(TaxonomyNode::new(
            cat_id(i),
            titles.fresh(&mut rng),
            Some(parent.as_str()),
        ));
    }
    for (i, p) in leaf_parent.iter().enumerate() {
        let parent = p.map(cat_id).unwrap_or_else(|| "root".into());
        nodes.push(TaxonomyNode::new(
            format!("l{:04}", i + 1),
            titles.fresh(&mut rng),
            Some(parent.as_str()),
        ));
    }
    Taxonomy::from_nodes("synthetic", nodes).map_err(|e| e.to_string())
}

/// `base` plus `count` extra leaves whose titles repeat existing titles in
/// other branches, with case and spacing varied. Global-title dedup removes
/// exactly `count` nodes (an injected copy may come first in pre-order and
/// survive in place of the original).
pub fn inject_duplicates(base: &Taxonomy, count: usize, seed: u64) -> Taxonomy {
    let mut rng = rng(seed);
    let mut nodes = base.nodes().to_vec();
    let root = base.root().id.clone();
    let originals: Vec<&TaxonomyNode> = base.nodes().iter().filter(|n| n.id != root).collect();
    let parents: Vec<&TaxonomyNode> = base
        .nodes()
        .iter()
        .filter(|n| !base.is_leaf(n.id.as_str()).unwrap_or(true))
        .collect();
    for i in 0..count {
        let original = originals.choose(&mut rng).expect("non-empty taxonomy");
        let parent = parents
            .iter()
            .filter(|p| Some(&p.id) != original.parent.as_ref() && p.id != original.id)
            .collect::<Vec<_>>()
            .choose(&mut rng)
            .map(|p| p.id.clone())
            .unwrap_or_else(|| root.clone());
        let title = match i % 3 {
            0 => original.title.clone(),
            1 => original.title.to_uppercase(),
            _ => format!("  {}  ", original.title.replace(' ', "   ")),
        };
        nodes.push(TaxonomyNode::new(
            format!("dup{:04}", i + 1),
            title,
            Some(parent.as_str()),
        ));
    }
    Taxonomy::from_nodes(base.name(), nodes)
        .expect("leaves under existing parents keep the tree valid")
}

/// The 859-node generated-taxonomy stand-in: 675 unique nodes and 184 planted
/// duplicates.
pub fn dedup_fixture(seed: u64) -> Taxonomy {
    let base = shaped_taxonomy(456, 218, 4, seed).expect("feasible shape");
    inject_duplicates(&base, 184, seed ^ 0x5eed)
}

/// Artifacts whose bodies mention the titles of a few taxonomy nodes, mixed
/// with filler words.
pub fn synthetic_corpus(
    t: &Taxonomy,
    count: usize,
    kind: ArtifactKind,
    prefix: &str,
    seed: u64,
) -> Vec<ArtifactRecord> {
    let mut rng = rng(seed);
    let root = t.root().id.clone();
    let concepts: Vec<&TaxonomyNode> = t.nodes().iter().filter(|n| n.id != root).collect();
    (0..count)
        .map(|i| {
            let mut words: Vec<String> = Vec::new();
            for _ in 0..rng.gen_range(2..=4) {
                let c = concepts.choose(&mut rng).expect("taxonomy has concepts");
                words.extend(c.title.split_whitespace().map(str::to_string));
                words.push((*FILLER.choose(&mut rng).expect("filler")).to_string());
            }
            for _ in 0..rng.gen_range(3..8) {
                words.push((*FILLER.choose(&mut rng).expect("filler")).to_string());
            }
            words.shuffle(&mut rng);
            ArtifactRecord::new(format!("{prefix}{:04}", i + 1), kind, words.join(" "))
        })
        .collect()
}

/// Source and target corpora where each planted pair shares most of its
/// concepts, plus the planted pairs as ground truth.
pub fn planted_corpora(
    t: &Taxonomy,
    sources: usize,
    targets: usize,
    seed: u64,
) -> (
    Vec<ArtifactRecord>,
    Vec<ArtifactRecord>,
    BTreeSet<(String, String)>,
) {
    let mut rng = rng(seed);
    let src = synthetic_corpus(t, sources, ArtifactKind::Requirement, "REQ", seed);
    let mut tgt = synthetic_corpus(
        t,
        targets,
        ArtifactKind::TestCase,
        "TC",
        seed.wrapping_add(1),
    );
    let mut truth = BTreeSet::new();
    for target in tgt.iter_mut() {
        let source = src.choose(&mut rng).expect("sources");
        let mut words: Vec<&str> = source.body.split_whitespace().collect();
        words.push("verify");
        words.shuffle(&mut rng);
        target.body = words.join(" ");
        truth.insert((source.id.clone(), target.id.clone()));
    }
    (src, tgt, truth)
}

/// A scripted conversation: the strategy settings plus the assistant replies
/// in order. Recording it with a scripted client yields a replayable
/// transcript.
#[derive(Debug, Clone)]
pub struct ScriptedConversation {
    pub spec: StrategySpec,
    pub replies: Vec<String>,
}

/// A conversation whose assembled taxonomy has the same shape as `source`.
pub fn scripted_conversation(source: &Taxonomy, kind: StrategyKind) -> ScriptedConversation {
    let spec = StrategySpec::paper_faithful(kind);
    let root = source.root().id.as_str();
    let replies = match kind {
        StrategyKind::AllAtOnce => {
            let mut out =
                String::from("Here is the taxonomy with three levels of granularity:\n\n");
            dotted_outline(source, root, "", &mut out);
            out.push_str("\nLet me know if you want any branch expanded.");
            vec![
                "What level of granularity do you need for the taxonomy?".to_string(),
                out,
            ]
        }
        StrategyKind::BottomUp => bottom_up_replies(source),
        StrategyKind::LevelBranch => level_branch_replies(source),
    };
    ScriptedConversation { spec, replies }
}

fn dotted_outline(t: &Taxonomy, id: &str, prefix: &str, out: &mut String) {
    for (i, child) in t.children(id).expect("known id").into_iter().enumerate() {
        let number = if prefix.is_empty() {
            format!("{}", i + 1)
        } else {
            format!("{prefix}.{}", i + 1)
        };
        let indent = "  ".repeat(number.matches('.').count());
        let dot = if prefix.is_empty() { "." } else { "" };
        out.push_str(&format!("{indent}{number}{dot} {}\n", child.title));
        dotted_outline(t, child.id.as_str(), &number, out);
    }
}

/// Numeric ids: leaves first in pre-order, then categories.
fn numeric_ids(t: &Taxonomy) -> std::collections::HashMap<String, usize> {
    let order = t.preorder();
    let root = t.root().id.clone();
    let (leaves, cats): (Vec<_>, Vec<_>) = order
        .into_iter()
        .filter(|id| *id != root)
        .partition(|id| t.is_leaf(id.as_str()).unwrap_or(true));
    leaves
        .into_iter()
        .chain(cats)
        .enumerate()
        .map(|(i, id)| (id.as_str().to_string(), i + 1))
        .collect()
}

fn bottom_up_replies(t: &Taxonomy) -> Vec<String> {
    let ids = numeric_ids(t);
    let root = t.root().id.clone();
    let leaves: Vec<&TaxonomyNode> = t
        .preorder()
        .iter()
        .filter(|id| **id != root && t.is_leaf(id.as_str()).unwrap_or(false))
        .map(|id| t.node(id.as_str()).expect("known"))
        .collect();
    let split = leaves.len() * 2 / 3;
    let list = |nodes: &[&TaxonomyNode]| {
        nodes
            .iter()
            .map(|n| format!("{}. {}\n", ids[n.id.as_str()], n.title))
            .collect::<String>()
    };
    let mut replies = vec![
        format!(
            "Here are the bottom-level nodes:\n\n{}",
            list(&leaves[..split])
        ),
        format!("Yes, a few more:\n\n{}", list(&leaves[split..])),
        "I think the list of bottom-level nodes is complete.".to_string(),
        "No, there are no more bottom-level nodes.".to_string(),
    ];
    let depth = t.stats().depth;
    for level in (2..depth).rev() {
        let mut out = String::from("Abstracting one level up:\n\n");
        for id in t.preorder() {
            if t.level(id.as_str()).expect("known") != level
                || t.is_leaf(id.as_str()).expect("known")
            {
                continue;
            }
            let node = t.node(id.as_str()).expect("known");
            out.push_str(&format!("{}. {}\n", ids[id.as_str()], node.title));
            for child in t.children(id.as_str()).expect("known") {
                out.push_str(&format!("   {}. {}\n", ids[child.id.as_str()], child.title));
            }
        }
        replies.push(out);
    }
    replies.push(
        "These nodes are already at the top level; the next step would be the root.".to_string(),
    );
    replies
}

fn level_branch_replies(t: &Taxonomy) -> Vec<String> {
    let root = t.root().id.clone();
    let ids: std::collections::HashMap<String, usize> = t
        .preorder()
        .into_iter()
        .filter(|id| *id != root)
        .enumerate()
        .map(|(i, id)| (id.as_str().to_string(), i + 1))
        .collect();
    let top = t.children(root.as_str()).expect("root");
    let mut replies =
        vec![format!(
        "Top-level nodes (depth level 1):\n\n{}\nWould you like me to break down a specific node?",
        top.iter().map(|n| format!("{}. {}\n", ids[n.id.as_str()], n.title)).collect::<String>()
    )];
    fn indented(
        t: &Taxonomy,
        id: &str,
        ids: &std::collections::HashMap<String, usize>,
        indent: usize,
        out: &mut String,
    ) {
        for child in t.children(id).expect("known") {
            out.push_str(&format!(
                "{}{} {}\n",
                "    ".repeat(indent),
                ids[child.id.as_str()],
                child.title
            ));
            indented(t, child.id.as_str(), ids, indent + 1, out);
        }
    }
    for node in top {
        if t.is_leaf(node.id.as_str()).expect("known") {
            replies.push(format!(
                "{} is already a bottom-level concept with no sub-nodes.",
                node.title
            ));
            continue;
        }
        let mut out = String::new();
        indented(t, node.id.as_str(), &ids, 0, &mut out);
        replies.push(format!("Breakdown of {}:\n\n{out}", node.title));
    }
    replies
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxgen::{
        assemble_taxonomy, dedupe_nodes, run_strategy, DedupPolicy, ScriptedClient,
    };
    use crate::taxonomy::TaxonomyStats;

    #[test]
    fn shapes_are_exact() {
        for (l, c, d) in [
            (39, 29, 4),
            (48, 27, 4),
            (51, 11, 3),
            (581, 278, 4),
            (5, 0, 2),
            (1, 3, 5),
        ] {
            let t = shaped_taxonomy(l, c, d, 7).unwrap();
            assert_eq!(
                t.stats(),
                TaxonomyStats {
                    nodes: l + c + 1,
                    leaves: l,
                    categories: c,
                    depth: d
                },
                "shape {l}/{c}/{d}"
            );
            assert!(t.validate().is_empty());
        }
        assert!(shaped_taxonomy(1, 5, 4, 1).is_err());
        assert!(shaped_taxonomy(0, 2, 4, 1).is_err());
    }

    #[test]
    fn shaped_is_seed_deterministic() {
        let a = shaped_taxonomy(40, 20, 4, 3).unwrap();
        assert_eq!(a, shaped_taxonomy(40, 20, 4, 3).unwrap());
        assert_ne!(a, shaped_taxonomy(40, 20, 4, 4).unwrap());
    }

    #[test]
    fn dedup_fixture_counts() {
        let t = dedup_fixture(11);
        assert_eq!(t.len(), 859);
        let (out, report) = dedupe_nodes(&t, DedupPolicy::GlobalTitle).unwrap();
        assert_eq!(out.len(), 675);
        assert_eq!(report.len(), 184);
        let titles: HashSet<String> = out
            .nodes()
            .iter()
            .map(|n| crate::embedding::normalize_text(&n.title))
            .collect();
        assert_eq!(titles.len(), 675);
    }

    #[test]
    fn scripted_conversations_rebuild_the_shape() {
        let source = shaped_taxonomy(30, 12, 4, 5).unwrap();
        for kind in [
            StrategyKind::AllAtOnce,
            StrategyKind::BottomUp,
            StrategyKind::LevelBranch,
        ] {
            let conv = scripted_conversation(&source, kind);
            let run = run_strategy(&conv.spec, &ScriptedClient::new(conv.replies)).unwrap();
            let t = assemble_taxonomy(&run.lines, "gen").unwrap();
            assert_eq!(t.stats(), source.stats(), "{kind}");
        }
    }

    #[test]
    fn planted_pairs_share_text() {
        let t = shaped_taxonomy(30, 10, 4, 1).unwrap();
        let (src, tgt, truth) = planted_corpora(&t, 10, 20, 9);
        assert_eq!((src.len(), tgt.len(), truth.len()), (10, 20, 20));
        assert!(crate::corpus::check_corpus(&src).is_ok());
    }
}
