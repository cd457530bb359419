//! Instruction texts for the three prompting strategies, plus the fixed user
//! turns the driver sends.

use super::StrategyKind;

pub const ALL_AT_ONCE: &str = "You are an expert in the telecommunication domain. Your task is to build a taxonomy specific to the telecommunication charging management domain. Each node in the taxonomy should represent an entity from the domain. Start by asking the user the level of granularity needed. Then build the taxonomy with the required level of granularity. Make sure to give a unique numerical ID for each node";

pub const BOTTOM_UP: &str = "You are an expert in the telecommunication domain. Your task is to build a taxonomy specific to the telecommunication charging management domain. Each node in the taxonomy should represent an entity from the domain. You need to use a bottom-up approach. First, provide a list of the bottom-level nodes, then ask the user if they want to abstract from these nodes further until they say stop or you reach the root node of the taxonomy. Make sure to give a unique numerical ID for each node";

pub const LEVEL_BRANCH: &str = "You are an expert in the telecommunication domain. Your task is to build a taxonomy specific to the telecommunication charging management domain. Each node in the taxonomy should represent an entity from the domain. Start by identifying the top-level nodes, then ask the user if they want to break down a specific node and the required depth level (e.g., 2,3,4, etc.), while considering the top level as depth level 1. Make sure to give a unique numerical ID for each node";

pub const KICKOFF: &str = "Let's start.";
pub const MORE_NODES: &str = "Are there more nodes?";
pub const ABSTRACT: &str = "Yes, abstract from these nodes further.";
pub const DEFAULT_GRANULARITY: &str = "Three levels of granularity.";

pub fn instructions(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::AllAtOnce => ALL_AT_ONCE,
        StrategyKind::BottomUp => BOTTOM_UP,
        StrategyKind::LevelBranch => LEVEL_BRANCH,
    }
}

pub fn breakdown(raw_id: &str, title: &str, depth: usize) -> String {
    format!("Yes, break down node {raw_id} ({title}) to depth level {depth}.")
}

/// Document excerpts prepended to the first user turn. Whole documents are
/// dropped oldest-first until the rest fits `budget` whitespace-separated
/// tokens; a lone document that still does not fit is cut to its last
/// `budget` tokens.
pub fn corpus_context(docs: &[String], budget: usize) -> Option<String> {
    if docs.is_empty() || budget == 0 {
        return None;
    }
    let sizes: Vec<usize> = docs.iter().map(|d| d.split_whitespace().count()).collect();
    let mut start = 0;
    let mut total: usize = sizes.iter().sum();
    while total > budget && start + 1 < docs.len() {
        total -= sizes[start];
        start += 1;
    }
    let mut kept: Vec<String> = docs[start..]
        .iter()
        .map(|d| d.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect();
    if total > budget {
        let words: Vec<&str> = docs[start].split_whitespace().collect();
        kept[0] = words[words.len() - budget..].join(" ");
    }
    let mut out = String::from("Use the following domain documents as context.\n");
    for (i, doc) in kept.iter().enumerate() {
        out.push_str(&format!("\n[Document {}]\n{doc}\n", start + i + 1));
    }
    Some(out)
}
