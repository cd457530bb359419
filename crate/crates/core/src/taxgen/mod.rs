//! Taxonomy generation by conversation with a chat-completion model.
//!
//! A [`StrategySpec`] scripts the user side of the conversation; the
//! assistant side comes from a [`ChatClient`] (live or replayed). Outline
//! lines in the replies are parsed, assembled into a tree and, optionally,
//! deduplicated.

mod assemble;
mod client;
mod parse;
pub mod prompts;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use assemble::{assemble_taxonomy, dedupe_nodes, DedupPolicy, DedupReport, Removal};
pub use client::{ChatClient, HttpChatClient, ReplayClient, ScriptedClient};
pub use parse::{parse_node_lines, RawNodeLine};

use crate::embedding::normalize_text;
use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, thiserror::Error)]
pub enum TaxgenError {
    #[error("chat client: {0}")]
    Client(String),
    #[error("replay diverged at turn {turn}: expected {expected:?}, got {actual:?}")]
    ReplayMismatch {
        turn: usize,
        expected: String,
        actual: String,
    },
    #[error("no completion signal after {0} rounds")]
    MaxRoundsExceeded(usize),
    #[error("round {round}: no outline lines recognized in the reply")]
    UnparseableOutput { round: usize },
    #[error("no node lines to assemble")]
    EmptyNodeList,
    #[error("invalid strategy: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub content: String,
}

impl ChatTurn {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatTurn {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    AllAtOnce,
    BottomUp,
    LevelBranch,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::AllAtOnce => "all_at_once",
            StrategyKind::BottomUp => "bottom_up",
            StrategyKind::LevelBranch => "level_branch",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_at_once" => Ok(StrategyKind::AllAtOnce),
            "bottom_up" => Ok(StrategyKind::BottomUp),
            "level_branch" => Ok(StrategyKind::LevelBranch),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// The user side of a generation conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Sent as the system turn.
    pub instructions: String,
    /// Document texts, oldest first, offered as context in the first user turn.
    #[serde(default)]
    pub corpus: Vec<String>,
    /// Whitespace-token budget for the corpus excerpt.
    pub token_budget: usize,
    /// Cap on probe rounds (bottom-up leaves) and abstraction rounds.
    pub max_rounds: usize,
    /// Reply to the model's granularity question (all-at-once).
    pub granularity_answer: String,
    /// Requested depth for each branch breakdown (level-branch).
    pub breakdown_depth: usize,
    /// Raw ids of top-level nodes to break down; empty means all of them.
    #[serde(default)]
    pub breakdown_nodes: Vec<String>,
}

impl StrategySpec {
    /// Spec using the stock instruction text for `kind`.
    pub fn paper_faithful(kind: StrategyKind) -> Self {
        StrategySpec {
            kind,
            instructions: prompts::instructions(kind).to_string(),
            corpus: Vec::new(),
            token_budget: 6000,
            max_rounds: 20,
            granularity_answer: prompts::DEFAULT_GRANULARITY.to_string(),
            breakdown_depth: 3,
            breakdown_nodes: Vec::new(),
        }
    }

    pub fn is_paper_faithful(&self) -> bool {
        self.instructions == prompts::instructions(self.kind)
    }

    pub fn validate(&self) -> Result<(), TaxgenError> {
        if self.instructions.trim().is_empty() {
            return Err(TaxgenError::InvalidSpec("instructions are empty".into()));
        }
        if self.max_rounds == 0 {
            return Err(TaxgenError::InvalidSpec(
                "max_rounds must be positive".into(),
            ));
        }
        if self.kind == StrategyKind::LevelBranch && self.breakdown_depth < 2 {
            return Err(TaxgenError::InvalidSpec(
                "breakdown depth must be at least 2".into(),
            ));
        }
        if self.kind == StrategyKind::AllAtOnce && self.granularity_answer.trim().is_empty() {
            return Err(TaxgenError::InvalidSpec(
                "granularity answer is empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub transcript: Vec<ChatTurn>,
    pub lines: Vec<RawNodeLine>,
    /// Number of assistant replies.
    pub rounds: usize,
}

struct Conversation<'a> {
    client: &'a dyn ChatClient,
    turns: Vec<ChatTurn>,
    rounds: usize,
}

impl Conversation<'_> {
    fn ask(&mut self, user: impl Into<String>) -> Result<String, TaxgenError> {
        self.turns.push(ChatTurn::new(ChatRole::User, user));
        let reply = self.client.complete(&self.turns)?;
        self.rounds += 1;
        log::debug!("round {}: {} chars", self.rounds, reply.len());
        self.turns
            .push(ChatTurn::new(ChatRole::Assistant, reply.clone()));
        Ok(reply)
    }

    /// Asks and requires at least one outline line in the reply.
    fn ask_nodes(&mut self, user: impl Into<String>) -> Result<Vec<RawNodeLine>, TaxgenError> {
        let lines = parse_node_lines(&self.ask(user)?);
        if lines.is_empty() {
            return Err(TaxgenError::UnparseableOutput { round: self.rounds });
        }
        Ok(lines)
    }
}

/// Drives one scripted conversation and collects every outline line.
///
/// - all-at-once: kickoff (the model asks for granularity), then the
///   granularity answer, whose reply is the taxonomy.
/// - bottom-up: kickoff yields leaves; "are there more nodes?" repeats until
///   two consecutive replies add no unseen node, then abstraction requests
///   repeat until at most one top-level node remains or a reply adds nothing.
/// - level-branch: kickoff yields top-level nodes; each is then broken down
///   to the requested depth. Top lines of a breakdown hang under the node
///   that was asked about.
///
/// Only the reply that carries the primary outline (the generation round,
/// the first leaf list, the top-level list) must contain outline lines.
pub fn run_strategy(
    spec: &StrategySpec,
    client: &dyn ChatClient,
) -> Result<StrategyRun, TaxgenError> {
    spec.validate()?;
    let mut conv = Conversation {
        client,
        turns: vec![ChatTurn::new(ChatRole::System, spec.instructions.clone())],
        rounds: 0,
    };
    let kickoff = match prompts::corpus_context(&spec.corpus, spec.token_budget) {
        Some(ctx) => format!("{ctx}\n{}", prompts::KICKOFF),
        None => prompts::KICKOFF.to_string(),
    };

    let mut lines = Vec::new();
    match spec.kind {
        StrategyKind::AllAtOnce => {
            conv.ask(kickoff)?;
            lines = conv.ask_nodes(spec.granularity_answer.clone())?;
        }
        StrategyKind::BottomUp => {
            let mut seen = HashSet::new();
            let mut add = |batch: Vec<RawNodeLine>, lines: &mut Vec<RawNodeLine>| {
                let fresh = batch
                    .iter()
                    .filter(|l| seen.insert(l.raw_id.clone()))
                    .count();
                lines.extend(batch);
                fresh
            };
            add(conv.ask_nodes(kickoff)?, &mut lines);
            let mut quiet = 0;
            let mut probes = 0;
            while quiet < 2 {
                if probes == spec.max_rounds {
                    return Err(TaxgenError::MaxRoundsExceeded(probes));
                }
                probes += 1;
                let batch = parse_node_lines(&conv.ask(prompts::MORE_NODES)?);
                quiet = if add(batch, &mut lines) == 0 {
                    quiet + 1
                } else {
                    0
                };
            }
            for _ in 0..spec.max_rounds {
                if top_level_count(&lines) <= 1 {
                    break;
                }
                let batch = parse_node_lines(&conv.ask(prompts::ABSTRACT)?);
                if add(batch, &mut lines) == 0 {
                    break;
                }
            }
        }
        StrategyKind::LevelBranch => {
            let top = conv.ask_nodes(kickoff)?;
            let min_depth = top.iter().map(|l| l.depth).min().unwrap_or(1);
            let targets: Vec<(String, String)> = top
                .iter()
                .filter(|l| l.depth == min_depth)
                .filter(|l| {
                    spec.breakdown_nodes.is_empty() || spec.breakdown_nodes.contains(&l.raw_id)
                })
                .map(|l| (l.raw_id.clone(), l.title.clone()))
                .collect();
            lines.extend(top);
            for (raw_id, title) in targets {
                // A reply without outline lines means the node has nothing
                // below it.
                let mut batch = parse_node_lines(&conv.ask(prompts::breakdown(
                    &raw_id,
                    &title,
                    spec.breakdown_depth,
                ))?);
                for l in batch.iter_mut().filter(|l| l.parent_hint.is_none()) {
                    let re_mention =
                        l.raw_id == raw_id && normalize_text(&l.title) == normalize_text(&title);
                    if !re_mention {
                        l.parent_hint = Some(raw_id.clone());
                    }
                }
                lines.extend(batch);
            }
        }
    }
    Ok(StrategyRun {
        transcript: conv.turns,
        lines,
        rounds: conv.rounds,
    })
}

/// Raw ids seen so far that never received a parent.
fn top_level_count(lines: &[RawNodeLine]) -> usize {
    let with_parent: HashSet<&str> = lines
        .iter()
        .filter(|l| l.parent_hint.is_some())
        .map(|l| l.raw_id.as_str())
        .collect();
    lines
        .iter()
        .map(|l| l.raw_id.as_str())
        .filter(|id| !with_parent.contains(id))
        .collect::<HashSet<_>>()
        .len()
}

/// Runs a strategy and assembles the result, recording provenance.
pub fn generate_taxonomy(
    spec: &StrategySpec,
    client: &dyn ChatClient,
    name: &str,
    data_source: &str,
) -> Result<(Taxonomy, StrategyRun), TaxgenError> {
    let run = run_strategy(spec, client)?;
    let provenance = BTreeMap::from([
        ("strategy".to_string(), spec.kind.as_str().to_string()),
        ("data_source".to_string(), data_source.to_string()),
        ("model".to_string(), client.model_id()),
    ]);
    let t = assemble_taxonomy(&run.lines, name)?.with_provenance(provenance);
    Ok((t, run))
}

pub fn transcript_to_json(turns: &[ChatTurn]) -> String {
    let mut s = serde_json::to_string_pretty(turns).expect("turns serialize");
    s.push('\n');
    s
}
