//! Hierarchical domain taxonomies.
//!
//! A [`Taxonomy`] is an immutable, single-rooted tree of [`TaxonomyNode`]s.
//! Nodes keep their insertion order so iteration, serialization and every
//! derived artifact are deterministic.

mod io;
mod validate;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{
    parse_taxonomy, parse_taxonomy_csv, parse_taxonomy_json, read_taxonomy, to_csv, to_json,
    write_taxonomy, LoadOptions,
};
pub use validate::{validate_nodes, Severity, Violation};

/// Opaque node identifier, unique within one taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(value: impl Into<String>) -> Self {
        NodeId(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: NodeId,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<NodeId>,
}

impl TaxonomyNode {
    pub fn new(id: impl Into<NodeId>, title: impl Into<String>, parent: Option<&str>) -> Self {
        TaxonomyNode {
            id: id.into(),
            title: title.into(),
            description: None,
            synonyms: Vec::new(),
            parent: parent.map(NodeId::from),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    pub fn with_synonyms<I, S>(mut self, synonyms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.synonyms = synonyms.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: u64, message: String },
    #[error("duplicate node id `{0}`")]
    DuplicateId(NodeId),
    #[error("node `{0}` has more than one parent")]
    MultipleParents(NodeId),
    #[error("node `{node}` refers to unknown parent `{parent}`")]
    MissingParent { node: NodeId, parent: NodeId },
    #[error("taxonomy has {} root nodes: {}", .0.len(), join_ids(.0))]
    MultipleRoots(Vec<NodeId>),
    #[error("taxonomy has no root node")]
    NoRoot,
    #[error("cycle detected through nodes: {}", join_ids(.0))]
    CycleDetected(Vec<NodeId>),
    #[error("node `{0}` has an empty title")]
    EmptyTitle(NodeId),
    #[error("empty node id at line {0}")]
    EmptyId(u64),
    #[error("taxonomy has no nodes")]
    Empty,
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter()
        .map(NodeId::as_str)
        .collect::<Vec<_>>()
        .join(", ")
}

/// How a class is rendered into the text handed to the embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Title,
    #[default]
    Rich,
    Path,
}

impl RenderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RenderMode::Title => "title",
            RenderMode::Rich => "rich",
            RenderMode::Path => "path",
        }
    }
}

impl std::str::FromStr for RenderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "title" => Ok(RenderMode::Title),
            "rich" => Ok(RenderMode::Rich),
            "path" => Ok(RenderMode::Path),
            other => Err(format!("unknown rendering mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyStats {
    /// Total node count, root included.
    pub nodes: usize,
    /// Nodes without children.
    pub leaves: usize,
    /// Internal nodes other than the root.
    pub categories: usize,
    /// Deepest level, root at level 1.
    pub depth: usize,
}

impl fmt::Display for TaxonomyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={}, l={}, c={}, d={}",
            self.nodes, self.leaves, self.categories, self.depth
        )
    }
}

/// A validated, immutable taxonomy.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    name: String,
    provenance: BTreeMap<String, String>,
    nodes: Vec<TaxonomyNode>,
    index: HashMap<NodeId, usize>,
    children: Vec<Vec<usize>>,
    levels: Vec<usize>,
    root: usize,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.provenance == other.provenance && self.nodes == other.nodes
    }
}

impl Taxonomy {
    /// Builds a taxonomy from flat node rows, rejecting anything that is not
    /// a single rooted tree.
    pub fn from_nodes(
        name: impl Into<String>,
        nodes: Vec<TaxonomyNode>,
    ) -> Result<Taxonomy, TaxonomyError> {
        if nodes.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        if let Some(err) = validate::first_structural_error(&nodes) {
            return Err(err);
        }

        let index: HashMap<NodeId, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let mut children = vec![Vec::new(); nodes.len()];
        let mut root = 0;
        for (i, node) in nodes.iter().enumerate() {
            match &node.parent {
                Some(p) => children[index[p]].push(i),
                None => root = i,
            }
        }

        let mut levels = vec![0; nodes.len()];
        let mut stack = vec![(root, 1)];
        while let Some((i, level)) = stack.pop() {
            levels[i] = level;
            stack.extend(children[i].iter().map(|&c| (c, level + 1)));
        }

        Ok(Taxonomy {
            name: name.into(),
            provenance: BTreeMap::new(),
            nodes,
            index,
            children,
            levels,
            root,
        })
    }

    pub fn with_provenance(mut self, provenance: BTreeMap<String, String>) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn set_provenance(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.provenance.insert(key.into(), value.into());
    }

    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &TaxonomyNode {
        &self.nodes[self.root]
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Result<&TaxonomyNode, TaxonomyError> {
        self.index
            .get(id)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| TaxonomyError::UnknownNode(NodeId::from(id)))
    }

    pub(crate) fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn children(&self, id: &str) -> Result<Vec<&TaxonomyNode>, TaxonomyError> {
        let i = self.require(id)?;
        Ok(self.children[i].iter().map(|&c| &self.nodes[c]).collect())
    }

    pub fn is_leaf(&self, id: &str) -> Result<bool, TaxonomyError> {
        Ok(self.children[self.require(id)?].is_empty())
    }

    /// Level of a node, root at level 1.
    pub fn level(&self, id: &str) -> Result<usize, TaxonomyError> {
        Ok(self.levels[self.require(id)?])
    }

    fn require(&self, id: &str) -> Result<usize, TaxonomyError> {
        self.position(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(NodeId::from(id)))
    }

    /// Ancestors of `id`, root first, `id` itself excluded.
    pub fn ancestors(&self, id: &str) -> Result<Vec<NodeId>, TaxonomyError> {
        let mut i = self.require(id)?;
        let mut chain = Vec::new();
        while let Some(parent) = &self.nodes[i].parent {
            chain.push(parent.clone());
            i = self.index[parent];
        }
        chain.reverse();
        Ok(chain)
    }

    /// Node ids in pre-order (children in insertion order).
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            out.push(self.nodes[i].id.clone());
            stack.extend(self.children[i].iter().rev());
        }
        out
    }

    pub fn stats(&self) -> TaxonomyStats {
        compute_stats(self)
    }

    /// Text used to embed one class.
    pub fn class_text(&self, id: &str, mode: RenderMode) -> Result<String, TaxonomyError> {
        let node = self.node(id)?;
        let mut parts: Vec<&str> = Vec::new();
        let path;
        match mode {
            RenderMode::Title => return Ok(node.title.trim().to_string()),
            RenderMode::Rich => parts.push(node.title.trim()),
            RenderMode::Path => {
                let mut titles = Vec::new();
                for anc in self.ancestors(id)? {
                    titles.push(self.node(anc.as_str())?.title.trim());
                }
                titles.push(node.title.trim());
                path = titles.join(" / ");
                parts.push(&path);
            }
        }
        if let Some(d) = node.description.as_deref().map(str::trim) {
            if !d.is_empty() {
                parts.push(d);
            }
        }
        parts.extend(
            node.synonyms
                .iter()
                .map(|s| s.trim())
                .filter(|s| !s.is_empty()),
        );
        Ok(parts.join(" "))
    }

    /// Stable digest over the node set, used in configuration fingerprints.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for n in &self.nodes {
            hasher.update(n.id.as_str());
            hasher.update([0]);
            hasher.update(&n.title);
            hasher.update([0]);
            hasher.update(n.description.as_deref().unwrap_or(""));
            hasher.update([0]);
            hasher.update(n.synonyms.join(";"));
            hasher.update([0]);
            hasher.update(n.parent.as_ref().map(NodeId::as_str).unwrap_or(""));
            hasher.update([1]);
        }
        hex::encode(&hasher.finalize()[..8])
    }

    /// Runs every validation rule, including warnings, against this taxonomy.
    pub fn validate(&self) -> Vec<Violation> {
        validate_nodes(&self.nodes)
    }

    pub(crate) fn child_positions(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub(crate) fn root_position(&self) -> usize {
        self.root
    }
}

pub fn compute_stats(t: &Taxonomy) -> TaxonomyStats {
    let leaves = t.children.iter().filter(|c| c.is_empty()).count();
    let internal = t.nodes.len() - leaves;
    let categories = if t.children[t.root].is_empty() {
        internal
    } else {
        internal - 1
    };
    TaxonomyStats {
        nodes: t.nodes.len(),
        leaves,
        categories,
        depth: t.levels.iter().copied().max().unwrap_or(1),
    }
}
