//! Turning parsed outline lines into a valid taxonomy, and removing
//! duplicate nodes afterwards.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{RawNodeLine, TaxgenError};
use crate::embedding::normalize_text;
use crate::taxonomy::{NodeId, Taxonomy, TaxonomyNode};

/// Builds a tree from outline lines.
///
/// A line whose raw id and normalized title match an earlier line is a
/// re-mention: it creates no node, but its parent hint (if any) moves the
/// existing node. Parent hints resolve to the latest node carrying that raw
/// id. Anything without a resolvable parent, or whose move would close a
/// cycle, hangs under a synthesized root titled `name`. Raw ids that clash
/// get `_1`, `_2`, ... suffixes.
pub fn assemble_taxonomy(lines: &[RawNodeLine], name: &str) -> Result<Taxonomy, TaxgenError> {
    if lines.is_empty() {
        return Err(TaxgenError::EmptyNodeList);
    }
    let root_id = {
        let taken: BTreeSet<&str> = lines.iter().map(|l| l.raw_id.as_str()).collect();
        let mut id = "root".to_string();
        let mut i = 0;
        while taken.contains(id.as_str()) {
            i += 1;
            id = format!("root_{i}");
        }
        id
    };
    let root_title = if name.trim().is_empty() {
        "taxonomy"
    } else {
        name.trim()
    };

    let mut nodes: Vec<TaxonomyNode> = vec![TaxonomyNode::new(root_id.as_str(), root_title, None)];
    let mut taken: BTreeSet<String> = BTreeSet::from([root_id.clone()]);
    // raw id -> position of the latest node created for it
    let mut latest: HashMap<&str, usize> = HashMap::new();
    for line in lines {
        let title = line.title.trim();
        if title.is_empty() {
            continue;
        }
        let parent = line
            .parent_hint
            .as_deref()
            .and_then(|h| latest.get(h).copied());
        if let Some(&existing) = latest.get(line.raw_id.as_str()) {
            if normalize_text(&nodes[existing].title) == normalize_text(title) {
                if let Some(p) = parent {
                    if !would_cycle(&nodes, existing, p) {
                        nodes[existing].parent = Some(nodes[p].id.clone());
                    }
                }
                continue;
            }
        }
        let mut id = line.raw_id.clone();
        let mut i = 0;
        while taken.contains(&id) {
            i += 1;
            id = format!("{}_{i}", line.raw_id);
        }
        taken.insert(id.clone());
        let parent_id = parent
            .map(|p| nodes[p].id.clone())
            .unwrap_or_else(|| NodeId::from(root_id.as_str()));
        let mut node = TaxonomyNode::new(id, title, Some(parent_id.as_str()));
        node.description = line.description.clone();
        latest.insert(line.raw_id.as_str(), nodes.len());
        nodes.push(node);
    }
    Ok(Taxonomy::from_nodes(root_title, nodes)?)
}

/// True when making `new_parent` the parent of `node` closes a loop.
fn would_cycle(nodes: &[TaxonomyNode], node: usize, new_parent: usize) -> bool {
    let index: HashMap<&NodeId, usize> =
        nodes.iter().enumerate().map(|(i, n)| (&n.id, i)).collect();
    let mut cur = Some(new_parent);
    while let Some(i) = cur {
        if i == node {
            return true;
        }
        cur = nodes[i].parent.as_ref().map(|p| index[p]);
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    /// Merge siblings with the same normalized title.
    WithinBranch,
    /// Also merge identical titles anywhere into their first pre-order
    /// occurrence.
    GlobalTitle,
}

impl std::str::FromStr for DedupPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "within_branch" => Ok(DedupPolicy::WithinBranch),
            "global_title" => Ok(DedupPolicy::GlobalTitle),
            other => Err(format!("unknown dedup policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub removed: NodeId,
    pub survivor: NodeId,
    pub title: String,
    pub policy: DedupPolicy,
    /// Children re-attached to the survivor.
    pub moved_children: Vec<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub removals: Vec<Removal>,
}

impl DedupReport {
    pub fn is_empty(&self) -> bool {
        self.removals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.removals.len()
    }
}

/// Removes duplicate nodes, re-attaching their children to the surviving
/// node. Survivors are the first occurrence in pre-order. Applying the same
/// policy to the output changes nothing.
pub fn dedupe_nodes(
    t: &Taxonomy,
    policy: DedupPolicy,
) -> Result<(Taxonomy, DedupReport), TaxgenError> {
    let mut work = Work::new(t);
    let mut report = DedupReport::default();
    while let Some((dup, survivor)) = work.next_sibling_duplicate() {
        report
            .removals
            .push(work.merge(dup, survivor, DedupPolicy::WithinBranch));
    }
    if policy == DedupPolicy::GlobalTitle {
        while let Some((dup, survivor)) = work.next_global_duplicate() {
            report
                .removals
                .push(work.merge(dup, survivor, DedupPolicy::GlobalTitle));
            // Re-attached children may now clash with the survivor's own.
            while let Some((dup, survivor)) = work.next_sibling_duplicate() {
                report
                    .removals
                    .push(work.merge(dup, survivor, DedupPolicy::WithinBranch));
            }
        }
    }
    let nodes: Vec<TaxonomyNode> = work
        .nodes
        .into_iter()
        .zip(work.alive)
        .filter_map(|(n, alive)| alive.then_some(n))
        .collect();
    let out = Taxonomy::from_nodes(t.name(), nodes)?.with_provenance(t.provenance().clone());
    Ok((out, report))
}

struct Work {
    nodes: Vec<TaxonomyNode>,
    titles: Vec<String>,
    alive: Vec<bool>,
    parent: Vec<Option<usize>>,
}

impl Work {
    fn new(t: &Taxonomy) -> Self {
        let nodes = t.nodes().to_vec();
        let index: HashMap<&NodeId, usize> =
            nodes.iter().enumerate().map(|(i, n)| (&n.id, i)).collect();
        let parent = nodes
            .iter()
            .map(|n| n.parent.as_ref().map(|p| index[p]))
            .collect();
        Work {
            titles: nodes.iter().map(|n| normalize_text(&n.title)).collect(),
            alive: vec![true; nodes.len()],
            parent,
            nodes,
        }
    }

    fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.nodes.len()];
        for (i, p) in self.parent.iter().enumerate() {
            if let (true, Some(p)) = (self.alive[i], p) {
                children[*p].push(i);
            }
        }
        children
    }

    fn preorder(&self) -> Vec<usize> {
        let children = self.children();
        let root = (0..self.nodes.len())
            .find(|&i| self.alive[i] && self.parent[i].is_none())
            .expect("valid taxonomy has a root");
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(children[i].iter().rev());
        }
        order
    }

    /// First node in pre-order with an earlier sibling of the same title.
    fn next_sibling_duplicate(&self) -> Option<(usize, usize)> {
        let children = self.children();
        for i in self.preorder() {
            let mut first: HashMap<&str, usize> = HashMap::new();
            for &c in &children[i] {
                if let Some(&s) = first.get(self.titles[c].as_str()) {
                    return Some((c, s));
                }
                first.insert(&self.titles[c], c);
            }
        }
        None
    }

    fn next_global_duplicate(&self) -> Option<(usize, usize)> {
        let mut first: HashMap<&str, usize> = HashMap::new();
        for i in self.preorder() {
            if let Some(&s) = first.get(self.titles[i].as_str()) {
                return Some((i, s));
            }
            first.insert(&self.titles[i], i);
        }
        None
    }

    fn merge(&mut self, dup: usize, survivor: usize, policy: DedupPolicy) -> Removal {
        let mut moved = Vec::new();
        for i in 0..self.nodes.len() {
            if self.alive[i] && self.parent[i] == Some(dup) {
                self.parent[i] = Some(survivor);
                self.nodes[i].parent = Some(self.nodes[survivor].id.clone());
                moved.push(self.nodes[i].id.clone());
            }
        }
        self.alive[dup] = false;
        if self.nodes[survivor].description.is_none() {
            self.nodes[survivor].description = self.nodes[dup].description.clone();
        }
        Removal {
            removed: self.nodes[dup].id.clone(),
            survivor: self.nodes[survivor].id.clone(),
            title: self.nodes[dup].title.clone(),
            policy,
            moved_children: moved,
        }
    }
}
