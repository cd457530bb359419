use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::{NodeId, TaxonomyError, TaxonomyNode};
use crate::embedding::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// One violated taxonomy rule together with the offending node(s).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyId {
        row: usize,
    },
    EmptyTitle {
        node: NodeId,
    },
    DuplicateId {
        node: NodeId,
    },
    MultipleParents {
        node: NodeId,
        parents: Vec<NodeId>,
    },
    MissingParent {
        node: NodeId,
        parent: NodeId,
    },
    CycleDetected {
        nodes: Vec<NodeId>,
    },
    MultipleRoots {
        roots: Vec<NodeId>,
    },
    NoRoot,
    DuplicateTitleWithinBranch {
        node: NodeId,
        survivor: NodeId,
        title: String,
    },
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::DuplicateTitleWithinBranch { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }

    fn into_error(self) -> TaxonomyError {
        match self {
            Violation::EmptyId { row } => TaxonomyError::EmptyId(row as u64),
            Violation::EmptyTitle { node } => TaxonomyError::EmptyTitle(node),
            Violation::DuplicateId { node } => TaxonomyError::DuplicateId(node),
            Violation::MultipleParents { node, .. } => TaxonomyError::MultipleParents(node),
            Violation::MissingParent { node, parent } => {
                TaxonomyError::MissingParent { node, parent }
            }
            Violation::CycleDetected { nodes } => TaxonomyError::CycleDetected(nodes),
            Violation::MultipleRoots { roots } => TaxonomyError::MultipleRoots(roots),
            Violation::NoRoot => TaxonomyError::NoRoot,
            Violation::DuplicateTitleWithinBranch { node, .. } => {
                unreachable!("warning for `{node}` is not a structural error")
            }
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { row } => write!(f, "EmptyId(row {row})"),
            Violation::EmptyTitle { node } => write!(f, "EmptyTitle({node})"),
            Violation::DuplicateId { node } => write!(f, "DuplicateId({node})"),
            Violation::MultipleParents { node, parents } => {
                write!(f, "MultipleParents({node}: {})", super::join_ids(parents))
            }
            Violation::MissingParent { node, parent } => {
                write!(f, "MissingParent({node} -> {parent})")
            }
            Violation::CycleDetected { nodes } => {
                write!(f, "CycleDetected({})", super::join_ids(nodes))
            }
            Violation::MultipleRoots { roots } => {
                write!(f, "MultipleRoots({})", super::join_ids(roots))
            }
            Violation::NoRoot => write!(f, "NoRoot"),
            Violation::DuplicateTitleWithinBranch {
                node,
                survivor,
                title,
            } => write!(
                f,
                "DuplicateTitleWithinBranch({node} duplicates {survivor}: {title:?})"
            ),
        }
    }
}

/// Checks flat node rows against every taxonomy rule. An empty result means
/// the rows form a valid single-rooted tree with no warnings.
pub fn validate_nodes(nodes: &[TaxonomyNode]) -> Vec<Violation> {
    let mut out = Vec::new();

    for (row, node) in nodes.iter().enumerate() {
        if node.id.as_str().trim().is_empty() {
            out.push(Violation::EmptyId { row });
        }
    }
    for node in nodes {
        if node.title.trim().is_empty() {
            out.push(Violation::EmptyTitle {
                node: node.id.clone(),
            });
        }
    }

    // Group rows sharing an id. Rows that agree on everything but the parent
    // describe one node attached twice; anything else is a duplicate id.
    let mut rows_by_id: BTreeMap<&NodeId, Vec<&TaxonomyNode>> = BTreeMap::new();
    let mut order: Vec<&NodeId> = Vec::new();
    for node in nodes {
        let entry = rows_by_id.entry(&node.id).or_default();
        if entry.is_empty() {
            order.push(&node.id);
        }
        entry.push(node);
    }
    for id in &order {
        let rows = &rows_by_id[id];
        if rows.len() < 2 {
            continue;
        }
        let first = rows[0];
        let same_content = rows.iter().all(|r| {
            r.title == first.title
                && r.description == first.description
                && r.synonyms == first.synonyms
        });
        let mut parents: Vec<NodeId> = Vec::new();
        for r in rows {
            if let Some(p) = &r.parent {
                if !parents.contains(p) {
                    parents.push(p.clone());
                }
            }
        }
        if same_content && parents.len() > 1 {
            out.push(Violation::MultipleParents {
                node: (*id).clone(),
                parents,
            });
        } else {
            out.push(Violation::DuplicateId {
                node: (*id).clone(),
            });
        }
    }

    // Remaining checks use the first row for each id.
    let parent_of: HashMap<&NodeId, Option<&NodeId>> = order
        .iter()
        .map(|id| (*id, rows_by_id[id][0].parent.as_ref()))
        .collect();

    for id in &order {
        if let Some(Some(parent)) = parent_of.get(id) {
            if !parent_of.contains_key(parent) {
                out.push(Violation::MissingParent {
                    node: (*id).clone(),
                    parent: (*parent).clone(),
                });
            }
        }
    }

    out.extend(find_cycles(&order, &parent_of));

    let roots: Vec<NodeId> = order
        .iter()
        .filter(|id| parent_of[*id].is_none())
        .map(|id| (*id).clone())
        .collect();
    match roots.len() {
        0 => {
            if !out
                .iter()
                .any(|v| matches!(v, Violation::CycleDetected { .. }))
            {
                out.push(Violation::NoRoot);
            }
        }
        1 => {}
        _ => out.push(Violation::MultipleRoots { roots }),
    }

    let mut seen: HashMap<(Option<&NodeId>, String), &NodeId> = HashMap::new();
    for id in &order {
        let node = rows_by_id[id][0];
        let key = (node.parent.as_ref(), normalize_text(&node.title));
        if key.1.is_empty() {
            continue;
        }
        match seen.get(&key) {
            Some(survivor) => out.push(Violation::DuplicateTitleWithinBranch {
                node: (*id).clone(),
                survivor: (*survivor).clone(),
                title: node.title.clone(),
            }),
            None => {
                seen.insert(key, id);
            }
        }
    }

    out
}

fn find_cycles(order: &[&NodeId], parent_of: &HashMap<&NodeId, Option<&NodeId>>) -> Vec<Violation> {
    // 0 = unvisited, 1 = on current walk, 2 = finished
    let mut state: HashMap<&NodeId, u8> = HashMap::new();
    let mut out = Vec::new();
    for &start in order {
        if state.get(start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut walk: Vec<&NodeId> = Vec::new();
        let mut cur = Some(start);
        while let Some(id) = cur {
            match state.get(id).copied().unwrap_or(0) {
                0 => {
                    state.insert(id, 1);
                    walk.push(id);
                    cur = parent_of.get(id).copied().flatten();
                    if let Some(p) = cur {
                        if !parent_of.contains_key(p) {
                            cur = None;
                        }
                    }
                }
                1 => {
                    let pos = walk.iter().position(|w| *w == id).unwrap_or(0);
                    let mut cycle: Vec<NodeId> = walk[pos..].iter().map(|n| (*n).clone()).collect();
                    // Rotate so the smallest id leads, giving a stable report.
                    if let Some(min) = cycle
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, n)| *n)
                        .map(|(i, _)| i)
                    {
                        cycle.rotate_left(min);
                    }
                    out.push(Violation::CycleDetected { nodes: cycle });
                    break;
                }
                _ => break,
            }
        }
        for id in walk {
            state.insert(id, 2);
        }
    }
    out
}

pub(super) fn first_structural_error(nodes: &[TaxonomyNode]) -> Option<TaxonomyError> {
    let mut seen = HashSet::new();
    validate_nodes(nodes)
        .into_iter()
        .filter(|v| v.severity() == Severity::Error)
        .find(|v| seen.insert(std::mem::discriminant(v)))
        .map(Violation::into_error)
}
