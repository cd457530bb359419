//! Trace-link candidates from overlapping label sets.
//!
//! A source/target pair becomes a candidate when the two artifacts share at
//! least LC labels in their top-K classifications. Links are bidirectional;
//! every pair is identified by its canonical [`PairKey`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Classification;
use crate::csvmeta;
use crate::taxonomy::{NodeId, Taxonomy, TaxonomyError};

pub const MAX_SWEEP_LC: usize = 50;

/// Unordered artifact pair stored with the lexicographically smaller id first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub first: String,
    pub second: String,
}

impl PairKey {
    pub fn new(a: &str, b: &str) -> Self {
        let (first, second) = if a <= b { (a, b) } else { (b, a) };
        PairKey {
            first: first.to_string(),
            second: second.to_string(),
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.first == id || self.second == id
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} <-> {}]", self.first, self.second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    Exact,
    AncestorRollup,
}

impl MatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::AncestorRollup => "ancestor_rollup",
        }
    }
}

impl std::str::FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(MatchMode::Exact),
            "ancestor_rollup" => Ok(MatchMode::AncestorRollup),
            other => Err(format!("unknown match mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkConfig {
    /// Minimum number of shared labels.
    pub lc: usize,
    #[serde(default)]
    pub match_mode: MatchMode,
    /// Sources and targets are the same artifact set: no self links, each
    /// pair once.
    #[serde(default)]
    pub same_corpus: bool,
}

impl LinkConfig {
    pub fn new(lc: usize) -> Self {
        LinkConfig {
            lc,
            match_mode: MatchMode::Exact,
            same_corpus: false,
        }
    }

    pub fn same_corpus(mut self, yes: bool) -> Self {
        self.same_corpus = yes;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkStatus {
    #[default]
    Candidate,
    Accepted,
    Rejected,
}

impl LinkStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkStatus::Candidate => "candidate",
            LinkStatus::Accepted => "accepted",
            LinkStatus::Rejected => "rejected",
        }
    }
}

impl std::str::FromStr for LinkStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "candidate" => Ok(LinkStatus::Candidate),
            "accepted" => Ok(LinkStatus::Accepted),
            "rejected" => Ok(LinkStatus::Rejected),
            other => Err(format!("unknown link status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLinkCandidate {
    pub source_id: String,
    pub target_id: String,
    pub matched_labels: BTreeSet<NodeId>,
    pub match_count: usize,
    pub status: LinkStatus,
}

impl TraceLinkCandidate {
    pub fn key(&self) -> PairKey {
        PairKey::new(&self.source_id, &self.target_id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error(
        "classification fingerprint mismatch: `{expected}` vs `{found}` (artifact `{artifact}`)"
    )]
    ConfigFingerprintMismatch {
        expected: String,
        found: String,
        artifact: String,
    },
    #[error("LC must be at least 1")]
    InvalidLc,
    #[error("LC range {0}..={1} must lie within 1..={MAX_SWEEP_LC}")]
    InvalidRange(usize, usize),
    #[error("ancestor roll-up matching needs the taxonomy")]
    TaxonomyRequired,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("candidate file line {line}: {message}")]
    Format { line: u64, message: String },
}

/// Labels shared by two label sets under `mode`.
///
/// `Exact` is plain intersection. `AncestorRollup` adds, for every pair of
/// labels, their lowest common ancestor when it lies below the root.
pub fn match_labels(
    a: &BTreeSet<NodeId>,
    b: &BTreeSet<NodeId>,
    t: &Taxonomy,
    mode: MatchMode,
) -> Result<BTreeSet<NodeId>, LinkError> {
    for id in a.iter().chain(b) {
        t.node(id.as_str())?;
    }
    let mut out: BTreeSet<NodeId> = a.intersection(b).cloned().collect();
    if mode == MatchMode::AncestorRollup {
        let root = &t.root().id;
        let lineage = |id: &NodeId| -> Result<Vec<NodeId>, TaxonomyError> {
            let mut path = t.ancestors(id.as_str())?;
            path.push(id.clone());
            Ok(path)
        };
        let paths_b = b.iter().map(lineage).collect::<Result<Vec<_>, _>>()?;
        for x in a {
            let px = lineage(x)?;
            for py in &paths_b {
                let lca = px
                    .iter()
                    .zip(py)
                    .take_while(|(u, v)| u == v)
                    .last()
                    .map(|(u, _)| u);
                if let Some(lca) = lca {
                    if lca != root {
                        out.insert(lca.clone());
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_fingerprints(src: &[Classification], tgt: &[Classification]) -> Result<(), LinkError> {
    let mut all = src.iter().chain(tgt);
    let Some(first) = all.next() else {
        return Ok(());
    };
    for c in all {
        if c.fingerprint != first.fingerprint {
            return Err(LinkError::ConfigFingerprintMismatch {
                expected: first.fingerprint.clone(),
                found: c.fingerprint.clone(),
                artifact: c.artifact_id.clone(),
            });
        }
    }
    Ok(())
}

/// Every pair whose shared-label count reaches `cfg.lc`, sorted by match
/// count descending then source id and target id.
pub fn derive_links(
    src: &[Classification],
    tgt: &[Classification],
    cfg: &LinkConfig,
    taxonomy: Option<&Taxonomy>,
) -> Result<Vec<TraceLinkCandidate>, LinkError> {
    if cfg.lc == 0 {
        return Err(LinkError::InvalidLc);
    }
    check_fingerprints(src, tgt)?;
    let mut out = all_overlaps(src, tgt, cfg, taxonomy)?;
    out.retain(|c| c.match_count >= cfg.lc);
    Ok(out)
}

/// All pairs sharing at least one matched label, sorted.
fn all_overlaps(
    src: &[Classification],
    tgt: &[Classification],
    cfg: &LinkConfig,
    taxonomy: Option<&Taxonomy>,
) -> Result<Vec<TraceLinkCandidate>, LinkError> {
    let rollup = cfg.match_mode == MatchMode::AncestorRollup;
    if rollup && taxonomy.is_none() {
        return Err(LinkError::TaxonomyRequired);
    }

    // Intern labels so intersections run over sorted integer lists.
    let mut interner: HashMap<&NodeId, u32> = HashMap::new();
    let mut names: Vec<&NodeId> = Vec::new();
    let src_sets = intern(src, &mut interner, &mut names);
    let tgt_sets = intern(tgt, &mut interner, &mut names);

    let label_sets = |c: &Classification| -> BTreeSet<NodeId> { c.label_ids().cloned().collect() };

    let per_source: Vec<Vec<TraceLinkCandidate>> = src
        .par_iter()
        .zip(src_sets.par_iter())
        .map(|(s, s_set)| -> Result<Vec<TraceLinkCandidate>, LinkError> {
            let mut found = Vec::new();
            for (t, t_set) in tgt.iter().zip(&tgt_sets) {
                if cfg.same_corpus && s.artifact_id == t.artifact_id {
                    continue;
                }
                let matched: BTreeSet<NodeId> = if rollup {
                    let tax = taxonomy.expect("checked above");
                    match_labels(
                        &label_sets(s),
                        &label_sets(t),
                        tax,
                        MatchMode::AncestorRollup,
                    )?
                } else {
                    intersect_sorted(s_set, t_set)
                        .map(|i| names[i as usize].clone())
                        .collect()
                };
                if matched.is_empty() {
                    continue;
                }
                let (source_id, target_id) = if cfg.same_corpus {
                    let k = PairKey::new(&s.artifact_id, &t.artifact_id);
                    (k.first, k.second)
                } else {
                    (s.artifact_id.clone(), t.artifact_id.clone())
                };
                found.push(TraceLinkCandidate {
                    source_id,
                    target_id,
                    match_count: matched.len(),
                    matched_labels: matched,
                    status: LinkStatus::Candidate,
                });
            }
            Ok(found)
        })
        .collect::<Result<_, _>>()?;

    let mut seen: HashSet<PairKey> = HashSet::new();
    let mut out: Vec<TraceLinkCandidate> = per_source
        .into_iter()
        .flatten()
        .filter(|c| seen.insert(c.key()))
        .collect();
    sort_candidates(&mut out);
    Ok(out)
}

fn intern<'a>(
    items: &'a [Classification],
    interner: &mut HashMap<&'a NodeId, u32>,
    names: &mut Vec<&'a NodeId>,
) -> Vec<Vec<u32>> {
    items
        .iter()
        .map(|c| {
            let mut v: Vec<u32> = c
                .label_ids()
                .map(|id| {
                    *interner.entry(id).or_insert_with(|| {
                        names.push(id);
                        names.len() as u32 - 1
                    })
                })
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect()
}

fn intersect_sorted<'a>(a: &'a [u32], b: &'a [u32]) -> impl Iterator<Item = u32> + 'a {
    let (mut i, mut j) = (0, 0);
    std::iter::from_fn(move || {
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    let v = a[i];
                    i += 1;
                    j += 1;
                    return Some(v);
                }
            }
        }
        None
    })
}

pub fn sort_candidates(items: &mut [TraceLinkCandidate]) {
    items.sort_by(|a, b| {
        b.match_count
            .cmp(&a.match_count)
            .then_with(|| a.source_id.cmp(&b.source_id))
            .then_with(|| a.target_id.cmp(&b.target_id))
    });
}

/// Candidates for every LC in `lc_range`, each equal to [`derive_links`] at
/// that LC. Overlaps are computed once and filtered per LC.
pub fn sweep_candidates(
    src: &[Classification],
    tgt: &[Classification],
    cfg: &LinkConfig,
    lc_range: RangeInclusive<usize>,
    taxonomy: Option<&Taxonomy>,
) -> Result<BTreeMap<usize, Vec<TraceLinkCandidate>>, LinkError> {
    let (lo, hi) = (*lc_range.start(), *lc_range.end());
    if lo < 1 || hi > MAX_SWEEP_LC || lo > hi {
        return Err(LinkError::InvalidRange(lo, hi));
    }
    check_fingerprints(src, tgt)?;
    let base = all_overlaps(src, tgt, cfg, taxonomy)?;
    Ok(lc_range.map(|lc| (lc, filter_by_lc(&base, lc))).collect())
}

/// Candidates whose match count reaches `lc`; order is preserved.
pub fn filter_by_lc(candidates: &[TraceLinkCandidate], lc: usize) -> Vec<TraceLinkCandidate> {
    candidates
        .iter()
        .filter(|c| c.match_count >= lc)
        .cloned()
        .collect()
}

pub const CANDIDATE_HEADER: [&str; 5] = [
    "source_id",
    "target_id",
    "match_count",
    "matched_labels",
    "status",
];

pub fn candidates_to_csv(items: &[TraceLinkCandidate], meta: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    csvmeta::write(meta, &mut out);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CANDIDATE_HEADER).expect("in-memory write");
    for c in items {
        let labels: Vec<&str> = c.matched_labels.iter().map(NodeId::as_str).collect();
        w.write_record([
            c.source_id.as_str(),
            c.target_id.as_str(),
            &c.match_count.to_string(),
            &labels.join(";"),
            c.status.as_str(),
        ])
        .expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
    out
}

pub fn parse_candidates(
    text: &str,
) -> Result<(BTreeMap<String, String>, Vec<TraceLinkCandidate>), LinkError> {
    let (meta, body, offset) = csvmeta::split(text);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| LinkError::Format {
            line: e.position().map(|p| p.line()).unwrap_or(0) + offset,
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0) + offset;
        let bad = |m: String| LinkError::Format { line, message: m };
        if record.len() != 5 {
            return Err(bad(format!("expected {}", CANDIDATE_HEADER.join(","))));
        }
        let matched_labels: BTreeSet<NodeId> = record[3]
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(NodeId::from)
            .collect();
        let match_count: usize = record[2]
            .trim()
            .parse()
            .map_err(|_| bad("match_count is not an integer".into()))?;
        out.push(TraceLinkCandidate {
            source_id: record[0].trim().to_string(),
            target_id: record[1].trim().to_string(),
            matched_labels,
            match_count,
            status: record[4].trim().parse().map_err(bad)?,
        });
    }
    Ok((meta, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::RankedLabel;
    use crate::taxonomy::TaxonomyNode;

    fn cls(id: &str, labels: &[&str]) -> Classification {
        Classification {
            artifact_id: id.to_string(),
            ranked_labels: labels
                .iter()
                .enumerate()
                .map(|(i, l)| RankedLabel {
                    node_id: NodeId::from(*l),
                    score: 1.0 - i as f64 * 0.01,
                })
                .collect(),
            fingerprint: "fp".into(),
        }
    }

    fn pairs(items: &[TraceLinkCandidate]) -> Vec<(String, String)> {
        items
            .iter()
            .map(|c| (c.source_id.clone(), c.target_id.clone()))
            .collect()
    }

    #[test]
    fn worked_example_links() {
        let src = vec![cls("R1", &["A1", "B1"])];
        let tgt = vec![cls("TC1", &["A1", "B1"]), cls("TC2", &["B1", "A1"])];
        let links = derive_links(&src, &tgt, &LinkConfig::new(1), None).unwrap();
        assert_eq!(
            pairs(&links),
            vec![("R1".into(), "TC1".into()), ("R1".into(), "TC2".into())]
        );
        assert_eq!(links[0].match_count, 2);

        let all = vec![src[0].clone(), tgt[0].clone(), tgt[1].clone()];
        let same = derive_links(&all, &all, &LinkConfig::new(1).same_corpus(true), None).unwrap();
        assert_eq!(
            pairs(&same),
            vec![
                ("R1".into(), "TC1".into()),
                ("R1".into(), "TC2".into()),
                ("TC1".into(), "TC2".into())
            ]
        );
    }

    #[test]
    fn lc_above_k_is_empty() {
        let src = vec![cls("a", &["x", "y"])];
        let tgt = vec![cls("b", &["x", "y"])];
        assert!(derive_links(&src, &tgt, &LinkConfig::new(3), None)
            .unwrap()
            .is_empty());
        assert!(matches!(
            derive_links(&src, &tgt, &LinkConfig::new(0), None),
            Err(LinkError::InvalidLc)
        ));
    }

    #[test]
    fn fingerprint_mismatch() {
        let src = vec![cls("a", &["x"])];
        let mut other = cls("b", &["x"]);
        other.fingerprint = "other".into();
        assert!(matches!(
            derive_links(&src, &[other], &LinkConfig::new(1), None),
            Err(LinkError::ConfigFingerprintMismatch { .. })
        ));
    }

    fn tree() -> Taxonomy {
        Taxonomy::from_nodes(
            "t",
            vec![
                TaxonomyNode::new("root", "root", None),
                TaxonomyNode::new("C", "charging", Some("root")),
                TaxonomyNode::new("C1", "online", Some("C")),
                TaxonomyNode::new("C2", "offline", Some("C")),
                TaxonomyNode::new("D", "billing", Some("root")),
                TaxonomyNode::new("D1", "invoice", Some("D")),
            ],
        )
        .unwrap()
    }

    fn set(ids: &[&str]) -> BTreeSet<NodeId> {
        ids.iter().map(|s| NodeId::from(*s)).collect()
    }

    #[test]
    fn match_modes() {
        let t = tree();
        // Labels outside the taxonomy are rejected.
        assert!(match_labels(
            &set(&["A1", "B1"]),
            &set(&["A1", "B1"]),
            &t,
            MatchMode::Exact
        )
        .is_err());
        assert_eq!(
            match_labels(
                &set(&["C1", "D1"]),
                &set(&["C1", "D1"]),
                &t,
                MatchMode::Exact
            )
            .unwrap(),
            set(&["C1", "D1"])
        );
        assert!(
            match_labels(&set(&["C1"]), &set(&["C2"]), &t, MatchMode::Exact)
                .unwrap()
                .is_empty()
        );
        assert_eq!(
            match_labels(&set(&["C1"]), &set(&["C2"]), &t, MatchMode::AncestorRollup).unwrap(),
            set(&["C"])
        );
        // Across top-level branches the LCA is the root, which never counts.
        assert!(
            match_labels(&set(&["C1"]), &set(&["D1"]), &t, MatchMode::AncestorRollup)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn rollup_links_need_taxonomy() {
        let src = vec![cls("a", &["C1"])];
        let tgt = vec![cls("b", &["C2"])];
        let cfg = LinkConfig {
            lc: 1,
            match_mode: MatchMode::AncestorRollup,
            same_corpus: false,
        };
        assert!(matches!(
            derive_links(&src, &tgt, &cfg, None),
            Err(LinkError::TaxonomyRequired)
        ));
        let links = derive_links(&src, &tgt, &cfg, Some(&tree())).unwrap();
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].matched_labels, set(&["C"]));
    }

    #[test]
    fn sweep_range_checked() {
        let src = vec![cls("a", &["x"])];
        assert!(sweep_candidates(&src, &src, &LinkConfig::new(1), 0..=3, None).is_err());
        assert!(sweep_candidates(&src, &src, &LinkConfig::new(1), 1..=51, None).is_err());
        let s =
            sweep_candidates(&src, &[cls("b", &["x"])], &LinkConfig::new(1), 1..=3, None).unwrap();
        assert_eq!(s.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(s[&1].len(), 1);
        assert!(s[&2].is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let src = vec![cls("R1", &["A1", "B1"])];
        let tgt = vec![cls("TC,1", &["A1", "B1"])];
        let links = derive_links(&src, &tgt, &LinkConfig::new(1), None).unwrap();
        let meta = BTreeMap::from([("lc".to_string(), "1".to_string())]);
        let text = candidates_to_csv(&links, &meta);
        assert!(text.ends_with("R1,\"TC,1\",2,A1;B1,candidate\n"), "{text}");
        let (m, back) = parse_candidates(&text).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back, links);
    }
}
