//! Scoring trace-link candidates against ground truth.
//!
//! Ground truth is treated as the complete set of true links (closed world).
//! Precision with zero candidates is 0, and F1 with P + R = 0 is 0, so sweep
//! curves stay defined across empty tails.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::classifier::Classification;
use crate::corpus::ArtifactRecord;
use crate::csvmeta;
use crate::taxonomy::Taxonomy;
use crate::tracelinks::{sweep_candidates, LinkConfig, LinkError, PairKey, TraceLinkCandidate};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("ground truth pairs `{0}` with itself")]
    SelfPair(String),
    #[error("no point satisfies the selection objective")]
    NoFeasiblePoint,
    #[error("no curves to select from")]
    NoCurves,
    #[error("possible link count must be at least 1 and not below the candidate count")]
    InvalidPossible,
    #[error("ground truth line {line}: {message}")]
    Format { line: u64, message: String },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Artifact,
    Document,
}

/// Known-correct links.
///
/// At document granularity, ground-truth ids name documents; candidate
/// artifact ids are projected onto document ids before matching.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pairs: BTreeSet<PairKey>,
    granularity: Granularity,
    projection: HashMap<String, String>,
    pub provenance: String,
}

impl GroundTruth {
    pub fn new<I, A, B>(pairs: I) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            let (a, b) = (a.as_ref(), b.as_ref());
            if a == b {
                return Err(EvalError::SelfPair(a.to_string()));
            }
            set.insert(PairKey::new(a, b));
        }
        Ok(GroundTruth {
            pairs: set,
            granularity: Granularity::Artifact,
            projection: HashMap::new(),
            provenance: String::new(),
        })
    }

    /// Switches to document granularity: each artifact carrying `key` in its
    /// metadata is projected onto that value; others keep their own id.
    pub fn at_document_level<'a>(
        mut self,
        key: &str,
        artifacts: impl IntoIterator<Item = &'a ArtifactRecord>,
    ) -> Self {
        self.granularity = Granularity::Document;
        self.projection = artifacts
            .into_iter()
            .filter_map(|a| a.metadata.get(key).map(|d| (a.id.clone(), d.clone())))
            .collect();
        self
    }

    pub fn pairs(&self) -> &BTreeSet<PairKey> {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    fn project<'a>(&'a self, id: &'a str) -> &'a str {
        self.projection.get(id).map(String::as_str).unwrap_or(id)
    }

    /// The ground-truth pair a candidate maps to, if it is a true link.
    pub fn hit(&self, candidate: &PairKey) -> Option<PairKey> {
        let key = PairKey::new(
            self.project(&candidate.first),
            self.project(&candidate.second),
        );
        self.pairs.contains(&key).then_some(key)
    }
}

/// `source_id,target_id` rows.
pub fn parse_ground_truth(text: &str) -> Result<GroundTruth, EvalError> {
    let (meta, body, offset) = csvmeta::split(text);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::Format {
            line: e.position().map(|p| p.line()).unwrap_or(0) + offset,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(EvalError::Format {
                line: record.position().map(|p| p.line()).unwrap_or(0) + offset,
                message: "expected source_id,target_id".into(),
            });
        }
        pairs.push((record[0].trim().to_string(), record[1].trim().to_string()));
    }
    let mut gt = GroundTruth::new(pairs)?;
    gt.provenance = meta.get("provenance").cloned().unwrap_or_default();
    Ok(gt)
}

pub fn ground_truth_to_csv(gt: &GroundTruth) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source_id", "target_id"])
        .expect("in-memory write");
    for p in gt.pairs() {
        w.write_record([&p.first, &p.second])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsPoint {
    pub lc: usize,
    pub candidate_count: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsPoint {
    fn at_lc(mut self, lc: usize) -> Self {
        self.lc = lc;
        self
    }
}

/// Precision, recall and F1 of `candidates` against `gt`. Candidates are
/// deduplicated by canonical pair first; `lc` is left at 0.
pub fn compute_metrics(
    candidates: &[TraceLinkCandidate],
    gt: &GroundTruth,
) -> Result<MetricsPoint, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let unique: BTreeSet<PairKey> = candidates.iter().map(TraceLinkCandidate::key).collect();
    let mut tp = 0;
    let mut covered: HashSet<PairKey> = HashSet::new();
    for key in &unique {
        if let Some(hit) = gt.hit(key) {
            tp += 1;
            covered.insert(hit);
        }
    }
    let fp = unique.len() - tp;
    let fn_ = gt.len() - covered.len();
    let precision = if unique.is_empty() {
        0.0
    } else {
        tp as f64 / unique.len() as f64
    };
    let recall = covered.len() as f64 / gt.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsPoint {
        lc: 0,
        candidate_count: unique.len(),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub model_id: String,
    pub k: usize,
    pub points: Vec<MetricsPoint>,
}

/// Derives candidates for each LC in `lc_range` and scores every point.
#[allow(clippy::too_many_arguments)]
pub fn sweep_evaluate(
    src: &[Classification],
    tgt: &[Classification],
    gt: &GroundTruth,
    cfg: &LinkConfig,
    lc_range: RangeInclusive<usize>,
    taxonomy: Option<&Taxonomy>,
    model_id: &str,
    k: usize,
) -> Result<SweepCurve, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let sweep = sweep_candidates(src, tgt, cfg, lc_range, taxonomy)?;
    let points = sweep
        .iter()
        .map(|(&lc, cands)| Ok(compute_metrics(cands, gt)?.at_lc(lc)))
        .collect::<Result<_, EvalError>>()?;
    Ok(SweepCurve {
        model_id: model_id.to_string(),
        k,
        points,
    })
}

/// Sweep over an existing candidate list, keeping at each LC the candidates
/// whose match count reaches it.
pub fn curve_from_candidates(
    candidates: &[TraceLinkCandidate],
    gt: &GroundTruth,
    lc_range: RangeInclusive<usize>,
    model_id: &str,
    k: usize,
) -> Result<SweepCurve, EvalError> {
    let (lo, hi) = (*lc_range.start(), *lc_range.end());
    if lo < 1 || hi > crate::tracelinks::MAX_SWEEP_LC || lo > hi {
        return Err(LinkError::InvalidRange(lo, hi).into());
    }
    let points = lc_range
        .map(|lc| {
            let kept = crate::tracelinks::filter_by_lc(candidates, lc);
            Ok(compute_metrics(&kept, gt)?.at_lc(lc))
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(SweepCurve {
        model_id: model_id.to_string(),
        k,
        points,
    })
}

pub const CURVE_HEADER: [&str; 10] = [
    "model_id",
    "k",
    "lc",
    "candidates",
    "tp",
    "fp",
    "fn",
    "precision",
    "recall",
    "f1",
];

pub fn curve_to_csv(curve: &SweepCurve) -> String {
    let mut out = String::new();
    let meta = BTreeMap::from([("ground_truth".to_string(), "closed-world".to_string())]);
    csvmeta::write(&meta, &mut out);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_HEADER).expect("in-memory write");
    for p in &curve.points {
        w.write_record([
            curve.model_id.clone(),
            curve.k.to_string(),
            p.lc.to_string(),
            p.candidate_count.to_string(),
            p.true_positives.to_string(),
            p.false_positives.to_string(),
            p.false_negatives.to_string(),
            format!("{:.6}", p.precision),
            format!("{:.6}", p.recall),
            format!("{:.6}", p.f1),
        ])
        .expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    /// Mean recommended links per source artifact.
    pub mean: f64,
    /// Population standard deviation of the per-source counts.
    pub sd: f64,
    pub min: usize,
    pub max: usize,
    pub possible_links: usize,
    pub per_source: Vec<(String, usize)>,
}

/// Per-source candidate counts. A candidate counts toward a source when the
/// source is either endpoint; sources without candidates count as 0.
pub fn candidate_stats(
    candidates: &[TraceLinkCandidate],
    sources: &[ArtifactRecord],
    possible: usize,
) -> Result<CandidateStats, EvalError> {
    if possible == 0 {
        return Err(EvalError::InvalidPossible);
    }
    let mut counts: HashMap<&str, usize> = sources.iter().map(|s| (s.id.as_str(), 0)).collect();
    let mut seen = HashSet::new();
    for c in candidates {
        if !seen.insert(c.key()) {
            continue;
        }
        for id in [c.source_id.as_str(), c.target_id.as_str()] {
            if let Some(n) = counts.get_mut(id) {
                *n += 1;
            }
            if c.source_id == c.target_id {
                break;
            }
        }
    }
    let per_source: Vec<(String, usize)> = sources
        .iter()
        .map(|s| (s.id.clone(), counts[s.id.as_str()]))
        .collect();
    let values: Vec<f64> = per_source.iter().map(|(_, n)| *n as f64).collect();
    let (mean, sd) = mean_sd(&values);
    Ok(CandidateStats {
        mean,
        sd,
        min: per_source.iter().map(|(_, n)| *n).min().unwrap_or(0),
        max: per_source.iter().map(|(_, n)| *n).max().unwrap_or(0),
        possible_links: possible,
        per_source,
    })
}

/// Mean and population standard deviation (two-pass).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case")]
pub enum Objective {
    MaxF1,
    /// Highest precision among points whose recall reaches `floor`.
    RecallFloorThenMaxPrecision {
        floor: f64,
    },
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "max_f1" {
            return Ok(Objective::MaxF1);
        }
        if let Some(v) = s.strip_prefix("recall_floor=") {
            let floor: f64 = v.parse().map_err(|_| format!("bad recall floor `{v}`"))?;
            if !(0.0..=1.0).contains(&floor) {
                return Err(format!("recall floor {floor} outside [0, 1]"));
            }
            return Ok(Objective::RecallFloorThenMaxPrecision { floor });
        }
        Err(format!(
            "unknown objective `{s}` (use max_f1 or recall_floor=<x>)"
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub model_id: String,
    pub k: usize,
    pub lc: usize,
    pub point: MetricsPoint,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "model={} k={} lc={} precision={:.6} recall={:.6} f1={:.6}",
            self.model_id, self.k, self.lc, self.point.precision, self.point.recall, self.point.f1
        )
    }
}

/// Picks the (model, K, LC) operating point. Ties on the objective value go
/// to the smaller LC, then model id ascending, then smaller K.
pub fn select_config(curves: &[SweepCurve], objective: Objective) -> Result<Selection, EvalError> {
    if curves.is_empty() {
        return Err(EvalError::NoCurves);
    }
    let mut best: Option<(f64, &SweepCurve, &MetricsPoint)> = None;
    for curve in curves {
        for p in &curve.points {
            let value = match objective {
                Objective::MaxF1 => p.f1,
                Objective::RecallFloorThenMaxPrecision { floor } => {
                    if p.recall < floor {
                        continue;
                    }
                    p.precision
                }
            };
            let better = match best {
                None => true,
                Some((bv, bc, bp)) => {
                    value > bv
                        || (value == bv
                            && (p.lc, &curve.model_id, curve.k) < (bp.lc, &bc.model_id, bc.k))
                }
            };
            if better {
                best = Some((value, curve, p));
            }
        }
    }
    let (_, curve, point) = best.ok_or(EvalError::NoFeasiblePoint)?;
    Ok(Selection {
        model_id: curve.model_id.clone(),
        k: curve.k,
        lc: point.lc,
        point: *point,
    })
}

/// Share of possible links a reviewer no longer has to inspect.
pub fn reduction_ratio(candidate_count: usize, possible_pairs: usize) -> Result<f64, EvalError> {
    if possible_pairs == 0 || candidate_count > possible_pairs {
        return Err(EvalError::InvalidPossible);
    }
    Ok(1.0 - candidate_count as f64 / possible_pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ArtifactKind;
    use crate::tracelinks::LinkStatus;

    fn cand(s: &str, t: &str) -> TraceLinkCandidate {
        TraceLinkCandidate {
            source_id: s.into(),
            target_id: t.into(),
            matched_labels: BTreeSet::new(),
            match_count: 1,
            status: LinkStatus::Candidate,
        }
    }

    fn gt() -> GroundTruth {
        GroundTruth::new([("a", "b"), ("a", "c"), ("d", "e")]).unwrap()
    }

    #[test]
    fn hand_checked_metrics() {
        let c = [
            cand("a", "b"),
            cand("a", "e"),
            cand("d", "e"),
            cand("b", "c"),
        ];
        let m = compute_metrics(&c, &gt()).unwrap();
        assert_eq!(
            (m.true_positives, m.false_positives, m.false_negatives),
            (2, 2, 1)
        );
        assert!((m.precision - 0.5).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let c = [cand("b", "a"), cand("a", "c"), cand("e", "d")];
        let m = compute_metrics(&c, &gt()).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = compute_metrics(&[], &gt()).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.false_negatives, 3);
    }

    #[test]
    fn duplicates_and_order_do_not_matter() {
        let c = [
            cand("a", "b"),
            cand("b", "a"),
            cand("x", "y"),
            cand("a", "b"),
        ];
        let m = compute_metrics(&c, &gt()).unwrap();
        assert_eq!(
            (m.candidate_count, m.true_positives, m.false_positives),
            (2, 1, 1)
        );
    }

    #[test]
    fn empty_ground_truth_rejected() {
        let empty = GroundTruth::new(Vec::<(String, String)>::new()).unwrap();
        assert!(matches!(
            compute_metrics(&[], &empty),
            Err(EvalError::EmptyGroundTruth)
        ));
        assert!(matches!(
            GroundTruth::new([("a", "a")]),
            Err(EvalError::SelfPair(_))
        ));
    }

    #[test]
    fn document_projection() {
        let tests = [
            ArtifactRecord::new("TC1", ArtifactKind::TestCase, "x"),
            ArtifactRecord::new("R1", ArtifactKind::Requirement, "x").with_meta("doc", "DOC-A"),
            ArtifactRecord::new("R2", ArtifactKind::Requirement, "x").with_meta("doc", "DOC-A"),
            ArtifactRecord::new("R3", ArtifactKind::Requirement, "x").with_meta("doc", "DOC-B"),
        ];
        let gt = GroundTruth::new([("TC1", "DOC-A")])
            .unwrap()
            .at_document_level("doc", &tests);
        let c = [cand("R1", "TC1"), cand("R2", "TC1"), cand("R3", "TC1")];
        let m = compute_metrics(&c, &gt).unwrap();
        assert_eq!(
            (m.true_positives, m.false_positives, m.false_negatives),
            (2, 1, 0)
        );
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn stats_single_source_and_population_sd() {
        let srcs = [ArtifactRecord::new("s", ArtifactKind::Buc, "x")];
        let c: Vec<_> = (0..5).map(|i| cand("s", &format!("t{i}"))).collect();
        let st = candidate_stats(&c, &srcs, 277).unwrap();
        assert_eq!((st.mean, st.sd), (5.0, 0.0));
        let (mean, sd) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!((mean, sd), (5.0, 2.0));
    }

    #[test]
    fn same_corpus_counts_both_ends() {
        let srcs = [
            ArtifactRecord::new("a", ArtifactKind::Buc, "x"),
            ArtifactRecord::new("b", ArtifactKind::Buc, "x"),
            ArtifactRecord::new("c", ArtifactKind::Buc, "x"),
        ];
        let st = candidate_stats(&[cand("a", "b"), cand("a", "c")], &srcs, 2).unwrap();
        assert_eq!(
            st.per_source,
            vec![("a".into(), 2), ("b".into(), 1), ("c".into(), 1)]
        );
    }

    #[test]
    fn reduction() {
        assert!((reduction_ratio(17, 100).unwrap() - 0.83).abs() < 1e-9);
        assert_eq!(reduction_ratio(0, 100).unwrap(), 1.0);
        assert_eq!(reduction_ratio(100, 100).unwrap(), 0.0);
        assert!(reduction_ratio(1, 0).is_err());
    }

    fn point(lc: usize, precision: f64, recall: f64) -> MetricsPoint {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricsPoint {
            lc,
            candidate_count: 0,
            true_positives: 0,
            false_positives: 0,
            false_negatives: 0,
            precision,
            recall,
            f1,
        }
    }

    #[test]
    fn select_unique_f1_peak() {
        let curve = SweepCurve {
            model_id: "m".into(),
            k: 10,
            points: (1..=8)
                .map(|lc| {
                    point(
                        lc,
                        0.05 * lc as f64,
                        1.0 - 0.1 * (lc as f64 - 1.0).powi(2) / 4.0,
                    )
                })
                .collect(),
        };
        let best_lc = curve
            .points
            .iter()
            .max_by(|a, b| a.f1.total_cmp(&b.f1))
            .unwrap()
            .lc;
        let s = select_config(&[curve], Objective::MaxF1).unwrap();
        assert_eq!(s.lc, best_lc);
        assert_eq!(s.lc, 5);
    }

    #[test]
    fn recall_floor_and_infeasible() {
        let curve = SweepCurve {
            model_id: "m".into(),
            k: 10,
            points: vec![
                point(1, 0.005, 0.97),
                point(2, 0.01, 0.91),
                point(3, 0.05, 0.6),
            ],
        };
        let s = select_config(
            std::slice::from_ref(&curve),
            Objective::RecallFloorThenMaxPrecision { floor: 0.9 },
        )
        .unwrap();
        assert_eq!(s.lc, 2);
        assert!(matches!(
            select_config(
                &[curve],
                Objective::RecallFloorThenMaxPrecision { floor: 1.0 }
            ),
            Err(EvalError::NoFeasiblePoint)
        ));
        assert!(matches!(
            select_config(&[], Objective::MaxF1),
            Err(EvalError::NoCurves)
        ));
    }

    #[test]
    fn objective_parsing() {
        assert_eq!("max_f1".parse::<Objective>().unwrap(), Objective::MaxF1);
        assert_eq!(
            "recall_floor=0.9".parse::<Objective>().unwrap(),
            Objective::RecallFloorThenMaxPrecision { floor: 0.9 }
        );
        assert!("recall_floor=2".parse::<Objective>().is_err());
    }

    #[test]
    fn ground_truth_csv_round_trip() {
        let text = ground_truth_to_csv(&gt());
        assert_eq!(parse_ground_truth(&text).unwrap().pairs(), gt().pairs());
    }
}
