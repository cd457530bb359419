//! Zero-shot multi-label classification of artifacts against a taxonomy.
//!
//! Every eligible class is rendered to text and embedded once; an artifact is
//! embedded and scored against all of them by cosine similarity. The top K
//! classes are kept, ordered by score descending and then by node id so the
//! ranking is a total order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ArtifactRecord;
use crate::csvmeta;
use crate::embedding::{cosine, Embedder, EmbeddingError, EmbeddingVector, ProviderConfig};
use crate::taxonomy::{NodeId, RenderMode, Taxonomy, TaxonomyError};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityPolicy {
    All,
    LeavesOnly,
    #[default]
    ExcludeRoot,
}

impl EligibilityPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            EligibilityPolicy::All => "all",
            EligibilityPolicy::LeavesOnly => "leaves_only",
            EligibilityPolicy::ExcludeRoot => "exclude_root",
        }
    }
}

impl std::str::FromStr for EligibilityPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(EligibilityPolicy::All),
            "leaves_only" => Ok(EligibilityPolicy::LeavesOnly),
            "exclude_root" => Ok(EligibilityPolicy::ExcludeRoot),
            other => Err(format!("unknown eligibility policy `{other}`")),
        }
    }
}

/// Nodes that may label an artifact, in taxonomy insertion order.
pub fn eligible_nodes(t: &Taxonomy, policy: EligibilityPolicy) -> Vec<NodeId> {
    let root = &t.root().id;
    t.nodes()
        .iter()
        .filter(|n| match policy {
            EligibilityPolicy::All => true,
            EligibilityPolicy::ExcludeRoot => &n.id != root,
            EligibilityPolicy::LeavesOnly => t.is_leaf(n.id.as_str()).unwrap_or(false),
        })
        .map(|n| n.id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub k: usize,
    #[serde(default)]
    pub mode: RenderMode,
    #[serde(default)]
    pub policy: EligibilityPolicy,
    pub provider: ProviderConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            k: DEFAULT_K,
            mode: RenderMode::default(),
            policy: EligibilityPolicy::default(),
            provider: ProviderConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.k == 0 {
            return Err(ClassifyError::InvalidConfig("k must be at least 1".into()));
        }
        self.provider.validate()?;
        Ok(())
    }

    /// Short digest identifying this configuration applied to `t`.
    pub fn fingerprint(&self, t: &Taxonomy) -> String {
        use sha2::{Digest, Sha256};
        let canonical = format!(
            "provider={};model={};dim={};k={};mode={};policy={};taxonomy={}",
            self.provider.provider,
            self.provider.model_id,
            self.provider.dim,
            self.k,
            self.mode.as_str(),
            self.policy.as_str(),
            t.digest()
        );
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("artifact `{0}` has an empty body")]
    EmptyArtifactBody(String),
    #[error("duplicate artifact id `{0}`")]
    DuplicateArtifactId(String),
    #[error("invalid classifier configuration: {0}")]
    InvalidConfig(String),
    #[error("artifact `{id}`: {source}")]
    Artifact {
        id: String,
        #[source]
        source: Box<ClassifyError>,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("classification file line {line}: {message}")]
    Format { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub node_id: NodeId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub artifact_id: String,
    pub ranked_labels: Vec<RankedLabel>,
    pub fingerprint: String,
}

impl Classification {
    pub fn label_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.ranked_labels.iter().map(|l| &l.node_id)
    }

    pub fn score_of(&self, id: &str) -> Option<f64> {
        self.ranked_labels
            .iter()
            .find(|l| l.node_id.as_str() == id)
            .map(|l| l.score)
    }
}

/// Higher score first, then node id ascending.
pub fn label_order(a: &RankedLabel, b: &RankedLabel) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.node_id.cmp(&b.node_id))
}

/// Scores `query` against every class vector and keeps the best `k`.
pub fn rank_labels(
    query: &EmbeddingVector,
    classes: &[(NodeId, EmbeddingVector)],
    k: usize,
) -> Result<Vec<RankedLabel>, EmbeddingError> {
    let mut scored = classes
        .iter()
        .map(|(id, v)| {
            Ok(RankedLabel {
                node_id: id.clone(),
                score: cosine(query, v)?,
            })
        })
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    let keep = k.min(scored.len());
    if keep < scored.len() {
        scored.select_nth_unstable_by(keep, label_order);
        scored.truncate(keep);
    }
    scored.sort_by(label_order);
    Ok(scored)
}

/// A classifier with class embeddings precomputed for one taxonomy.
pub struct Classifier<'a> {
    embedder: &'a Embedder,
    config: ClassifierConfig,
    classes: Vec<(NodeId, EmbeddingVector)>,
    fingerprint: String,
}

impl<'a> Classifier<'a> {
    pub fn new(
        t: &Taxonomy,
        config: ClassifierConfig,
        embedder: &'a Embedder,
    ) -> Result<Self, ClassifyError> {
        config.validate()?;
        let ids = eligible_nodes(t, config.policy);
        let texts = ids
            .iter()
            .map(|id| t.class_text(id.as_str(), config.mode))
            .collect::<Result<Vec<_>, _>>()?;
        let vectors = if texts.is_empty() {
            Vec::new()
        } else {
            embedder.embed_texts(&texts)?
        };
        Ok(Classifier {
            embedder,
            fingerprint: config.fingerprint(t),
            config,
            classes: ids.into_iter().zip(vectors).collect(),
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn classify(&self, a: &ArtifactRecord) -> Result<Classification, ClassifyError> {
        if !a.has_body() {
            return Err(ClassifyError::EmptyArtifactBody(a.id.clone()));
        }
        let query = self
            .embedder
            .embed_texts(&[a.embedding_input()])?
            .pop()
            .expect("one vector per text");
        Ok(Classification {
            artifact_id: a.id.clone(),
            ranked_labels: rank_labels(&query, &self.classes, self.config.k)?,
            fingerprint: self.fingerprint.clone(),
        })
    }

    pub fn classify_corpus(
        &self,
        corpus: &[ArtifactRecord],
    ) -> Result<Vec<Classification>, ClassifyError> {
        let mut seen = HashSet::new();
        for a in corpus {
            if !seen.insert(a.id.as_str()) {
                return Err(ClassifyError::DuplicateArtifactId(a.id.clone()));
            }
        }
        // Embed all artifact texts in one pass so remote providers batch.
        let inputs: Vec<String> = corpus.iter().map(ArtifactRecord::embedding_input).collect();
        if let Some(empty) = corpus.iter().find(|a| !a.has_body()) {
            return Err(ClassifyError::Artifact {
                id: empty.id.clone(),
                source: Box::new(ClassifyError::EmptyArtifactBody(empty.id.clone())),
            });
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let queries = self.embedder.embed_texts(&inputs)?;
        corpus
            .par_iter()
            .zip(queries.par_iter())
            .map(|(a, q)| {
                let ranked_labels = rank_labels(q, &self.classes, self.config.k).map_err(|e| {
                    ClassifyError::Artifact {
                        id: a.id.clone(),
                        source: Box::new(e.into()),
                    }
                })?;
                Ok(Classification {
                    artifact_id: a.id.clone(),
                    ranked_labels,
                    fingerprint: self.fingerprint.clone(),
                })
            })
            .collect()
    }
}

pub fn classify_artifact(
    a: &ArtifactRecord,
    t: &Taxonomy,
    config: &ClassifierConfig,
    embedder: &Embedder,
) -> Result<Classification, ClassifyError> {
    Classifier::new(t, config.clone(), embedder)?.classify(a)
}

pub fn classify_corpus(
    corpus: &[ArtifactRecord],
    t: &Taxonomy,
    config: &ClassifierConfig,
    embedder: &Embedder,
) -> Result<Vec<Classification>, ClassifyError> {
    Classifier::new(t, config.clone(), embedder)?.classify_corpus(corpus)
}

/// Metadata recorded in the header of a classification dump.
pub fn dump_metadata(config: &ClassifierConfig, fingerprint: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("fingerprint".to_string(), fingerprint.to_string()),
        ("provider".to_string(), config.provider.provider.to_string()),
        ("model".to_string(), config.provider.model_id.clone()),
        ("dim".to_string(), config.provider.dim.to_string()),
        ("k".to_string(), config.k.to_string()),
        ("mode".to_string(), config.mode.as_str().to_string()),
        ("policy".to_string(), config.policy.as_str().to_string()),
    ])
}

/// `artifact_id,rank,node_id,score` rows, rank starting at 1, scores with six
/// decimals.
pub fn classifications_to_csv(items: &[Classification], meta: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    csvmeta::write(meta, &mut out);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["artifact_id", "rank", "node_id", "score"])
        .expect("in-memory write");
    for c in items {
        for (rank, label) in c.ranked_labels.iter().enumerate() {
            w.write_record([
                c.artifact_id.as_str(),
                &(rank + 1).to_string(),
                label.node_id.as_str(),
                &format!("{:.6}", label.score),
            ])
            .expect("in-memory write");
        }
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
    out
}

/// Reads a classification dump. Artifacts appear in first-seen order; labels
/// are ordered by the rank column.
pub fn parse_classifications(
    text: &str,
) -> Result<(BTreeMap<String, String>, Vec<Classification>), ClassifyError> {
    let (meta, body, offset) = csvmeta::split(text);
    let fingerprint = meta.get("fingerprint").cloned().unwrap_or_default();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(usize, RankedLabel)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| ClassifyError::Format {
            line: e.position().map(|p| p.line()).unwrap_or(0) + offset,
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0) + offset;
        let bad = |m: &str| ClassifyError::Format {
            line,
            message: m.to_string(),
        };
        if record.len() != 4 {
            return Err(bad("expected artifact_id,rank,node_id,score"));
        }
        let rank: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| bad("rank is not an integer"))?;
        let score: f64 = record[3]
            .trim()
            .parse()
            .map_err(|_| bad("score is not a number"))?;
        let id = record[0].trim().to_string();
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((
            rank,
            RankedLabel {
                node_id: NodeId::from(record[2].trim()),
                score,
            },
        ));
    }
    let items = order
        .into_iter()
        .map(|id| {
            let mut labels = rows.remove(&id).unwrap_or_default();
            labels.sort_by_key(|(rank, _)| *rank);
            Classification {
                artifact_id: id,
                ranked_labels: labels.into_iter().map(|(_, l)| l).collect(),
                fingerprint: fingerprint.clone(),
            }
        })
        .collect();
    Ok((meta, items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ArtifactKind;
    use crate::taxonomy::TaxonomyNode;

    fn voice() -> Taxonomy {
        Taxonomy::from_nodes(
            "charging",
            vec![
                TaxonomyNode::new("root", "charging", None),
                TaxonomyNode::new("A1", "voice call", Some("root")),
                TaxonomyNode::new("B1", "subscriber", Some("root")),
            ],
        )
        .unwrap()
    }

    fn r1() -> ArtifactRecord {
        ArtifactRecord::new(
            "R1",
            ArtifactKind::Requirement,
            "The system shall allow a subscriber to initiate a voice call to another subscriber by dialing their phone number",
        )
    }

    fn config(k: usize) -> ClassifierConfig {
        ClassifierConfig {
            k,
            provider: ProviderConfig::deterministic(64),
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn eligibility_policies() {
        let chain = Taxonomy::from_nodes(
            "c",
            vec![
                TaxonomyNode::new("root", "r", None),
                TaxonomyNode::new("a", "a", Some("root")),
                TaxonomyNode::new("b", "b", Some("a")),
            ],
        )
        .unwrap();
        assert_eq!(
            eligible_nodes(&chain, EligibilityPolicy::LeavesOnly),
            vec![NodeId::from("b")]
        );
        assert_eq!(
            eligible_nodes(&voice(), EligibilityPolicy::ExcludeRoot),
            vec![NodeId::from("A1"), NodeId::from("B1")]
        );
        assert_eq!(eligible_nodes(&voice(), EligibilityPolicy::All).len(), 3);
    }

    #[test]
    fn worked_example_top_two() {
        let e = Embedder::new(ProviderConfig::deterministic(64)).unwrap();
        let c = classify_artifact(&r1(), &voice(), &config(2), &e).unwrap();
        let mut ids: Vec<_> = c.label_ids().map(|n| n.as_str()).collect();
        assert!(c.ranked_labels[0].score >= c.ranked_labels[1].score);
        ids.sort();
        assert_eq!(ids, ["A1", "B1"]);
    }

    #[test]
    fn single_node_taxonomy_scores_that_node() {
        let t =
            Taxonomy::from_nodes("d", vec![TaxonomyNode::new("root", "voice call", None)]).unwrap();
        let e = Embedder::new(ProviderConfig::deterministic(64)).unwrap();
        let cfg = ClassifierConfig {
            policy: EligibilityPolicy::All,
            ..config(1)
        };
        let a = ArtifactRecord::new("x", ArtifactKind::Other, "Voice call setup");
        let c = classify_artifact(&a, &t, &cfg, &e).unwrap();
        assert_eq!(c.ranked_labels.len(), 1);
        let v = e.embed_texts(&["Voice call setup", "voice call"]).unwrap();
        assert_eq!(c.ranked_labels[0].score, cosine(&v[0], &v[1]).unwrap());
    }

    #[test]
    fn errors() {
        let e = Embedder::new(ProviderConfig::deterministic(64)).unwrap();
        let empty = ArtifactRecord::new("x", ArtifactKind::Other, "   ");
        assert!(matches!(
            classify_artifact(&empty, &voice(), &config(2), &e),
            Err(ClassifyError::EmptyArtifactBody(_))
        ));
        assert!(matches!(
            classify_artifact(&r1(), &voice(), &config(0), &e),
            Err(ClassifyError::InvalidConfig(_))
        ));
        let dup = vec![r1(), r1()];
        assert!(matches!(
            classify_corpus(&dup, &voice(), &config(2), &e),
            Err(ClassifyError::DuplicateArtifactId(_))
        ));
        assert!(classify_corpus(&[], &voice(), &config(2), &e)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn ties_break_by_node_id() {
        let v = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        let classes = vec![
            (NodeId::from("c"), v.clone()),
            (NodeId::from("a"), v.clone()),
            (NodeId::from("b"), v.clone()),
        ];
        let ranked = rank_labels(&v, &classes, 2).unwrap();
        let ids: Vec<_> = ranked.iter().map(|l| l.node_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn scaling_embeddings_keeps_rank_order() {
        let e = Embedder::new(ProviderConfig::deterministic(64)).unwrap();
        let texts = [
            "voice call",
            "subscriber",
            "charging data record",
            "online charging",
            "tariff",
        ];
        let vs = e.embed_texts(&texts).unwrap();
        let classes: Vec<_> = texts
            .iter()
            .zip(&vs)
            .map(|(t, v)| (NodeId::from(*t), v.clone()))
            .collect();
        let scaled: Vec<_> = classes
            .iter()
            .map(|(id, v)| (id.clone(), v.scaled(7.5)))
            .collect();
        let q = e
            .embed_texts(&["subscriber places a voice call"])
            .unwrap()
            .pop()
            .unwrap();
        let a: Vec<_> = rank_labels(&q, &classes, 5)
            .unwrap()
            .into_iter()
            .map(|l| l.node_id)
            .collect();
        let b: Vec<_> = rank_labels(&q.scaled(0.25), &scaled, 5)
            .unwrap()
            .into_iter()
            .map(|l| l.node_id)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let e = Embedder::new(ProviderConfig::deterministic(64)).unwrap();
        let cfg = config(2);
        let clf = Classifier::new(&voice(), cfg.clone(), &e).unwrap();
        let items = clf.classify_corpus(&[r1()]).unwrap();
        let text = classifications_to_csv(&items, &dump_metadata(&cfg, clf.fingerprint()));
        assert!(text.contains("artifact_id,rank,node_id,score\n"));
        let (meta, back) = parse_classifications(&text).unwrap();
        assert_eq!(meta["k"], "2");
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].fingerprint, clf.fingerprint());
        let ids: Vec<_> = back[0].label_ids().collect();
        let orig: Vec<_> = items[0].label_ids().collect();
        assert_eq!(ids, orig);
        assert_eq!(classifications_to_csv(&back, &meta), text);
    }
}
