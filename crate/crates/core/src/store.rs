//! On-disk project workspace.
//!
//! ```text
//! manifest.json
//! taxonomy.csv
//! corpora/source.jsonl, corpora/target.jsonl
//! classifications/<fingerprint>.csv
//! candidates/<fingerprint>-lc<lc>.csv
//! decisions.log
//! exports/accepted.csv
//! ground_truth.csv            (optional)
//! ```
//!
//! `decisions.log` is append-only. Each line is
//! `{"crc32":"<hex>","entry":<decision json>}` where the checksum covers the
//! exact bytes of the entry; lines that fail to parse or verify (such as a
//! write torn by a crash) are skipped on load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::classifier::{
    classifications_to_csv, dump_metadata, parse_classifications, Classification, Classifier,
    ClassifierConfig, ClassifyError,
};
use crate::corpus::{corpus_to_jsonl, parse_corpus, ArtifactRecord, CorpusError};
use crate::embedding::{Embedder, EmbeddingError};
use crate::evaluation::{
    candidate_stats, ground_truth_to_csv, parse_ground_truth, sweep_evaluate, CandidateStats,
    EvalError, GroundTruth, SweepCurve,
};
use crate::taxonomy::{parse_taxonomy, to_csv, LoadOptions, NodeId, Taxonomy, TaxonomyError};
use crate::tracelinks::{
    candidates_to_csv, derive_links, parse_candidates, LinkConfig, LinkError, LinkStatus, PairKey,
    TraceLinkCandidate,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0} exists and is not empty")]
    PathNotEmpty(PathBuf),
    #[error("{0} is not a project workspace")]
    NotAProject(PathBuf),
    #[error("project has no taxonomy")]
    MissingTaxonomy,
    #[error("project has no {0} corpus")]
    MissingCorpus(&'static str),
    #[error("no candidate links {0} and {1}")]
    UnknownCandidate(String, String),
    #[error("project has no ground truth")]
    NoGroundTruth,
    #[error("project has not been run yet")]
    NoRun,
    #[error("artifact id `{0}` appears in both corpora")]
    IdCollision(String),
    #[error("unsupported workspace format {0}")]
    Format(u32),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

impl StoreError {
    /// True when the failure came from the embedding provider.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            StoreError::Embedding(EmbeddingError::ProviderUnavailable(_))
                | StoreError::Classify(ClassifyError::Embedding(
                    EmbeddingError::ProviderUnavailable(_)
                ))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusRole {
    Source,
    Target,
}

impl CorpusRole {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusRole::Source => "source",
            CorpusRole::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub lc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub name: String,
    pub classifier: ClassifierConfig,
    pub link: LinkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_run: Option<RunRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

impl Verdict {
    pub fn status(self) -> LinkStatus {
        match self {
            Verdict::Accepted => LinkStatus::Accepted,
            Verdict::Rejected => LinkStatus::Rejected,
        }
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accepted" | "accept" => Ok(Verdict::Accepted),
            "rejected" | "reject" => Ok(Verdict::Rejected),
            other => Err(format!(
                "unknown verdict `{other}` (use accepted or rejected)"
            )),
        }
    }
}

/// A human judgment on one candidate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VetDecision {
    pub source_id: String,
    pub target_id: String,
    pub verdict: Verdict,
    pub actor: String,
    /// RFC 3339.
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Classifier fingerprint of the candidate set the decision was made on.
    pub fingerprint: String,
    /// Shared labels at decision time.
    #[serde(default)]
    pub matched_labels: Vec<NodeId>,
}

impl VetDecision {
    pub fn new(source_id: &str, target_id: &str, verdict: Verdict, actor: &str) -> Self {
        VetDecision {
            source_id: source_id.to_string(),
            target_id: target_id.to_string(),
            verdict,
            actor: actor.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            note: None,
            fingerprint: String::new(),
            matched_labels: Vec::new(),
        }
    }

    pub fn key(&self) -> PairKey {
        PairKey::new(&self.source_id, &self.target_id)
    }
}

/// Latest verdict for a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveVerdict {
    pub decision: VetDecision,
    /// The decision was made under a different classifier configuration.
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub fingerprint: String,
    pub k: usize,
    pub lc: usize,
    pub provider: String,
    pub model: String,
    pub sources: usize,
    pub targets: usize,
    pub candidates: usize,
    pub stats: CandidateStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    root: PathBuf,
    manifest: Manifest,
    taxonomy: Option<Taxonomy>,
    sources: Vec<ArtifactRecord>,
    targets: Vec<ArtifactRecord>,
    ground_truth: Option<GroundTruth>,
    classifications: Vec<Classification>,
    candidates: Vec<TraceLinkCandidate>,
    decisions: Vec<VetDecision>,
}

const SUBDIRS: [&str; 4] = ["corpora", "classifications", "candidates", "exports"];

impl Project {
    /// Creates a skeleton workspace at `path`, which must be absent or empty.
    pub fn init(path: &Path, name: &str) -> Result<Project, StoreError> {
        if path.exists() {
            let mut entries = fs::read_dir(path).map_err(io_err(path))?;
            if entries.next().is_some() {
                return Err(StoreError::PathNotEmpty(path.to_path_buf()));
            }
        }
        for dir in SUBDIRS {
            let d = path.join(dir);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        let project = Project {
            root: path.to_path_buf(),
            manifest: Manifest {
                format: FORMAT_VERSION,
                name: name.to_string(),
                classifier: ClassifierConfig::default(),
                link: LinkConfig::new(2),
                last_run: None,
            },
            taxonomy: None,
            sources: Vec::new(),
            targets: Vec::new(),
            ground_truth: None,
            classifications: Vec::new(),
            candidates: Vec::new(),
            decisions: Vec::new(),
        };
        write_atomic(&path.join("decisions.log"), b"")?;
        project.save_manifest()?;
        Ok(project)
    }

    pub fn load(path: &Path) -> Result<Project, StoreError> {
        let manifest_path = path.join("manifest.json");
        if !manifest_path.is_file() {
            return Err(StoreError::NotAProject(path.to_path_buf()));
        }
        let manifest: Manifest =
            serde_json::from_str(&read(&manifest_path)?).map_err(|source| StoreError::Json {
                path: manifest_path.clone(),
                source,
            })?;
        if manifest.format != FORMAT_VERSION {
            return Err(StoreError::Format(manifest.format));
        }
        let taxonomy = match read_optional(&path.join("taxonomy.csv"))? {
            Some(text) => Some(parse_taxonomy(
                &text,
                &manifest.name,
                LoadOptions::default(),
            )?),
            None => None,
        };
        let corpus = |role: CorpusRole| -> Result<Vec<ArtifactRecord>, StoreError> {
            match read_optional(
                &path
                    .join("corpora")
                    .join(format!("{}.jsonl", role.as_str())),
            )? {
                Some(text) => Ok(parse_corpus(&text)?),
                None => Ok(Vec::new()),
            }
        };
        let sources = corpus(CorpusRole::Source)?;
        let targets = corpus(CorpusRole::Target)?;
        let ground_truth = match read_optional(&path.join("ground_truth.csv"))? {
            Some(text) => Some(parse_ground_truth(&text)?),
            None => None,
        };
        let (classifications, candidates) = match &manifest.last_run {
            Some(run) => {
                let cls = read(
                    &path
                        .join("classifications")
                        .join(format!("{}.csv", run.fingerprint)),
                )?;
                let cands = read(&candidates_path(path, &run.fingerprint, run.lc))?;
                (parse_classifications(&cls)?.1, parse_candidates(&cands)?.1)
            }
            None => (Vec::new(), Vec::new()),
        };
        let decisions = read_decision_log(&path.join("decisions.log"))?;
        Ok(Project {
            root: path.to_path_buf(),
            manifest,
            taxonomy,
            sources,
            targets,
            ground_truth,
            classifications,
            candidates,
            decisions,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn taxonomy(&self) -> Option<&Taxonomy> {
        self.taxonomy.as_ref()
    }

    pub fn sources(&self) -> &[ArtifactRecord] {
        &self.sources
    }

    /// Target artifacts; the source corpus in same-corpus mode.
    pub fn targets(&self) -> &[ArtifactRecord] {
        if self.manifest.link.same_corpus {
            &self.sources
        } else {
            &self.targets
        }
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn decisions(&self) -> &[VetDecision] {
        &self.decisions
    }

    /// Re-reads the decision log, which is authoritative over memory.
    pub fn reload_decisions(&mut self) -> Result<(), StoreError> {
        self.decisions = read_decision_log(&self.root.join("decisions.log"))?;
        Ok(())
    }

    pub fn current_fingerprint(&self) -> Option<&str> {
        self.manifest
            .last_run
            .as_ref()
            .map(|r| r.fingerprint.as_str())
    }

    pub fn set_taxonomy(&mut self, t: Taxonomy) -> Result<(), StoreError> {
        write_atomic(&self.root.join("taxonomy.csv"), to_csv(&t).as_bytes())?;
        self.taxonomy = Some(t);
        Ok(())
    }

    pub fn set_corpus(
        &mut self,
        role: CorpusRole,
        records: Vec<ArtifactRecord>,
    ) -> Result<(), StoreError> {
        crate::corpus::check_corpus(&records)?;
        let path = self
            .root
            .join("corpora")
            .join(format!("{}.jsonl", role.as_str()));
        write_atomic(&path, corpus_to_jsonl(&records).as_bytes())?;
        match role {
            CorpusRole::Source => self.sources = records,
            CorpusRole::Target => self.targets = records,
        }
        Ok(())
    }

    pub fn set_ground_truth(&mut self, gt: GroundTruth) -> Result<(), StoreError> {
        write_atomic(
            &self.root.join("ground_truth.csv"),
            ground_truth_to_csv(&gt).as_bytes(),
        )?;
        self.ground_truth = Some(gt);
        Ok(())
    }

    pub fn set_classifier(&mut self, cfg: ClassifierConfig) -> Result<(), StoreError> {
        cfg.validate()?;
        self.manifest.classifier = cfg;
        self.save_manifest()
    }

    pub fn set_link(&mut self, cfg: LinkConfig) -> Result<(), StoreError> {
        if cfg.lc == 0 {
            return Err(LinkError::InvalidLc.into());
        }
        self.manifest.link = cfg;
        self.save_manifest()
    }

    /// Classifies both corpora with the active configuration and derives
    /// candidates, using an embedder cached under the workspace.
    pub fn run(&mut self) -> Result<RunSummary, StoreError> {
        let cache = self.root.join("cache");
        let embedder =
            Embedder::new(self.manifest.classifier.provider.clone())?.with_cache_dir(&cache)?;
        self.run_with(&embedder)
    }

    pub fn run_with(&mut self, embedder: &Embedder) -> Result<RunSummary, StoreError> {
        let taxonomy = self.taxonomy.as_ref().ok_or(StoreError::MissingTaxonomy)?;
        if self.sources.is_empty() {
            return Err(StoreError::MissingCorpus("source"));
        }
        let same = self.manifest.link.same_corpus;
        if !same && self.targets.is_empty() {
            return Err(StoreError::MissingCorpus("target"));
        }
        if !same {
            let ids: HashSet<&str> = self.sources.iter().map(|a| a.id.as_str()).collect();
            if let Some(t) = self.targets.iter().find(|t| ids.contains(t.id.as_str())) {
                return Err(StoreError::IdCollision(t.id.clone()));
            }
        }

        let cfg = self.manifest.classifier.clone();
        let classifier = Classifier::new(taxonomy, cfg.clone(), embedder)?;
        let fingerprint = classifier.fingerprint().to_string();
        let src = classifier.classify_corpus(&self.sources)?;
        let tgt = if same {
            Vec::new()
        } else {
            classifier.classify_corpus(&self.targets)?
        };
        let link = self.manifest.link;
        let candidates = derive_links(&src, if same { &src } else { &tgt }, &link, Some(taxonomy))?;

        let mut all = src;
        all.extend(tgt);
        let meta = dump_metadata(&cfg, &fingerprint);
        let cls_path = self
            .root
            .join("classifications")
            .join(format!("{fingerprint}.csv"));
        let cls_text = classifications_to_csv(&all, &meta);
        write_atomic(&cls_path, cls_text.as_bytes())?;
        // Keep what a reload would see (scores at six decimals).
        let all = parse_classifications(&cls_text)?.1;
        let mut cand_meta = meta;
        cand_meta.insert("lc".into(), link.lc.to_string());
        cand_meta.insert("match_mode".into(), link.match_mode.as_str().into());
        cand_meta.insert("same_corpus".into(), link.same_corpus.to_string());
        write_atomic(
            &candidates_path(&self.root, &fingerprint, link.lc),
            candidates_to_csv(&candidates, &cand_meta).as_bytes(),
        )?;

        self.classifications = all;
        self.candidates = candidates;
        self.manifest.last_run = Some(RunRecord {
            fingerprint: fingerprint.clone(),
            lc: link.lc,
        });
        self.save_manifest()?;

        let possible = if same {
            self.sources.len().saturating_sub(1).max(1)
        } else {
            self.targets.len()
        };
        let stats = candidate_stats(&self.candidates, &self.sources, possible)?;
        Ok(RunSummary {
            fingerprint,
            k: cfg.k,
            lc: link.lc,
            provider: cfg.provider.provider.to_string(),
            model: cfg.provider.model_id,
            sources: self.sources.len(),
            targets: self.targets().len(),
            candidates: self.candidates.len(),
            stats,
        })
    }

    pub fn classification(&self, artifact_id: &str) -> Option<&Classification> {
        self.classifications
            .iter()
            .find(|c| c.artifact_id == artifact_id)
    }

    /// Current candidates with their live status applied, in candidate order.
    pub fn candidates(&self) -> Vec<TraceLinkCandidate> {
        let live = self.live_view();
        self.candidates
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if let Some(v) = live.get(&c.key()) {
                    c.status = v.decision.verdict.status();
                }
                c
            })
            .collect()
    }

    /// Latest decision per pair, folded over the log in order.
    pub fn live_view(&self) -> BTreeMap<PairKey, LiveVerdict> {
        let current = self.current_fingerprint().unwrap_or("");
        let mut out = BTreeMap::new();
        for d in &self.decisions {
            out.insert(
                d.key(),
                LiveVerdict {
                    decision: d.clone(),
                    stale: d.fingerprint != current,
                },
            );
        }
        out
    }

    /// Appends a decision on a current candidate and returns the pair's new
    /// live status.
    pub fn record_decision(&mut self, mut d: VetDecision) -> Result<LinkStatus, StoreError> {
        let key = d.key();
        let candidate = self
            .candidates
            .iter()
            .find(|c| c.key() == key)
            .ok_or_else(|| {
                StoreError::UnknownCandidate(d.source_id.clone(), d.target_id.clone())
            })?;
        d.source_id = candidate.source_id.clone();
        d.target_id = candidate.target_id.clone();
        d.fingerprint = self.current_fingerprint().unwrap_or_default().to_string();
        d.matched_labels = candidate.matched_labels.iter().cloned().collect();
        append_decision(&self.root.join("decisions.log"), &d)?;
        let status = d.verdict.status();
        self.decisions.push(d);
        Ok(status)
    }

    /// Accepted pairs as candidate rows, ordered by canonical pair.
    pub fn accepted_links(&self) -> Vec<TraceLinkCandidate> {
        self.live_view()
            .into_values()
            .filter(|v| v.decision.verdict == Verdict::Accepted)
            .map(|v| TraceLinkCandidate {
                source_id: v.decision.source_id,
                target_id: v.decision.target_id,
                match_count: v.decision.matched_labels.len(),
                matched_labels: v.decision.matched_labels.into_iter().collect(),
                status: LinkStatus::Accepted,
            })
            .collect()
    }

    /// Writes `exports/accepted.csv` and returns its contents.
    pub fn export_accepted(&self) -> Result<String, StoreError> {
        let text = candidates_to_csv(&self.accepted_links(), &BTreeMap::new());
        write_atomic(
            &self.root.join("exports").join("accepted.csv"),
            text.as_bytes(),
        )?;
        Ok(text)
    }

    /// Records an acceptance for every pair of a link file (an export, or any
    /// CSV whose first two columns are source and target ids) that is not
    /// already live-accepted. Returns how many were recorded.
    pub fn import_accepted(&mut self, text: &str, actor: &str) -> Result<usize, StoreError> {
        let (_, body, offset) = crate::csvmeta::split(text);
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(body.as_bytes());
        let live = self.live_view();
        let mut recorded = 0;
        for record in reader.records() {
            let record = record.map_err(|e| LinkError::Format {
                line: e.position().map(|p| p.line()).unwrap_or(0) + offset,
                message: e.to_string(),
            })?;
            let (Some(source), Some(target)) = (record.get(0), record.get(1)) else {
                let line = record.position().map(|p| p.line()).unwrap_or(0) + offset;
                return Err(LinkError::Format {
                    line,
                    message: "expected source_id,target_id".into(),
                }
                .into());
            };
            let (source, target) = (source.trim(), target.trim());
            let already = live
                .get(&PairKey::new(source, target))
                .is_some_and(|v| v.decision.verdict == Verdict::Accepted);
            if !already {
                self.record_decision(VetDecision::new(source, target, Verdict::Accepted, actor))?;
                recorded += 1;
            }
        }
        Ok(recorded)
    }

    /// Scores the stored classifications against the ground truth for each
    /// LC in `lcs`.
    pub fn sweep(&self, lcs: RangeInclusive<usize>) -> Result<SweepCurve, StoreError> {
        let gt = self
            .ground_truth
            .as_ref()
            .ok_or(StoreError::NoGroundTruth)?;
        if self.manifest.last_run.is_none() {
            return Err(StoreError::NoRun);
        }
        let source_ids: HashSet<&str> = self.sources.iter().map(|a| a.id.as_str()).collect();
        let (src, tgt): (Vec<Classification>, Vec<Classification>) = self
            .classifications
            .iter()
            .cloned()
            .partition(|c| source_ids.contains(c.artifact_id.as_str()));
        let link = self.manifest.link;
        let targets = if link.same_corpus { &src } else { &tgt };
        let cfg = &self.manifest.classifier;
        Ok(sweep_evaluate(
            &src,
            targets,
            gt,
            &link,
            lcs,
            self.taxonomy.as_ref(),
            &cfg.provider.model_id,
            cfg.k,
        )?)
    }

    fn save_manifest(&self) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.root.join("manifest.json"), text.as_bytes())
    }
}

fn candidates_path(root: &Path, fingerprint: &str, lc: usize) -> PathBuf {
    root.join("candidates")
        .join(format!("{fingerprint}-lc{lc}.csv"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_optional(path: &Path) -> Result<Option<String>, StoreError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Write to a sibling temp file, then rename over the target.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Serialize)]
struct LogLine<'a> {
    crc32: String,
    entry: &'a RawValue,
}

#[derive(Deserialize)]
struct StoredLine<'a> {
    crc32: String,
    #[serde(borrow)]
    entry: &'a RawValue,
}

/// One self-delimiting, checksummed log line (with trailing newline).
pub fn encode_decision(d: &VetDecision) -> String {
    let entry = serde_json::to_string(d).expect("decision serializes");
    let raw = RawValue::from_string(entry).expect("valid json");
    let line = LogLine {
        crc32: format!("{:08x}", crc32fast::hash(raw.get().as_bytes())),
        entry: &raw,
    };
    let mut s = serde_json::to_string(&line).expect("log line serializes");
    s.push('\n');
    s
}

/// Parses log text, skipping lines that are torn or fail their checksum.
pub fn decode_decisions(text: &str) -> Vec<VetDecision> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<StoredLine>(line).ok().and_then(|l| {
            let ok = l.crc32 == format!("{:08x}", crc32fast::hash(l.entry.get().as_bytes()));
            ok.then(|| serde_json::from_str::<VetDecision>(l.entry.get()).ok())
                .flatten()
        });
        match parsed {
            Some(d) => out.push(d),
            None => log::warn!("decisions.log line {}: damaged entry ignored", i + 1),
        }
    }
    out
}

fn read_decision_log(path: &Path) -> Result<Vec<VetDecision>, StoreError> {
    Ok(read_optional(path)?
        .map(|t| decode_decisions(&t))
        .unwrap_or_default())
}

fn append_decision(path: &Path, d: &VetDecision) -> Result<(), StoreError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    // A previous crash may have left a partial line; start on a fresh one.
    let len = f.metadata().map_err(io_err(path))?.len();
    if len > 0 && !fs::read(path).map_err(io_err(path))?.ends_with(b"\n") {
        f.write_all(b"\n").map_err(io_err(path))?;
    }
    f.write_all(encode_decision(d).as_bytes())
        .map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

/// Per-source candidate lists keyed by artifact id: a candidate belongs to
/// each endpoint that is a source artifact.
pub fn candidates_by_source<'a>(
    sources: &'a [ArtifactRecord],
    candidates: &'a [TraceLinkCandidate],
) -> HashMap<&'a str, Vec<&'a TraceLinkCandidate>> {
    let mut out: HashMap<&str, Vec<&TraceLinkCandidate>> = sources
        .iter()
        .map(|s| (s.id.as_str(), Vec::new()))
        .collect();
    for c in candidates {
        for id in [c.source_id.as_str(), c.target_id.as_str()] {
            if let Some(list) = out.get_mut(id) {
                list.push(c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ArtifactKind;
    use crate::taxonomy::TaxonomyNode;

    fn voice_project(dir: &Path) -> Project {
        let mut p = Project::init(dir, "voice").unwrap();
        let t = Taxonomy::from_nodes(
            "voice",
            vec![
                TaxonomyNode::new("root", "charging", None),
                TaxonomyNode::new("A1", "voice call", Some("root")),
                TaxonomyNode::new("B1", "subscriber", Some("root")),
                TaxonomyNode::new("C1", "roaming", Some("root")),
            ],
        )
        .unwrap();
        p.set_taxonomy(t).unwrap();
        p.set_corpus(
            CorpusRole::Source,
            vec![ArtifactRecord::new(
                "R1",
                ArtifactKind::Requirement,
                "a subscriber starts a voice call",
            )],
        )
        .unwrap();
        p.set_corpus(
            CorpusRole::Target,
            vec![
                ArtifactRecord::new(
                    "TC1",
                    ArtifactKind::TestCase,
                    "voice call setup between subscribers",
                ),
                ArtifactRecord::new(
                    "TC2",
                    ArtifactKind::TestCase,
                    "call to an unavailable subscriber",
                ),
            ],
        )
        .unwrap();
        p.set_classifier(ClassifierConfig {
            k: 2,
            ..ClassifierConfig::default()
        })
        .unwrap();
        p.set_link(LinkConfig::new(1)).unwrap();
        p
    }

    #[test]
    fn init_refuses_non_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "y").unwrap();
        assert!(matches!(
            Project::init(dir.path(), "p"),
            Err(StoreError::PathNotEmpty(_))
        ));
        let fresh = dir.path().join("new");
        Project::init(&fresh, "p").unwrap();
        assert!(fresh.join("manifest.json").is_file());
    }

    #[test]
    fn init_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::init(&dir.path().join("p"), "p").unwrap();
        assert_eq!(Project::load(&dir.path().join("p")).unwrap(), p);
        let mut p = voice_project(&dir.path().join("v"));
        p.run().unwrap();
        assert_eq!(Project::load(p.root()).unwrap(), p);
    }

    #[test]
    fn decisions_supersede_and_persist() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = voice_project(dir.path());
        p.run().unwrap();
        let c = p.candidates()[0].clone();
        let status = p
            .record_decision(VetDecision::new(
                &c.source_id,
                &c.target_id,
                Verdict::Accepted,
                "ann",
            ))
            .unwrap();
        assert_eq!(status, LinkStatus::Accepted);
        p.record_decision(VetDecision::new(
            &c.target_id,
            &c.source_id,
            Verdict::Rejected,
            "bo",
        ))
        .unwrap();
        let p = Project::load(dir.path()).unwrap();
        assert_eq!(p.decisions().len(), 2);
        assert_eq!(p.live_view()[&c.key()].decision.verdict, Verdict::Rejected);
        assert_eq!(p.candidates()[0].status, LinkStatus::Rejected);
        assert!(matches!(
            Project::load(dir.path())
                .unwrap()
                .record_decision(VetDecision::new("R1", "nope", Verdict::Accepted, "x")),
            Err(StoreError::UnknownCandidate(..))
        ));
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = voice_project(dir.path());
        p.run().unwrap();
        let c = p.candidates()[0].clone();
        p.record_decision(VetDecision::new(
            &c.source_id,
            &c.target_id,
            Verdict::Accepted,
            "a",
        ))
        .unwrap();
        let log = dir.path().join("decisions.log");
        let full = encode_decision(&VetDecision::new(
            &c.source_id,
            &c.target_id,
            Verdict::Rejected,
            "a",
        ));
        let mut text = fs::read_to_string(&log).unwrap();
        text.push_str(&full[..full.len() / 2]);
        fs::write(&log, &text).unwrap();
        let mut p = Project::load(dir.path()).unwrap();
        assert_eq!(p.decisions().len(), 1);
        // Appending after a torn tail starts a fresh line.
        p.record_decision(VetDecision::new(
            &c.source_id,
            &c.target_id,
            Verdict::Rejected,
            "a",
        ))
        .unwrap();
        assert_eq!(Project::load(dir.path()).unwrap().decisions().len(), 2);
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let d = VetDecision::new("a", "b", Verdict::Accepted, "x");
        let line = encode_decision(&d).replace("\"x\"", "\"y\"");
        assert!(decode_decisions(&line).is_empty());
        assert_eq!(decode_decisions(&encode_decision(&d)), vec![d]);
    }

    #[test]
    fn export_import_export_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = voice_project(dir.path());
        p.run().unwrap();
        assert_eq!(p.export_accepted().unwrap().lines().count(), 1);
        for c in p.candidates() {
            p.record_decision(VetDecision::new(
                &c.source_id,
                &c.target_id,
                Verdict::Accepted,
                "a",
            ))
            .unwrap();
        }
        let first = p.export_accepted().unwrap();
        assert_eq!(first.lines().count(), 1 + p.candidates().len());
        assert_eq!(p.import_accepted(&first, "import").unwrap(), 0);
        assert_eq!(p.export_accepted().unwrap(), first);

        let dir2 = tempfile::tempdir().unwrap();
        let mut q = voice_project(dir2.path());
        q.run().unwrap();
        assert_eq!(
            q.import_accepted(&first, "import").unwrap(),
            p.candidates().len()
        );
        assert_eq!(q.export_accepted().unwrap(), first);
    }

    #[test]
    fn fingerprint_change_marks_stale() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = voice_project(dir.path());
        p.run().unwrap();
        let c = p.candidates()[0].clone();
        p.record_decision(VetDecision::new(
            &c.source_id,
            &c.target_id,
            Verdict::Accepted,
            "a",
        ))
        .unwrap();
        p.run().unwrap();
        assert!(!p.live_view()[&c.key()].stale);
        p.set_classifier(ClassifierConfig {
            k: 3,
            ..ClassifierConfig::default()
        })
        .unwrap();
        p.run().unwrap();
        let live = p.live_view();
        assert!(live[&c.key()].stale);
        assert_eq!(p.decisions().len(), 1);
    }

    #[test]
    fn sweep_needs_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = voice_project(dir.path());
        p.run().unwrap();
        assert!(matches!(p.sweep(1..=3), Err(StoreError::NoGroundTruth)));
        p.set_ground_truth(GroundTruth::new([("R1", "TC1"), ("R1", "TC2")]).unwrap())
            .unwrap();
        let curve = p.sweep(1..=3).unwrap();
        assert_eq!(curve.points.len(), 3);
        assert_eq!(curve.points[2].candidate_count, 0);
    }
}
