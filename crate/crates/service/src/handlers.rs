use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use ttl_core::corpus::ArtifactRecord;
use ttl_core::embedding::{ProviderConfig, ProviderKind};
use ttl_core::store::{Project, RunSummary, Verdict, VetDecision};
use ttl_core::tracelinks::{LinkStatus, TraceLinkCandidate};

use crate::error::ApiError;
use crate::AppState;

const DEFAULT_LIMIT: usize = 50;
const MAX_LIMIT: usize = 1000;
const DEFAULT_LC_RANGE: (usize, usize) = (1, 15);
const EXCERPT_CHARS: usize = 160;

type ApiResult = Result<Response, ApiError>;

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn parse_usize(name: &str, raw: Option<&str>, default: usize) -> Result<usize, ApiError> {
    match raw {
        None | Some("") => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|_| ApiError::bad_request(format!("`{name}` must be a non-negative integer"))),
    }
}

fn query_error(e: QueryRejection) -> ApiError {
    ApiError::bad_request("malformed query string").with_detail(e.body_text())
}

fn json_error(e: JsonRejection) -> ApiError {
    ApiError::bad_request("malformed request body").with_detail(e.body_text())
}

#[derive(Serialize)]
struct ArtifactSummary<'a> {
    id: &'a str,
    kind: &'static str,
    title: Option<&'a str>,
    excerpt: String,
}

fn summary(a: &ArtifactRecord) -> ArtifactSummary<'_> {
    let body = a.body.trim();
    let excerpt = match body.char_indices().nth(EXCERPT_CHARS) {
        Some((i, _)) => format!("{}...", body[..i].trim_end()),
        None => body.to_string(),
    };
    ArtifactSummary {
        id: &a.id,
        kind: a.kind.as_str(),
        title: a.title.as_deref(),
        excerpt,
    }
}

fn artifacts_by_id(p: &Project) -> HashMap<&str, &ArtifactRecord> {
    p.sources()
        .iter()
        .chain(p.targets())
        .map(|a| (a.id.as_str(), a))
        .collect()
}

pub async fn sources(State(state): State<Arc<AppState>>) -> ApiResult {
    let p = state.project.read().expect("project lock");
    let cands = p.candidates();
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for c in &cands {
        let decided = usize::from(c.status != LinkStatus::Candidate);
        for id in [c.source_id.as_str(), c.target_id.as_str()] {
            let e = counts.entry(id).or_default();
            e.0 += 1;
            e.1 += decided;
        }
    }
    let mut rows: Vec<&ArtifactRecord> = p.sources().iter().collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let items: Vec<Value> = rows
        .into_iter()
        .map(|a| {
            let (n, decided) = counts.get(a.id.as_str()).copied().unwrap_or_default();
            json!({ "artifact": summary(a), "candidates": n, "decided": decided })
        })
        .collect();
    Ok(Json(json!({ "sources": items })).into_response())
}

#[derive(Deserialize)]
pub struct CandidateQuery {
    source_id: Option<String>,
    status: Option<String>,
    offset: Option<String>,
    limit: Option<String>,
}

fn candidate_view(
    p: &Project,
    artifacts: &HashMap<&str, &ArtifactRecord>,
    c: &TraceLinkCandidate,
    stale: bool,
) -> Value {
    let score = |artifact: &str, node: &str| {
        p.classification(artifact)
            .and_then(|cl| cl.ranked_labels.iter().find(|l| l.node_id.as_str() == node))
            .map(|l| round6(l.score))
    };
    let labels: Vec<Value> = c
        .matched_labels
        .iter()
        .map(|id| {
            let title = p
                .taxonomy()
                .and_then(|t| t.node(id.as_str()).ok())
                .map(|n| n.title.as_str());
            json!({
                "id": id.as_str(),
                "title": title,
                "source_score": score(&c.source_id, id.as_str()),
                "target_score": score(&c.target_id, id.as_str()),
            })
        })
        .collect();
    let side = |id: &str| match artifacts.get(id) {
        Some(a) => serde_json::to_value(summary(a)).unwrap_or(Value::Null),
        None => json!({ "id": id }),
    };
    json!({
        "source": side(&c.source_id),
        "target": side(&c.target_id),
        "match_count": c.match_count,
        "matched_labels": labels,
        "status": c.status.as_str(),
        "stale": stale,
    })
}

pub async fn candidates(
    State(state): State<Arc<AppState>>,
    query: Result<Query<CandidateQuery>, QueryRejection>,
) -> ApiResult {
    let Query(q) = query.map_err(query_error)?;
    let offset = parse_usize("offset", q.offset.as_deref(), 0)?;
    let limit = parse_usize("limit", q.limit.as_deref(), DEFAULT_LIMIT)?;
    if limit == 0 || limit > MAX_LIMIT {
        return Err(ApiError::bad_request(format!(
            "`limit` must be between 1 and {MAX_LIMIT}"
        )));
    }
    let status = match q.status.as_deref() {
        None | Some("") => None,
        Some("candidate") => Some(LinkStatus::Candidate),
        Some("accepted") => Some(LinkStatus::Accepted),
        Some("rejected") => Some(LinkStatus::Rejected),
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "unknown status `{other}`, expected candidate, accepted or rejected"
            )))
        }
    };

    let p = state.project.read().expect("project lock");
    let artifacts = artifacts_by_id(&p);
    if let Some(id) = q.source_id.as_deref() {
        if !p.sources().iter().any(|a| a.id == id) {
            return Err(ApiError::not_found(format!("unknown source `{id}`")));
        }
    }
    let live = p.live_view();
    let mut rows: Vec<TraceLinkCandidate> = p
        .candidates()
        .into_iter()
        .filter(|c| match q.source_id.as_deref() {
            Some(id) => c.source_id == id || c.target_id == id,
            None => true,
        })
        .filter(|c| status.is_none_or(|s| c.status == s))
        .collect();
    rows.sort_by(|a, b| {
        b.match_count
            .cmp(&a.match_count)
            .then_with(|| a.source_id.cmp(&b.source_id))
            .then_with(|| a.target_id.cmp(&b.target_id))
    });
    let total = rows.len();
    let items: Vec<Value> = rows
        .iter()
        .skip(offset)
        .take(limit)
        .map(|c| {
            let stale = live.get(&c.key()).is_some_and(|v| v.stale);
            candidate_view(&p, &artifacts, c, stale)
        })
        .collect();
    Ok(Json(json!({
        "total": total,
        "offset": offset,
        "limit": limit,
        "items": items,
    }))
    .into_response())
}

pub async fn taxonomy_node(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult {
    let p = state.project.read().expect("project lock");
    let t = p
        .taxonomy()
        .ok_or_else(|| ApiError::conflict("project has no taxonomy"))?;
    let node = t
        .node(&id)
        .map_err(|_| ApiError::not_found(format!("unknown taxonomy node `{id}`")))?;
    let brief =
        |n: &ttl_core::taxonomy::TaxonomyNode| json!({ "id": n.id.as_str(), "title": n.title });
    let mut breadcrumb = Vec::new();
    for a in t.ancestors(&id).unwrap_or_default() {
        if let Ok(n) = t.node(a.as_str()) {
            breadcrumb.push(brief(n));
        }
    }
    breadcrumb.push(brief(node));
    let children: Vec<Value> = t
        .children(&id)
        .unwrap_or_default()
        .into_iter()
        .map(brief)
        .collect();
    Ok(Json(json!({
        "id": node.id.as_str(),
        "title": node.title,
        "description": node.description,
        "synonyms": node.synonyms,
        "level": t.level(&id).unwrap_or_default(),
        "breadcrumb": breadcrumb,
        "children": children,
    }))
    .into_response())
}

/// Runs `f` once per `Idempotency-Key`; later requests with the same key
/// receive the stored response.
async fn idempotent<F, Fut>(state: &AppState, scope: &str, headers: &HeaderMap, f: F) -> Response
where
    F: FnOnce() -> Fut,
    Fut: std::future::Future<Output = ApiResult>,
{
    let key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(|k| format!("{scope} {k}"));
    if let Some(k) = &key {
        if let Some((code, body)) = state.replies.lock().expect("reply cache").get(k) {
            let code = StatusCode::from_u16(*code).unwrap_or(StatusCode::OK);
            return (code, Json(body.clone())).into_response();
        }
    }
    let (code, body) = match f().await {
        Ok(resp) => return remember(state, key, resp).await,
        Err(e) => (
            e.code.status(),
            serde_json::to_value(&e).unwrap_or(Value::Null),
        ),
    };
    if let Some(k) = key {
        state
            .replies
            .lock()
            .expect("reply cache")
            .insert(k, (code.as_u16(), body.clone()));
    }
    (code, Json(body)).into_response()
}

async fn remember(state: &AppState, key: Option<String>, resp: Response) -> Response {
    let Some(key) = key else { return resp };
    let (parts, body) = resp.into_parts();
    let bytes = match axum::body::to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(_) => return ApiError::internal().into_response(),
    };
    if let Ok(value) = serde_json::from_slice::<Value>(&bytes) {
        state
            .replies
            .lock()
            .expect("reply cache")
            .insert(key, (parts.status.as_u16(), value));
    }
    Response::from_parts(parts, axum::body::Body::from(bytes))
}

#[derive(Deserialize)]
pub struct DecisionBody {
    source_id: String,
    target_id: String,
    verdict: String,
    #[serde(default)]
    actor: Option<String>,
    #[serde(default)]
    note: Option<String>,
}

pub async fn decide(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> Response {
    idempotent(&state, "decisions", &headers, || async {
        let Json(b) = body.map_err(json_error)?;
        let verdict: Verdict = b.verdict.parse().map_err(|_| {
            ApiError::bad_request(format!(
                "unknown verdict `{}`, expected accept or reject",
                b.verdict
            ))
        })?;
        let actor = b
            .actor
            .as_deref()
            .filter(|a| !a.trim().is_empty())
            .unwrap_or("anonymous");
        let mut d = VetDecision::new(&b.source_id, &b.target_id, verdict, actor);
        d.note = b.note.filter(|n| !n.is_empty());
        let mut p = state.project.write().expect("project lock");
        let status = p.record_decision(d)?;
        let recorded = p.decisions().last().expect("decision just appended");
        Ok(Json(json!({
            "source_id": recorded.source_id,
            "target_id": recorded.target_id,
            "status": status.as_str(),
            "timestamp": recorded.timestamp,
            "log_length": p.decisions().len(),
        }))
        .into_response())
    })
    .await
}

#[derive(Deserialize, Default)]
pub struct RunBody {
    k: Option<usize>,
    lc: Option<usize>,
    provider: Option<String>,
    model: Option<String>,
    dim: Option<usize>,
    endpoint: Option<String>,
}

struct RunningGuard<'a>(&'a AppState);

impl Drop for RunningGuard<'_> {
    fn drop(&mut self) {
        self.0.running.store(false, Ordering::SeqCst);
    }
}

fn provider_config(current: &ProviderConfig, b: &RunBody) -> Result<ProviderConfig, ApiError> {
    let kind = match b.provider.as_deref() {
        None => current.provider,
        Some(s) => s.parse::<ProviderKind>().map_err(ApiError::bad_request)?,
    };
    let dim = b.dim.unwrap_or(current.dim);
    let mut cfg = match kind {
        ProviderKind::DeterministicHash => ProviderConfig::deterministic(dim),
        ProviderKind::Remote => {
            let endpoint = b
                .endpoint
                .clone()
                .or_else(|| current.endpoint.clone())
                .ok_or_else(|| ApiError::bad_request("remote provider needs an endpoint"))?;
            let model = b
                .model
                .clone()
                .or_else(|| {
                    (current.provider == ProviderKind::Remote).then(|| current.model_id.clone())
                })
                .ok_or_else(|| ApiError::bad_request("remote provider needs a model"))?;
            ProviderConfig::remote(endpoint, model, dim)
        }
    };
    if kind == current.provider {
        cfg.batch_size = current.batch_size;
        cfg.max_in_flight = current.max_in_flight;
    }
    Ok(cfg)
}

fn run_view(s: &RunSummary) -> Value {
    let per_source: BTreeMap<&str, usize> = s
        .stats
        .per_source
        .iter()
        .map(|(id, n)| (id.as_str(), *n))
        .collect();
    json!({
        "fingerprint": s.fingerprint,
        "k": s.k,
        "lc": s.lc,
        "provider": s.provider,
        "model": s.model,
        "sources": s.sources,
        "targets": s.targets,
        "candidates": s.candidates,
        "stats": {
            "mean": round6(s.stats.mean),
            "sd": round6(s.stats.sd),
            "min": s.stats.min,
            "max": s.stats.max,
            "possible_links": s.stats.possible_links,
            "per_source": per_source,
        },
    })
}

pub async fn run(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<RunBody>, JsonRejection>,
) -> Response {
    let st = state.clone();
    idempotent(&state, "runs", &headers, || async move {
        let b = match body {
            Ok(Json(b)) => b,
            Err(JsonRejection::MissingJsonContentType(_)) => RunBody::default(),
            Err(e) => return Err(json_error(e)),
        };
        if b.k == Some(0) {
            return Err(ApiError::bad_request("`k` must be at least 1"));
        }
        if b.lc == Some(0) {
            return Err(ApiError::bad_request("`lc` must be at least 1"));
        }
        if st.running.swap(true, Ordering::SeqCst) {
            return Err(ApiError::conflict("a run is already in progress"));
        }
        let _guard = RunningGuard(&st);

        let mut p = st.project();
        let mut classifier = p.manifest().classifier.clone();
        if let Some(k) = b.k {
            classifier.k = k;
        }
        classifier.provider = provider_config(&classifier.provider, &b)?;
        let mut link = p.manifest().link;
        if let Some(lc) = b.lc {
            link.lc = lc;
        }
        p.set_classifier(classifier)?;
        p.set_link(link)?;

        let (mut p, summary) = tokio::task::spawn_blocking(move || p.run().map(|s| (p, s)))
            .await
            .map_err(|e| {
                log::error!("run task failed: {e}");
                ApiError::internal()
            })??;
        // Decisions may have been appended while the run was in flight.
        p.reload_decisions()?;
        *st.project.write().expect("project lock") = p;
        Ok(Json(run_view(&summary)).into_response())
    })
    .await
}

#[derive(Deserialize)]
pub struct MetricsQuery {
    lc_from: Option<String>,
    lc_to: Option<String>,
}

pub async fn metrics(
    State(state): State<Arc<AppState>>,
    query: Result<Query<MetricsQuery>, QueryRejection>,
) -> ApiResult {
    let Query(q) = query.map_err(query_error)?;
    let from = parse_usize("lc_from", q.lc_from.as_deref(), DEFAULT_LC_RANGE.0)?;
    let to = parse_usize("lc_to", q.lc_to.as_deref(), DEFAULT_LC_RANGE.1)?;
    if from == 0 || from > to {
        return Err(ApiError::bad_request(format!(
            "invalid LC range {from}..={to}, expected 1 <= lc_from <= lc_to"
        )));
    }
    let p = state.project();
    let curve = tokio::task::spawn_blocking(move || p.sweep(from..=to))
        .await
        .map_err(|e| {
            log::error!("sweep task failed: {e}");
            ApiError::internal()
        })??;
    let rows: Vec<Value> = curve
        .points
        .iter()
        .map(|m| {
            json!({
                "lc": m.lc,
                "candidates": m.candidate_count,
                "tp": m.true_positives,
                "fp": m.false_positives,
                "fn": m.false_negatives,
                "precision": round6(m.precision),
                "recall": round6(m.recall),
                "f1": round6(m.f1),
            })
        })
        .collect();
    Ok(Json(json!({
        "model_id": curve.model_id,
        "k": curve.k,
        "ground_truth": "closed-world",
        "rows": rows,
    }))
    .into_response())
}

pub async fn unknown_route() -> ApiError {
    ApiError::not_found("no such endpoint")
}
