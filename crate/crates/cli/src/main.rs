mod config;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ttl_core::classifier::{
    classifications_to_csv, dump_metadata, parse_classifications, Classifier, ClassifierConfig,
    ClassifyError,
};
use ttl_core::corpus::{parse_corpus, read_corpus, write_corpus};
use ttl_core::embedding::{Embedder, EmbeddingError};
use ttl_core::evaluation::{
    curve_from_candidates, curve_to_csv, ground_truth_to_csv, parse_ground_truth, select_config,
    Objective,
};
use ttl_core::store::{CorpusRole, Project, StoreError};
use ttl_core::synth;
use ttl_core::taxgen::{
    dedupe_nodes, generate_taxonomy, transcript_to_json, ChatClient, DedupPolicy, HttpChatClient,
    ReplayClient, StrategyKind, StrategySpec, TaxgenError,
};
use ttl_core::taxonomy::{read_taxonomy, to_csv, write_taxonomy, LoadOptions, Severity};
use ttl_core::tracelinks::{
    candidates_to_csv, derive_links, parse_candidates, LinkConfig, MatchMode,
};

use config::{FileConfig, ProviderFlags};

/// LC used by `link` when neither a flag nor ttl.toml sets one.
const DEFAULT_LC: usize = 2;

#[derive(Parser)]
#[command(name = "ttl", version, about = "Taxonomy-based trace link recovery")]
struct Cli {
    /// Configuration file (defaults to ./ttl.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for classification (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check or summarize a taxonomy file.
    Taxonomy {
        #[command(subcommand)]
        action: TaxonomyAction,
    },
    /// Assign top-K taxonomy labels to every artifact in a corpus.
    Classify(ClassifyArgs),
    /// Derive trace-link candidates from two classification files.
    Link(LinkArgs),
    /// Score candidates against ground truth, optionally over an LC sweep.
    Eval(EvalArgs),
    /// Generate a taxonomy through a chat model or a recorded transcript.
    Taxgen(TaxgenArgs),
    /// Serve a project workspace over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic taxonomy, corpora and ground truth.
    Fixture(FixtureArgs),
    /// Manage a project workspace.
    Project {
        #[command(subcommand)]
        action: ProjectAction,
    },
}

#[derive(Subcommand)]
enum TaxonomyAction {
    /// Exit 1 and list violations when the file is not a valid tree.
    Validate {
        file: PathBuf,
        /// Accept several top-level nodes by adding a root above them.
        #[arg(long)]
        synthesize_root: bool,
    },
    /// Print `n=..., l=..., c=..., d=...`.
    Stats {
        file: PathBuf,
        #[arg(long)]
        synthesize_root: bool,
    },
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    /// JSONL corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    provider: ProviderFlags,
    /// Directory for the persistent embedding cache.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LinkArgs {
    /// Classification CSV of the source artifacts.
    #[arg(long)]
    sources: PathBuf,
    /// Classification CSV of the target artifacts.
    #[arg(long, required_unless_present = "same_corpus")]
    targets: Option<PathBuf>,
    /// Minimum number of shared labels.
    #[arg(long)]
    lc: Option<usize>,
    /// Link the source artifacts among themselves.
    #[arg(long, conflicts_with = "targets")]
    same_corpus: bool,
    /// `exact` or `ancestor_rollup`.
    #[arg(long, default_value = "exact")]
    match_mode: MatchMode,
    /// Taxonomy, needed for ancestor roll-up.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Candidate CSV; repeat to compare configurations.
    #[arg(long, required = true)]
    candidates: Vec<PathBuf>,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Inclusive LC range such as `1..15`.
    #[arg(long, value_parser = parse_range)]
    sweep: Option<(usize, usize)>,
    /// `recall_floor=<x>` or `max_f1`; prints the chosen operating point.
    #[arg(long)]
    select: Option<Objective>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TaxgenArgs {
    #[arg(long)]
    strategy: StrategyKind,
    /// Chat service URL, or `replay:FILE` for a recorded transcript.
    #[arg(long)]
    client: String,
    /// Model id sent to the chat service.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Directory of documents offered as context, read in file-name order.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Taxonomy output (`.json` or CSV).
    #[arg(long)]
    out: PathBuf,
    /// Transcript output (default: next to the taxonomy).
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// `within_branch` or `global_title`.
    #[arg(long, default_value = "within_branch")]
    dedup: DedupPolicy,
    /// Taxonomy name and root title.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Answer to the granularity question (all_at_once).
    #[arg(long)]
    granularity: Option<String>,
    /// Depth requested per branch (level_branch).
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    project: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Directory of static UI assets served outside `/api`.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 456)]
    leaves: usize,
    #[arg(long, default_value_t = 218)]
    categories: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 100)]
    sources: usize,
    #[arg(long, default_value_t = 400)]
    targets: usize,
    /// Near-duplicate nodes to inject into the taxonomy.
    #[arg(long, default_value_t = 0)]
    duplicates: usize,
}

#[derive(Subcommand)]
enum ProjectAction {
    /// Create a workspace and import its inputs.
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, conflicts_with = "targets")]
        same_corpus: bool,
    },
    /// Classify both corpora and derive candidates.
    Run {
        #[arg(long)]
        dir: PathBuf,
        #[command(flatten)]
        provider: ProviderFlags,
        #[arg(long)]
        lc: Option<usize>,
    },
    /// Write accepted links as CSV.
    Export {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record every pair of a `source_id,target_id` CSV as accepted.
    Import {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value = "import")]
        actor: String,
    },
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected an LC range like 1..15, got `{s}`");
    let (lo, hi) = match s.split_once("..") {
        Some((lo, hi)) => (lo, hi.strip_prefix('=').unwrap_or(hi)),
        None => (s, s),
    };
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_taxonomy(path: &Path, synthesize_root: bool) -> Result<ttl_core::taxonomy::Taxonomy> {
    read_taxonomy(path, LoadOptions { synthesize_root })
        .with_context(|| format!("loading {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for provider or transport failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    fn classify_down(e: &ClassifyError) -> bool {
        match e {
            ClassifyError::Embedding(EmbeddingError::ProviderUnavailable(_)) => true,
            ClassifyError::Artifact { source, .. } => classify_down(source),
            _ => false,
        }
    }
    let provider_down = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<EmbeddingError>(),
            Some(EmbeddingError::ProviderUnavailable(_))
        ) || c.downcast_ref::<ClassifyError>().is_some_and(classify_down)
            || c.downcast_ref::<StoreError>()
                .is_some_and(StoreError::is_provider_failure)
            || matches!(
                c.downcast_ref::<TaxgenError>(),
                Some(TaxgenError::Client(_))
            )
    });
    if provider_down {
        3
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Taxonomy { action } => taxonomy(action),
        Command::Classify(args) => classify(args, &file),
        Command::Link(args) => link(args, &file),
        Command::Eval(args) => eval(args),
        Command::Taxgen(args) => taxgen(args),
        Command::Serve(args) => serve(args),
        Command::Fixture(args) => fixture(args),
        Command::Project { action } => project(action, &file),
    }
}

fn taxonomy(action: TaxonomyAction) -> Result<()> {
    match action {
        TaxonomyAction::Validate {
            file,
            synthesize_root,
        } => {
            let t = load_taxonomy(&file, synthesize_root)?;
            for v in t.validate() {
                let level = if v.severity() == Severity::Error {
                    "error"
                } else {
                    "warning"
                };
                eprintln!("{level}: {v}");
            }
            if t.validate().iter().any(|v| v.severity() == Severity::Error) {
                bail!("{} is not a valid taxonomy", file.display());
            }
            println!("{}", t.stats());
        }
        TaxonomyAction::Stats {
            file,
            synthesize_root,
        } => {
            println!("{}", load_taxonomy(&file, synthesize_root)?.stats());
        }
    }
    Ok(())
}

fn classify(args: ClassifyArgs, file: &FileConfig) -> Result<()> {
    let t = load_taxonomy(&args.taxonomy, false)?;
    let corpus =
        read_corpus(&args.corpus).with_context(|| format!("loading {}", args.corpus.display()))?;
    let cfg = args.provider.resolve(file, &ClassifierConfig::default())?;
    let mut embedder = Embedder::new(cfg.provider.clone())?;
    if let Some(dir) = &args.cache {
        embedder = embedder.with_cache_dir(dir)?;
    }
    let clf = Classifier::new(&t, cfg.clone(), &embedder)?;
    let items = clf.classify_corpus(&corpus)?;
    log::info!("classified {} artifacts", items.len());
    emit(
        args.out.as_deref(),
        &classifications_to_csv(&items, &dump_metadata(&cfg, clf.fingerprint())),
    )
}

fn link(args: LinkArgs, file: &FileConfig) -> Result<()> {
    let (meta, src) = parse_classifications(&read(&args.sources)?)
        .with_context(|| format!("parsing {}", args.sources.display()))?;
    let tgt = match &args.targets {
        Some(p) => {
            parse_classifications(&read(p)?)
                .with_context(|| format!("parsing {}", p.display()))?
                .1
        }
        None => src.clone(),
    };
    let taxonomy = args
        .taxonomy
        .as_deref()
        .map(|p| load_taxonomy(p, false))
        .transpose()?;
    let mut cfg =
        LinkConfig::new(args.lc.or(file.lc).unwrap_or(DEFAULT_LC)).same_corpus(args.same_corpus);
    cfg.match_mode = args.match_mode;
    let cands = derive_links(&src, &tgt, &cfg, taxonomy.as_ref())?;
    let mut out_meta: BTreeMap<String, String> = ["fingerprint", "model", "k"]
        .into_iter()
        .filter_map(|k| meta.get(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    out_meta.insert("lc".into(), cfg.lc.to_string());
    out_meta.insert("match_mode".into(), cfg.match_mode.as_str().into());
    out_meta.insert("same_corpus".into(), cfg.same_corpus.to_string());
    emit(args.out.as_deref(), &candidates_to_csv(&cands, &out_meta))
}

fn eval(args: EvalArgs) -> Result<()> {
    let gt = parse_ground_truth(&read(&args.ground_truth)?)
        .with_context(|| format!("parsing {}", args.ground_truth.display()))?;
    let mut curves = Vec::new();
    for path in &args.candidates {
        let (meta, cands) = parse_candidates(&read(path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        let derived_at: usize = meta.get("lc").and_then(|v| v.parse().ok()).unwrap_or(1);
        let (lo, hi) = args.sweep.unwrap_or((derived_at, derived_at));
        if lo < derived_at {
            bail!(
                "{} was derived at LC={derived_at}; a sweep over it must start at {derived_at} or above",
                path.display()
            );
        }
        let model = meta.get("model").map_or("unknown", String::as_str);
        let k = meta.get("k").and_then(|v| v.parse().ok()).unwrap_or(0);
        curves.push(curve_from_candidates(&cands, &gt, lo..=hi, model, k)?);
    }
    let mut text = String::new();
    for (i, curve) in curves.iter().enumerate() {
        let csv = curve_to_csv(curve);
        if i == 0 {
            text.push_str(&csv);
        } else {
            // Later curves share the first one's metadata and header.
            text.extend(
                csv.lines()
                    .filter(|l| !l.starts_with('#'))
                    .skip(1)
                    .map(|l| format!("{l}\n")),
            );
        }
    }
    emit(args.out.as_deref(), &text)?;
    if let Some(objective) = args.select {
        println!("{}", select_config(&curves, objective)?);
    }
    Ok(())
}

/// Documents in `dir`, by file name. JSONL files contribute one document per
/// record; other files are taken whole.
fn read_documents(dir: &Path) -> Result<Vec<String>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && !p
                    .file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with('.'))
        })
        .collect();
    paths.sort();
    let mut docs = Vec::new();
    for p in paths {
        let text = read(&p)?;
        if p.extension().is_some_and(|e| e == "jsonl") {
            let records =
                parse_corpus(&text).with_context(|| format!("parsing {}", p.display()))?;
            docs.extend(records.iter().map(|r| r.embedding_input()));
        } else if !text.trim().is_empty() {
            docs.push(text);
        }
    }
    Ok(docs)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "taxonomy".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn taxgen(args: TaxgenArgs) -> Result<()> {
    let mut spec = StrategySpec::paper_faithful(args.strategy);
    if let Some(dir) = &args.corpus {
        spec.corpus = read_documents(dir)?;
    }
    if let Some(v) = args.token_budget {
        spec.token_budget = v;
    }
    if let Some(v) = args.max_rounds {
        spec.max_rounds = v;
    }
    if let Some(v) = args.granularity {
        spec.granularity_answer = v;
    }
    if let Some(v) = args.depth {
        spec.breakdown_depth = v;
    }
    let client: Box<dyn ChatClient> = match args.client.strip_prefix("replay:") {
        Some(path) => {
            let replay = ReplayClient::from_json(&read(Path::new(path))?)?;
            Box::new(match &args.model {
                Some(m) => replay.with_model(m.clone()),
                None => replay,
            })
        }
        None => {
            let model = args
                .model
                .as_deref()
                .ok_or_else(|| anyhow!("--model is required with a live chat service"))?;
            Box::new(HttpChatClient::new(&args.client, model, args.temperature))
        }
    };
    let name = args.name.unwrap_or_else(|| {
        args.out
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default()
    });
    let data_source = args
        .corpus
        .as_deref()
        .map(|d| d.display().to_string())
        .unwrap_or_else(|| "none".into());
    let (raw, run) = generate_taxonomy(&spec, client.as_ref(), &name, &data_source)?;
    let (t, report) = dedupe_nodes(&raw, args.dedup)?;
    write_taxonomy(&args.out, &t).with_context(|| format!("writing {}", args.out.display()))?;
    let transcript = args
        .transcript
        .unwrap_or_else(|| sibling(&args.out, "transcript.json"));
    emit(Some(&transcript), &transcript_to_json(&run.transcript))?;
    let mut report_json = serde_json::to_string_pretty(&report)?;
    report_json.push('\n');
    emit(Some(&sibling(&args.out, "dedup.json")), &report_json)?;
    eprintln!(
        "{} rounds, {} outline lines, {} duplicates removed",
        run.rounds,
        run.lines.len(),
        report.len()
    );
    println!("{}", t.stats());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let addr = std::net::SocketAddr::new(args.host, args.port);
    rt.block_on(ttl_service::serve(&args.project, addr, args.static_dir))
        .with_context(|| format!("serving {}", args.project.display()))
}

fn fixture(args: FixtureArgs) -> Result<()> {
    let base = synth::shaped_taxonomy(args.leaves, args.categories, args.depth, args.seed)
        .map_err(anyhow::Error::msg)?;
    let t = if args.duplicates > 0 {
        synth::inject_duplicates(&base, args.duplicates, args.seed)
    } else {
        base.clone()
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let (src, tgt, truth) = synth::planted_corpora(&base, args.sources, args.targets, args.seed);
    emit(Some(&args.out.join("taxonomy.csv")), &to_csv(&t))?;
    write_corpus(&args.out.join("sources.jsonl"), &src)?;
    write_corpus(&args.out.join("targets.jsonl"), &tgt)?;
    let gt = ttl_core::evaluation::GroundTruth::new(truth)?;
    emit(
        Some(&args.out.join("ground_truth.csv")),
        &ground_truth_to_csv(&gt),
    )?;
    println!("{}", t.stats());
    Ok(())
}

fn project(action: ProjectAction, file: &FileConfig) -> Result<()> {
    match action {
        ProjectAction::Init {
            dir,
            name,
            taxonomy,
            sources,
            targets,
            ground_truth,
            same_corpus,
        } => {
            let mut p = Project::init(&dir, &name)?;
            if let Some(path) = taxonomy {
                p.set_taxonomy(load_taxonomy(&path, false)?)?;
            }
            if let Some(path) = sources {
                p.set_corpus(
                    CorpusRole::Source,
                    read_corpus(&path).with_context(|| format!("loading {}", path.display()))?,
                )?;
            }
            if let Some(path) = targets {
                p.set_corpus(
                    CorpusRole::Target,
                    read_corpus(&path).with_context(|| format!("loading {}", path.display()))?,
                )?;
            }
            if let Some(path) = ground_truth {
                let gt = parse_ground_truth(&read(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?;
                p.set_ground_truth(gt)?;
            }
            let mut link = p.manifest().link;
            link.same_corpus = same_corpus;
            if let Some(lc) = file.lc {
                link.lc = lc;
            }
            p.set_link(link)?;
            let cfg = ProviderFlags::default().resolve(file, &p.manifest().classifier)?;
            p.set_classifier(cfg)?;
            eprintln!("initialized project `{name}`");
        }
        ProjectAction::Run { dir, provider, lc } => {
            let mut p = Project::load(&dir)?;
            let cfg = provider.resolve(file, &p.manifest().classifier)?;
            p.set_classifier(cfg)?;
            if let Some(lc) = lc.or(file.lc) {
                let mut link = p.manifest().link;
                link.lc = lc;
                p.set_link(link)?;
            }
            let s = p.run()?;
            println!("fingerprint={}", s.fingerprint);
            println!(
                "provider={} model={} k={} lc={}",
                s.provider, s.model, s.k, s.lc
            );
            println!(
                "sources={} targets={} candidates={}",
                s.sources, s.targets, s.candidates
            );
            println!(
                "per_source mean={:.6} sd={:.6} min={} max={} possible={}",
                s.stats.mean, s.stats.sd, s.stats.min, s.stats.max, s.stats.possible_links
            );
        }
        ProjectAction::Export { dir, out } => {
            let p = Project::load(&dir)?;
            emit(out.as_deref(), &p.export_accepted()?)?;
        }
        ProjectAction::Import {
            dir,
            file: path,
            actor,
        } => {
            let mut p = Project::load(&dir)?;
            let n = p.import_accepted(&read(&path)?, &actor)?;
            eprintln!("recorded {n} accepted links");
        }
    }
    Ok(())
}
