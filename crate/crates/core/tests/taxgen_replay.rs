//! Recorded taxgen transcripts under `fixtures/taxgen`. Set `TTL_BLESS=1` to
//! re-record them after an intentional prompt or driver change.

use std::path::PathBuf;

use ttl_core::synth::{scripted_conversation, shaped_taxonomy};
use ttl_core::taxgen::{
    dedupe_nodes, generate_taxonomy, run_strategy, transcript_to_json, DedupPolicy, ReplayClient,
    ScriptedClient, StrategyKind, StrategySpec,
};

const KINDS: [StrategyKind; 3] = [
    StrategyKind::AllAtOnce,
    StrategyKind::BottomUp,
    StrategyKind::LevelBranch,
];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/taxgen")
        .join(name)
}

/// Chat-style replies for a small charging outline, with the formatting
/// noise live models produce.
fn charging_replies() -> Vec<String> {
    vec![
        "Sure. Before I begin: how many levels of granularity should the taxonomy have?"
            .to_string(),
        "Here is a taxonomy of charging concepts:\n\n\
         ### 1. Rating - turning usage into a price\n\
         - **1.1. Tariff** - price plan applied to a subscriber\n\
         - **1.2. Rating group** - bucket of services priced together\n\
         \x20 - 1.2.1. Zero rating: traffic that is not charged\n\
         ### 2. Balance management\n\
         - 2.1. Top-up - adding credit to a prepaid account\n\
         - 2.2. Reservation - credit held while a session runs\n\
         - 2.3. Top-up - voucher or card based refill\n\
         ### 3. Session charging\n\
         - 3.1. Voice call charging - per-minute charging of calls\n\
         - 3.2. Data session charging - volume based charging\n\n\
         Would you like me to expand any branch?"
            .to_string(),
    ]
}

fn recordings() -> Vec<(String, StrategySpec, Vec<String>)> {
    let source = shaped_taxonomy(30, 12, 4, 5).unwrap();
    let mut out: Vec<(String, StrategySpec, Vec<String>)> = KINDS
        .iter()
        .map(|&kind| {
            let conv = scripted_conversation(&source, kind);
            (format!("{kind}.json"), conv.spec, conv.replies)
        })
        .collect();
    out.push((
        "charging_all_at_once.json".to_string(),
        StrategySpec::paper_faithful(StrategyKind::AllAtOnce),
        charging_replies(),
    ));
    out
}

#[test]
fn recorded_transcripts_are_current() {
    let bless = std::env::var_os("TTL_BLESS").is_some();
    for (name, spec, replies) in recordings() {
        let run = run_strategy(&spec, &ScriptedClient::new(replies)).unwrap();
        let json = transcript_to_json(&run.transcript);
        if bless {
            std::fs::create_dir_all(fixture("")).unwrap();
            std::fs::write(fixture(&name), &json).unwrap();
        }
        let recorded = std::fs::read_to_string(fixture(&name)).unwrap();
        assert_eq!(recorded, json, "{name} is stale; rerun with TTL_BLESS=1");
    }
}

#[test]
fn every_strategy_replays_into_a_valid_taxonomy() {
    let source = shaped_taxonomy(30, 12, 4, 5).unwrap();
    for kind in KINDS {
        let text = std::fs::read_to_string(fixture(&format!("{kind}.json"))).unwrap();
        let client = ReplayClient::from_json(&text).unwrap();
        let (t, _) = generate_taxonomy(
            &StrategySpec::paper_faithful(kind),
            &client,
            "replayed",
            "synthetic",
        )
        .unwrap();
        assert!(t.validate().is_empty(), "{kind}: {:?}", t.validate());
        assert_eq!(t.stats(), source.stats(), "{kind}");
        assert_eq!(
            t.provenance().get("strategy").map(String::as_str),
            Some(kind.as_str())
        );
    }
}

#[test]
fn noisy_transcript_parses_and_dedupes() {
    let text = std::fs::read_to_string(fixture("charging_all_at_once.json")).unwrap();
    let client = ReplayClient::from_json(&text).unwrap();
    let spec = StrategySpec::paper_faithful(StrategyKind::AllAtOnce);
    let (t, run) = generate_taxonomy(&spec, &client, "charging", "none").unwrap();
    assert_eq!(run.lines.len(), 11);
    // Synthesized root above the 11 outline nodes.
    assert_eq!(t.len(), 12);
    let (deduped, report) = dedupe_nodes(&t, DedupPolicy::WithinBranch).unwrap();
    assert_eq!(report.len(), 1);
    assert_eq!(report.removals[0].title.to_lowercase(), "top-up");
    assert_eq!(deduped.len(), 11);
    let zero = deduped.node("1.2.1").unwrap();
    assert_eq!(zero.parent.as_ref().map(|p| p.as_str()), Some("1.2"));
    assert_eq!(
        zero.description.as_deref(),
        Some("traffic that is not charged")
    );
}

#[test]
fn diverging_request_is_rejected() {
    let text = std::fs::read_to_string(fixture("bottom_up.json")).unwrap();
    let client = ReplayClient::from_json(&text).unwrap();
    let mut spec = StrategySpec::paper_faithful(StrategyKind::BottomUp);
    spec.corpus = vec!["an extra document changes the first request".to_string()];
    let err = run_strategy(&spec, &client).unwrap_err();
    assert!(err.to_string().contains("turn"), "{err}");
}

#[test]
fn sixty_eight_node_outline_yields_sixty_eight_lines() {
    // 50 leaves and 18 categories under the synthesized root.
    let source = shaped_taxonomy(50, 18, 3, 21).unwrap();
    let conv = scripted_conversation(&source, StrategyKind::AllAtOnce);
    let run = run_strategy(&conv.spec, &ScriptedClient::new(conv.replies)).unwrap();
    assert_eq!(run.lines.len(), 68);
    let replay = ReplayClient::from_json(&transcript_to_json(&run.transcript)).unwrap();
    let (t, again) = generate_taxonomy(&conv.spec, &replay, "t1", "none").unwrap();
    assert_eq!(again.lines, run.lines);
    assert_eq!(t.len(), 69);
}
