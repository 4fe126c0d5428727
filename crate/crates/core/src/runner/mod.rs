//! Scenario driver: load, simulate, summarize, check expectations.

pub mod scenario;
pub mod world;

pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError};
pub use world::World;

use crate::adversary::{IntruderKnowledge, PointKind};
use crate::ids::{PlayerId, RoundIndex};
use crate::netsim::Conservation;
use crate::player::AdoptionPath;
use crate::referee::{RoundAudit, VerdictAction};
use crate::wire::{MessageType, RemovalReason};
use scenario::ExpectedOutcome;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeRow {
    pub msg_type: &'static str,
    pub count: usize,
    pub mean_bytes: f64,
    pub min_bytes: usize,
    pub max_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CheatOutcome {
    Detected { round: RoundIndex },
    Survived,
    Disconnected { round: RoundIndex, reason: RemovalReason },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheaterSummary {
    pub player: PlayerId,
    pub strategy: String,
    #[serde(flatten)]
    pub outcome: CheatOutcome,
    pub first_marked: Option<RoundIndex>,
    pub marked_rounds: Vec<RoundIndex>,
    pub dead_reckoned: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstanceResult {
    pub round: RoundIndex,
    pub owner: PlayerId,
    pub honest_owner: bool,
    pub expected: String,
    pub adopted: Option<String>,
    pub path: Option<AdoptionPath>,
    pub success: bool,
    pub span_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstructions {
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub direct: usize,
    pub corrected: usize,
    pub instances: Vec<InstanceResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanStats {
    pub count: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CollusionRecord {
    pub round: RoundIndex,
    pub owner: PlayerId,
    pub pooled_outputs: usize,
    pub k: usize,
    pub derived: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PersistenceRecord {
    pub player: PlayerId,
    pub before: String,
    pub after: Option<String>,
    pub preserved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub rounds_played: usize,
    pub size_table: Vec<SizeRow>,
    pub rounds: Vec<RoundAudit>,
    pub cheaters: Vec<CheaterSummary>,
    pub reconstructions: Reconstructions,
    pub exchange_span: SpanStats,
    pub dead_reckoned: BTreeMap<PlayerId, usize>,
    pub collusion: Vec<CollusionRecord>,
    pub persistence: Vec<PersistenceRecord>,
    pub conservation: Conservation,
    pub log_digest: String,
    pub truncated: bool,
    pub assertions: Vec<AssertionResult>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Human,
    Machine,
}

/// Runs `scenario` to quiescence and returns the world for inspection.
pub fn simulate(scenario: &Scenario, capture: bool) -> World {
    let mut world = World::new(scenario, capture);
    world.run();
    world
}

pub fn run(scenario: &Scenario) -> Report {
    let world = simulate(scenario, false);
    build_report(scenario, &world)
}

fn size_table(world: &World) -> Vec<SizeRow> {
    let mut by_type: BTreeMap<&'static str, Vec<usize>> = BTreeMap::new();
    for r in &world.net.log {
        by_type.entry(r.msg_type).or_default().push(r.byte_len);
    }
    MessageType::ALL
        .iter()
        .filter_map(|t| {
            let v = by_type.get(t.name())?;
            Some(SizeRow {
                msg_type: t.name(),
                count: v.len(),
                mean_bytes: v.iter().sum::<usize>() as f64 / v.len() as f64,
                min_bytes: *v.iter().min().unwrap(),
                max_bytes: *v.iter().max().unwrap(),
            })
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn build_report(scenario: &Scenario, world: &World) -> Report {
    let audit = &world.referee.audit;
    let opened: BTreeMap<RoundIndex, u64> = audit.iter().map(|a| (a.round, a.opened_at)).collect();
    let cheaters: BTreeSet<PlayerId> = scenario.cheaters().into_iter().collect();

    let mut instances = Vec::new();
    for inst in &world.instances {
        let player = &world.players[&inst.owner];
        let last = player.adopted.iter().rev().find(|a| a.round == inst.round);
        let expected = inst.expected.to_string();
        let success = last.is_some_and(|a| a.state == expected);
        instances.push(InstanceResult {
            round: inst.round,
            owner: inst.owner,
            honest_owner: !cheaters.contains(&inst.owner),
            expected,
            adopted: last.map(|a| a.state.clone()),
            path: last.map(|a| a.path),
            success,
            span_ms: last.and_then(|a| opened.get(&inst.round).map(|o| a.at_ms.saturating_sub(*o))),
        });
    }
    let spans: Vec<f64> = instances
        .iter()
        .filter(|i| i.success)
        .filter_map(|i| i.span_ms.map(|s| s as f64))
        .collect();
    let (mean_ms, stddev_ms) = mean_std(&spans);
    let succeeded = instances.iter().filter(|i| i.success).count();
    let reconstructions = Reconstructions {
        attempted: instances.len(),
        succeeded,
        failed: instances.len() - succeeded,
        direct: instances
            .iter()
            .filter(|i| i.success && i.path == Some(AdoptionPath::Direct))
            .count(),
        corrected: instances
            .iter()
            .filter(|i| i.success && i.path == Some(AdoptionPath::Corrected))
            .count(),
        instances,
    };

    let mut dead_reckoned: BTreeMap<PlayerId, usize> = BTreeMap::new();
    let mut marks: BTreeMap<PlayerId, BTreeSet<RoundIndex>> = BTreeMap::new();
    let mut removals: BTreeMap<PlayerId, (RoundIndex, RemovalReason)> = BTreeMap::new();
    for a in audit {
        for act in &a.actions {
            if let VerdictAction::DeadReckon { holder, .. } = act {
                *dead_reckoned.entry(*holder).or_default() += 1;
            }
        }
        for v in &a.verdicts {
            marks.entry(v.subject).or_default().insert(a.round);
        }
        for (p, reason) in &a.removals {
            removals.entry(*p).or_insert((a.round, *reason));
        }
    }

    let cheater_summaries = scenario
        .player_ids()
        .into_iter()
        .zip(&scenario.players)
        .filter_map(|(id, spec)| {
            let strategy = spec.strategy.as_ref()?;
            let marked: Vec<_> = marks.get(&id).map(|s| s.iter().copied().collect()).unwrap_or_default();
            let outcome = match (removals.get(&id), marked.first()) {
                (Some((round, reason)), _) => CheatOutcome::Disconnected {
                    round: *round,
                    reason: *reason,
                },
                (None, Some(r)) => CheatOutcome::Detected { round: *r },
                (None, None) => CheatOutcome::Survived,
            };
            Some(CheaterSummary {
                player: id,
                strategy: strategy.kind.name().to_string(),
                outcome,
                first_marked: marked.first().copied(),
                marked_rounds: marked,
                dead_reckoned: dead_reckoned.get(&id).copied().unwrap_or(0),
            })
        })
        .collect();

    let collusion = collusion_records(world);
    let persistence = world
        .persistence
        .iter()
        .map(|p| PersistenceRecord {
            player: p.player,
            before: p.before.to_string(),
            after: p.after.as_ref().map(|a| a.to_string()),
            preserved: p.after.as_ref() == Some(&p.before),
        })
        .collect();

    let mut report = Report {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        rounds_played: audit.iter().filter(|a| a.round > 0).count(),
        size_table: size_table(world),
        rounds: audit.clone(),
        cheaters: cheater_summaries,
        reconstructions,
        exchange_span: SpanStats {
            count: spans.len(),
            mean_ms,
            stddev_ms,
        },
        dead_reckoned,
        collusion,
        persistence,
        conservation: world.net.conservation(),
        log_digest: world.net.log_digest(),
        truncated: world.truncated,
        assertions: Vec::new(),
        passed: false,
    };
    report.assertions = check_expectations(scenario, &report, &marks);
    report.passed = report.assertions.iter().all(|a| a.passed);
    report
}

/// Pools every side-channel leak per round and asks whether the pool
/// reveals the round owner's state.
fn collusion_records(world: &World) -> Vec<CollusionRecord> {
    let mut by_round: BTreeMap<RoundIndex, BTreeSet<[u8; crate::wire::POINT_LEN]>> = BTreeMap::new();
    for r in &world.side_channel {
        by_round.entry(r.round).or_default().insert(r.point);
    }
    let mut out = Vec::new();
    for (round, points) in by_round {
        for inst in world.instances.iter().filter(|i| i.round == round) {
            let mut ik = IntruderKnowledge::default();
            ik.learn_event(round, inst.event.clone());
            for p in &points {
                ik.learn_point(round, PointKind::Output, *p);
            }
            ik.interpolate();
            out.push(CollusionRecord {
                round,
                owner: inst.owner,
                pooled_outputs: points.len(),
                k: inst.k,
                derived: ik.can_derive_field(&inst.prior) || ik.can_derive_field(&inst.expected),
            });
        }
    }
    out
}

fn check(out: &mut Vec<AssertionResult>, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
    out.push(AssertionResult {
        name: name.into(),
        passed,
        detail: detail.into(),
    });
}

fn check_expectations(
    scenario: &Scenario,
    report: &Report,
    marks: &BTreeMap<PlayerId, BTreeSet<RoundIndex>>,
) -> Vec<AssertionResult> {
    let e = &scenario.expect;
    let mut out = Vec::new();
    check(
        &mut out,
        "conservation",
        report.conservation.holds(),
        format!("{:?}", report.conservation),
    );
    check(&mut out, "ran to quiescence", !report.truncated, "");
    if let Some(want) = e.all_reconstructions_succeed {
        let honest: Vec<_> = report
            .reconstructions
            .instances
            .iter()
            .filter(|i| i.honest_owner)
            .collect();
        let failures: Vec<_> = honest
            .iter()
            .filter(|i| !i.success)
            .map(|i| format!("{}@{}", i.owner, i.round))
            .collect();
        let ok = !honest.is_empty() && failures.is_empty();
        check(
            &mut out,
            "all honest reconstructions succeed",
            ok == want,
            format!("{} honest instances, failures: {failures:?}", honest.len()),
        );
    }
    if let Some(min) = e.min_reconstructions {
        check(
            &mut out,
            format!("at least {min} reconstructions"),
            report.reconstructions.succeeded >= min,
            format!("{} succeeded", report.reconstructions.succeeded),
        );
    }
    for o in &e.outcomes {
        let id = PlayerId(o.player);
        let got = report.cheaters.iter().find(|c| c.player == id);
        let ok = match (got.map(|c| &c.outcome), &o.outcome) {
            (Some(CheatOutcome::Detected { round }), ExpectedOutcome::Detected) => o.round.is_none_or(|r| r == *round),
            (Some(CheatOutcome::Survived), ExpectedOutcome::Survived) => true,
            (Some(CheatOutcome::Disconnected { round, reason }), ExpectedOutcome::Disconnected) => {
                o.round.is_none_or(|r| r == *round)
                    && o.reason
                        .as_deref()
                        .is_none_or(|want| format!("{reason:?}").eq_ignore_ascii_case(want))
            }
            _ => false,
        };
        check(
            &mut out,
            format!("player {id} outcome {:?}", o.outcome),
            ok,
            format!("{:?}", got.map(|c| &c.outcome)),
        );
    }
    for p in &e.never_marked {
        let id = PlayerId(*p);
        let m = marks.get(&id).cloned().unwrap_or_default();
        check(&mut out, format!("player {id} never marked"), m.is_empty(), format!("marked in {m:?}"));
    }
    for m in &e.marked {
        let id = PlayerId(m.player);
        let got = marks.get(&id).cloned().unwrap_or_default();
        check(
            &mut out,
            format!("player {id} marked in round {}", m.round),
            got.contains(&m.round),
            format!("marked in {got:?}"),
        );
    }
    for d in &e.dead_reckoned {
        let id = PlayerId(d.player);
        let got = report.dead_reckoned.get(&id).copied().unwrap_or(0);
        check(
            &mut out,
            format!("player {id} dead-reckoned {} times", d.count),
            got == d.count,
            format!("{got}"),
        );
    }
    if let Some(want) = e.referee_holds_share {
        let holds = report
            .rounds
            .iter()
            .flat_map(|r| &r.dealings)
            .any(|d| d.referee_holds_share && d.k == 3 && d.holders.len() == 3);
        check(&mut out, "referee holds a share with k = 3", holds == want, "");
    }
    if let Some(want) = e.d_stable {
        let ds: BTreeSet<u32> = report.rounds.iter().filter(|r| r.round >= 2).map(|r| r.d_ms).collect();
        let bounded = report.rounds.iter().all(|r| r.d_ms <= scenario.d_max_ms && r.d_ms > 0);
        check(
            &mut out,
            "round length stable",
            (ds.len() == 1 && bounded) == want,
            format!("d values {ds:?}"),
        );
    }
    if let Some(want) = e.collusion_derives {
        let derived = report.collusion.iter().any(|c| c.derived);
        let pooled = report.collusion.iter().map(|c| c.pooled_outputs).max().unwrap_or(0);
        check(
            &mut out,
            format!("pooled outputs {} the owner's state", if want { "reveal" } else { "do not reveal" }),
            !report.collusion.is_empty() && derived == want,
            format!("max pooled {pooled}, derived {derived}"),
        );
    }
    for p in &e.state_persisted {
        let id = PlayerId(*p);
        let recs: Vec<_> = report.persistence.iter().filter(|r| r.player == id).collect();
        check(
            &mut out,
            format!("player {id} state survives leave and rejoin"),
            !recs.is_empty() && recs.iter().all(|r| r.preserved),
            format!("{} records", recs.len()),
        );
    }
    out
}

pub fn emit_report(report: &Report, format: Format) -> String {
    match format {
        Format::Machine => serde_json::to_string_pretty(report).expect("report serializes"),
        Format::Human => human(report),
    }
}

fn human(r: &Report) -> String {
    let mut s = String::new();
    let title = if r.scenario.is_empty() { "scenario" } else { &r.scenario };
    let _ = writeln!(s, "{title} (seed {}, {} rounds)", r.seed, r.rounds_played);
    let _ = writeln!(s, "\nmessage sizes (bytes)");
    let _ = writeln!(s, "{:<14} {:>7} {:>9} {:>6} {:>6}", "type", "count", "mean", "min", "max");
    for row in &r.size_table {
        let _ = writeln!(
            s,
            "{:<14} {:>7} {:>9.2} {:>6} {:>6}",
            row.msg_type, row.count, row.mean_bytes, row.min_bytes, row.max_bytes
        );
    }
    let _ = writeln!(s, "\nrounds");
    let _ = writeln!(s, "{:>5} {:>6} {:>8} {:>8} {:>8}  verdicts", "round", "d_ms", "dealings", "missing", "dropped");
    for a in &r.rounds {
        let verdicts: Vec<_> = a.verdicts.iter().map(|v| format!("{}:{:?}", v.subject, v.kind)).collect();
        let _ = writeln!(
            s,
            "{:>5} {:>6} {:>8} {:>8} {:>8}  {}",
            a.round,
            a.d_ms,
            a.dealings.len(),
            a.missing.len(),
            a.dropped,
            verdicts.join(", ")
        );
    }
    if !r.cheaters.is_empty() {
        let _ = writeln!(s, "\ncheaters");
        for c in &r.cheaters {
            let outcome = match &c.outcome {
                CheatOutcome::Detected { round } => format!("detected (round {round})"),
                CheatOutcome::Survived => "survived".into(),
                CheatOutcome::Disconnected { round, reason } => format!("disconnected (round {round}, {reason:?})"),
            };
            let _ = writeln!(
                s,
                "  {} {:<16} {}  marked {:?}",
                c.player, c.strategy, outcome, c.marked_rounds
            );
        }
    }
    let rc = &r.reconstructions;
    let _ = writeln!(
        s,
        "\nreconstructions: {} attempted, {} succeeded ({} direct, {} corrected), {} failed",
        rc.attempted, rc.succeeded, rc.direct, rc.corrected, rc.failed
    );
    let _ = writeln!(
        s,
        "exchange span: mean {:.2} ms, stddev {:.2} ms over {} instances",
        r.exchange_span.mean_ms, r.exchange_span.stddev_ms, r.exchange_span.count
    );
    if !r.dead_reckoned.is_empty() {
        let _ = writeln!(s, "dead reckoned: {:?}", r.dead_reckoned);
    }
    for c in &r.collusion {
        let _ = writeln!(
            s,
            "collusion round {}: {} pooled outputs vs k = {} -> {}",
            c.round,
            c.pooled_outputs,
            c.k,
            if c.derived { "derived" } else { "not derived" }
        );
    }
    let c = &r.conservation;
    let _ = writeln!(
        s,
        "frames: {} sent = {} delivered + {} lost + {} dropped",
        c.sent, c.delivered, c.lost, c.dropped_by_strategy
    );
    let _ = writeln!(s, "log digest: {}", r.log_digest);
    if !r.assertions.is_empty() {
        let _ = writeln!(s, "\nassertions");
        for a in &r.assertions {
            let _ = writeln!(
                s,
                "  [{}] {}{}",
                if a.passed { "pass" } else { "FAIL" },
                a.name,
                if a.detail.is_empty() { String::new() } else { format!(" ({})", a.detail) }
            );
        }
    }
    let _ = writeln!(s, "\nresult: {}", if r.passed { "PASS" } else { "FAIL" });
    s
}

/// The M1–M9 size table from one canonical instance of each frame.
pub fn profile_messages() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:>6}", "type", "bytes");
    for (t, len) in crate::wire::message_length_profile() {
        let _ = writeln!(s, "{:<6} {:>6}", t.name(), len);
    }
    s
}
