use proptest::prelude::*;
use refshare_core::referee::{percentile_95, AoiModel, RoundClock, SuspicionLedger};
use refshare_core::wire::RemovalReason;
use refshare_core::PlayerId;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy)]
struct Status {
    missing: bool,
    dishonest: bool,
}

fn arb_status() -> impl Strategy<Value = Status> {
    (any::<bool>(), any::<bool>()).prop_map(|(missing, dishonest)| Status { missing, dishonest })
}

/// Counters recomputed from the whole history rather than incrementally.
fn model(history: &[Status]) -> (u32, u32) {
    let missing = history.iter().rev().take_while(|s| s.missing).count() as u32;
    let dishonest = history
        .iter()
        .rev()
        .take_while(|s| s.missing || s.dishonest)
        .filter(|s| s.dishonest)
        .count() as u32;
    (missing, dishonest)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ledger_matches_history_model(
        history in proptest::collection::vec(arb_status(), 1..30),
        r_disconnect in 1u32..5,
        r_cheat in 1u32..5,
    ) {
        let p = PlayerId(2);
        let everyone = BTreeSet::from([p]);
        let mut ledger = SuspicionLedger::new(r_disconnect, r_cheat);
        for (i, s) in history.iter().enumerate() {
            let missing = if s.missing { everyone.clone() } else { BTreeSet::new() };
            let dishonest = if s.dishonest { everyone.clone() } else { BTreeSet::new() };
            let removals = ledger.close_round(&everyone, &missing, &dishonest);
            let (m, d) = model(&history[..=i]);
            prop_assert_eq!(ledger.counters(p), (m, d));
            let want = if d >= r_cheat {
                vec![(p, RemovalReason::Cheating)]
            } else if m >= r_disconnect {
                vec![(p, RemovalReason::Disconnected)]
            } else {
                vec![]
            };
            prop_assert_eq!(removals, want);
        }
    }

    #[test]
    fn sustained_cheating_is_removed_within_threshold(r_cheat in 1u32..6, r_disconnect in 1u32..6) {
        let p = PlayerId(7);
        let everyone = BTreeSet::from([p]);
        let mut ledger = SuspicionLedger::new(r_disconnect, r_cheat);
        let mut removed_at = None;
        for round in 1..=r_cheat {
            if !ledger.close_round(&everyone, &BTreeSet::new(), &everyone).is_empty() {
                removed_at = Some(round);
                break;
            }
        }
        prop_assert_eq!(removed_at, Some(r_cheat));
    }

    #[test]
    fn round_length_stays_in_bounds(
        samples in proptest::collection::vec(0u64..5_000, 0..50),
        d_max in 1u32..5_000,
        d_min_frac in 0.0f64..1.0,
        hops in 1u32..10,
    ) {
        let d_min = ((d_max as f64 * d_min_frac) as u32).max(1);
        let mut clock = RoundClock { d: d_max, d_max, current_round: 1, opened_at: 0 };
        clock.adapt(&samples, hops, d_min);
        prop_assert!(clock.d >= d_min.min(d_max) && clock.d <= d_max);
        if samples.is_empty() {
            prop_assert_eq!(clock.d, d_max);
        }
    }

    #[test]
    fn slower_samples_never_shorten_the_round(
        samples in proptest::collection::vec(0u64..500, 1..40),
        extra in 0u64..500,
    ) {
        let mut fast = RoundClock { d: 1000, d_max: 1000, current_round: 1, opened_at: 0 };
        let mut slow = fast.clone();
        let slower: Vec<_> = samples.iter().map(|s| s + extra).collect();
        fast.adapt(&samples, 6, 10);
        slow.adapt(&slower, 6, 10);
        prop_assert!(slow.d >= fast.d);
    }

    #[test]
    fn percentile_is_a_sample_covering_95_percent(samples in proptest::collection::vec(any::<u32>(), 1..200)) {
        let s: Vec<u64> = samples.iter().map(|&v| v as u64).collect();
        let p = percentile_95(&s).unwrap();
        prop_assert!(s.contains(&p));
        let at_or_below = s.iter().filter(|&&v| v <= p).count();
        prop_assert!(at_or_below * 100 >= 95 * s.len());
        let strictly_below = s.iter().filter(|&&v| v < p).count();
        prop_assert!(strictly_below * 100 < 95 * s.len());
    }

    #[test]
    fn aoi_groups_are_maximal_components(
        positions in proptest::collection::vec(-60i64..60, 2..12),
        radius in 0i64..20,
    ) {
        let mut aoi = AoiModel::new(radius);
        let ids: Vec<_> = (0..positions.len() as u32).map(|i| PlayerId(2 + i)).collect();
        for (id, pos) in ids.iter().zip(&positions) {
            aoi.update(*id, *pos);
        }
        let eligible: BTreeSet<_> = ids.iter().copied().collect();
        let groups = aoi.groups(&eligible);
        let mut covered = BTreeSet::new();
        for g in &groups {
            prop_assert!(g.len() >= 2);
            for p in g {
                prop_assert!(covered.insert(*p), "player in two groups");
                // Every member has a neighbour inside its group.
                prop_assert!(aoi.neighbours(*p).iter().any(|n| g.contains(n)));
            }
        }
        // No interacting pair is split across groups or left out.
        for a in &ids {
            for b in &ids {
                if aoi.interacting(*a, *b) {
                    let ga = groups.iter().position(|g| g.contains(a));
                    prop_assert!(ga.is_some());
                    prop_assert_eq!(ga, groups.iter().position(|g| g.contains(b)));
                }
            }
        }
    }
}
