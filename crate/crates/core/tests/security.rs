mod common;

use common::{fuzz_round_frames, replay_key_agreement, scenario, secrecy_matrix, Role};
use refshare_core::adversary::IntruderKnowledge;
use refshare_core::runner::simulate;
use refshare_core::wire::deserialize;
use refshare_core::{Body, MessageType};

#[test]
fn secrecy_holds_for_every_role_that_does_not_own_the_secret() {
    let world = simulate(&scenario("two_player"), true);
    let rows = secrecy_matrix(&world);
    assert_eq!(rows.len(), 12);
    for r in &rows {
        if !r.owned {
            assert!(!r.derivable, "{}: {} leaked", r.role.name(), r.secret);
        }
    }
}

#[test]
fn compromised_roles_read_their_own_traffic() {
    // The closure is live: each compromised principal recovers what it owns.
    let world = simulate(&scenario("two_player"), true);
    for r in secrecy_matrix(&world).iter().filter(|r| r.role != Role::Outsider) {
        assert_eq!(r.derivable, r.owned, "{}: {}", r.role.name(), r.secret);
    }
}

#[test]
fn outside_observer_learns_only_plaintext_fields() {
    let world = simulate(&scenario("two_player"), true);
    let mut ik = IntruderKnowledge::new([]);
    for f in &world.net.captured {
        ik.absorb(&f.bytes);
    }
    ik.interpolate();
    for f in &world.net.captured {
        let msg = deserialize(&f.bytes).unwrap();
        if let Body::KeyRequest { nonce_a, .. } = &msg.body {
            assert!(ik.can_derive(&nonce_a.0));
        }
        for inst in &world.instances {
            assert!(!ik.can_derive_field(&inst.prior));
        }
    }
}

/// No secret value appears verbatim anywhere in the M3–M9 bytes on the wire.
#[test]
fn round_frames_carry_no_plaintext_secrets() {
    let world = simulate(&scenario("two_player"), true);
    let s = common::session_secrets(&world);
    let mut needles: Vec<Vec<u8>> = Vec::new();
    needles.extend(s.x_a.iter().map(|x| x.to_bytes().to_vec()));
    needles.extend(s.u_r.iter().map(|p| p.to_vec()));
    needles.extend(s.u_b.iter().map(|p| p.to_vec()));
    needles.extend(s.k_ab.iter().map(|k| k.as_bytes().to_vec()));
    for p in world.players.values() {
        needles.push(p.long_term_key().as_bytes().to_vec());
    }
    let mut scanned = 0;
    for f in &world.net.captured {
        let (ty, _, _) = refshare_core::wire::peek_header(&f.bytes).unwrap();
        if !(MessageType::M3 as u8..=MessageType::M9 as u8).contains(&(ty as u8)) {
            continue;
        }
        scanned += 1;
        for n in &needles {
            assert!(
                !f.bytes.windows(n.len()).any(|w| w == n.as_slice()),
                "{ty} carries a secret in the clear"
            );
        }
    }
    assert!(scanned > 0);
}

#[test]
fn replayed_key_agreement_never_installs_a_key_in_a_fresh_session() {
    for name in ["two_player", "honest_three"] {
        let out = replay_key_agreement(&scenario(name), 0xF1E5);
        assert!(out.recorded > 0 && out.injected > 0, "{name}: {out:?}");
        assert_eq!(out.acceptances, 0, "{name}: {out:?}");
    }
}

#[test]
fn replayed_key_agreement_is_rejected_in_the_recorded_session() {
    for name in ["two_player", "honest_three"] {
        let out = replay_key_agreement(&scenario(name), 0);
        assert!(out.injected > 0);
        assert_eq!(out.acceptances, 0, "{name}: {out:?}");
    }
}

#[test]
fn mutated_round_frames_are_never_accepted() {
    let out = fuzz_round_frames(&scenario("honest_three"), 130, 0xF022);
    assert!(out.mutants >= 10_000, "{out:?}");
    for ty in ["M5", "M6", "M7", "M8", "M9"] {
        assert!(out.baseline_accepted.get(ty).copied().unwrap_or(0) > 0, "judge never accepts {ty}: {out:?}");
    }
    assert_eq!(out.acceptances, 0, "{:?}", out.accepted_examples);
}
