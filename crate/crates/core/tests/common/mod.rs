#![allow(dead_code)]

use rand::{Rng, RngCore};
use refshare_core::actor::{Action, Envelope};
use refshare_core::adversary::IntruderKnowledge;
use refshare_core::crypto::{self, seeded_rng, SymmetricKey};
use refshare_core::netsim::Event;
use refshare_core::player::PlayerEvent;
use refshare_core::referee::RefereeEvent;
use refshare_core::runner::{load_scenario, simulate, Scenario, World};
use refshare_core::wire::{self, deserialize, serialize, POINT_LEN};
use refshare_core::{Body, FieldElement, MessageType, PlayerId, ProtocolMessage};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

// ---------------------------------------------------------------------------
// Dolev-Yao secrecy
// ---------------------------------------------------------------------------

/// Ground truth for one two-player session, recovered with the legitimate keys.
#[derive(Debug)]
pub struct SessionSecrets {
    pub owner: PlayerId,
    pub peer: PlayerId,
    pub x_a: Vec<FieldElement>,
    pub u_r: Vec<[u8; POINT_LEN]>,
    pub u_b: Vec<[u8; POINT_LEN]>,
    pub k_ab: Vec<SymmetricKey>,
}

pub fn session_secrets(world: &World) -> SessionSecrets {
    let inst = world.instances.first().expect("at least one dealing");
    let owner = inst.owner;
    let dealing_peer = world
        .referee
        .audit
        .iter()
        .flat_map(|r| &r.dealings)
        .find(|d| d.owner == owner)
        .and_then(|d| d.holders.iter().copied().find(|h| *h != owner && h.is_player()))
        .expect("two-player dealing");
    let mut s = SessionSecrets {
        owner,
        peer: dealing_peer,
        x_a: vec![],
        u_r: vec![],
        u_b: vec![],
        k_ab: vec![],
    };
    for i in world.instances.iter().filter(|i| i.owner == owner) {
        s.x_a.push(i.prior.clone());
        s.x_a.push(i.expected.clone());
    }
    let key_of = |p: PlayerId| world.players[&p].long_term_key().clone();
    let k_ab = world.players[&owner].session_keys[&dealing_peer].key.clone();
    for f in &world.net.captured {
        let Ok(msg) = deserialize(&f.bytes) else { continue };
        let header = msg.header();
        match &msg.body {
            Body::SessionKeyForInitiator { sealed_key, .. } | Body::SessionKeyForResponder { sealed_key, .. }
                if [owner, dealing_peer].contains(&f.to) =>
            {
                let raw = crypto::open_with_aad(&key_of(f.to), &header, sealed_key).unwrap();
                let k = SymmetricKey::from_slice(&raw).unwrap();
                if !s.k_ab.contains(&k) {
                    s.k_ab.push(k);
                }
            }
            Body::OwnerDeal {
                sealed_referee_output: Some(ct),
                ..
            } if f.to == owner => {
                let pt = crypto::open_with_aad(&key_of(owner), &header, ct).unwrap();
                s.u_r.push(pt.try_into().unwrap());
            }
            Body::HolderOutput { sealed_output, .. } if f.from == dealing_peer && f.to == owner => {
                let pt = crypto::open_with_aad(&k_ab, &header, sealed_output).unwrap();
                s.u_b.push(pt.try_into().unwrap());
            }
            _ => {}
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Outsider,
    AsOwner,
    AsPeer,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Outsider => "honest session (outside intruder)",
            Role::AsOwner => "intruder as A (K_AR compromised)",
            Role::AsPeer => "intruder as B (K_BR compromised)",
        }
    }
}

#[derive(Debug)]
pub struct SecrecyRow {
    pub role: Role,
    pub secret: &'static str,
    pub owned: bool,
    pub derivable: bool,
}

/// Every captured frame goes through the intruder; the role decides which
/// long-term key it starts with.
pub fn secrecy_matrix(world: &World) -> Vec<SecrecyRow> {
    let s = session_secrets(world);
    assert!(!s.x_a.is_empty() && !s.u_r.is_empty() && !s.u_b.is_empty() && !s.k_ab.is_empty());
    let mut rows = Vec::new();
    for role in [Role::Outsider, Role::AsOwner, Role::AsPeer] {
        let keys: Vec<SymmetricKey> = match role {
            Role::Outsider => vec![],
            Role::AsOwner => vec![world.players[&s.owner].long_term_key().clone()],
            Role::AsPeer => vec![world.players[&s.peer].long_term_key().clone()],
        };
        let mut ik = IntruderKnowledge::new(keys);
        for f in &world.net.captured {
            ik.absorb(&f.bytes);
        }
        ik.interpolate();
        let owner = role == Role::AsOwner;
        let peer = role == Role::AsPeer;
        let checks: [(&'static str, bool, bool); 4] = [
            ("X_A", owner, s.x_a.iter().any(|x| ik.can_derive_field(x))),
            ("U_R", owner, s.u_r.iter().any(|p| ik.can_derive(p))),
            ("U_B", owner || peer, s.u_b.iter().any(|p| ik.can_derive(p))),
            ("K_AB", owner || peer, s.k_ab.iter().any(|k| ik.can_derive(k.as_bytes()))),
        ];
        for (secret, owned, derivable) in checks {
            rows.push(SecrecyRow {
                role,
                secret,
                owned,
                derivable,
            });
        }
    }
    rows
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ReplayOutcome {
    pub recorded: usize,
    pub injected: usize,
    /// Key installs the replay caused: extra installs, recorded keys
    /// reinstalled, or pairs that no longer agree.
    pub acceptances: usize,
}

fn key_installs(world: &World) -> usize {
    world
        .players
        .values()
        .flat_map(|p| &p.events)
        .filter(|e| matches!(e, PlayerEvent::KeyInstalled { .. }))
        .count()
}

fn installed_keys(world: &World) -> Vec<(PlayerId, PlayerId, SymmetricKey)> {
    world
        .players
        .iter()
        .flat_map(|(id, p)| p.session_keys.iter().map(move |(peer, k)| (*id, *peer, k.key.clone())))
        .collect()
}

/// A fresh session is raced from the frame's original send time on; in the
/// recorded session itself the copies land after the original arrived.
const FRESH_OFFSETS: [u64; 8] = [0, 1, 5, 20, 50, 100, 400, 1_000];
const SAME_SESSION_OFFSETS: [u64; 4] = [100, 400, 1_000, 3_000];

/// Records M2/M3/M4 from one run and injects every one of them, at several
/// offsets, into a session with the same long-term keys (`salt` 0) or a
/// fresh session (`salt` ≠ 0).
pub fn replay_key_agreement(s: &Scenario, salt: u64) -> ReplayOutcome {
    let recorded_world = simulate(s, true);
    let recorded: Vec<_> = recorded_world
        .net
        .captured
        .iter()
        .filter(|f| matches!(wire::peek_header(&f.bytes), Ok((MessageType::M2 | MessageType::M3 | MessageType::M4, _, _))))
        .cloned()
        .collect();
    let recorded_keys: BTreeSet<[u8; 32]> = installed_keys(&recorded_world)
        .into_iter()
        .map(|(_, _, k)| *k.as_bytes())
        .collect();

    let mut clean = World::with_session_salt(s, false, salt);
    clean.run();

    let mut attacked = World::with_session_salt(s, false, salt);
    for f in &recorded {
        let offsets: &[u64] = if salt == 0 { &SAME_SESSION_OFFSETS } else { &FRESH_OFFSETS };
        for &off in offsets {
            attacked.net.inject(f.time_ms + off, f.from, f.to, f.bytes.clone());
        }
    }
    attacked.run();

    let mut acceptances = key_installs(&attacked).saturating_sub(key_installs(&clean));
    let keys = installed_keys(&attacked);
    for (a, b, k) in &keys {
        if salt != 0 && recorded_keys.contains(k.as_bytes()) {
            acceptances += 1;
        }
        let mirror = keys.iter().find(|(x, y, _)| x == b && y == a);
        if mirror.is_some_and(|(_, _, km)| km != k) {
            acceptances += 1;
        }
    }
    if salt == 0 && keys != installed_keys(&recorded_world) {
        acceptances += 1;
    }
    ReplayOutcome {
        recorded: recorded.len(),
        injected: attacked.net.injected,
        acceptances,
    }
}

// ---------------------------------------------------------------------------
// Mutation fuzzing
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
pub struct FuzzOutcome {
    pub frames: usize,
    pub baseline_accepted: BTreeMap<&'static str, usize>,
    pub mutants: usize,
    pub unparsable: usize,
    pub acceptances: usize,
    pub accepted_examples: Vec<String>,
}

fn is_fuzz_target(ty: MessageType) -> bool {
    matches!(
        ty,
        MessageType::M5 | MessageType::M6 | MessageType::M7 | MessageType::M8 | MessageType::M9
    )
}

fn mutate(orig: &[u8], rng: &mut impl RngCore) -> Vec<u8> {
    let mut b = orig.to_vec();
    match rng.gen_range(0..10) {
        0..=5 => {
            let i = rng.gen_range(0..b.len());
            b[i] ^= 1 << rng.gen_range(0..8);
        }
        6 | 7 => {
            let i = rng.gen_range(0..b.len());
            b[i] = b[i].wrapping_add(rng.gen_range(1..=255));
        }
        8 => {
            let n = rng.gen_range(1..b.len());
            b.truncate(n);
        }
        _ => {
            let i = rng.gen_range(0..=b.len());
            b.insert(i, rng.gen());
        }
    }
    b
}

fn referee_dropped(events: &[RefereeEvent]) -> usize {
    events.iter().filter(|e| matches!(e, RefereeEvent::Dropped { .. })).count()
}

fn sends_of(actions: &[Action], ty: MessageType) -> Vec<(PlayerId, ProtocolMessage)> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::Send { to, msg } if msg.message_type() == ty => Some((*to, msg.clone())),
            _ => None,
        })
        .collect()
}

/// Whether delivering `msg` to a copy of `to` in the current world would be
/// accepted. M6 is judged end to end through the M8 it provokes.
fn accepted(world: &World, now: u64, to: PlayerId, env: &Envelope) -> bool {
    let ty = env.msg.message_type();
    if to == PlayerId::REFEREE {
        let mut r = world.referee.clone();
        let before = referee_dropped(&r.events);
        let actions = r.handle(now, env);
        if referee_dropped(&r.events) != before {
            return false;
        }
        return match ty {
            MessageType::M5 => !sends_of(&actions, MessageType::M7).is_empty() || !sends_of(&actions, MessageType::M8).is_empty(),
            MessageType::M6 => sends_of(&actions, MessageType::M8).into_iter().any(|(holder, m8)| {
                let Some(p) = world.players.get(&holder) else { return false };
                let mut p = p.clone();
                let e = Envelope {
                    from: PlayerId::REFEREE,
                    sent_at: now,
                    msg: m8,
                };
                !p.handle(now, &e).is_empty()
            }),
            _ => false,
        };
    }
    let Some(p) = world.players.get(&to) else { return false };
    let mut p = p.clone();
    let received_before = p.view.as_ref().map(|v| v.received.len()).unwrap_or(0);
    let actions = p.handle(now, env);
    let view = p.view.as_ref();
    match ty {
        MessageType::M7 => view.is_some_and(|v| v.own_output.is_some())
            && world.players[&to].view.as_ref().is_some_and(|v| v.own_output.is_none()),
        MessageType::M8 => !actions.is_empty(),
        MessageType::M9 => view.map(|v| v.received.len()).unwrap_or(0) > received_before,
        _ => false,
    }
}

/// Runs `s` and, at every M5–M9 delivery, offers `per_frame` byte-level
/// mutants of the frame to a snapshot of its recipient first.
pub fn fuzz_round_frames(s: &Scenario, per_frame: usize, seed: u64) -> FuzzOutcome {
    let mut rng = seeded_rng(seed);
    let mut out = FuzzOutcome::default();
    let mut world = World::new(s, false);
    world.start();
    while let Some((now, event)) = world.net.step() {
        if let Event::Deliver { to, env } = &event {
            let ty = env.msg.message_type();
            if is_fuzz_target(ty) {
                out.frames += 1;
                if accepted(&world, now, *to, env) {
                    *out.baseline_accepted.entry(ty.name()).or_default() += 1;
                }
                let orig = serialize(&env.msg);
                let mut made = 0;
                while made < per_frame {
                    let bytes = mutate(&orig, &mut rng);
                    if bytes == orig {
                        continue;
                    }
                    made += 1;
                    out.mutants += 1;
                    let Ok(msg) = deserialize(&bytes) else {
                        out.unparsable += 1;
                        continue;
                    };
                    let mutant = Envelope { msg, ..env.clone() };
                    if accepted(&world, now, *to, &mutant) {
                        out.acceptances += 1;
                        if out.accepted_examples.len() < 5 {
                            out.accepted_examples.push(format!("{ty} → {to}: {}", hex::encode(&bytes)));
                        }
                    }
                }
            }
        }
        world.dispatch(now, event);
    }
    out
}
