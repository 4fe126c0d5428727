//! Wires server, referee and players onto the simulated network.

use super::scenario::Scenario;
use crate::actor::{Action, Envelope, SimTime, Timer};
use crate::adversary::{apply_strategy, CheatStrategy, TransportAction};
use crate::crypto::{seeded_rng, KeyPair, SimRng, SymmetricKey};
use crate::field::{FieldElement, PrimeField};
use crate::ids::{PlayerId, RoundIndex};
use crate::netsim::{Event, NetConfig, Network};
use crate::player::{PlayerConfig, PlayerSession};
use crate::referee::{Referee, RefereeConfig};
use crate::server::Server;
use crate::sharing::RoundEvent;
use crate::wire::{Body, ProtocolMessage, POINT_LEN};
use rand::RngCore;
use std::collections::BTreeMap;

/// Hard stop for runaway scenarios.
const MAX_EVENTS: usize = 2_000_000;

/// One owner-round: what the owner should end up with.
#[derive(Debug, Clone)]
pub struct Instance {
    pub round: RoundIndex,
    pub owner: PlayerId,
    pub prior: FieldElement,
    pub expected: FieldElement,
    pub event: RoundEvent,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct SideRecord {
    pub round: RoundIndex,
    pub from: PlayerId,
    pub partner: PlayerId,
    pub point: [u8; POINT_LEN],
}

#[derive(Debug, Clone)]
pub struct Persistence {
    pub player: PlayerId,
    pub before: FieldElement,
    pub after: Option<FieldElement>,
}

pub struct World {
    pub net: Network,
    pub server: Server,
    pub referee: Referee,
    pub players: BTreeMap<PlayerId, PlayerSession>,
    pub strategies: BTreeMap<PlayerId, CheatStrategy>,
    cheat_rng: SimRng,
    oracle_chain: BTreeMap<PlayerId, FieldElement>,
    pub instances: Vec<Instance>,
    pub side_channel: Vec<SideRecord>,
    pub persistence: Vec<Persistence>,
    pub events_processed: usize,
    pub truncated: bool,
}

fn sub_rng(master: &mut SimRng) -> SimRng {
    seeded_rng(master.next_u64())
}

fn salted_rng(master: &mut SimRng, salt: u64) -> SimRng {
    seeded_rng(master.next_u64() ^ salt)
}

impl World {
    pub fn new(s: &Scenario, capture: bool) -> Self {
        Self::with_session_salt(s, capture, 0)
    }

    /// Same provisioning (keys, credentials, initial states) as [`World::new`],
    /// but every actor's runtime randomness is perturbed by `salt`: nonces,
    /// session keys, polynomials and round events all differ.
    pub fn with_session_salt(s: &Scenario, capture: bool, salt: u64) -> Self {
        let mut master = seeded_rng(s.seed);
        let ids = s.player_ids();
        let mut long_term = BTreeMap::new();
        let mut keypairs = BTreeMap::new();
        let mut credentials = BTreeMap::new();
        let mut initial = BTreeMap::new();
        for (id, spec) in ids.iter().zip(&s.players) {
            long_term.insert(*id, SymmetricKey::random(&mut master));
            keypairs.insert(*id, KeyPair::generate(&mut master));
            credentials.insert(format!("credential-{}", id.0).into_bytes(), *id);
            let x = match spec.initial_state {
                Some(v) => FieldElement::from_u64(v),
                None => FieldElement::random(&mut master),
            };
            initial.insert(*id, x);
        }
        let backend_key = SymmetricKey::random(&mut master);
        let directory: BTreeMap<_, _> = keypairs
            .iter()
            .map(|(id, kp): (&PlayerId, &KeyPair)| (*id, kp.verification_key))
            .collect();

        let mut server = Server::new(credentials, long_term.clone(), backend_key.clone(), salted_rng(&mut master, salt));
        for (id, x) in &initial {
            server.provision_state(*id, x);
        }
        let referee = Referee::new(
            RefereeConfig {
                rounds: s.rounds,
                d_max_ms: s.d_max_ms,
                d_min_ms: s.d_min_ms,
                r_disconnect: s.r_disconnect,
                r_cheat: s.r_cheat,
                fault_tolerance: s.fault_tolerance,
                aoi_radius: s.aoi_radius,
                hop_factor: s.hop_factor,
            },
            long_term.clone(),
            backend_key,
            directory.clone(),
            salted_rng(&mut master, salt),
        );
        let mut access = BTreeMap::from([(PlayerId::REFEREE, 0), (PlayerId::SERVER, 0)]);
        let mut players = BTreeMap::new();
        let mut strategies = BTreeMap::new();
        for (id, spec) in ids.iter().zip(&s.players) {
            access.insert(*id, spec.latency_ms);
            let mut positions = BTreeMap::from([(0, spec.position)]);
            for m in &spec.moves {
                positions.insert(m.round, m.position);
            }
            let config = PlayerConfig {
                id: *id,
                credential: format!("credential-{}", id.0).into_bytes(),
                address: format!("10.0.0.{}", id.0).into_bytes(),
                long_term_key: long_term[id].clone(),
                keypair: keypairs[id].clone(),
                directory: directory.clone(),
                positions,
                leave_round: spec.leave_round,
                rejoin_after_ms: spec.rejoin_after_ms,
            };
            players.insert(*id, PlayerSession::new(config, salted_rng(&mut master, salt)));
            if let Some(st) = &spec.strategy {
                strategies.insert(*id, st.clone());
            }
        }
        let net = Network::new(
            NetConfig {
                access_latency: access,
                jitter_ms: s.jitter_ms,
                loss_rate: s.loss_rate,
                reorder: s.reorder,
                capture,
            },
            sub_rng(&mut master),
        )
        .expect("loss rate validated with the scenario");
        Self {
            net,
            server,
            referee,
            players,
            strategies,
            cheat_rng: sub_rng(&mut master),
            oracle_chain: initial,
            instances: Vec::new(),
            side_channel: Vec::new(),
            persistence: Vec::new(),
            events_processed: 0,
            truncated: false,
        }
    }

    pub fn run(&mut self) {
        self.start();
        while let Some((now, event)) = self.net.step() {
            self.events_processed += 1;
            if self.events_processed > MAX_EVENTS {
                self.truncated = true;
                break;
            }
            self.dispatch(now, event);
        }
    }

    /// Arms the referee's first round and every player's boot timer.
    pub fn start(&mut self) {
        let start = self.referee.start();
        self.perform(PlayerId::REFEREE, start);
        let ids: Vec<_> = self.players.keys().copied().collect();
        for id in ids {
            self.net.schedule_timer(id, 0, Timer::Start);
        }
    }

    /// Hands one popped network event to its actor and transmits the reply.
    pub fn dispatch(&mut self, now: SimTime, event: Event) {
        match event {
            Event::Deliver { to, env } => self.deliver(now, to, env),
            Event::Timer { entity, timer } => {
                let actions = if entity == PlayerId::REFEREE {
                    self.referee.on_timer(now, timer)
                } else if let Some(p) = self.players.get_mut(&entity) {
                    p.on_timer(now, timer)
                } else {
                    vec![]
                };
                self.perform(entity, actions);
            }
        }
    }

    fn deliver(&mut self, now: SimTime, to: PlayerId, env: Envelope) {
        let actions = match to {
            PlayerId::REFEREE => self.referee.handle(now, &env),
            PlayerId::SERVER => self.server.handle(now, &env),
            _ => {
                self.observe(to, &env.msg);
                let Some(p) = self.players.get_mut(&to) else { return };
                let actions = p.handle(now, &env);
                if let Body::JoinAck { .. } = env.msg.body {
                    let state = p.state.clone();
                    if let Some(rec) = self
                        .persistence
                        .iter_mut()
                        .rev()
                        .find(|r| r.player == to && r.after.is_none())
                    {
                        rec.after = Some(state);
                    }
                }
                actions
            }
        };
        self.perform(to, actions);
    }

    /// Oracle bookkeeping on player-bound control frames.
    fn observe(&mut self, to: PlayerId, msg: &ProtocolMessage) {
        let Some(p) = self.players.get(&to) else { return };
        match &msg.body {
            Body::RoundOpen {
                event_a,
                event_b,
                owner,
                holders,
                k,
                ..
            } if *owner == to && holders.contains(&to) && p.online && msg.round > p.round => {
                let Ok(event) = RoundEvent::new(event_a.clone(), event_b.clone()) else {
                    return;
                };
                if p.config_leave_round() == Some(msg.round) {
                    return;
                }
                let prior = self.oracle_chain[&to].clone();
                let expected = event.apply(&prior);
                self.oracle_chain.insert(to, expected.clone());
                self.instances.push(Instance {
                    round: msg.round,
                    owner: to,
                    prior,
                    expected,
                    event,
                    k: *k as usize,
                });
            }
            Body::Remove { player, .. } if *player == to && p.online => {
                self.persistence.push(Persistence {
                    player: to,
                    before: p.state.clone(),
                    after: None,
                });
            }
            _ => {}
        }
    }

    fn perform(&mut self, from: PlayerId, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::SetTimer { at, timer } => self.net.schedule_timer(from, at, timer),
                Action::Send { to, msg } => self.transmit(from, to, msg),
            }
        }
    }

    fn transmit(&mut self, from: PlayerId, to: PlayerId, msg: ProtocolMessage) {
        let decision = match (self.strategies.get(&from), self.players.get(&from)) {
            (Some(strategy), Some(cheater)) => apply_strategy(strategy, cheater, &mut self.cheat_rng, to, &msg),
            _ => TransportAction::Forward,
        };
        let sent = match decision {
            TransportAction::Forward => self.net.send(from, to, &msg, 0),
            TransportAction::Modify(m) => self.net.send(from, to, &m, 0),
            TransportAction::Delay(ms) => self.net.send(from, to, &msg, ms),
            TransportAction::Drop => {
                self.net.record_drop(from, to, &msg);
                return;
            }
            TransportAction::DuplicateTo { partner, payload } => {
                if let Ok(point) = <[u8; POINT_LEN]>::try_from(payload.as_slice()) {
                    self.side_channel.push(SideRecord {
                        round: msg.round,
                        from,
                        partner,
                        point,
                    });
                }
                self.net.send(from, to, &msg, 0)
            }
        };
        // Every endpoint is registered at construction.
        sent.expect("registered endpoint");
    }
}
