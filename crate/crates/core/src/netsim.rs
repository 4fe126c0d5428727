//! Deterministic discrete-event transport.
//!
//! Every frame is serialized on send and parsed on delivery, so entities only
//! ever see what survived the wire. Ordering is `(time, seq)`.

use crate::actor::{Envelope, SimTime, Timer};
use crate::crypto::SimRng;
use crate::ids::PlayerId;
use crate::wire::{self, ProtocolMessage};
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(PlayerId),
    #[error("loss rate {0} outside [0, 1)")]
    BadLossRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Delivered,
    Lost,
    DroppedByStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub time_ms: SimTime,
    pub seq: u64,
    pub from: PlayerId,
    pub to: PlayerId,
    pub msg_type: &'static str,
    pub byte_len: usize,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub endpoints: (PlayerId, PlayerId),
    pub base_latency: SimTime,
    pub jitter: SimTime,
    pub loss_rate: f64,
}

#[derive(Debug, Clone)]
pub struct NetConfig {
    /// One-way access latency per endpoint; a link costs the sum of both ends.
    pub access_latency: BTreeMap<PlayerId, SimTime>,
    pub jitter_ms: SimTime,
    /// Applied to links with at least one player endpoint.
    pub loss_rate: f64,
    /// Allow jitter to reorder frames within a link.
    pub reorder: bool,
    /// Keep a copy of every frame put on the wire.
    pub capture: bool,
}

#[derive(Debug, Clone)]
pub enum Event {
    Deliver { to: PlayerId, env: Envelope },
    Timer { entity: PlayerId, timer: Timer },
}

#[derive(Debug, Clone)]
pub struct CapturedFrame {
    pub time_ms: SimTime,
    pub from: PlayerId,
    pub to: PlayerId,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub sent: usize,
    pub delivered: usize,
    pub lost: usize,
    pub dropped_by_strategy: usize,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.sent == self.delivered + self.lost + self.dropped_by_strategy
    }
}

enum Pending {
    Frame {
        from: PlayerId,
        to: PlayerId,
        sent_at: SimTime,
        bytes: Vec<u8>,
    },
    Timer {
        entity: PlayerId,
        timer: Timer,
    },
}

pub struct Network {
    now: SimTime,
    seq: u64,
    queue: BTreeMap<(SimTime, u64), Pending>,
    config: NetConfig,
    endpoints: BTreeSet<PlayerId>,
    last_arrival: BTreeMap<(PlayerId, PlayerId), SimTime>,
    rng: SimRng,
    pub log: Vec<LogRecord>,
    pub captured: Vec<CapturedFrame>,
    /// Frames that failed to parse on delivery.
    pub undecodable: usize,
    /// Frames placed on the wire by an intruder rather than an endpoint.
    pub injected: usize,
}

impl Network {
    pub fn new(config: NetConfig, rng: SimRng) -> Result<Self, NetError> {
        if !(0.0..1.0).contains(&config.loss_rate) {
            return Err(NetError::BadLossRate(config.loss_rate));
        }
        let endpoints = config.access_latency.keys().copied().collect();
        Ok(Self {
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            config,
            endpoints,
            last_arrival: BTreeMap::new(),
            rng,
            log: Vec::new(),
            captured: Vec::new(),
            undecodable: 0,
            injected: 0,
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn register(&mut self, entity: PlayerId, access_latency: SimTime) {
        self.endpoints.insert(entity);
        self.config.access_latency.insert(entity, access_latency);
    }

    pub fn link(&self, a: PlayerId, b: PlayerId) -> Result<Link, NetError> {
        let la = *self.config.access_latency.get(&a).ok_or(NetError::UnknownEndpoint(a))?;
        let lb = *self.config.access_latency.get(&b).ok_or(NetError::UnknownEndpoint(b))?;
        Ok(Link {
            endpoints: (a, b),
            base_latency: la + lb,
            jitter: self.config.jitter_ms,
            loss_rate: if a.is_player() || b.is_player() {
                self.config.loss_rate
            } else {
                0.0
            },
        })
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Puts `msg` on the `from → to` link; `extra_delay` is strategy-imposed.
    pub fn send(
        &mut self,
        from: PlayerId,
        to: PlayerId,
        msg: &ProtocolMessage,
        extra_delay: SimTime,
    ) -> Result<Disposition, NetError> {
        let link = self.link(from, to)?;
        let bytes = wire::serialize(msg);
        let seq = self.next_seq();
        if self.config.capture {
            self.captured.push(CapturedFrame {
                time_ms: self.now,
                from,
                to,
                bytes: bytes.clone(),
            });
        }
        let lost = link.loss_rate > 0.0 && self.rng.gen_bool(link.loss_rate);
        let disposition = if lost {
            Disposition::Lost
        } else {
            let jitter = if link.jitter > 0 {
                self.rng.gen_range(0..=link.jitter)
            } else {
                0
            };
            let mut at = self.now + link.base_latency + jitter + extra_delay;
            if !self.config.reorder {
                let last = self.last_arrival.entry((from, to)).or_insert(0);
                at = at.max(*last);
                *last = at;
            }
            self.queue.insert(
                (at, seq),
                Pending::Frame {
                    from,
                    to,
                    sent_at: self.now,
                    bytes: bytes.clone(),
                },
            );
            Disposition::Delivered
        };
        self.log.push(LogRecord {
            time_ms: self.now,
            seq,
            from,
            to,
            msg_type: msg.message_type().name(),
            byte_len: bytes.len(),
            disposition,
        });
        Ok(disposition)
    }

    /// Logs a frame the sender's strategy swallowed.
    pub fn record_drop(&mut self, from: PlayerId, to: PlayerId, msg: &ProtocolMessage) {
        let seq = self.next_seq();
        self.log.push(LogRecord {
            time_ms: self.now,
            seq,
            from,
            to,
            msg_type: msg.message_type().name(),
            byte_len: wire::serialize(msg).len(),
            disposition: Disposition::DroppedByStrategy,
        });
    }

    /// Intruder write: raw `bytes` arrive at `to` at time `at`, claiming to
    /// come from `from`. Bypasses links, loss and the event log.
    pub fn inject(&mut self, at: SimTime, from: PlayerId, to: PlayerId, bytes: Vec<u8>) {
        let seq = self.next_seq();
        self.injected += 1;
        self.queue.insert(
            (at.max(self.now), seq),
            Pending::Frame {
                from,
                to,
                sent_at: at,
                bytes,
            },
        );
    }

    pub fn schedule_timer(&mut self, entity: PlayerId, at: SimTime, timer: Timer) {
        let seq = self.next_seq();
        self.queue.insert((at.max(self.now), seq), Pending::Timer { entity, timer });
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.keys().next().map(|(t, _)| *t)
    }

    /// Pops the next event in `(time, seq)` order and advances the clock.
    pub fn step(&mut self) -> Option<(SimTime, Event)> {
        loop {
            let ((at, _), pending) = self.queue.pop_first()?;
            debug_assert!(at >= self.now);
            self.now = at;
            match pending {
                Pending::Timer { entity, timer } => return Some((at, Event::Timer { entity, timer })),
                Pending::Frame {
                    from,
                    to,
                    sent_at,
                    bytes,
                } => match wire::deserialize(&bytes) {
                    Ok(msg) => return Some((at, Event::Deliver {
                        to,
                        env: Envelope { from, sent_at, msg },
                    })),
                    Err(_) => self.undecodable += 1,
                },
            }
        }
    }

    pub fn conservation(&self) -> Conservation {
        let mut c = Conservation::default();
        for r in &self.log {
            c.sent += 1;
            match r.disposition {
                Disposition::Delivered => c.delivered += 1,
                Disposition::Lost => c.lost += 1,
                Disposition::DroppedByStrategy => c.dropped_by_strategy += 1,
            }
        }
        c
    }

    /// SHA-256 over the event log, one line per record.
    pub fn log_digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.log {
            h.update(
                format!(
                    "{} {} {} {} {} {} {:?}\n",
                    r.time_ms, r.seq, r.from, r.to, r.msg_type, r.byte_len, r.disposition
                )
                .as_bytes(),
            );
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seeded_rng;
    use crate::wire::Body;

    fn net(jitter: SimTime, loss: f64, reorder: bool) -> Network {
        let access = [(PlayerId::REFEREE, 0), (PlayerId(2), 20), (PlayerId(3), 30)].into();
        Network::new(
            NetConfig {
                access_latency: access,
                jitter_ms: jitter,
                loss_rate: loss,
                reorder,
                capture: false,
            },
            seeded_rng(1),
        )
        .unwrap()
    }

    fn msg(from: u32) -> ProtocolMessage {
        ProtocolMessage::new(
            PlayerId(from),
            0,
            Body::Leave {
                mac: crate::crypto::MacTag([0; 32]),
            },
        )
    }

    #[test]
    fn latency_is_sum_of_access_links() {
        let mut n = net(0, 0.0, false);
        n.send(PlayerId(2), PlayerId::REFEREE, &msg(2), 0).unwrap();
        n.send(PlayerId(2), PlayerId(3), &msg(2), 0).unwrap();
        let (t1, _) = n.step().unwrap();
        let (t2, _) = n.step().unwrap();
        assert_eq!((t1, t2), (20, 50));
        assert!(n.step().is_none());
    }

    #[test]
    fn strategy_delay_is_additive() {
        let mut n = net(0, 0.0, false);
        n.send(PlayerId(2), PlayerId::REFEREE, &msg(2), 500).unwrap();
        assert_eq!(n.step().unwrap().0, 520);
    }

    #[test]
    fn ties_break_by_sequence() {
        let mut n = net(0, 0.0, false);
        n.schedule_timer(PlayerId(2), 10, Timer::Start);
        n.schedule_timer(PlayerId(3), 10, Timer::Start);
        let Some((_, Event::Timer { entity, .. })) = n.step() else { panic!() };
        assert_eq!(entity, PlayerId(2));
    }

    #[test]
    fn fifo_per_link_under_jitter() {
        let mut n = net(50, 0.0, false);
        for _ in 0..50 {
            n.send(PlayerId(2), PlayerId::REFEREE, &msg(2), 0).unwrap();
        }
        let mut last = 0;
        while let Some((t, _)) = n.step() {
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn loss_pattern_is_seeded() {
        let run = || {
            let mut n = net(5, 0.5, false);
            for _ in 0..100 {
                n.send(PlayerId(2), PlayerId::REFEREE, &msg(2), 0).unwrap();
            }
            (n.conservation(), n.log_digest())
        };
        let (c, d) = run();
        assert!(c.lost > 20 && c.lost < 80);
        assert!(c.holds());
        assert_eq!(run().1, d);
    }

    #[test]
    fn unknown_endpoint_and_bad_loss_rate() {
        let mut n = net(0, 0.0, false);
        assert_eq!(
            n.send(PlayerId(9), PlayerId::REFEREE, &msg(9), 0),
            Err(NetError::UnknownEndpoint(PlayerId(9)))
        );
        let cfg = NetConfig {
            access_latency: BTreeMap::new(),
            jitter_ms: 0,
            loss_rate: 1.0,
            reorder: false,
            capture: false,
        };
        assert!(Network::new(cfg, seeded_rng(0)).is_err());
    }

    #[test]
    fn empty_queue_is_quiescent() {
        let mut n = net(0, 0.0, false);
        assert!(n.is_quiescent());
        assert!(n.step().is_none());
    }
}
