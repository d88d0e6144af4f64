//! Bulk-synchronous neighbour exchange between ranks on a periodic ring.
//!
//! Every rank owns one [`Endpoint`]. A call to [`Endpoint::exchange`] or
//! [`Endpoint::shift`] is one communication round: all ranks must make the same
//! call with the same [`Tag`]. Messages travel over in-process channels, so
//! sends never block and receives are effectively posted before the sends
//! complete.
//!
//! Communication cost follows the alpha-beta model: one round costs
//! `latency + inverse_bandwidth * bytes`, where `bytes` is the largest message
//! of the round. In [`ClockMode::Virtual`] each rank also carries a clock that
//! advances by `compute_cost` per point update and, at every round, jumps to
//! the maximum clock over all ranks plus the round cost.

use std::fmt;
use std::str::FromStr;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Wall,
    Virtual,
}

impl fmt::Display for ClockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockMode::Wall => "wall",
            ClockMode::Virtual => "virtual",
        })
    }
}

impl FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wall" | "wall-clock" => Ok(ClockMode::Wall),
            "virtual" | "virtual-time" => Ok(ClockMode::Virtual),
            other => Err(format!("unknown clock mode `{other}` (expected wall | virtual)")),
        }
    }
}

/// Alpha-beta communication model plus a per-update compute cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Seconds per message round (alpha).
    pub latency: f64,
    /// Seconds per byte (beta).
    pub inverse_bandwidth: f64,
    /// Seconds per point update, virtual mode only.
    pub compute_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            latency: 5e-6,
            inverse_bandwidth: 1e-10,
            compute_cost: 1e-8,
        }
    }
}

impl CostModel {
    pub fn round_cost(&self, bytes: usize) -> f64 {
        self.latency + self.inverse_bandwidth * bytes as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("latency", self.latency),
            ("inverse bandwidth", self.inverse_bandwidth),
            ("compute cost", self.compute_cost),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Per-substep halo exchange.
    Halo,
    /// Swept edge buffer travelling to the left neighbour.
    SweptLeft,
    /// Swept edge buffer travelling to the right neighbour.
    SweptRight,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Halo => "halo",
            Phase::SweptLeft => "swept-left",
            Phase::SweptRight => "swept-right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag {
    pub phase: Phase,
    /// Global round counter.
    pub round: u64,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.phase, self.round)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

/// Payload lengths, in items, each phase must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseContract {
    pub halo: usize,
    pub swept: usize,
}

impl PhaseContract {
    fn expected(&self, phase: Phase) -> usize {
        match phase {
            Phase::Halo => self.halo,
            Phase::SweptLeft | Phase::SweptRight => self.swept,
        }
    }
}

/// One sent message, as it appears in the exported log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogRecord {
    pub round: u64,
    pub source: usize,
    pub dest: usize,
    pub tag: Tag,
    pub bytes: usize,
}

impl LogRecord {
    pub const HEADER: &'static str = "round,source,dest,tag,bytes";
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.round, self.source, self.dest, self.tag, self.bytes
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RankComm {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub rounds: u64,
    /// Sum of modelled round costs, seconds.
    pub comm_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub exchange_rounds: u64,
    /// Modelled communication time along the critical path, seconds.
    pub virtual_comm_time: f64,
    pub per_rank: Vec<RankComm>,
}

impl CommStats {
    pub fn from_ranks(per_rank: Vec<RankComm>) -> Self {
        let exchange_rounds = per_rank.iter().map(|r| r.rounds).max().unwrap_or(0);
        let virtual_comm_time = per_rank.iter().map(|r| r.comm_time).fold(0.0, f64::max);
        Self {
            messages_sent: per_rank.iter().map(|r| r.messages_sent).sum(),
            bytes_sent: per_rank.iter().map(|r| r.bytes_sent).sum(),
            exchange_rounds,
            virtual_comm_time,
            per_rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("rank {rank}: {phase} payload has {got} items, contract is {expected}")]
    PayloadSizeMismatch {
        rank: usize,
        phase: Phase,
        expected: usize,
        got: usize,
    },
    #[error("rank {rank}: expected a message tagged {expected}, received {got}")]
    TagMismatch { rank: usize, expected: Tag, got: Tag },
    #[error("virtual clock used in wall-clock mode")]
    ModeMismatch,
    #[error("rank {rank}: channel from rank {peer} closed")]
    Disconnected { rank: usize, peer: usize },
    #[error("round aborted because another rank failed")]
    Aborted,
}

impl TransportError {
    /// True for errors that only report another rank's failure.
    pub fn is_secondary(&self) -> bool {
        matches!(
            self,
            TransportError::Disconnected { .. } | TransportError::Aborted
        )
    }
}

struct Envelope<T> {
    source: usize,
    tag: Tag,
    payload: Vec<T>,
}

#[derive(Debug)]
struct Gate {
    generation: u64,
    arrived: usize,
    running_max: f64,
    last_max: f64,
    aborted: bool,
}

/// Barrier that also reduces the ranks' clocks to their maximum and can be
/// aborted when one rank fails.
#[derive(Debug)]
struct ClockGate {
    ranks: usize,
    state: Mutex<Gate>,
    cv: Condvar,
}

impl ClockGate {
    fn new(ranks: usize) -> Self {
        Self {
            ranks,
            state: Mutex::new(Gate {
                generation: 0,
                arrived: 0,
                running_max: f64::NEG_INFINITY,
                last_max: 0.0,
                aborted: false,
            }),
            cv: Condvar::new(),
        }
    }

    fn max_of_round(&self, clock: f64) -> Result<f64, TransportError> {
        let mut g = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if g.aborted {
            return Err(TransportError::Aborted);
        }
        g.running_max = g.running_max.max(clock);
        g.arrived += 1;
        if g.arrived == self.ranks {
            g.last_max = g.running_max;
            g.running_max = f64::NEG_INFINITY;
            g.arrived = 0;
            g.generation += 1;
            self.cv.notify_all();
            return Ok(g.last_max);
        }
        let generation = g.generation;
        while g.generation == generation && !g.aborted {
            g = self.cv.wait(g).unwrap_or_else(|e| e.into_inner());
        }
        if g.generation == generation {
            return Err(TransportError::Aborted);
        }
        Ok(g.last_max)
    }

    fn abort(&self) {
        let mut g = self.state.lock().unwrap_or_else(|e| e.into_inner());
        g.aborted = true;
        self.cv.notify_all();
    }
}

/// A rank's view of the ring.
pub struct Endpoint<T> {
    rank: usize,
    left: usize,
    right: usize,
    mode: ClockMode,
    cost: CostModel,
    contract: PhaseContract,
    item_bytes: usize,
    to_left: Sender<Envelope<T>>,
    to_right: Sender<Envelope<T>>,
    from_left: Receiver<Envelope<T>>,
    from_right: Receiver<Envelope<T>>,
    gate: Arc<ClockGate>,
    clock: f64,
    stats: RankComm,
    log: Vec<LogRecord>,
}

/// Creates one endpoint per rank. `item_bytes` is the wire size of one payload item.
pub fn ring<T: Send>(
    ranks: usize,
    mode: ClockMode,
    cost: CostModel,
    contract: PhaseContract,
    item_bytes: usize,
) -> Vec<Endpoint<T>> {
    assert!(ranks >= 2, "a ring needs at least two ranks");
    let gate = Arc::new(ClockGate::new(ranks));
    let (mut tx_from_left, mut rx_from_left): (Vec<_>, Vec<_>) =
        (0..ranks).map(|_| channel()).map(|(t, r)| (Some(t), Some(r))).unzip();
    let (mut tx_from_right, mut rx_from_right): (Vec<_>, Vec<_>) =
        (0..ranks).map(|_| channel()).map(|(t, r)| (Some(t), Some(r))).unzip();
    (0..ranks)
        .map(|rank| {
            let left = (rank + ranks - 1) % ranks;
            let right = (rank + 1) % ranks;
            Endpoint {
                rank,
                left,
                right,
                mode,
                cost,
                contract,
                item_bytes,
                // what we send right arrives at the right neighbour's left side
                to_right: tx_from_left[right].take().expect("one sender per channel"),
                to_left: tx_from_right[left].take().expect("one sender per channel"),
                from_left: rx_from_left[rank].take().expect("one receiver per channel"),
                from_right: rx_from_right[rank].take().expect("one receiver per channel"),
                gate: Arc::clone(&gate),
                clock: 0.0,
                stats: RankComm::default(),
                log: Vec::new(),
            }
        })
        .collect()
}

impl<T: Send> Endpoint<T> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn stats(&self) -> &RankComm {
        &self.stats
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    /// Stats, message log and final clock.
    pub fn finish(mut self) -> (RankComm, Vec<LogRecord>, f64) {
        (self.stats, std::mem::take(&mut self.log), self.clock)
    }

    /// Releases every rank blocked in a round; call when this rank fails.
    pub fn abort(&self) {
        self.gate.abort();
    }

    /// Advances the virtual clock by `compute_units` point updates.
    pub fn virtual_clock_advance(&mut self, compute_units: u64) -> Result<(), TransportError> {
        if self.mode != ClockMode::Virtual {
            return Err(TransportError::ModeMismatch);
        }
        self.clock += compute_units as f64 * self.cost.compute_cost;
        Ok(())
    }

    /// Bidirectional round: sends `left_payload` to the left neighbour and
    /// `right_payload` to the right one, returns `(from_left, from_right)`.
    pub fn exchange(
        &mut self,
        left_payload: Vec<T>,
        right_payload: Vec<T>,
        tag: Tag,
    ) -> Result<(Vec<T>, Vec<T>), TransportError> {
        self.check_len(tag.phase, left_payload.len())?;
        self.check_len(tag.phase, right_payload.len())?;
        let bytes = left_payload.len().max(right_payload.len()) * self.item_bytes;
        self.send(Direction::Left, left_payload, tag)?;
        self.send(Direction::Right, right_payload, tag)?;
        let from_left = self.recv(Direction::Left, tag)?;
        let from_right = self.recv(Direction::Right, tag)?;
        self.finish_round(bytes)?;
        Ok((from_left, from_right))
    }

    /// One-directional round: every rank sends `payload` towards `direction`
    /// and receives its neighbour's payload from the opposite side.
    pub fn shift(
        &mut self,
        direction: Direction,
        payload: Vec<T>,
        tag: Tag,
    ) -> Result<Vec<T>, TransportError> {
        self.check_len(tag.phase, payload.len())?;
        let bytes = payload.len() * self.item_bytes;
        self.send(direction, payload, tag)?;
        let from = match direction {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        };
        let received = self.recv(from, tag)?;
        self.finish_round(bytes)?;
        Ok(received)
    }

    fn check_len(&self, phase: Phase, got: usize) -> Result<(), TransportError> {
        let expected = self.contract.expected(phase);
        if got != expected {
            return Err(TransportError::PayloadSizeMismatch {
                rank: self.rank,
                phase,
                expected,
                got,
            });
        }
        Ok(())
    }

    fn send(&mut self, direction: Direction, payload: Vec<T>, tag: Tag) -> Result<(), TransportError> {
        let (dest, channel) = match direction {
            Direction::Left => (self.left, &self.to_left),
            Direction::Right => (self.right, &self.to_right),
        };
        let bytes = payload.len() * self.item_bytes;
        channel
            .send(Envelope {
                source: self.rank,
                tag,
                payload,
            })
            .map_err(|_| TransportError::Disconnected {
                rank: self.rank,
                peer: dest,
            })?;
        self.stats.messages_sent += 1;
        self.stats.bytes_sent += bytes as u64;
        self.log.push(LogRecord {
            round: self.stats.rounds,
            source: self.rank,
            dest,
            tag,
            bytes,
        });
        Ok(())
    }

    fn recv(&mut self, from: Direction, tag: Tag) -> Result<Vec<T>, TransportError> {
        let (peer, channel) = match from {
            Direction::Left => (self.left, &self.from_left),
            Direction::Right => (self.right, &self.from_right),
        };
        let envelope = channel.recv().map_err(|_| TransportError::Disconnected {
            rank: self.rank,
            peer,
        })?;
        debug_assert_eq!(envelope.source, peer);
        if envelope.tag != tag {
            return Err(TransportError::TagMismatch {
                rank: self.rank,
                expected: tag,
                got: envelope.tag,
            });
        }
        self.check_len(tag.phase, envelope.payload.len())?;
        Ok(envelope.payload)
    }

    fn finish_round(&mut self, bytes: usize) -> Result<(), TransportError> {
        let cost = self.cost.round_cost(bytes);
        if self.mode == ClockMode::Virtual {
            self.clock = self.gate.max_of_round(self.clock)? + cost;
        }
        self.stats.rounds += 1;
        self.stats.comm_time += cost;
        Ok(())
    }
}

impl<T> Drop for Endpoint<T> {
    fn drop(&mut self) {
        // a rank that unwinds must not leave the others parked in a round
        if std::thread::panicking() {
            self.gate.abort();
        }
    }
}

/// Merges per-rank logs into one deterministic sequence.
pub fn merge_logs(logs: impl IntoIterator<Item = Vec<LogRecord>>) -> Vec<LogRecord> {
    let mut all: Vec<LogRecord> = logs.into_iter().flatten().collect();
    all.sort_by_key(|r| (r.round, r.source, r.dest, r.tag));
    all
}

pub fn write_log(records: &[LogRecord], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "{}", LogRecord::HEADER)?;
    for r in records {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn contract(len: usize) -> PhaseContract {
        PhaseContract {
            halo: len,
            swept: len,
        }
    }

    fn cost(latency: f64) -> CostModel {
        CostModel {
            latency,
            inverse_bandwidth: 0.0,
            compute_cost: 1.0,
        }
    }

    fn run_ranks<T, R, F>(eps: Vec<Endpoint<T>>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(Endpoint<T>) -> R + Sync,
    {
        thread::scope(|s| {
            let handles: Vec<_> = eps.into_iter().map(|ep| s.spawn(|| f(ep))).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }

    #[test]
    fn two_ring_exchange() {
        let eps = ring::<u32>(2, ClockMode::Wall, cost(0.0), contract(1), 4);
        let out = run_ranks(eps, |mut ep| {
            let r = ep.rank() as u32;
            let tag = Tag {
                phase: Phase::Halo,
                round: 0,
            };
            let got = ep.exchange(vec![10 + r], vec![20 + r], tag).unwrap();
            (got, ep.finish())
        });
        // rank 0 hears rank 1 on both sides: its right payload from the left, its left payload from the right
        assert_eq!(out[0].0, (vec![21], vec![11]));
        assert_eq!(out[1].0, (vec![20], vec![10]));
        for (_, (stats, log, _)) in &out {
            assert_eq!(stats.messages_sent, 2);
            assert_eq!(stats.bytes_sent, 8);
            assert_eq!(log.len(), 2);
        }
    }

    #[test]
    fn bytes_follow_payload_size() {
        let k = 5;
        let c = 56;
        let eps = ring::<u8>(3, ClockMode::Wall, cost(0.0), contract(k), c);
        let out = run_ranks(eps, |mut ep| {
            for round in 0..4 {
                let tag = Tag {
                    phase: Phase::Halo,
                    round,
                };
                ep.exchange(vec![0; k], vec![1; k], tag).unwrap();
            }
            ep.finish().0
        });
        for s in out {
            assert_eq!(s.bytes_sent, 4 * 2 * (k * c) as u64);
            assert_eq!(s.rounds, 4);
        }
    }

    #[test]
    fn latency_only_rounds_accumulate() {
        let eps = ring::<u8>(4, ClockMode::Virtual, cost(1e-4), contract(1), 1);
        let out = run_ranks(eps, |mut ep| {
            for round in 0..10 {
                let tag = Tag {
                    phase: Phase::SweptLeft,
                    round,
                };
                ep.shift(Direction::Left, vec![0], tag).unwrap();
            }
            ep.finish()
        });
        for (stats, _, clock) in out {
            assert!((stats.comm_time - 1e-3).abs() < 1e-15);
            assert!((clock - 1e-3).abs() < 1e-15);
        }
    }

    #[test]
    fn clocks_meet_at_round_maximum_plus_cost() {
        let eps = ring::<u8>(2, ClockMode::Virtual, cost(1.0), contract(1), 1);
        let out = run_ranks(eps, |mut ep| {
            let start = if ep.rank() == 0 { 3 } else { 5 };
            ep.virtual_clock_advance(start).unwrap();
            ep.virtual_clock_advance(0).unwrap();
            let tag = Tag {
                phase: Phase::Halo,
                round: 0,
            };
            ep.exchange(vec![0], vec![0], tag).unwrap();
            let after_one = ep.clock();
            for round in 1..4 {
                let tag = Tag {
                    phase: Phase::Halo,
                    round,
                };
                ep.exchange(vec![0], vec![0], tag).unwrap();
            }
            (after_one, ep.clock())
        });
        for (after_one, last) in out {
            assert_eq!(after_one, 6.0);
            assert_eq!(last, 5.0 + 4.0);
        }
    }

    #[test]
    fn wall_mode_rejects_virtual_clock() {
        let mut eps = ring::<u8>(2, ClockMode::Wall, cost(1.0), contract(1), 1);
        assert_eq!(
            eps[0].virtual_clock_advance(1),
            Err(TransportError::ModeMismatch)
        );
    }

    #[test]
    fn payload_size_is_checked() {
        let mut eps = ring::<u8>(2, ClockMode::Wall, cost(1.0), contract(2), 1);
        let tag = Tag {
            phase: Phase::Halo,
            round: 0,
        };
        let err = eps[0].exchange(vec![0], vec![0, 0], tag).unwrap_err();
        assert!(matches!(
            err,
            TransportError::PayloadSizeMismatch {
                expected: 2,
                got: 1,
                ..
            }
        ));
    }

    #[test]
    fn tag_mismatch_is_detected() {
        let eps = ring::<u8>(2, ClockMode::Wall, cost(0.0), contract(1), 1);
        let out = run_ranks(eps, |mut ep| {
            let round = ep.rank() as u64;
            let tag = Tag {
                phase: Phase::Halo,
                round,
            };
            ep.exchange(vec![0], vec![0], tag)
        });
        assert!(out
            .iter()
            .all(|r| matches!(r, Err(TransportError::TagMismatch { .. }))));
    }

    #[test]
    fn failed_rank_releases_the_others() {
        let eps = ring::<u8>(3, ClockMode::Virtual, cost(0.0), contract(1), 1);
        let out = run_ranks(eps, |mut ep| {
            if ep.rank() == 1 {
                ep.abort();
                return Err(TransportError::ModeMismatch);
            }
            let tag = Tag {
                phase: Phase::Halo,
                round: 0,
            };
            ep.exchange(vec![0], vec![0], tag).map(|_| ())
        });
        assert!(out[0].as_ref().unwrap_err().is_secondary());
        assert!(out[2].as_ref().unwrap_err().is_secondary());
    }

    #[test]
    fn every_payload_arrives_once_at_its_address() {
        let eps = ring::<(usize, u64, u8)>(4, ClockMode::Virtual, cost(0.0), contract(2), 8);
        let out = run_ranks(eps, |mut ep| {
            let me = ep.rank();
            let mut got = Vec::new();
            for round in 0..6u64 {
                let tag = Tag {
                    phase: Phase::Halo,
                    round,
                };
                let (l, r) = ep
                    .exchange(vec![(me, round, 0); 2], vec![(me, round, 1); 2], tag)
                    .unwrap();
                got.push((l, r));
            }
            (me, ep.left(), ep.right(), got, ep.finish().1)
        });
        for (me, left, right, got, _) in &out {
            for (round, (l, r)) in got.iter().enumerate() {
                assert_eq!(l, &vec![(*left, round as u64, 1); 2], "rank {me}");
                assert_eq!(r, &vec![(*right, round as u64, 0); 2], "rank {me}");
            }
        }
        let log = merge_logs(out.into_iter().map(|o| o.4));
        assert_eq!(log.len(), 4 * 2 * 6);
        let mut buf = Vec::new();
        write_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("round,source,dest,tag,bytes\n0,0,1,halo#0,16\n"));
    }
}
