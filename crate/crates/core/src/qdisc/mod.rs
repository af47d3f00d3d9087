//! Router egress discipline: DSCP classification into per-class queues, a
//! shared byte-accounted buffer, RED, and the three schedulers (FIFO, strict
//! priority, and WFQ realized as deficit weighted round-robin).

pub mod red;

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec::Vec;

use crate::engine::{RngStream, Time};
use crate::traffic::{Dscp, Packet, TrafficClass};
use crate::Error;

pub use red::{RedParams, RedState, RedVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discipline {
    Fifo,
    Pq,
    Wfq,
}

impl Discipline {
    pub fn name(self) -> &'static str {
        match self {
            Discipline::Fifo => "fifo",
            Discipline::Pq => "pq",
            Discipline::Wfq => "wfq",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fifo" => Some(Discipline::Fifo),
            "pq" => Some(Discipline::Pq),
            "wfq" => Some(Discipline::Wfq),
            _ => None,
        }
    }
}

/// What happens when an admitted packet does not fit in the shared buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferPolicy {
    /// Drop the arriving packet.
    TailDrop,
    /// Evict queued packets of strictly lower priority (lowest first, from
    /// the tail) to make room; drop the arrival if that cannot free enough.
    PushOut,
}

impl BufferPolicy {
    pub fn name(self) -> &'static str {
        match self {
            BufferPolicy::TailDrop => "tail-drop",
            BufferPolicy::PushOut => "push-out",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tail-drop" => Some(BufferPolicy::TailDrop),
            "push-out" => Some(BufferPolicy::PushOut),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassEntry {
    pub queue: usize,
    /// 0 is the highest priority.
    pub rank: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTable {
    pub entries: BTreeMap<Dscp, ClassEntry>,
    pub default_queue: usize,
}

impl ClassifierTable {
    /// EF, AF41, AF21, DF onto queues 0..4 in that priority order; unknown
    /// codes go to the best-effort queue.
    pub fn diffserv() -> Self {
        let entries = TrafficClass::ALL
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                (
                    crate::traffic::dscp_for_class(c),
                    ClassEntry {
                        queue: i,
                        rank: i as u8,
                    },
                )
            })
            .collect();
        Self {
            entries,
            default_queue: TrafficClass::Ftp.index(),
        }
    }

    /// Everything into one queue.
    pub fn single() -> Self {
        Self {
            entries: BTreeMap::new(),
            default_queue: 0,
        }
    }

    pub fn classify(&self, dscp: Dscp) -> usize {
        self.entries.get(&dscp).map_or(self.default_queue, |e| e.queue)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let mut ranks: Vec<u8> = self.entries.values().map(|e| e.rank).collect();
        ranks.sort_unstable();
        let n = ranks.len();
        ranks.dedup();
        if ranks.len() != n {
            return Err(Error::Scenario {
                key: "classifier".into(),
                message: "priority ranks must be distinct".into(),
            });
        }
        Ok(())
    }
}

/// One per-class FIFO with its DWRR and RED state.
#[derive(Debug, Clone)]
pub struct ClassQueue {
    pub queue_id: usize,
    pub rank: u8,
    pub packets: VecDeque<Packet>,
    pub bytes_held: u64,
    pub weight: u32,
    pub quantum: u32,
    pub deficit: u32,
    pub red: Option<RedState>,
    red_rng: Option<RngStream>,
}

impl ClassQueue {
    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    fn push(&mut self, p: Packet) {
        self.bytes_held += u64::from(p.size_bytes);
        self.packets.push_back(p);
    }

    fn pop_front(&mut self, now: Time) -> Option<Packet> {
        let p = self.packets.pop_front()?;
        self.bytes_held -= u64::from(p.size_bytes);
        if self.packets.is_empty() {
            if let Some(red) = self.red.as_mut() {
                red.mark_idle(now);
            }
        }
        Some(p)
    }

    fn pop_back(&mut self, now: Time) -> Option<Packet> {
        let p = self.packets.pop_back()?;
        self.bytes_held -= u64::from(p.size_bytes);
        if self.packets.is_empty() {
            if let Some(red) = self.red.as_mut() {
                red.mark_idle(now);
            }
        }
        Some(p)
    }
}

/// Everything needed to build a [`QosInterface`].
#[derive(Debug, Clone, PartialEq)]
pub struct QosConfig {
    pub discipline: Discipline,
    /// Per-class weights in [`TrafficClass::ALL`] order.
    pub weights: [u32; 4],
    /// DWRR quantum per unit of weight, in bytes.
    pub quantum_per_weight: u32,
    pub red: Option<RedParams>,
    pub buffer_limit: u64,
    pub buffer_policy: BufferPolicy,
}

impl Default for QosConfig {
    fn default() -> Self {
        Self {
            discipline: Discipline::Pq,
            weights: [40, 30, 20, 10],
            quantum_per_weight: 150,
            red: Some(RedParams::default()),
            buffer_limit: 64 * 1024,
            buffer_policy: BufferPolicy::TailDrop,
        }
    }
}

impl QosConfig {
    /// A plain unlimited FIFO, used for ports that are not under study.
    pub fn unlimited_fifo() -> Self {
        Self {
            discipline: Discipline::Fifo,
            weights: [1, 1, 1, 1],
            quantum_per_weight: 1500,
            red: None,
            buffer_limit: u64::MAX,
            buffer_policy: BufferPolicy::TailDrop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    RedEarly,
    BufferOverflow,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::RedEarly => "red-early",
            DropReason::BufferOverflow => "buffer-overflow",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Accepted,
    Dropped(DropReason, Packet),
}

/// Result of [`QosInterface::enqueue`]: the fate of the arrival plus any
/// lower-priority packets pushed out to make room for it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnqueueResult {
    pub admission: Admission,
    pub evicted: Vec<Packet>,
}

/// A router egress port.
#[derive(Debug, Clone)]
pub struct QosInterface {
    pub discipline: Discipline,
    pub classifier: ClassifierTable,
    pub queues: Vec<ClassQueue>,
    pub buffer_limit: u64,
    pub buffer_used: u64,
    pub buffer_policy: BufferPolicy,
    pub link_rate_bps: f64,
    pub in_service: Option<(Packet, Time)>,
    red_slot: Time,
    /// DWRR round-robin list of backlogged queues; the front one is being served.
    active: VecDeque<usize>,
    turn_open: bool,
}

impl QosInterface {
    /// `label` names the interface's RED random streams.
    pub fn new(config: &QosConfig, link_rate_bps: f64, label: &str, seed: u64) -> Result<Self, Error> {
        if !(link_rate_bps > 0.0) {
            return Err(Error::InvalidParameter {
                what: "link rate",
                value: link_rate_bps,
            });
        }
        if config.buffer_limit == 0 {
            return Err(Error::InvalidParameter {
                what: "buffer limit",
                value: 0.0,
            });
        }
        let (classifier, nqueues) = match config.discipline {
            Discipline::Fifo => (ClassifierTable::single(), 1),
            Discipline::Pq | Discipline::Wfq => (ClassifierTable::diffserv(), 4),
        };
        classifier.validate()?;
        if config.weights.contains(&0) {
            return Err(Error::InvalidParameter {
                what: "queue weight",
                value: 0.0,
            });
        }
        let total_weight: u32 = config.weights.iter().take(nqueues).sum();
        let mut queues = Vec::with_capacity(nqueues);
        for i in 0..nqueues {
            let weight = if nqueues == 1 { total_weight } else { config.weights[i] };
            let share = config.buffer_limit as f64 * f64::from(weight) / f64::from(total_weight);
            let (red, red_rng) = match &config.red {
                Some(params) => {
                    params.validate()?;
                    let name = format!("red:{label}:{i}");
                    (
                        Some(RedState::for_share(params, share)?),
                        Some(RngStream::new(&name, seed)),
                    )
                }
                None => (None, None),
            };
            queues.push(ClassQueue {
                queue_id: i,
                rank: i as u8,
                packets: VecDeque::new(),
                bytes_held: 0,
                weight,
                quantum: weight * config.quantum_per_weight,
                deficit: 0,
                red,
                red_rng,
            });
        }
        let typical = config.red.map_or(500, |r| r.typical_packet_bytes);
        Ok(Self {
            discipline: config.discipline,
            classifier,
            queues,
            buffer_limit: config.buffer_limit,
            buffer_used: 0,
            buffer_policy: config.buffer_policy,
            link_rate_bps,
            in_service: None,
            red_slot: f64::from(typical) * 8.0 / link_rate_bps,
            active: VecDeque::new(),
            turn_open: false,
        })
    }

    pub fn classify(&self, packet: &Packet) -> usize {
        self.classifier.classify(packet.dscp)
    }

    pub fn is_idle(&self) -> bool {
        self.in_service.is_none()
    }

    pub fn is_backlogged(&self) -> bool {
        self.buffer_used > 0 || self.queues.iter().any(|q| !q.is_empty())
    }

    pub fn queued_packets(&self) -> usize {
        self.queues.iter().map(|q| q.packets.len()).sum()
    }

    /// Bytes queued per traffic class (by packet label, so FIFO is split too).
    pub fn bytes_by_class(&self) -> [u64; 4] {
        let mut out = [0u64; 4];
        for q in &self.queues {
            for p in &q.packets {
                out[p.class.index()] += u64::from(p.size_bytes);
            }
        }
        out
    }

    pub fn service_time(&self, packet: &Packet) -> Time {
        f64::from(packet.size_bytes) * 8.0 / self.link_rate_bps
    }

    /// RED decision, then buffer admission. Accepted packets are appended to
    /// their class queue and stamped with `enqueued_at`.
    ///
    /// An arrival that finds the transmitter idle and the buffer empty skips
    /// the size check: it is handed to the link at once and never waits in
    /// the buffer, so the caller must dequeue it in the same instant.
    pub fn enqueue(&mut self, mut packet: Packet, now: Time) -> EnqueueResult {
        let qi = self.classify(&packet);
        let slot = self.red_slot;
        {
            let q = &mut self.queues[qi];
            if let (Some(red), Some(rng)) = (q.red.as_mut(), q.red_rng.as_mut()) {
                red.update_avg(q.bytes_held as f64, now, slot);
                if red.drop_decision(rng) == RedVerdict::EarlyDrop {
                    return EnqueueResult {
                        admission: Admission::Dropped(DropReason::RedEarly, packet),
                        evicted: Vec::new(),
                    };
                }
            }
        }
        let size = u64::from(packet.size_bytes);
        let mut evicted = Vec::new();
        let cut_through = self.in_service.is_none() && self.buffer_used == 0;
        if !cut_through && self.buffer_used + size > self.buffer_limit {
            let fits = self.buffer_policy == BufferPolicy::PushOut && self.try_push_out(qi, size, now, &mut evicted);
            if !fits {
                return EnqueueResult {
                    admission: Admission::Dropped(DropReason::BufferOverflow, packet),
                    evicted,
                };
            }
        }
        packet.enqueued_at = Some(now);
        let was_empty = self.queues[qi].is_empty();
        self.queues[qi].push(packet);
        self.buffer_used += size;
        if was_empty && self.discipline == Discipline::Wfq && !self.active.contains(&qi) {
            self.active.push_back(qi);
        }
        EnqueueResult {
            admission: Admission::Accepted,
            evicted,
        }
    }

    fn try_push_out(&mut self, qi: usize, size: u64, now: Time, evicted: &mut Vec<Packet>) -> bool {
        let rank = self.queues[qi].rank;
        let reclaimable: u64 = self.queues.iter().filter(|q| q.rank > rank).map(|q| q.bytes_held).sum();
        if self.buffer_used - reclaimable + size > self.buffer_limit {
            return false;
        }
        let mut victims: Vec<usize> = (0..self.queues.len()).filter(|&i| self.queues[i].rank > rank).collect();
        victims.sort_by_key(|&i| core::cmp::Reverse(self.queues[i].rank));
        for v in victims {
            while self.buffer_used + size > self.buffer_limit {
                match self.queues[v].pop_back(now) {
                    Some(p) => {
                        self.buffer_used -= u64::from(p.size_bytes);
                        evicted.push(p);
                    }
                    None => break,
                }
            }
            if self.queues[v].is_empty() {
                self.queues[v].deficit = 0;
                if self.active.front() == Some(&v) {
                    self.turn_open = false;
                }
                self.active.retain(|&a| a != v);
            }
        }
        true
    }

    /// Picks the next packet per the discipline and removes it from the buffer.
    pub fn dequeue(&mut self, now: Time) -> Option<Packet> {
        let qi = match self.discipline {
            Discipline::Fifo => (!self.queues[0].is_empty()).then_some(0),
            Discipline::Pq => self.pick_pq(),
            Discipline::Wfq => self.pick_dwrr(),
        }?;
        let p = self.queues[qi].pop_front(now)?;
        self.buffer_used -= u64::from(p.size_bytes);
        Some(p)
    }

    /// Head of the highest-priority non-empty queue.
    pub fn dequeue_pq(&mut self, now: Time) -> Option<Packet> {
        let qi = self.pick_pq()?;
        let p = self.queues[qi].pop_front(now)?;
        self.buffer_used -= u64::from(p.size_bytes);
        Some(p)
    }

    /// Next packet in deficit round-robin order.
    pub fn dequeue_dwrr(&mut self, now: Time) -> Option<Packet> {
        let qi = self.pick_dwrr()?;
        let p = self.queues[qi].pop_front(now)?;
        self.buffer_used -= u64::from(p.size_bytes);
        Some(p)
    }

    fn pick_pq(&self) -> Option<usize> {
        self.queues
            .iter()
            .filter(|q| !q.is_empty())
            .min_by_key(|q| q.rank)
            .map(|q| q.queue_id)
    }

    /// Selects the DWRR queue to send from and charges its deficit. A visit
    /// adds one quantum; the queue keeps the turn while its head fits in the
    /// deficit. A queue that empties leaves the round with its deficit reset.
    fn pick_dwrr(&mut self) -> Option<usize> {
        loop {
            let &qi = self.active.front()?;
            let q = &mut self.queues[qi];
            if q.is_empty() {
                q.deficit = 0;
                self.active.pop_front();
                self.turn_open = false;
                continue;
            }
            if !self.turn_open {
                q.deficit = q.deficit.saturating_add(q.quantum);
                self.turn_open = true;
            }
            let head = q.packets.front().map_or(0, |p| p.size_bytes);
            if head <= q.deficit {
                q.deficit -= head;
                if q.packets.len() == 1 {
                    // the head is about to leave; the queue goes idle
                    q.deficit = 0;
                    self.active.pop_front();
                    self.turn_open = false;
                }
                return Some(qi);
            }
            self.active.rotate_left(1);
            self.turn_open = false;
        }
    }

    /// Binds a dequeued packet to the link; returns the completion time.
    pub fn start_transmission(&mut self, mut packet: Packet, now: Time) -> Time {
        packet.dequeued_at = Some(now);
        let done = now + self.service_time(&packet);
        self.in_service = Some((packet, done));
        done
    }

    pub fn finish_transmission(&mut self) -> Option<Packet> {
        self.in_service.take().map(|(p, _)| p)
    }

    pub fn check_invariants(&self) -> Result<(), Error> {
        let held: u64 = self.queues.iter().map(|q| q.bytes_held).sum();
        let actual: u64 = self
            .queues
            .iter()
            .flat_map(|q| q.packets.iter())
            .map(|p| u64::from(p.size_bytes))
            .sum();
        if held != self.buffer_used || actual != held {
            return Err(Error::Topology(format!(
                "buffer accounting drift: used {} held {} actual {}",
                self.buffer_used, held, actual
            )));
        }
        if self.buffer_used > self.buffer_limit {
            return Err(Error::Topology(format!(
                "buffer bound violated: {} > {}",
                self.buffer_used, self.buffer_limit
            )));
        }
        Ok(())
    }
}
