//! The run driver: moves packets between sources, ports, nodes and the
//! server, and feeds the metric collectors.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::engine::{EventQueue, RngStream, RunSummary, SimEvent, Time};
use crate::metrics::{LossReason, MetricSeries, Metrics, Summary};
use crate::qdisc::{Admission, QosConfig, QosInterface};
use crate::scenario::{Built, Scenario};
use crate::topology::{vpn_decapsulate, PortId, RouteDecision, ServerAction, ServerModel, Topology};
use crate::traffic::{emit, IdGen, NodeId, Packet, PacketKind, TrafficClass, TrafficSource};
use crate::Error;

#[derive(Debug, Clone)]
enum Action {
    Emit(usize),
    /// Packet reached `node` over a link.
    Arrive {
        node: NodeId,
        packet: Packet,
    },
    /// Packet finished the node's processing delay.
    Forward {
        node: NodeId,
        packet: Packet,
    },
    TxDone(PortId),
    ServerDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Emit,
    Enqueue(PortId),
    Drop(PortId),
    TxStart(PortId),
    TxEnd(PortId),
    Arrive(NodeId),
    Deliver(NodeId),
    Blocked(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub time: Time,
    pub kind: TraceKind,
    pub packet: u64,
    pub class: TrafficClass,
    pub size_bytes: u32,
}

/// Per-class packet accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub emitted: u64,
    pub emitted_bytes: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub red_drops: u64,
    pub overflow_drops: u64,
    pub blocked: u64,
    pub in_flight: u64,
}

impl ClassCounts {
    pub fn conserved(&self) -> bool {
        self.emitted == self.delivered + self.red_drops + self.overflow_drops + self.blocked + self.in_flight
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub duration: Time,
    pub warmup: Time,
    pub series: Vec<MetricSeries>,
    pub summary: Summary,
    pub counts: [ClassCounts; 4],
    pub losses: Vec<(TrafficClass, LossReason, u64, u64)>,
    /// Bytes received per (node name, class).
    pub received: Vec<(String, TrafficClass, u64)>,
    pub buffer_limit: u64,
    pub buffer_peak: u64,
    pub server_served: u64,
    pub server_rejected: u64,
    pub engine: RunSummary,
}

impl RunReport {
    pub fn counts(&self, class: TrafficClass) -> ClassCounts {
        self.counts[class.index()]
    }

    pub fn received_bytes(&self, node: &str, class: TrafficClass) -> u64 {
        self.received
            .iter()
            .filter(|(n, c, _)| n == node && *c == class)
            .map(|(_, _, b)| *b)
            .sum()
    }

    pub fn dropped(&self, class: TrafficClass) -> u64 {
        let c = self.counts(class);
        c.red_drops + c.overflow_drops
    }

    pub fn drops_csv(&self) -> String {
        use core::fmt::Write;
        let mut out = String::from("class,reason,packets,bytes\n");
        for (class, reason, packets, bytes) in &self.losses {
            let _ = writeln!(out, "{},{},{},{}", class.name(), reason.name(), packets, bytes);
        }
        out
    }
}

pub struct Simulation {
    name: String,
    seed: u64,
    duration: Time,
    warmup: Time,
    topology: Topology,
    queue: EventQueue<Action>,
    ports: Vec<QosInterface>,
    monitored: PortId,
    observers: Vec<bool>,
    sources: Vec<(TrafficSource, RngStream)>,
    server: Option<ServerModel>,
    ids: IdGen,
    metrics: Metrics,
    counts: [ClassCounts; 4],
    in_transit: [u64; 4],
    trace: Option<Vec<TraceEntry>>,
    clock: Time,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, Error> {
        scenario.validate()?;
        let Built {
            topology,
            monitored_port,
            observers,
            sources,
            server,
        } = scenario.build()?;
        let seed = scenario.seed;
        let mut ports = Vec::with_capacity(topology.port_count());
        let plain = QosConfig::unlimited_fifo();
        for p in 0..topology.port_count() {
            let port = topology.port(p);
            let rate = topology.links[port.link].rate_bps;
            let label = format!("{}>{}", topology.nodes[port.from].name, topology.nodes[port.to].name);
            let config = if p == monitored_port { &scenario.qos } else { &plain };
            ports.push(QosInterface::new(config, rate, &label, seed)?);
        }
        let mut queue = EventQueue::new();
        let mut streams = Vec::with_capacity(sources.len());
        let mut per_spec = BTreeMap::new();
        for (si, (spec, source)) in sources.into_iter().enumerate() {
            let user = per_spec.entry(spec).or_insert(0u32);
            let mut rng = RngStream::new(&format!("source:{}:{}", scenario.sources[spec].name, user), seed);
            *user += 1;
            let first = source.start_time + scenario.sources[spec].start_spread * rng.uniform();
            if first < scenario.duration {
                queue.schedule(first, Action::Emit(si))?;
            }
            streams.push((source, rng));
        }
        let server = match server {
            Some((node, spec)) => Some(ServerModel::new(
                node,
                spec.service_rate_bps,
                spec.reply_bytes,
                spec.max_backlog,
                seed,
            )?),
            None => None,
        };
        Ok(Self {
            name: scenario.name.clone(),
            seed,
            duration: scenario.duration,
            warmup: scenario.warmup,
            topology,
            queue,
            ports,
            monitored: monitored_port,
            observers,
            sources: streams,
            server,
            ids: IdGen::new(),
            metrics: Metrics::new(scenario.window, scenario.warmup)?,
            counts: Default::default(),
            in_transit: [0; 4],
            trace: None,
            clock: 0.0,
        })
    }

    /// Records every packet movement; used by tests that inspect the event trace.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn monitored_port(&self) -> PortId {
        self.monitored
    }

    pub fn port(&self, id: PortId) -> &QosInterface {
        &self.ports[id]
    }

    fn log(&mut self, kind: TraceKind, p: &Packet) {
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEntry {
                time: self.clock,
                kind,
                packet: p.id,
                class: p.class,
                size_bytes: p.size_bytes,
            });
        }
    }

    /// Runs to the configured duration and collects the report.
    pub fn run(self) -> Result<RunReport, Error> {
        let (report, _) = self.run_keep()?;
        Ok(report)
    }

    /// Like [`Simulation::run`] but hands the finished simulation back.
    pub fn run_keep(mut self) -> Result<(RunReport, Self), Error> {
        let mut queue = core::mem::take(&mut self.queue);
        let engine = queue.run_until(self.duration, |q, ev| self.handle(q, ev))?;
        self.queue = queue;
        let report = self.report(engine);
        Ok((report, self))
    }

    fn handle(&mut self, q: &mut EventQueue<Action>, ev: SimEvent<Action>) -> Result<(), Error> {
        let now = ev.fire_time;
        self.clock = now;
        match ev.action {
            Action::Emit(si) => {
                let (source, rng) = &mut self.sources[si];
                let e = emit(source, now, rng, &mut self.ids)?;
                let node = source.src;
                if e.next_emit < self.duration {
                    q.schedule(e.next_emit, Action::Emit(si))?;
                }
                for p in e.packets {
                    self.created(&p);
                    self.log(TraceKind::Emit, &p);
                    self.at_node(q, node, p, now)?;
                }
            }
            Action::Arrive { node, packet } => {
                self.in_transit[packet.class.index()] -= 1;
                self.log(TraceKind::Arrive(node), &packet);
                let delay = self.topology.nodes[node].processing_delay;
                if delay > 0.0 {
                    self.in_transit[packet.class.index()] += 1;
                    q.schedule(now + delay, Action::Forward { node, packet })?;
                } else {
                    self.at_node(q, node, packet, now)?;
                }
            }
            Action::Forward { node, packet } => {
                self.in_transit[packet.class.index()] -= 1;
                self.at_node(q, node, packet, now)?;
            }
            Action::TxDone(port) => {
                let p = self.ports[port]
                    .finish_transmission()
                    .ok_or_else(|| Error::Topology(format!("transmission completed on idle port {port}")))?;
                self.log(TraceKind::TxEnd(port), &p);
                let hop = self.topology.port(port);
                let prop = self.topology.links[hop.link].propagation;
                self.in_transit[p.class.index()] += 1;
                q.schedule(
                    now + prop,
                    Action::Arrive {
                        node: hop.to,
                        packet: p,
                    },
                )?;
                self.start_next(q, port, now)?;
            }
            Action::ServerDone => {
                let Some(server) = self.server.as_mut() else {
                    return Ok(());
                };
                let (replies, next) = server.complete(now, &mut self.ids);
                let node = server.node;
                if let Some(t) = next {
                    q.schedule(t, Action::ServerDone)?;
                }
                for p in replies {
                    self.created(&p);
                    self.log(TraceKind::Emit, &p);
                    self.at_node(q, node, p, now)?;
                }
            }
        }
        Ok(())
    }

    fn created(&mut self, p: &Packet) {
        let c = &mut self.counts[p.class.index()];
        c.emitted += 1;
        c.emitted_bytes += u64::from(p.size_bytes);
    }

    fn lose(&mut self, p: &Packet, reason: LossReason, now: Time) -> Result<(), Error> {
        let c = &mut self.counts[p.class.index()];
        match reason {
            LossReason::RedEarly => c.red_drops += 1,
            LossReason::BufferOverflow => c.overflow_drops += 1,
            LossReason::VpnBlocked => c.blocked += 1,
            LossReason::ServerBacklog => {}
        }
        self.metrics.record_drop(p.class, p.size_bytes, reason, now);
        Ok(())
    }

    fn at_node(&mut self, q: &mut EventQueue<Action>, node: NodeId, mut p: Packet, now: Time) -> Result<(), Error> {
        if p.encapsulated && p.dst == node {
            p = vpn_decapsulate(p)?;
        }
        loop {
            match self.topology.route(&p, node)? {
                RouteDecision::Deliver => return self.deliver(q, node, p, now),
                RouteDecision::Forward(port) => return self.send(q, port, p, now),
                RouteDecision::Tunnel { tunnel } => {
                    p = self.topology.tunnels[tunnel].encapsulate(tunnel, p, node)?;
                }
                RouteDecision::Blocked => {
                    self.log(TraceKind::Blocked(node), &p);
                    return self.lose(&p, LossReason::VpnBlocked, now);
                }
            }
        }
    }

    fn deliver(&mut self, q: &mut EventQueue<Action>, node: NodeId, mut p: Packet, now: Time) -> Result<(), Error> {
        p.delivered_at = Some(now);
        self.log(TraceKind::Deliver(node), &p);
        let c = &mut self.counts[p.class.index()];
        c.delivered += 1;
        c.delivered_bytes += u64::from(p.size_bytes);
        self.metrics
            .record_delivery(node, p.class, p.size_bytes, now, self.observers[node]);
        self.metrics.record_e2e_delay(p.id, p.class, now - p.created_at, now)?;
        if p.kind == PacketKind::Request {
            if let Some(server) = self.server.as_mut().filter(|s| s.node == node) {
                match server.server_handle(p, now)? {
                    ServerAction::Started(t) => {
                        q.schedule(t, Action::ServerDone)?;
                    }
                    ServerAction::Queued => {}
                    ServerAction::Rejected(r) => {
                        self.metrics
                            .record_drop(r.class, r.size_bytes, LossReason::ServerBacklog, now);
                    }
                }
            }
        }
        Ok(())
    }

    fn send(&mut self, q: &mut EventQueue<Action>, port: PortId, p: Packet, now: Time) -> Result<(), Error> {
        let entry = TraceEntry {
            time: now,
            kind: TraceKind::Enqueue(port),
            packet: p.id,
            class: p.class,
            size_bytes: p.size_bytes,
        };
        let result = self.ports[port].enqueue(p, now);
        for v in &result.evicted {
            self.log(TraceKind::Drop(port), v);
            self.lose(v, LossReason::BufferOverflow, now)?;
        }
        match result.admission {
            Admission::Accepted => {
                if let Some(t) = self.trace.as_mut() {
                    t.push(entry);
                }
            }
            Admission::Dropped(reason, p) => {
                self.log(TraceKind::Drop(port), &p);
                self.lose(&p, reason.into(), now)?;
            }
        }
        if self.ports[port].in_service.is_none() {
            self.start_next(q, port, now)?;
        }
        if port == self.monitored {
            self.metrics.record_buffer_usage(self.ports[port].bytes_by_class(), now);
        }
        Ok(())
    }

    fn start_next(&mut self, q: &mut EventQueue<Action>, port: PortId, now: Time) -> Result<(), Error> {
        let Some(p) = self.ports[port].dequeue(now) else {
            return Ok(());
        };
        if port == self.monitored {
            let waited = now - p.enqueued_at.unwrap_or(now);
            self.metrics.record_queuing_delay(p.id, p.class, waited, now)?;
            self.metrics.record_buffer_usage(self.ports[port].bytes_by_class(), now);
        }
        self.log(TraceKind::TxStart(port), &p);
        let done = self.ports[port].start_transmission(p, now);
        q.schedule(done, Action::TxDone(port))?;
        self.ports[port].check_invariants()
    }

    fn report(&mut self, engine: RunSummary) -> RunReport {
        let mut counts = self.counts;
        for (i, c) in counts.iter_mut().enumerate() {
            c.in_flight = self.in_transit[i];
        }
        for port in &self.ports {
            for qu in &port.queues {
                for p in &qu.packets {
                    counts[p.class.index()].in_flight += 1;
                }
            }
            if let Some((p, _)) = &port.in_service {
                counts[p.class.index()].in_flight += 1;
            }
        }
        let series = self.metrics.series(self.duration);
        let summary = Summary::from_series(&series, self.warmup);
        let losses = self
            .metrics
            .losses()
            .iter()
            .map(|(&(c, r), l)| (c, r, l.packets, l.bytes))
            .collect();
        let mut received = Vec::new();
        for node in &self.topology.nodes {
            for class in TrafficClass::ALL {
                let d = self.metrics.delivered_to(node.id, class);
                if d.packets > 0 {
                    received.push((node.name.clone(), class, d.bytes));
                }
            }
        }
        let (served, rejected) = self.server.as_ref().map_or((0, 0), |s| (s.served, s.rejected));
        RunReport {
            name: self.name.clone(),
            seed: self.seed,
            duration: self.duration,
            warmup: self.warmup,
            series,
            summary,
            counts,
            losses,
            received,
            buffer_limit: self.ports[self.monitored].buffer_limit,
            buffer_peak: self.metrics.buffer_peak,
            server_served: served,
            server_rejected: rejected,
            engine,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricKind;
    use crate::qdisc::Discipline;

    fn short(mut s: Scenario) -> Scenario {
        s.duration = 30.0;
        s.warmup = 5.0;
        for src in &mut s.sources {
            src.start = src.start.min(5.0);
        }
        s
    }

    #[test]
    fn baseline_conserves_packets() {
        let r = Simulation::new(&short(Scenario::baseline(Discipline::Pq)))
            .unwrap()
            .run()
            .unwrap();
        for c in TrafficClass::ALL {
            assert!(r.counts(c).conserved(), "{c}: {:?}", r.counts(c));
        }
        assert!(r.counts(TrafficClass::Voice).emitted > 1000);
    }

    #[test]
    fn voice_throughput_matches_offered_load() {
        let r = Simulation::new(&short(Scenario::baseline(Discipline::Pq)))
            .unwrap()
            .run()
            .unwrap();
        let row = r
            .summary
            .get(
                crate::metrics::SeriesClass::Class(TrafficClass::Voice),
                MetricKind::ThroughputBps,
            )
            .unwrap();
        assert!((row.mean - 10_000.0).abs() < 1.0, "{}", row.mean);
    }

    #[test]
    fn trace_obeys_link_causality() {
        let sim = Simulation::new(&short(Scenario::baseline(Discipline::Wfq)))
            .unwrap()
            .with_trace();
        let (_, sim) = sim.run_keep().unwrap();
        let topo = sim.topology();
        let mut starts = BTreeMap::new();
        let mut checked = 0;
        for e in sim.trace() {
            match e.kind {
                TraceKind::TxStart(port) => {
                    starts.insert(e.packet, (port, e.time));
                }
                TraceKind::Arrive(node) => {
                    if let Some((port, t0)) = starts.remove(&e.packet) {
                        let hop = topo.port(port);
                        assert_eq!(hop.to, node);
                        let link = &topo.links[hop.link];
                        let expect = t0 + f64::from(e.size_bytes) * 8.0 / link.rate_bps + link.propagation;
                        assert!((e.time - expect).abs() < 1e-9);
                        checked += 1;
                    }
                }
                _ => {}
            }
        }
        assert!(checked > 1000);
    }
}
