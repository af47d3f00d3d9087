//! Experiment descriptions: topology, sources, QoS settings, VPN and server
//! parameters, run control, and the named presets.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{Dist, Time};
use crate::qdisc::{BufferPolicy, Discipline, QosConfig, RedParams};
use crate::topology::{FlowGrant, Link, Node, NodeKind, Topology, VpnTunnel};
use crate::traffic::{NodeId, TrafficClass, TrafficSource, UnitSpec, HEADER_BYTES, MTU_PAYLOAD};
use crate::Error;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_DURATION: Time = 300.0;
pub const DEFAULT_WARMUP: Time = 10.0;
pub const DEFAULT_WINDOW: Time = 1.0;
/// DS3 rate of the head-office to branch-office link.
pub const DEFAULT_BOTTLENECK_BPS: f64 = 44.736e6;

fn invalid(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Scenario {
        key: key.into(),
        message: message.into(),
    }
}

/// Parameters of the built-in topologies.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetTopology {
    pub name: String,
    pub bottleneck_bps: f64,
    pub bottleneck_propagation: Time,
    pub lan_bps: f64,
    pub video_lan_bps: f64,
    pub internet_bps: f64,
    /// Total propagation across the internet cloud, split over its two links.
    pub internet_propagation: Time,
    pub cloud_processing: Time,
    pub firewall_processing: Time,
}

impl PresetTopology {
    pub const NAMES: [&'static str; 2] = ["enterprise", "enterprise-internet"];

    pub fn new(name: &str) -> Result<Self, Error> {
        if !Self::NAMES.contains(&name) {
            return Err(invalid("topology.preset", format!("unknown topology `{name}`")));
        }
        Ok(Self {
            name: name.into(),
            bottleneck_bps: DEFAULT_BOTTLENECK_BPS,
            bottleneck_propagation: 0.0,
            lan_bps: 10e6,
            video_lan_bps: 100e6,
            internet_bps: 10e6,
            internet_propagation: 0.030,
            cloud_processing: 0.001,
            firewall_processing: 0.0005,
        })
    }

    pub fn declare(&self) -> Result<TopologyDecl, Error> {
        let node = |name: &str, kind, processing_delay| NodeDecl {
            name: name.into(),
            kind,
            processing_delay,
        };
        let link = |a: &str, b: &str, rate_bps, propagation| LinkDecl {
            a: a.into(),
            b: b.into(),
            rate_bps,
            propagation,
        };
        let mut nodes = vec![
            node("voice_src", NodeKind::Host, 0.0),
            node("video_src", NodeKind::Host, 0.0),
            node("data_server", NodeKind::Server, 0.0),
            node("ho_router", NodeKind::Router, 0.0),
            node("bo_router", NodeKind::Router, 0.0),
            node("voice_dst", NodeKind::Host, 0.0),
            node("video_dst", NodeKind::Host, 0.0),
            node("data_users", NodeKind::LanAggregate { users: 10 }, 0.0),
        ];
        let mut links = vec![
            link("voice_src", "ho_router", self.lan_bps, 0.0),
            link("video_src", "ho_router", self.video_lan_bps, 0.0),
            link("data_server", "ho_router", self.lan_bps, 0.0),
            link(
                "ho_router",
                "bo_router",
                self.bottleneck_bps,
                self.bottleneck_propagation,
            ),
            link("bo_router", "voice_dst", self.lan_bps, 0.0),
            link("bo_router", "video_dst", self.video_lan_bps, 0.0),
            link("bo_router", "data_users", self.lan_bps, 0.0),
        ];
        if self.name == "enterprise-internet" {
            let half = self.internet_propagation / 2.0;
            nodes.extend([
                node("firewall", NodeKind::Firewall, self.firewall_processing),
                node("internet", NodeKind::Cloud, self.cloud_processing),
                node("remote_gw", NodeKind::Router, 0.0),
                node("r_user1", NodeKind::Host, 0.0),
                node("r_user2", NodeKind::Host, 0.0),
            ]);
            links.extend([
                link("ho_router", "firewall", self.lan_bps, 0.0),
                link("firewall", "internet", self.internet_bps, half),
                link("internet", "remote_gw", self.internet_bps, half),
                link("remote_gw", "r_user1", self.lan_bps, 0.0),
                link("remote_gw", "r_user2", self.lan_bps, 0.0),
            ]);
        }
        Ok(TopologyDecl { nodes, links })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDecl {
    pub name: String,
    pub kind: NodeKind,
    pub processing_delay: Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDecl {
    pub a: String,
    pub b: String,
    pub rate_bps: f64,
    pub propagation: Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyDecl {
    pub nodes: Vec<NodeDecl>,
    pub links: Vec<LinkDecl>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Preset(PresetTopology),
    Inline(TopologyDecl),
}

impl TopologySpec {
    pub fn declare(&self) -> Result<TopologyDecl, Error> {
        match self {
            TopologySpec::Preset(p) => p.declare(),
            TopologySpec::Inline(d) => Ok(d.clone()),
        }
    }
}

/// One application profile, instantiated once per user.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub name: String,
    pub class: TrafficClass,
    pub src: String,
    pub dst: String,
    pub users: u32,
    /// First emission of each user is at `start + U(0, start_spread)`.
    pub start: Time,
    pub start_spread: Time,
    pub interval: Dist,
    pub size: UnitSpec,
}

impl SourceSpec {
    fn from_model(
        name: &str,
        model: TrafficSource,
        src: &str,
        dst: &str,
        users: u32,
        start: Time,
        spread: Time,
    ) -> Self {
        Self {
            name: name.into(),
            class: model.class,
            src: src.into(),
            dst: dst.into(),
            users,
            start,
            start_spread: spread,
            interval: model.emission,
            size: model.unit,
        }
    }

    pub fn voice() -> Self {
        Self::from_model(
            "voice",
            TrafficSource::g711_voice(0, 0),
            "voice_src",
            "voice_dst",
            1,
            0.0,
            1.0,
        )
    }

    pub fn video() -> Self {
        Self::from_model(
            "video",
            TrafficSource::video_conference(0, 0),
            "video_src",
            "video_dst",
            1,
            0.0,
            1.0,
        )
    }

    pub fn database() -> Self {
        Self::from_model(
            "database",
            TrafficSource::database(0, 0, 0),
            "data_users",
            "data_server",
            10,
            10.0,
            5.0,
        )
    }

    /// Files flow from the server to the users (downloads).
    pub fn ftp() -> Self {
        Self::from_model(
            "ftp",
            TrafficSource::ftp(0, 0, 0),
            "data_server",
            "data_users",
            10,
            10.0,
            5.0,
        )
    }

    pub fn instantiate(&self, src: NodeId, dst: NodeId, user: u32) -> TrafficSource {
        TrafficSource {
            class: self.class,
            start_time: self.start,
            emission: self.interval,
            unit: self.size,
            mtu_payload: MTU_PAYLOAD,
            header_bytes: HEADER_BYTES,
            src,
            dst,
            user,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerSpec {
    pub node: String,
    pub service_rate_bps: f64,
    pub reply_bytes: Dist,
    pub max_backlog: usize,
}

impl Default for ServerSpec {
    fn default() -> Self {
        Self {
            node: "data_server".into(),
            service_rate_bps: 1e6,
            reply_bytes: Dist::Constant(500.0),
            max_backlog: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrantSpec {
    pub user: String,
    pub server: String,
    pub class: TrafficClass,
}

/// When disabled the tunnel endpoints still bound the private network, but
/// no flow is granted, so remote traffic is blocked at the entry.
#[derive(Debug, Clone, PartialEq)]
pub struct VpnSpec {
    pub enabled: bool,
    pub entry: String,
    pub exit: String,
    pub overhead_bytes: u32,
    pub grants: Vec<GrantSpec>,
}

impl Default for VpnSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            entry: "remote_gw".into(),
            exit: "firewall".into(),
            overhead_bytes: 60,
            grants: vec![GrantSpec {
                user: "r_user1".into(),
                server: "data_server".into(),
                class: TrafficClass::Database,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub topology: TopologySpec,
    /// Egress port under study: (from node, to node).
    pub monitored: (String, String),
    /// Nodes whose received bytes count as throughput.
    pub observers: Vec<String>,
    pub sources: Vec<SourceSpec>,
    pub qos: QosConfig,
    pub server: Option<ServerSpec>,
    pub vpn: Option<VpnSpec>,
    pub seed: u64,
    pub duration: Time,
    pub warmup: Time,
    pub window: Time,
}

/// A scenario resolved against its topology.
#[derive(Debug, Clone)]
pub struct Built {
    pub topology: Topology,
    pub monitored_port: usize,
    pub observers: Vec<bool>,
    /// (spec index, instantiated source)
    pub sources: Vec<(usize, TrafficSource)>,
    pub server: Option<(NodeId, ServerSpec)>,
}

impl Scenario {
    /// The four-class enterprise network under `discipline`.
    pub fn baseline(discipline: Discipline) -> Self {
        Self {
            name: format!("{}-baseline", discipline.name()),
            topology: TopologySpec::Preset(PresetTopology::new("enterprise").unwrap()),
            monitored: ("ho_router".into(), "bo_router".into()),
            observers: vec!["voice_dst".into(), "video_dst".into(), "data_users".into()],
            sources: vec![
                SourceSpec::voice(),
                SourceSpec::video(),
                SourceSpec::database(),
                SourceSpec::ftp(),
            ],
            qos: QosConfig {
                discipline,
                ..QosConfig::default()
            },
            server: Some(ServerSpec::default()),
            vpn: None,
            seed: DEFAULT_SEED,
            duration: DEFAULT_DURATION,
            warmup: DEFAULT_WARMUP,
            window: DEFAULT_WINDOW,
        }
    }

    /// Baseline extended with the internet domain and two remote users.
    pub fn vpn(enabled: bool) -> Self {
        let mut s = Self::baseline(Discipline::Pq);
        s.name = if enabled { "vpn-on" } else { "vpn-off" }.into();
        s.topology = TopologySpec::Preset(PresetTopology::new("enterprise-internet").unwrap());
        for user in ["r_user1", "r_user2"] {
            s.sources.push(SourceSpec {
                name: format!("{user}-database"),
                src: user.into(),
                users: 1,
                interval: Dist::Exponential { mean: 0.003 },
                ..SourceSpec::database()
            });
        }
        s.vpn = Some(VpnSpec {
            enabled,
            ..VpnSpec::default()
        });
        s
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.name.is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if !(self.warmup >= 0.0) {
            return Err(invalid("warmup", "must be >= 0"));
        }
        if !(self.duration > self.warmup) || !self.duration.is_finite() {
            return Err(invalid("duration", "must be finite and greater than warmup"));
        }
        if !(self.window > 0.0) {
            return Err(invalid("window", "must be > 0"));
        }
        let q = &self.qos;
        if q.buffer_limit == 0 {
            return Err(invalid("buffer_limit", "must be > 0"));
        }
        if q.weights.contains(&0) {
            return Err(invalid("weights", "every weight must be > 0"));
        }
        if q.quantum_per_weight == 0 {
            return Err(invalid("quantum_per_weight", "must be > 0"));
        }
        if q.discipline == Discipline::Wfq {
            let max_quantum = q.weights.iter().max().copied().unwrap_or(0) * q.quantum_per_weight;
            if max_quantum < HEADER_BYTES + MTU_PAYLOAD {
                return Err(invalid(
                    "quantum_per_weight",
                    format!("largest quantum {max_quantum} B is below the 1500 B MTU"),
                ));
            }
        }
        if let Some(red) = &q.red {
            red.validate().map_err(|e| invalid("red", e.to_string()))?;
        }
        for (i, s) in self.sources.iter().enumerate() {
            let key = |f: &str| format!("sources[{i}].{f}");
            if s.users == 0 {
                return Err(invalid(key("users"), "must be > 0"));
            }
            if !(s.start >= 0.0) {
                return Err(invalid(key("start"), "must be >= 0"));
            }
            if !(s.start_spread >= 0.0) {
                return Err(invalid(key("start_spread"), "must be >= 0"));
            }
            s.instantiate(0, 0, 0)
                .validate()
                .map_err(|e| invalid(key("interval"), e.to_string()))?;
        }
        if let Some(srv) = &self.server {
            if !(srv.service_rate_bps > 0.0) {
                return Err(invalid("server.service_rate_bps", "must be > 0"));
            }
            if !srv.reply_bytes.is_positive() {
                return Err(invalid("server.reply_bytes", "must be > 0"));
            }
            if srv.max_backlog == 0 {
                return Err(invalid("server.max_backlog", "must be > 0"));
            }
        }
        self.build().map(|_| ())
    }

    /// Builds the topology and resolves every name.
    pub fn build(&self) -> Result<Built, Error> {
        let decl = self.topology.declare()?;
        let nodes: Vec<Node> = decl
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| Node {
                id,
                name: n.name.clone(),
                kind: n.kind,
                processing_delay: n.processing_delay,
            })
            .collect();
        let lookup = |key: &str, name: &str| {
            nodes
                .iter()
                .position(|n| n.name == name)
                .ok_or_else(|| invalid(key, format!("unknown node `{name}`")))
        };
        let mut links = Vec::new();
        for (i, l) in decl.links.iter().enumerate() {
            links.push(Link {
                a: lookup(&format!("topology.links[{i}].a"), &l.a)?,
                b: lookup(&format!("topology.links[{i}].b"), &l.b)?,
                rate_bps: l.rate_bps,
                propagation: l.propagation,
            });
        }
        let mut tunnels = Vec::new();
        if let Some(v) = &self.vpn {
            let mut permitted_flows = Vec::new();
            if v.enabled {
                for (i, g) in v.grants.iter().enumerate() {
                    permitted_flows.push(FlowGrant {
                        user: lookup(&format!("vpn.grants[{i}].user"), &g.user)?,
                        server: lookup(&format!("vpn.grants[{i}].server"), &g.server)?,
                        class: g.class,
                    });
                }
            }
            tunnels.push(VpnTunnel {
                entry: lookup("vpn.entry", &v.entry)?,
                exit: lookup("vpn.exit", &v.exit)?,
                overhead_bytes: v.overhead_bytes,
                permitted_flows,
            });
        }
        let from = lookup("monitored", &self.monitored.0)?;
        let to = lookup("monitored", &self.monitored.1)?;
        let mut observers = vec![false; nodes.len()];
        for (i, o) in self.observers.iter().enumerate() {
            observers[lookup(&format!("observers[{i}]"), o)?] = true;
        }
        let mut sources = Vec::new();
        let mut resolved = Vec::new();
        for (i, s) in self.sources.iter().enumerate() {
            let src = lookup(&format!("sources[{i}].src"), &s.src)?;
            let dst = lookup(&format!("sources[{i}].dst"), &s.dst)?;
            if src == dst {
                return Err(invalid(format!("sources[{i}].dst"), "equals the source node"));
            }
            resolved.push((i, src, dst));
            for user in 0..s.users {
                sources.push((i, s.instantiate(src, dst, user)));
            }
        }
        let server = match &self.server {
            Some(srv) => Some((lookup("server.node", &srv.node)?, srv.clone())),
            None => None,
        };
        let topology = Topology::new(nodes, links, tunnels).map_err(|e| invalid("topology", e.to_string()))?;
        let monitored_port = topology
            .port_between(from, to)
            .ok_or_else(|| invalid("monitored", "no link between the monitored nodes"))?;
        for (i, src, dst) in resolved {
            if !topology.reachable(src, dst) {
                return Err(invalid(
                    format!("sources[{i}].dst"),
                    "no route from source to destination",
                ));
            }
            let s = &self.sources[i];
            if s.class == TrafficClass::Database
                && server.as_ref().is_some_and(|(n, _)| *n == dst)
                && !topology.reachable(dst, src)
            {
                return Err(invalid(format!("sources[{i}].src"), "no route for replies"));
            }
        }
        Ok(Built {
            topology,
            monitored_port,
            observers,
            sources,
            server,
        })
    }
}

/// The named experiments. Each expands into one or more runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PqBaseline,
    WfqBaseline,
    BufferSweep,
    VpnCompare,
}

/// Buffer sizes of the sweep, in KiB.
pub const SWEEP_KB: [u64; 5] = [1, 3, 5, 9, 10];

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::PqBaseline,
        Preset::WfqBaseline,
        Preset::BufferSweep,
        Preset::VpnCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PqBaseline => "pq-baseline",
            Preset::WfqBaseline => "wfq-baseline",
            Preset::BufferSweep => "buffer-sweep",
            Preset::VpnCompare => "vpn-compare",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::UnknownPreset(name.into()))
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::PqBaseline => "four classes under strict priority queuing",
            Preset::WfqBaseline => "four classes under weighted fair queuing (DWRR)",
            Preset::BufferSweep => "WFQ with RED, buffer limit 1, 3, 5, 9 and 10 KB",
            Preset::VpnCompare => "internet extension with the remote-user VPN off, then on",
        }
    }

    /// (run name, scenario) for each member run.
    pub fn runs(self) -> Vec<(String, Scenario)> {
        match self {
            Preset::PqBaseline => vec![("pq-baseline".into(), Scenario::baseline(Discipline::Pq))],
            Preset::WfqBaseline => vec![("wfq-baseline".into(), Scenario::baseline(Discipline::Wfq))],
            Preset::BufferSweep => SWEEP_KB
                .iter()
                .map(|&kb| {
                    let mut s = Scenario::baseline(Discipline::Wfq);
                    s.name = format!("buffer-{kb}kb");
                    s.qos.buffer_limit = kb * 1024;
                    s.qos.red = Some(RedParams::default());
                    s.qos.buffer_policy = BufferPolicy::TailDrop;
                    (s.name.clone(), s)
                })
                .collect(),
            Preset::VpnCompare => vec![
                ("vpn-off".into(), Scenario::vpn(false)),
                ("vpn-on".into(), Scenario::vpn(true)),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in Preset::ALL {
            for (_, s) in p.runs() {
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn sweep_has_five_members() {
        let runs = Preset::BufferSweep.runs();
        let limits: Vec<u64> = runs.iter().map(|(_, s)| s.qos.buffer_limit).collect();
        assert_eq!(limits, [1024, 3072, 5120, 9216, 10240]);
    }

    #[test]
    fn baselines_differ_only_in_discipline() {
        let mut pq = Scenario::baseline(Discipline::Pq);
        let wfq = Scenario::baseline(Discipline::Wfq);
        pq.qos.discipline = Discipline::Wfq;
        pq.name = wfq.name.clone();
        assert_eq!(pq, wfq);
    }

    #[test]
    fn vpn_runs_share_seed() {
        let runs = Preset::VpnCompare.runs();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].1.seed, runs[1].1.seed);
        assert!(!runs[0].1.vpn.as_ref().unwrap().enabled);
        assert!(runs[1].1.vpn.as_ref().unwrap().enabled);
    }

    #[test]
    fn unknown_preset() {
        assert_eq!(Preset::from_name("nosuch"), Err(Error::UnknownPreset("nosuch".into())));
    }

    #[test]
    fn constraint_violations_name_the_key() {
        let mut s = Scenario::baseline(Discipline::Pq);
        s.qos.buffer_limit = 0;
        assert!(matches!(s.validate(), Err(Error::Scenario { key, .. }) if key == "buffer_limit"));
        let mut s = Scenario::baseline(Discipline::Pq);
        s.warmup = 400.0;
        assert!(matches!(s.validate(), Err(Error::Scenario { key, .. }) if key == "duration"));
        let mut s = Scenario::baseline(Discipline::Pq);
        s.sources[0].dst = "nowhere".into();
        assert!(matches!(s.validate(), Err(Error::Scenario { key, .. }) if key == "sources[0].dst"));
    }

    #[test]
    fn small_quantum_rejected_under_wfq() {
        let mut s = Scenario::baseline(Discipline::Wfq);
        s.qos.quantum_per_weight = 10;
        assert!(matches!(s.validate(), Err(Error::Scenario { key, .. }) if key == "quantum_per_weight"));
    }

    #[test]
    fn unreachable_source_rejected() {
        let mut s = Scenario::baseline(Discipline::Pq);
        if let TopologySpec::Preset(p) = &s.topology {
            let mut decl = p.declare().unwrap();
            decl.links.retain(|l| l.b != "voice_dst");
            s.topology = TopologySpec::Inline(decl);
        }
        assert!(s.validate().is_err());
    }

    #[test]
    fn internet_paths() {
        let s = Scenario::vpn(true);
        let b = s.build().unwrap();
        let t = &b.topology;
        let id = |n: &str| t.node_by_name(n).unwrap();
        let path = t.path(id("r_user1"), id("data_server")).unwrap();
        let names: Vec<&str> = path.iter().map(|&i| t.nodes[i].name.as_str()).collect();
        assert_eq!(
            names,
            [
                "r_user1",
                "remote_gw",
                "internet",
                "firewall",
                "ho_router",
                "data_server"
            ]
        );
        assert_eq!(t.port(b.monitored_port).from, id("ho_router"));
    }
}
