//! Nodes, full-duplex links, static routing, the VPN tunnel model and the
//! shared data-server queue.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{Dist, RngStream, Time};
use crate::traffic::{segment, IdGen, InnerHeader, MessageRef, NodeId, Packet, PacketKind, TrafficClass};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host,
    LanAggregate { users: u32 },
    Router,
    Server,
    Firewall,
    Cloud,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Host => "host",
            NodeKind::LanAggregate { .. } => "lan-aggregate",
            NodeKind::Router => "router",
            NodeKind::Server => "server",
            NodeKind::Firewall => "firewall",
            NodeKind::Cloud => "cloud",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    /// Fixed per-packet forwarding latency (firewall and cloud only).
    pub processing_delay: Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub rate_bps: f64,
    pub propagation: Time,
}

pub type LinkId = usize;

/// A directed half of a link: the egress port at `from` towards `to`.
/// Port `2 * link` sends a->b, port `2 * link + 1` sends b->a.
pub type PortId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Port {
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowGrant {
    pub user: NodeId,
    pub server: NodeId,
    pub class: TrafficClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VpnTunnel {
    /// Remote-side endpoint.
    pub entry: NodeId,
    /// Internal-side endpoint.
    pub exit: NodeId,
    pub overhead_bytes: u32,
    pub permitted_flows: Vec<FlowGrant>,
}

impl VpnTunnel {
    pub fn permits(&self, user: NodeId, server: NodeId, class: TrafficClass) -> bool {
        self.permitted_flows
            .iter()
            .any(|g| g.user == user && g.server == server && g.class == class)
    }

    fn other_end(&self, at: NodeId) -> NodeId {
        if at == self.entry {
            self.exit
        } else {
            self.entry
        }
    }

    /// Wraps `packet` at endpoint `at`, addressing it to the opposite endpoint.
    pub fn encapsulate(&self, index: usize, mut packet: Packet, at: NodeId) -> Result<Packet, Error> {
        if packet.encapsulated {
            return Err(Error::AlreadyEncapsulated(packet.id));
        }
        let (user, server) = if at == self.entry {
            (packet.src, packet.dst)
        } else {
            (packet.dst, packet.src)
        };
        if !self.permits(user, server, packet.class) {
            return Err(Error::FlowNotPermitted {
                src: packet.src,
                dst: packet.dst,
                class: packet.class.name(),
            });
        }
        packet.inner = Some(InnerHeader {
            src: packet.src,
            dst: packet.dst,
            overhead: self.overhead_bytes,
            tunnel: index,
        });
        packet.src = at;
        packet.dst = self.other_end(at);
        packet.size_bytes += self.overhead_bytes;
        packet.encapsulated = true;
        Ok(packet)
    }
}

/// Wraps a remote user's packet at the tunnel entry.
pub fn vpn_encapsulate(packet: Packet, tunnel: &VpnTunnel) -> Result<Packet, Error> {
    tunnel.encapsulate(0, packet, tunnel.entry)
}

/// Restores the inner packet at a tunnel endpoint.
pub fn vpn_decapsulate(mut packet: Packet) -> Result<Packet, Error> {
    let inner = match (packet.encapsulated, packet.inner) {
        (true, Some(inner)) => inner,
        _ => return Err(Error::NotEncapsulated(packet.id)),
    };
    packet.src = inner.src;
    packet.dst = inner.dst;
    packet.size_bytes -= inner.overhead;
    packet.encapsulated = false;
    packet.inner = None;
    Ok(packet)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteDecision {
    Deliver,
    Forward(PortId),
    /// Must enter a tunnel at this node first.
    Tunnel {
        tunnel: usize,
    },
    /// Needs a tunnel the flow is not granted.
    Blocked,
}

/// Static network description with precomputed shortest-hop routes.
#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub tunnels: Vec<VpnTunnel>,
    next_port: Vec<Vec<Option<PortId>>>,
}

impl Topology {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>, tunnels: Vec<VpnTunnel>) -> Result<Self, Error> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Topology(format!(
                    "node `{}` has id {} at index {i}",
                    node.name, node.id
                )));
            }
            if !(node.processing_delay >= 0.0) {
                return Err(Error::Topology(format!(
                    "node `{}` has negative processing delay",
                    node.name
                )));
            }
            if nodes[..i].iter().any(|m| m.name == node.name) {
                return Err(Error::Topology(format!("duplicate node name `{}`", node.name)));
            }
        }
        for l in &links {
            if l.a >= n || l.b >= n || l.a == l.b {
                return Err(Error::Topology(format!("link {}-{} has bad endpoints", l.a, l.b)));
            }
            if !(l.rate_bps > 0.0) || !(l.propagation >= 0.0) {
                return Err(Error::Topology(format!(
                    "link {}-{} needs rate > 0 and propagation >= 0",
                    nodes[l.a].name, nodes[l.b].name
                )));
            }
        }
        for t in &tunnels {
            if t.entry >= n || t.exit >= n || t.entry == t.exit {
                return Err(Error::Topology("tunnel endpoints must be two distinct nodes".into()));
            }
        }
        let mut adj: Vec<Vec<PortId>> = vec![Vec::new(); n];
        for (i, l) in links.iter().enumerate() {
            adj[l.a].push(2 * i);
            adj[l.b].push(2 * i + 1);
        }
        let mut topo = Self {
            nodes,
            links,
            tunnels,
            next_port: Vec::new(),
        };
        // BFS from every destination over reversed edges gives first hops.
        let mut table = vec![vec![None; n]; n];
        for dst in 0..n {
            let mut seen = vec![false; n];
            seen[dst] = true;
            let mut frontier = VecDeque::from([dst]);
            while let Some(v) = frontier.pop_front() {
                for &port in &adj[v] {
                    let u = topo.port(port).to;
                    if !seen[u] {
                        seen[u] = true;
                        // u reaches dst by sending over the reverse port
                        table[u][dst] = Some(port ^ 1);
                        frontier.push_back(u);
                    }
                }
            }
        }
        topo.next_port = table;
        Ok(topo)
    }

    pub fn port(&self, id: PortId) -> Port {
        let l = &self.links[id / 2];
        if id.is_multiple_of(2) {
            Port {
                link: id / 2,
                from: l.a,
                to: l.b,
            }
        } else {
            Port {
                link: id / 2,
                from: l.b,
                to: l.a,
            }
        }
    }

    pub fn port_count(&self) -> usize {
        self.links.len() * 2
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Port at `from` whose link leads directly to `to`.
    pub fn port_between(&self, from: NodeId, to: NodeId) -> Option<PortId> {
        self.links.iter().enumerate().find_map(|(i, l)| {
            if l.a == from && l.b == to {
                Some(2 * i)
            } else if l.b == from && l.a == to {
                Some(2 * i + 1)
            } else {
                None
            }
        })
    }

    pub fn next_hop(&self, at: NodeId, dst: NodeId) -> Option<PortId> {
        self.next_port.get(at)?.get(dst).copied().flatten()
    }

    /// Node sequence from `src` to `dst` inclusive.
    pub fn path(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let mut out = vec![src];
        let mut at = src;
        while at != dst {
            at = self.port(self.next_hop(at, dst)?).to;
            out.push(at);
            if out.len() > self.nodes.len() {
                return None;
            }
        }
        Some(out)
    }

    pub fn reachable(&self, src: NodeId, dst: NodeId) -> bool {
        src == dst || self.next_hop(src, dst).is_some()
    }

    /// Tunnel whose far endpoint lies on the path from `at` (an endpoint) to `dst`.
    fn tunnel_needed(&self, at: NodeId, dst: NodeId) -> Option<usize> {
        self.tunnels.iter().position(|t| {
            (at == t.entry || at == t.exit) && self.path(at, dst).is_some_and(|p| p[1..].contains(&t.other_end(at)))
        })
    }

    /// Routing decision for `packet` currently at node `at`. Encapsulated
    /// packets are routed on their outer header.
    pub fn route(&self, packet: &Packet, at: NodeId) -> Result<RouteDecision, Error> {
        if packet.dst == at {
            return Ok(RouteDecision::Deliver);
        }
        if !packet.encapsulated {
            if let Some(ti) = self.tunnel_needed(at, packet.dst) {
                let t = &self.tunnels[ti];
                let (user, server) = if at == t.entry {
                    (packet.src, packet.dst)
                } else {
                    (packet.dst, packet.src)
                };
                return Ok(if t.permits(user, server, packet.class) {
                    RouteDecision::Tunnel { tunnel: ti }
                } else {
                    RouteDecision::Blocked
                });
            }
        }
        self.next_hop(at, packet.dst)
            .map(RouteDecision::Forward)
            .ok_or_else(|| {
                Error::Topology(format!(
                    "no route from `{}` to `{}`",
                    self.nodes[at].name, self.nodes[packet.dst].name
                ))
            })
    }
}

/// A reply waiting for or in service at the data server.
#[derive(Debug, Clone, PartialEq)]
struct PendingReply {
    request: Packet,
    reply_bytes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerAction {
    /// Service started; completion due at the given time.
    Started(Time),
    Queued,
    /// Backlog full; the request is discarded.
    Rejected(Packet),
}

/// Single FIFO service queue shared by every requester of one server.
#[derive(Debug, Clone)]
pub struct ServerModel {
    pub node: NodeId,
    pub service_rate_bps: f64,
    pub reply_size: Dist,
    pub max_backlog: usize,
    pub header_bytes: u32,
    pub mtu_payload: u32,
    queue: VecDeque<PendingReply>,
    busy: bool,
    rng: RngStream,
    pub served: u64,
    pub rejected: u64,
}

impl ServerModel {
    pub fn new(
        node: NodeId,
        service_rate_bps: f64,
        reply_size: Dist,
        max_backlog: usize,
        seed: u64,
    ) -> Result<Self, Error> {
        if !(service_rate_bps > 0.0) {
            return Err(Error::InvalidParameter {
                what: "server service rate",
                value: service_rate_bps,
            });
        }
        if !reply_size.is_positive() {
            return Err(Error::InvalidParameter {
                what: "server reply size",
                value: reply_size.mean(),
            });
        }
        if max_backlog == 0 {
            return Err(Error::InvalidParameter {
                what: "server backlog",
                value: 0.0,
            });
        }
        Ok(Self {
            node,
            service_rate_bps,
            reply_size,
            max_backlog,
            header_bytes: crate::traffic::HEADER_BYTES,
            mtu_payload: crate::traffic::MTU_PAYLOAD,
            queue: VecDeque::new(),
            busy: false,
            rng: RngStream::new(&format!("server:{node}"), seed),
            served: 0,
            rejected: 0,
        })
    }

    pub fn backlog(&self) -> usize {
        self.queue.len()
    }

    fn service_time(&self, bytes: u32) -> Time {
        f64::from(bytes) * 8.0 / self.service_rate_bps
    }

    /// Accepts a delivered request into the FIFO service queue.
    pub fn server_handle(&mut self, request: Packet, now: Time) -> Result<ServerAction, Error> {
        // the queue holds the reply in service plus the waiting ones
        if self.queue.len() >= self.max_backlog {
            self.rejected += 1;
            return Ok(ServerAction::Rejected(request));
        }
        let reply_bytes = match self.reply_size {
            Dist::Constant(v) => crate::engine::sample_constant(v)? as u32,
            d => (libm::ceil(d.sample(&mut self.rng)?) as u32).max(1),
        };
        self.queue.push_back(PendingReply { request, reply_bytes });
        if self.busy {
            Ok(ServerAction::Queued)
        } else {
            self.busy = true;
            Ok(ServerAction::Started(now + self.service_time(reply_bytes)))
        }
    }

    /// Completes the reply in service. Returns its packets and, if another
    /// request is waiting, the completion time of the next one.
    pub fn complete(&mut self, now: Time, ids: &mut IdGen) -> (Vec<Packet>, Option<Time>) {
        let Some(done) = self.queue.pop_front() else {
            self.busy = false;
            return (Vec::new(), None);
        };
        self.served += 1;
        let req = &done.request;
        let parts = segment(done.reply_bytes, self.mtu_payload);
        let message = ids.message();
        let count = parts.len() as u16;
        let packets = parts
            .into_iter()
            .enumerate()
            .map(|(i, p)| Packet {
                id: ids.packet(),
                class: req.class,
                dscp: req.dscp,
                size_bytes: p + self.header_bytes,
                payload_bytes: p,
                created_at: now,
                enqueued_at: None,
                dequeued_at: None,
                delivered_at: None,
                src: self.node,
                dst: req.src,
                user: req.user,
                kind: PacketKind::Reply,
                message: MessageRef {
                    id: message,
                    index: i as u16,
                    segments: count,
                },
                encapsulated: false,
                inner: None,
            })
            .collect();
        let next = self.queue.front().map(|n| now + self.service_time(n.reply_bytes));
        self.busy = next.is_some();
        (packets, next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{dscp_for_class, TrafficSource};

    fn node(id: NodeId, name: &str, kind: NodeKind) -> Node {
        Node {
            id,
            name: name.into(),
            kind,
            processing_delay: 0.0,
        }
    }

    fn link(a: NodeId, b: NodeId) -> Link {
        Link {
            a,
            b,
            rate_bps: 10e6,
            propagation: 0.0,
        }
    }

    /// users - ho - bo - server, plus remote r1/r2 - gw - fw - ho
    fn net() -> Topology {
        let nodes = vec![
            node(0, "users", NodeKind::LanAggregate { users: 10 }),
            node(1, "ho", NodeKind::Router),
            node(2, "bo", NodeKind::Router),
            node(3, "server", NodeKind::Server),
            node(4, "fw", NodeKind::Firewall),
            node(5, "gw", NodeKind::Router),
            node(6, "r1", NodeKind::Host),
            node(7, "r2", NodeKind::Host),
        ];
        let links = vec![
            link(0, 1),
            link(1, 2),
            link(2, 3),
            link(1, 4),
            link(4, 5),
            link(5, 6),
            link(5, 7),
        ];
        let tunnels = vec![VpnTunnel {
            entry: 5,
            exit: 4,
            overhead_bytes: 60,
            permitted_flows: vec![FlowGrant {
                user: 6,
                server: 3,
                class: TrafficClass::Database,
            }],
        }];
        Topology::new(nodes, links, tunnels).unwrap()
    }

    fn request(src: NodeId, dst: NodeId) -> Packet {
        let s = TrafficSource::database(src, dst, 0);
        let mut rng = RngStream::new("t", 1);
        crate::traffic::db_emit(&s, 0.0, &mut rng, &mut IdGen::new())
            .unwrap()
            .packets
            .remove(0)
    }

    #[test]
    fn path_via_routers() {
        let t = net();
        assert_eq!(t.path(0, 3).unwrap(), [0, 1, 2, 3]);
        assert_eq!(t.path(3, 0).unwrap(), [3, 2, 1, 0]);
        let p = request(0, 3);
        assert_eq!(t.route(&p, 0).unwrap(), RouteDecision::Forward(0));
        assert_eq!(t.port(t.next_hop(1, 3).unwrap()).to, 2);
    }

    #[test]
    fn delivery_at_destination() {
        let t = net();
        assert_eq!(t.route(&request(0, 3), 3).unwrap(), RouteDecision::Deliver);
    }

    #[test]
    fn unpermitted_remote_flow_blocked_at_entry() {
        let t = net();
        assert_eq!(t.route(&request(7, 3), 7).unwrap(), RouteDecision::Forward(2 * 6 + 1));
        assert_eq!(t.route(&request(7, 3), 5).unwrap(), RouteDecision::Blocked);
        assert_eq!(t.route(&request(6, 3), 5).unwrap(), RouteDecision::Tunnel { tunnel: 0 });
    }

    #[test]
    fn reply_to_remote_user_tunnels_at_exit() {
        let t = net();
        let mut reply = request(3, 6);
        reply.class = TrafficClass::Database;
        assert_eq!(t.route(&reply, 4).unwrap(), RouteDecision::Tunnel { tunnel: 0 });
    }

    #[test]
    fn encapsulation_sizes() {
        let t = net();
        let p = request(6, 3);
        assert_eq!(p.size_bytes, 240);
        let e = vpn_encapsulate(p.clone(), &t.tunnels[0]).unwrap();
        assert_eq!(e.size_bytes, 300);
        assert_eq!(e.dst, 4);
        assert!(vpn_encapsulate(e.clone(), &t.tunnels[0]).is_err());
        let d = vpn_decapsulate(e).unwrap();
        assert_eq!(d.size_bytes, 240);
        assert_eq!(d, p);
        assert!(vpn_decapsulate(p).is_err());
    }

    #[test]
    fn zero_overhead_is_identity_on_size() {
        let mut t = net();
        t.tunnels[0].overhead_bytes = 0;
        let p = request(6, 3);
        assert_eq!(
            vpn_encapsulate(p.clone(), &t.tunnels[0]).unwrap().size_bytes,
            p.size_bytes
        );
    }

    #[test]
    fn unpermitted_encapsulation_rejected() {
        let t = net();
        assert!(matches!(
            vpn_encapsulate(request(7, 3), &t.tunnels[0]),
            Err(Error::FlowNotPermitted { .. })
        ));
    }

    #[test]
    fn bad_links_rejected() {
        let nodes = vec![node(0, "a", NodeKind::Host), node(1, "b", NodeKind::Host)];
        let mut l = link(0, 1);
        l.rate_bps = 0.0;
        assert!(Topology::new(nodes.clone(), vec![l], vec![]).is_err());
        assert!(Topology::new(nodes, vec![link(0, 0)], vec![]).is_err());
    }

    #[test]
    fn unreachable_is_a_route_error() {
        let nodes = vec![node(0, "a", NodeKind::Host), node(1, "b", NodeKind::Host)];
        let t = Topology::new(nodes, vec![], vec![]).unwrap();
        assert!(!t.reachable(0, 1));
        assert!(t.route(&request(0, 1), 0).is_err());
    }

    #[test]
    fn server_fifo_delays_second_reply() {
        let mut s = ServerModel::new(3, 1e6, Dist::Constant(500.0), 8, 1).unwrap();
        let mut ids = IdGen::new();
        let a = s.server_handle(request(0, 3), 0.0).unwrap();
        let b = s.server_handle(request(0, 3), 0.0).unwrap();
        assert_eq!(a, ServerAction::Started(0.004));
        assert_eq!(b, ServerAction::Queued);
        let (pkts, next) = s.complete(0.004, &mut ids);
        assert_eq!(pkts.len(), 1);
        assert_eq!(pkts[0].dst, 0);
        assert_eq!(pkts[0].size_bytes, 540);
        assert_eq!(pkts[0].dscp, dscp_for_class(TrafficClass::Database));
        assert_eq!(next, Some(0.008));
        let (_, next) = s.complete(0.008, &mut ids);
        assert_eq!(next, None);
    }

    #[test]
    fn server_backlog_bound() {
        let mut s = ServerModel::new(3, 1e6, Dist::Constant(500.0), 2, 1).unwrap();
        s.server_handle(request(0, 3), 0.0).unwrap();
        s.server_handle(request(0, 3), 0.0).unwrap();
        assert!(matches!(
            s.server_handle(request(0, 3), 0.0).unwrap(),
            ServerAction::Rejected(_)
        ));
        assert_eq!(s.rejected, 1);
    }
}
