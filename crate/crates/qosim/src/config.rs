//! TOML scenario files.
//!
//! A file either starts from a named preset run (`preset = "pq-baseline"`)
//! and overrides some of its keys, or spells out a complete scenario. Tables
//! merge key by key over the preset; arrays replace wholesale. `--override`
//! values are applied to the merged document before it is validated.

use std::collections::BTreeMap;
use std::fmt;

use qosim_core::engine::Dist;
use qosim_core::qdisc::{BufferPolicy, Discipline, QosConfig, RedParams};
use qosim_core::scenario::{
    GrantSpec, LinkDecl, NodeDecl, Preset, PresetTopology, Scenario, ServerSpec, SourceSpec, TopologyDecl,
    TopologySpec, VpnSpec, DEFAULT_DURATION, DEFAULT_SEED, DEFAULT_WARMUP, DEFAULT_WINDOW,
};
use qosim_core::topology::NodeKind;
use qosim_core::traffic::UnitSpec;
use qosim_core::TrafficClass;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{}{message}", at(*line))]
    Parse { line: Option<usize>, message: String },
    #[error("{}unknown preset `{name}` (available: {})", at(None), preset_names().join(", "))]
    UnknownPreset { name: String },
    #[error("{}preset `{name}` expands to several runs; name one of: {}", at(*line), members.join(", "))]
    AmbiguousPreset {
        line: Option<usize>,
        name: String,
        members: Vec<String>,
    },
    #[error("{}missing required key `{key}`", at(None))]
    Missing { key: String },
    #[error("{}`{key}`: {message}", at(*line))]
    Invalid {
        line: Option<usize>,
        key: String,
        message: String,
    },
    #[error("override `{text}`: {message}")]
    Override { text: String, message: String },
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl ConfigError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Parse { line, .. }
            | ConfigError::AmbiguousPreset { line, .. }
            | ConfigError::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

/// Every preset name and every member run name.
pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    for p in Preset::ALL {
        names.push(p.name().to_string());
        let runs = p.runs();
        if runs.len() > 1 {
            names.extend(runs.into_iter().map(|(n, _)| n));
        }
    }
    names
}

/// Looks up a preset or a single member run of one.
pub fn preset_runs(name: &str) -> Result<Vec<(String, Scenario)>, ConfigError> {
    if let Ok(p) = Preset::from_name(name) {
        return Ok(p.runs());
    }
    Preset::ALL
        .iter()
        .flat_map(|p| p.runs())
        .find(|(n, _)| n == name)
        .map(|run| vec![run])
        .ok_or_else(|| ConfigError::UnknownPreset { name: name.into() })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discipline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum_per_weight: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_limit: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitored: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub red: Option<RedFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<ServerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vpn: Option<VpnFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<SourceFile>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub database: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ftp: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typical_packet_bytes: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottleneck_bps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottleneck_propagation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lan_bps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_lan_bps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internet_bps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internet_propagation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_processing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub firewall_processing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<NodeFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkFile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub name: String,
    /// host | router | server | firewall | cloud | lan-aggregate
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<u32>,
    #[serde(default)]
    pub processing_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFile {
    pub a: String,
    pub b: String,
    pub rate_bps: f64,
    #[serde(default)]
    pub propagation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_rate_bps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_bytes: Option<DistFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_backlog: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VpnFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overhead_bytes: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grants: Option<Vec<GrantFile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantFile {
    pub user: String,
    pub server: String,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFile {
    pub name: String,
    pub class: String,
    pub src: String,
    pub dst: String,
    #[serde(default = "one")]
    pub users: u32,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub start_spread: f64,
    pub interval: DistFile,
    pub size: SizeFile,
}

fn one() -> u32 {
    1
}

/// `{ constant = 0.02 }` or `{ exponential = 30.0 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DistFile {
    Constant(f64),
    Exponential(f64),
}

/// A byte-size distribution or `{ frame = { width, height, bits_per_pixel } }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SizeFile {
    Constant(f64),
    Exponential(f64),
    Frame {
        width: u32,
        height: u32,
        bits_per_pixel: u32,
    },
}

impl From<Dist> for DistFile {
    fn from(d: Dist) -> Self {
        match d {
            Dist::Constant(v) => DistFile::Constant(v),
            Dist::Exponential { mean } => DistFile::Exponential(mean),
        }
    }
}

impl From<DistFile> for Dist {
    fn from(d: DistFile) -> Self {
        match d {
            DistFile::Constant(v) => Dist::Constant(v),
            DistFile::Exponential(mean) => Dist::Exponential { mean },
        }
    }
}

impl From<UnitSpec> for SizeFile {
    fn from(u: UnitSpec) -> Self {
        match u {
            UnitSpec::Bytes(Dist::Constant(v)) => SizeFile::Constant(v),
            UnitSpec::Bytes(Dist::Exponential { mean }) => SizeFile::Exponential(mean),
            UnitSpec::Frame {
                width,
                height,
                bits_per_pixel,
            } => SizeFile::Frame {
                width,
                height,
                bits_per_pixel,
            },
        }
    }
}

impl From<SizeFile> for UnitSpec {
    fn from(s: SizeFile) -> Self {
        match s {
            SizeFile::Constant(v) => UnitSpec::Bytes(Dist::Constant(v)),
            SizeFile::Exponential(mean) => UnitSpec::Bytes(Dist::Exponential { mean }),
            SizeFile::Frame {
                width,
                height,
                bits_per_pixel,
            } => UnitSpec::Frame {
                width,
                height,
                bits_per_pixel,
            },
        }
    }
}

impl ScenarioFile {
    /// The complete file for `s`; loading it yields `s` again.
    pub fn from_scenario(s: &Scenario) -> Self {
        let q = &s.qos;
        let red = match &q.red {
            Some(r) => RedFile {
                enabled: Some(true),
                weight: Some(r.weight),
                max_p: Some(r.max_p),
                min_frac: Some(r.min_frac),
                max_frac: Some(r.max_frac),
                typical_packet_bytes: Some(r.typical_packet_bytes),
            },
            None => RedFile {
                enabled: Some(false),
                ..RedFile::default()
            },
        };
        let topology = match &s.topology {
            TopologySpec::Preset(p) => TopologyFile {
                preset: Some(p.name.clone()),
                bottleneck_bps: Some(p.bottleneck_bps),
                bottleneck_propagation: Some(p.bottleneck_propagation),
                lan_bps: Some(p.lan_bps),
                video_lan_bps: Some(p.video_lan_bps),
                internet_bps: Some(p.internet_bps),
                internet_propagation: Some(p.internet_propagation),
                cloud_processing: Some(p.cloud_processing),
                firewall_processing: Some(p.firewall_processing),
                nodes: None,
                links: None,
            },
            TopologySpec::Inline(d) => TopologyFile {
                nodes: Some(
                    d.nodes
                        .iter()
                        .map(|n| NodeFile {
                            name: n.name.clone(),
                            kind: n.kind.name().into(),
                            users: match n.kind {
                                NodeKind::LanAggregate { users } => Some(users),
                                _ => None,
                            },
                            processing_delay: n.processing_delay,
                        })
                        .collect(),
                ),
                links: Some(
                    d.links
                        .iter()
                        .map(|l| LinkFile {
                            a: l.a.clone(),
                            b: l.b.clone(),
                            rate_bps: l.rate_bps,
                            propagation: l.propagation,
                        })
                        .collect(),
                ),
                ..TopologyFile::default()
            },
        };
        let server = Some(match &s.server {
            Some(srv) => ServerFile {
                enabled: Some(true),
                node: Some(srv.node.clone()),
                service_rate_bps: Some(srv.service_rate_bps),
                reply_bytes: Some(srv.reply_bytes.into()),
                max_backlog: Some(srv.max_backlog),
            },
            None => ServerFile {
                enabled: Some(false),
                ..ServerFile::default()
            },
        });
        let vpn = s.vpn.as_ref().map(|v| VpnFile {
            enabled: Some(v.enabled),
            entry: Some(v.entry.clone()),
            exit: Some(v.exit.clone()),
            overhead_bytes: Some(v.overhead_bytes),
            grants: Some(
                v.grants
                    .iter()
                    .map(|g| GrantFile {
                        user: g.user.clone(),
                        server: g.server.clone(),
                        class: g.class.name().into(),
                    })
                    .collect(),
            ),
        });
        ScenarioFile {
            preset: None,
            name: Some(s.name.clone()),
            seed: Some(s.seed),
            duration: Some(s.duration),
            warmup: Some(s.warmup),
            window: Some(s.window),
            discipline: Some(q.discipline.name().into()),
            quantum_per_weight: Some(q.quantum_per_weight),
            buffer_limit: Some(q.buffer_limit),
            buffer_policy: Some(q.buffer_policy.name().into()),
            monitored: Some([s.monitored.0.clone(), s.monitored.1.clone()]),
            observers: Some(s.observers.clone()),
            weights: Some(WeightsFile {
                voice: Some(q.weights[0]),
                video: Some(q.weights[1]),
                database: Some(q.weights[2]),
                ftp: Some(q.weights[3]),
            }),
            red: Some(red),
            topology: Some(topology),
            server,
            vpn,
            sources: Some(
                s.sources
                    .iter()
                    .map(|src| SourceFile {
                        name: src.name.clone(),
                        class: src.class.name().into(),
                        src: src.src.clone(),
                        dst: src.dst.clone(),
                        users: src.users,
                        start: src.start,
                        start_spread: src.start_spread,
                        interval: src.interval.into(),
                        size: src.size.into(),
                    })
                    .collect(),
            ),
        }
    }

    /// Converts a fully merged file into a scenario. Range checks are left to
    /// [`Scenario::validate`].
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        fn req<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T, ConfigError> {
            v.as_ref().ok_or_else(|| ConfigError::Missing { key: key.into() })
        }
        let bad = |key: &str, message: String| ConfigError::Invalid {
            line: None,
            key: key.into(),
            message,
        };
        let class = |key: &str, name: &str| TrafficClass::from_name(name).map_err(|e| bad(key, e.to_string()));

        let discipline = req(&self.discipline, "discipline")?;
        let discipline = Discipline::from_name(discipline)
            .ok_or_else(|| bad("discipline", format!("expected fifo, pq or wfq, got `{discipline}`")))?;
        let policy = req(&self.buffer_policy, "buffer_policy")?;
        let buffer_policy = match policy.as_str() {
            "tail-drop" => BufferPolicy::TailDrop,
            "push-out" => BufferPolicy::PushOut,
            other => {
                return Err(bad(
                    "buffer_policy",
                    format!("expected tail-drop or push-out, got `{other}`"),
                ))
            }
        };
        let w = req(&self.weights, "weights")?;
        let red_file = req(&self.red, "red")?;
        let red = if *req(&red_file.enabled, "red.enabled")? {
            Some(RedParams {
                weight: *req(&red_file.weight, "red.weight")?,
                max_p: *req(&red_file.max_p, "red.max_p")?,
                min_frac: *req(&red_file.min_frac, "red.min_frac")?,
                max_frac: *req(&red_file.max_frac, "red.max_frac")?,
                typical_packet_bytes: *req(&red_file.typical_packet_bytes, "red.typical_packet_bytes")?,
            })
        } else {
            None
        };
        let qos = QosConfig {
            discipline,
            weights: [
                *req(&w.voice, "weights.voice")?,
                *req(&w.video, "weights.video")?,
                *req(&w.database, "weights.database")?,
                *req(&w.ftp, "weights.ftp")?,
            ],
            quantum_per_weight: *req(&self.quantum_per_weight, "quantum_per_weight")?,
            red,
            buffer_limit: *req(&self.buffer_limit, "buffer_limit")?,
            buffer_policy,
        };

        let t = req(&self.topology, "topology")?;
        let topology = match (&t.preset, &t.nodes, &t.links) {
            (Some(name), None, None) => {
                let mut p = PresetTopology::new(name).map_err(|e| bad("topology.preset", e.to_string()))?;
                let set = |field: &mut f64, v: Option<f64>| {
                    if let Some(v) = v {
                        *field = v;
                    }
                };
                set(&mut p.bottleneck_bps, t.bottleneck_bps);
                set(&mut p.bottleneck_propagation, t.bottleneck_propagation);
                set(&mut p.lan_bps, t.lan_bps);
                set(&mut p.video_lan_bps, t.video_lan_bps);
                set(&mut p.internet_bps, t.internet_bps);
                set(&mut p.internet_propagation, t.internet_propagation);
                set(&mut p.cloud_processing, t.cloud_processing);
                set(&mut p.firewall_processing, t.firewall_processing);
                TopologySpec::Preset(p)
            }
            (None, Some(nodes), Some(links)) => {
                let tuned = [
                    t.bottleneck_bps,
                    t.bottleneck_propagation,
                    t.lan_bps,
                    t.video_lan_bps,
                    t.internet_bps,
                    t.internet_propagation,
                    t.cloud_processing,
                    t.firewall_processing,
                ];
                if tuned.iter().any(Option::is_some) {
                    return Err(bad("topology", "preset link parameters need `topology.preset`".into()));
                }
                let mut decl = TopologyDecl {
                    nodes: Vec::new(),
                    links: Vec::new(),
                };
                for (i, n) in nodes.iter().enumerate() {
                    let key = format!("topology.nodes[{i}].kind");
                    let kind = match (n.kind.as_str(), n.users) {
                        ("host", None) => NodeKind::Host,
                        ("router", None) => NodeKind::Router,
                        ("server", None) => NodeKind::Server,
                        ("firewall", None) => NodeKind::Firewall,
                        ("cloud", None) => NodeKind::Cloud,
                        ("lan-aggregate", Some(users)) => NodeKind::LanAggregate { users },
                        ("lan-aggregate", None) => {
                            return Err(ConfigError::Missing {
                                key: format!("topology.nodes[{i}].users"),
                            })
                        }
                        (k, Some(_)) if k != "lan-aggregate" => {
                            return Err(bad(&key, format!("`users` only applies to lan-aggregate, not `{k}`")))
                        }
                        (k, _) => return Err(bad(&key, format!("unknown node kind `{k}`"))),
                    };
                    decl.nodes.push(NodeDecl {
                        name: n.name.clone(),
                        kind,
                        processing_delay: n.processing_delay,
                    });
                }
                decl.links = links
                    .iter()
                    .map(|l| LinkDecl {
                        a: l.a.clone(),
                        b: l.b.clone(),
                        rate_bps: l.rate_bps,
                        propagation: l.propagation,
                    })
                    .collect();
                TopologySpec::Inline(decl)
            }
            (None, None, _) | (None, _, None) => {
                return Err(bad(
                    "topology",
                    "give either `preset` or both `nodes` and `links`".into(),
                ))
            }
            (Some(_), _, _) => {
                return Err(bad(
                    "topology",
                    "`preset` cannot be combined with `nodes`/`links`".into(),
                ))
            }
        };

        let mut sources = Vec::new();
        for (i, s) in req(&self.sources, "sources")?.iter().enumerate() {
            sources.push(SourceSpec {
                name: s.name.clone(),
                class: class(&format!("sources[{i}].class"), &s.class)?,
                src: s.src.clone(),
                dst: s.dst.clone(),
                users: s.users,
                start: s.start,
                start_spread: s.start_spread,
                interval: s.interval.into(),
                size: s.size.into(),
            });
        }

        let server = match &self.server {
            Some(f) if f.enabled != Some(false) => Some(ServerSpec {
                node: req(&f.node, "server.node")?.clone(),
                service_rate_bps: *req(&f.service_rate_bps, "server.service_rate_bps")?,
                reply_bytes: (*req(&f.reply_bytes, "server.reply_bytes")?).into(),
                max_backlog: *req(&f.max_backlog, "server.max_backlog")?,
            }),
            _ => None,
        };

        let vpn = match &self.vpn {
            Some(v) => {
                let mut grants = Vec::new();
                for (i, g) in req(&v.grants, "vpn.grants")?.iter().enumerate() {
                    grants.push(GrantSpec {
                        user: g.user.clone(),
                        server: g.server.clone(),
                        class: class(&format!("vpn.grants[{i}].class"), &g.class)?,
                    });
                }
                Some(VpnSpec {
                    enabled: *req(&v.enabled, "vpn.enabled")?,
                    entry: req(&v.entry, "vpn.entry")?.clone(),
                    exit: req(&v.exit, "vpn.exit")?.clone(),
                    overhead_bytes: *req(&v.overhead_bytes, "vpn.overhead_bytes")?,
                    grants,
                })
            }
            None => None,
        };

        let monitored = req(&self.monitored, "monitored")?;
        Ok(Scenario {
            name: req(&self.name, "name")?.clone(),
            topology,
            monitored: (monitored[0].clone(), monitored[1].clone()),
            observers: req(&self.observers, "observers")?.clone(),
            sources,
            qos,
            server,
            vpn,
            seed: *req(&self.seed, "seed")?,
            duration: *req(&self.duration, "duration")?,
            warmup: *req(&self.warmup, "warmup")?,
            window: *req(&self.window, "window")?,
        })
    }
}

/// Values every file gets unless it sets them. Topology, sources, monitored
/// port, observers and name have no default.
fn defaults() -> ScenarioFile {
    let q = QosConfig::default();
    let r = RedParams::default();
    ScenarioFile {
        seed: Some(DEFAULT_SEED),
        duration: Some(DEFAULT_DURATION),
        warmup: Some(DEFAULT_WARMUP),
        window: Some(DEFAULT_WINDOW),
        discipline: Some(q.discipline.name().into()),
        quantum_per_weight: Some(q.quantum_per_weight),
        buffer_limit: Some(q.buffer_limit),
        buffer_policy: Some(q.buffer_policy.name().into()),
        weights: Some(WeightsFile {
            voice: Some(q.weights[0]),
            video: Some(q.weights[1]),
            database: Some(q.weights[2]),
            ftp: Some(q.weights[3]),
        }),
        red: Some(RedFile {
            enabled: Some(true),
            weight: Some(r.weight),
            max_p: Some(r.max_p),
            min_frac: Some(r.min_frac),
            max_frac: Some(r.max_frac),
            typical_packet_bytes: Some(r.typical_packet_bytes),
        }),
        ..ScenarioFile::default()
    }
}

fn to_table(file: &ScenarioFile) -> Table {
    Table::try_from(file).expect("scenario files always serialize")
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A `key=value` override. The value is read as a TOML value and falls back
/// to a bare string, so `discipline=wfq` works without quotes.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub text: String,
    pub path: Vec<PathSeg>,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathSeg {
    Key(String),
    Index(usize),
}

impl fmt::Display for Override {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Splits `sources[0].users`, `sources.0.users` or `red.max_p` into segments.
pub fn parse_path(path: &str) -> Option<Vec<PathSeg>> {
    let mut segs = Vec::new();
    for part in path.split('.') {
        let (head, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if head.is_empty() && rest.is_empty() {
            return None;
        }
        if !head.is_empty() {
            match head.parse::<usize>() {
                Ok(i) => segs.push(PathSeg::Index(i)),
                Err(_) => segs.push(PathSeg::Key(head.into())),
            }
        }
        while !rest.is_empty() {
            let close = rest.find(']')?;
            segs.push(PathSeg::Index(rest[1..close].parse().ok()?));
            rest = &rest[close + 1..];
            if !rest.is_empty() && !rest.starts_with('[') {
                return None;
            }
        }
    }
    (!segs.is_empty()).then_some(segs)
}

impl std::str::FromStr for Override {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let fail = |message: &str| ConfigError::Override {
            text: text.into(),
            message: message.into(),
        };
        let (key, raw) = text.split_once('=').ok_or_else(|| fail("expected key=value"))?;
        let path = parse_path(key.trim()).ok_or_else(|| fail("malformed key path"))?;
        let raw = raw.trim();
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.into()));
        Ok(Override {
            text: text.into(),
            path,
            value,
        })
    }
}

impl Override {
    pub fn new(key: &str, value: impl Into<Value>) -> Self {
        let value = value.into();
        Override {
            text: format!("{key}={value}"),
            path: parse_path(key).expect("valid override key"),
            value,
        }
    }

    fn apply(&self, root: &mut Table) -> Result<(), ConfigError> {
        let mut doc = Value::Table(std::mem::take(root));
        let result = assign(&mut doc, &self.path, &self.value).map_err(|message| ConfigError::Override {
            text: self.text.clone(),
            message,
        });
        if let Value::Table(t) = doc {
            *root = t;
        }
        result
    }
}

fn assign(cur: &mut Value, path: &[PathSeg], value: &Value) -> Result<(), String> {
    let Some((seg, rest)) = path.split_first() else {
        *cur = value.clone();
        return Ok(());
    };
    let next = match (seg, cur) {
        (PathSeg::Key(k), Value::Table(t)) if rest.is_empty() => {
            t.insert(k.clone(), value.clone());
            return Ok(());
        }
        (PathSeg::Key(k), Value::Table(t)) => t.entry(k.clone()).or_insert_with(|| Value::Table(Table::new())),
        (PathSeg::Index(i), Value::Array(a)) => {
            let len = a.len();
            a.get_mut(*i)
                .ok_or_else(|| format!("index {i} out of range (length {len})"))?
        }
        (PathSeg::Key(k), _) => return Err(format!("`{k}` is not inside a table")),
        (PathSeg::Index(i), _) => return Err(format!("[{i}] is not inside an array")),
    };
    assign(next, rest, value)
}

/// A scenario together with its resolved file.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub scenario: Scenario,
    pub file: ScenarioFile,
}

impl Resolved {
    /// The `resolved.toml` echo. Loading it reproduces the same scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("scenario files always serialize")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_error(text: &str, e: toml::de::Error) -> ConfigError {
    ConfigError::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim_end().to_string(),
    }
}

/// Line of the deepest entry of `key` (as reported by validation, e.g.
/// `sources[2].interval`) that appears in `text`.
pub fn locate(text: &str, key: &str) -> Option<usize> {
    use toml::de::{DeTable, DeValue};
    let doc = DeTable::parse(text).ok()?;
    let segs = parse_path(key)?;
    let mut table = doc.get_ref();
    let mut found = None;
    let mut value: Option<&DeValue> = None;
    for seg in &segs {
        let next = match (seg, value) {
            (PathSeg::Key(k), None) => table.get(k.as_str()).map(|v| (v.span(), v.get_ref())),
            (PathSeg::Key(k), Some(DeValue::Table(t))) => {
                table = t;
                t.get(k.as_str()).map(|v| (v.span(), v.get_ref()))
            }
            (PathSeg::Index(i), Some(DeValue::Array(a))) => a.get(*i).map(|v| (v.span(), v.get_ref())),
            _ => None,
        };
        let Some((span, v)) = next else { break };
        found = Some(span.start);
        value = Some(v);
    }
    found.map(|o| line_of(text, o))
}

/// Turns a core validation error into a keyed, line-numbered one.
fn invalid(text: Option<&str>, e: qosim_core::Error) -> ConfigError {
    match e {
        qosim_core::Error::Scenario { key, message } => ConfigError::Invalid {
            line: text.and_then(|t| locate(t, &key)),
            key,
            message,
        },
        other => ConfigError::Invalid {
            line: None,
            key: "scenario".into(),
            message: other.to_string(),
        },
    }
}

fn finish(text: Option<&str>, mut merged: Table, overrides: &[Override]) -> Result<Resolved, ConfigError> {
    merged.remove("preset");
    for o in overrides {
        o.apply(&mut merged)?;
    }
    let file: ScenarioFile = merged
        .try_into()
        .map_err(|e: toml::de::Error| match overrides.is_empty() {
            true => ConfigError::Parse {
                line: None,
                message: e.message().trim_end().to_string(),
            },
            false => ConfigError::Override {
                text: overrides.iter().map(|o| o.text.as_str()).collect::<Vec<_>>().join(" "),
                message: e.message().trim_end().to_string(),
            },
        })?;
    let scenario = file.resolve().map_err(|e| match e {
        ConfigError::Invalid {
            line: None,
            key,
            message,
        } => ConfigError::Invalid {
            line: text.and_then(|t| locate(t, &key)),
            key,
            message,
        },
        e => e,
    })?;
    scenario.validate().map_err(|e| invalid(text, e))?;
    // Re-derive so the echo is canonical whatever the input spelled.
    let file = ScenarioFile::from_scenario(&scenario);
    Ok(Resolved { scenario, file })
}

/// Parses and validates one scenario file.
pub fn load_scenario(text: &str, overrides: &[Override]) -> Result<Resolved, ConfigError> {
    let user: ScenarioFile = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let table: Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let mut base = match &user.preset {
        Some(name) => {
            let mut runs = preset_runs(name)?;
            if runs.len() != 1 {
                return Err(ConfigError::AmbiguousPreset {
                    line: locate(text, "preset"),
                    name: name.clone(),
                    members: runs.into_iter().map(|(n, _)| n).collect(),
                });
            }
            to_table(&ScenarioFile::from_scenario(&runs.remove(0).1))
        }
        None => to_table(&defaults()),
    };
    merge(&mut base, table);
    finish(Some(text), base, overrides)
}

/// Every member run of a preset with `overrides` applied.
pub fn load_preset(name: &str, overrides: &[Override]) -> Result<Vec<Resolved>, ConfigError> {
    preset_runs(name)?
        .into_iter()
        .map(|(_, s)| finish(None, to_table(&ScenarioFile::from_scenario(&s)), overrides))
        .collect()
}

/// Resolved files keyed by run name, for listing.
pub fn describe_presets() -> BTreeMap<&'static str, (&'static str, Vec<String>)> {
    Preset::ALL
        .iter()
        .map(|p| {
            (
                p.name(),
                (p.description(), p.runs().into_iter().map(|(n, _)| n).collect()),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_preset_file_gets_defaults() {
        let r = load_scenario("preset = \"pq-baseline\"\n", &[]).unwrap();
        assert_eq!(r.scenario, Scenario::baseline(Discipline::Pq));
    }

    #[test]
    fn partial_tables_merge_over_the_preset() {
        let text = "preset = \"wfq-baseline\"\n[weights]\nftp = 5\n[red]\nenabled = false\n";
        let r = load_scenario(text, &[]).unwrap();
        assert_eq!(r.scenario.qos.weights, [40, 30, 20, 5]);
        assert_eq!(r.scenario.qos.red, None);
    }

    #[test]
    fn zero_buffer_limit_is_rejected_with_line() {
        let text = "preset = \"pq-baseline\"\n\nbuffer_limit = 0\n";
        let e = load_scenario(text, &[]).unwrap_err();
        assert_eq!(e.line(), Some(3));
        assert!(e.to_string().contains("buffer_limit"), "{e}");
    }

    #[test]
    fn unknown_key_is_reported_with_line() {
        let e = load_scenario("preset = \"pq-baseline\"\nbufer_limit = 10\n", &[]).unwrap_err();
        assert_eq!(e.line(), Some(2));
        assert!(e.to_string().contains("bufer_limit"), "{e}");
    }

    #[test]
    fn nested_unknown_key_is_reported_with_line() {
        let e = load_scenario("preset = \"pq-baseline\"\n[red]\nmaxp = 0.1\n", &[]).unwrap_err();
        assert_eq!(e.line(), Some(3));
    }

    #[test]
    fn missing_topology_is_named() {
        let e = load_scenario("name = \"x\"\n", &[]).unwrap_err();
        assert!(matches!(e, ConfigError::Missing { .. }), "{e}");
    }

    #[test]
    fn source_error_points_at_the_source() {
        let text = "preset = \"pq-baseline\"\n\n[[sources]]\nname = \"v\"\nclass = \"voice\"\nsrc = \"voice_src\"\ndst = \"voice_dst\"\nusers = 0\ninterval = { constant = 0.02 }\nsize = { constant = 160 }\n";
        let e = load_scenario(text, &[]).unwrap_err();
        assert!(
            matches!(&e, ConfigError::Invalid { key, .. } if key == "sources[0].users"),
            "{e}"
        );
        assert_eq!(e.line(), Some(8));
    }

    #[test]
    fn wfq_weights_keep_priority_order() {
        let text = "preset = \"pq-baseline\"\ndiscipline = \"wfq\"\nweights = { voice = 40, video = 30, database = 20, ftp = 10 }\n";
        let r = load_scenario(text, &[]).unwrap();
        let w = r.scenario.qos.weights;
        assert!(w.windows(2).all(|p| p[0] > p[1]));
        assert_eq!(r.scenario.qos.discipline, Discipline::Wfq);
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let text = "preset = \"wfq-baseline\"\nbuffer_limit = 1024\n";
        let o: Override = "buffer_limit=3072".parse().unwrap();
        let r = load_scenario(text, &[o]).unwrap();
        assert_eq!(r.scenario.qos.buffer_limit, 3072);
        assert!(r.to_toml().contains("buffer_limit = 3072"));
    }

    #[test]
    fn override_values_parse_as_toml_or_string() {
        let o: Override = "discipline=wfq".parse().unwrap();
        assert_eq!(o.value, Value::String("wfq".into()));
        let o: Override = "red.max_p = 0.2".parse().unwrap();
        assert_eq!(o.value, Value::Float(0.2));
        assert_eq!(o.path, [PathSeg::Key("red".into()), PathSeg::Key("max_p".into())]);
        let o: Override = "sources[1].users=3".parse().unwrap();
        assert_eq!(o.path[1], PathSeg::Index(1));
        assert!("novalue".parse::<Override>().is_err());
    }

    #[test]
    fn override_into_array_element() {
        let o: Override = "sources.2.users=4".parse().unwrap();
        let r = load_preset("pq-baseline", &[o]).unwrap();
        assert_eq!(r[0].scenario.sources[2].users, 4);
    }

    #[test]
    fn override_unknown_key_fails() {
        let o: Override = "bogus=1".parse().unwrap();
        assert!(matches!(
            load_preset("pq-baseline", &[o]),
            Err(ConfigError::Override { .. })
        ));
    }

    #[test]
    fn resolved_echo_round_trips_for_every_preset() {
        for name in preset_names() {
            for r in load_preset(&name, &[]).unwrap() {
                let again = load_scenario(&r.to_toml(), &[]).unwrap();
                assert_eq!(again.scenario, r.scenario, "{name}");
                assert_eq!(again.to_toml(), r.to_toml());
            }
        }
    }

    #[test]
    fn inline_topology_loads() {
        let text = r#"
name = "line"
monitored = ["a", "b"]
observers = ["b"]

[topology]
nodes = [
  { name = "a", kind = "host" },
  { name = "b", kind = "host" },
]
links = [{ a = "a", b = "b", rate_bps = 1e6 }]

[server]
enabled = false

[[sources]]
name = "tone"
class = "voice"
src = "a"
dst = "b"
interval = { constant = 0.02 }
size = { constant = 160 }
"#;
        let r = load_scenario(text, &[]).unwrap();
        assert!(matches!(r.scenario.topology, TopologySpec::Inline(_)));
        assert!(r.scenario.server.is_none());
        let again = load_scenario(&r.to_toml(), &[]).unwrap();
        assert_eq!(again.scenario, r.scenario);
    }

    #[test]
    fn sweep_needs_a_member_name() {
        let e = load_scenario("preset = \"buffer-sweep\"\n", &[]).unwrap_err();
        assert!(matches!(e, ConfigError::AmbiguousPreset { .. }));
        let r = load_scenario("preset = \"buffer-5kb\"\n", &[]).unwrap();
        assert_eq!(r.scenario.qos.buffer_limit, 5 * 1024);
    }

    #[test]
    fn unknown_preset_lists_choices() {
        let e = load_preset("nosuch", &[]).unwrap_err().to_string();
        assert!(e.contains("pq-baseline") && e.contains("vpn-compare"), "{e}");
    }

    #[test]
    fn path_parsing() {
        assert_eq!(
            parse_path("a.b"),
            Some(vec![PathSeg::Key("a".into()), PathSeg::Key("b".into())])
        );
        assert_eq!(parse_path("a[0][1]").unwrap().len(), 3);
        assert_eq!(parse_path(""), None);
        assert_eq!(parse_path("a..b"), None);
        assert_eq!(parse_path("a[x]"), None);
    }
}
