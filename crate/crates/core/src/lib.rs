//! Discrete-event model of a DiffServ enterprise network.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO: scenarios are
//! plain values, a run produces in-memory metric series, and CSV rendering
//! returns strings. File handling, config parsing and the command line live in
//! the `qosim` crate.
//!
//! Layout follows the data path of a packet:
//!
//! * [`engine`] - event queue, clock, named random streams
//! * [`traffic`] - the four application classes, DSCP marks, segmentation
//! * [`qdisc`] - classifier, per-class queues, PQ / DWRR / FIFO, RED
//! * [`topology`] - nodes, links, static routes, VPN tunnel, data server
//! * [`metrics`] - per-class statistics and CSV rendering
//! * [`scenario`] - experiment description, validation, presets
//! * [`sim`] - the run driver tying the above together
#![no_std]
// validation is written `!(x > 0.0)` so NaN fails
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod engine;
pub mod metrics;
pub mod qdisc;
pub mod scenario;
pub mod sim;
pub mod topology;
pub mod traffic;

pub use engine::{EventQueue, RngStream, Time};
pub use metrics::{MetricKind, MetricSeries, Metrics, Summary};
pub use qdisc::{Discipline, QosInterface};
pub use scenario::{Preset, Scenario};
pub use sim::{RunReport, Simulation};
pub use traffic::{Dscp, Packet, TrafficClass};

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("causality violation: event at t={fire_time} scheduled when clock is t={now}")]
    Causality { fire_time: f64, now: f64 },
    #[error("invalid {what}: {value}")]
    InvalidParameter { what: &'static str, value: f64 },
    #[error("source of class {actual} used as a {expected} source")]
    WrongClass {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("unknown traffic class `{0}`")]
    UnknownClass(String),
    #[error("DSCP value {0} does not fit in 6 bits")]
    DscpRange(u8),
    #[error("packet {0} is already encapsulated")]
    AlreadyEncapsulated(u64),
    #[error("packet {0} is not encapsulated")]
    NotEncapsulated(u64),
    #[error("flow from node {src} to node {dst} ({class}) is not permitted through the tunnel")]
    FlowNotPermitted {
        src: usize,
        dst: usize,
        class: &'static str,
    },
    #[error("negative queuing delay {delay} for packet {packet}")]
    NegativeDelay { packet: u64, delay: f64 },
    #[error("invalid scenario at `{key}`: {message}")]
    Scenario { key: String, message: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}
