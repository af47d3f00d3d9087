//! Per-class statistics: windowed delay means and variances, drops,
//! buffer occupancy and delivered throughput, plus their CSV rendering.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::engine::Time;
use crate::qdisc::DropReason;
use crate::traffic::{NodeId, TrafficClass};
use crate::Error;

pub const CSV_HEADER: &str = "time_s,class,metric,value,warmup";
pub const SUMMARY_HEADER: &str = "class,metric,mean,max,p95";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricKind {
    QueuingDelay,
    QueueDelayVariation,
    E2eDelay,
    PacketDelayVariation,
    TrafficDropBps,
    BufferUsageBytes,
    ThroughputBps,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::QueuingDelay,
        MetricKind::QueueDelayVariation,
        MetricKind::E2eDelay,
        MetricKind::PacketDelayVariation,
        MetricKind::TrafficDropBps,
        MetricKind::BufferUsageBytes,
        MetricKind::ThroughputBps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::QueuingDelay => "queuing_delay",
            MetricKind::QueueDelayVariation => "queue_delay_variation",
            MetricKind::E2eDelay => "e2e_delay",
            MetricKind::PacketDelayVariation => "packet_delay_variation",
            MetricKind::TrafficDropBps => "traffic_drop_bps",
            MetricKind::BufferUsageBytes => "buffer_usage_bytes",
            MetricKind::ThroughputBps => "throughput_Bps",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Fixed decimal places used in CSV output.
    pub fn decimals(self) -> usize {
        match self {
            MetricKind::QueuingDelay | MetricKind::E2eDelay => 6,
            MetricKind::QueueDelayVariation | MetricKind::PacketDelayVariation => 12,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeriesClass {
    Class(TrafficClass),
    Aggregate,
}

impl SeriesClass {
    pub fn name(self) -> &'static str {
        match self {
            SeriesClass::Class(c) => c.name(),
            SeriesClass::Aggregate => "aggregate",
        }
    }
}

/// Why a packet never reached its destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossReason {
    RedEarly,
    BufferOverflow,
    VpnBlocked,
    ServerBacklog,
}

impl LossReason {
    pub fn name(self) -> &'static str {
        match self {
            LossReason::RedEarly => "red-early",
            LossReason::BufferOverflow => "buffer-overflow",
            LossReason::VpnBlocked => "vpn-blocked",
            LossReason::ServerBacklog => "server-backlog",
        }
    }
}

impl From<DropReason> for LossReason {
    fn from(r: DropReason) -> Self {
        match r {
            DropReason::RedEarly => LossReason::RedEarly,
            DropReason::BufferOverflow => LossReason::BufferOverflow,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub metric: MetricKind,
    pub class: SeriesClass,
    pub window: Time,
    /// (window end, value), strictly increasing in time.
    pub samples: Vec<(Time, f64)>,
}

/// Population variance by the two-pass formula; `None` for an empty window.
pub fn delay_variation(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    Some(ss / n)
}

pub fn throughput(window_bytes: u64, window: Time) -> f64 {
    window_bytes as f64 / window
}

fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossCount {
    pub packets: u64,
    pub bytes: u64,
}

/// Raw observations of one run, turned into windowed series by [`Metrics::series`].
#[derive(Debug, Clone)]
pub struct Metrics {
    pub window: Time,
    pub warmup: Time,
    queuing: [Vec<(Time, f64)>; 4],
    e2e: [Vec<(Time, f64)>; 4],
    delivered: [Vec<(Time, u32)>; 4],
    dropped: [Vec<(Time, u32)>; 4],
    losses: BTreeMap<(TrafficClass, LossReason), LossCount>,
    delivered_by_node: BTreeMap<(NodeId, TrafficClass), LossCount>,
    buffer_last: Time,
    buffer_level: [u64; 4],
    /// Byte-seconds of occupancy per window, per class.
    buffer_area: Vec<[f64; 4]>,
    pub buffer_peak: u64,
}

impl Metrics {
    pub fn new(window: Time, warmup: Time) -> Result<Self, Error> {
        if !(window > 0.0) {
            return Err(Error::InvalidParameter {
                what: "metric window",
                value: window,
            });
        }
        Ok(Self {
            window,
            warmup,
            queuing: Default::default(),
            e2e: Default::default(),
            delivered: Default::default(),
            dropped: Default::default(),
            losses: BTreeMap::new(),
            delivered_by_node: BTreeMap::new(),
            buffer_last: 0.0,
            buffer_level: [0; 4],
            buffer_area: Vec::new(),
            buffer_peak: 0,
        })
    }

    pub fn record_queuing_delay(
        &mut self,
        packet: u64,
        class: TrafficClass,
        delay: Time,
        now: Time,
    ) -> Result<(), Error> {
        if !(delay >= 0.0) {
            return Err(Error::NegativeDelay { packet, delay });
        }
        self.queuing[class.index()].push((now, delay));
        Ok(())
    }

    pub fn record_e2e_delay(&mut self, packet: u64, class: TrafficClass, delay: Time, now: Time) -> Result<(), Error> {
        if !(delay >= 0.0) {
            return Err(Error::NegativeDelay { packet, delay });
        }
        self.e2e[class.index()].push((now, delay));
        Ok(())
    }

    /// Bytes delivered to `node`; `observed` marks throughput observers.
    pub fn record_delivery(&mut self, node: NodeId, class: TrafficClass, bytes: u32, now: Time, observed: bool) {
        let c = self.delivered_by_node.entry((node, class)).or_default();
        c.packets += 1;
        c.bytes += u64::from(bytes);
        if observed {
            self.delivered[class.index()].push((now, bytes));
        }
    }

    pub fn record_drop(&mut self, class: TrafficClass, bytes: u32, reason: LossReason, now: Time) {
        let c = self.losses.entry((class, reason)).or_default();
        c.packets += 1;
        c.bytes += u64::from(bytes);
        if matches!(reason, LossReason::RedEarly | LossReason::BufferOverflow) {
            self.dropped[class.index()].push((now, bytes));
        }
    }

    /// Records the monitored buffer's new per-class occupancy at `now`.
    /// The previous level is integrated over the elapsed time.
    pub fn record_buffer_usage(&mut self, bytes_by_class: [u64; 4], now: Time) {
        self.integrate_buffer(now);
        self.buffer_level = bytes_by_class;
        self.buffer_peak = self.buffer_peak.max(bytes_by_class.iter().sum());
    }

    fn integrate_buffer(&mut self, now: Time) {
        let mut t = self.buffer_last;
        while t < now {
            let w = (t / self.window) as usize;
            let edge = ((w + 1) as f64 * self.window).min(now);
            if self.buffer_area.len() <= w {
                self.buffer_area.resize(w + 1, [0.0; 4]);
            }
            for (area, &level) in self.buffer_area[w].iter_mut().zip(&self.buffer_level) {
                *area += level as f64 * (edge - t);
            }
            if edge <= t {
                break;
            }
            t = edge;
        }
        self.buffer_last = self.buffer_last.max(now);
    }

    pub fn losses(&self) -> &BTreeMap<(TrafficClass, LossReason), LossCount> {
        &self.losses
    }

    pub fn loss_total(&self, class: TrafficClass) -> LossCount {
        self.losses
            .iter()
            .filter(|((c, _), _)| *c == class)
            .fold(LossCount::default(), |a, (_, l)| LossCount {
                packets: a.packets + l.packets,
                bytes: a.bytes + l.bytes,
            })
    }

    pub fn delivered_to(&self, node: NodeId, class: TrafficClass) -> LossCount {
        self.delivered_by_node.get(&(node, class)).copied().unwrap_or_default()
    }

    fn windows(&self, end: Time) -> usize {
        libm::ceil(end / self.window - 1e-9).max(0.0) as usize
    }

    fn window_end(&self, w: usize) -> Time {
        (w + 1) as f64 * self.window
    }

    /// Delay samples bucketed by window index.
    fn bucket(&self, samples: &[(Time, f64)], end: Time) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.windows(end)];
        for &(t, v) in samples {
            let w = ((t / self.window) as usize).min(out.len().saturating_sub(1));
            if let Some(b) = out.get_mut(w) {
                b.push(v);
            }
        }
        out
    }

    fn rate_series(&self, events: &[(Time, u32)], end: Time, bits: bool) -> Vec<(Time, f64)> {
        let n = self.windows(end);
        let mut bytes = vec![0u64; n];
        for &(t, b) in events {
            let w = ((t / self.window) as usize).min(n.saturating_sub(1));
            if n > 0 {
                bytes[w] += u64::from(b);
            }
        }
        let scale = if bits { 8 } else { 1 };
        bytes
            .into_iter()
            .enumerate()
            .map(|(w, b)| (self.window_end(w), throughput(b * scale, self.window)))
            .collect()
    }

    /// Windowed series for every metric and class, closing the run at `end`.
    pub fn series(&mut self, end: Time) -> Vec<MetricSeries> {
        self.integrate_buffer(end);
        let mut out = Vec::new();
        for class in TrafficClass::ALL {
            let i = class.index();
            let sc = SeriesClass::Class(class);
            for (delays, mean_kind, var_kind) in [
                (
                    &self.queuing[i],
                    MetricKind::QueuingDelay,
                    MetricKind::QueueDelayVariation,
                ),
                (&self.e2e[i], MetricKind::E2eDelay, MetricKind::PacketDelayVariation),
            ] {
                let buckets = self.bucket(delays, end);
                let mut means = Vec::new();
                let mut vars = Vec::new();
                for (w, b) in buckets.iter().enumerate() {
                    if let Some(var) = delay_variation(b) {
                        means.push((self.window_end(w), mean(b)));
                        vars.push((self.window_end(w), var));
                    }
                }
                out.push(self.make(mean_kind, sc, means));
                out.push(self.make(var_kind, sc, vars));
            }
            let drops = self.rate_series(&self.dropped[i], end, true);
            out.push(self.make(MetricKind::TrafficDropBps, sc, drops));
            let tput = self.rate_series(&self.delivered[i], end, false);
            out.push(self.make(MetricKind::ThroughputBps, sc, tput));
        }
        let n = self.windows(end);
        let mut usage: [Vec<(Time, f64)>; 5] = Default::default();
        for w in 0..n {
            let area = self.buffer_area.get(w).copied().unwrap_or([0.0; 4]);
            let span = self.window.min(end - w as f64 * self.window);
            let t = self.window_end(w);
            for c in 0..4 {
                usage[c].push((t, area[c] / span));
            }
            usage[4].push((t, area.iter().sum::<f64>() / span));
        }
        let [u0, u1, u2, u3, agg] = usage;
        for (class, u) in TrafficClass::ALL.into_iter().zip([u0, u1, u2, u3]) {
            out.push(self.make(MetricKind::BufferUsageBytes, SeriesClass::Class(class), u));
        }
        out.push(self.make(MetricKind::BufferUsageBytes, SeriesClass::Aggregate, agg));
        out.sort_by(|a, b| (a.metric.name(), a.class.name()).cmp(&(b.metric.name(), b.class.name())));
        out
    }

    fn make(&self, metric: MetricKind, class: SeriesClass, samples: Vec<(Time, f64)>) -> MetricSeries {
        MetricSeries {
            metric,
            class,
            window: self.window,
            samples,
        }
    }
}

/// A sample counts as warm-up when its window started before `warmup`.
pub fn in_warmup(time: Time, window: Time, warmup: Time) -> bool {
    time - window < warmup - 1e-9
}

fn fixed(value: f64, decimals: usize) -> String {
    let mut s = String::new();
    let _ = write!(s, "{value:.decimals$}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s.remove(0);
    }
    s
}

/// The value as it appears in the CSV, parsed back.
pub fn quantize(metric: MetricKind, value: f64) -> f64 {
    fixed(value, metric.decimals()).parse().unwrap_or(value)
}

/// Renders series as CSV rows sorted by (metric, class, time).
pub fn render_csv(series: &[MetricSeries], warmup: Time) -> String {
    let mut sorted: Vec<&MetricSeries> = series.iter().collect();
    sorted.sort_by(|a, b| (a.metric.name(), a.class.name()).cmp(&(b.metric.name(), b.class.name())));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in sorted {
        for &(t, v) in &s.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fixed(t, 6),
                s.class.name(),
                s.metric.name(),
                fixed(v, s.metric.decimals()),
                u8::from(in_warmup(t, s.window, warmup)),
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub class: SeriesClass,
    pub metric: MetricKind,
    pub mean: f64,
    pub max: f64,
    pub p95: f64,
    pub samples: usize,
}

/// Post-warm-up statistics of each series, computed on CSV-quantized values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Nearest-rank percentile of a sorted slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = libm::ceil(p / 100.0 * sorted.len() as f64).max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl Summary {
    pub fn from_series(series: &[MetricSeries], warmup: Time) -> Self {
        let mut rows = Vec::new();
        for s in series {
            let mut vals: Vec<f64> = s
                .samples
                .iter()
                .filter(|&&(t, _)| !in_warmup(t, s.window, warmup))
                .map(|&(_, v)| quantize(s.metric, v))
                .collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(f64::total_cmp);
            rows.push(SummaryRow {
                class: s.class,
                metric: s.metric,
                mean: mean(&vals),
                max: vals[vals.len() - 1],
                p95: percentile(&vals, 95.0),
                samples: vals.len(),
            });
        }
        rows.sort_by(|a, b| (a.class.name(), a.metric.name()).cmp(&(b.class.name(), b.metric.name())));
        Self { rows }
    }

    pub fn get(&self, class: SeriesClass, metric: MetricKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.class == class && r.metric == metric)
    }

    /// Post-warm-up mean for one class, if any sample exists.
    pub fn mean(&self, class: TrafficClass, metric: MetricKind) -> Option<f64> {
        self.get(SeriesClass::Class(class), metric).map(|r| r.mean)
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for r in &self.rows {
            let d = r.metric.decimals() + 3;
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.class.name(),
                r.metric.name(),
                fixed(r.mean, d),
                fixed(r.max, d),
                fixed(r.p95, d)
            );
        }
        out
    }
}
