//! Application traffic: the four service classes, their DSCP marks, packet
//! records, and per-class emission state machines.

use alloc::vec::Vec;
use core::fmt;

use crate::engine::{Dist, RngStream, Time};
use crate::Error;

pub type NodeId = usize;

/// Flat per-packet header overhead (RTP/UDP/IP or TCP/IP abstracted).
pub const HEADER_BYTES: u32 = 40;
/// Payload carried by one full-size segment; with the header this is a 1500 B packet.
pub const MTU_PAYLOAD: u32 = 1460;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrafficClass {
    Voice,
    Video,
    Database,
    Ftp,
}

impl TrafficClass {
    /// In decreasing priority order.
    pub const ALL: [TrafficClass; 4] = [
        TrafficClass::Voice,
        TrafficClass::Video,
        TrafficClass::Database,
        TrafficClass::Ftp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Voice => "voice",
            TrafficClass::Video => "video",
            TrafficClass::Database => "database",
            TrafficClass::Ftp => "ftp",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, Error> {
        TrafficClass::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownClass(name.into()))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A 6-bit Differentiated Services Code Point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dscp(u8);

impl Dscp {
    pub const EF: Dscp = Dscp(0b101110);
    pub const AF41: Dscp = Dscp(0b100010);
    pub const AF21: Dscp = Dscp(0b010010);
    pub const DF: Dscp = Dscp(0b000000);

    pub fn new(bits: u8) -> Result<Self, Error> {
        if bits > 0b111111 {
            return Err(Error::DscpRange(bits));
        }
        Ok(Dscp(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Dscp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06b}", self.0)
    }
}

pub fn dscp_for_class(class: TrafficClass) -> Dscp {
    match class {
        TrafficClass::Voice => Dscp::EF,
        TrafficClass::Video => Dscp::AF41,
        TrafficClass::Database => Dscp::AF21,
        TrafficClass::Ftp => Dscp::DF,
    }
}

/// Name-based variant of [`dscp_for_class`] for config-facing callers.
pub fn dscp_for_class_name(name: &str) -> Result<Dscp, Error> {
    TrafficClass::from_name(name).map(dscp_for_class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketKind {
    /// One-way application data (voice, video, ftp).
    Data,
    /// Database transaction request, answered by the server.
    Request,
    /// Database reply.
    Reply,
}

/// Which application message a packet belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRef {
    pub id: u64,
    pub index: u16,
    pub segments: u16,
}

/// Addressing saved by VPN encapsulation and restored at the tunnel exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnerHeader {
    pub src: NodeId,
    pub dst: NodeId,
    pub overhead: u32,
    pub tunnel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub class: TrafficClass,
    pub dscp: Dscp,
    /// On-wire size including headers.
    pub size_bytes: u32,
    pub payload_bytes: u32,
    pub created_at: Time,
    pub enqueued_at: Option<Time>,
    pub dequeued_at: Option<Time>,
    pub delivered_at: Option<Time>,
    pub src: NodeId,
    pub dst: NodeId,
    /// User index inside a LAN aggregate node (0 for single hosts).
    pub user: u32,
    pub kind: PacketKind,
    pub message: MessageRef,
    pub encapsulated: bool,
    pub inner: Option<InnerHeader>,
}

impl Packet {
    /// A single-segment data packet marked for its class, addressed 0 -> 0.
    pub fn new(id: u64, class: TrafficClass, size_bytes: u32, created_at: Time) -> Self {
        Packet {
            id,
            class,
            dscp: dscp_for_class(class),
            size_bytes,
            payload_bytes: size_bytes.saturating_sub(HEADER_BYTES),
            created_at,
            enqueued_at: None,
            dequeued_at: None,
            delivered_at: None,
            src: 0,
            dst: 0,
            user: 0,
            kind: PacketKind::Data,
            message: MessageRef {
                id,
                index: 0,
                segments: 1,
            },
            encapsulated: false,
            inner: None,
        }
    }
}

/// Allocates packet and message identifiers for one run.
#[derive(Debug, Default, Clone)]
pub struct IdGen {
    next_packet: u64,
    next_message: u64,
}

impl IdGen {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn packet(&mut self) -> u64 {
        let id = self.next_packet;
        self.next_packet += 1;
        id
    }

    pub fn message(&mut self) -> u64 {
        let id = self.next_message;
        self.next_message += 1;
        id
    }

    pub fn packets_issued(&self) -> u64 {
        self.next_packet
    }
}

/// Payload sizes of the segments carrying `payload` bytes. Every segment but
/// the last is full; an empty payload still yields one (header-only) segment.
pub fn segment(payload: u32, mtu_payload: u32) -> Vec<u32> {
    let mtu = mtu_payload.max(1);
    if payload == 0 {
        return alloc::vec![0];
    }
    let full = payload / mtu;
    let rest = payload % mtu;
    let mut out = alloc::vec![mtu; full as usize];
    if rest > 0 {
        out.push(rest);
    }
    out
}

/// What one application emission unit is made of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnitSpec {
    Bytes(Dist),
    /// Raw frame geometry; bytes = ceil(width * height * bits_per_pixel / 8).
    Frame {
        width: u32,
        height: u32,
        bits_per_pixel: u32,
    },
}

impl UnitSpec {
    pub fn mean_bytes(&self) -> f64 {
        match *self {
            UnitSpec::Bytes(d) => d.mean(),
            UnitSpec::Frame { .. } => f64::from(self.frame_bytes()),
        }
    }

    fn frame_bytes(&self) -> u32 {
        match *self {
            UnitSpec::Frame {
                width,
                height,
                bits_per_pixel,
            } => {
                let bits = u64::from(width) * u64::from(height) * u64::from(bits_per_pixel);
                bits.div_ceil(8) as u32
            }
            UnitSpec::Bytes(_) => 0,
        }
    }

    fn draw(&self, rng: Option<&mut RngStream>) -> Result<u32, Error> {
        match *self {
            UnitSpec::Frame { .. } => Ok(self.frame_bytes()),
            UnitSpec::Bytes(Dist::Constant(v)) => Ok(crate::engine::sample_constant(v)? as u32),
            UnitSpec::Bytes(d) => {
                let rng = rng.ok_or(Error::InvalidParameter {
                    what: "random unit size without a stream",
                    value: d.mean(),
                })?;
                let v = libm::ceil(d.sample(rng)?);
                Ok((v as u32).max(1))
            }
        }
    }
}

/// Generator spec for one application user of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSource {
    pub class: TrafficClass,
    pub start_time: Time,
    pub emission: Dist,
    pub unit: UnitSpec,
    pub mtu_payload: u32,
    pub header_bytes: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub user: u32,
}

impl TrafficSource {
    /// G.711 at 20 ms packetization: 160 B payload, 50 packets/s.
    pub fn g711_voice(src: NodeId, dst: NodeId) -> Self {
        Self {
            class: TrafficClass::Voice,
            start_time: 0.0,
            emission: Dist::Constant(0.020),
            unit: UnitSpec::Bytes(Dist::Constant(160.0)),
            mtu_payload: MTU_PAYLOAD,
            header_bytes: HEADER_BYTES,
            src,
            dst,
            user: 0,
        }
    }

    /// 128x120 frames at 9 bits/pixel, 10 frames/s.
    pub fn video_conference(src: NodeId, dst: NodeId) -> Self {
        Self {
            class: TrafficClass::Video,
            start_time: 0.0,
            emission: Dist::Constant(0.1),
            unit: UnitSpec::Frame {
                width: 128,
                height: 120,
                bits_per_pixel: 9,
            },
            mtu_payload: MTU_PAYLOAD,
            header_bytes: HEADER_BYTES,
            src,
            dst,
            user: 0,
        }
    }

    /// 200 B transactions, exponential inter-arrival with 30 s mean.
    pub fn database(src: NodeId, dst: NodeId, user: u32) -> Self {
        Self {
            class: TrafficClass::Database,
            start_time: 0.0,
            emission: Dist::Exponential { mean: 30.0 },
            unit: UnitSpec::Bytes(Dist::Constant(200.0)),
            mtu_payload: MTU_PAYLOAD,
            header_bytes: HEADER_BYTES,
            src,
            dst,
            user,
        }
    }

    /// Exponential file sizes (1000 B mean), exponential inter-request (3600 s mean).
    pub fn ftp(src: NodeId, dst: NodeId, user: u32) -> Self {
        Self {
            class: TrafficClass::Ftp,
            start_time: 0.0,
            emission: Dist::Exponential { mean: 3600.0 },
            unit: UnitSpec::Bytes(Dist::Exponential { mean: 1000.0 }),
            mtu_payload: MTU_PAYLOAD,
            header_bytes: HEADER_BYTES,
            src,
            dst,
            user,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !self.emission.is_positive() {
            return Err(Error::InvalidParameter {
                what: "emission interval",
                value: self.emission.mean(),
            });
        }
        if !(self.unit.mean_bytes() > 0.0) {
            return Err(Error::InvalidParameter {
                what: "unit size",
                value: self.unit.mean_bytes(),
            });
        }
        if self.mtu_payload == 0 {
            return Err(Error::InvalidParameter {
                what: "mtu payload",
                value: 0.0,
            });
        }
        if !(self.start_time >= 0.0) {
            return Err(Error::InvalidParameter {
                what: "start time",
                value: self.start_time,
            });
        }
        Ok(())
    }

    /// Mean offered load on the wire in bits per second.
    pub fn offered_bps(&self) -> f64 {
        let payload = self.unit.mean_bytes();
        let segments = libm::ceil(payload / f64::from(self.mtu_payload)).max(1.0);
        (payload + segments * f64::from(self.header_bytes)) * 8.0 / self.emission.mean()
    }
}

/// Packets produced by one emission plus the time of the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub packets: Vec<Packet>,
    pub next_emit: Time,
}

fn expect_class(source: &TrafficSource, expected: TrafficClass) -> Result<(), Error> {
    if source.class != expected {
        return Err(Error::WrongClass {
            expected: expected.name(),
            actual: source.class.name(),
        });
    }
    Ok(())
}

fn build_packets(source: &TrafficSource, payload: u32, kind: PacketKind, clock: Time, ids: &mut IdGen) -> Vec<Packet> {
    let parts = segment(payload, source.mtu_payload);
    let message = ids.message();
    let count = parts.len() as u16;
    parts
        .into_iter()
        .enumerate()
        .map(|(i, p)| Packet {
            id: ids.packet(),
            class: source.class,
            dscp: dscp_for_class(source.class),
            size_bytes: p + source.header_bytes,
            payload_bytes: p,
            created_at: clock,
            enqueued_at: None,
            dequeued_at: None,
            delivered_at: None,
            src: source.src,
            dst: source.dst,
            user: source.user,
            kind,
            message: MessageRef {
                id: message,
                index: i as u16,
                segments: count,
            },
            encapsulated: false,
            inner: None,
        })
        .collect()
}

fn next_after(source: &TrafficSource, clock: Time, rng: Option<&mut RngStream>) -> Result<Time, Error> {
    let gap = match (source.emission, rng) {
        (Dist::Constant(v), _) => crate::engine::sample_constant(v)?,
        (d, Some(rng)) => d.sample(rng)?,
        (d, None) => {
            return Err(Error::InvalidParameter {
                what: "random emission without a stream",
                value: d.mean(),
            })
        }
    };
    Ok(clock + gap)
}

pub fn voice_emit(source: &TrafficSource, clock: Time, ids: &mut IdGen) -> Result<Emission, Error> {
    expect_class(source, TrafficClass::Voice)?;
    let payload = source.unit.draw(None)?;
    Ok(Emission {
        packets: build_packets(source, payload, PacketKind::Data, clock, ids),
        next_emit: next_after(source, clock, None)?,
    })
}

pub fn video_emit(source: &TrafficSource, clock: Time, ids: &mut IdGen) -> Result<Emission, Error> {
    expect_class(source, TrafficClass::Video)?;
    let frame = source.unit.draw(None)?;
    Ok(Emission {
        packets: build_packets(source, frame, PacketKind::Data, clock, ids),
        next_emit: next_after(source, clock, None)?,
    })
}

pub fn db_emit(source: &TrafficSource, clock: Time, rng: &mut RngStream, ids: &mut IdGen) -> Result<Emission, Error> {
    expect_class(source, TrafficClass::Database)?;
    let payload = source.unit.draw(Some(rng))?;
    let packets = build_packets(source, payload, PacketKind::Request, clock, ids);
    Ok(Emission {
        packets,
        next_emit: next_after(source, clock, Some(rng))?,
    })
}

pub fn ftp_emit(source: &TrafficSource, clock: Time, rng: &mut RngStream, ids: &mut IdGen) -> Result<Emission, Error> {
    expect_class(source, TrafficClass::Ftp)?;
    let file = source.unit.draw(Some(rng))?;
    Ok(Emission {
        packets: build_packets(source, file, PacketKind::Data, clock, ids),
        next_emit: next_after(source, clock, Some(rng))?,
    })
}

/// Dispatches to the class-specific emitter.
pub fn emit(source: &TrafficSource, clock: Time, rng: &mut RngStream, ids: &mut IdGen) -> Result<Emission, Error> {
    match source.class {
        TrafficClass::Voice => voice_emit(source, clock, ids),
        TrafficClass::Video => video_emit(source, clock, ids),
        TrafficClass::Database => db_emit(source, clock, rng, ids),
        TrafficClass::Ftp => ftp_emit(source, clock, rng, ids),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn run_for(source: &TrafficSource, seconds: f64, seed: u64) -> Vec<Packet> {
        let mut ids = IdGen::new();
        let mut rng = RngStream::new("src", seed);
        let mut t = source.start_time;
        let mut out = Vec::new();
        // periodic sources accumulate float error; stop just short of the boundary
        while t < seconds - 1e-9 {
            let e = emit(source, t, &mut rng, &mut ids).unwrap();
            out.extend(e.packets);
            t = e.next_emit;
        }
        out
    }

    #[test]
    fn table_one_marks() {
        assert_eq!(dscp_for_class(TrafficClass::Voice).to_string(), "101110");
        assert_eq!(dscp_for_class(TrafficClass::Video).to_string(), "100010");
        assert_eq!(dscp_for_class(TrafficClass::Database).to_string(), "010010");
        assert_eq!(dscp_for_class(TrafficClass::Ftp).to_string(), "000000");
        assert!(dscp_for_class_name("telnet").is_err());
        assert!(Dscp::new(64).is_err());
    }

    #[test]
    fn voice_framing() {
        // 64 kb/s / 8 / 160 B = 50 packets per second
        assert_eq!(64_000 / 8 / 160, 50);
        let src = TrafficSource::g711_voice(0, 1);
        let pkts = run_for(&src, 1.0, 1);
        assert_eq!(pkts.len(), 50);
        assert!(pkts.iter().all(|p| p.size_bytes == 200 && p.dscp == Dscp::EF));
        assert_eq!(pkts.iter().map(|p| p.size_bytes).sum::<u32>(), 10_000);
    }

    #[test]
    fn voice_offered_load_is_80_kbps() {
        let src = TrafficSource::g711_voice(0, 1);
        let bytes: u32 = run_for(&src, 10.0, 1).iter().map(|p| p.size_bytes).sum();
        assert_eq!(bytes * 8 / 10, 80_000);
    }

    #[test]
    fn video_frame_segmentation() {
        assert_eq!(128 * 120 * 9 / 8, 17_280);
        let src = TrafficSource::video_conference(0, 1);
        let mut ids = IdGen::new();
        let e = video_emit(&src, 0.0, &mut ids).unwrap();
        assert!((e.next_emit - 0.1).abs() < 1e-12);
        assert_eq!(e.packets.len(), 12);
        assert!(e.packets[..11].iter().all(|p| p.size_bytes == 1500));
        assert_eq!(e.packets[11].size_bytes, 1260);
        assert_eq!(e.packets.iter().map(|p| p.payload_bytes).sum::<u32>(), 17_280);
        assert!(e.packets.iter().all(|p| p.dscp == Dscp::AF41));
    }

    #[test]
    fn video_offered_load() {
        let src = TrafficSource::video_conference(0, 1);
        let bytes: u64 = run_for(&src, 10.0, 1).iter().map(|p| u64::from(p.size_bytes)).sum();
        assert_eq!(bytes * 8 / 10, 10 * (17_280 + 12 * 40) * 8);
        assert!((src.offered_bps() - 1_420_800.0).abs() < 1e-6);
    }

    #[test]
    fn database_requests() {
        let src = TrafficSource::database(0, 1, 3);
        let mut ids = IdGen::new();
        let mut rng = RngStream::new("db", 9);
        let mut t = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let e = db_emit(&src, t, &mut rng, &mut ids).unwrap();
            assert_eq!(e.packets.len(), 1);
            assert_eq!(e.packets[0].payload_bytes, 200);
            assert_eq!(e.packets[0].size_bytes, 240);
            assert_eq!(e.packets[0].dscp.to_string(), "010010");
            assert_eq!(e.packets[0].kind, PacketKind::Request);
            t = e.next_emit;
        }
        // mean gap 30 s, sigma of the mean 0.3 s
        assert!((t / n as f64 - 30.0).abs() < 1.0);
    }

    #[test]
    fn ftp_file_sizes() {
        let src = TrafficSource::ftp(0, 1, 0);
        let mut ids = IdGen::new();
        let mut rng = RngStream::new("ftp", 5);
        let mut total = 0u64;
        let n = 10_000;
        for _ in 0..n {
            let e = ftp_emit(&src, 0.0, &mut rng, &mut ids).unwrap();
            let payload: u32 = e.packets.iter().map(|p| p.payload_bytes).sum();
            assert!(payload >= 1);
            assert!(e.packets.iter().all(|p| p.size_bytes <= 1500 && p.dscp == Dscp::DF));
            total += u64::from(payload);
        }
        // ceil() adds ~0.5 B on average; sigma of the mean is 10 B
        assert!((total as f64 / n as f64 - 1000.0).abs() < 30.0);
    }

    #[test]
    fn one_byte_file_is_one_41_byte_packet() {
        let mut src = TrafficSource::ftp(0, 1, 0);
        src.unit = UnitSpec::Bytes(Dist::Constant(1.0));
        let mut ids = IdGen::new();
        let mut rng = RngStream::new("ftp", 1);
        let e = ftp_emit(&src, 0.0, &mut rng, &mut ids).unwrap();
        assert_eq!(e.packets.len(), 1);
        assert_eq!(e.packets[0].size_bytes, 41);
    }

    #[test]
    fn wrong_class_rejected() {
        let src = TrafficSource::ftp(0, 1, 0);
        assert!(matches!(
            voice_emit(&src, 0.0, &mut IdGen::new()),
            Err(Error::WrongClass { .. })
        ));
    }

    #[test]
    fn nonpositive_emission_invalid() {
        let mut src = TrafficSource::g711_voice(0, 1);
        src.emission = Dist::Constant(0.0);
        assert!(src.validate().is_err());
    }

    #[test]
    fn segmentation_edges() {
        assert_eq!(segment(0, 1460), [0]);
        assert_eq!(segment(1460, 1460), [1460]);
        assert_eq!(segment(1461, 1460), [1460, 1]);
    }

    proptest::proptest! {
        #[test]
        fn segmentation_conserves_payload(payload in 0u32..200_000, mtu in 1u32..3000) {
            let parts = segment(payload, mtu);
            proptest::prop_assert_eq!(parts.iter().sum::<u32>(), payload);
            proptest::prop_assert!(parts.iter().all(|&p| p <= mtu));
            let expected = if payload == 0 { 1 } else { payload.div_ceil(mtu) };
            proptest::prop_assert_eq!(parts.len() as u32, expected);
        }
    }
}
