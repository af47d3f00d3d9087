use proptest::prelude::*;
use qosim_core::qdisc::{Admission, BufferPolicy, Discipline, QosConfig, QosInterface};
use qosim_core::{Packet, RngStream, TrafficClass};

const CLASSES: [TrafficClass; 4] = TrafficClass::ALL;

fn iface(discipline: Discipline, weights: [u32; 4], qpw: u32, buffer: u64, policy: BufferPolicy) -> QosInterface {
    let cfg = QosConfig {
        discipline,
        weights,
        quantum_per_weight: qpw,
        red: None,
        buffer_limit: buffer,
        buffer_policy: policy,
    };
    QosInterface::new(&cfg, 1e6, "prop", 7).unwrap()
}

fn rank_of(q: &QosInterface, class: TrafficClass) -> u8 {
    let probe = Packet::new(0, class, 100, 0.0);
    q.queues[q.classify(&probe)].rank
}

#[derive(Debug, Clone)]
enum Op {
    Arrive(usize, u32),
    Serve,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            3 => (0usize..4, 40u32..=1500).prop_map(|(c, s)| Op::Arrive(c, s)),
            2 => Just(Op::Serve),
        ],
        1..300,
    )
}

/// Replays `ops` the way the simulator drives a port: an arrival at an idle
/// port goes straight to the link, `Serve` completes the current packet and
/// starts the next. Calls `check` after every step.
fn replay(
    q: &mut QosInterface,
    ops: &[Op],
    mut on_start: impl FnMut(&QosInterface, &Packet),
    mut check: impl FnMut(&QosInterface),
) {
    let mut id = 0;
    let mut now = 0.0;
    for op in ops {
        now += 0.001;
        match *op {
            Op::Arrive(c, size) => {
                id += 1;
                let r = q.enqueue(Packet::new(id, CLASSES[c], size, now), now);
                if matches!(r.admission, Admission::Accepted) && q.in_service.is_none() {
                    let p = q.dequeue(now).unwrap();
                    on_start(q, &p);
                    q.start_transmission(p, now);
                }
            }
            Op::Serve => {
                q.finish_transmission();
                if let Some(p) = q.dequeue(now) {
                    on_start(q, &p);
                    q.start_transmission(p, now);
                }
            }
        }
        check(q);
    }
}

proptest! {
    #[test]
    fn strict_priority_law(ops in ops()) {
        let mut q = iface(Discipline::Pq, [40, 30, 20, 10], 150, 1 << 20, BufferPolicy::TailDrop);
        let mut ok = true;
        replay(&mut q, &ops, |q, chosen| {
            let r = rank_of(q, chosen.class);
            // heads still waiting after the pick
            ok &= q.queues.iter().filter(|x| !x.is_empty()).all(|x| r <= x.rank);
        }, |_| {});
        prop_assert!(ok);
    }

    #[test]
    fn buffer_bound_holds(ops in ops(), limit in 200u64..12_000, push in any::<bool>()) {
        let policy = if push { BufferPolicy::PushOut } else { BufferPolicy::TailDrop };
        for d in [Discipline::Fifo, Discipline::Pq, Discipline::Wfq] {
            let mut q = iface(d, [40, 30, 20, 10], 150, limit, policy);
            let mut worst = 0;
            replay(&mut q, &ops, |_, _| {}, |q| {
                let held: u64 = q.queues.iter().map(|x| x.bytes_held).sum();
                assert_eq!(held, q.buffer_used);
                worst = worst.max(q.buffer_used);
            });
            prop_assert!(worst <= limit, "{d:?}: {worst} > {limit}");
        }
    }

    #[test]
    fn per_class_fifo(ops in ops()) {
        for d in [Discipline::Pq, Discipline::Wfq] {
            let mut q = iface(d, [40, 30, 20, 10], 150, 1 << 20, BufferPolicy::TailDrop);
            let mut last = [0u64; 4];
            let mut ordered = true;
            replay(&mut q, &ops, |_, p| {
                let c = p.class.index();
                ordered &= p.id > last[c];
                last[c] = p.id;
            }, |_| {});
            prop_assert!(ordered, "{d:?}");
        }
    }

    #[test]
    fn work_conserving(ops in ops()) {
        for d in [Discipline::Fifo, Discipline::Pq, Discipline::Wfq] {
            let mut q = iface(d, [40, 30, 20, 10], 150, 1 << 20, BufferPolicy::TailDrop);
            replay(&mut q, &ops, |_, _| {}, |q| {
                assert!(q.in_service.is_some() || q.queues.iter().all(|x| x.is_empty()));
            });
        }
    }

    #[test]
    fn dwrr_fairness_bound(
        wa in 1u32..8,
        wb in 1u32..8,
        sizes in prop::collection::vec(40u32..=1500, 400),
    ) {
        let qpw = 1500;
        let mut weights = [1, 1, 1, 1];
        weights[2] = wa;
        weights[3] = wb;
        let mut q = iface(Discipline::Wfq, weights, qpw, 1 << 30, BufferPolicy::TailDrop);
        for (i, &s) in sizes.iter().enumerate() {
            let class = if i % 2 == 0 { TrafficClass::Database } else { TrafficClass::Ftp };
            q.enqueue(Packet::new(i as u64 + 1, class, s, 0.0), 0.0);
        }
        let (fa, fb) = (f64::from(wa), f64::from(wb));
        let bound = f64::from(qpw) * 2.0 + 2.0 * 1500.0 / fa.min(fb);
        let mut bytes = [0.0f64; 2];
        while !q.queues[2].is_empty() && !q.queues[3].is_empty() {
            let p = q.dequeue(0.0).unwrap();
            bytes[usize::from(p.class == TrafficClass::Ftp)] += f64::from(p.size_bytes);
            prop_assert!((bytes[0] / fa - bytes[1] / fb).abs() <= bound);
        }
    }
}

#[test]
fn dwrr_two_to_one_over_ten_thousand_rounds() {
    let mut q = iface(Discipline::Wfq, [1, 1, 2, 1], 1500, 1 << 30, BufferPolicy::TailDrop);
    let mut rng = RngStream::new("dwrr-sizes", 3);
    let mut id = 0;
    let mut refill = |q: &mut QosInterface, class: TrafficClass| {
        while q.queues[class.index()].packets.len() < 8 {
            id += 1;
            let size = 40 + (rng.uniform() * 1461.0) as u32;
            q.enqueue(Packet::new(id, class, size, 0.0), 0.0);
        }
    };
    let mut bytes = [0u64; 2];
    // a round hands out 3000 + 1500 bytes of quantum
    while bytes[0] + bytes[1] < 10_000 * 4500 {
        refill(&mut q, TrafficClass::Database);
        refill(&mut q, TrafficClass::Ftp);
        let p = q.dequeue(0.0).unwrap();
        bytes[usize::from(p.class == TrafficClass::Ftp)] += u64::from(p.size_bytes);
    }
    let ratio = bytes[0] as f64 / bytes[1] as f64;
    assert!((ratio - 2.0).abs() <= 0.05, "ratio {ratio}");
}

#[test]
fn dwrr_single_backlog_gets_everything() {
    let mut q = iface(Discipline::Wfq, [40, 30, 20, 10], 150, 1 << 20, BufferPolicy::TailDrop);
    for i in 0..50 {
        q.enqueue(Packet::new(i, TrafficClass::Ftp, 1500, 0.0), 0.0);
    }
    let served = (0..50).filter_map(|_| q.dequeue(0.0)).count();
    assert_eq!(served, 50);
}

/// Voice offered at exactly the link rate keeps the port busy; the FTP packet
/// queued behind it must not be sent until the voice burst ends.
#[test]
fn pq_starves_lower_classes_under_saturation() {
    let rate = 1e6;
    let cfg = QosConfig {
        discipline: Discipline::Pq,
        red: None,
        buffer_limit: 1 << 20,
        ..QosConfig::default()
    };
    let mut q = QosInterface::new(&cfg, rate, "starve", 1).unwrap();
    let voice_time = 200.0 * 8.0 / rate;
    let mut id = 0;
    let mut next = |class, size| {
        id += 1;
        Packet::new(id, class, size, 0.0)
    };
    q.enqueue(next(TrafficClass::Voice, 200), 0.0);
    let p = q.dequeue(0.0).unwrap();
    let mut done = q.start_transmission(p, 0.0);
    q.enqueue(next(TrafficClass::Ftp, 1500), 1e-6);
    let mut trace = Vec::new();
    // overload interval: a new voice packet lands every service time
    for _ in 0..1000 {
        q.enqueue(next(TrafficClass::Voice, 200), done);
        q.finish_transmission();
        let p = q.dequeue(done).unwrap();
        trace.push(p.class);
        done = q.start_transmission(p, done);
        assert!((done - q.in_service.as_ref().unwrap().0.dequeued_at.unwrap() - voice_time).abs() < 1e-12);
    }
    assert!(trace.iter().all(|&c| c == TrafficClass::Voice));
    q.finish_transmission();
    assert_eq!(q.dequeue(done).unwrap().class, TrafficClass::Ftp);
}

/// A low-priority packet already on the wire finishes before a voice packet
/// that arrives mid-transmission.
#[test]
fn pq_is_not_preemptive() {
    let mut q = iface(Discipline::Pq, [40, 30, 20, 10], 150, 1 << 20, BufferPolicy::TailDrop);
    q.enqueue(Packet::new(1, TrafficClass::Ftp, 1500, 0.0), 0.0);
    let p = q.dequeue(0.0).unwrap();
    let done = q.start_transmission(p, 0.0);
    q.enqueue(Packet::new(2, TrafficClass::Voice, 200, 0.001), 0.001);
    assert_eq!(q.in_service.as_ref().unwrap().0.class, TrafficClass::Ftp);
    assert_eq!(q.finish_transmission().unwrap().id, 1);
    let v = q.dequeue(done).unwrap();
    assert_eq!(v.class, TrafficClass::Voice);
    assert!((done - v.enqueued_at.unwrap() - (0.012 - 0.001)).abs() < 1e-9);
}
