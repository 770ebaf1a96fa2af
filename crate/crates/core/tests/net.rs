mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use telebots::geometry::Pose2D;
use telebots::net::codec::WirePose;
use telebots::net::{decode, encode, LinkModel, Message, MsgType, Payload, ReplicaStore, SimLink};

#[test]
fn random_messages_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20_000 {
        let m = common::random_message(&mut rng);
        let bytes = encode(&m);
        assert_eq!(decode(&bytes).unwrap(), m);
    }
}

#[test]
fn every_truncation_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let bytes = encode(&common::random_message(&mut rng));
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "prefix of {} bytes decoded", cut);
        }
    }
}

#[test]
fn loss_rate_is_binomial() {
    let n = 1000u64;
    let p = 0.3;
    for seed in 0..20 {
        let mut link = SimLink::new(LinkModel {
            loss_rate: p,
            rng_seed: seed,
            ..LinkModel::default()
        });
        for i in 0..n {
            link.link_send("a", vec![i as u8], i);
        }
        let dropped = link.stats().dropped as f64;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((dropped - mean).abs() <= 3.0 * sigma, "seed {seed}: {dropped} dropped");
    }
}

#[test]
fn latency_is_exact_without_jitter() {
    let mut link = SimLink::new(LinkModel::with_latency_ms(37.0));
    assert_eq!(link.link_send("a", vec![1], 1_000), Some(38_000));
    assert!(link.link_poll(37_999).is_empty());
    assert_eq!(link.link_poll(38_000).len(), 1);
}

#[test]
fn lossy_stream_converges_after_source_stops() {
    let mut link = SimLink::new(LinkModel {
        one_way_latency_ms: 30.0,
        jitter_ms: 10.0,
        loss_rate: 0.3,
        allow_reorder: true,
        rng_seed: 3,
    });
    let mut store = ReplicaStore::new();
    let mut last = None;
    for k in 0..300u32 {
        let t = k as u64 * 10_000;
        let pose = WirePose::from_pose(&Pose2D::new((k.min(150)) as f64 * 0.1, 5.0, 0.0));
        let m = Message {
            seq: k + 1,
            timestamp_us: t,
            payload: Payload::RobotState {
                robot_id: "r".into(),
                pose,
                v: 0,
                omega: 0,
                grabbed: false,
            },
        };
        last = Some(pose);
        link.link_send("src", encode(&m), t);
        for d in link.link_poll(t) {
            store.replica_apply(decode(&d.bytes).unwrap());
        }
    }
    match store.get(MsgType::RobotState, "r").map(|m| &m.payload) {
        Some(Payload::RobotState { pose, .. }) => assert_eq!(Some(*pose), last),
        other => panic!("unexpected replica {other:?}"),
    }
}
