#![allow(dead_code)]

use rand::Rng;
use telebots::coupling::Finger;
use telebots::net::codec::{WirePoint, WirePose};
use telebots::net::{Message, Payload};

const ALPHABET: [char; 12] = ['a', 'b', 'z', '0', '9', '_', '/', ' ', 'é', 'ß', '→', '🤖'];

pub fn random_string(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(0..16);
    (0..n).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

fn point(rng: &mut impl Rng) -> WirePoint {
    WirePoint {
        x: rng.gen(),
        y: rng.gen(),
    }
}

fn finger(rng: &mut impl Rng) -> Finger {
    [Finger::Thumb, Finger::Index, Finger::Pinky][rng.gen_range(0..3)]
}

pub fn random_payload(rng: &mut impl Rng) -> Payload {
    match rng.gen_range(0..8) {
        0 => Payload::RobotState {
            robot_id: random_string(rng),
            pose: WirePose {
                x: rng.gen(),
                y: rng.gen(),
                theta: rng.gen_range(0..360_000),
            },
            v: rng.gen(),
            omega: rng.gen(),
            grabbed: rng.gen(),
        },
        1 => Payload::GoalCmd {
            subject_id: random_string(rng),
            target: point(rng),
            heading: rng.gen::<bool>().then(|| rng.gen()),
            tolerance: rng.gen(),
            priority: rng.gen(),
        },
        2 => Payload::HandPose {
            hand_id: random_string(rng),
            fingers: (0..rng.gen_range(0..4)).map(|_| (finger(rng), point(rng))).collect(),
            pinching: rng.gen::<bool>().then(|| random_string(rng)),
        },
        3 => Payload::BodyPose {
            body_id: random_string(rng),
            joints: (0..rng.gen_range(0..5))
                .map(|_| (random_string(rng), point(rng)))
                .collect(),
            scale: rng.gen(),
        },
        4 => Payload::GrabEvent {
            subject_id: random_string(rng),
            grabbed: rng.gen(),
            by_remote: rng.gen(),
        },
        5 => Payload::WidgetParam {
            widget_id: random_string(rng),
            params: (0..rng.gen_range(0..4))
                .map(|_| (random_string(rng), rng.gen()))
                .collect(),
        },
        6 => Payload::Calibration {
            mat_id: random_string(rng),
            rotation: rng.gen(),
            dx: rng.gen(),
            dy: rng.gen(),
            scale: rng.gen(),
        },
        _ => Payload::BindCtl {
            binding_id: random_string(rng),
            active: rng.gen(),
        },
    }
}

pub fn random_message(rng: &mut impl Rng) -> Message {
    Message {
        seq: rng.gen(),
        timestamp_us: rng.gen(),
        payload: random_payload(rng),
    }
}
