//! Binary datagram format.
//!
//! Every datagram starts with a 16-byte little-endian header:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 2    | magic `"HB"`                  |
//! | 2      | 1    | version (`1`)                 |
//! | 3      | 1    | message type                  |
//! | 4      | 4    | sequence number (`u32`)       |
//! | 8      | 8    | sender timestamp, µs (`u64`)  |
//!
//! Payload fields follow in declaration order. Positions are `i32` in
//! hundredths of a centimetre, angles `i32` millidegrees, speeds `i32`
//! hundredths of cm/s or millidegrees/s, dimensionless values `i64`
//! millionths. Strings are a `u16` byte length plus UTF-8, lists a `u16`
//! count, options and booleans one tag byte (`0`/`1`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::Finger;
use crate::geometry::{normalize_deg, Point, Pose2D};

pub const MAGIC: [u8; 2] = *b"HB";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    VersionMismatch(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("datagram ends before the payload does")]
    TruncatedPayload,
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum MsgType {
    RobotState = 1,
    GoalCmd = 2,
    HandPose = 3,
    BodyPose = 4,
    GrabEvent = 5,
    WidgetParam = 6,
    Calibration = 7,
    BindCtl = 8,
}

impl MsgType {
    pub const ALL: [MsgType; 8] = [
        MsgType::RobotState,
        MsgType::GoalCmd,
        MsgType::HandPose,
        MsgType::BodyPose,
        MsgType::GrabEvent,
        MsgType::WidgetParam,
        MsgType::Calibration,
        MsgType::BindCtl,
    ];

    pub fn from_u8(b: u8) -> Option<MsgType> {
        MsgType::ALL.get((b as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::RobotState => "ROBOT_STATE",
            MsgType::GoalCmd => "GOAL_CMD",
            MsgType::HandPose => "HAND_POSE",
            MsgType::BodyPose => "BODY_POSE",
            MsgType::GrabEvent => "GRAB_EVENT",
            MsgType::WidgetParam => "WIDGET_PARAM",
            MsgType::Calibration => "CALIBRATION",
            MsgType::BindCtl => "BIND_CTL",
        }
    }
}

/// Centimetres to hundredths, saturating.
pub fn to_centi(cm: f64) -> i32 {
    (cm * 100.0).round() as i32
}

pub fn from_centi(v: i32) -> f64 {
    v as f64 / 100.0
}

pub fn to_millideg(deg: f64) -> i32 {
    (deg * 1000.0).round() as i32
}

pub fn from_millideg(v: i32) -> f64 {
    v as f64 / 1000.0
}

pub fn to_micro(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

pub fn from_micro(v: i64) -> f64 {
    v as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WirePoint {
    pub x: i32,
    pub y: i32,
}

impl WirePoint {
    pub fn from_point(p: Point) -> Self {
        Self {
            x: to_centi(p.x),
            y: to_centi(p.y),
        }
    }

    pub fn to_point(self) -> Point {
        Point::new(from_centi(self.x), from_centi(self.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WirePose {
    pub x: i32,
    pub y: i32,
    pub theta: i32,
}

impl WirePose {
    pub fn from_pose(p: &Pose2D) -> Self {
        Self {
            x: to_centi(p.x),
            y: to_centi(p.y),
            // keep [0, 360000) even when rounding lands on 360°
            theta: to_millideg(p.theta).rem_euclid(360_000),
        }
    }

    pub fn to_pose(self) -> Pose2D {
        Pose2D::new(
            from_centi(self.x),
            from_centi(self.y),
            normalize_deg(from_millideg(self.theta)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    RobotState {
        robot_id: String,
        pose: WirePose,
        v: i32,
        omega: i32,
        grabbed: bool,
    },
    /// Target for a subject, typically a grasped virtual proxy.
    GoalCmd {
        subject_id: String,
        target: WirePoint,
        heading: Option<i32>,
        tolerance: u32,
        priority: i32,
    },
    HandPose {
        hand_id: String,
        fingers: Vec<(Finger, WirePoint)>,
        pinching: Option<String>,
    },
    BodyPose {
        body_id: String,
        joints: Vec<(String, WirePoint)>,
        scale: i64,
    },
    GrabEvent {
        subject_id: String,
        grabbed: bool,
        /// `false` for the local side, `true` for the remote side.
        by_remote: bool,
    },
    WidgetParam {
        widget_id: String,
        params: Vec<(String, i64)>,
    },
    Calibration {
        mat_id: String,
        rotation: i32,
        dx: i32,
        dy: i32,
        scale: i64,
    },
    BindCtl {
        binding_id: String,
        active: bool,
    },
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::RobotState { .. } => MsgType::RobotState,
            Payload::GoalCmd { .. } => MsgType::GoalCmd,
            Payload::HandPose { .. } => MsgType::HandPose,
            Payload::BodyPose { .. } => MsgType::BodyPose,
            Payload::GrabEvent { .. } => MsgType::GrabEvent,
            Payload::WidgetParam { .. } => MsgType::WidgetParam,
            Payload::Calibration { .. } => MsgType::Calibration,
            Payload::BindCtl { .. } => MsgType::BindCtl,
        }
    }

    /// Replication key within a message type.
    pub fn subject_id(&self) -> &str {
        match self {
            Payload::RobotState { robot_id, .. } => robot_id,
            Payload::GoalCmd { subject_id, .. } | Payload::GrabEvent { subject_id, .. } => subject_id,
            Payload::HandPose { hand_id, .. } => hand_id,
            Payload::BodyPose { body_id, .. } => body_id,
            Payload::WidgetParam { widget_id, .. } => widget_id,
            Payload::Calibration { mat_id, .. } => mat_id,
            Payload::BindCtl { binding_id, .. } => binding_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u32,
    pub timestamp_us: u64,
    pub payload: Payload,
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        self.payload.msg_type()
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn bool(&mut self, v: bool) {
        self.0.push(v as u8);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u16(u16::try_from(n).expect("string or list longer than 65535"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn point(&mut self, p: WirePoint) {
        self.i32(p.x);
        self.i32(p.y);
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.0.len() < n {
            return Err(CodecError::TruncatedPayload);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }
    fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(CodecError::Malformed("boolean tag")),
        }
    }
    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn i32(&mut self) -> Result<i32, CodecError> {
        Ok(i32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<String, CodecError> {
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        std::str::from_utf8(bytes)
            .map(str::to_owned)
            .map_err(|_| CodecError::Malformed("invalid UTF-8"))
    }
    fn point(&mut self) -> Result<WirePoint, CodecError> {
        Ok(WirePoint {
            x: self.i32()?,
            y: self.i32()?,
        })
    }
    fn option<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T, CodecError>) -> Result<Option<T>, CodecError> {
        match self.u8()? {
            0 => Ok(None),
            1 => f(self).map(Some),
            _ => Err(CodecError::Malformed("option tag")),
        }
    }
    fn list<T>(&mut self, mut f: impl FnMut(&mut Self) -> Result<T, CodecError>) -> Result<Vec<T>, CodecError> {
        let n = self.u16()? as usize;
        // every element is at least one byte
        if n > self.0.len() {
            return Err(CodecError::TruncatedPayload);
        }
        (0..n).map(|_| f(self)).collect()
    }
}

fn finger_code(f: Finger) -> u8 {
    match f {
        Finger::Thumb => 0,
        Finger::Index => 1,
        Finger::Pinky => 2,
    }
}

fn finger_from_code(b: u8) -> Result<Finger, CodecError> {
    match b {
        0 => Ok(Finger::Thumb),
        1 => Ok(Finger::Index),
        2 => Ok(Finger::Pinky),
        _ => Err(CodecError::Malformed("finger code")),
    }
}

pub fn encode(m: &Message) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64));
    w.0.extend_from_slice(&MAGIC);
    w.u8(VERSION);
    w.u8(m.msg_type() as u8);
    w.u32(m.seq);
    w.u64(m.timestamp_us);
    match &m.payload {
        Payload::RobotState {
            robot_id,
            pose,
            v,
            omega,
            grabbed,
        } => {
            w.str(robot_id);
            w.i32(pose.x);
            w.i32(pose.y);
            w.i32(pose.theta);
            w.i32(*v);
            w.i32(*omega);
            w.bool(*grabbed);
        }
        Payload::GoalCmd {
            subject_id,
            target,
            heading,
            tolerance,
            priority,
        } => {
            w.str(subject_id);
            w.point(*target);
            match heading {
                Some(h) => {
                    w.u8(1);
                    w.i32(*h);
                }
                None => w.u8(0),
            }
            w.u32(*tolerance);
            w.i32(*priority);
        }
        Payload::HandPose {
            hand_id,
            fingers,
            pinching,
        } => {
            w.str(hand_id);
            w.len(fingers.len());
            for (f, p) in fingers {
                w.u8(finger_code(*f));
                w.point(*p);
            }
            match pinching {
                Some(obj) => {
                    w.u8(1);
                    w.str(obj);
                }
                None => w.u8(0),
            }
        }
        Payload::BodyPose { body_id, joints, scale } => {
            w.str(body_id);
            w.len(joints.len());
            for (name, p) in joints {
                w.str(name);
                w.point(*p);
            }
            w.i64(*scale);
        }
        Payload::GrabEvent {
            subject_id,
            grabbed,
            by_remote,
        } => {
            w.str(subject_id);
            w.bool(*grabbed);
            w.bool(*by_remote);
        }
        Payload::WidgetParam { widget_id, params } => {
            w.str(widget_id);
            w.len(params.len());
            for (name, v) in params {
                w.str(name);
                w.i64(*v);
            }
        }
        Payload::Calibration {
            mat_id,
            rotation,
            dx,
            dy,
            scale,
        } => {
            w.str(mat_id);
            w.i32(*rotation);
            w.i32(*dx);
            w.i32(*dy);
            w.i64(*scale);
        }
        Payload::BindCtl { binding_id, active } => {
            w.str(binding_id);
            w.bool(*active);
        }
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
    if bytes.first().is_some_and(|b| *b != MAGIC[0]) || bytes.get(1).is_some_and(|b| *b != MAGIC[1]) {
        return Err(CodecError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::TruncatedPayload);
    }
    if bytes[2] != VERSION {
        return Err(CodecError::VersionMismatch(bytes[2]));
    }
    let ty = MsgType::from_u8(bytes[3]).ok_or(CodecError::UnknownType(bytes[3]))?;
    let mut r = Reader(&bytes[4..]);
    let seq = r.u32()?;
    let timestamp_us = r.u64()?;
    let payload = match ty {
        MsgType::RobotState => Payload::RobotState {
            robot_id: r.str()?,
            pose: WirePose {
                x: r.i32()?,
                y: r.i32()?,
                theta: r.i32()?,
            },
            v: r.i32()?,
            omega: r.i32()?,
            grabbed: r.bool()?,
        },
        MsgType::GoalCmd => Payload::GoalCmd {
            subject_id: r.str()?,
            target: r.point()?,
            heading: r.option(|r| r.i32())?,
            tolerance: r.u32()?,
            priority: r.i32()?,
        },
        MsgType::HandPose => Payload::HandPose {
            hand_id: r.str()?,
            fingers: r.list(|r| Ok((finger_from_code(r.u8()?)?, r.point()?)))?,
            pinching: r.option(|r| r.str())?,
        },
        MsgType::BodyPose => Payload::BodyPose {
            body_id: r.str()?,
            joints: r.list(|r| Ok((r.str()?, r.point()?)))?,
            scale: r.i64()?,
        },
        MsgType::GrabEvent => Payload::GrabEvent {
            subject_id: r.str()?,
            grabbed: r.bool()?,
            by_remote: r.bool()?,
        },
        MsgType::WidgetParam => Payload::WidgetParam {
            widget_id: r.str()?,
            params: r.list(|r| Ok((r.str()?, r.i64()?)))?,
        },
        MsgType::Calibration => Payload::Calibration {
            mat_id: r.str()?,
            rotation: r.i32()?,
            dx: r.i32()?,
            dy: r.i32()?,
            scale: r.i64()?,
        },
        MsgType::BindCtl => Payload::BindCtl {
            binding_id: r.str()?,
            active: r.bool()?,
        },
    };
    if !r.0.is_empty() {
        return Err(CodecError::Malformed("trailing bytes"));
    }
    Ok(Message {
        seq,
        timestamp_us,
        payload,
    })
}
