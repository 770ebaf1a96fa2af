//! Latest-wins replication keyed by (message type, subject).

use std::collections::BTreeMap;

use super::codec::{Message, MsgType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Accepted,
    Stale,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicaStore {
    entries: BTreeMap<(MsgType, String), Message>,
}

impl ReplicaStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts `m` only if its sequence number beats the stored one.
    pub fn replica_apply(&mut self, m: Message) -> Applied {
        let key = (m.msg_type(), m.payload.subject_id().to_string());
        match self.entries.get(&key) {
            Some(cur) if cur.seq >= m.seq => Applied::Stale,
            _ => {
                self.entries.insert(key, m);
                Applied::Accepted
            }
        }
    }

    pub fn get(&self, ty: MsgType, subject: &str) -> Option<&Message> {
        self.entries.get(&(ty, subject.to_string()))
    }

    pub fn iter_type(&self, ty: MsgType) -> impl Iterator<Item = &Message> {
        self.entries.iter().filter(move |((t, _), _)| *t == ty).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::codec::Payload;

    fn bind(seq: u32) -> Message {
        Message {
            seq,
            timestamp_us: seq as u64,
            payload: Payload::BindCtl {
                binding_id: "b".into(),
                active: seq.is_multiple_of(2),
            },
        }
    }

    #[test]
    fn stale_and_first_messages() {
        let mut s = ReplicaStore::new();
        assert_eq!(s.replica_apply(bind(7)), Applied::Accepted);
        assert_eq!(s.replica_apply(bind(5)), Applied::Stale);
        assert_eq!(s.replica_apply(bind(7)), Applied::Stale);
        assert_eq!(s.get(MsgType::BindCtl, "b").unwrap().seq, 7);
    }

    #[test]
    fn keys_are_independent() {
        let mut s = ReplicaStore::new();
        s.replica_apply(bind(9));
        let other = Message {
            seq: 1,
            timestamp_us: 0,
            payload: Payload::BindCtl {
                binding_id: "c".into(),
                active: true,
            },
        };
        assert_eq!(s.replica_apply(other), Applied::Accepted);
        assert_eq!(s.len(), 2);
    }
}
