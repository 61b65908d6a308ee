use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Identifier of a peer. Doubles as the data item it stores.
pub type NodeId = u64;

/// Position in a list ordering. Buffer sentinels sit just inside the clean
/// sentinels so they can be carried through a merge and unlinked afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Key {
    NegInf,
    BufNegInf,
    Id(NodeId),
    BufPosInf,
    PosInf,
}

impl Key {
    fn rank(&self) -> (u8, NodeId) {
        match *self {
            Key::NegInf => (0, 0),
            Key::BufNegInf => (1, 0),
            Key::Id(v) => (2, v),
            Key::BufPosInf => (3, 0),
            Key::PosInf => (4, 0),
        }
    }

    pub fn id(&self) -> Option<NodeId> {
        match *self {
            Key::Id(v) => Some(v),
            _ => None,
        }
    }

    /// Sentinels are owned by the simulator, not by any peer.
    pub fn is_virtual(&self) -> bool {
        !matches!(self, Key::Id(_))
    }

    pub fn is_buffer_sentinel(&self) -> bool {
        matches!(self, Key::BufNegInf | Key::BufPosInf)
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl From<NodeId> for Key {
    fn from(v: NodeId) -> Self {
        Key::Id(v)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::NegInf => f.write_str("-inf"),
            Key::BufNegInf => f.write_str("ls"),
            Key::Id(v) => write!(f, "{v}"),
            Key::BufPosInf => f.write_str("rs"),
            Key::PosInf => f.write_str("+inf"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("bad key {0:?}")]
pub struct ParseKeyError(String);

impl FromStr for Key {
    type Err = ParseKeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "-inf" => Ok(Key::NegInf),
            "ls" => Ok(Key::BufNegInf),
            "rs" => Ok(Key::BufPosInf),
            "+inf" => Ok(Key::PosInf),
            _ => s
                .parse()
                .map(Key::Id)
                .map_err(|_| ParseKeyError(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_places_buffer_sentinels_inside() {
        let mut ks = vec![
            Key::PosInf,
            Key::Id(7),
            Key::BufPosInf,
            Key::NegInf,
            Key::BufNegInf,
            Key::Id(0),
        ];
        ks.sort();
        assert_eq!(
            ks,
            vec![
                Key::NegInf,
                Key::BufNegInf,
                Key::Id(0),
                Key::Id(7),
                Key::BufPosInf,
                Key::PosInf
            ]
        );
    }

    #[test]
    fn display_roundtrip() {
        for k in [
            Key::NegInf,
            Key::BufNegInf,
            Key::Id(42),
            Key::BufPosInf,
            Key::PosInf,
        ] {
            assert_eq!(k.to_string().parse::<Key>().unwrap(), k);
        }
    }
}
