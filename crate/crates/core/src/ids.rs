//! Opaque identifiers.
//!
//! Every id is a counter value rendered with a one-letter prefix (`n12`,
//! `e3`, `c40`, ...). Ordering follows the numeric value so that `n2 < n10`,
//! which is the order used for every deterministic tie-break in the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Error returned when an id string does not have the expected prefix or a
/// numeric suffix.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid {kind} id '{text}'")]
pub struct ParseIdError {
    pub kind: &'static str,
    pub text: String,
}

macro_rules! counter_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal, $kind:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn value(self) -> u64 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}{}", $prefix, self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(self, f)
            }
        }

        impl FromStr for $name {
            type Err = ParseIdError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .filter(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|digits| digits.parse::<u64>().ok())
                    .map($name)
                    .ok_or_else(|| ParseIdError {
                        kind: $kind,
                        text: s.to_string(),
                    })
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let text = String::deserialize(deserializer)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

counter_id!(
    /// Knowledge-graph node id.
    NodeId, "n", "node"
);
counter_id!(
    /// Knowledge-graph edge id.
    EdgeId, "e", "edge"
);
counter_id!(
    /// Node group id.
    GroupId, "g", "group"
);
counter_id!(
    /// Ingested document id.
    DocId, "d", "document"
);
counter_id!(
    /// Text chunk id.
    ChunkId, "c", "chunk"
);
counter_id!(
    /// Retrieval-tree node id.
    TreeNodeId, "t", "tree node"
);
