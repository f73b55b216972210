//! Identifier newtypes shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Bits of data (or cycles, where noted). All flow bookkeeping is integral so that
/// completion detection and chaining audits are exact.
pub type Bits = u64;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident($inner:ty), $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// A network node. Users occupy `0..num_users`; the base station takes the next id.
    NodeId(u32),
    "n"
);
id_type!(
    /// An object of the static catalog, in popularity-rank order (0 is the most popular).
    ObjectId(u32),
    "o"
);
id_type!(
    /// A service instance. In the VR scenario each user has one, with the same index.
    ServiceId(u32),
    "s"
);
id_type!(
    /// A request (one frame). Ids are assigned in arrival order.
    RequestId(u64),
    "r"
);
