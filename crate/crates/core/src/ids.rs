//! Identifier newtypes shared across modules.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// A network slice (instance) identifier.
    SliceId,
    "slice-"
);
id_type!(
    /// A tenant identifier.
    TenantId,
    "tenant-"
);
id_type!(
    /// A user equipment identifier.
    UeId,
    "ue-"
);
id_type!(
    /// A radio node identifier.
    NodeId,
    "node-"
);
id_type!(
    /// A traffic flow identifier. Every UE carries exactly one flow, so flow
    /// ids equal the owning UE id in scenarios built by the runner.
    FlowId,
    "flow-"
);
