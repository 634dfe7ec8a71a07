//! Deterministic discrete-event simulator of a sliced, multi-tenant radio
//! access network.

pub mod broker;
pub mod grid;
pub mod ids;
pub mod multiconn;
pub mod radio;
pub mod rng;
pub mod runner;
pub mod scheduling;
pub mod slices;
pub mod uca;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/grid.md")]
    struct Grid;
    #[doc = include_str!("../../../book/src/scheduling.md")]
    struct Scheduling;
    #[doc = include_str!("../../../book/src/broker.md")]
    struct Broker;
    #[doc = include_str!("../../../book/src/multiconn.md")]
    struct Multiconn;
    #[doc = include_str!("../../../book/src/scenarios.md")]
    struct Scenarios;
}
