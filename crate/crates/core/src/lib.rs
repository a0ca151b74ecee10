//! Horn-clause verification of networks of timed processes with shared
//! variables, binary channels, barriers and rendezvous interactions, for
//! finitely or unboundedly many process instances.

pub mod cli;
pub mod constraint;
pub mod dsl;
pub mod encoder;
pub mod horn;
pub mod model;
pub mod oracle;
pub mod schema;
pub mod solver;
