//! Word maps on small finite matrix groups.
//!
//! Exact word measures and mixing times on SL2/GL2/PGL2 over prime fields,
//! numerical character tables, Cayley-graph spectra and point counts of
//! SL2 character varieties over F_p.

pub mod cayley;
pub mod expcli;
pub mod ffield;
pub mod fricke;
pub mod measures;
pub mod freeword;
pub mod matgroup;
pub mod rng;
pub mod spectra;

/// Version of the JSON/CSV artifact layout written by the experiments.
pub const SCHEMA_VERSION: u32 = 1;
