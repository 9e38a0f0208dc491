//! Simulator and library for differentially private maintenance of
//! materialized views over secret-shared, growing databases held by two
//! non-colluding servers.
//!
//! Data owners upload fixed-size padded batches. A transform step turns them
//! into truncated view entries in a padded cache, and a shrink step moves
//! DP-sized batches from the cache into the queryable view.

pub mod dpnoise;
pub mod harness;
pub mod leakage;
pub mod obliv;
pub mod servers;
pub mod sharing;
pub mod shrink;
pub mod state;
pub mod transform;

pub use obliv::{SecureCache, SecureTuple};
pub use servers::{SeededServers, ServerRandomness};
pub use sharing::{RingValue, SharePair};
pub use state::{MaterializedView, ProtocolState};
