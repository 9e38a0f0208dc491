//! The adversary's view and the reference mechanisms it must be explainable by.

pub mod audit;
pub mod estimate;
pub mod oracles;
pub mod transcript;

pub use audit::{transcript_audit, AuditReport, AuditSpec, Violation};
pub use estimate::{composition_bound, empirical_privacy_loss, quantize, EstimatorConfig, LossEstimate, NeighborViolation};
pub use oracles::{m_ant, m_ant_with, m_timer, m_timer_with, nant, nant_with, AntOracle, AntOutputScale, LogicalRecord, LogicalStream, NantConfig, Release, TimerOracle};
pub use transcript::{EventKind, Transcript, TranscriptEvent};
