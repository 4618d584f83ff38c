//! Simulated victims and the deterministic agent scheduler.
//!
//! Victims are programs whose memory-access footprints carry the secrets the
//! attacks extract: an input-event library, a table-based AES, and a
//! secure-world trustlet. None of their computation matters beyond the
//! addresses they touch and when they touch them.

pub mod aes;
pub mod events;
pub mod sched;
pub mod trustlet;

pub use aes::{AesMode, TTableAes};
pub use events::{EventKind, EventLibrary, EventScriptAgent, ScheduledEvent};
pub use sched::{Agent, Scheduler, StepOutcome};
pub use trustlet::{TrustKey, Trustlet};
