//! Deterministic simulator of multi-core, multi-cluster cache hierarchies
//! plus the toolkit of attacks that exploit them: eviction-strategy search
//! under random replacement, the four probing primitives (Flush+Reload,
//! Evict+Reload, Prime+Probe, Flush+Flush), a packetized covert channel,
//! cache template attacks on input events, first-round key recovery against
//! a table-based AES victim, and set-level profiling of a secure-world
//! victim from the normal world.
//!
//! Everything runs on simulated hardware. Victims are synthetic programs
//! whose memory accesses carry the secrets; the hierarchy models per-core
//! L1 instruction/data caches over shared L2s with configurable geometry,
//! replacement policy, per-kind inclusion, cross-core coherence and an
//! optional flush instruction. All randomness derives from explicit seeds,
//! so identical configurations replay bit-identical results.
//!
//! Start with [`profile::DeviceProfile`] for the shipped device models and
//! the crate's `examples/` directory, which carries one runnable program per
//! capability.

pub mod analysis;
pub mod attacks;
pub mod cachesim;
pub mod covert;
pub mod eviction;
pub mod memspace;
pub mod profile;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod timing;
pub mod victims;
