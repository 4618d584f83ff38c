//! Set-level profiling of the secure-world victim.
//!
//! Each invocation is bracketed by Prime+Probe over a range of L2 sets: prime
//! everything, invoke, probe everything, and keep the mean probe time per
//! set. Sets the trustlet's body touches probe slow. Against a secure world
//! that cleans the caches at its boundary the bracketing finds nothing, so
//! the parallel variant interleaves prime/probe pairs with the body's
//! execution instead; the boundary flush only makes priming more expensive,
//! it cannot hide the body's own evictions.

use crate::attacks::{prime_stable, probe, AttackError, SetPools};
use crate::cachesim::{AccessKind, CacheHierarchy};
use crate::rng::SimRng;
use crate::timing::{Threshold, TimerModel};
use crate::victims::trustlet::{TrustKey, Trustlet};
use std::ops::Range;

/// Mean probe ticks per set over repeated invocations.
pub type SetProfile = Vec<f64>;

#[derive(Debug, Clone)]
pub struct TrustletProbeParams {
    /// Sets scanned; profiles have one entry per set in this range.
    pub probed_sets: Range<u64>,
    pub prime_lines: usize,
    pub timer: TimerModel,
    pub threshold: Threshold,
    /// Body accesses interleaved per probe round in the parallel variant.
    pub batch: usize,
}

/// Builds the per-set profile over `invocations` runs of the trustlet with
/// the given key. Bracketed mode primes everything before the invocation and
/// probes afterwards; parallel mode interleaves with the body.
#[allow(clippy::too_many_arguments)]
pub fn set_profile(
    hier: &mut CacheHierarchy,
    attacker_core: usize,
    pools: &SetPools,
    trustlet: &Trustlet,
    key: TrustKey,
    invocations: usize,
    params: &TrustletProbeParams,
    rng: &mut SimRng,
) -> Result<SetProfile, AttackError> {
    if trustlet.flush_on_enter {
        parallel_profile(hier, attacker_core, pools, trustlet, key, invocations, params, rng)
    } else {
        bracketed_profile(hier, attacker_core, pools, trustlet, key, invocations, params, rng)
    }
}

#[allow(clippy::too_many_arguments)]
fn bracketed_profile(
    hier: &mut CacheHierarchy,
    attacker_core: usize,
    pools: &SetPools,
    trustlet: &Trustlet,
    key: TrustKey,
    invocations: usize,
    params: &TrustletProbeParams,
    rng: &mut SimRng,
) -> Result<SetProfile, AttackError> {
    let span = (params.probed_sets.end - params.probed_sets.start) as usize;
    let mut totals = vec![0f64; span];
    for _ in 0..invocations {
        for set in params.probed_sets.clone() {
            let list = &pools.set(set)[..params.prime_lines];
            prime_stable(hier, attacker_core, list, &params.timer, params.threshold, rng, 16)?;
        }
        trustlet.invoke(hier, key);
        for (i, set) in params.probed_sets.clone().enumerate() {
            let list = &pools.set(set)[..params.prime_lines];
            totals[i] += probe(hier, attacker_core, list, &params.timer, rng)? as f64;
        }
    }
    Ok(totals.into_iter().map(|t| t / invocations as f64).collect())
}

/// Two phases per invocation: a settling pass re-establishes every prime the
/// boundary flush destroyed, then a probe cycle interleaves the body's
/// accesses evenly between visits, so each set's measurement window covers a
/// full cycle of victim activity against a clean baseline.
#[allow(clippy::too_many_arguments)]
fn parallel_profile(
    hier: &mut CacheHierarchy,
    attacker_core: usize,
    pools: &SetPools,
    trustlet: &Trustlet,
    key: TrustKey,
    invocations: usize,
    params: &TrustletProbeParams,
    rng: &mut SimRng,
) -> Result<SetProfile, AttackError> {
    let span = (params.probed_sets.end - params.probed_sets.start) as usize;
    let mut totals = vec![0f64; span];
    let mut counts = vec![0u64; span];
    for invocation in 0..invocations {
        if trustlet.flush_on_enter {
            hier.flush_all_caches(trustlet.boundary_flush_cycles);
        }
        let body = trustlet.body_accesses(key);
        for set in params.probed_sets.clone() {
            let list = &pools.set(set)[..params.prime_lines];
            prime_stable(hier, attacker_core, list, &params.timer, params.threshold, rng, 8)?;
        }
        // The attacker's cycle phase drifts between invocations; rotating the
        // visit order keeps detection independent of where the body's
        // accesses fall relative to each set's probe.
        let start = (invocation * 199) % span;
        let mut remaining = body.as_slice();
        for i in 0..span {
            let slot = (start + i) % span;
            let set = params.probed_sets.start + slot as u64;
            // The body advances at its own fixed rate per probe visit.
            let step = params.batch.min(remaining.len());
            for addr in &remaining[..step] {
                hier.access(trustlet.core, *addr, AccessKind::Data)?;
            }
            remaining = &remaining[step..];
            let list = &pools.set(set)[..params.prime_lines];
            totals[slot] += probe(hier, attacker_core, list, &params.timer, rng)? as f64;
            counts[slot] += 1;
        }
        for addr in remaining {
            hier.access(trustlet.core, *addr, AccessKind::Data)?;
        }
        if trustlet.flush_on_enter {
            hier.flush_all_caches(trustlet.boundary_flush_cycles);
        }
    }
    Ok(totals
        .into_iter()
        .zip(counts)
        .map(|(t, c)| if c == 0 { 0.0 } else { t / c as f64 })
        .collect())
}

/// Fraction of the total squared error that falls inside `band`, with set
/// numbers offset by the profiled range's start.
pub fn mse_band_fraction(per_set: &[f64], probed: &Range<u64>, band: &Range<u64>) -> f64 {
    let total: f64 = per_set.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let in_band: f64 = per_set
        .iter()
        .enumerate()
        .filter(|(i, _)| band.contains(&(probed.start + *i as u64)))
        .map(|(_, e)| e)
        .sum();
    in_band / total
}
