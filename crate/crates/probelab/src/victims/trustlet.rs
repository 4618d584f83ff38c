//! Synthetic secure-world victim.
//!
//! The trustlet services key operations from memory the normal world cannot
//! map, so only its cache footprint is observable. Every invocation runs a
//! short fixed entry sequence; a valid key additionally drives a signature
//! loop over a key-dependent subset of a configured band of L2 sets, while an
//! invalid key returns right after the prefix. On devices whose secure world
//! cleans the caches at the boundary, `flush_on_enter` wipes every cache on
//! entry and exit, which defeats prime-before/probe-after measurement and
//! forces the attacker to probe in parallel with the body.
//!
//! Each active set is swept through several congruent lines so the activity
//! reaches the shared L2 even where the L2 is only filled by L1 evictions.

use crate::cachesim::{AccessKind, CacheHierarchy};
use crate::memspace::PhysicalAddress;
use crate::profile::DeviceProfile;
use crate::rng::derive_seed;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustKey {
    Valid { id: u32 },
    Invalid,
}

#[derive(Debug, Clone)]
pub struct Trustlet {
    pub core: usize,
    pub cluster: usize,
    pub flush_on_enter: bool,
    /// L2 sets a valid key's signature loop draws from.
    pub band: Range<u64>,
    /// Sets of the fixed entry prefix both key classes touch.
    pub prefix_sets: u64,
    /// Congruent lines swept per active set; forces L2 allocations.
    pub lines_per_set: usize,
    /// Signature-loop repetitions for valid keys.
    pub sweeps: usize,
    /// Cycle cost charged for a secure-world boundary cache clean.
    pub boundary_flush_cycles: u64,
    region_base_line: u64,
    l2_sets: u64,
    line_size: u64,
    membership_salt: u64,
}

impl Trustlet {
    /// `region_base` must point at memory withheld from the normal-world
    /// allocator (see `MemorySystem::with_reserved`).
    pub fn new(
        profile: &DeviceProfile,
        core: usize,
        cluster: usize,
        band: Range<u64>,
        flush_on_enter: bool,
        region_base: PhysicalAddress,
        seed: u64,
    ) -> Self {
        let geom = &profile.clusters[cluster].l2.geometry;
        assert!(band.end <= geom.sets, "band exceeds the L2 set count");
        Trustlet {
            core,
            cluster,
            flush_on_enter,
            band,
            prefix_sets: 12,
            lines_per_set: 6,
            sweeps: 4,
            boundary_flush_cycles: 2000,
            region_base_line: region_base.0 / geom.line_size,
            l2_sets: geom.sets,
            line_size: geom.line_size,
            membership_salt: derive_seed(seed, 0x7247),
        }
    }

    fn line_for(&self, set: u64, k: u64) -> PhysicalAddress {
        // First region line congruent to `set`, then stride by the set count.
        let first = self.region_base_line + self.l2_sets - (self.region_base_line % self.l2_sets)
            + set;
        PhysicalAddress((first + k * self.l2_sets) * self.line_size)
    }

    /// Band subset a valid key exercises; roughly three quarters of the band,
    /// keyed by the key id.
    pub fn valid_key_sets(&self, id: u32) -> Vec<u64> {
        self.band
            .clone()
            .filter(|s| !derive_seed(self.membership_salt, ((id as u64) << 32) | s).is_multiple_of(4))
            .collect()
    }

    /// Distinct L2 sets an invocation touches.
    pub fn active_sets(&self, key: TrustKey) -> Vec<u64> {
        let prefix_base = self.band.start.saturating_sub(self.prefix_sets + 4);
        let mut sets: Vec<u64> = (prefix_base..prefix_base + self.prefix_sets).collect();
        if let TrustKey::Valid { id } = key {
            sets.extend(self.valid_key_sets(id));
        }
        sets
    }

    /// The body's access sequence, in execution order.
    pub fn body_accesses(&self, key: TrustKey) -> Vec<PhysicalAddress> {
        let mut out = Vec::new();
        let prefix_base = self.band.start.saturating_sub(self.prefix_sets + 4);
        for set in prefix_base..prefix_base + self.prefix_sets {
            for k in 0..self.lines_per_set as u64 {
                out.push(self.line_for(set, k));
            }
        }
        if let TrustKey::Valid { id } = key {
            let sets = self.valid_key_sets(id);
            for _ in 0..self.sweeps {
                for &set in &sets {
                    for k in 0..self.lines_per_set as u64 {
                        out.push(self.line_for(set, k));
                    }
                }
            }
        }
        out
    }

    /// Runs one invocation to completion.
    pub fn invoke(&self, hier: &mut CacheHierarchy, key: TrustKey) {
        if self.flush_on_enter {
            hier.flush_all_caches(self.boundary_flush_cycles);
        }
        for addr in self.body_accesses(key) {
            hier.access(self.core, addr, AccessKind::Data).unwrap();
        }
        if self.flush_on_enter {
            hier.flush_all_caches(self.boundary_flush_cycles);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cachesim::CacheHierarchy;

    fn trustlet(flush: bool) -> (DeviceProfile, Trustlet) {
        let profile = DeviceProfile::alcatel_pop2();
        let region = PhysicalAddress(profile.phys_size - (8 << 20));
        let t = Trustlet::new(&profile, 3, 0, 250..321, flush, region, 99);
        (profile, t)
    }

    #[test]
    fn valid_keys_touch_strictly_more_sets_than_invalid() {
        let (_, t) = trustlet(false);
        let invalid = t.active_sets(TrustKey::Invalid);
        assert!(invalid.len() as u64 <= t.prefix_sets);
        for id in 0..5 {
            let valid = t.active_sets(TrustKey::Valid { id });
            assert!(valid.len() > invalid.len() * 3);
        }
    }

    #[test]
    fn valid_key_sets_live_in_the_band_and_differ_by_key() {
        let (_, t) = trustlet(false);
        let a = t.valid_key_sets(0);
        let b = t.valid_key_sets(1);
        assert!(a.iter().all(|s| t.band.contains(s)));
        assert_ne!(a, b);
        assert_eq!(a, t.valid_key_sets(0), "membership is stable per key");
        // Around three quarters of the band.
        let band_len = (t.band.end - t.band.start) as f64;
        let frac = a.len() as f64 / band_len;
        assert!(frac > 0.55 && frac < 0.95, "fraction {frac}");
    }

    #[test]
    fn body_lines_map_to_their_sets() {
        let (profile, t) = trustlet(false);
        let geom = &profile.clusters[0].l2.geometry;
        for (addr, set) in t
            .body_accesses(TrustKey::Valid { id: 2 })
            .iter()
            .zip(t.active_sets(TrustKey::Valid { id: 2 }).iter().flat_map(|s| {
                std::iter::repeat_n(*s, t.lines_per_set)
            }))
        {
            assert_eq!(crate::cachesim::set_index(geom, *addr), set);
            assert!(addr.0 < profile.phys_size);
        }
    }

    #[test]
    fn boundary_flush_wipes_attacker_state() {
        let (profile, t) = trustlet(true);
        let mut hier = CacheHierarchy::new(&profile, 5);
        let attacker_line = PhysicalAddress(0x4000);
        hier.access(0, attacker_line, AccessKind::Data).unwrap();
        assert!(hier.is_cached_anywhere(attacker_line));
        t.invoke(&mut hier, TrustKey::Invalid);
        assert!(!hier.is_cached_anywhere(attacker_line));
    }

    #[test]
    fn without_boundary_flush_the_body_leaves_residue() {
        let (_, t) = trustlet(false);
        let profile = DeviceProfile::alcatel_pop2();
        let mut hier = CacheHierarchy::new(&profile, 6);
        t.invoke(&mut hier, TrustKey::Valid { id: 0 });
        let touched = t
            .body_accesses(TrustKey::Valid { id: 0 })
            .iter()
            .filter(|a| hier.is_cached_anywhere(**a))
            .count();
        assert!(touched > 0, "body accesses must stay observable");
    }
}
