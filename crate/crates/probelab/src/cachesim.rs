//! Cycle-annotated simulator of a multi-core, multi-cluster cache hierarchy.
//!
//! Each cluster has per-core L1 instruction/data caches over a shared L2, with
//! inclusion configured separately per access kind:
//!
//! * `Inclusive`: every L1 line of that kind is also resident in L2. Filling
//!   goes through L2, and an L2 replacement back-invalidates the line from all
//!   L1s in the cluster.
//! * `NonInclusiveVictim`: the L2 behaves as a victim cache for that kind: a
//!   miss fills only the L1, the L2 is allocated exclusively by L1 evictions,
//!   and an L2 hit migrates the line back up to the L1. Lines therefore bounce
//!   between the levels, and every bounce costs a fresh replacement decision
//!   in the L2 set.
//!
//! Cores service each other's reads out of remote caches at a latency between
//! an L2 hit and a memory access; the model is plain read-only sharing with no
//! writeback states. Observed access times are class base latencies plus a
//! right-skewed geometric jitter, which is what makes single-threshold
//! hit/miss separation work downstream.

use std::fmt;

use crate::memspace::PhysicalAddress;
use crate::profile::{ClusterSpec, DeviceProfile, InclusionMode, ReplacementPolicy};
use crate::rng::{GeometricSampler, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Instruction,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServicedBy {
    L1,
    L2,
    Remote,
    Dram,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessOutcome {
    pub serviced_by: ServicedBy,
    /// Latency in cycles, jitter included.
    pub cycles: u64,
    /// Set index of the access in the local cluster's L2.
    pub set_index_l2: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheError {
    AddressOutOfRange(u64),
    FlushUnavailable,
}

impl fmt::Display for CacheError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheError::AddressOutOfRange(a) => write!(f, "fault: address {a:#x} out of range"),
            CacheError::FlushUnavailable => {
                write!(f, "flush instruction not available on this profile")
            }
        }
    }
}

impl std::error::Error for CacheError {}

/// Identifies one cache for the test-only occupancy oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheLevelId {
    L1I { core: usize },
    L1D { core: usize },
    L2 { cluster: usize },
}

// Line metadata is packed as (generation << TAG_BITS) | tag so a resident
// check is one u64 compare per way and a whole-unit invalidation is a
// generation bump. LRU stamps and line kinds live in side arrays that only
// hits and evictions touch.
const TAG_BITS: u32 = 36;
const TAG_MASK: u64 = (1 << TAG_BITS) - 1;

#[derive(Debug, Clone)]
struct CacheUnit {
    offset_bits: u32,
    set_bits: u32,
    sets: u64,
    ways: usize,
    policy: ReplacementPolicy,
    meta: Vec<u64>,
    stamps: Vec<u64>,
    kinds_data: Vec<bool>,
    rr_cursor: Vec<u16>,
    rng: SimRng,
    stamp: u64,
    gen: u64,
    /// Resident line count; lets scans skip empty units entirely.
    valid_count: u64,
}

struct Evicted {
    line_base: u64,
    kind: AccessKind,
}

impl CacheUnit {
    fn new(geom: &crate::profile::CacheGeometry, policy: ReplacementPolicy, rng: SimRng) -> Self {
        let slots = (geom.sets as usize) * geom.ways;
        CacheUnit {
            offset_bits: geom.line_size.trailing_zeros(),
            set_bits: geom.sets.trailing_zeros(),
            sets: geom.sets,
            ways: geom.ways,
            policy,
            meta: vec![0; slots],
            stamps: vec![0; slots],
            kinds_data: vec![false; slots],
            rr_cursor: vec![0; geom.sets as usize],
            rng,
            stamp: 0,
            gen: 1,
            valid_count: 0,
        }
    }

    #[inline]
    fn is_empty(&self) -> bool {
        self.valid_count == 0
    }

    #[inline]
    fn key(&self, set: u64, tag: u64) -> u64 {
        debug_assert!(tag <= TAG_MASK);
        let _ = set;
        (self.gen << TAG_BITS) | tag
    }

    #[inline]
    fn line_addr(&self, paddr: u64) -> u64 {
        paddr >> self.offset_bits
    }

    #[inline]
    fn set_of(&self, paddr: u64) -> u64 {
        self.line_addr(paddr) & (self.sets - 1)
    }

    #[inline]
    fn tag_of(&self, paddr: u64) -> u64 {
        self.line_addr(paddr) >> self.set_bits
    }

    fn line_base(&self, set: u64, tag: u64) -> u64 {
        ((tag << self.set_bits) | set) << self.offset_bits
    }

    #[inline]
    fn slot(&self, set: u64, way: usize) -> usize {
        set as usize * self.ways + way
    }

    fn lookup(&self, paddr: u64) -> Option<usize> {
        if self.valid_count == 0 {
            return None;
        }
        let set = self.set_of(paddr);
        let key = self.key(set, self.tag_of(paddr));
        let base = set as usize * self.ways;
        self.meta[base..base + self.ways].iter().position(|&m| m == key)
    }

    fn touch(&mut self, paddr: u64, way: usize) {
        self.stamp += 1;
        let set = self.set_of(paddr);
        let slot = self.slot(set, way);
        self.stamps[slot] = self.stamp;
    }

    /// Inserts a line, returning the valid line it displaced, if any.
    ///
    /// LRU and round-robin consume invalid ways first. The pseudo-random
    /// policy draws a way uniformly irrespective of line state, the way the
    /// undocumented hardware policy behaves in the attacks' statistics: an
    /// insertion can displace a resident line even while the set has room.
    fn insert(&mut self, paddr: u64, kind: AccessKind) -> Option<Evicted> {
        let set = self.set_of(paddr);
        let tag = self.tag_of(paddr);
        let key = self.key(set, tag);
        let base = set as usize * self.ways;
        if let Some(way) = self.meta[base..base + self.ways].iter().position(|&m| m == key) {
            let slot = base + way;
            self.stamp += 1;
            self.kinds_data[slot] = kind == AccessKind::Data;
            self.stamps[slot] = self.stamp;
            return None;
        }
        let gen_mark = self.gen << TAG_BITS;
        let way = match self.policy {
            ReplacementPolicy::PseudoRandom => self.rng.index(self.ways),
            ReplacementPolicy::Lru => self.meta[base..base + self.ways]
                .iter()
                .position(|&m| m & !TAG_MASK != gen_mark)
                .unwrap_or_else(|| {
                    let mut oldest = 0;
                    let mut oldest_stamp = u64::MAX;
                    for way in 0..self.ways {
                        let s = self.stamps[base + way];
                        if s < oldest_stamp {
                            oldest_stamp = s;
                            oldest = way;
                        }
                    }
                    oldest
                }),
            ReplacementPolicy::RoundRobin => self.meta[base..base + self.ways]
                .iter()
                .position(|&m| m & !TAG_MASK != gen_mark)
                .unwrap_or_else(|| {
                    let cur = self.rr_cursor[set as usize];
                    self.rr_cursor[set as usize] = (cur + 1) % self.ways as u16;
                    cur as usize
                }),
        };
        let slot = base + way;
        let prev = self.meta[slot];
        let evicted = (prev & !TAG_MASK == gen_mark).then(|| Evicted {
            line_base: self.line_base(set, prev & TAG_MASK),
            kind: if self.kinds_data[slot] {
                AccessKind::Data
            } else {
                AccessKind::Instruction
            },
        });
        if evicted.is_none() {
            self.valid_count += 1;
        }
        self.stamp += 1;
        self.meta[slot] = key;
        self.kinds_data[slot] = kind == AccessKind::Data;
        self.stamps[slot] = self.stamp;
        evicted
    }

    fn remove(&mut self, paddr: u64) -> bool {
        if let Some(way) = self.lookup(paddr) {
            let set = self.set_of(paddr);
            let slot = self.slot(set, way);
            self.meta[slot] = 0;
            self.valid_count -= 1;
            true
        } else {
            false
        }
    }

    /// Invalidates every line of this unit that falls inside
    /// `[base, base + len)`; used for back-invalidation across line sizes.
    fn invalidate_range(&mut self, base: u64, len: u64) -> bool {
        if self.valid_count == 0 {
            return false;
        }
        let step = 1u64 << self.offset_bits;
        let mut any = false;
        let mut addr = base;
        while addr < base + len {
            any |= self.remove(addr);
            addr += step;
        }
        any
    }

    fn snapshot(&self, set: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let gen_mark = self.gen << TAG_BITS;
        for way in 0..self.ways {
            let m = self.meta[self.slot(set, way)];
            if m & !TAG_MASK == gen_mark {
                out.push(self.line_base(set, m & TAG_MASK));
            }
        }
        out
    }

    fn clear(&mut self) {
        self.gen += 1;
        self.valid_count = 0;
    }
}

#[derive(Debug, Clone)]
struct CoreCaches {
    l1i: Option<CacheUnit>,
    l1d: Option<CacheUnit>,
}

impl CoreCaches {
    fn unit(&self, kind: AccessKind) -> Option<&CacheUnit> {
        match kind {
            AccessKind::Instruction => self.l1i.as_ref(),
            AccessKind::Data => self.l1d.as_ref(),
        }
    }

    fn unit_mut(&mut self, kind: AccessKind) -> Option<&mut CacheUnit> {
        match kind {
            AccessKind::Instruction => self.l1i.as_mut(),
            AccessKind::Data => self.l1d.as_mut(),
        }
    }
}

#[derive(Debug, Clone)]
struct Cluster {
    cores: Vec<CoreCaches>,
    l2: CacheUnit,
    incl_instr: InclusionMode,
    incl_data: InclusionMode,
}

impl Cluster {
    fn inclusion(&self, kind: AccessKind) -> InclusionMode {
        match kind {
            AccessKind::Instruction => self.incl_instr,
            AccessKind::Data => self.incl_data,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacheHierarchy {
    clusters: Vec<Cluster>,
    core_map: Vec<(usize, usize)>,
    coherent_across_clusters: bool,
    flush_available: bool,
    latency: crate::profile::LatencyModel,
    /// Precomputed jitter samplers, in the order l1, l2, remote, dram,
    /// flush_cached, flush_uncached.
    jitter: [GeometricSampler; 6],
    phys_size: u64,
    lat_rng: SimRng,
    clock: u64,
}

const SALT_LATENCY: u64 = 0x11;
const SALT_UNIT_BASE: u64 = 0x100;

impl CacheHierarchy {
    pub fn new(profile: &DeviceProfile, seed: u64) -> Self {
        let root = SimRng::new(seed);
        let mut clusters = Vec::new();
        let mut core_map = Vec::new();
        let mut unit_salt = SALT_UNIT_BASE;
        let mut salt = || {
            unit_salt += 1;
            unit_salt
        };
        for (ci, spec) in profile.clusters.iter().enumerate() {
            let mut cores = Vec::new();
            for local in 0..spec.cores {
                core_map.push((ci, local));
                cores.push(CoreCaches {
                    l1i: spec
                        .l1i
                        .as_ref()
                        .map(|s| CacheUnit::new(&s.geometry, s.policy, root.derive(salt()))),
                    l1d: spec
                        .l1d
                        .as_ref()
                        .map(|s| CacheUnit::new(&s.geometry, s.policy, root.derive(salt()))),
                });
            }
            clusters.push(Cluster {
                cores,
                l2: CacheUnit::new(&spec.l2.geometry, spec.l2.policy, root.derive(salt())),
                incl_instr: spec.inclusion_instruction,
                incl_data: spec.inclusion_data,
            });
        }
        let lat = &profile.latency;
        CacheHierarchy {
            clusters,
            core_map,
            coherent_across_clusters: profile.coherent_across_clusters,
            flush_available: profile.flush_available,
            latency: profile.latency.clone(),
            jitter: [
                GeometricSampler::new(lat.l1_hit.jitter),
                GeometricSampler::new(lat.l2_hit.jitter),
                GeometricSampler::new(lat.remote_hit.jitter),
                GeometricSampler::new(lat.dram.jitter),
                GeometricSampler::new(lat.flush_cached.jitter),
                GeometricSampler::new(lat.flush_uncached.jitter),
            ],
            phys_size: profile.phys_size,
            lat_rng: root.derive(SALT_LATENCY),
            clock: 0,
        }
    }

    pub fn total_cores(&self) -> usize {
        self.core_map.len()
    }

    pub fn cluster_of(&self, core: usize) -> usize {
        self.core_map[core].0
    }

    pub fn flush_available(&self) -> bool {
        self.flush_available
    }

    pub fn latency(&self) -> &crate::profile::LatencyModel {
        &self.latency
    }

    /// Simulated time in cycles since construction.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn advance_clock(&mut self, cycles: u64) {
        self.clock += cycles;
    }

    pub fn l2_sets(&self, cluster: usize) -> u64 {
        self.clusters[cluster].l2.sets
    }

    pub fn l2_geometry(&self, cluster: usize) -> crate::profile::CacheGeometry {
        let l2 = &self.clusters[cluster].l2;
        crate::profile::CacheGeometry {
            line_size: 1 << l2.offset_bits,
            sets: l2.sets,
            ways: l2.ways,
        }
    }

    pub fn l2_set_index(&self, cluster: usize, paddr: PhysicalAddress) -> u64 {
        self.clusters[cluster].l2.set_of(paddr.0)
    }

    #[inline]
    fn charge(&mut self, base: u64, class: usize) -> u64 {
        let cycles = base + self.jitter[class].sample(&mut self.lat_rng);
        self.clock += cycles;
        cycles
    }

    /// Allocates an L1 eviction victim into the L2 (victim-cache path).
    /// A displaced inclusive-kind line is back-invalidated from the L1s.
    fn spill_to_l2(cluster: &mut Cluster, line_base: u64, kind: AccessKind) {
        let evicted = cluster.l2.insert(line_base, kind);
        Self::handle_l2_casualty(cluster, evicted);
    }

    fn handle_l2_casualty(cluster: &mut Cluster, evicted: Option<Evicted>) {
        if let Some(ev) = evicted {
            if cluster.inclusion(ev.kind) == InclusionMode::Inclusive {
                let len = 1u64 << cluster.l2.offset_bits;
                for core in &mut cluster.cores {
                    if let Some(l1) = core.unit_mut(ev.kind) {
                        l1.invalidate_range(ev.line_base, len);
                    }
                }
            }
        }
    }

    /// Fills the local hierarchy after a miss serviced by memory or a remote
    /// cache, honouring the cluster's inclusion mode for this kind.
    fn fill_after_miss(cluster: &mut Cluster, local_core: usize, paddr: u64, kind: AccessKind) {
        match cluster.inclusion(kind) {
            InclusionMode::Inclusive => {
                let evicted = cluster.l2.insert(paddr, kind);
                Self::handle_l2_casualty(cluster, evicted);
                if let Some(l1) = cluster.cores[local_core].unit_mut(kind) {
                    // The L1 victim is of an inclusive kind: its L2 copy
                    // remains authoritative, so it is dropped silently.
                    l1.insert(paddr, kind);
                }
            }
            InclusionMode::NonInclusiveVictim => {
                if let Some(l1) = cluster.cores[local_core].unit_mut(kind) {
                    let spilled = l1.insert(paddr, kind);
                    if let Some(sp) = spilled {
                        Self::spill_to_l2(cluster, sp.line_base, sp.kind);
                    }
                } else {
                    let evicted = cluster.l2.insert(paddr, kind);
                    Self::handle_l2_casualty(cluster, evicted);
                }
            }
        }
    }

    /// One memory access by `core`. Lookup order is the local L1, the
    /// cluster's L2, remote caches (under coherence), then memory.
    pub fn access(
        &mut self,
        core: usize,
        paddr: PhysicalAddress,
        kind: AccessKind,
    ) -> Result<AccessOutcome, CacheError> {
        if paddr.0 >= self.phys_size {
            return Err(CacheError::AddressOutOfRange(paddr.0));
        }
        let (ci, local) = self.core_map[core];
        let set_index_l2 = self.clusters[ci].l2.set_of(paddr.0);
        let lat_l1 = self.latency.l1_hit.base;
        let lat_l2 = self.latency.l2_hit.base;
        let lat_remote = self.latency.remote_hit.base;
        let lat_dram = self.latency.dram.base;

        // L1.
        if let Some(l1) = self.clusters[ci].cores[local].unit_mut(kind) {
            if let Some(way) = l1.lookup(paddr.0) {
                l1.touch(paddr.0, way);
                let cycles = self.charge(lat_l1, 0);
                return Ok(AccessOutcome {
                    serviced_by: ServicedBy::L1,
                    cycles,
                    set_index_l2,
                });
            }
        }

        // Cluster L2.
        let cluster = &mut self.clusters[ci];
        if let Some(way) = cluster.l2.lookup(paddr.0) {
            match cluster.inclusion(kind) {
                InclusionMode::Inclusive => {
                    cluster.l2.touch(paddr.0, way);
                    if let Some(l1) = cluster.cores[local].unit_mut(kind) {
                        l1.insert(paddr.0, kind);
                    }
                }
                InclusionMode::NonInclusiveVictim => {
                    if cluster.cores[local].unit(kind).is_some() {
                        // Victim-cache drain: the hit migrates the line up to
                        // the L1 and the eviction it causes there refills the
                        // hole, costing one fresh L2 allocation per bounce.
                        cluster.l2.remove(paddr.0);
                        let spilled = cluster.cores[local]
                            .unit_mut(kind)
                            .unwrap()
                            .insert(paddr.0, kind);
                        if let Some(sp) = spilled {
                            Self::spill_to_l2(cluster, sp.line_base, sp.kind);
                        }
                    } else {
                        cluster.l2.touch(paddr.0, way);
                    }
                }
            }
            let cycles = self.charge(lat_l2, 1);
            return Ok(AccessOutcome {
                serviced_by: ServicedBy::L2,
                cycles,
                set_index_l2,
            });
        }

        // Remote caches. Cores within a cluster are always coherent; other
        // clusters participate only when the interconnect is coherent.
        let mut remote = false;
        'scan: for (oci, cluster) in self.clusters.iter().enumerate() {
            if oci != ci && !self.coherent_across_clusters {
                continue;
            }
            for (oli, other) in cluster.cores.iter().enumerate() {
                if oci == ci && oli == local {
                    continue;
                }
                for unit in [other.l1i.as_ref(), other.l1d.as_ref()].into_iter().flatten() {
                    if unit.lookup(paddr.0).is_some() {
                        remote = true;
                        break 'scan;
                    }
                }
            }
            if oci != ci && cluster.l2.lookup(paddr.0).is_some() {
                remote = true;
                break 'scan;
            }
        }

        Self::fill_after_miss(&mut self.clusters[ci], local, paddr.0, kind);
        let (serviced_by, cycles) = if remote {
            (ServicedBy::Remote, self.charge(lat_remote, 2))
        } else {
            (ServicedBy::Dram, self.charge(lat_dram, 3))
        };
        Ok(AccessOutcome {
            serviced_by,
            cycles,
            set_index_l2,
        })
    }

    /// Removes the line from every cache of every core. The returned latency
    /// depends on whether any copy was present, which is the leak Flush+Flush
    /// exploits.
    pub fn flush(&mut self, _core: usize, paddr: PhysicalAddress) -> Result<u64, CacheError> {
        if !self.flush_available {
            return Err(CacheError::FlushUnavailable);
        }
        if paddr.0 >= self.phys_size {
            return Err(CacheError::AddressOutOfRange(paddr.0));
        }
        let cached = self.purge_line(paddr);
        let lat_c = self.latency.flush_cached.base;
        let lat_u = self.latency.flush_uncached.base;
        let cycles = if cached {
            self.charge(lat_c, 4)
        } else {
            self.charge(lat_u, 5)
        };
        Ok(cycles)
    }

    /// Line removal without the availability gate or latency; internal tool
    /// for victims that architecturally clean caches.
    pub(crate) fn purge_line(&mut self, paddr: PhysicalAddress) -> bool {
        let mut cached = false;
        for cluster in &mut self.clusters {
            for core in &mut cluster.cores {
                for unit in [core.l1i.as_mut(), core.l1d.as_mut()].into_iter().flatten() {
                    if !unit.is_empty() {
                        cached |= unit.remove(paddr.0);
                    }
                }
            }
            if !cluster.l2.is_empty() {
                cached |= cluster.l2.remove(paddr.0);
            }
        }
        cached
    }

    /// Wipes every cache in the machine; models a secure-world entry/exit
    /// cache clean. Costs `cycles` of simulated time.
    pub fn flush_all_caches(&mut self, cycles: u64) {
        for cluster in &mut self.clusters {
            for core in &mut cluster.cores {
                for unit in [core.l1i.as_mut(), core.l1d.as_mut()].into_iter().flatten() {
                    unit.clear();
                }
            }
            cluster.l2.clear();
        }
        self.clock += cycles;
    }

    /// Test-only oracle: the resident line base addresses of one set, in way
    /// order. Attack code never consults this; tests and the eviction trial
    /// harness do.
    pub fn occupancy_snapshot(&self, level: CacheLevelId, set: u64) -> Vec<u64> {
        match level {
            CacheLevelId::L1I { core } => {
                let (ci, local) = self.core_map[core];
                self.clusters[ci].cores[local]
                    .l1i
                    .as_ref()
                    .map(|u| u.snapshot(set))
                    .unwrap_or_default()
            }
            CacheLevelId::L1D { core } => {
                let (ci, local) = self.core_map[core];
                self.clusters[ci].cores[local]
                    .l1d
                    .as_ref()
                    .map(|u| u.snapshot(set))
                    .unwrap_or_default()
            }
            CacheLevelId::L2 { cluster } => self.clusters[cluster].l2.snapshot(set),
        }
    }

    /// Test-only oracle: is any copy of the line resident anywhere?
    pub fn is_cached_anywhere(&self, paddr: PhysicalAddress) -> bool {
        for cluster in &self.clusters {
            for core in &cluster.cores {
                for unit in [core.l1i.as_ref(), core.l1d.as_ref()].into_iter().flatten() {
                    if unit.lookup(paddr.0).is_some() {
                        return true;
                    }
                }
            }
            if cluster.l2.lookup(paddr.0).is_some() {
                return true;
            }
        }
        false
    }

    /// Invalidates all caches without advancing time or disturbing any
    /// generator state; used between independent trials.
    pub fn reset_caches(&mut self) {
        for cluster in &mut self.clusters {
            for core in &mut cluster.cores {
                for unit in [core.l1i.as_mut(), core.l1d.as_mut()].into_iter().flatten() {
                    unit.clear();
                }
            }
            cluster.l2.clear();
        }
    }
}

/// Set index of `paddr` under the given geometry: discard the line offset
/// bits, keep the low set bits.
pub fn set_index(geometry: &crate::profile::CacheGeometry, paddr: PhysicalAddress) -> u64 {
    (paddr.0 >> geometry.line_size.trailing_zeros()) & (geometry.sets - 1)
}

/// Convenience constructor used by scenario code and tests.
pub fn cluster_spec_uniform(
    cores: usize,
    l1: Option<crate::profile::CacheSpec>,
    l2: crate::profile::CacheSpec,
    inclusion_instruction: InclusionMode,
    inclusion_data: InclusionMode,
) -> ClusterSpec {
    ClusterSpec {
        cores,
        l1i: l1.clone(),
        l1d: l1,
        l2,
        inclusion_instruction,
        inclusion_data,
    }
}
