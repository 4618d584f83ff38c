//! First-round key recovery against the table-based AES victim.
//!
//! The attacker triggers encryptions with plaintexts it picks, watching one
//! line per lookup table. A first-round lookup for byte `i` indexes table
//! `i mod 4` with `p_i ^ k_i`, so sweeping `p_i` over all byte values makes
//! the sixteen values whose upper nibble matches the monitored line hit on
//! every encryption, while the rest hit only through later-round collateral.
//! The decision statistic is the mean hit rate per upper-nibble class of
//! `p_i`; the winning class XORed with the monitored line's index nibble is
//! the upper nibble of `k_i`, accepted only when it beats the runner-up class
//! by a configured margin.
//!
//! The probe lands one victim scheduling quantum after the trigger, right
//! after the first round's lookups, which keeps the later-round collateral
//! out of most measurements. In shared mode the monitored lines are probed
//! with Evict+Reload or Flush+Reload through the shared mapping; in private
//! mode the attacker first locates the table block's cache sets with
//! Prime+Probe (the block spans 64 consecutive sets of one page) and then
//! watches one set per table.

use crate::attacks::{
    find_active_sets, prime_stable, probe_counted, AttackError, ProbePrimitive, SetPools,
};
use crate::cachesim::{AccessKind, CacheHierarchy};
use crate::eviction::{build_eviction_set, run_pattern, EvictionError, EvictionSet, EvictionStrategy};
use crate::memspace::{MemorySystem, PhysicalAddress, ProcessId, VirtualAddress};
use crate::rng::SimRng;
use crate::timing::{Classification, Threshold, TimerModel};
use crate::victims::aes::{TTableAes, AES_SHARED_OBJECT};
use std::fmt;

#[derive(Debug, Clone)]
pub struct AesAttackConfig {
    /// Encryptions spent per key byte.
    pub budget_per_byte: usize,
    /// Required gap between the best and runner-up class hit rates.
    pub margin_floor: f64,
    /// Chosen-plaintext sweeps when true; random plaintexts otherwise.
    pub chosen_plaintext: bool,
    /// Lines primed per set in private mode (ways - 1).
    pub prime_lines: usize,
    /// Rounds per set for the active-set discovery scan.
    pub discovery_rounds: usize,
}

impl Default for AesAttackConfig {
    fn default() -> Self {
        AesAttackConfig {
            budget_per_byte: 512,
            margin_floor: 0.2,
            chosen_plaintext: true,
            prime_lines: 15,
            discovery_rounds: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NibbleEstimate {
    pub byte_index: usize,
    /// Upper nibble of the key byte, or undecided when the margin stayed
    /// below the floor within budget.
    pub nibble: Option<u8>,
    pub margin: f64,
    pub encryptions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryError {
    Setup(String),
    Attack(AttackError),
    Eviction(EvictionError),
}

impl fmt::Display for RecoveryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecoveryError::Setup(m) => write!(f, "key recovery setup: {m}"),
            RecoveryError::Attack(e) => write!(f, "{e}"),
            RecoveryError::Eviction(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RecoveryError {}

impl From<AttackError> for RecoveryError {
    fn from(e: AttackError) -> Self {
        RecoveryError::Attack(e)
    }
}

impl From<EvictionError> for RecoveryError {
    fn from(e: EvictionError) -> Self {
        RecoveryError::Eviction(e)
    }
}

impl From<crate::cachesim::CacheError> for RecoveryError {
    fn from(e: crate::cachesim::CacheError) -> Self {
        RecoveryError::Attack(AttackError::Cache(e))
    }
}

/// Runs the victim's encryption in quantum-sized lookup batches, probing
/// after the first batch. Returns the probe's verdict.
#[allow(clippy::too_many_arguments)]
fn phase_gated_round(
    hier: &mut CacheHierarchy,
    victim: &TTableAes,
    victim_core: usize,
    plaintext: &[u8; 16],
    rng: &mut SimRng,
    mut prepare: impl FnMut(&mut CacheHierarchy, &mut SimRng) -> Result<(), RecoveryError>,
    mut probe_hit: impl FnMut(&mut CacheHierarchy, &mut SimRng) -> Result<bool, RecoveryError>,
) -> Result<bool, RecoveryError> {
    prepare(hier, rng)?;
    let (_, trace) = victim.encrypt_with_trace(plaintext);
    let batch = victim.lookups_per_quantum.max(1);
    let mut lookups = trace.iter();
    for lookup in lookups.by_ref().take(batch) {
        hier.access(victim_core, victim.lookup_paddr(*lookup), AccessKind::Data)?;
    }
    let hit = probe_hit(hier, rng)?;
    for lookup in lookups {
        hier.access(victim_core, victim.lookup_paddr(*lookup), AccessKind::Data)?;
    }
    Ok(hit)
}

struct ClassStats {
    hits: [u64; 16],
    count: [u64; 16],
}

impl ClassStats {
    fn new() -> Self {
        ClassStats { hits: [0; 16], count: [0; 16] }
    }

    fn record(&mut self, value: u8, hit: bool) {
        let class = (value >> 4) as usize;
        self.count[class] += 1;
        self.hits[class] += hit as u64;
    }

    /// Best class, margin over the runner-up.
    fn decide(&self) -> (u8, f64) {
        let rates: Vec<f64> = (0..16)
            .map(|c| self.hits[c] as f64 / self.count[c].max(1) as f64)
            .collect();
        let best = (0..16).max_by(|&a, &b| rates[a].partial_cmp(&rates[b]).unwrap()).unwrap();
        let runner = (0..16)
            .filter(|&c| c != best)
            .max_by(|&a, &b| rates[a].partial_cmp(&rates[b]).unwrap())
            .unwrap();
        (best as u8, rates[best] - rates[runner])
    }
}

/// Byte-position loop shared by both modes. `round` runs one prepared,
/// phase-gated encryption and reports the monitored line's verdict.
fn estimate_bytes(
    cfg: &AesAttackConfig,
    rng: &mut SimRng,
    mut round: impl FnMut(usize, &[u8; 16]) -> Result<bool, RecoveryError>,
) -> Result<Vec<NibbleEstimate>, RecoveryError> {
    let mut out = Vec::with_capacity(16);
    for byte_index in 0..16 {
        let mut stats = ClassStats::new();
        let mut encryptions = 0;
        for e in 0..cfg.budget_per_byte {
            let mut pt: [u8; 16] = core::array::from_fn(|_| rng.next_u32() as u8);
            if cfg.chosen_plaintext {
                pt[byte_index] = (e % 256) as u8;
            }
            let hit = round(byte_index, &pt)?;
            stats.record(pt[byte_index], hit);
            encryptions += 1;
        }
        let (best, margin) = stats.decide();
        out.push(NibbleEstimate {
            byte_index,
            nibble: (margin >= cfg.margin_floor).then_some(best),
            margin,
            encryptions,
        });
    }
    Ok(out)
}

/// Shared-mode recovery: the attacker maps the victim's table object and
/// probes the first line of each table with the given primitive.
#[allow(clippy::too_many_arguments)]
pub fn recover_shared(
    hier: &mut CacheHierarchy,
    mem: &mut MemorySystem,
    victim: &TTableAes,
    victim_core: usize,
    attacker_pid: ProcessId,
    attacker_core: usize,
    primitive: ProbePrimitive,
    strategy: Option<EvictionStrategy>,
    cfg: &AesAttackConfig,
    timer: &TimerModel,
    threshold: Threshold,
    rng: &mut SimRng,
) -> Result<Vec<NibbleEstimate>, RecoveryError> {
    if victim.disalignment != 0 {
        return Err(RecoveryError::Setup(
            "shared-mode recovery assumes line-aligned tables; see the disalignment report".into(),
        ));
    }
    let mapping = mem
        .map_shared(attacker_pid, AES_SHARED_OBJECT, 2 * 4096)
        .map_err(|e| RecoveryError::Setup(e.to_string()))?;
    let cluster = hier.cluster_of(attacker_core);
    let monitored: Vec<(VirtualAddress, PhysicalAddress)> = (0..4)
        .map(|t| {
            let va = VirtualAddress(mapping.virtual_base.0 + t as u64 * 1024);
            let pa = mem.translate(attacker_pid, va).expect("mapped");
            (va, pa)
        })
        .collect();

    let mut evsets: Vec<Option<EvictionSet>> = vec![None, None, None, None];
    let strategy = match primitive {
        ProbePrimitive::EvictReload => {
            let strategy = strategy.ok_or_else(|| {
                RecoveryError::Setup("evict_reload recovery needs an eviction strategy".into())
            })?;
            // Congruent pool from the attacker's own memory, resolved through
            // the pagemap oracle. Frames land in sets binomially, so size the
            // mapping at twice the per-set need.
            let geometry = hier.l2_geometry(cluster);
            let span = geometry.sets * geometry.line_size * (2 * strategy.size as u64 + 16);
            let pool_mapping = mem
                .map_private(attacker_pid, span)
                .map_err(|e| RecoveryError::Setup(e.to_string()))?;
            let pool: Vec<VirtualAddress> = (0..pool_mapping.length / geometry.line_size)
                .map(|k| VirtualAddress(pool_mapping.virtual_base.0 + k * geometry.line_size))
                .collect();
            for (t, (va, _)) in monitored.iter().enumerate() {
                evsets[t] = Some(build_eviction_set(
                    mem,
                    attacker_pid,
                    *va,
                    &pool,
                    strategy.size,
                    &geometry,
                )?);
            }
            Some(strategy)
        }
        ProbePrimitive::FlushReload => None,
        other => {
            return Err(RecoveryError::Setup(format!(
                "shared-mode recovery uses flush_reload or evict_reload, not {other}"
            )))
        }
    };

    let mut timer_rng = rng.derive(0x51);
    let mut pt_rng = rng.derive(0x52);
    estimate_bytes(cfg, &mut pt_rng, |byte_index, pt| {
        let table = TTableAes::table_of_byte(byte_index);
        let line = monitored[table].1;
        phase_gated_round(
            hier,
            victim,
            victim_core,
            pt,
            &mut timer_rng,
            |hier, _| {
                match strategy {
                    Some(ref s) => {
                        run_pattern(hier, attacker_core, s, evsets[table].as_ref().unwrap())?;
                    }
                    None => {
                        hier.flush(attacker_core, line)?;
                    }
                }
                Ok(())
            },
            |hier, rng| {
                let outcome = hier.access(attacker_core, line, AccessKind::Data)?;
                let ticks = timer.observe(outcome.cycles, rng);
                Ok(threshold.classify(ticks) == Classification::Hit)
            },
        )
    })
}

/// Locates the table block in private mode. The block fills exactly one
/// page, and pages map to 64 consecutive, page-aligned cache sets, so the
/// candidate bases are the multiples of 64; the one whose 64-set window
/// carries the largest total activity margin wins. Alignment is what makes
/// the location robust: a block-edge set missing from the scan cannot shift
/// the base by one line. The winning window must hold at least 48 active
/// sets to count as a block.
pub fn locate_table_base(active: &[(u64, f64)], total_sets: u64) -> Option<u64> {
    if active.is_empty() || total_sets < 64 {
        return None;
    }
    let mut margin = vec![0f64; total_sets as usize];
    let mut flags = vec![0u32; total_sets as usize];
    for &(s, m) in active {
        margin[s as usize] = m.max(0.0);
        flags[s as usize] = 1;
    }
    let mut best = (f64::NEG_INFINITY, 0u32, 0u64);
    for b in (0..total_sets).step_by(64) {
        let mut sum = 0.0;
        let mut count = 0;
        for k in 0..64u64 {
            let idx = ((b + k) % total_sets) as usize;
            sum += margin[idx];
            count += flags[idx];
        }
        if sum > best.0 {
            best = (sum, count, b);
        }
    }
    (best.1 >= 48).then_some(best.2)
}

/// Private-mode recovery: discover the table block with Prime+Probe, then
/// watch the first set of each table.
#[allow(clippy::too_many_arguments)]
pub fn recover_private(
    hier: &mut CacheHierarchy,
    mem: &mut MemorySystem,
    victim: &TTableAes,
    victim_core: usize,
    attacker_pid: ProcessId,
    attacker_core: usize,
    cfg: &AesAttackConfig,
    timer: &TimerModel,
    threshold: Threshold,
    rng: &mut SimRng,
) -> Result<Vec<NibbleEstimate>, RecoveryError> {
    if victim.disalignment != 0 {
        return Err(RecoveryError::Setup(
            "private-mode recovery assumes line-aligned tables; see the disalignment report".into(),
        ));
    }
    let cluster = hier.cluster_of(attacker_core);
    let geometry = hier.l2_geometry(cluster);
    let pool_bytes = geometry.sets * geometry.line_size * 64;
    let pools = SetPools::from_new_mapping(mem, attacker_pid, pool_bytes, &geometry)?;
    // Prime lines plus a disjoint churn sweep that displaces the victim's
    // residue between rounds; a line the victim left resident would
    // otherwise absorb into the set and never miss again.
    let churn_lines = 24usize;
    if pools.min_lines() < cfg.prime_lines + churn_lines {
        return Err(RecoveryError::Setup(format!(
            "attacker pool too thin: {} lines in the smallest set",
            pools.min_lines()
        )));
    }

    // Discovery: random encryptions while scanning all sets.
    let mut trig_rng = rng.derive(0x61);
    let mut scan_rng = rng.derive(0x62);
    let mut trigger = |hier: &mut CacheHierarchy| {
        let pt: [u8; 16] = core::array::from_fn(|_| trig_rng.next_u32() as u8);
        victim.encrypt(hier, victim_core, &pt);
    };
    let active = find_active_sets(
        hier,
        attacker_core,
        cluster,
        &pools,
        &mut trigger,
        cfg.discovery_rounds,
        cfg.prime_lines,
        timer,
        3.0,
        &mut scan_rng,
    )?;
    let base = locate_table_base(&active, geometry.sets).ok_or_else(|| {
        RecoveryError::Setup(format!(
            "active-set scan found no table block ({} active sets)",
            active.len()
        ))
    })?;

    let monitored_sets: Vec<u64> = (0..4).map(|t| (base + 16 * t) % geometry.sets).collect();
    let prime_lists: Vec<Vec<PhysicalAddress>> = monitored_sets
        .iter()
        .map(|&s| pools.set(s)[..cfg.prime_lines].to_vec())
        .collect();
    let churn_lists: Vec<Vec<PhysicalAddress>> = monitored_sets
        .iter()
        .map(|&s| pools.set(s)[cfg.prime_lines..cfg.prime_lines + churn_lines].to_vec())
        .collect();

    let mut timer_rng = rng.derive(0x63);
    let mut pt_rng = rng.derive(0x64);
    estimate_bytes(cfg, &mut pt_rng, |byte_index, pt| {
        let table = TTableAes::table_of_byte(byte_index);
        let list = &prime_lists[table];
        phase_gated_round(
            hier,
            victim,
            victim_core,
            pt,
            &mut timer_rng,
            |hier, rng| {
                for addr in &churn_lists[table] {
                    hier.access(attacker_core, *addr, AccessKind::Data)
                        .map_err(AttackError::Cache)?;
                }
                prime_stable(hier, attacker_core, list, timer, threshold, rng, 16)?;
                Ok(())
            },
            |hier, rng| {
                let (_, misses) =
                    probe_counted(hier, attacker_core, list, timer, threshold, rng)?;
                Ok(misses > 0)
            },
        )
    })
}

/// Convenience over both modes.
#[allow(clippy::too_many_arguments)]
pub fn recover_upper_nibbles(
    hier: &mut CacheHierarchy,
    mem: &mut MemorySystem,
    victim: &TTableAes,
    victim_core: usize,
    attacker_pid: ProcessId,
    attacker_core: usize,
    primitive: ProbePrimitive,
    strategy: Option<EvictionStrategy>,
    cfg: &AesAttackConfig,
    timer: &TimerModel,
    threshold: Threshold,
    rng: &mut SimRng,
) -> Result<Vec<NibbleEstimate>, RecoveryError> {
    match victim.mode {
        crate::victims::aes::AesMode::Shared => recover_shared(
            hier, mem, victim, victim_core, attacker_pid, attacker_core, primitive, strategy, cfg,
            timer, threshold, rng,
        ),
        crate::victims::aes::AesMode::Private => {
            if primitive != ProbePrimitive::PrimeProbe {
                return Err(RecoveryError::Setup(
                    "private tables are unreachable by shared-memory primitives; use prime_probe"
                        .into(),
                ));
            }
            recover_private(
                hier, mem, victim, victim_core, attacker_pid, attacker_core, cfg, timer,
                threshold, rng,
            )
        }
    }
}

/// True upper nibbles for scoring an estimate against the ground-truth key.
pub fn true_upper_nibbles(key: &[u8; 16]) -> [u8; 16] {
    core::array::from_fn(|i| key[i] >> 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_base_location_handles_runs_wraps_and_noise() {
        let sets = 2048;
        let strong = |r: std::ops::Range<u64>| -> Vec<(u64, f64)> {
            r.map(|s| (s, 1000.0)).collect()
        };
        let run = strong(128..192);
        assert_eq!(locate_table_base(&run, sets), Some(128));
        // Weak scattered actives, even adjacent to the block, do not move
        // the base.
        let mut noisy = run.clone();
        noisy.extend([(127, 40.0), (5, 55.0), (900, 30.0), (1500, 20.0)]);
        assert_eq!(locate_table_base(&noisy, sets), Some(128));
        // Wrapping run.
        let wrap = strong(1984..2048).into_iter().collect::<Vec<_>>();
        assert_eq!(locate_table_base(&wrap, sets), Some(1984));
        // Missing edge sets cannot shift a page-aligned base.
        let mut edge = strong(512..576);
        edge.retain(|&(s, _)| s != 512 && s != 575 && s != 574);
        assert_eq!(locate_table_base(&edge, sets), Some(512));
        // Holes inside the block are tolerated.
        let mut holey = strong(320..384);
        holey.retain(|&(s, _)| s % 7 != 0);
        assert!(holey.len() >= 48);
        assert_eq!(locate_table_base(&holey, sets), Some(320));
        // Too short a run means no block.
        assert_eq!(locate_table_base(&strong(64..96), sets), None);
        assert_eq!(locate_table_base(&[], sets), None);
    }

    #[test]
    fn class_stats_margins() {
        let mut s = ClassStats::new();
        for v in 0..=255u32 {
            let v = v as u8;
            // Class 0x3 always hits, others at 40%.
            let hit = (v >> 4) == 3 || v % 5 < 2;
            s.record(v, hit);
        }
        let (best, margin) = s.decide();
        assert_eq!(best, 3);
        assert!(margin > 0.2 && margin < 1.0);
    }
}
