//! The probing primitives and the monitoring machinery built on them.
//!
//! * Flush+Reload: time a reload of a shared line, then flush it.
//! * Evict+Reload: the same with eviction standing in for the flush.
//! * Prime+Probe: occupy a set with `ways - 1` lines, then re-measure them
//!   in reverse order; the probe pass doubles as the next round's prime.
//! * Flush+Flush: time the flush itself; it runs longer when the line was
//!   cached, so no reload is needed at all.
//!
//! Priming with one way left free is deliberate: the victim's replacement
//! draw then has a way to land in that does not destroy the attacker's
//! lines, at the cost of missing roughly one access in `ways`.

use crate::cachesim::{AccessKind, CacheError, CacheHierarchy, ServicedBy};
use crate::eviction::{run_pattern, EvictionError, EvictionSet, EvictionStrategy};
use crate::memspace::{
    MemError, MemorySystem, PhysicalAddress, ProcessId, VirtualAddress,
};
use crate::profile::CacheGeometry;
use crate::rng::SimRng;
use crate::timing::{calibrate, CalibrationError, Classification, Threshold, TimerModel};
use crate::victims::sched::{Agent, Scheduler, StepOutcome};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbePrimitive {
    FlushReload,
    EvictReload,
    PrimeProbe,
    FlushFlush,
}

impl ProbePrimitive {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "fr" | "flush_reload" => Some(ProbePrimitive::FlushReload),
            "er" | "evict_reload" => Some(ProbePrimitive::EvictReload),
            "pp" | "prime_probe" => Some(ProbePrimitive::PrimeProbe),
            "ff" | "flush_flush" => Some(ProbePrimitive::FlushFlush),
            _ => None,
        }
    }

    pub fn needs_eviction_set(&self) -> bool {
        matches!(self, ProbePrimitive::EvictReload | ProbePrimitive::PrimeProbe)
    }

    pub fn needs_flush(&self) -> bool {
        matches!(self, ProbePrimitive::FlushReload | ProbePrimitive::FlushFlush)
    }
}

impl fmt::Display for ProbePrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ProbePrimitive::FlushReload => "flush_reload",
            ProbePrimitive::EvictReload => "evict_reload",
            ProbePrimitive::PrimeProbe => "prime_probe",
            ProbePrimitive::FlushFlush => "flush_flush",
        };
        write!(f, "{name}")
    }
}

/// One monitored address, resolved to its physical line, with the eviction
/// set the primitive needs when no flush is available.
#[derive(Debug, Clone)]
pub struct ProbeTarget {
    pub pid: ProcessId,
    pub vaddr: VirtualAddress,
    pub paddr: PhysicalAddress,
    pub evset: Option<EvictionSet>,
}

impl ProbeTarget {
    pub fn resolve(mem: &MemorySystem, pid: ProcessId, vaddr: VirtualAddress) -> Result<Self, MemError> {
        Ok(ProbeTarget {
            pid,
            vaddr,
            paddr: mem.translate(pid, vaddr)?,
            evset: None,
        })
    }

    pub fn from_paddr(paddr: PhysicalAddress) -> Self {
        ProbeTarget {
            pid: ProcessId(u32::MAX),
            vaddr: VirtualAddress(0),
            paddr,
            evset: None,
        }
    }

    pub fn with_evset(mut self, evset: EvictionSet) -> Self {
        self.evset = Some(evset);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackError {
    MissingEvictionSet,
    PrimeExceedsWays { prime_lines: usize, ways: usize },
    PoolTooSmall { needed: usize, have: usize },
    Cache(CacheError),
    Eviction(EvictionError),
    Calibration(CalibrationError),
}

impl fmt::Display for AttackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackError::MissingEvictionSet => {
                write!(f, "probe target needs an eviction set for this primitive")
            }
            AttackError::PrimeExceedsWays { prime_lines, ways } => {
                write!(f, "prime of {prime_lines} lines exceeds {ways} ways")
            }
            AttackError::PoolTooSmall { needed, have } => {
                write!(f, "congruent pool too small: need {needed}, have {have}")
            }
            AttackError::Cache(e) => write!(f, "{e}"),
            AttackError::Eviction(e) => write!(f, "{e}"),
            AttackError::Calibration(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AttackError {}

impl From<CacheError> for AttackError {
    fn from(e: CacheError) -> Self {
        AttackError::Cache(e)
    }
}

impl From<EvictionError> for AttackError {
    fn from(e: EvictionError) -> Self {
        AttackError::Eviction(e)
    }
}

impl From<CalibrationError> for AttackError {
    fn from(e: CalibrationError) -> Self {
        AttackError::Calibration(e)
    }
}

/// Reload the target, classify the observed time, then flush the line so the
/// next round starts clean.
pub fn flush_reload(
    hier: &mut CacheHierarchy,
    core: usize,
    target: &ProbeTarget,
    timer: &TimerModel,
    threshold: Threshold,
    rng: &mut SimRng,
) -> Result<(Classification, u64), AttackError> {
    let outcome = hier.access(core, target.paddr, AccessKind::Data)?;
    let ticks = timer.observe(outcome.cycles, rng);
    hier.flush(core, target.paddr)?;
    Ok((threshold.classify(ticks), ticks))
}

/// Reload-and-classify, then displace the line with the eviction pattern.
pub fn evict_reload(
    hier: &mut CacheHierarchy,
    core: usize,
    target: &ProbeTarget,
    strategy: &EvictionStrategy,
    timer: &TimerModel,
    threshold: Threshold,
    rng: &mut SimRng,
) -> Result<(Classification, u64), AttackError> {
    let evset = target.evset.as_ref().ok_or(AttackError::MissingEvictionSet)?;
    let outcome = hier.access(core, target.paddr, AccessKind::Data)?;
    let ticks = timer.observe(outcome.cycles, rng);
    run_pattern(hier, core, strategy, evset)?;
    Ok((threshold.classify(ticks), ticks))
}

/// Threshold over flush latencies. Flush times are higher when the line was
/// cached, so the decision is inverted relative to reload thresholds: at or
/// above the boundary means the victim had touched the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlushThreshold(pub Threshold);

impl FlushThreshold {
    pub fn classify(&self, ticks: u64) -> Classification {
        if ticks >= self.0.value {
            Classification::Hit
        } else {
            Classification::Miss
        }
    }
}

/// Single flush of the target; its latency alone decides.
pub fn flush_flush(
    hier: &mut CacheHierarchy,
    core: usize,
    target: &ProbeTarget,
    timer: &TimerModel,
    threshold: FlushThreshold,
    rng: &mut SimRng,
) -> Result<(Classification, u64), AttackError> {
    let cycles = hier.flush(core, target.paddr)?;
    let ticks = timer.observe(cycles, rng);
    Ok((threshold.classify(ticks), ticks))
}

/// Occupies `prime_lines` ways of one set with the pool's first lines,
/// accessed in forward order. Returns the prime list for the probe step.
pub fn prime(
    hier: &mut CacheHierarchy,
    core: usize,
    pool: &[PhysicalAddress],
    prime_lines: usize,
    ways: usize,
) -> Result<Vec<PhysicalAddress>, AttackError> {
    if prime_lines > ways {
        return Err(AttackError::PrimeExceedsWays { prime_lines, ways });
    }
    if pool.len() < prime_lines {
        return Err(AttackError::PoolTooSmall { needed: prime_lines, have: pool.len() });
    }
    let list = pool[..prime_lines].to_vec();
    for &addr in &list {
        hier.access(core, addr, AccessKind::Data)?;
    }
    Ok(list)
}

/// Walks the prime list backwards, summing observed ticks. Reloading as it
/// measures re-establishes the prime for the next round.
pub fn probe(
    hier: &mut CacheHierarchy,
    core: usize,
    prime_list: &[PhysicalAddress],
    timer: &TimerModel,
    rng: &mut SimRng,
) -> Result<u64, AttackError> {
    let mut score = 0;
    for &addr in prime_list.iter().rev() {
        let outcome = hier.access(core, addr, AccessKind::Data)?;
        score += timer.observe(outcome.cycles, rng);
    }
    Ok(score)
}

/// Probe variant that also reports how many accesses classified as misses.
pub fn probe_counted(
    hier: &mut CacheHierarchy,
    core: usize,
    prime_list: &[PhysicalAddress],
    timer: &TimerModel,
    threshold: Threshold,
    rng: &mut SimRng,
) -> Result<(u64, usize), AttackError> {
    let mut score = 0;
    let mut misses = 0;
    for &addr in prime_list.iter().rev() {
        let outcome = hier.access(core, addr, AccessKind::Data)?;
        let ticks = timer.observe(outcome.cycles, rng);
        score += ticks;
        if threshold.classify(ticks) == Classification::Miss {
            misses += 1;
        }
    }
    Ok((score, misses))
}

/// Repeats forward prime passes until a pass runs entirely out of the cache,
/// i.e. every line is resident at once. Under random replacement the first
/// passes displace each other; the loop reaches the settled occupancy the
/// attack needs after a few rounds. Returns the number of passes, capped at
/// `max_passes`.
pub fn prime_stable(
    hier: &mut CacheHierarchy,
    core: usize,
    prime_list: &[PhysicalAddress],
    timer: &TimerModel,
    threshold: Threshold,
    rng: &mut SimRng,
    max_passes: usize,
) -> Result<usize, AttackError> {
    for pass in 1..=max_passes {
        let mut misses = 0;
        for &addr in prime_list.iter() {
            let outcome = hier.access(core, addr, AccessKind::Data)?;
            let ticks = timer.observe(outcome.cycles, rng);
            if threshold.classify(ticks) == Classification::Miss {
                misses += 1;
            }
        }
        if misses == 0 {
            return Ok(pass);
        }
    }
    Ok(max_passes)
}

/// Total-runtime helper: victim runtime with a warm target versus after the
/// target has been evicted.
pub fn evict_time<F: FnMut(&mut CacheHierarchy)>(
    hier: &mut CacheHierarchy,
    core: usize,
    mut victim: F,
    strategy: &EvictionStrategy,
    evset: &EvictionSet,
) -> Result<(u64, u64), AttackError> {
    let start = hier.clock();
    victim(hier);
    let baseline = hier.clock() - start;
    run_pattern(hier, core, strategy, evset)?;
    let start = hier.clock();
    victim(hier);
    let evicted = hier.clock() - start;
    Ok((baseline, evicted))
}

/// Labelled reload samples straight off the simulator: hits are reloads of
/// cached lines (local, and remote when a helper core is given), misses are
/// first touches of fresh lines. Invalidates the caches first so repeated
/// calibrations stay independent; calibrate before mounting an attack.
pub struct LabeledSamples {
    pub hits: Vec<u64>,
    pub misses: Vec<u64>,
}

const SAMPLE_REGION: u64 = 64 << 20;

pub fn reload_samples(
    hier: &mut CacheHierarchy,
    core: usize,
    helper: Option<usize>,
    timer: &TimerModel,
    samples_per_class: usize,
    rng: &mut SimRng,
) -> LabeledSamples {
    hier.reset_caches();
    let mut hits = Vec::with_capacity(samples_per_class);
    let mut misses = Vec::with_capacity(samples_per_class);
    let line = 64;
    let mut cursor = SAMPLE_REGION;
    let mut fresh = || {
        let a = PhysicalAddress(cursor);
        cursor += line;
        a
    };
    for i in 0..samples_per_class {
        let miss_addr = fresh();
        let outcome = hier.access(core, miss_addr, AccessKind::Data).unwrap();
        debug_assert_eq!(outcome.serviced_by, ServicedBy::Dram);
        misses.push(timer.observe(outcome.cycles, rng));

        let hit_addr = fresh();
        match helper {
            Some(h) if i % 2 == 0 => {
                // Cross-core: the helper loads, this core reads remotely.
                hier.access(h, hit_addr, AccessKind::Data).unwrap();
                let outcome = hier.access(core, hit_addr, AccessKind::Data).unwrap();
                hits.push(timer.observe(outcome.cycles, rng));
            }
            _ => {
                hier.access(core, hit_addr, AccessKind::Data).unwrap();
                let outcome = hier.access(core, hit_addr, AccessKind::Data).unwrap();
                hits.push(timer.observe(outcome.cycles, rng));
            }
        }
    }
    LabeledSamples { hits, misses }
}

/// Labelled flush samples: `cached` are flushes of resident lines, `uncached`
/// flushes of lines never touched.
pub struct FlushSamples {
    pub cached: Vec<u64>,
    pub uncached: Vec<u64>,
}

pub fn flush_samples(
    hier: &mut CacheHierarchy,
    core: usize,
    timer: &TimerModel,
    samples_per_class: usize,
    rng: &mut SimRng,
) -> Result<FlushSamples, AttackError> {
    hier.reset_caches();
    let mut cached = Vec::with_capacity(samples_per_class);
    let mut uncached = Vec::with_capacity(samples_per_class);
    let line = 64;
    let mut cursor = SAMPLE_REGION * 2;
    for _ in 0..samples_per_class {
        let a = PhysicalAddress(cursor);
        cursor += line;
        let cycles = hier.flush(core, a)?;
        uncached.push(timer.observe(cycles, rng));
        hier.access(core, a, AccessKind::Data)?;
        let cycles = hier.flush(core, a)?;
        cached.push(timer.observe(cycles, rng));
    }
    Ok(FlushSamples { cached, uncached })
}

/// Calibrates the reload threshold from labelled samples.
pub fn calibrate_reload(samples: &LabeledSamples) -> Result<Threshold, CalibrationError> {
    calibrate(&samples.hits, &samples.misses)
}

/// Calibrates the flush threshold. Uncached flushes are the cheap class, so
/// they play the role of "hits" for the underlying threshold search.
pub fn calibrate_flush(samples: &FlushSamples) -> Result<FlushThreshold, CalibrationError> {
    calibrate(&samples.uncached, &samples.cached).map(FlushThreshold)
}

/// Attacker-owned congruent lines, bucketed by L2 set.
#[derive(Debug, Clone)]
pub struct SetPools {
    per_set: Vec<Vec<PhysicalAddress>>,
}

impl SetPools {
    /// Buckets every line of a freshly mapped private region by physical set
    /// index, using the pagemap oracle the way a real attacker must.
    pub fn from_new_mapping(
        mem: &mut MemorySystem,
        pid: ProcessId,
        bytes: u64,
        geometry: &CacheGeometry,
    ) -> Result<Self, EvictionError> {
        let mapping = mem.map_private(pid, bytes).map_err(EvictionError::Mem)?;
        let mut per_set = vec![Vec::new(); geometry.sets as usize];
        let mut offset = 0;
        while offset + geometry.line_size <= mapping.length {
            let va = VirtualAddress(mapping.virtual_base.0 + offset);
            let pa = mem.pagemap_query(pid, va).map_err(|e| match e {
                MemError::PagemapDenied => EvictionError::NoPhysicalOracle,
                other => EvictionError::Mem(other),
            })?;
            per_set[crate::cachesim::set_index(geometry, pa) as usize].push(pa);
            offset += geometry.line_size;
        }
        Ok(SetPools { per_set })
    }

    /// Synthetic pools straight from physical addresses; test harnesses only.
    pub fn synthetic(geometry: &CacheGeometry, base_line: u64, lines_per_set: usize) -> Self {
        let per_set = (0..geometry.sets)
            .map(|s| crate::eviction::congruent_lines(geometry, s, base_line, lines_per_set))
            .collect();
        SetPools { per_set }
    }

    pub fn set(&self, set: u64) -> &[PhysicalAddress] {
        &self.per_set[set as usize]
    }

    pub fn min_lines(&self) -> usize {
        self.per_set.iter().map(|v| v.len()).min().unwrap_or(0)
    }
}

/// Monitoring configuration shared by the trace pipelines.
#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub primitive: ProbePrimitive,
    pub timer: TimerModel,
    pub threshold: Threshold,
    pub flush_threshold: Option<FlushThreshold>,
    pub strategy: Option<EvictionStrategy>,
    /// Quiet rounds used to calibrate per-target probe-score thresholds.
    pub quiet_rounds: usize,
    /// Probe scores above quiet mean + sigma * quiet std flag victim activity.
    pub score_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub timestamp: u64,
    pub ticks: u64,
    pub hit: bool,
}

#[derive(Debug, Clone, Default)]
pub struct MonitorTrace {
    pub samples: Vec<TraceSample>,
}

impl MonitorTrace {
    /// Lengths of maximal consecutive-hit runs.
    pub fn hit_run_lengths(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = 0;
        for s in &self.samples {
            if s.hit {
                current += 1;
            } else if current > 0 {
                runs.push(current);
                current = 0;
            }
        }
        if current > 0 {
            runs.push(current);
        }
        runs
    }
}

struct MonitorAgent<'a> {
    core: usize,
    cfg: &'a MonitorConfig,
    targets: &'a [ProbeTarget],
    pp_thresholds: Vec<u64>,
    next: usize,
    pending_yield: bool,
    rng: SimRng,
    traces: Vec<MonitorTrace>,
    error: Option<AttackError>,
}

impl MonitorAgent<'_> {
    fn round(&mut self, hier: &mut CacheHierarchy, idx: usize) -> Result<TraceSample, AttackError> {
        let target = &self.targets[idx];
        let (hit, ticks) = match self.cfg.primitive {
            ProbePrimitive::FlushReload => {
                let (class, ticks) =
                    flush_reload(hier, self.core, target, &self.cfg.timer, self.cfg.threshold, &mut self.rng)?;
                (class == Classification::Hit, ticks)
            }
            ProbePrimitive::EvictReload => {
                let strategy = self.cfg.strategy.as_ref().expect("validated at setup");
                let (class, ticks) = evict_reload(
                    hier,
                    self.core,
                    target,
                    strategy,
                    &self.cfg.timer,
                    self.cfg.threshold,
                    &mut self.rng,
                )?;
                (class == Classification::Hit, ticks)
            }
            ProbePrimitive::FlushFlush => {
                let fthr = self.cfg.flush_threshold.expect("validated at setup");
                let (class, ticks) =
                    flush_flush(hier, self.core, target, &self.cfg.timer, fthr, &mut self.rng)?;
                (class == Classification::Hit, ticks)
            }
            ProbePrimitive::PrimeProbe => {
                let evset = target.evset.as_ref().ok_or(AttackError::MissingEvictionSet)?;
                let score = probe(hier, self.core, &evset.members, &self.cfg.timer, &mut self.rng)?;
                (score > self.pp_thresholds[idx], score)
            }
        };
        Ok(TraceSample { timestamp: hier.clock(), ticks, hit })
    }
}

impl Agent for MonitorAgent<'_> {
    fn step(&mut self, hier: &mut CacheHierarchy) -> StepOutcome {
        if self.error.is_some() {
            return StepOutcome::Done;
        }
        // One sweep over all targets, then yield: the sampling cadence per
        // target follows the scheduling quantum rather than raw probe speed.
        if self.pending_yield {
            self.pending_yield = false;
            return StepOutcome::Idle;
        }
        let idx = self.next;
        self.next = (self.next + 1) % self.targets.len();
        if self.next == 0 {
            self.pending_yield = true;
        }
        match self.round(hier, idx) {
            Ok(sample) => {
                self.traces[idx].samples.push(sample);
                StepOutcome::Ran
            }
            Err(e) => {
                self.error = Some(e);
                StepOutcome::Done
            }
        }
    }
}

/// Round-robins the primitive over the targets while the victim agents run
/// under the deterministic scheduler, recording one classified sample per
/// visit. Prime+Probe target thresholds are calibrated from quiet rounds
/// before the victims start.
#[allow(clippy::too_many_arguments)]
pub fn monitor(
    hier: &mut CacheHierarchy,
    attacker_core: usize,
    targets: &[ProbeTarget],
    cfg: &MonitorConfig,
    victims: &mut [&mut dyn Agent],
    sched: &Scheduler,
    duration: u64,
    rng: &mut SimRng,
) -> Result<Vec<MonitorTrace>, AttackError> {
    assert!(!targets.is_empty(), "monitor needs at least one target");
    if cfg.primitive.needs_eviction_set() {
        for t in targets {
            if t.evset.is_none() {
                return Err(AttackError::MissingEvictionSet);
            }
        }
    }
    if cfg.primitive == ProbePrimitive::EvictReload && cfg.strategy.is_none() {
        return Err(AttackError::MissingEvictionSet);
    }
    if cfg.primitive == ProbePrimitive::FlushFlush && cfg.flush_threshold.is_none() {
        return Err(AttackError::Calibration(CalibrationError::EmptySamples));
    }

    let mut agent = MonitorAgent {
        core: attacker_core,
        cfg,
        targets,
        pp_thresholds: vec![0; targets.len()],
        next: 0,
        pending_yield: false,
        rng: rng.derive(0x33),
        traces: vec![MonitorTrace::default(); targets.len()],
        error: None,
    };

    if cfg.primitive == ProbePrimitive::EvictReload {
        // Warm the eviction sets so the first monitored rounds are not a
        // wall of cold memory fills.
        let strategy = cfg.strategy.as_ref().unwrap();
        for target in targets {
            run_pattern(hier, attacker_core, strategy, target.evset.as_ref().unwrap())?;
        }
    }
    if cfg.primitive == ProbePrimitive::PrimeProbe {
        for (i, target) in targets.iter().enumerate() {
            let evset = target.evset.as_ref().unwrap();
            for &addr in &evset.members {
                hier.access(attacker_core, addr, AccessKind::Data)?;
            }
            // Warm rounds settle the steady state, then quiet rounds set the
            // activity threshold.
            for _ in 0..3 {
                probe(hier, attacker_core, &evset.members, &cfg.timer, &mut agent.rng)?;
            }
            let scores: Vec<u64> = (0..cfg.quiet_rounds.max(2))
                .map(|_| probe(hier, attacker_core, &evset.members, &cfg.timer, &mut agent.rng))
                .collect::<Result<_, _>>()?;
            let mean = scores.iter().sum::<u64>() as f64 / scores.len() as f64;
            let var = scores
                .iter()
                .map(|&s| (s as f64 - mean).powi(2))
                .sum::<f64>()
                / scores.len() as f64;
            agent.pp_thresholds[i] = (mean + cfg.score_sigma * var.sqrt()).ceil() as u64 + 1;
        }
    }

    let mut agents: Vec<&mut dyn Agent> = Vec::with_capacity(victims.len() + 1);
    agents.push(&mut agent);
    for v in victims.iter_mut() {
        agents.push(&mut **v);
    }
    let mut sched_rng = rng.derive(0x34);
    sched.run(hier, &mut agents, &mut sched_rng, duration);
    if let Some(e) = agent.error {
        return Err(e);
    }
    Ok(agent.traces)
}

/// Scans every L2 set of a cluster with Prime+Probe around triggered victim
/// runs, returning the sets whose mean triggered probe score exceeds the
/// quiet mean by more than `sigma` standard errors, sorted by that margin.
/// On victim-filled L2s the probe's own reload traffic keeps the quiet
/// baseline noisy, so the bar scales with the round count.
#[allow(clippy::too_many_arguments)]
pub fn find_active_sets(
    hier: &mut CacheHierarchy,
    attacker_core: usize,
    cluster: usize,
    pools: &SetPools,
    trigger: &mut dyn FnMut(&mut CacheHierarchy),
    rounds: usize,
    prime_lines: usize,
    timer: &TimerModel,
    sigma: f64,
    rng: &mut SimRng,
) -> Result<Vec<(u64, f64)>, AttackError> {
    assert!(rounds >= 2);
    let sets = hier.l2_sets(cluster);
    let ways = prime_lines + 1;
    // Threshold for the settling passes: between the machine's hit and miss
    // latencies as observed through this timer.
    let settle_thr = Threshold {
        value: timer.observe(hier.latency().dram.base / 2, &mut rng.clone()),
    };
    let mut ranked = Vec::new();
    for set in 0..sets {
        let list = prime(hier, attacker_core, pools.set(set), prime_lines, ways)?;
        prime_stable(hier, attacker_core, &list, timer, settle_thr, rng, 24)?;
        let quiet: Vec<u64> = (0..rounds)
            .map(|_| probe(hier, attacker_core, &list, timer, rng))
            .collect::<Result<_, _>>()?;
        let active: Vec<u64> = (0..rounds)
            .map(|_| {
                trigger(hier);
                probe(hier, attacker_core, &list, timer, rng)
            })
            .collect::<Result<_, _>>()?;
        let quiet_mean = quiet.iter().sum::<u64>() as f64 / quiet.len() as f64;
        let quiet_std = (quiet
            .iter()
            .map(|&s| (s as f64 - quiet_mean).powi(2))
            .sum::<f64>()
            / quiet.len() as f64)
            .sqrt();
        let sem = quiet_std / (rounds as f64).sqrt();
        let active_mean = active.iter().sum::<u64>() as f64 / active.len() as f64;
        let margin = active_mean - (quiet_mean + sigma * sem);
        if margin > 0.0 {
            ranked.push((set, margin));
        }
    }
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ranked)
}
