//! Eviction sets and parameterized eviction strategies.
//!
//! Without a flush instruction, displacing a victim line means filling its
//! cache set with congruent addresses. Against a random-replacement L2 the
//! access pattern matters as much as the set size, so strategies are expressed
//! as a loop shape `(N, A, D)`: over an eviction set of `N` addresses, advance
//! the window start by `A` per round and touch `D` consecutive addresses per
//! round. Single-pass eviction is the special case `A=1, D=1`; re-access
//! patterns (`D > 1`) keep bouncing lines between L1 and L2, and every bounce
//! costs the L2 another replacement decision, which is what makes them evict
//! reliably at much smaller sizes.
//!
//! `evaluate` measures a strategy the way the experiments do: many
//! independent trials against a randomized full set, residency checked with
//! the simulator's occupancy oracle so that strategy quality is not entangled
//! with timer noise.

use std::fmt;
use std::ops::RangeInclusive;

use crate::cachesim::{set_index, AccessKind, CacheHierarchy};
use crate::memspace::{MemError, MemorySystem, PhysicalAddress, ProcessId, VirtualAddress};
use crate::profile::{CacheGeometry, DeviceProfile};
use crate::rng::{derive_seed, SimRng};

/// Loop parameters of an eviction pattern. CSV and CLI surfaces name the
/// fields N, A and D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EvictionStrategy {
    /// Total eviction set size (loop length), N.
    pub size: usize,
    /// Window shift per round (loop increment), A.
    pub step: usize,
    /// Accesses per round (loop body), D.
    pub window: usize,
}

impl EvictionStrategy {
    pub fn new(size: usize, step: usize, window: usize) -> Self {
        let s = EvictionStrategy { size, step, window };
        assert!(s.is_valid(), "invalid strategy {s}");
        s
    }

    pub fn is_valid(&self) -> bool {
        self.window >= 1 && self.window <= self.size && self.step >= 1 && self.step <= self.size
    }

    /// The member indices the pattern touches, in order:
    /// for i in 0..=N-D step A, for j in 0..D: member[i + j].
    pub fn access_trace(&self) -> Vec<usize> {
        let mut trace = Vec::new();
        let mut i = 0;
        while i + self.window <= self.size {
            for j in 0..self.window {
                trace.push(i + j);
            }
            i += self.step;
        }
        trace
    }
}

impl EvictionStrategy {
    /// A strategy reaching at least 99% eviction on the cluster's L2 at the
    /// smallest practical cost. Victim-filled L2s profit from re-access
    /// loops: lines bounce between L1 and L2 and every bounce costs a fresh
    /// replacement decision. Inclusive L2s keep hits resident, so re-access
    /// adds nothing there and only the sweep size matters.
    pub fn default_for(cluster: &crate::profile::ClusterSpec) -> EvictionStrategy {
        use crate::profile::InclusionMode;
        let ways = cluster.l2.geometry.ways;
        match cluster.inclusion_data {
            InclusionMode::NonInclusiveVictim if cluster.l1d.is_some() => {
                EvictionStrategy::new(ways + 5, 1, 6)
            }
            _ => {
                let w = ways as f64;
                let n = (0.01f64.ln() / ((w - 1.0) / w).ln()).ceil() as usize;
                EvictionStrategy::new(n + n / 8, 1, 1)
            }
        }
    }
}

impl fmt::Display for EvictionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(N={}, A={}, D={})", self.size, self.step, self.window)
    }
}

/// Physically congruent addresses used to displace `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvictionSet {
    pub target: PhysicalAddress,
    pub members: Vec<PhysicalAddress>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvictionError {
    /// The pagemap oracle is denied; congruence cannot be computed.
    NoPhysicalOracle,
    /// Not enough congruent addresses in the pool.
    PoolExhausted { needed: usize, found: usize },
    /// The eviction set is smaller than the strategy's loop length.
    SetTooSmall { needed: usize, have: usize },
    Mem(MemError),
    Cache(crate::cachesim::CacheError),
}

impl fmt::Display for EvictionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvictionError::NoPhysicalOracle => write!(f, "no physical oracle"),
            EvictionError::PoolExhausted { needed, found } => {
                write!(f, "pool exhausted: needed {needed} congruent addresses, found {found}")
            }
            EvictionError::SetTooSmall { needed, have } => {
                write!(f, "eviction set too small: strategy needs {needed}, have {have}")
            }
            EvictionError::Mem(e) => write!(f, "{e}"),
            EvictionError::Cache(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EvictionError {}

impl From<crate::cachesim::CacheError> for EvictionError {
    fn from(e: crate::cachesim::CacheError) -> Self {
        EvictionError::Cache(e)
    }
}

/// Builds an eviction set for `target` from candidate virtual addresses,
/// resolving physical congruence through the pagemap oracle. Candidates are
/// taken in pool order; lines must be distinct and distinct from the target.
pub fn build_eviction_set(
    mem: &MemorySystem,
    pid: ProcessId,
    target: VirtualAddress,
    pool: &[VirtualAddress],
    size: usize,
    geometry: &CacheGeometry,
) -> Result<EvictionSet, EvictionError> {
    let resolve = |va: VirtualAddress| {
        mem.pagemap_query(pid, va).map_err(|e| match e {
            MemError::PagemapDenied => EvictionError::NoPhysicalOracle,
            other => EvictionError::Mem(other),
        })
    };
    let target_pa = resolve(target)?;
    let target_set = set_index(geometry, target_pa);
    let target_line = target_pa.0 / geometry.line_size;
    let mut members = Vec::with_capacity(size);
    let mut seen_lines = Vec::with_capacity(size);
    for &va in pool {
        if members.len() == size {
            break;
        }
        let pa = resolve(va)?;
        let line = pa.0 / geometry.line_size;
        if set_index(geometry, pa) == target_set && line != target_line && !seen_lines.contains(&line)
        {
            seen_lines.push(line);
            members.push(pa);
        }
    }
    if members.len() < size {
        return Err(EvictionError::PoolExhausted {
            needed: size,
            found: members.len(),
        });
    }
    Ok(EvictionSet {
        target: target_pa,
        members,
    })
}

/// Runs the eviction loop with data accesses on `core`, returning the summed
/// simulated cycles.
pub fn run_pattern(
    hier: &mut CacheHierarchy,
    core: usize,
    strategy: &EvictionStrategy,
    evset: &EvictionSet,
) -> Result<u64, EvictionError> {
    if evset.members.len() < strategy.size {
        return Err(EvictionError::SetTooSmall {
            needed: strategy.size,
            have: evset.members.len(),
        });
    }
    let mut cycles = 0;
    let mut i = 0;
    while i + strategy.window <= strategy.size {
        for j in 0..strategy.window {
            cycles += hier.access(core, evset.members[i + j], AccessKind::Data)?.cycles;
        }
        i += strategy.step;
    }
    Ok(cycles)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub avg_cycles: f64,
    pub eviction_rate: f64,
}

/// Distinct congruent line addresses for an L2 set, `count` of them starting
/// at the `first`-th congruent line. Purely physical; used by harnesses that
/// work below the virtual memory layer.
pub fn congruent_lines(geometry: &CacheGeometry, set: u64, first: u64, count: usize) -> Vec<PhysicalAddress> {
    (0..count as u64)
        .map(|k| PhysicalAddress(((first + k) * geometry.sets + set) * geometry.line_size))
        .collect()
}

/// Measures a strategy on a profile: per trial the targeted set is filled
/// with random congruent lines, the target is loaded, the pattern runs, and
/// the occupancy oracle decides whether the target survived anywhere in the
/// hierarchy.
pub fn evaluate(
    strategy: &EvictionStrategy,
    profile: &DeviceProfile,
    trials: u64,
    seed: u64,
) -> EvalResult {
    assert!(trials >= 1);
    assert!(strategy.is_valid());
    let geometry = profile.clusters[0].l2.geometry;
    let mut hier = CacheHierarchy::new(profile, derive_seed(seed, 0xe71c));
    let mut rng = SimRng::new(derive_seed(seed, 0xf111));
    let set = 13 % geometry.sets;
    let members = congruent_lines(&geometry, set, 0, strategy.size);
    let filler_pool = congruent_lines(&geometry, set, strategy.size as u64, 4 * geometry.ways);
    let target = congruent_lines(&geometry, set, strategy.size as u64 + 4 * geometry.ways as u64, 1)[0];
    let evset = EvictionSet {
        target,
        members,
    };
    let mut evicted_count = 0u64;
    let mut total_cycles = 0u64;
    for _ in 0..trials {
        hier.reset_caches();
        // Deterministic full fill, then random re-draws to decorrelate the
        // replacement state between trials.
        for &f in filler_pool.iter().take(geometry.ways) {
            hier.access(0, f, AccessKind::Data).unwrap();
        }
        for _ in 0..geometry.ways {
            let f = filler_pool[rng.index(filler_pool.len())];
            hier.access(0, f, AccessKind::Data).unwrap();
        }
        hier.access(0, target, AccessKind::Data).unwrap();
        total_cycles += run_pattern(&mut hier, 0, strategy, &evset).unwrap();
        if !hier.is_cached_anywhere(target) {
            evicted_count += 1;
        }
    }
    EvalResult {
        avg_cycles: total_cycles as f64 / trials as f64,
        eviction_rate: evicted_count as f64 / trials as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyGrid {
    pub size: RangeInclusive<usize>,
    pub step: RangeInclusive<usize>,
    pub window: RangeInclusive<usize>,
}

impl StrategyGrid {
    /// All valid strategies of the grid in canonical (N, A, D) order.
    pub fn strategies(&self) -> Vec<EvictionStrategy> {
        let mut out = Vec::new();
        for size in self.size.clone() {
            for step in self.step.clone() {
                for window in self.window.clone() {
                    let s = EvictionStrategy { size, step, window };
                    if s.is_valid() {
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    /// Parses the CLI spelling `N=16..24,A=1..4,D=1..6` (inclusive bounds).
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut size = None;
        let mut step = None;
        let mut window = None;
        for part in text.split(',') {
            let (key, range) = part
                .split_once('=')
                .ok_or_else(|| format!("bad grid component `{part}`"))?;
            let (lo, hi) = range
                .split_once("..")
                .ok_or_else(|| format!("bad range `{range}`, expected lo..hi"))?;
            let lo: usize = lo.trim().parse().map_err(|_| format!("bad bound `{lo}`"))?;
            let hi: usize = hi.trim().parse().map_err(|_| format!("bad bound `{hi}`"))?;
            if lo > hi || lo == 0 {
                return Err(format!("empty or zero range `{range}`"));
            }
            match key.trim() {
                "N" => size = Some(lo..=hi),
                "A" => step = Some(lo..=hi),
                "D" => window = Some(lo..=hi),
                other => return Err(format!("unknown grid key `{other}`")),
            }
        }
        Ok(StrategyGrid {
            size: size.ok_or("grid missing N")?,
            step: step.ok_or("grid missing A")?,
            window: window.ok_or("grid missing D")?,
        })
    }
}

/// Ranking used by `search`: eviction rate descending, then average cycles
/// ascending, then (N, A, D) for a stable canonical order.
pub fn rank_results(results: &mut [(EvictionStrategy, EvalResult)]) {
    results.sort_by(|(sa, ra), (sb, rb)| {
        rb.eviction_rate
            .partial_cmp(&ra.eviction_rate)
            .unwrap()
            .then(ra.avg_cycles.partial_cmp(&rb.avg_cycles).unwrap())
            .then((sa.size, sa.step, sa.window).cmp(&(sb.size, sb.step, sb.window)))
    });
}

/// Evaluates every grid point and returns them ranked. Trials fan out over
/// worker threads; each strategy owns a derived seed, so the result does not
/// depend on the worker count.
pub fn search(
    grid: &StrategyGrid,
    profile: &DeviceProfile,
    trials: u64,
    seed: u64,
) -> Vec<(EvictionStrategy, EvalResult)> {
    let strategies = grid.strategies();
    assert!(!strategies.is_empty(), "empty strategy grid");
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(strategies.len());
    let mut results: Vec<(EvictionStrategy, EvalResult)> = Vec::with_capacity(strategies.len());
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in strategies.chunks(strategies.len().div_ceil(workers)) {
            handles.push(scope.spawn(move || {
                chunk
                    .iter()
                    .map(|s| {
                        let s_seed = derive_seed(
                            seed,
                            (s.size as u64) << 32 | (s.step as u64) << 16 | s.window as u64,
                        );
                        (*s, evaluate(s, profile, trials, s_seed))
                    })
                    .collect::<Vec<_>>()
            }));
        }
        for h in handles {
            results.extend(h.join().expect("search worker panicked"));
        }
    });
    rank_results(&mut results);
    results
}
