//! Timing sources and hit/miss threshold calibration.
//!
//! Unprivileged attackers cannot read the cycle counter directly, so the
//! toolkit models four measurement methods as transformations of true
//! simulator cycles: the privileged cycle register, a perf-style syscall, a
//! coarse POSIX clock, and a counter thread. Each applies a scale, an
//! overhead, jitter of its own, and quantization. Thresholds are calibrated
//! from labelled samples by exhaustive scan, which is exact at the sample
//! sizes in play.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimerKind {
    CycleRegister,
    PerfSyscall,
    PosixClock,
    CounterThread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimerModel {
    pub kind: TimerKind,
    /// Multiplicative factor from cycles to ticks.
    pub scale: f64,
    /// Quantization step in scaled units; at least 1.
    pub granularity: u64,
    /// Additive cost of taking the measurement, in scaled units.
    pub overhead: u64,
    /// Mean of the timer's own additive jitter, in scaled units.
    pub jitter: f64,
}

impl TimerModel {
    /// Privileged cycle count register: the identity timer.
    pub fn cycle_register() -> Self {
        TimerModel {
            kind: TimerKind::CycleRegister,
            scale: 1.0,
            granularity: 1,
            overhead: 0,
            jitter: 0.0,
        }
    }

    /// Cycle counts read through a kernel interface; accurate plus a small
    /// syscall overhead and mild jitter.
    pub fn perf_syscall() -> Self {
        TimerModel {
            kind: TimerKind::PerfSyscall,
            scale: 1.0,
            granularity: 1,
            overhead: 16,
            jitter: 2.0,
        }
    }

    /// Wall-clock interface with coarse quantization.
    pub fn posix_clock() -> Self {
        TimerModel {
            kind: TimerKind::PosixClock,
            scale: 1.0,
            granularity: 10,
            overhead: 0,
            jitter: 1.0,
        }
    }

    /// A thread incrementing a shared counter: ticks run slower than cycles
    /// and preemption adds noise.
    pub fn counter_thread() -> Self {
        TimerModel {
            kind: TimerKind::CounterThread,
            scale: 0.05,
            granularity: 1,
            overhead: 0,
            jitter: 0.5,
        }
    }

    pub fn preset(kind: TimerKind) -> Self {
        match kind {
            TimerKind::CycleRegister => Self::cycle_register(),
            TimerKind::PerfSyscall => Self::perf_syscall(),
            TimerKind::PosixClock => Self::posix_clock(),
            TimerKind::CounterThread => Self::counter_thread(),
        }
    }

    pub fn all_presets() -> [Self; 4] {
        [
            Self::cycle_register(),
            Self::perf_syscall(),
            Self::posix_clock(),
            Self::counter_thread(),
        ]
    }

    /// CLI spelling of the preset.
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "register" => Some(Self::cycle_register()),
            "syscall" => Some(Self::perf_syscall()),
            "clock" => Some(Self::posix_clock()),
            "counterthread" => Some(Self::counter_thread()),
            _ => None,
        }
    }

    pub fn flag_name(&self) -> &'static str {
        match self.kind {
            TimerKind::CycleRegister => "register",
            TimerKind::PerfSyscall => "syscall",
            TimerKind::PosixClock => "clock",
            TimerKind::CounterThread => "counterthread",
        }
    }

    /// Converts true cycles into observed ticks.
    pub fn observe(&self, true_cycles: u64, rng: &mut SimRng) -> u64 {
        let raw = self.scale * true_cycles as f64 + self.overhead as f64
            + rng.geometric(self.jitter) as f64;
        let ticks = raw.floor() as u64;
        (ticks / self.granularity) * self.granularity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Hit,
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Threshold {
    /// Ticks strictly below the value classify as hits.
    pub value: u64,
}

impl Threshold {
    pub fn classify(&self, ticks: u64) -> Classification {
        if ticks < self.value {
            Classification::Hit
        } else {
            Classification::Miss
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CalibrationError {
    EmptySamples,
    /// Distributions overlap so badly that no threshold misclassifies fewer
    /// than a quarter of the samples.
    Inseparable { best_errors: usize, total: usize },
}

impl fmt::Display for CalibrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibrationError::EmptySamples => write!(f, "calibration needs samples of both classes"),
            CalibrationError::Inseparable { best_errors, total } => write!(
                f,
                "calibration failed: best threshold still misclassifies {best_errors}/{total}"
            ),
        }
    }
}

impl std::error::Error for CalibrationError {}

/// Picks the threshold minimizing total misclassification over the labelled
/// samples; ties break toward the larger value.
pub fn calibrate(hit_samples: &[u64], miss_samples: &[u64]) -> Result<Threshold, CalibrationError> {
    if hit_samples.is_empty() || miss_samples.is_empty() {
        return Err(CalibrationError::EmptySamples);
    }
    let mut candidates: Vec<u64> = hit_samples.iter().chain(miss_samples).copied().collect();
    let max = *candidates.iter().max().unwrap();
    candidates.push(max + 1);
    candidates.sort_unstable();
    candidates.dedup();

    let mut hits_sorted = hit_samples.to_vec();
    let mut misses_sorted = miss_samples.to_vec();
    hits_sorted.sort_unstable();
    misses_sorted.sort_unstable();

    let mut best = Threshold { value: 0 };
    let mut best_errors = usize::MAX;
    for &t in &candidates {
        // Errors: hits at or above t, plus misses strictly below t.
        let hit_errors = hits_sorted.len() - hits_sorted.partition_point(|&x| x < t);
        let miss_errors = misses_sorted.partition_point(|&x| x < t);
        let errors = hit_errors + miss_errors;
        if errors < best_errors || (errors == best_errors && t > best.value) {
            best_errors = errors;
            best = Threshold { value: t };
        }
    }
    let total = hit_samples.len() + miss_samples.len();
    if best_errors * 4 > total {
        return Err(CalibrationError::Inseparable { best_errors, total });
    }
    Ok(best)
}

/// Misclassification fraction of a threshold on fresh labelled samples.
pub fn misclassification(threshold: Threshold, hits: &[u64], misses: &[u64]) -> f64 {
    let errors = hits
        .iter()
        .filter(|&&t| threshold.classify(t) == Classification::Miss)
        .count()
        + misses
            .iter()
            .filter(|&&t| threshold.classify(t) == Classification::Hit)
            .count();
    errors as f64 / (hits.len() + misses.len()) as f64
}

/// Fixed-width histogram of tick samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: u64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_samples(samples: &[u64], bin_width: u64) -> Self {
        assert!(bin_width > 0);
        let mut counts = Vec::new();
        for &s in samples {
            let bin = (s / bin_width) as usize;
            if counts.len() <= bin {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
        Histogram { bin_width, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_timer_reports_cycles_verbatim() {
        let timer = TimerModel::cycle_register();
        let mut rng = SimRng::new(1);
        assert_eq!(timer.observe(40, &mut rng), 40);
        assert_eq!(timer.observe(0, &mut rng), 0);
    }

    #[test]
    fn quantized_timer_outputs_multiples_of_granularity() {
        let timer = TimerModel::posix_clock();
        let mut rng = SimRng::new(2);
        for cycles in [1u64, 7, 19, 40, 523, 1000] {
            assert_eq!(timer.observe(cycles, &mut rng) % timer.granularity, 0);
        }
    }

    #[test]
    fn counter_thread_scales_down_misses() {
        // Mean of observe(520) should sit near 0.05 * 520 = 26 ticks.
        let timer = TimerModel::counter_thread();
        let mut rng = SimRng::new(3);
        let n = 50_000;
        let sum: u64 = (0..n).map(|_| timer.observe(520, &mut rng)).sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - 26.0).abs() < 26.0 * 0.05, "mean {mean}");
    }

    #[test]
    fn observe_is_deterministic_for_a_fixed_stream() {
        let timer = TimerModel::perf_syscall();
        let a: Vec<u64> = {
            let mut rng = SimRng::new(9);
            (0..100).map(|i| timer.observe(i * 7, &mut rng)).collect()
        };
        let b: Vec<u64> = {
            let mut rng = SimRng::new(9);
            (0..100).map(|i| timer.observe(i * 7, &mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn calibrate_splits_disjoint_classes_perfectly() {
        let hits = vec![10u64; 50];
        let misses = vec![100u64; 50];
        let t = calibrate(&hits, &misses).unwrap();
        assert!(t.value > 10 && t.value <= 100);
        assert_eq!(misclassification(t, &hits, &misses), 0.0);
        // Ties break toward the larger candidate, so the boundary sits at the
        // miss mode rather than just above the hits.
        assert_eq!(t.value, 100);
    }

    #[test]
    fn identical_distributions_fail_calibration() {
        let samples = vec![42u64; 100];
        assert!(matches!(
            calibrate(&samples, &samples),
            Err(CalibrationError::Inseparable { .. })
        ));
    }

    #[test]
    fn classify_uses_a_strict_boundary() {
        let t = Threshold { value: 200 };
        assert_eq!(t.classify(199), Classification::Hit);
        assert_eq!(t.classify(200), Classification::Miss);
        assert_eq!(t.classify(1200), Classification::Miss);
    }

    #[test]
    fn histogram_counts_every_sample() {
        let samples = vec![1u64, 5, 9, 10, 11, 99, 100];
        let h = Histogram::from_samples(&samples, 10);
        assert_eq!(h.total(), samples.len() as u64);
        assert_eq!(h.counts[0], 3);
        assert_eq!(h.counts[1], 2);
        assert_eq!(h.counts[10], 1);
    }

    #[test]
    fn preset_parsing_round_trips() {
        for preset in TimerModel::all_presets() {
            assert_eq!(TimerModel::parse(preset.flag_name()), Some(preset.clone()));
        }
        assert_eq!(TimerModel::parse("sundial"), None);
    }
}
