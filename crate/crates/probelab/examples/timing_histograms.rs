//! Reload and flush latency histograms under the four timing sources.
//!
//! Cache hits and misses must stay separable through every measurement
//! method an unprivileged attacker has; this prints the observed
//! distributions and the calibrated threshold for each timer preset.
//!
//! Run with: cargo run --release --example timing_histograms

use probelab::attacks::{calibrate_reload, flush_samples, reload_samples};
use probelab::cachesim::CacheHierarchy;
use probelab::profile::DeviceProfile;
use probelab::rng::SimRng;
use probelab::timing::{misclassification, Histogram, TimerModel};

fn sketch(label: &str, h: &Histogram) {
    let max = h.counts.iter().copied().max().unwrap_or(1).max(1);
    print!("  {label:>14}: ");
    for &c in h.counts.iter().take(40) {
        let shade = [" ", ".", ":", "#"][((c * 3 / max) as usize).min(3)];
        print!("{shade}");
    }
    println!();
}

fn main() {
    let profile = DeviceProfile::galaxy_s6();
    for timer in TimerModel::all_presets() {
        let mut hier = CacheHierarchy::new(&profile, 42);
        let mut rng = SimRng::new(7);
        let samples = reload_samples(&mut hier, 0, Some(1), &timer, 10_000, &mut rng);
        let threshold = calibrate_reload(&samples).expect("separable");
        let fresh = reload_samples(&mut hier, 0, Some(1), &timer, 10_000, &mut rng);
        let err = misclassification(threshold, &fresh.hits, &fresh.misses);
        println!(
            "timer {:<14} threshold {:>4} ticks, misclassification {:.4}%",
            timer.flag_name(),
            threshold.value,
            err * 100.0
        );
        let bin = (threshold.value / 16).max(1);
        sketch("hits", &Histogram::from_samples(&samples.hits, bin));
        sketch("misses", &Histogram::from_samples(&samples.misses, bin));
    }

    // Flush latency also leaks residency: cached lines take longer to purge.
    let mut hier = CacheHierarchy::new(&profile, 43);
    let mut rng = SimRng::new(9);
    let timer = TimerModel::cycle_register();
    let fs = flush_samples(&mut hier, 0, &timer, 10_000, &mut rng).unwrap();
    let fthr = probelab::attacks::calibrate_flush(&fs).unwrap();
    println!("flush threshold {} ticks (cached above, uncached below)", fthr.0.value);
    sketch("flush cached", &Histogram::from_samples(&fs.cached, 8));
    sketch("flush uncached", &Histogram::from_samples(&fs.uncached, 8));
}
