//! Watching secure-world cache activity from the normal world.
//!
//! The trustlet's memory is unmappable, but its cache footprint is not:
//! Prime+Probe around each invocation yields a per-set timing profile, and
//! the squared error between valid-key and invalid-key profiles concentrates
//! in the band of sets the signature loop touches. A secure world that
//! flushes caches at its boundary defeats the bracketing version, so the
//! flush variant probes in parallel with the body instead.
//!
//! Run with: cargo run --release --example trustzone_spy

use probelab::analysis::tz::mse_band_fraction;
use probelab::scenario::{run_trustlet, TrustletScenario};
use probelab::timing::TimerModel;

fn show(label: &str, scenario: &TrustletScenario, seed: u64) {
    let result = run_trustlet(scenario, TimerModel::cycle_register(), seed).unwrap();
    let frac = mse_band_fraction(&result.per_set_error, &result.probed_sets, &result.band);
    // The few loudest sets tell the story.
    let mut ranked: Vec<(usize, f64)> = result
        .per_set_error
        .iter()
        .copied()
        .enumerate()
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    println!("{label}:");
    println!(
        "  {:.1}% of the valid-vs-invalid squared error falls in sets {}..{}",
        frac * 100.0,
        result.band.start,
        result.band.end
    );
    print!("  loudest sets:");
    for (set, _) in ranked.iter().take(8) {
        print!(" {set}");
    }
    println!();
}

fn main() {
    // Device without boundary cache cleaning: prime before the call, probe
    // after it.
    show("bracketed prime+probe", &TrustletScenario::builtin(), 404);

    // Device that flushes all caches entering and leaving the secure world:
    // probing must run in parallel with the trustlet body.
    show(
        "parallel probing against boundary flushes",
        &TrustletScenario::builtin_flush(),
        404,
    );
}
