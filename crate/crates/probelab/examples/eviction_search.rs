//! Searching the eviction-strategy grid against a random-replacement L2.
//!
//! A strategy (N, A, D) walks an N-address eviction set in D-wide windows
//! shifted by A per round. On a victim-filled L2, re-accessing lines already
//! in the cache generates far more replacement decisions per address than a
//! plain sweep, so small re-access loops beat much larger single-pass ones.
//!
//! Run with: cargo run --release --example eviction_search

use probelab::eviction::{evaluate, search, EvictionStrategy, StrategyGrid};
use probelab::profile::DeviceProfile;

fn main() {
    let profile = DeviceProfile::alcatel_pop2();
    let grid = StrategyGrid::parse("N=16..24,A=1..4,D=1..6").unwrap();
    let trials = 2000;
    println!(
        "evaluating {} strategies x {trials} trials on {}...",
        grid.strategies().len(),
        profile.name
    );
    let results = search(&grid, &profile, trials, 1234);

    println!("top strategies:");
    println!("{:>4} {:>3} {:>3} {:>12} {:>9}", "N", "A", "D", "avg cycles", "rate");
    for (s, r) in results.iter().take(8) {
        println!(
            "{:>4} {:>3} {:>3} {:>12.0} {:>8.2}%",
            s.size,
            s.step,
            s.window,
            r.avg_cycles,
            r.eviction_rate * 100.0
        );
    }

    // Single-pass eviction needs a much larger set for the same rate.
    println!("single-pass sweeps for comparison:");
    for n in [24usize, 48, 80] {
        let r = evaluate(&EvictionStrategy::new(n, 1, 1), &profile, trials, 99);
        println!(
            "  N={n:<3} A=1 D=1: rate {:>6.2}% at {:>6.0} cycles",
            r.eviction_rate * 100.0,
            r.avg_cycles
        );
    }
}
