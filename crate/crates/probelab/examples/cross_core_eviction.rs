//! Cross-core eviction on a non-inclusive hierarchy, using data accesses.
//!
//! The last-level cache only admits data lines through L1 evictions, yet the
//! instruction side is inclusive: filling an L2 set with enough data spills
//! displaces another core's instruction line and back-invalidates it out of
//! that core's L1I. This is the mechanism that makes cross-core attacks work
//! without inclusive data caches.
//!
//! Run with: cargo run --release --example cross_core_eviction

use probelab::cachesim::{AccessKind, CacheHierarchy, CacheLevelId, ServicedBy};
use probelab::eviction::congruent_lines;
use probelab::profile::DeviceProfile;

fn main() {
    let profile = DeviceProfile::alcatel_pop2();
    let geometry = profile.clusters[0].l2.geometry;
    let mut hier = CacheHierarchy::new(&profile, 1);

    // Core 1 fetches an instruction line; inclusive instruction caching puts
    // it in both its L1I and the shared L2.
    let instr = congruent_lines(&geometry, 37, 500, 1)[0];
    hier.access(1, instr, AccessKind::Instruction).unwrap();
    let set = hier.l2_set_index(0, instr);
    println!("victim instruction line {:#x} lives in L2 set {set}", instr.0);

    // Core 0 floods that set with data accesses. Each re-access bounces lines
    // between its L1D and the L2, and every bounce costs the set a random
    // replacement decision.
    let members = congruent_lines(&geometry, set, 0, 21);
    let mut spill_rounds = 0;
    'outer: for round in 1..=100 {
        for window in members.windows(6) {
            for addr in window {
                hier.access(0, *addr, AccessKind::Data).unwrap();
            }
        }
        spill_rounds = round;
        let l1i_set = (instr.0 >> 6) & 127;
        if !hier
            .occupancy_snapshot(CacheLevelId::L1I { core: 1 }, l1i_set)
            .contains(&instr.0)
        {
            break 'outer;
        }
    }
    println!("after {spill_rounds} data rounds the line left core 1's L1I");

    let refetch = hier.access(1, instr, AccessKind::Instruction).unwrap();
    assert_eq!(refetch.serviced_by, ServicedBy::Dram);
    println!(
        "core 1 refetch: serviced by {:?} in {} cycles (a cross-core eviction through data)",
        refetch.serviced_by, refetch.cycles
    );

    // Remote fetches sit between hits and memory, which is what lets a
    // single threshold classify them.
    let data = congruent_lines(&geometry, 99, 700, 1)[0];
    hier.access(2, data, AccessKind::Data).unwrap();
    let remote = hier.access(3, data, AccessKind::Data).unwrap();
    println!(
        "core 3 reading core 2's line: {:?} in {} cycles",
        remote.serviced_by, remote.cycles
    );
}
