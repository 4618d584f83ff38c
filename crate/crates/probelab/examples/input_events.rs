//! Cache template attack on user-input events.
//!
//! Profiling phase: trigger each event kind while counting cache hits on
//! every address of the input library; the resulting matrix shows which
//! addresses light up for which events. Exploitation phase: monitor the
//! informative addresses and classify live activity segments against the
//! matrix columns. Tap and swipe share a touch-path address and differ by
//! the length of its hit phase.
//!
//! Run with: cargo run --release --example input_events

use probelab::analysis::template::{classify_events, ClassifyParams};
use probelab::scenario::{EventsRig, EventsScenario};
use probelab::timing::TimerModel;
use probelab::victims::events::EventKind;

fn main() {
    let scenario = EventsScenario::builtin();
    let mut rig = EventsRig::build(&scenario, TimerModel::cycle_register(), 77).unwrap();

    let matrix = rig.template_matrix().unwrap();
    println!("template matrix (addresses with any hits):");
    print!("{:>8}", "offset");
    for e in &matrix.events {
        print!("{e:>11}");
    }
    println!();
    for (r, offset) in matrix.address_offsets.iter().enumerate() {
        if matrix.hits[r].iter().any(|&h| h > 0) {
            print!("{offset:>#8x}");
            for c in 0..matrix.events.len() {
                print!("{:>11}", matrix.hits[r][c]);
            }
            println!();
        }
    }

    // Live phase: replay a mixed script and recover it from the traces.
    let script: Vec<EventKind> = (0..30).map(|i| EventKind::ALL[(i * 3) % 5]).collect();
    let rows = matrix.informative_rows();
    let (traces, truth) = rig.monitor_script(&script, 48, &rows).unwrap();
    let params = ClassifyParams { min_hits: 1, merge_gap: rig.quantum * 16 };
    let events = classify_events(&matrix, &rows, &traces, &params).unwrap();
    let recovered = truth
        .iter()
        .filter(|ev| {
            events.iter().any(|&(t, k)| {
                k == ev.kind && (t as i64 - ev.at as i64).unsigned_abs() < 24 * rig.quantum
            })
        })
        .count();
    println!("recovered {recovered}/{} scripted events by kind and time", truth.len());

    // The tap/swipe discriminator: hit-phase length on the shared address.
    let taps_and_swipes: Vec<EventKind> = (0..20)
        .map(|i| if i % 2 == 0 { EventKind::Tap } else { EventKind::Swipe })
        .collect();
    let (touch_traces, _) = rig.monitor_script(&taps_and_swipes, 48, &[20]).unwrap();
    let runs = touch_traces[0].hit_run_lengths();
    println!("hit-run lengths on the touch-path line: {runs:?}");
    println!("(short bursts are taps, sustained runs are swipes)");
}
