//! A cross-core covert channel over shared-library cache lines.
//!
//! Sender and receiver never exchange a byte through the OS: each frame bit
//! is one shared address in its own cache set, accessed for 1 and left alone
//! for 0, read back through reload timing. Frames carry a sequence number
//! and checksum; acknowledgements and retransmission make delivery exact
//! even under injected classification noise.
//!
//! Run with: cargo run --release --example covert_channel

use probelab::covert::{transmit, ChannelPrimitive};
use probelab::profile::DeviceProfile;
use probelab::scenario::setup_covert;
use probelab::timing::TimerModel;

fn main() {
    let profile = DeviceProfile::galaxy_s6();
    let message = b"the cache is a bus if you squint hard enough".repeat(40);
    for (label, noise) in [("noiseless", 0.0), ("1% bit-flip noise", 0.01)] {
        let mut setup = setup_covert(
            &profile,
            ChannelPrimitive::FlushReload,
            noise,
            TimerModel::cycle_register(),
            2024,
        )
        .unwrap();
        let (stats, delivered) =
            transmit(&mut setup.hier, &setup.cfg, &setup.rt, &message, 7).unwrap();
        assert_eq!(delivered, message, "retransmission makes delivery exact");
        println!(
            "{label}: {} bits in {} cycles = {:.0} bits/Mcycle, frame error rate {:.2}%, {} undetected",
            stats.payload_bits_delivered,
            stats.elapsed_cycles,
            stats.raw_bandwidth,
            stats.packet_error_rate * 100.0,
            stats.undetected_error_count,
        );
    }

    // The same protocol runs without a flush instruction, replacing it with
    // eviction on both ends; slower, as the real devices are.
    let alto = DeviceProfile::alcatel_pop2();
    let mut setup = setup_covert(
        &alto,
        ChannelPrimitive::EvictReload,
        0.0,
        TimerModel::cycle_register(),
        2025,
    )
    .unwrap();
    let short = &message[..128];
    let (stats, delivered) = transmit(&mut setup.hier, &setup.cfg, &setup.rt, short, 7).unwrap();
    assert_eq!(delivered, short);
    println!(
        "evict_reload on {}: {:.0} bits/Mcycle (eviction in place of the flush)",
        alto.name, stats.raw_bandwidth
    );
}
