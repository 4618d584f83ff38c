//! Cache covert channel between two cooperating processes.
//!
//! Each bit of a frame is one address in a shared library, all in pairwise
//! distinct L2 sets. The sender encodes a 1 by touching the address and a 0
//! by staying away; the receiver classifies its own access (or flush) time on
//! each address. Frames carry `n` data bits, an `s`-bit sequence number and a
//! `c`-bit checksum over data and sequence number; the receiver acknowledges
//! valid frames on a second address group with the sequence number and an
//! `x`-bit checksum, and the sender retransmits until acknowledged
//! (stop-and-wait). Sequence numbers deduplicate retransmissions, so the
//! delivered payload is exact whenever the transfer completes.
//!
//! The checksum is the 16-bit CCITT cyclic redundancy function (polynomial
//! 0x1021, initial value 0xFFFF) truncated to the low `c` bits. Acks are
//! validated by exact codeword match; the sparsest ack codeword still has
//! Hamming weight 4, so a silent channel practically never forges one.
//!
//! Classification noise is injected by flipping each classified bit
//! independently with a configurable probability before checksum
//! verification, standing in for timer and scheduler noise.

use std::fmt;

use crate::attacks::{flush_flush, flush_reload, FlushThreshold, ProbeTarget};
use crate::cachesim::{AccessKind, CacheHierarchy};
use crate::eviction::{run_pattern, EvictionSet, EvictionStrategy};
use crate::memspace::PhysicalAddress;
use crate::profile::CacheGeometry;
use crate::rng::SimRng;
use crate::timing::{Classification, Threshold, TimerModel};

/// Bitwise CRC-16/CCITT-FALSE over a bit sequence, most significant bit of
/// each conceptual byte first.
pub fn crc16_ccitt_false(bits: impl IntoIterator<Item = bool>) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for bit in bits {
        let top = (crc >> 15) != 0;
        crc <<= 1;
        if top != bit {
            crc ^= 0x1021;
        }
    }
    crc
}

/// The channel checksum: the CRC truncated to its low `width` bits.
pub fn checksum(bits: &[bool], width: usize) -> u32 {
    assert!((1..=16).contains(&width));
    (crc16_ccitt_false(bits.iter().copied()) as u32) & ((1u32 << width) - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelPrimitive {
    FlushReload,
    EvictReload,
    FlushFlush,
}

impl ChannelPrimitive {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "fr" | "flush_reload" => Some(ChannelPrimitive::FlushReload),
            "er" | "evict_reload" => Some(ChannelPrimitive::EvictReload),
            "ff" | "flush_flush" => Some(ChannelPrimitive::FlushFlush),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelConfig {
    /// Data bits per frame.
    pub data_bits: usize,
    /// Sequence number width.
    pub seq_bits: usize,
    /// Forward checksum width.
    pub checksum_bits: usize,
    /// Ack checksum width.
    pub ack_checksum_bits: usize,
    pub primitive: ChannelPrimitive,
    pub bit_addresses: Vec<PhysicalAddress>,
    pub ack_addresses: Vec<PhysicalAddress>,
    /// Eviction material per bit address and per ack address; required by the
    /// Evict+Reload primitive.
    pub bit_evsets: Vec<EvictionSet>,
    pub ack_evsets: Vec<EvictionSet>,
    pub strategy: Option<EvictionStrategy>,
    /// Retransmissions of one frame before the channel reports a stall.
    pub watchdog_limit: u32,
}

impl ChannelConfig {
    pub fn frame_bits(&self) -> usize {
        self.data_bits + self.seq_bits + self.checksum_bits
    }

    pub fn ack_bits(&self) -> usize {
        self.seq_bits + self.ack_checksum_bits
    }

    /// Default frame shape: 32 data bits, 8 sequence bits, 16-bit forward
    /// checksum, 8-bit ack checksum.
    pub fn with_defaults(
        primitive: ChannelPrimitive,
        bit_addresses: Vec<PhysicalAddress>,
        ack_addresses: Vec<PhysicalAddress>,
    ) -> Self {
        ChannelConfig {
            data_bits: 32,
            seq_bits: 8,
            checksum_bits: 16,
            ack_checksum_bits: 8,
            primitive,
            bit_addresses,
            ack_addresses,
            bit_evsets: Vec::new(),
            ack_evsets: Vec::new(),
            strategy: None,
            watchdog_limit: 64,
        }
    }

    /// Channel setup validation: address counts match the frame shape and no
    /// two addresses share an L2 set.
    pub fn validate(&self, geometry: &CacheGeometry) -> Result<(), ChannelError> {
        if self.bit_addresses.len() != self.frame_bits() {
            return Err(ChannelError::Setup(format!(
                "{} bit addresses for a {}-bit frame",
                self.bit_addresses.len(),
                self.frame_bits()
            )));
        }
        if self.ack_addresses.len() != self.ack_bits() {
            return Err(ChannelError::Setup(format!(
                "{} ack addresses for a {}-bit ack",
                self.ack_addresses.len(),
                self.ack_bits()
            )));
        }
        if self.seq_bits < 1 || self.seq_bits > 16 || self.checksum_bits < 1 || self.checksum_bits > 16
        {
            return Err(ChannelError::Setup("field widths out of range".into()));
        }
        let mut sets: Vec<u64> = self
            .bit_addresses
            .iter()
            .chain(&self.ack_addresses)
            .map(|a| crate::cachesim::set_index(geometry, *a))
            .collect();
        sets.sort_unstable();
        let len = sets.len();
        sets.dedup();
        if sets.len() != len {
            return Err(ChannelError::Setup(
                "channel addresses must map to pairwise distinct cache sets".into(),
            ));
        }
        if self.primitive == ChannelPrimitive::EvictReload
            && (self.strategy.is_none()
                || self.bit_evsets.len() != self.bit_addresses.len()
                || self.ack_evsets.len() != self.ack_addresses.len())
            {
                return Err(ChannelError::Setup(
                    "evict_reload channels need a strategy and per-address eviction sets".into(),
                ));
            }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub data: Vec<bool>,
    pub seq: u32,
    pub checksum: u32,
}

impl Packet {
    pub fn build(data: Vec<bool>, seq: u32, cfg: &ChannelConfig) -> Packet {
        let mut covered = data.clone();
        push_bits(&mut covered, seq, cfg.seq_bits);
        let checksum = checksum(&covered, cfg.checksum_bits);
        Packet { data, seq, checksum }
    }

    fn wire_bits(&self, cfg: &ChannelConfig) -> Vec<bool> {
        let mut bits = self.data.clone();
        push_bits(&mut bits, self.seq, cfg.seq_bits);
        push_bits(&mut bits, self.checksum, cfg.checksum_bits);
        bits
    }
}

fn push_bits(out: &mut Vec<bool>, value: u32, width: usize) {
    for i in (0..width).rev() {
        out.push((value >> i) & 1 != 0);
    }
}

fn read_bits(bits: &[bool]) -> u32 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub payload_bits_delivered: u64,
    pub elapsed_cycles: u64,
    /// Delivered payload bits per million simulated cycles.
    pub raw_bandwidth: f64,
    /// Fraction of forward transmissions discarded by the receiver.
    pub packet_error_rate: f64,
    /// Frames delivered with wrong content, counted against the ground-truth
    /// tap rather than the checksum.
    pub undetected_error_count: u64,
    pub forward_transmissions: u64,
    pub corrupt_forward: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelError {
    Setup(String),
    /// The same frame stayed unacknowledged past the watchdog limit.
    Stalled { seq: u32, retries: u32 },
    Attack(String),
}

impl fmt::Display for ChannelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelError::Setup(m) => write!(f, "channel setup error: {m}"),
            ChannelError::Stalled { seq, retries } => {
                write!(f, "channel stalled: frame {seq} unacknowledged after {retries} tries")
            }
            ChannelError::Attack(m) => write!(f, "channel primitive error: {m}"),
        }
    }
}

impl std::error::Error for ChannelError {}

impl From<crate::attacks::AttackError> for ChannelError {
    fn from(e: crate::attacks::AttackError) -> Self {
        ChannelError::Attack(e.to_string())
    }
}

impl From<crate::cachesim::CacheError> for ChannelError {
    fn from(e: crate::cachesim::CacheError) -> Self {
        ChannelError::Attack(e.to_string())
    }
}

impl From<crate::eviction::EvictionError> for ChannelError {
    fn from(e: crate::eviction::EvictionError) -> Self {
        ChannelError::Attack(e.to_string())
    }
}

/// Everything a live transfer needs besides the config.
pub struct ChannelRuntime {
    pub sender_core: usize,
    pub receiver_core: usize,
    pub timer: TimerModel,
    pub threshold: Threshold,
    pub flush_threshold: Option<FlushThreshold>,
    /// Per-bit flip probability applied to classified bits.
    pub noise: f64,
}

struct Lane<'a> {
    cfg: &'a ChannelConfig,
    rt: &'a ChannelRuntime,
}

impl Lane<'_> {
    /// Writer side: touch the addresses of the 1-bits.
    fn send(
        &self,
        hier: &mut CacheHierarchy,
        core: usize,
        addrs: &[PhysicalAddress],
        bits: &[bool],
    ) -> Result<(), ChannelError> {
        for (addr, &bit) in addrs.iter().zip(bits) {
            if bit {
                hier.access(core, *addr, AccessKind::Data)?;
            }
        }
        Ok(())
    }

    /// Reader side: classify every address, leaving each line uncached for
    /// the next round, and apply the injected noise.
    fn read(
        &self,
        hier: &mut CacheHierarchy,
        core: usize,
        addrs: &[PhysicalAddress],
        evsets: &[EvictionSet],
        timer_rng: &mut SimRng,
        noise_rng: &mut SimRng,
    ) -> Result<Vec<bool>, ChannelError> {
        let mut bits = Vec::with_capacity(addrs.len());
        for (i, addr) in addrs.iter().enumerate() {
            let target = ProbeTarget::from_paddr(*addr);
            let hit = match self.cfg.primitive {
                ChannelPrimitive::FlushReload => {
                    let (class, _) = flush_reload(
                        hier,
                        core,
                        &target,
                        &self.rt.timer,
                        self.rt.threshold,
                        timer_rng,
                    )?;
                    class == Classification::Hit
                }
                ChannelPrimitive::FlushFlush => {
                    let fthr = self
                        .rt
                        .flush_threshold
                        .ok_or_else(|| ChannelError::Setup("flush_flush needs a flush threshold".into()))?;
                    let (class, _) =
                        flush_flush(hier, core, &target, &self.rt.timer, fthr, timer_rng)?;
                    class == Classification::Hit
                }
                ChannelPrimitive::EvictReload => {
                    let strategy = self.cfg.strategy.as_ref().unwrap();
                    let outcome = hier.access(core, *addr, AccessKind::Data)?;
                    let ticks = self.rt.timer.observe(outcome.cycles, timer_rng);
                    run_pattern(hier, core, strategy, &evsets[i])?;
                    self.rt.threshold.classify(ticks) == Classification::Hit
                }
            };
            bits.push(hit != noise_rng.chance(self.rt.noise));
        }
        Ok(bits)
    }

    /// Cooperative hygiene for eviction-based channels: the writer purges its
    /// own cached copies so stale lines cannot read as next-round hits. The
    /// flush primitives clear every copy machine-wide on the reader side, so
    /// they need none of this.
    fn writer_cleanup(
        &self,
        hier: &mut CacheHierarchy,
        core: usize,
        bits: &[bool],
        evsets: &[EvictionSet],
    ) -> Result<(), ChannelError> {
        if self.cfg.primitive != ChannelPrimitive::EvictReload {
            return Ok(());
        }
        let strategy = self.cfg.strategy.as_ref().unwrap();
        for (i, &bit) in bits.iter().enumerate() {
            if bit {
                run_pattern(hier, core, strategy, &evsets[i])?;
            }
        }
        Ok(())
    }
}

/// Ack wire encoding: sequence number followed by the truncated checksum of
/// its bits. Validated by exact match against the expected codeword.
fn ack_bits(seq: u32, cfg: &ChannelConfig) -> Vec<bool> {
    let mut bits = Vec::with_capacity(cfg.ack_bits());
    push_bits(&mut bits, seq, cfg.seq_bits);
    let mut seq_only = Vec::with_capacity(cfg.seq_bits);
    push_bits(&mut seq_only, seq, cfg.seq_bits);
    push_bits(
        &mut bits,
        checksum(&seq_only, cfg.ack_checksum_bits.max(1)),
        cfg.ack_checksum_bits,
    );
    bits
}

/// Transfers `payload` over the channel, retransmitting until every frame is
/// acknowledged. Returns the stats and the receiver-side payload; the two
/// sides run lock-step under a fixed deterministic schedule.
pub fn transmit(
    hier: &mut CacheHierarchy,
    cfg: &ChannelConfig,
    rt: &ChannelRuntime,
    payload: &[u8],
    seed: u64,
) -> Result<(ChannelStats, Vec<u8>), ChannelError> {
    assert!(!payload.is_empty(), "payload must be non-empty");
    let lane = Lane { cfg, rt };
    let mut timer_rng = SimRng::new(seed).derive(0x71);
    let mut noise_rng = SimRng::new(seed).derive(0x72);

    let payload_bits: Vec<bool> = payload
        .iter()
        .flat_map(|byte| (0..8).rev().map(move |i| (byte >> i) & 1 != 0))
        .collect();
    let frames: Vec<Vec<bool>> = payload_bits
        .chunks(cfg.data_bits)
        .map(|chunk| {
            let mut data = chunk.to_vec();
            data.resize(cfg.data_bits, false); // zero padding in the tail frame
            data
        })
        .collect();

    let started = hier.clock();
    let seq_mask = (1u32 << cfg.seq_bits) - 1;
    let mut delivered_bits: Vec<bool> = Vec::with_capacity(payload_bits.len());
    let mut stats = ChannelStats {
        payload_bits_delivered: 0,
        elapsed_cycles: 0,
        raw_bandwidth: 0.0,
        packet_error_rate: 0.0,
        undetected_error_count: 0,
        forward_transmissions: 0,
        corrupt_forward: 0,
    };

    // Receiver protocol state.
    let mut next_expected: u32 = 0;
    let mut last_delivered: Option<u32> = None;

    for (frame_idx, data) in frames.iter().enumerate() {
        let seq = (frame_idx as u32) & seq_mask;
        let packet = Packet::build(data.clone(), seq, cfg);
        let wire = packet.wire_bits(cfg);
        let mut retries = 0u32;
        loop {
            if retries > cfg.watchdog_limit {
                return Err(ChannelError::Stalled { seq, retries });
            }
            stats.forward_transmissions += 1;

            // Sender transmits the frame.
            lane.send(hier, rt.sender_core, &cfg.bit_addresses, &wire)?;

            // Receiver reads and validates.
            let rx = lane.read(
                hier,
                rt.receiver_core,
                &cfg.bit_addresses,
                &cfg.bit_evsets,
                &mut timer_rng,
                &mut noise_rng,
            )?;
            lane.writer_cleanup(hier, rt.sender_core, &wire, &cfg.bit_evsets)?;

            let rx_data = &rx[..cfg.data_bits];
            let rx_seq = read_bits(&rx[cfg.data_bits..cfg.data_bits + cfg.seq_bits]);
            let rx_chk = read_bits(&rx[cfg.data_bits + cfg.seq_bits..]);
            let mut covered = rx_data.to_vec();
            push_bits(&mut covered, rx_seq, cfg.seq_bits);
            let chk_ok = checksum(&covered, cfg.checksum_bits) == rx_chk;

            let mut acked_seq = None;
            if chk_ok {
                if rx_seq == next_expected {
                    // Fresh frame: deliver, whatever the data now says.
                    delivered_bits.extend_from_slice(rx_data);
                    if rx_data != data.as_slice() {
                        stats.undetected_error_count += 1;
                    }
                    last_delivered = Some(rx_seq);
                    next_expected = (next_expected + 1) & seq_mask;
                    acked_seq = Some(rx_seq);
                } else if Some(rx_seq) == last_delivered {
                    // Duplicate of the delivered frame: re-ack, deliver once.
                    acked_seq = Some(rx_seq);
                }
                // Any other sequence number is out of sync; stay silent.
            } else {
                stats.corrupt_forward += 1;
            }

            // Receiver acknowledges on the ack lane; silence otherwise.
            let expected_ack = ack_bits(seq, cfg);
            if let Some(ack_seq) = acked_seq {
                let bits = ack_bits(ack_seq, cfg);
                lane.send(hier, rt.receiver_core, &cfg.ack_addresses, &bits)?;
            }
            let rx_ack = lane.read(
                hier,
                rt.sender_core,
                &cfg.ack_addresses,
                &cfg.ack_evsets,
                &mut timer_rng,
                &mut noise_rng,
            )?;
            if let Some(ack_seq) = acked_seq {
                let bits = ack_bits(ack_seq, cfg);
                lane.writer_cleanup(hier, rt.receiver_core, &bits, &cfg.ack_evsets)?;
            }

            if rx_ack == expected_ack {
                break;
            }
            retries += 1;
        }
    }

    delivered_bits.truncate(payload_bits.len());
    let mut delivered = vec![0u8; payload.len()];
    for (i, &bit) in delivered_bits.iter().enumerate() {
        if bit {
            delivered[i / 8] |= 1 << (7 - i % 8);
        }
    }
    stats.payload_bits_delivered = payload_bits.len() as u64;
    stats.elapsed_cycles = hier.clock() - started;
    stats.raw_bandwidth =
        stats.payload_bits_delivered as f64 / (stats.elapsed_cycles as f64 / 1_000_000.0);
    stats.packet_error_rate = stats.corrupt_forward as f64 / stats.forward_transmissions as f64;
    Ok((stats, delivered))
}

/// Picks `count` line addresses with pairwise distinct L2 sets out of a
/// resolved shared mapping, in offset order.
pub fn distinct_set_lines(
    line_paddrs: &[PhysicalAddress],
    geometry: &CacheGeometry,
    count: usize,
) -> Result<Vec<PhysicalAddress>, ChannelError> {
    let mut used = vec![false; geometry.sets as usize];
    let mut out = Vec::with_capacity(count);
    for &addr in line_paddrs {
        if out.len() == count {
            break;
        }
        let set = crate::cachesim::set_index(geometry, addr) as usize;
        if !used[set] {
            used[set] = true;
            out.push(addr);
        }
    }
    if out.len() < count {
        return Err(ChannelError::Setup(format!(
            "shared object yields only {} distinct-set lines of {count}",
            out.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{calibrate_reload, reload_samples};
    use crate::profile::DeviceProfile;

    #[test]
    fn crc_matches_the_published_check_value() {
        // Reference vector of the CCITT-FALSE parameterization over the
        // ASCII digits "123456789".
        let bits: Vec<bool> = b"123456789"
            .iter()
            .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1 != 0))
            .collect();
        assert_eq!(crc16_ccitt_false(bits), 0x29B1);
        // Frozen from an independent bitwise implementation of the same
        // polynomial: 40 zero bits.
        assert_eq!(crc16_ccitt_false(std::iter::repeat_n(false, 40)), 0x110C);
    }

    #[test]
    fn checksum_truncates_to_width() {
        let mut rng = SimRng::new(1);
        for _ in 0..500 {
            let bits: Vec<bool> = (0..40).map(|_| rng.chance(0.5)).collect();
            for width in 1..=16 {
                assert!(checksum(&bits, width) < (1 << width));
            }
        }
    }

    #[test]
    fn single_bit_flips_are_always_caught_and_random_pairs_usually() {
        let mut rng = SimRng::new(2);
        let mut diff = 0;
        let trials = 10_000;
        for _ in 0..trials {
            let bits: Vec<bool> = (0..40).map(|_| rng.chance(0.5)).collect();
            let mut flipped = bits.clone();
            let i = rng.index(40);
            flipped[i] = !flipped[i];
            // CRC catches every single-bit error outright.
            assert_ne!(checksum(&bits, 16), checksum(&flipped, 16));
            let j = (i + 1 + rng.index(39)) % 40;
            flipped[j] = !flipped[j];
            if checksum(&bits, 16) != checksum(&flipped, 16) {
                diff += 1;
            }
        }
        assert!(diff as f64 / trials as f64 >= 0.99);
    }

    fn s6_channel(noise: f64) -> (CacheHierarchy, ChannelConfig, ChannelRuntime) {
        let profile = DeviceProfile::galaxy_s6();
        let mut hier = CacheHierarchy::new(&profile, 7);
        let geometry = profile.clusters[1].l2.geometry;
        // Line addresses of a simulated shared library region.
        let lines: Vec<PhysicalAddress> = (0..256).map(|i| PhysicalAddress(0x100000 + i * 64)).collect();
        let bit_addresses = distinct_set_lines(&lines, &geometry, 56).unwrap();
        let ack_addresses = distinct_set_lines(&lines[56..], &geometry, 16).unwrap();
        let cfg = ChannelConfig::with_defaults(
            ChannelPrimitive::FlushReload,
            bit_addresses,
            ack_addresses,
        );
        cfg.validate(&geometry).unwrap();
        let timer = TimerModel::cycle_register();
        let mut rng = SimRng::new(3);
        let samples = reload_samples(&mut hier, 5, Some(4), &timer, 3000, &mut rng);
        let threshold = calibrate_reload(&samples).unwrap();
        let rt = ChannelRuntime {
            sender_core: 4,
            receiver_core: 5,
            timer,
            threshold,
            flush_threshold: None,
            noise,
        };
        (hier, cfg, rt)
    }

    #[test]
    fn noiseless_round_trip_is_bit_exact() {
        let (mut hier, cfg, rt) = s6_channel(0.0);
        let payload: Vec<u8> = (0..=255).collect();
        let (stats, delivered) = transmit(&mut hier, &cfg, &rt, &payload, 11).unwrap();
        assert_eq!(delivered, payload);
        assert_eq!(stats.packet_error_rate, 0.0);
        assert_eq!(stats.undetected_error_count, 0);
        assert_eq!(stats.payload_bits_delivered, 2048);
        assert!(stats.raw_bandwidth > 0.0);
    }

    #[test]
    fn noisy_transfers_retransmit_until_exact() {
        let (mut hier, cfg, rt) = s6_channel(0.01);
        let payload: Vec<u8> = (0..512u32).map(|i| (i * 7) as u8).collect();
        let (stats, delivered) = transmit(&mut hier, &cfg, &rt, &payload, 13).unwrap();
        assert_eq!(delivered, payload);
        assert!(stats.corrupt_forward > 0, "1% noise must corrupt some frames");
        assert!(stats.forward_transmissions > (payload.len() * 8 / 32) as u64);
    }

    #[test]
    fn saturating_noise_stalls_the_channel() {
        let (mut hier, mut cfg, rt) = s6_channel(0.5);
        cfg.watchdog_limit = 16;
        let payload = vec![0xAA; 64];
        match transmit(&mut hier, &cfg, &rt, &payload, 17) {
            Err(ChannelError::Stalled { .. }) => {}
            other => panic!("expected stall, got {other:?}"),
        }
    }

    #[test]
    fn bandwidth_is_reproducible_per_seed() {
        let payload: Vec<u8> = (0..256u32).map(|i| (i * 31) as u8).collect();
        let run = |seed: u64| {
            let (mut hier, cfg, rt) = s6_channel(0.01);
            let (stats, _) = transmit(&mut hier, &cfg, &rt, &payload, seed).unwrap();
            (stats.elapsed_cycles, stats.raw_bandwidth.to_bits(), stats.corrupt_forward)
        };
        assert_eq!(run(21), run(21));
        assert_ne!(run(21), run(22));
    }

    #[test]
    fn setup_rejects_set_collisions() {
        let profile = DeviceProfile::galaxy_s6();
        let geometry = profile.clusters[1].l2.geometry;
        let mut addrs: Vec<PhysicalAddress> = (0..56).map(|i| PhysicalAddress(0x100000 + i * 64)).collect();
        // Force two addresses into the same set.
        addrs[1] = PhysicalAddress(addrs[0].0 + geometry.sets * 64);
        let acks: Vec<PhysicalAddress> = (0..16).map(|i| PhysicalAddress(0x200000 + i * 64)).collect();
        let cfg = ChannelConfig::with_defaults(ChannelPrimitive::FlushReload, addrs, acks);
        assert!(matches!(cfg.validate(&geometry), Err(ChannelError::Setup(_))));
    }

    #[test]
    fn evict_reload_channel_works_without_flush() {
        let profile = DeviceProfile::alcatel_pop2();
        let mut hier = CacheHierarchy::new(&profile, 9);
        let geometry = profile.clusters[0].l2.geometry;
        let frame = 56;
        let lines: Vec<PhysicalAddress> = (0..512).map(|i| PhysicalAddress(0x100000 + i * 64)).collect();
        let bit_addresses = distinct_set_lines(&lines, &geometry, frame).unwrap();
        let ack_addresses = distinct_set_lines(&lines[frame..], &geometry, 16).unwrap();
        let strategy = EvictionStrategy::new(21, 1, 6);
        let evset_for = |addr: PhysicalAddress| {
            let set = crate::cachesim::set_index(&geometry, addr);
            EvictionSet {
                target: addr,
                members: crate::eviction::congruent_lines(&geometry, set, 4000, 21),
            }
        };
        let mut cfg = ChannelConfig::with_defaults(
            ChannelPrimitive::EvictReload,
            bit_addresses.clone(),
            ack_addresses.clone(),
        );
        cfg.strategy = Some(strategy);
        cfg.bit_evsets = bit_addresses.iter().map(|a| evset_for(*a)).collect();
        cfg.ack_evsets = ack_addresses.iter().map(|a| evset_for(*a)).collect();
        cfg.validate(&geometry).unwrap();
        let timer = TimerModel::cycle_register();
        let mut rng = SimRng::new(31);
        let samples = reload_samples(&mut hier, 0, Some(1), &timer, 2000, &mut rng);
        let threshold = calibrate_reload(&samples).unwrap();
        let rt = ChannelRuntime {
            sender_core: 1,
            receiver_core: 0,
            timer,
            threshold,
            flush_threshold: None,
            noise: 0.0,
        };
        let payload: Vec<u8> = (0..64u32).map(|i| (i * 13) as u8).collect();
        let (_, delivered) = transmit(&mut hier, &cfg, &rt, &payload, 77).unwrap();
        assert_eq!(delivered, payload);
    }

    #[test]
    fn flush_flush_channel_round_trip() {
        let profile = DeviceProfile::galaxy_s6();
        let mut hier = CacheHierarchy::new(&profile, 10);
        let geometry = profile.clusters[1].l2.geometry;
        let lines: Vec<PhysicalAddress> = (0..256).map(|i| PhysicalAddress(0x300000 + i * 64)).collect();
        let bit_addresses = distinct_set_lines(&lines, &geometry, 56).unwrap();
        let ack_addresses = distinct_set_lines(&lines[56..], &geometry, 16).unwrap();
        let mut cfg = ChannelConfig::with_defaults(
            ChannelPrimitive::FlushFlush,
            bit_addresses,
            ack_addresses,
        );
        cfg.watchdog_limit = 32;
        let timer = TimerModel::cycle_register();
        let mut rng = SimRng::new(41);
        let fsamples = crate::attacks::flush_samples(&mut hier, 5, &timer, 2000, &mut rng).unwrap();
        let fthr = crate::attacks::calibrate_flush(&fsamples).unwrap();
        let rt = ChannelRuntime {
            sender_core: 4,
            receiver_core: 5,
            timer,
            threshold: Threshold { value: 0 },
            flush_threshold: Some(fthr),
            noise: 0.005,
        };
        let payload = b"flush timing carries data".to_vec();
        let (_, delivered) = transmit(&mut hier, &cfg, &rt, &payload, 55).unwrap();
        assert_eq!(delivered, payload);
    }
}
