//! Table-based AES-128 victim.
//!
//! The classical layout: four 1 KB lookup tables of 256 four-byte entries,
//! contiguous in the victim's address space. Every table lookup of the round
//! transformation issues one simulated data access at
//! `table_base + disalignment + 4 * index`, so with 64-byte lines one line
//! covers 16 entries and a monitored line resolves the upper four bits of a
//! looked-up index. First-round indices are `state = plaintext ^ key`, which
//! is the relation the key-recovery analysis inverts.
//!
//! In shared mode the tables live in a shared object, reachable by
//! Flush+Reload or Evict+Reload. In private mode they are copied to the
//! victim's own memory at startup, forcing Prime+Probe. The copy lands on a
//! fresh entry-aligned line offset each restart, so table alignment varies
//! across runs the way freshly initialized crypto libraries behave.
//!
//! The victim advances a bounded number of lookups per scheduler quantum,
//! modeling the interpreter-class work a managed-runtime implementation does
//! between memory touches. That pacing is what gives a synchronized attacker
//! sub-encryption probe resolution.

use crate::cachesim::{AccessKind, CacheHierarchy};
use crate::memspace::{MemorySystem, PhysicalAddress, ProcessId, VirtualAddress};
use crate::rng::SimRng;

pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

fn xtime(x: u8) -> u8 {
    (x << 1) ^ (((x >> 7) & 1) * 0x1b)
}

/// Encryption tables in the usual packing: `T0[x] = [2s, s, s, 3s]` with `s =
/// SBOX[x]`, and `T1..T3` byte-rotated copies.
fn build_tables() -> [[u32; 256]; 4] {
    let mut t = [[0u32; 256]; 4];
    for x in 0..256 {
        let s = SBOX[x];
        let s2 = xtime(s);
        let s3 = s2 ^ s;
        let w = u32::from_be_bytes([s2, s, s, s3]);
        t[0][x] = w;
        t[1][x] = w.rotate_right(8);
        t[2][x] = w.rotate_right(16);
        t[3][x] = w.rotate_right(24);
    }
    t
}

fn expand_key(key: &[u8; 16]) -> [u32; 44] {
    const RCON: [u32; 10] = [
        0x0100_0000, 0x0200_0000, 0x0400_0000, 0x0800_0000, 0x1000_0000, 0x2000_0000, 0x4000_0000,
        0x8000_0000, 0x1b00_0000, 0x3600_0000,
    ];
    let mut rk = [0u32; 44];
    for i in 0..4 {
        rk[i] = u32::from_be_bytes([key[4 * i], key[4 * i + 1], key[4 * i + 2], key[4 * i + 3]]);
    }
    for i in 4..44 {
        let mut temp = rk[i - 1];
        if i % 4 == 0 {
            let rotated = temp.rotate_left(8);
            let b = rotated.to_be_bytes();
            temp = u32::from_be_bytes([SBOX[b[0] as usize], SBOX[b[1] as usize], SBOX[b[2] as usize], SBOX[b[3] as usize]])
                ^ RCON[i / 4 - 1];
        }
        rk[i] = rk[i - 4] ^ temp;
    }
    rk
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AesMode {
    /// Tables inside a shared object, reachable by shared-memory attacks.
    Shared,
    /// Tables copied into private memory at initialization.
    Private,
}

/// One table lookup: which table and which index.
pub type Lookup = (usize, u8);

#[derive(Debug, Clone)]
pub struct TTableAes {
    tables: [[u32; 256]; 4],
    round_keys: [u32; 44],
    key: [u8; 16],
    pub mode: AesMode,
    /// Byte offset of the table block within a cache line; entry-aligned.
    pub disalignment: u64,
    /// Physical address of each table entry: `entry_paddrs[t * 256 + i]`.
    entry_paddrs: Vec<PhysicalAddress>,
    /// Table lookups the victim advances per scheduler quantum.
    pub lookups_per_quantum: usize,
}

pub const AES_SHARED_OBJECT: &str = "libcrypto-tables";

impl TTableAes {
    /// Places the tables and expands the key. Pass `disalignment: None` for a
    /// placement drawn from the victim's startup randomness (entry-aligned,
    /// so offset 0 occurs with probability 1/16).
    pub fn new(
        mem: &mut MemorySystem,
        pid: ProcessId,
        key: [u8; 16],
        mode: AesMode,
        disalignment: Option<u64>,
        placement_rng: &mut SimRng,
    ) -> Self {
        let disalignment = match disalignment {
            Some(d) => {
                assert!(d < 64 && d % 4 == 0, "disalignment must be entry-aligned within a line");
                d
            }
            None => 4 * placement_rng.below(16),
        };
        // Two pages hold the 4 KB block at any in-line offset.
        let mapping = match mode {
            AesMode::Shared => mem.map_shared(pid, AES_SHARED_OBJECT, 2 * 4096).unwrap(),
            AesMode::Private => mem.map_private(pid, 2 * 4096).unwrap(),
        };
        let entry_paddrs = (0..1024u64)
            .map(|e| {
                mem.translate(pid, VirtualAddress(mapping.virtual_base.0 + disalignment + 4 * e))
                    .expect("table entry translates")
            })
            .collect();
        TTableAes {
            tables: build_tables(),
            round_keys: expand_key(&key),
            key,
            mode,
            disalignment,
            entry_paddrs,
            lookups_per_quantum: 20,
        }
    }

    pub fn key(&self) -> &[u8; 16] {
        &self.key
    }

    /// Physical address of the first line of table `t` (the line holding its
    /// low-index entries).
    pub fn table_line(&self, t: usize) -> PhysicalAddress {
        self.entry_paddrs[t * 256]
    }

    /// The table consulted for state byte `i` in the first round.
    pub fn table_of_byte(i: usize) -> usize {
        i % 4
    }

    /// Pure computation of the ciphertext plus the full lookup sequence, in
    /// execution order. 16 lookups per round, ten rounds.
    pub fn encrypt_with_trace(&self, plaintext: &[u8; 16]) -> ([u8; 16], Vec<Lookup>) {
        let t = &self.tables;
        let rk = &self.round_keys;
        let mut trace = Vec::with_capacity(160);
        let mut s = [0u32; 4];
        for i in 0..4 {
            s[i] = u32::from_be_bytes([
                plaintext[4 * i],
                plaintext[4 * i + 1],
                plaintext[4 * i + 2],
                plaintext[4 * i + 3],
            ]) ^ rk[i];
        }
        for round in 1..10 {
            let mut next = [0u32; 4];
            for col in 0..4 {
                let b0 = (s[col] >> 24) as u8;
                let b1 = (s[(col + 1) % 4] >> 16) as u8;
                let b2 = (s[(col + 2) % 4] >> 8) as u8;
                let b3 = s[(col + 3) % 4] as u8;
                trace.push((0, b0));
                trace.push((1, b1));
                trace.push((2, b2));
                trace.push((3, b3));
                next[col] = t[0][b0 as usize]
                    ^ t[1][b1 as usize]
                    ^ t[2][b2 as usize]
                    ^ t[3][b3 as usize]
                    ^ rk[4 * round + col];
            }
            s = next;
        }
        // Final round: byte extractions from the same tables.
        let mut out = [0u32; 4];
        for col in 0..4 {
            let b0 = (s[col] >> 24) as u8;
            let b1 = (s[(col + 1) % 4] >> 16) as u8;
            let b2 = (s[(col + 2) % 4] >> 8) as u8;
            let b3 = s[(col + 3) % 4] as u8;
            trace.push((2, b0));
            trace.push((3, b1));
            trace.push((0, b2));
            trace.push((1, b3));
            out[col] = (t[2][b0 as usize] & 0xff00_0000)
                ^ (t[3][b1 as usize] & 0x00ff_0000)
                ^ (t[0][b2 as usize] & 0x0000_ff00)
                ^ (t[1][b3 as usize] & 0x0000_00ff)
                ^ rk[40 + col];
        }
        let mut ct = [0u8; 16];
        for i in 0..4 {
            ct[4 * i..4 * i + 4].copy_from_slice(&out[i].to_be_bytes());
        }
        (ct, trace)
    }

    pub fn lookup_paddr(&self, lookup: Lookup) -> PhysicalAddress {
        self.entry_paddrs[lookup.0 * 256 + lookup.1 as usize]
    }

    /// Runs one encryption on the simulator, issuing every table lookup as a
    /// data access on `core`.
    pub fn encrypt(
        &self,
        hier: &mut CacheHierarchy,
        core: usize,
        plaintext: &[u8; 16],
    ) -> [u8; 16] {
        let (ct, trace) = self.encrypt_with_trace(plaintext);
        for lookup in trace {
            hier.access(core, self.lookup_paddr(lookup), AccessKind::Data)
                .unwrap();
        }
        ct
    }
}
