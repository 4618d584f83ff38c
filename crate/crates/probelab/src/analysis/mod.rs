//! Post-processing: template matrices into event streams, probe statistics
//! into key nibbles, and set profiles into secure-world distinguishers.

pub mod key_recovery;
pub mod template;
pub mod tz;

pub use key_recovery::{recover_upper_nibbles, AesAttackConfig, NibbleEstimate};
pub use template::{classify_events, profile_events, ClassifyParams, TemplateMatrix};
pub use tz::{mse_band_fraction, set_profile, SetProfile, TrustletProbeParams};

use std::fmt;

/// Per-line entry coverage of a table block placed `offset` bytes into a
/// cache line, plus the information each covered segment carries.
#[derive(Debug, Clone, PartialEq)]
pub struct DisalignmentReport {
    /// Byte offset of the table base within a line; entry-aligned.
    pub offset: u64,
    /// `(line_index, covered_entries)` for every line the table spans.
    pub segments: Vec<(usize, usize)>,
    /// Expected key bits resolvable per byte from observing which line a
    /// lookup touched: `sum(len/256 * log2(256/len))`.
    pub avg_resolvable_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProfileLengthMismatch {
    pub left: usize,
    pub right: usize,
}

impl fmt::Display for ProfileLengthMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "set profiles of different lengths: {} vs {}", self.left, self.right)
    }
}

impl std::error::Error for ProfileLengthMismatch {}

/// Entry coverage per line for a table of 256 four-byte entries under the
/// given line size and in-line offset. Pure combinatorics; no solver. An
/// aligned table resolves exactly the upper four bits of every looked-up
/// index, 16 candidates per observable line. Any non-zero offset splits off
/// fractional segments at the block edges, which is what sharpens the leak:
/// with every byte of the key enjoying some disaligned boundary, published
/// analyses of this class of attack put the remaining key space near 20 bits
/// on average, and we cite that figure as documentation only.
pub fn disalignment_report(offset: u64, line_size: u64) -> DisalignmentReport {
    assert!(offset < line_size && offset.is_multiple_of(4));
    let entries_per_line = (line_size / 4) as usize;
    let total_entries = 256usize;
    let mut segments = Vec::new();
    let mut covered = 0usize;
    let mut line_index = 0usize;
    while covered < total_entries {
        let len = if covered == 0 && offset > 0 {
            entries_per_line - (offset / 4) as usize
        } else {
            entries_per_line.min(total_entries - covered)
        };
        let len = len.min(total_entries - covered);
        segments.push((line_index, len));
        covered += len;
        line_index += 1;
    }
    let avg_resolvable_bits = segments
        .iter()
        .map(|& (_, len)| {
            let p = len as f64 / total_entries as f64;
            p * (total_entries as f64 / len as f64).log2()
        })
        .sum();
    DisalignmentReport { offset, segments, avg_resolvable_bits }
}

/// Element-wise squared error between two set profiles plus the mean over
/// sets.
pub fn mse_profile(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64), ProfileLengthMismatch> {
    if a.len() != b.len() {
        return Err(ProfileLengthMismatch { left: a.len(), right: b.len() });
    }
    let per_set: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    let mean = per_set.iter().sum::<f64>() / per_set.len().max(1) as f64;
    Ok((per_set, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_tables_give_sixteen_entry_lines() {
        let r = disalignment_report(0, 64);
        assert_eq!(r.segments.len(), 16);
        assert!(r.segments.iter().all(|&(_, len)| len == 16));
        assert!((r.avg_resolvable_bits - 4.0).abs() < 1e-12);
    }

    #[test]
    fn offset_four_splits_fifteen_one() {
        let r = disalignment_report(4, 64);
        assert_eq!(r.segments[0], (0, 15));
        assert_eq!(r.segments.iter().map(|&(_, l)| l).sum::<usize>(), 256);
        assert_eq!(*r.segments.last().unwrap(), (16, 1));
        assert!(r.avg_resolvable_bits > 4.0);
    }

    #[test]
    fn half_line_offset_gives_two_eight_entry_edges() {
        let r = disalignment_report(32, 64);
        assert_eq!(r.segments[0], (0, 8));
        assert_eq!(*r.segments.last().unwrap(), (16, 8));
        let eights = r.segments.iter().filter(|&&(_, l)| l == 8).count();
        assert_eq!(eights, 2);
    }

    #[test]
    fn mse_basics() {
        let a = vec![1.0, 2.0, 3.0];
        let (per, mean) = mse_profile(&a, &a).unwrap();
        assert!(per.iter().all(|&x| x == 0.0));
        assert_eq!(mean, 0.0);
        let mut b = a.clone();
        b[1] += 5.0;
        let (per, mean) = mse_profile(&a, &b).unwrap();
        assert_eq!(per, vec![0.0, 25.0, 0.0]);
        assert!((mean - 25.0 / 3.0).abs() < 1e-12);
        // Symmetry.
        assert_eq!(mse_profile(&b, &a).unwrap().0, per);
        assert!(mse_profile(&a, &b[..2]).is_err());
    }
}
