//! Stable CSV output for the experiment pipelines.
//!
//! Every emitter writes a pinned header and formats floats with six decimal
//! places, so identical runs produce byte-identical files.

use crate::analysis::key_recovery::NibbleEstimate;
use crate::analysis::template::TemplateMatrix;
use crate::attacks::MonitorTrace;
use crate::covert::ChannelStats;
use crate::eviction::{EvalResult, EvictionStrategy};
use crate::timing::Histogram;

fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub const EVICT_HEADER: &str = "N,A,D,avg_cycles,eviction_rate";

pub fn evict_csv(results: &[(EvictionStrategy, EvalResult)]) -> String {
    let mut out = String::from(EVICT_HEADER);
    out.push('\n');
    for (s, r) in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.size,
            s.step,
            s.window,
            f(r.avg_cycles),
            f(r.eviction_rate)
        ));
    }
    out
}

pub const TRACE_HEADER: &str = "timestamp_cycles,target_id,ticks,class";

pub fn trace_csv(traces: &[MonitorTrace]) -> String {
    let mut rows: Vec<(u64, usize, u64, bool)> = Vec::new();
    for (target_id, trace) in traces.iter().enumerate() {
        for s in &trace.samples {
            rows.push((s.timestamp, target_id, s.ticks, s.hit));
        }
    }
    rows.sort_unstable();
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for (ts, id, ticks, hit) in rows {
        out.push_str(&format!(
            "{ts},{id},{ticks},{}\n",
            if hit { "hit" } else { "miss" }
        ));
    }
    out
}

pub const COVERT_HEADER: &str =
    "bits_delivered,cycles,bandwidth_bits_per_Mcycle,packet_error_rate,undetected_errors";

pub fn covert_csv(stats: &ChannelStats) -> String {
    format!(
        "{COVERT_HEADER}\n{},{},{},{},{}\n",
        stats.payload_bits_delivered,
        stats.elapsed_cycles,
        f(stats.raw_bandwidth),
        f(stats.packet_error_rate),
        stats.undetected_error_count
    )
}

pub const TEMPLATE_HEADER: &str = "address,event,hits";

pub fn template_csv(matrix: &TemplateMatrix) -> String {
    let mut out = String::from(TEMPLATE_HEADER);
    out.push('\n');
    for (r, offset) in matrix.address_offsets.iter().enumerate() {
        for (c, event) in matrix.events.iter().enumerate() {
            out.push_str(&format!("{offset:#x},{event},{}\n", matrix.hits[r][c]));
        }
    }
    out
}

pub const KEY_HEADER: &str = "byte_index,nibble,margin,correct";

/// `truth` enables the optional correctness column when ground truth exists.
pub fn key_csv(estimates: &[NibbleEstimate], truth: Option<&[u8; 16]>) -> String {
    let mut out = String::from(KEY_HEADER);
    out.push('\n');
    for e in estimates {
        let nibble = e
            .nibble
            .map(|n| format!("{n:#x}"))
            .unwrap_or_else(|| "undecided".into());
        let correct = match (truth, e.nibble) {
            (Some(t), Some(n)) => (n == t[e.byte_index]).to_string(),
            (Some(_), None) => "false".into(),
            (None, _) => String::new(),
        };
        out.push_str(&format!("{},{},{},{}\n", e.byte_index, nibble, f(e.margin), correct));
    }
    out
}

pub const TZ_HEADER: &str = "set,valid_mean_ticks,invalid_mean_ticks,squared_error";

pub fn tz_csv(first_set: u64, valid: &[f64], invalid: &[f64], per_set_error: &[f64]) -> String {
    let mut out = String::from(TZ_HEADER);
    out.push('\n');
    for (i, ((v, iv), e)) in valid.iter().zip(invalid).zip(per_set_error).enumerate() {
        out.push_str(&format!("{},{},{},{}\n", first_set + i as u64, f(*v), f(*iv), f(*e)));
    }
    out
}

pub const HISTOGRAM_HEADER: &str = "class,bin_lo,count";

pub fn histogram_csv(histograms: &[(&str, &Histogram)]) -> String {
    let mut out = String::from(HISTOGRAM_HEADER);
    out.push('\n');
    for (class, h) in histograms {
        for (bin, &count) in h.counts.iter().enumerate() {
            if count > 0 {
                out.push_str(&format!("{class},{},{count}\n", bin as u64 * h.bin_width));
            }
        }
    }
    out
}
