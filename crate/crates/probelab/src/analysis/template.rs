//! Cache template attacks: profile how often each probed address hits under
//! each triggered event, then recognize live events as the nearest matrix
//! column.

use std::fmt;

use crate::attacks::{monitor, AttackError, MonitorConfig, MonitorTrace, ProbeTarget};
use crate::cachesim::CacheHierarchy;
use crate::memspace::{MemorySystem, ProcessId};
use crate::rng::SimRng;
use crate::victims::events::{EventKind, EventLibrary, EventScriptAgent, ScheduledEvent};
use crate::victims::sched::{Agent, Scheduler};

/// Hit counts per (address row, event column) under equal profiling duration
/// per column.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMatrix {
    /// Byte offsets labelling the rows, in probe-surface order.
    pub address_offsets: Vec<u64>,
    pub events: Vec<EventKind>,
    /// `hits[row][column]`.
    pub hits: Vec<Vec<u64>>,
    pub duration_per_column: u64,
}

impl TemplateMatrix {
    pub fn column(&self, event: EventKind) -> Vec<u64> {
        let c = self.events.iter().position(|&e| e == event).expect("event profiled");
        self.hits.iter().map(|row| row[c]).collect()
    }

    fn normalized_column(&self, c: usize) -> Vec<f64> {
        let raw: Vec<f64> = self.hits.iter().map(|row| row[c] as f64).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            raw
        } else {
            raw.iter().map(|x| x / norm).collect()
        }
    }

    /// The most active row per column; one informative address per event.
    pub fn informative_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.events.len())
            .map(|c| {
                (0..self.address_offsets.len())
                    .max_by_key(|&r| self.hits[r][c])
                    .unwrap()
            })
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateError {
    /// Two events produce indistinguishable columns; no classifier can
    /// separate them.
    AmbiguousTemplate(EventKind, EventKind),
    Attack(String),
}

impl fmt::Display for TemplateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateError::AmbiguousTemplate(a, b) => {
                write!(f, "template columns for {a} and {b} are indistinguishable")
            }
            TemplateError::Attack(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TemplateError {}

impl From<AttackError> for TemplateError {
    fn from(e: AttackError) -> Self {
        TemplateError::Attack(e.to_string())
    }
}

/// Builds the template matrix: for each event kind, trigger it repeatedly for
/// `duration` cycles while monitoring every probe-surface address, and count
/// the classified hits per address.
#[allow(clippy::too_many_arguments)]
pub fn profile_events(
    hier: &mut CacheHierarchy,
    mem: &mut MemorySystem,
    victim_pid: ProcessId,
    victim_core: usize,
    attacker_core: usize,
    lib: &EventLibrary,
    cfg: &MonitorConfig,
    sched: &Scheduler,
    duration: u64,
    rng: &mut SimRng,
) -> Result<TemplateMatrix, TemplateError> {
    let targets: Vec<ProbeTarget> = lib
        .addresses
        .iter()
        .map(|&pa| ProbeTarget::from_paddr(pa))
        .collect();
    let mut hits = vec![vec![0u64; EventKind::ALL.len()]; targets.len()];
    for (c, &kind) in EventKind::ALL.iter().enumerate() {
        hier.reset_caches();
        let spacing = lib.footprint(kind).duration_quanta * sched.quantum * 3 + 6 * sched.quantum;
        let script: Vec<ScheduledEvent> = (0..)
            .map(|i| ScheduledEvent {
                at: hier.clock() + 4 * sched.quantum + i * spacing,
                kind,
                duration: lib.footprint(kind).duration_quanta * sched.quantum,
            })
            .take_while(|e| e.at < hier.clock() + duration)
            .collect();
        let mut victim = EventScriptAgent::new(mem, victim_pid, victim_core, lib.clone(), script);
        let mut victims: Vec<&mut dyn Agent> = vec![&mut victim];
        let traces = monitor(
            hier,
            attacker_core,
            &targets,
            cfg,
            &mut victims,
            sched,
            duration,
            rng,
        )?;
        for (r, trace) in traces.iter().enumerate() {
            hits[r][c] = trace.samples.iter().filter(|s| s.hit).count() as u64;
        }
    }
    Ok(TemplateMatrix {
        address_offsets: (0..lib.addresses.len() as u64).map(|i| i * 64).collect(),
        events: EventKind::ALL.to_vec(),
        hits,
        duration_per_column: duration,
    })
}

#[derive(Debug, Clone)]
pub struct ClassifyParams {
    /// Minimum hits in a segment for it to count as an event.
    pub min_hits: usize,
    /// Hits closer than this merge into one event segment.
    pub merge_gap: u64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            min_hits: 1,
            merge_gap: 32_000,
        }
    }
}

/// Slides over the live traces, carves out activity segments, and labels each
/// segment with the nearest normalized template column. `rows` names the
/// matrix rows the traces correspond to.
pub fn classify_events(
    matrix: &TemplateMatrix,
    rows: &[usize],
    traces: &[MonitorTrace],
    params: &ClassifyParams,
) -> Result<Vec<(u64, EventKind)>, TemplateError> {
    assert_eq!(rows.len(), traces.len());
    // Setup validation: normalized columns must be pairwise distinguishable.
    for a in 0..matrix.events.len() {
        for b in a + 1..matrix.events.len() {
            let ca = matrix.normalized_column(a);
            let cb = matrix.normalized_column(b);
            let dist: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum();
            if dist.sqrt() < 1e-3 {
                return Err(TemplateError::AmbiguousTemplate(matrix.events[a], matrix.events[b]));
            }
        }
    }

    // Merge all hit samples into one timeline.
    let mut samples: Vec<(u64, usize)> = Vec::new();
    for (row, trace) in rows.iter().zip(traces) {
        for s in &trace.samples {
            if s.hit {
                samples.push((s.timestamp, *row));
            }
        }
    }
    samples.sort_unstable();
    if samples.is_empty() {
        return Ok(Vec::new());
    }

    // Activity segments: hits closer than a window belong together.
    let mut segments: Vec<(u64, u64, Vec<u64>)> = Vec::new(); // (start, end, row hit counts)
    for &(t, row) in &samples {
        match segments.last_mut() {
            Some((_, end, counts)) if t <= *end + params.merge_gap => {
                *end = t;
                counts[row] += 1;
            }
            _ => {
                let mut counts = vec![0u64; matrix.address_offsets.len()];
                counts[row] += 1;
                segments.push((t, t, counts));
            }
        }
    }

    let mut out = Vec::new();
    for (start, _, counts) in segments {
        let total: u64 = counts.iter().sum();
        if (total as usize) < params.min_hits {
            continue;
        }
        let norm = counts.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
        let v: Vec<f64> = counts.iter().map(|&c| c as f64 / norm).collect();
        let mut best = (f64::INFINITY, 0usize);
        for c in 0..matrix.events.len() {
            let col = matrix.normalized_column(c);
            let dist: f64 = col.iter().zip(&v).map(|(x, y)| (x - y) * (x - y)).sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        out.push((start, matrix.events[best.1]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_matrix() -> TemplateMatrix {
        // Three addresses, two synthetic events with disjoint footprints plus
        // the real five-kind labels on the first two columns.
        TemplateMatrix {
            address_offsets: vec![0, 64, 128],
            events: EventKind::ALL.to_vec(),
            hits: vec![
                vec![40, 0, 0, 15, 10],
                vec![0, 35, 0, 0, 5],
                vec![0, 0, 30, 20, 0],
            ],
            duration_per_column: 1000,
        }
    }

    #[test]
    fn empty_traces_give_no_events() {
        let matrix = toy_matrix();
        let traces = vec![MonitorTrace::default(); 3];
        let events = classify_events(&matrix, &[0, 1, 2], &traces, &ClassifyParams::default()).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn identical_columns_are_rejected() {
        let mut matrix = toy_matrix();
        for r in 0..3 {
            matrix.hits[r][1] = matrix.hits[r][0];
        }
        assert!(matches!(
            classify_events(&matrix, &[], &[], &ClassifyParams::default()),
            Err(TemplateError::AmbiguousTemplate(..))
        ));
    }

    #[test]
    fn segments_pick_the_nearest_column() {
        let matrix = toy_matrix();
        let mk = |ts: &[u64]| MonitorTrace {
            samples: ts
                .iter()
                .map(|&t| crate::attacks::TraceSample { timestamp: t, ticks: 10, hit: true })
                .collect(),
        };
        // Burst on row 0 at ~10k, burst on row 1 at ~200k.
        let traces = vec![mk(&[10_000, 11_000, 12_000]), mk(&[200_000, 201_000, 202_500]), mk(&[])];
        let events = classify_events(&matrix, &[0, 1, 2], &traces, &ClassifyParams::default()).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0], (10_000, EventKind::Key));
        assert_eq!(events[1].1, EventKind::LongPress);
    }
}
