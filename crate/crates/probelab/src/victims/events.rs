//! Synthetic user-input victim: an event-handling library whose code paths
//! touch small, event-specific sets of shared addresses.
//!
//! The footprints are model parameters, not recovered data: each event kind
//! owns a few addresses inside a shared object, taps produce a short burst of
//! accesses, swipes a sustained stream for the touch duration, and text input
//! a burst per character with inter-key gaps. Tap and swipe share one common
//! address (the generic touch path), so a single monitored line distinguishes
//! them by the length of its hit phase.
//!
//! The victim also runs a rotating background working set. That models the
//! host process's unrelated activity, and it is what washes event lines out
//! of the victim's L1 once an event ends.

use std::fmt;

use crate::cachesim::{AccessKind, CacheHierarchy};
use crate::memspace::{MemorySystem, PhysicalAddress, ProcessId, VirtualAddress};

use super::sched::{Agent, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Key,
    LongPress,
    Swipe,
    Tap,
    Text,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Key,
        EventKind::LongPress,
        EventKind::Swipe,
        EventKind::Tap,
        EventKind::Text,
    ];

    pub fn parse(name: &str) -> Option<EventKind> {
        match name {
            "key" => Some(EventKind::Key),
            "longpress" => Some(EventKind::LongPress),
            "swipe" => Some(EventKind::Swipe),
            "tap" => Some(EventKind::Tap),
            "text" => Some(EventKind::Text),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            EventKind::Key => "key",
            EventKind::LongPress => "longpress",
            EventKind::Swipe => "swipe",
            EventKind::Tap => "tap",
            EventKind::Text => "text",
        };
        f.pad(name)
    }
}

#[derive(Debug, Clone)]
pub struct EventFootprint {
    /// Indices into the library's probe surface.
    pub addr_indices: Vec<usize>,
    /// Event length in scheduler quanta when triggered with default duration.
    pub duration_quanta: u64,
}

/// The shared-object surface the attacker profiles, plus per-event footprints.
#[derive(Debug, Clone)]
pub struct EventLibrary {
    pub object: String,
    /// Probed line addresses inside the shared object, in offset order.
    pub addresses: Vec<PhysicalAddress>,
    footprints: Vec<(EventKind, EventFootprint)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventError {
    UnknownKind(String),
}

impl fmt::Display for EventError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventError::UnknownKind(k) => write!(f, "unknown event kind `{k}`"),
        }
    }
}

impl std::error::Error for EventError {}

impl EventLibrary {
    /// The shipped five-event library over a 30-line probe surface.
    pub fn standard(mem: &mut MemorySystem, pid: ProcessId, object: &str) -> Self {
        let line = 64u64;
        let mapping = mem.map_shared(pid, object, 30 * line).expect("library mapping");
        let addresses: Vec<PhysicalAddress> = (0..30)
            .map(|i| {
                mem.translate(pid, VirtualAddress(mapping.virtual_base.0 + i * line))
                    .expect("line translates")
            })
            .collect();
        let footprints = vec![
            (
                EventKind::Key,
                EventFootprint { addr_indices: vec![0, 1], duration_quanta: 2 },
            ),
            (
                EventKind::LongPress,
                EventFootprint { addr_indices: vec![3, 4, 5], duration_quanta: 6 },
            ),
            (
                EventKind::Swipe,
                EventFootprint { addr_indices: vec![7, 8, 9, 20], duration_quanta: 16 },
            ),
            (
                EventKind::Tap,
                EventFootprint { addr_indices: vec![12, 20], duration_quanta: 4 },
            ),
            (
                EventKind::Text,
                EventFootprint { addr_indices: vec![15, 16, 17], duration_quanta: 2 },
            ),
        ];
        EventLibrary {
            object: object.to_string(),
            addresses,
            footprints,
        }
    }

    pub fn footprint(&self, kind: EventKind) -> &EventFootprint {
        &self
            .footprints
            .iter()
            .find(|(k, _)| *k == kind)
            .expect("every kind has a footprint")
            .1
    }

    pub fn footprint_addrs(&self, kind: EventKind) -> Vec<PhysicalAddress> {
        self.footprint(kind)
            .addr_indices
            .iter()
            .map(|&i| self.addresses[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledEvent {
    /// Cycle at which the event starts.
    pub at: u64,
    pub kind: EventKind,
    /// Duration in cycles.
    pub duration: u64,
}

/// Enqueues one event of the library's default duration.
pub fn trigger_event(
    lib: &EventLibrary,
    quantum: u64,
    at: u64,
    kind: &str,
) -> Result<ScheduledEvent, EventError> {
    let kind = EventKind::parse(kind).ok_or_else(|| EventError::UnknownKind(kind.into()))?;
    Ok(ScheduledEvent {
        at,
        kind,
        duration: lib.footprint(kind).duration_quanta * quantum,
    })
}

/// Expands a string into per-character text bursts separated by idle gaps.
pub fn trigger_text(lib: &EventLibrary, quantum: u64, at: u64, text: &str) -> Vec<ScheduledEvent> {
    let burst = lib.footprint(EventKind::Text).duration_quanta * quantum;
    let gap = 2 * quantum;
    text.chars()
        .enumerate()
        .map(|(i, _)| ScheduledEvent {
            at: at + i as u64 * (burst + gap),
            kind: EventKind::Text,
            duration: burst,
        })
        .collect()
}

/// Victim agent executing a timed event script. Between events it cycles its
/// private background working set.
pub struct EventScriptAgent {
    pub core: usize,
    lib: EventLibrary,
    script: Vec<ScheduledEvent>,
    background: Vec<PhysicalAddress>,
    next_event: usize,
    footprint_cursor: usize,
    background_cursor: usize,
}

impl EventScriptAgent {
    pub fn new(
        mem: &mut MemorySystem,
        pid: ProcessId,
        core: usize,
        lib: EventLibrary,
        mut script: Vec<ScheduledEvent>,
    ) -> Self {
        script.sort_by_key(|e| e.at);
        // Background working set: one L1's worth of private lines so event
        // lines do not linger in the victim's L1 after the event.
        let pages = 8;
        let mapping = mem.map_private(pid, pages * 4096).expect("background buffer");
        let background = (0..pages * 4096 / 64)
            .map(|i| {
                mem.translate(pid, VirtualAddress(mapping.virtual_base.0 + i * 64))
                    .expect("background translates")
            })
            .collect();
        EventScriptAgent {
            core,
            lib,
            script,
            background,
            next_event: 0,
            footprint_cursor: 0,
            background_cursor: 0,
        }
    }

    fn active_event(&mut self, now: u64) -> Option<EventKind> {
        while self.next_event < self.script.len() {
            let ev = self.script[self.next_event];
            if now < ev.at + ev.duration {
                return (now >= ev.at).then_some(ev.kind);
            }
            self.next_event += 1;
        }
        None
    }

    pub fn done_at(&self) -> u64 {
        self.script.last().map(|e| e.at + e.duration).unwrap_or(0)
    }
}

impl Agent for EventScriptAgent {
    fn step(&mut self, hier: &mut CacheHierarchy) -> StepOutcome {
        let now = hier.clock();
        let touch_background = |agent: &mut Self, hier: &mut CacheHierarchy| {
            let addr = agent.background[agent.background_cursor % agent.background.len()];
            agent.background_cursor += 1;
            hier.access(agent.core, addr, AccessKind::Data).unwrap();
        };
        match self.active_event(now) {
            Some(kind) => {
                let addrs = self.lib.footprint_addrs(kind);
                let addr = addrs[self.footprint_cursor % addrs.len()];
                self.footprint_cursor += 1;
                hier.access(self.core, addr, AccessKind::Data).unwrap();
                // Interleave background work as the host process would.
                touch_background(self, hier);
                StepOutcome::Ran
            }
            None if self.next_event >= self.script.len() => StepOutcome::Done,
            None => {
                touch_background(self, hier);
                StepOutcome::Ran
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::DeviceProfile;
    use crate::rng::SimRng;
    use crate::victims::sched::Scheduler;

    fn setup() -> (MemorySystem, ProcessId, EventLibrary) {
        let mut mem = MemorySystem::new(256 << 20, 4096, 1);
        let pid = mem.create_process();
        let lib = EventLibrary::standard(&mut mem, pid, "libinput");
        (mem, pid, lib)
    }

    #[test]
    fn unknown_kinds_are_rejected() {
        let (_, _, lib) = setup();
        assert!(trigger_event(&lib, 2000, 0, "pinch").is_err());
        assert!(trigger_event(&lib, 2000, 0, "tap").is_ok());
    }

    #[test]
    fn swipes_run_longer_than_taps() {
        let (_, _, lib) = setup();
        let tap = trigger_event(&lib, 2000, 0, "tap").unwrap();
        let swipe = trigger_event(&lib, 2000, 0, "swipe").unwrap();
        assert!(swipe.duration >= 3 * tap.duration);
    }

    #[test]
    fn text_expands_to_per_character_bursts_with_gaps() {
        let (_, _, lib) = setup();
        let events = trigger_text(&lib, 2000, 1000, "abc");
        assert_eq!(events.len(), 3);
        for w in events.windows(2) {
            assert!(w[1].at > w[0].at + w[0].duration, "bursts must be separated");
            assert_eq!(w[0].kind, EventKind::Text);
        }
    }

    #[test]
    fn agent_touches_footprint_only_while_active() {
        let (mut mem, pid, lib) = setup();
        let profile = DeviceProfile::galaxy_s6();
        let mut hier = crate::cachesim::CacheHierarchy::new(&profile, 5);
        let tap_addr = lib.footprint_addrs(EventKind::Tap)[0];
        let script = vec![ScheduledEvent { at: 50_000, kind: EventKind::Tap, duration: 8_000 }];
        let mut agent = EventScriptAgent::new(&mut mem, pid, 0, lib, script);
        let sched = Scheduler { quantum: 2000, gap_probability: 0.0 };
        let mut rng = SimRng::new(6);
        // Before the event: the tap line must never be touched.
        sched.run(&mut hier, &mut [&mut agent], &mut rng, 40_000);
        assert!(!hier.is_cached_anywhere(tap_addr));
        // Across the event window it must appear.
        sched.run(&mut hier, &mut [&mut agent], &mut rng, 30_000);
        assert!(hier.is_cached_anywhere(tap_addr));
    }
}
