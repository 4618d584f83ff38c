//! Deterministic quantum scheduler for interleaving agents on one simulator.
//!
//! Exactly one agent runs per quantum, in round-robin order. A per-quantum
//! gap probability models periods where an agent is descheduled by the rest
//! of the system: simulated time passes, the agent does nothing, and any
//! samples it would have taken are simply absent. Identical seeds replay
//! identical interleavings.

use crate::cachesim::CacheHierarchy;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Performed one operation; keep going within the quantum.
    Ran,
    /// Nothing to do right now; yield the rest of the quantum.
    Idle,
    /// The agent has finished for good.
    Done,
}

pub trait Agent {
    /// Performs one indivisible operation (a single access, or one probe
    /// round). An operation started within a quantum runs to completion even
    /// if it overshoots the boundary; preemption happens between operations.
    fn step(&mut self, hier: &mut CacheHierarchy) -> StepOutcome;
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    pub quantum: u64,
    pub gap_probability: f64,
}

impl Default for Scheduler {
    fn default() -> Self {
        Scheduler {
            quantum: 2000,
            gap_probability: 0.0,
        }
    }
}

impl Scheduler {
    /// Interleaves the agents until `duration` simulated cycles have passed
    /// or every agent reports `Done`.
    pub fn run(
        &self,
        hier: &mut CacheHierarchy,
        agents: &mut [&mut dyn Agent],
        rng: &mut SimRng,
        duration: u64,
    ) {
        let deadline = hier.clock() + duration;
        let mut finished = vec![false; agents.len()];
        while hier.clock() < deadline && !finished.iter().all(|&d| d) {
            for (i, agent) in agents.iter_mut().enumerate() {
                if hier.clock() >= deadline || finished[i] {
                    continue;
                }
                if rng.chance(self.gap_probability) {
                    hier.advance_clock(self.quantum);
                    continue;
                }
                let quantum_end = hier.clock() + self.quantum;
                loop {
                    if hier.clock() >= quantum_end {
                        break;
                    }
                    match agent.step(hier) {
                        StepOutcome::Ran => {}
                        StepOutcome::Idle => {
                            hier.advance_clock(quantum_end - hier.clock());
                            break;
                        }
                        StepOutcome::Done => {
                            finished[i] = true;
                            break;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cachesim::AccessKind;
    use crate::memspace::PhysicalAddress;
    use crate::profile::DeviceProfile;

    struct Toucher {
        core: usize,
        addr: u64,
        count: usize,
        log: Vec<(u64, usize)>,
    }

    impl Agent for Toucher {
        fn step(&mut self, hier: &mut CacheHierarchy) -> StepOutcome {
            if self.count == 0 {
                return StepOutcome::Done;
            }
            self.count -= 1;
            hier.access(self.core, PhysicalAddress(self.addr), AccessKind::Data)
                .unwrap();
            self.log.push((hier.clock(), self.core));
            self.addr += 64;
            StepOutcome::Ran
        }
    }

    #[test]
    fn interleaving_is_seed_deterministic() {
        let profile = DeviceProfile::alcatel_pop2();
        let run = |seed: u64| {
            let mut hier = CacheHierarchy::new(&profile, 1);
            let mut a = Toucher { core: 0, addr: 0x10000, count: 500, log: vec![] };
            let mut b = Toucher { core: 1, addr: 0x80000, count: 500, log: vec![] };
            let sched = Scheduler { quantum: 500, gap_probability: 0.2 };
            let mut rng = SimRng::new(seed);
            sched.run(&mut hier, &mut [&mut a, &mut b], &mut rng, 2_000_000);
            (a.log, b.log)
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn gaps_leave_quantum_sized_holes() {
        let profile = DeviceProfile::alcatel_pop2();
        let mut hier = CacheHierarchy::new(&profile, 2);
        let mut a = Toucher { core: 0, addr: 0x10000, count: usize::MAX, log: vec![] };
        let sched = Scheduler { quantum: 1000, gap_probability: 0.5 };
        let mut rng = SimRng::new(3);
        sched.run(&mut hier, &mut [&mut a], &mut rng, 100_000);
        // With 50% gaps there must be at least one quantum-sized hole in the
        // sample timeline.
        let gaps = a
            .log
            .windows(2)
            .filter(|w| w[1].0 - w[0].0 >= 1000)
            .count();
        assert!(gaps > 10, "expected descheduling holes, saw {gaps}");
    }

    #[test]
    fn run_ends_when_all_agents_finish() {
        let profile = DeviceProfile::alcatel_pop2();
        let mut hier = CacheHierarchy::new(&profile, 3);
        let mut a = Toucher { core: 0, addr: 0x10000, count: 3, log: vec![] };
        let sched = Scheduler::default();
        let mut rng = SimRng::new(4);
        sched.run(&mut hier, &mut [&mut a], &mut rng, u64::MAX / 2);
        assert_eq!(a.log.len(), 3);
    }
}
