//! Experiment scenarios: the structured configs behind the CLI subcommands
//! and the rigs that assemble memory, hierarchy, victims and attacker state
//! from a scenario plus a seed.
//!
//! Scenario files are TOML with a `schema_version` field; the named built-ins
//! (`input-events`, `aes-shared`, `aes-private`, `trustlet`, `trustlet-flush`)
//! resolve without touching the filesystem, and anything else is treated as a
//! path.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::key_recovery::{recover_upper_nibbles, NibbleEstimate, RecoveryError};
use crate::analysis::template::{profile_events, TemplateError, TemplateMatrix};
use crate::analysis::tz::{set_profile, SetProfile, TrustletProbeParams};
use crate::attacks::{
    calibrate_flush, calibrate_reload, flush_samples, reload_samples, AttackError, FlushThreshold,
    MonitorConfig, MonitorTrace, ProbePrimitive, ProbeTarget, SetPools,
};
use crate::cachesim::CacheHierarchy;
use crate::eviction::{EvictionSet, EvictionStrategy};
use crate::memspace::{MemorySystem, PhysicalAddress, ProcessId};
use crate::profile::{DeviceProfile, ProfileError};
use crate::rng::{derive_seed, SimRng};
use crate::timing::{Threshold, TimerModel};
use crate::victims::aes::{AesMode, TTableAes};
use crate::victims::events::{EventKind, EventLibrary, EventScriptAgent, ScheduledEvent};
use crate::victims::sched::Scheduler;
use crate::victims::trustlet::{TrustKey, Trustlet};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum ScenarioError {
    Io(String),
    Parse(String),
    SchemaVersion { found: u32, expected: u32 },
    Profile(ProfileError),
    Setup(String),
    Attack(AttackError),
    Template(TemplateError),
    Recovery(RecoveryError),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io(e) => write!(f, "scenario io error: {e}"),
            ScenarioError::Parse(e) => write!(f, "scenario parse error: {e}"),
            ScenarioError::SchemaVersion { found, expected } => {
                write!(f, "scenario schema_version {found} unsupported (expected {expected})")
            }
            ScenarioError::Profile(e) => write!(f, "{e}"),
            ScenarioError::Setup(m) => write!(f, "scenario setup: {m}"),
            ScenarioError::Attack(e) => write!(f, "{e}"),
            ScenarioError::Template(e) => write!(f, "{e}"),
            ScenarioError::Recovery(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl From<ProfileError> for ScenarioError {
    fn from(e: ProfileError) -> Self {
        ScenarioError::Profile(e)
    }
}

impl From<AttackError> for ScenarioError {
    fn from(e: AttackError) -> Self {
        ScenarioError::Attack(e)
    }
}

impl From<TemplateError> for ScenarioError {
    fn from(e: TemplateError) -> Self {
        ScenarioError::Template(e)
    }
}

impl From<RecoveryError> for ScenarioError {
    fn from(e: RecoveryError) -> Self {
        ScenarioError::Recovery(e)
    }
}

impl From<crate::timing::CalibrationError> for ScenarioError {
    fn from(e: crate::timing::CalibrationError) -> Self {
        ScenarioError::Attack(AttackError::Calibration(e))
    }
}

impl From<crate::eviction::EvictionError> for ScenarioError {
    fn from(e: crate::eviction::EvictionError) -> Self {
        ScenarioError::Attack(AttackError::Eviction(e))
    }
}

fn parse_versioned<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ScenarioError> {
    #[derive(Deserialize)]
    struct Versioned {
        schema_version: u32,
    }
    let v: Versioned = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if v.schema_version != SCENARIO_SCHEMA_VERSION {
        return Err(ScenarioError::SchemaVersion {
            found: v.schema_version,
            expected: SCENARIO_SCHEMA_VERSION,
        });
    }
    toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
}

fn load_text(path: &str) -> Result<String, ScenarioError> {
    std::fs::read_to_string(Path::new(path)).map_err(|e| ScenarioError::Io(format!("{path}: {e}")))
}

fn check_cores(profile: &DeviceProfile, cores: &[usize]) -> Result<(), ScenarioError> {
    let total: usize = profile.clusters.iter().map(|c| c.cores).sum();
    for &core in cores {
        if core >= total {
            return Err(ScenarioError::Setup(format!(
                "core {core} does not exist on {} ({total} cores)",
                profile.name
            )));
        }
    }
    Ok(())
}

/// Timer + threshold calibration shared by every rig.
pub struct CalibratedTimer {
    pub timer: TimerModel,
    pub threshold: Threshold,
    pub flush_threshold: Option<FlushThreshold>,
}

pub fn calibrate_on(
    hier: &mut CacheHierarchy,
    core: usize,
    helper: Option<usize>,
    timer: TimerModel,
    seed: u64,
) -> Result<CalibratedTimer, ScenarioError> {
    let mut rng = SimRng::new(derive_seed(seed, 0xCA11));
    let samples = reload_samples(hier, core, helper, &timer, 4000, &mut rng);
    let threshold = calibrate_reload(&samples)?;
    let flush_threshold = if hier.flush_available() {
        let fs = flush_samples(hier, core, &timer, 4000, &mut rng)?;
        Some(calibrate_flush(&fs)?)
    } else {
        None
    };
    Ok(CalibratedTimer { timer, threshold, flush_threshold })
}

// ---------------------------------------------------------------------------
// Input-event scenarios (probe + template subcommands)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventsScenario {
    pub schema_version: u32,
    pub profile: String,
    pub object: String,
    pub attacker_core: usize,
    pub victim_core: usize,
    pub quantum: u64,
    pub gap_probability: f64,
    /// Primitive used for monitoring; fr on flush devices, er elsewhere.
    pub primitive: String,
    /// Profiling time per template column, in quanta.
    pub profile_quanta_per_event: u64,
    /// Replay script: event kinds in order, spaced evenly.
    pub script_kinds: Vec<String>,
    pub script_spacing_quanta: u64,
}

impl EventsScenario {
    pub fn builtin() -> Self {
        EventsScenario {
            schema_version: SCENARIO_SCHEMA_VERSION,
            profile: "galaxy-s6".into(),
            object: "libinput".into(),
            attacker_core: 5,
            victim_core: 4,
            quantum: 2000,
            gap_probability: 0.0,
            primitive: "fr".into(),
            profile_quanta_per_event: 2200,
            script_kinds: vec![
                "tap".into(),
                "swipe".into(),
                "key".into(),
                "text".into(),
                "longpress".into(),
            ],
            script_spacing_quanta: 48,
        }
    }

    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        match name_or_path {
            "input-events" => Ok(Self::builtin()),
            path => parse_versioned(&load_text(path)?),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }
}

pub struct EventsRig {
    pub mem: MemorySystem,
    pub hier: CacheHierarchy,
    pub lib: EventLibrary,
    pub victim_pid: ProcessId,
    pub attacker_pid: ProcessId,
    pub attacker_core: usize,
    pub victim_core: usize,
    pub monitor_cfg: MonitorConfig,
    pub sched: Scheduler,
    pub quantum: u64,
    rng: SimRng,
}

impl EventsRig {
    pub fn build(
        scenario: &EventsScenario,
        timer: TimerModel,
        seed: u64,
    ) -> Result<Self, ScenarioError> {
        let profile = DeviceProfile::resolve(&scenario.profile)?;
        Self::build_on(scenario, &profile, timer, seed)
    }

    pub fn build_on(
        scenario: &EventsScenario,
        profile: &DeviceProfile,
        timer: TimerModel,
        seed: u64,
    ) -> Result<Self, ScenarioError> {
        check_cores(profile, &[scenario.attacker_core, scenario.victim_core])?;
        let mut mem = MemorySystem::new(profile.phys_size, profile.page_size, derive_seed(seed, 1));
        let mut hier = CacheHierarchy::new(profile, derive_seed(seed, 2));
        let victim_pid = mem.create_process();
        let attacker_pid = mem.create_process();
        let lib = EventLibrary::standard(&mut mem, victim_pid, &scenario.object);
        // The attacker maps the same object; frames are shared, so probing
        // the victim-resolved lines is equivalent.
        mem.map_shared(attacker_pid, &scenario.object, 30 * 64)
            .map_err(|e| ScenarioError::Setup(e.to_string()))?;
        let primitive = ProbePrimitive::parse(&scenario.primitive)
            .ok_or_else(|| ScenarioError::Setup(format!("unknown primitive {}", scenario.primitive)))?;
        let cal = calibrate_on(
            &mut hier,
            scenario.attacker_core,
            Some(scenario.victim_core),
            timer,
            seed,
        )?;
        let cluster = hier.cluster_of(scenario.attacker_core);
        let strategy = EvictionStrategy::default_for(&profile.clusters[cluster]);
        let monitor_cfg = MonitorConfig {
            primitive,
            timer: cal.timer,
            threshold: cal.threshold,
            flush_threshold: cal.flush_threshold,
            strategy: Some(strategy),
            quiet_rounds: 16,
            score_sigma: 3.0,
        };
        Ok(EventsRig {
            mem,
            hier,
            lib,
            victim_pid,
            attacker_pid,
            attacker_core: scenario.attacker_core,
            victim_core: scenario.victim_core,
            monitor_cfg,
            sched: Scheduler {
                quantum: scenario.quantum,
                gap_probability: scenario.gap_probability,
            },
            quantum: scenario.quantum,
            rng: SimRng::new(derive_seed(seed, 3)),
        })
    }

    /// Targets for the library's probe surface, eviction sets included when
    /// the primitive needs them.
    pub fn targets(&mut self, rows: &[usize]) -> Result<Vec<ProbeTarget>, ScenarioError> {
        let cluster = self.hier.cluster_of(self.attacker_core);
        let geometry = self.hier.l2_geometry(cluster);
        let mut targets = Vec::with_capacity(rows.len());
        let needs_evsets = self.monitor_cfg.primitive.needs_eviction_set();
        let per_set_need = match self.monitor_cfg.primitive {
            ProbePrimitive::PrimeProbe => geometry.ways - 1,
            _ => self.monitor_cfg.strategy.as_ref().map(|s| s.size).unwrap_or(geometry.ways),
        } as u64;
        let pools = if needs_evsets {
            Some(SetPools::from_new_mapping(
                &mut self.mem,
                self.attacker_pid,
                geometry.sets * geometry.line_size * (2 * per_set_need + 16),
                &geometry,
            )?)
        } else {
            None
        };
        for &row in rows {
            let paddr = self.lib.addresses[row];
            let mut t = ProbeTarget::from_paddr(paddr);
            if let Some(pools) = &pools {
                let set = crate::cachesim::set_index(&geometry, paddr);
                let size = match self.monitor_cfg.primitive {
                    ProbePrimitive::PrimeProbe => geometry.ways - 1,
                    _ => self.monitor_cfg.strategy.as_ref().unwrap().size,
                };
                let members: Vec<PhysicalAddress> = pools
                    .set(set)
                    .iter()
                    .copied()
                    .filter(|a| a.0 / geometry.line_size != paddr.0 / geometry.line_size)
                    .take(size)
                    .collect();
                if members.len() < size {
                    return Err(ScenarioError::Setup(format!(
                        "only {} congruent lines for row {row}",
                        members.len()
                    )));
                }
                t = t.with_evset(EvictionSet { target: paddr, members });
            }
            targets.push(t);
        }
        Ok(targets)
    }

    pub fn template_matrix(&mut self) -> Result<TemplateMatrix, ScenarioError> {
        let cfg = self.monitor_cfg.clone();
        let sched = self.sched.clone();
        let duration = self.quantum * 2200;
        let lib = self.lib.clone();
        let mut rng = self.rng.derive(0x10);
        profile_events(
            &mut self.hier,
            &mut self.mem,
            self.victim_pid,
            self.victim_core,
            self.attacker_core,
            &lib,
            &cfg,
            &sched,
            duration,
            &mut rng,
        )
        .map_err(ScenarioError::Template)
    }

    /// Replays a script while monitoring the given rows; returns per-row
    /// traces and the ground-truth schedule.
    pub fn monitor_script(
        &mut self,
        kinds: &[EventKind],
        spacing_quanta: u64,
        rows: &[usize],
    ) -> Result<(Vec<MonitorTrace>, Vec<ScheduledEvent>), ScenarioError> {
        let targets = self.targets(rows)?;
        let start = self.hier.clock() + 8 * self.quantum;
        let script: Vec<ScheduledEvent> = kinds
            .iter()
            .enumerate()
            .map(|(i, &kind)| ScheduledEvent {
                at: start + i as u64 * spacing_quanta * self.quantum,
                kind,
                duration: self.lib.footprint(kind).duration_quanta * self.quantum,
            })
            .collect();
        let duration = script.last().map(|e| e.at + e.duration).unwrap_or(0) + 30 * self.quantum
            - self.hier.clock();
        let mut victim = EventScriptAgent::new(
            &mut self.mem,
            self.victim_pid,
            self.victim_core,
            self.lib.clone(),
            script.clone(),
        );
        let mut victims: Vec<&mut dyn crate::victims::sched::Agent> = vec![&mut victim];
        let cfg = self.monitor_cfg.clone();
        let sched = self.sched.clone();
        let mut rng = self.rng.derive(0x11);
        let traces = crate::attacks::monitor(
            &mut self.hier,
            self.attacker_core,
            &targets,
            &cfg,
            &mut victims,
            &sched,
            duration,
            &mut rng,
        )?;
        Ok((traces, script))
    }
}

pub fn parse_script_kinds(kinds: &[String]) -> Result<Vec<EventKind>, ScenarioError> {
    kinds
        .iter()
        .map(|k| {
            EventKind::parse(k).ok_or_else(|| ScenarioError::Setup(format!("unknown event kind `{k}`")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// AES scenarios
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AesScenario {
    pub schema_version: u32,
    pub profile: String,
    /// "shared" or "private".
    pub mode: String,
    pub attacker_core: usize,
    pub victim_core: usize,
    /// "fr", "er" or "pp".
    pub primitive: String,
    pub budget_per_byte: usize,
    pub margin_floor: f64,
    pub chosen_plaintext: bool,
    /// In-line byte offset of the tables. Absent means the victim's seeded
    /// startup placement decides (the recovery requires aligned tables).
    pub disalignment: Option<u64>,
    /// Fixed victim key as 32 hex digits; absent means a seeded random key.
    pub key_hex: Option<String>,
    /// Restrict the attacker's pagemap (the mitigation toggle).
    pub pagemap_restricted: bool,
}

impl AesScenario {
    pub fn builtin_shared() -> Self {
        AesScenario {
            schema_version: SCENARIO_SCHEMA_VERSION,
            profile: "galaxy-s6".into(),
            mode: "shared".into(),
            attacker_core: 5,
            victim_core: 4,
            primitive: "er".into(),
            budget_per_byte: 512,
            margin_floor: 0.2,
            chosen_plaintext: true,
            disalignment: Some(0),
            key_hex: None,
            pagemap_restricted: false,
        }
    }

    pub fn builtin_private() -> Self {
        AesScenario {
            mode: "private".into(),
            primitive: "pp".into(),
            budget_per_byte: 1536,
            ..Self::builtin_shared()
        }
    }

    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        match name_or_path {
            "aes-shared" => Ok(Self::builtin_shared()),
            "aes-private" => Ok(Self::builtin_private()),
            path => parse_versioned(&load_text(path)?),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    fn key(&self, seed: u64) -> Result<[u8; 16], ScenarioError> {
        match &self.key_hex {
            Some(hex) => {
                let hex = hex.trim();
                if hex.len() != 32 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
                    return Err(ScenarioError::Setup("key_hex must be 32 hex digits".into()));
                }
                let mut key = [0u8; 16];
                for (i, byte) in key.iter_mut().enumerate() {
                    *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap();
                }
                Ok(key)
            }
            None => {
                let mut rng = SimRng::new(derive_seed(seed, 0xAE5));
                Ok(core::array::from_fn(|_| rng.next_u32() as u8))
            }
        }
    }
}

pub struct AesRunResult {
    pub estimates: Vec<NibbleEstimate>,
    pub true_nibbles: [u8; 16],
    pub encryptions_total: usize,
}

pub fn run_aes(scenario: &AesScenario, timer: TimerModel, seed: u64) -> Result<AesRunResult, ScenarioError> {
    let profile = DeviceProfile::resolve(&scenario.profile)?;
    let mode = match scenario.mode.as_str() {
        "shared" => AesMode::Shared,
        "private" => AesMode::Private,
        other => return Err(ScenarioError::Setup(format!("unknown aes mode `{other}`"))),
    };
    let primitive = ProbePrimitive::parse(&scenario.primitive)
        .ok_or_else(|| ScenarioError::Setup(format!("unknown primitive {}", scenario.primitive)))?;
    let key = scenario.key(seed)?;
    check_cores(&profile, &[scenario.attacker_core, scenario.victim_core])?;

    let mut mem = MemorySystem::new(profile.phys_size, profile.page_size, derive_seed(seed, 1));
    let mut hier = CacheHierarchy::new(&profile, derive_seed(seed, 2));
    let victim_pid = mem.create_process();
    let attacker_pid = mem.create_process();
    if scenario.pagemap_restricted {
        mem.set_pagemap_restricted(attacker_pid, true);
    }
    let mut placement_rng = SimRng::new(derive_seed(seed, 3));
    let victim = TTableAes::new(
        &mut mem,
        victim_pid,
        key,
        mode,
        scenario.disalignment,
        &mut placement_rng,
    );
    let cal = calibrate_on(
        &mut hier,
        scenario.attacker_core,
        Some(scenario.victim_core),
        timer,
        seed,
    )?;
    let cluster = hier.cluster_of(scenario.attacker_core);
    let strategy = EvictionStrategy::default_for(&profile.clusters[cluster]);
    let cfg = crate::analysis::key_recovery::AesAttackConfig {
        budget_per_byte: scenario.budget_per_byte,
        margin_floor: scenario.margin_floor,
        chosen_plaintext: scenario.chosen_plaintext,
        prime_lines: profile.clusters[cluster].l2.geometry.ways - 1,
        discovery_rounds: 6,
    };
    let mut rng = SimRng::new(derive_seed(seed, 4));
    let estimates = recover_upper_nibbles(
        &mut hier,
        &mut mem,
        &victim,
        scenario.victim_core,
        attacker_pid,
        scenario.attacker_core,
        primitive,
        Some(strategy),
        &cfg,
        &cal.timer,
        cal.threshold,
        &mut rng,
    )?;
    let encryptions_total = estimates.iter().map(|e| e.encryptions).sum();
    Ok(AesRunResult {
        estimates,
        true_nibbles: crate::analysis::key_recovery::true_upper_nibbles(&key),
        encryptions_total,
    })
}

// ---------------------------------------------------------------------------
// Trustlet scenarios
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustletScenario {
    pub schema_version: u32,
    pub profile: String,
    pub attacker_core: usize,
    pub trustlet_core: usize,
    pub cluster: usize,
    pub flush_on_enter: bool,
    pub band_start: u64,
    pub band_end: u64,
    pub probed_sets: u64,
    pub invocations: usize,
    /// Valid key ids averaged into the valid profile.
    pub valid_keys: Vec<u32>,
    /// Signature-loop sweeps per invocation.
    pub sweeps: usize,
}

impl TrustletScenario {
    pub fn builtin() -> Self {
        TrustletScenario {
            schema_version: SCENARIO_SCHEMA_VERSION,
            profile: "alcatel-pop2".into(),
            attacker_core: 0,
            trustlet_core: 3,
            cluster: 0,
            flush_on_enter: false,
            band_start: 250,
            band_end: 321,
            probed_sets: 512,
            invocations: 20,
            valid_keys: vec![0, 1, 2],
            sweeps: 4,
        }
    }

    pub fn builtin_flush() -> Self {
        TrustletScenario {
            profile: "galaxy-s6".into(),
            attacker_core: 5,
            trustlet_core: 4,
            cluster: 1,
            flush_on_enter: true,
            sweeps: 12,
            ..Self::builtin()
        }
    }

    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        match name_or_path {
            "trustlet" => Ok(Self::builtin()),
            "trustlet-flush" => Ok(Self::builtin_flush()),
            path => parse_versioned(&load_text(path)?),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }
}

pub struct TzRunResult {
    pub valid: SetProfile,
    pub invalid: SetProfile,
    pub per_set_error: Vec<f64>,
    pub mean_error: f64,
    pub probed_sets: std::ops::Range<u64>,
    pub band: std::ops::Range<u64>,
}

pub fn run_trustlet(scenario: &TrustletScenario, timer: TimerModel, seed: u64) -> Result<TzRunResult, ScenarioError> {
    let profile = DeviceProfile::resolve(&scenario.profile)?;
    check_cores(&profile, &[scenario.attacker_core, scenario.trustlet_core])?;
    if scenario.cluster >= profile.clusters.len() {
        return Err(ScenarioError::Setup("cluster index out of range".into()));
    }
    let geometry = profile.clusters[scenario.cluster].l2.geometry;
    if scenario.band_end > geometry.sets || scenario.probed_sets > geometry.sets {
        return Err(ScenarioError::Setup("band or probed range exceeds the L2".into()));
    }
    let reserved = 32 << 20;
    let mut mem = MemorySystem::with_reserved(
        profile.phys_size,
        profile.page_size,
        reserved,
        derive_seed(seed, 1),
    );
    let mut hier = CacheHierarchy::new(&profile, derive_seed(seed, 2));
    let attacker_pid = mem.create_process();
    let region = PhysicalAddress(profile.phys_size - reserved);
    let mut trustlet = Trustlet::new(
        &profile,
        scenario.trustlet_core,
        scenario.cluster,
        scenario.band_start..scenario.band_end,
        scenario.flush_on_enter,
        region,
        derive_seed(seed, 3),
    );
    trustlet.sweeps = scenario.sweeps;
    let pools = SetPools::from_new_mapping(
        &mut mem,
        attacker_pid,
        geometry.sets * geometry.line_size * 40,
        &geometry,
    )?;
    let prime_lines = geometry.ways - 1;
    if pools.min_lines() < prime_lines {
        return Err(ScenarioError::Setup("attacker pool too thin".into()));
    }
    let cal = calibrate_on(&mut hier, scenario.attacker_core, None, timer, seed)?;
    let params = TrustletProbeParams {
        probed_sets: 0..scenario.probed_sets,
        prime_lines,
        timer: cal.timer,
        threshold: cal.threshold,
        batch: 24,
    };
    let mut rng = SimRng::new(derive_seed(seed, 4));
    let span = scenario.probed_sets as usize;
    let mut valid_sum = vec![0f64; span];
    for (i, &id) in scenario.valid_keys.iter().enumerate() {
        let share = scenario.invocations / scenario.valid_keys.len()
            + usize::from(i < scenario.invocations % scenario.valid_keys.len());
        if share == 0 {
            continue;
        }
        let p = set_profile(
            &mut hier,
            scenario.attacker_core,
            &pools,
            &trustlet,
            TrustKey::Valid { id },
            share,
            &params,
            &mut rng,
        )?;
        let weight = share as f64 / scenario.invocations as f64;
        for (acc, v) in valid_sum.iter_mut().zip(p) {
            *acc += v * weight;
        }
    }
    let invalid = set_profile(
        &mut hier,
        scenario.attacker_core,
        &pools,
        &trustlet,
        TrustKey::Invalid,
        scenario.invocations,
        &params,
        &mut rng,
    )?;
    let (per_set_error, mean_error) =
        crate::analysis::mse_profile(&valid_sum, &invalid).expect("equal spans");
    Ok(TzRunResult {
        valid: valid_sum,
        invalid,
        per_set_error,
        mean_error,
        probed_sets: 0..scenario.probed_sets,
        band: scenario.band_start..scenario.band_end,
    })
}

// ---------------------------------------------------------------------------
// Covert channel setup
// ---------------------------------------------------------------------------

pub struct CovertSetup {
    pub mem: MemorySystem,
    pub hier: CacheHierarchy,
    pub cfg: crate::covert::ChannelConfig,
    pub rt: crate::covert::ChannelRuntime,
}

/// Standard channel setup: a shared object provides the bit and ack lines,
/// the default frame shape applies, and the classifier is calibrated on the
/// receiver core.
pub fn setup_covert(
    profile: &DeviceProfile,
    primitive: crate::covert::ChannelPrimitive,
    noise: f64,
    timer: TimerModel,
    seed: u64,
) -> Result<CovertSetup, ScenarioError> {
    use crate::covert::{ChannelConfig, ChannelPrimitive, ChannelRuntime};

    let mut mem = MemorySystem::new(profile.phys_size, profile.page_size, derive_seed(seed, 1));
    let mut hier = CacheHierarchy::new(profile, derive_seed(seed, 2));
    let sender_pid = mem.create_process();
    let receiver_pid = mem.create_process();

    // Flush-based channels need the flush instruction; eviction channels run
    // anywhere. Put the endpoints on the last cluster's first two cores.
    let cluster = profile.clusters.len() - 1;
    let first_core: usize = profile.clusters[..cluster].iter().map(|c| c.cores).sum();
    let (sender_core, receiver_core) = (first_core, first_core + 1);
    let geometry = profile.clusters[cluster].l2.geometry;

    let lines_needed = 72usize;
    let pages = 16u64;
    let mapping = mem
        .map_shared(sender_pid, "libshared", pages * profile.page_size)
        .map_err(|e| ScenarioError::Setup(e.to_string()))?;
    mem.map_shared(receiver_pid, "libshared", pages * profile.page_size)
        .map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let line_paddrs: Vec<PhysicalAddress> = (0..pages * profile.page_size / geometry.line_size)
        .map(|k| {
            mem.translate(
                sender_pid,
                crate::memspace::VirtualAddress(mapping.virtual_base.0 + k * geometry.line_size),
            )
            .expect("mapped")
        })
        .collect();
    let picks = crate::covert::distinct_set_lines(&line_paddrs, &geometry, lines_needed)
        .map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let bit_addresses = picks[..56].to_vec();
    let ack_addresses = picks[56..].to_vec();

    let mut cfg = ChannelConfig::with_defaults(primitive, bit_addresses, ack_addresses);
    if primitive == ChannelPrimitive::EvictReload {
        let strategy = EvictionStrategy::default_for(&profile.clusters[cluster]);
        // Cooperating endpoints share one congruent pool through a second
        // shared object.
        let pool_mapping = mem
            .map_shared(sender_pid, "evpool", geometry.sets * geometry.line_size * 40)
            .map_err(|e| ScenarioError::Setup(e.to_string()))?;
        mem.map_shared(receiver_pid, "evpool", geometry.sets * geometry.line_size * 40)
            .map_err(|e| ScenarioError::Setup(e.to_string()))?;
        let mut per_set: Vec<Vec<PhysicalAddress>> = vec![Vec::new(); geometry.sets as usize];
        for k in 0..pool_mapping.length / geometry.line_size {
            let pa = mem
                .translate(
                    sender_pid,
                    crate::memspace::VirtualAddress(
                        pool_mapping.virtual_base.0 + k * geometry.line_size,
                    ),
                )
                .expect("mapped");
            per_set[crate::cachesim::set_index(&geometry, pa) as usize].push(pa);
        }
        let evset_for = |addr: PhysicalAddress| -> Result<EvictionSet, ScenarioError> {
            let set = crate::cachesim::set_index(&geometry, addr) as usize;
            let members: Vec<PhysicalAddress> = per_set[set]
                .iter()
                .copied()
                .filter(|a| a.0 / geometry.line_size != addr.0 / geometry.line_size)
                .take(strategy.size)
                .collect();
            if members.len() < strategy.size {
                return Err(ScenarioError::Setup(format!(
                    "only {} congruent pool lines for a channel address",
                    members.len()
                )));
            }
            Ok(EvictionSet { target: addr, members })
        };
        cfg.strategy = Some(strategy);
        cfg.bit_evsets = cfg.bit_addresses.iter().map(|a| evset_for(*a)).collect::<Result<_, _>>()?;
        cfg.ack_evsets = cfg.ack_addresses.iter().map(|a| evset_for(*a)).collect::<Result<_, _>>()?;
    }
    cfg.validate(&geometry)
        .map_err(|e| ScenarioError::Setup(e.to_string()))?;

    let cal = calibrate_on(&mut hier, receiver_core, Some(sender_core), timer, seed)?;
    let rt = ChannelRuntime {
        sender_core,
        receiver_core,
        timer: cal.timer,
        threshold: cal.threshold,
        flush_threshold: cal.flush_threshold,
        noise,
    };
    Ok(CovertSetup { mem, hier, cfg, rt })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenarios_round_trip_through_toml() {
        let e = EventsScenario::builtin();
        let text = e.to_toml_string();
        let back: EventsScenario = parse_versioned(&text).unwrap();
        assert_eq!(back.profile, e.profile);
        let a = AesScenario::builtin_shared();
        let back: AesScenario = parse_versioned(&a.to_toml_string()).unwrap();
        assert_eq!(back.budget_per_byte, a.budget_per_byte);
        let t = TrustletScenario::builtin_flush();
        let back: TrustletScenario = parse_versioned(&t.to_toml_string()).unwrap();
        assert!(back.flush_on_enter);
    }

    #[test]
    fn schema_version_gate_applies_to_scenarios() {
        let text = EventsScenario::builtin()
            .to_toml_string()
            .replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(
            EventsScenario::resolve_from_text_for_tests(&text),
            Err(ScenarioError::SchemaVersion { found: 9, .. })
        ));
    }

    impl EventsScenario {
        fn resolve_from_text_for_tests(text: &str) -> Result<Self, ScenarioError> {
            parse_versioned(text)
        }
    }

    #[test]
    fn aes_key_parsing() {
        let mut s = AesScenario::builtin_shared();
        s.key_hex = Some("000102030405060708090a0b0c0d0e0f".into());
        assert_eq!(s.key(1).unwrap()[5], 5);
        s.key_hex = Some("xyz".into());
        assert!(s.key(1).is_err());
        s.key_hex = None;
        assert_eq!(s.key(7).unwrap(), s.key(7).unwrap());
        assert_ne!(s.key(7).unwrap(), s.key(8).unwrap());
    }
}
