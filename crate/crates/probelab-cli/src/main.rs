//! Experiment runner: binds device profiles, scenarios, seeds and output
//! files to the library's attack pipelines. Every subcommand takes an
//! explicit `--seed`; identical invocations write byte-identical files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use probelab::analysis::template::ClassifyParams;
use probelab::attacks::{flush_samples, reload_samples};
use probelab::cachesim::CacheHierarchy;
use probelab::covert::{transmit, ChannelPrimitive};
use probelab::eviction::{search, StrategyGrid};
use probelab::profile::DeviceProfile;
use probelab::report;
use probelab::rng::{derive_seed, SimRng};
use probelab::scenario::{
    parse_script_kinds, run_aes, run_trustlet, setup_covert, AesScenario, EventsRig,
    EventsScenario, TrustletScenario,
};
use probelab::timing::{Histogram, TimerModel};

#[derive(Parser)]
#[command(
    name = "probelab",
    about = "Deterministic cache-hierarchy simulator and cache-attack toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment seed; all randomness derives from it.
    #[arg(long)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Timer preset: register | syscall | clock | counterthread.
    #[arg(long, default_value = "register")]
    timer: String,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate eviction strategies over a parameter grid.
    Evict {
        #[command(flatten)]
        common: Common,
        /// Device profile name or TOML path.
        #[arg(long)]
        profile: String,
        /// Strategy grid, e.g. N=16..24,A=1..4,D=1..6 (inclusive bounds).
        #[arg(long)]
        grid: String,
        /// Trials per strategy.
        #[arg(long, default_value_t = 1000)]
        trials: u64,
    },
    /// Monitor the input-event scenario's addresses and dump the trace.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Probing primitive: fr | er | pp | ff.
        #[arg(long)]
        primitive: String,
        /// Device profile override (defaults to the scenario's).
        #[arg(long)]
        profile: Option<String>,
        /// Events scenario name or path.
        #[arg(long, default_value = "input-events")]
        scenario: String,
    },
    /// Transfer a payload over the cache covert channel.
    Covert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: String,
        /// Channel primitive: fr | er | ff.
        #[arg(long, default_value = "fr")]
        primitive: String,
        /// Payload file to transmit.
        #[arg(long)]
        payload: PathBuf,
        /// Per-bit flip probability injected on classified bits.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Build a cache template matrix for the event scenario.
    Template {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "input-events")]
        scenario: String,
    },
    /// Recover the upper key nibbles of the table-based AES victim.
    AesAttack {
        #[command(flatten)]
        common: Common,
        /// shared | private.
        #[arg(long)]
        mode: Option<String>,
        /// Encryption budget per key byte.
        #[arg(long)]
        budget: Option<usize>,
        /// AES scenario name or path (defaults to the mode's built-in).
        #[arg(long)]
        scenario: Option<String>,
        /// Restrict the attacker's pagemap oracle (mitigation toggle).
        #[arg(long, default_value_t = false)]
        pagemap_restricted: bool,
    },
    /// Profile secure-world invocations per cache set.
    TzSpy {
        #[command(flatten)]
        common: Common,
        /// Invocations per key class.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = "trustlet")]
        scenario: String,
    },
    /// Dump reload and flush latency histograms for a profile and timer.
    Histogram {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: String,
        /// Samples per class.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Histogram bin width in ticks.
        #[arg(long, default_value_t = 4)]
        bin_width: u64,
    },
}

fn timer_of(common: &Common) -> Result<TimerModel, String> {
    TimerModel::parse(&common.timer)
        .ok_or_else(|| format!("unknown timer preset `{}`", common.timer))
}

fn write_out(common: &Common, csv: String) -> Result<(), String> {
    std::fs::write(&common.out, csv).map_err(|e| format!("{}: {e}", common.out.display()))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Evict { common, profile, grid, trials } => {
            let profile = DeviceProfile::resolve(&profile).map_err(|e| e.to_string())?;
            let grid = StrategyGrid::parse(&grid)?;
            if trials == 0 {
                return Err("--trials must be at least 1".into());
            }
            let results = search(&grid, &profile, trials, common.seed);
            write_out(&common, report::evict_csv(&results))
        }
        Command::Probe { common, primitive, profile, scenario } => {
            let mut scenario = EventsScenario::resolve(&scenario).map_err(|e| e.to_string())?;
            scenario.primitive = primitive;
            if let Some(p) = profile {
                // Remap the default cores when the override has fewer.
                let resolved = DeviceProfile::resolve(&p).map_err(|e| e.to_string())?;
                let total: usize = resolved.clusters.iter().map(|c| c.cores).sum();
                if scenario.attacker_core >= total || scenario.victim_core >= total {
                    scenario.attacker_core = 0;
                    scenario.victim_core = total - 1;
                }
                scenario.profile = p;
            }
            let timer = timer_of(&common)?;
            let mut rig =
                EventsRig::build(&scenario, timer, common.seed).map_err(|e| e.to_string())?;
            let kinds = parse_script_kinds(&scenario.script_kinds).map_err(|e| e.to_string())?;
            let rows: Vec<usize> = (0..rig.lib.addresses.len()).collect();
            let (traces, _) = rig
                .monitor_script(&kinds, scenario.script_spacing_quanta, &rows)
                .map_err(|e| e.to_string())?;
            write_out(&common, report::trace_csv(&traces))
        }
        Command::Covert { common, profile, primitive, payload, noise } => {
            let profile = DeviceProfile::resolve(&profile).map_err(|e| e.to_string())?;
            let primitive = ChannelPrimitive::parse(&primitive)
                .ok_or_else(|| format!("unknown channel primitive `{primitive}`"))?;
            if !(0.0..=1.0).contains(&noise) {
                return Err("--noise must be a probability".into());
            }
            let payload =
                std::fs::read(&payload).map_err(|e| format!("{}: {e}", payload.display()))?;
            if payload.is_empty() {
                return Err("payload file is empty".into());
            }
            let timer = timer_of(&common)?;
            let mut setup = setup_covert(&profile, primitive, noise, timer, common.seed)
                .map_err(|e| e.to_string())?;
            let (stats, _) = transmit(
                &mut setup.hier,
                &setup.cfg,
                &setup.rt,
                &payload,
                derive_seed(common.seed, 0xC0),
            )
            .map_err(|e| e.to_string())?;
            write_out(&common, report::covert_csv(&stats))
        }
        Command::Template { common, scenario } => {
            let scenario = EventsScenario::resolve(&scenario).map_err(|e| e.to_string())?;
            let timer = timer_of(&common)?;
            let mut rig =
                EventsRig::build(&scenario, timer, common.seed).map_err(|e| e.to_string())?;
            let matrix = rig.template_matrix().map_err(|e| e.to_string())?;
            // The matrix must support classification; surface ambiguity now.
            probelab::analysis::template::classify_events(
                &matrix,
                &[],
                &[],
                &ClassifyParams::default(),
            )
            .map_err(|e| e.to_string())?;
            write_out(&common, report::template_csv(&matrix))
        }
        Command::AesAttack { common, mode, budget, scenario, pagemap_restricted } => {
            let mut scenario = match (&scenario, &mode) {
                (Some(s), _) => AesScenario::resolve(s).map_err(|e| e.to_string())?,
                (None, Some(m)) if m == "private" => AesScenario::builtin_private(),
                (None, _) => AesScenario::builtin_shared(),
            };
            if let Some(mode) = mode {
                if mode != scenario.mode {
                    scenario.primitive = if mode == "private" { "pp" } else { "er" }.into();
                    scenario.mode = mode;
                }
            }
            if let Some(budget) = budget {
                scenario.budget_per_byte = budget;
            }
            scenario.pagemap_restricted |= pagemap_restricted;
            let timer = timer_of(&common)?;
            let result = run_aes(&scenario, timer, common.seed).map_err(|e| e.to_string())?;
            write_out(&common, report::key_csv(&result.estimates, Some(&result.true_nibbles)))
        }
        Command::TzSpy { common, runs, scenario } => {
            let mut scenario = TrustletScenario::resolve(&scenario).map_err(|e| e.to_string())?;
            if let Some(runs) = runs {
                if runs == 0 {
                    return Err("--runs must be at least 1".into());
                }
                scenario.invocations = runs;
            }
            let timer = timer_of(&common)?;
            let result = run_trustlet(&scenario, timer, common.seed).map_err(|e| e.to_string())?;
            write_out(
                &common,
                report::tz_csv(
                    result.probed_sets.start,
                    &result.valid,
                    &result.invalid,
                    &result.per_set_error,
                ),
            )
        }
        Command::Histogram { common, profile, samples, bin_width } => {
            let profile = DeviceProfile::resolve(&profile).map_err(|e| e.to_string())?;
            if samples == 0 || bin_width == 0 {
                return Err("--samples and --bin-width must be positive".into());
            }
            let timer = timer_of(&common)?;
            let mut hier = CacheHierarchy::new(&profile, derive_seed(common.seed, 1));
            let mut rng = SimRng::new(derive_seed(common.seed, 2));
            let helper = (hier.total_cores() > 1).then_some(1);
            let reload = reload_samples(&mut hier, 0, helper, &timer, samples, &mut rng);
            let mut histograms = vec![
                ("reload_hit".to_string(), Histogram::from_samples(&reload.hits, bin_width)),
                ("reload_miss".to_string(), Histogram::from_samples(&reload.misses, bin_width)),
            ];
            if profile.flush_available {
                let flush = flush_samples(&mut hier, 0, &timer, samples, &mut rng)
                    .map_err(|e| e.to_string())?;
                histograms.push((
                    "flush_cached".to_string(),
                    Histogram::from_samples(&flush.cached, bin_width),
                ));
                histograms.push((
                    "flush_uncached".to_string(),
                    Histogram::from_samples(&flush.uncached, bin_width),
                ));
            }
            let refs: Vec<(&str, &Histogram)> =
                histograms.iter().map(|(n, h)| (n.as_str(), h)).collect();
            write_out(&common, report::histogram_csv(&refs))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
