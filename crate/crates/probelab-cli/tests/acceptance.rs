//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (visible with `--nocapture`; failures always surface the details).
//!
//! Statistical criteria run at pinned tolerances against fixed seeds, so a
//! verdict is reproducible bit-for-bit. Heavier criteria fan their
//! independent runs out over the available cores.

use std::ops::Range;
use std::process::Command;
use std::time::Instant;

use probelab::analysis::template::{classify_events, ClassifyParams};
use probelab::analysis::tz::mse_band_fraction;
use probelab::attacks::{
    calibrate_flush, calibrate_reload, flush_flush, flush_samples, prime, prime_stable,
    probe_counted, reload_samples, ProbeTarget,
};
use probelab::cachesim::{AccessKind, CacheHierarchy, ServicedBy};
use probelab::covert::{transmit, ChannelPrimitive};
use probelab::eviction::{congruent_lines, evaluate, search, EvictionStrategy, StrategyGrid};
use probelab::profile::DeviceProfile;
use probelab::rng::{derive_seed, SimRng};
use probelab::scenario::{
    run_aes, run_trustlet, setup_covert, AesScenario, EventsRig, EventsScenario, TrustletScenario,
};
use probelab::timing::{misclassification, Classification, TimerModel};
use probelab::victims::events::EventKind;

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs `jobs` seeded tasks across the available cores, preserving order.
fn parallel_map<T: Send, F: Fn(u64) -> T + Sync>(seeds: &[u64], job: F) -> Vec<T> {
    let mut out: Vec<Option<T>> = Vec::new();
    out.resize_with(seeds.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut out);
    std::thread::scope(|scope| {
        for _ in 0..workers().min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let value = job(seeds[i]);
                slots.lock().unwrap()[i] = Some(value);
            });
        }
    });
    out.into_iter().map(|v| v.unwrap()).collect()
}

fn report(criterion: u32, name: &str, pass: bool, details: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "[criterion {criterion}] {name}: {verdict} ({details}; {:.1}s)",
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "[criterion {criterion}] {name}: FAIL ({details})");
}

/// Criterion 1: single-pass eviction of a full 16-way random-replacement set
/// matches the closed-form survival law within one percentage point over
/// 100,000 seeded trials per size.
#[test]
fn criterion_01_random_replacement_oracle_equivalence() {
    let started = Instant::now();
    let profile = DeviceProfile::toy_l2_only(16, 16, probelab::profile::ReplacementPolicy::PseudoRandom);
    let cases: Vec<u64> = vec![8, 16, 32, 48];
    let results = parallel_map(&cases, |m| {
        let rate = evaluate(
            &EvictionStrategy::new(m as usize, 1, 1),
            &profile,
            100_000,
            derive_seed(0xACC1, m),
        )
        .eviction_rate;
        let expected = 1.0 - (15.0f64 / 16.0).powi(m as i32);
        (m, rate, expected)
    });
    let mut details = String::new();
    let mut pass = true;
    for (m, rate, expected) in results {
        details.push_str(&format!("m={m}: {rate:.4} vs {expected:.4}; "));
        pass &= (rate - expected).abs() < 0.01;
    }
    report(1, "random-replacement oracle equivalence", pass, &details, started);
}

/// Criterion 2: the strategy search finds a >= 99% strategy inside the small
/// grid, while single-pass eviction needs a set at least three times larger
/// to reach the same rate.
#[test]
fn criterion_02_strategy_trend_reproduction() {
    let started = Instant::now();
    let profile = DeviceProfile::alcatel_pop2();
    let grid = StrategyGrid::parse("N=16..24,A=1..4,D=1..6").unwrap();
    let results = search(&grid, &profile, 10_000, 0xACC2);
    let (top, top_result) = &results[0];
    let top_ok = top_result.eviction_rate >= 0.99;

    // Reaching 0.99 single-pass must require at least 3x the winning size;
    // rates grow with the sweep size, so the boundary check suffices.
    let boundary = 3 * top.size - 1;
    let below = evaluate(
        &EvictionStrategy::new(boundary, 1, 1),
        &profile,
        100_000,
        derive_seed(0xACC2, 1),
    );
    let below_ok = below.eviction_rate < 0.99;
    // And the rate is attainable by plain sweeps eventually.
    let above = evaluate(
        &EvictionStrategy::new(4 * top.size, 1, 1),
        &profile,
        20_000,
        derive_seed(0xACC2, 2),
    );
    let above_ok = above.eviction_rate >= 0.99;
    // The qualitative ordering the experiments report: a small re-access
    // strategy beats a double-size single-pass sweep.
    let reaccess = evaluate(&EvictionStrategy::new(21, 1, 6), &profile, 20_000, derive_seed(0xACC2, 3));
    let sweep48 = evaluate(&EvictionStrategy::new(48, 1, 1), &profile, 20_000, derive_seed(0xACC2, 4));
    let ordering_ok = reaccess.eviction_rate > sweep48.eviction_rate && sweep48.eviction_rate < 0.99;

    let details = format!(
        "top {} rate {:.4}; single-pass N={} rate {:.4} (<0.99), N={} rate {:.4} (>=0.99); (21,1,6) {:.4} > (48,1,1) {:.4}",
        top,
        top_result.eviction_rate,
        boundary,
        below.eviction_rate,
        4 * top.size,
        above.eviction_rate,
        reaccess.eviction_rate,
        sweep48.eviction_rate
    );
    report(2, "strategy-trend reproduction", top_ok && below_ok && above_ok && ordering_ok, &details, started);
}

/// Criterion 3: on every shipped profile and timer preset a single threshold
/// misclassifies fewer than 0.1% of 10,000 labelled samples per class, and
/// remote hits sit strictly between local hits and memory.
#[test]
fn criterion_03_latency_separability() {
    let started = Instant::now();
    let mut pass = true;
    let mut worst = 0.0f64;
    for profile in [
        DeviceProfile::oneplus_one(),
        DeviceProfile::alcatel_pop2(),
        DeviceProfile::galaxy_s6(),
    ] {
        assert_eq!(profile.latency.remote_hit.base, 40, "remote anchor");
        assert!(profile.latency.dram.base > 500, "memory anchor");
        for timer in TimerModel::all_presets() {
            let mut hier = CacheHierarchy::new(&profile, 0xACC3);
            let mut rng = SimRng::new(derive_seed(0xACC3, 7));
            let train = reload_samples(&mut hier, 0, Some(1), &timer, 10_000, &mut rng);
            let threshold = calibrate_reload(&train).expect("calibratable");
            let fresh = reload_samples(&mut hier, 0, Some(1), &timer, 10_000, &mut rng);
            let err = misclassification(threshold, &fresh.hits, &fresh.misses);
            worst = worst.max(err);
            pass &= err < 0.001;
        }
        // Class means in cycle space: L1 < remote < memory.
        let mut hier = CacheHierarchy::new(&profile, 0xACC3 + 1);
        let mut sums = [(0u64, 0u64); 3];
        for i in 0..4000u64 {
            let addr = probelab::memspace::PhysicalAddress((96 << 20) + i * 64);
            let miss = hier.access(0, addr, AccessKind::Data).unwrap();
            assert_eq!(miss.serviced_by, ServicedBy::Dram);
            sums[2].0 += miss.cycles;
            sums[2].1 += 1;
            let l1 = hier.access(0, addr, AccessKind::Data).unwrap();
            assert_eq!(l1.serviced_by, ServicedBy::L1);
            sums[0].0 += l1.cycles;
            sums[0].1 += 1;
            let addr2 = probelab::memspace::PhysicalAddress((112 << 20) + i * 64);
            hier.access(1, addr2, AccessKind::Data).unwrap();
            let remote = hier.access(0, addr2, AccessKind::Data).unwrap();
            assert_eq!(remote.serviced_by, ServicedBy::Remote);
            sums[1].0 += remote.cycles;
            sums[1].1 += 1;
        }
        let mean = |s: (u64, u64)| s.0 as f64 / s.1 as f64;
        pass &= mean(sums[0]) < mean(sums[1]) && mean(sums[1]) < mean(sums[2]);
    }
    let details = format!("worst misclassification {:.4}%", worst * 100.0);
    report(3, "latency separability", pass, &details, started);
}

/// Criterion 4: 10,000 alternating cached/uncached flush rounds classify
/// with at least 99% accuracy from flush latency alone.
#[test]
fn criterion_04_flush_flush_accuracy() {
    let started = Instant::now();
    let profile = DeviceProfile::galaxy_s6();
    let mut hier = CacheHierarchy::new(&profile, 0xACC4);
    let timer = TimerModel::cycle_register();
    let mut rng = SimRng::new(derive_seed(0xACC4, 1));
    let samples = flush_samples(&mut hier, 4, &timer, 4000, &mut rng).unwrap();
    let fthr = calibrate_flush(&samples).unwrap();
    let target = ProbeTarget::from_paddr(probelab::memspace::PhysicalAddress(0x40000));
    let rounds = 10_000;
    let mut correct = 0;
    for i in 0..rounds {
        let cached = i % 2 == 0;
        if cached {
            hier.access(0, target.paddr, AccessKind::Data).unwrap();
        }
        let (class, _) = flush_flush(&mut hier, 4, &target, &timer, fthr, &mut rng).unwrap();
        correct += ((class == Classification::Hit) == cached) as u32;
    }
    let accuracy = correct as f64 / rounds as f64;
    report(
        4,
        "flush latency channel accuracy",
        accuracy >= 0.99,
        &format!("{:.2}% over {rounds} alternating rounds", accuracy * 100.0),
        started,
    );
}

/// Criterion 5: priming 15 of 16 ways misses a once-per-round victim access
/// at roughly the free-way rate: the undetected fraction over 10,000 rounds
/// stays within [0.02, 0.12].
#[test]
fn criterion_05_prime_probe_miss_fraction() {
    let started = Instant::now();
    let profile = DeviceProfile::galaxy_s6();
    let mut hier = CacheHierarchy::new(&profile, 0xACC5);
    let timer = TimerModel::cycle_register();
    let mut rng = SimRng::new(derive_seed(0xACC5, 1));
    let samples = reload_samples(&mut hier, 5, None, &timer, 3000, &mut rng);
    let threshold = calibrate_reload(&samples).unwrap();
    // Big-cluster set: data-inclusive, 16 ways.
    let geometry = profile.clusters[1].l2.geometry;
    let set = 777;
    let pool = congruent_lines(&geometry, set, 0, 15);
    let victim_lines = congruent_lines(&geometry, set, 100, 256);
    let list = prime(&mut hier, 5, &pool, 15, 16).unwrap();
    let rounds = 10_000;
    let mut undetected = 0;
    for round in 0..rounds {
        prime_stable(&mut hier, 5, &list, &timer, threshold, &mut rng, 64).unwrap();
        hier.access(4, victim_lines[round % victim_lines.len()], AccessKind::Data)
            .unwrap();
        let (_, misses) = probe_counted(&mut hier, 5, &list, &timer, threshold, &mut rng).unwrap();
        undetected += (misses == 0) as u32;
    }
    let fraction = undetected as f64 / rounds as f64;
    report(
        5,
        "prime+probe one-way miss fraction",
        (0.02..0.12).contains(&fraction),
        &format!("undetected fraction {fraction:.4} over {rounds} rounds"),
        started,
    );
}

/// Criterion 6: one hundred seeded 1 MB transfers at 1% injected bit-flip
/// noise must all deliver bit-exact with zero undetected errors, and the
/// measured bandwidth must replay bit-for-bit per seed.
#[test]
fn criterion_06_covert_channel_reliability() {
    let started = Instant::now();
    let profile = DeviceProfile::galaxy_s6();
    let payload_len = 1_000_000usize;
    let run = |seed: u64| {
        let mut setup = setup_covert(
            &profile,
            ChannelPrimitive::FlushReload,
            0.01,
            TimerModel::cycle_register(),
            seed,
        )
        .unwrap();
        let mut rng = SimRng::new(derive_seed(seed, 0xDA7A));
        let payload: Vec<u8> = (0..payload_len).map(|_| rng.next_u32() as u8).collect();
        let (stats, delivered) = transmit(
            &mut setup.hier,
            &setup.cfg,
            &setup.rt,
            &payload,
            derive_seed(seed, 0xC0),
        )
        .unwrap();
        (
            delivered == payload,
            stats.undetected_error_count,
            stats.raw_bandwidth.to_bits(),
            stats.elapsed_cycles,
            stats.corrupt_forward,
        )
    };
    let seeds: Vec<u64> = (0..100).map(|i| derive_seed(0xACC6, i)).collect();
    let results = parallel_map(&seeds, run);

    let clean = results.iter().filter(|r| r.0 && r.1 == 0).count();
    let undetected_total: u64 = results.iter().map(|r| r.1).sum();
    let corrupt_mean = results.iter().map(|r| r.4).sum::<u64>() / results.len() as u64;

    // Reproducibility: replaying a seed gives identical stats bit-for-bit.
    let replay = run(seeds[0]);
    let reproducible = replay == results[0];

    let pass = clean * 1000 >= results.len() * 999 && reproducible;
    let details = format!(
        "{clean}/100 runs bit-exact with zero undetected errors ({undetected_total} undetected total, \
         ~{corrupt_mean} corrupt frames/run caught by the checksum); bandwidth replay identical: {reproducible}"
    );
    report(6, "covert channel reliability", pass, &details, started);
}

/// Criterion 7: shared-mode Evict+Reload recovers all sixteen upper key
/// nibbles for twenty random keys within 512 chosen plaintexts per byte;
/// private-mode Prime+Probe does the same within three times the budget.
#[test]
fn criterion_07_aes_first_round_recovery() {
    let started = Instant::now();
    let run_mode = |scenario: AesScenario, label: &str| -> (bool, String) {
        let seeds: Vec<u64> = (0..20).map(|i| derive_seed(0xACC7, i)).collect();
        let outcomes = parallel_map(&seeds, |seed| {
            let result = run_aes(&scenario, TimerModel::cycle_register(), seed).unwrap();
            let correct = result
                .estimates
                .iter()
                .filter(|e| e.nibble == Some(result.true_nibbles[e.byte_index]))
                .count();
            let worst_margin = result
                .estimates
                .iter()
                .map(|e| e.margin)
                .fold(f64::INFINITY, f64::min);
            (correct, worst_margin)
        });
        let all_correct = outcomes.iter().all(|&(c, _)| c == 16);
        let worst = outcomes.iter().map(|&(_, m)| m).fold(f64::INFINITY, f64::min);
        (
            all_correct,
            format!("{label}: 16/16 nibbles on {} of 20 keys, worst margin {worst:.3}",
                outcomes.iter().filter(|&&(c, _)| c == 16).count()),
        )
    };
    let shared = AesScenario::builtin_shared();
    assert_eq!(shared.budget_per_byte, 512);
    assert_eq!(shared.primitive, "er");
    let (shared_ok, shared_details) = run_mode(shared, "shared/evict+reload @512");
    let private = AesScenario::builtin_private();
    assert!(private.budget_per_byte <= 3 * 512);
    let (private_ok, private_details) = run_mode(private, "private/prime+probe @1536");
    report(
        7,
        "first-round key recovery",
        shared_ok && private_ok,
        &format!("{shared_details}; {private_details}"),
        started,
    );
}

/// Criterion 8: the profiling matrix plus classifier recover at least 95% of
/// replayed events with the correct kind, and swipes produce hit runs at
/// least three times longer than taps on the shared touch-path line.
#[test]
fn criterion_08_template_attack_closed_loop() {
    let started = Instant::now();
    let scenario = EventsScenario::builtin();
    let mut rig = EventsRig::build(&scenario, TimerModel::cycle_register(), 0xACC8).unwrap();
    let matrix = rig.template_matrix().unwrap();
    let rows = matrix.informative_rows();

    // Closed loop over 50 scripted events cycling all five kinds.
    let script: Vec<EventKind> = (0..50).map(|i| EventKind::ALL[i % 5]).collect();
    let (traces, truth) = rig.monitor_script(&script, 48, &rows).unwrap();
    let params = ClassifyParams { min_hits: 1, merge_gap: rig.quantum * 16 };
    let events = classify_events(&matrix, &rows, &traces, &params).unwrap();
    let recovered = truth
        .iter()
        .filter(|ev| {
            events.iter().any(|&(t, k)| {
                k == ev.kind && (t as i64 - ev.at as i64).unsigned_abs() < 24 * rig.quantum
            })
        })
        .count();
    let recovery_ok = recovered * 100 >= truth.len() * 95;

    // Burst versus sustained shape over 50 tap/swipe events on the shared
    // touch-path address.
    let mix: Vec<EventKind> = (0..50)
        .map(|i| if i % 2 == 0 { EventKind::Tap } else { EventKind::Swipe })
        .collect();
    let (touch, _) = rig.monitor_script(&mix, 48, &[20]).unwrap();
    let mut runs = touch[0].hit_run_lengths();
    runs.sort_unstable();
    // Taps and swipes alternate, so the lower half of runs are tap bursts
    // and the upper half swipe phases.
    let tap_median = runs[runs.len() / 4];
    let swipe_median = runs[runs.len() * 3 / 4];
    let shape_ok = swipe_median >= 3 * tap_median;

    let details = format!(
        "{recovered}/{} events recovered; tap median run {tap_median}, swipe median run {swipe_median}",
        truth.len()
    );
    report(8, "template attack closed loop", recovery_ok && shape_ok, &details, started);
}

/// Criterion 9: the squared error between averaged valid-key and invalid-key
/// set profiles concentrates (>= 90%) inside the signature band in at least
/// 95% of 100 seeded runs, boundary-flushing variant included.
#[test]
fn criterion_09_trustlet_distinguisher() {
    let started = Instant::now();
    let band: Range<u64> = 250..321;
    let localized = |scenario: &TrustletScenario, seed: u64| {
        let result = run_trustlet(scenario, TimerModel::cycle_register(), seed).unwrap();
        mse_band_fraction(&result.per_set_error, &result.probed_sets, &result.band)
    };
    let bracketed = TrustletScenario::builtin();
    let flushing = TrustletScenario::builtin_flush();
    assert_eq!(bracketed.invocations, 20);
    assert_eq!((bracketed.band_start, bracketed.band_end), (band.start, band.end));
    assert!(flushing.flush_on_enter);

    let seeds: Vec<u64> = (0..100).map(|i| derive_seed(0xACC9, i)).collect();
    let fractions = parallel_map(&seeds, |seed| {
        // Half the runs exercise the bracketed variant, half the
        // flush-on-enter variant with parallel probing.
        if seed % 2 == 0 {
            localized(&bracketed, seed)
        } else {
            localized(&flushing, seed)
        }
    });
    let good = fractions.iter().filter(|&&f| f >= 0.90).count();
    let worst = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    report(
        9,
        "secure-world distinguisher localization",
        good >= 95,
        &format!("{good}/100 runs localized >=90% in band (worst {worst:.3})"),
        started,
    );
}

/// Criterion 10: every CLI subcommand, run twice with identical config and
/// seed, writes byte-identical output files.
#[test]
fn criterion_10_cli_determinism() {
    let started = Instant::now();
    let bin = env!("CARGO_BIN_EXE_probelab");
    let dir = std::env::temp_dir().join("probelab-acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let payload_path = dir.join("payload.bin");
    std::fs::write(&payload_path, (0u32..4096).map(|i| (i * 7) as u8).collect::<Vec<u8>>()).unwrap();

    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "evict",
            vec![
                "evict".into(), "--profile".into(), "alcatel-pop2".into(),
                "--grid".into(), "N=21..22,A=1..1,D=5..6".into(),
                "--trials".into(), "300".into(),
            ],
        ),
        (
            "probe",
            vec!["probe".into(), "--primitive".into(), "fr".into()],
        ),
        (
            "covert",
            vec![
                "covert".into(), "--profile".into(), "galaxy-s6".into(),
                "--payload".into(), payload_path.display().to_string(),
                "--noise".into(), "0.01".into(),
            ],
        ),
        ("template", vec!["template".into()]),
        (
            "aes-attack",
            vec!["aes-attack".into(), "--mode".into(), "shared".into(), "--budget".into(), "128".into()],
        ),
        ("tz-spy", vec!["tz-spy".into(), "--runs".into(), "4".into()]),
        (
            "histogram",
            vec!["histogram".into(), "--profile".into(), "galaxy-s6".into(), "--samples".into(), "2000".into()],
        ),
    ];

    let mut pass = true;
    let mut details = String::new();
    for (name, args) in &commands {
        let mut outputs = Vec::new();
        for attempt in 0..2 {
            let out_path = dir.join(format!("{name}-{attempt}.csv"));
            let status = Command::new(bin)
                .args(args)
                .arg("--seed")
                .arg("20260101")
                .arg("--out")
                .arg(&out_path)
                .status()
                .expect("subcommand runs");
            assert!(status.success(), "{name} exited with {status}");
            outputs.push(std::fs::read(&out_path).unwrap());
        }
        let identical = outputs[0] == outputs[1];
        pass &= identical;
        details.push_str(&format!("{name}:{} ", if identical { "ok" } else { "DIFFERS" }));
    }
    report(10, "CLI determinism", pass, details.trim_end(), started);
}
