//! The TOML files shipped in `profiles/` and `scenarios/` must stay in sync
//! with the built-in definitions they document.

use std::path::PathBuf;

use probelab::profile::DeviceProfile;
use probelab::scenario::{AesScenario, EventsScenario, TrustletScenario};

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn shipped_profiles_match_builtins() {
    for builtin in [
        DeviceProfile::oneplus_one(),
        DeviceProfile::alcatel_pop2(),
        DeviceProfile::galaxy_s6(),
    ] {
        let path = repo_root().join(format!("profiles/{}.toml", builtin.name));
        let loaded = DeviceProfile::load(&path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert_eq!(loaded, builtin, "{path:?} drifted from the built-in profile");
    }
}

#[test]
fn shipped_scenarios_parse_and_match() {
    let root = repo_root();
    let events =
        EventsScenario::resolve(root.join("scenarios/input-events.toml").to_str().unwrap())
            .expect("events scenario parses");
    assert_eq!(events.to_toml_string(), EventsScenario::builtin().to_toml_string());

    let shared = AesScenario::resolve(root.join("scenarios/aes-shared.toml").to_str().unwrap())
        .expect("aes-shared parses");
    assert_eq!(shared.to_toml_string(), AesScenario::builtin_shared().to_toml_string());

    let private = AesScenario::resolve(root.join("scenarios/aes-private.toml").to_str().unwrap())
        .expect("aes-private parses");
    assert_eq!(private.budget_per_byte, 3 * shared.budget_per_byte);

    let tz = TrustletScenario::resolve(root.join("scenarios/trustlet.toml").to_str().unwrap())
        .expect("trustlet parses");
    assert!(!tz.flush_on_enter);
    let tzf =
        TrustletScenario::resolve(root.join("scenarios/trustlet-flush.toml").to_str().unwrap())
            .expect("trustlet-flush parses");
    assert!(tzf.flush_on_enter);
}

#[test]
fn device_profiles_carry_the_published_geometries() {
    let op = DeviceProfile::oneplus_one();
    assert_eq!(op.clusters.len(), 1);
    assert_eq!(op.clusters[0].cores, 2);
    assert_eq!(op.clusters[0].l2.geometry.ways, 8);
    assert_eq!(op.clusters[0].l2.geometry.sets, 2048);
    assert!(!op.flush_available);

    let alto = DeviceProfile::alcatel_pop2();
    assert_eq!(alto.clusters[0].cores, 4);
    assert_eq!(alto.clusters[0].l1d.as_ref().unwrap().geometry.sets, 128);
    assert_eq!(alto.clusters[0].l2.geometry.ways, 16);
    assert_eq!(alto.clusters[0].l2.geometry.sets, 512);

    let s6 = DeviceProfile::galaxy_s6();
    assert_eq!(s6.clusters.len(), 2);
    assert_eq!(s6.clusters[1].l2.geometry.sets, 2048);
    assert_eq!(s6.clusters[1].l1d.as_ref().unwrap().geometry.ways, 2);
    assert!(s6.flush_available);
    assert!(s6.coherent_across_clusters);
}
