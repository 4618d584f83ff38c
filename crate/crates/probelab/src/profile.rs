//! Device profiles: cache geometries, policies, inclusion modes, latencies.
//!
//! Three profiles matching the simulated test devices ship with the crate and
//! can also be loaded from TOML files (see `profiles/` in the repository).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    /// Line size in bytes; a power of two.
    pub line_size: u64,
    /// Number of sets; a power of two.
    pub sets: u64,
    /// Associativity.
    pub ways: usize,
}

impl CacheGeometry {
    pub fn capacity(&self) -> u64 {
        self.line_size * self.sets * self.ways as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementPolicy {
    Lru,
    PseudoRandom,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InclusionMode {
    Inclusive,
    NonInclusiveVictim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSpec {
    pub geometry: CacheGeometry,
    pub policy: ReplacementPolicy,
    /// Optional declared capacity, cross-checked against the geometry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_kb: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyClass {
    pub base: u64,
    /// Mean of the additive geometric jitter; zero disables jitter.
    pub jitter: f64,
}

/// Base latencies per service class. The remote and memory anchors are the
/// load-bearing ones: remote fetches must sit clearly between local hits and
/// memory for single-threshold classification to work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub l1_hit: LatencyClass,
    pub l2_hit: LatencyClass,
    pub remote_hit: LatencyClass,
    pub dram: LatencyClass,
    pub flush_cached: LatencyClass,
    pub flush_uncached: LatencyClass,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            l1_hit: LatencyClass { base: 4, jitter: 0.8 },
            l2_hit: LatencyClass { base: 16, jitter: 1.5 },
            remote_hit: LatencyClass { base: 40, jitter: 4.0 },
            dram: LatencyClass { base: 520, jitter: 30.0 },
            flush_cached: LatencyClass { base: 160, jitter: 8.0 },
            flush_uncached: LatencyClass { base: 110, jitter: 8.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub cores: usize,
    /// Per-core L1 instruction cache; absent on reduced test profiles.
    pub l1i: Option<CacheSpec>,
    /// Per-core L1 data cache; absent on reduced test profiles.
    pub l1d: Option<CacheSpec>,
    pub l2: CacheSpec,
    pub inclusion_instruction: InclusionMode,
    pub inclusion_data: InclusionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub clusters: Vec<ClusterSpec>,
    pub flush_available: bool,
    pub coherent_across_clusters: bool,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default = "default_page_size")]
    pub page_size: u64,
    #[serde(default = "default_phys_size")]
    pub phys_size: u64,
}

fn default_page_size() -> u64 {
    4096
}

fn default_phys_size() -> u64 {
    256 << 20
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileError {
    Io(String),
    Parse(String),
    SchemaVersion { found: u32, expected: u32 },
    Invalid(String),
}

impl fmt::Display for ProfileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileError::Io(e) => write!(f, "profile io error: {e}"),
            ProfileError::Parse(e) => write!(f, "profile parse error: {e}"),
            ProfileError::SchemaVersion { found, expected } => {
                write!(f, "profile schema_version {found} unsupported (expected {expected})")
            }
            ProfileError::Invalid(e) => write!(f, "invalid profile: {e}"),
        }
    }
}

impl std::error::Error for ProfileError {}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileFile {
    schema_version: u32,
    #[serde(flatten)]
    profile: DeviceProfile,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let err = |m: String| Err(ProfileError::Invalid(m));
        if self.clusters.is_empty() {
            return err("profile needs at least one cluster".into());
        }
        if !self.page_size.is_power_of_two() || !self.phys_size.is_multiple_of(self.page_size) {
            return err("physical memory must be a multiple of the page size".into());
        }
        for (ci, cl) in self.clusters.iter().enumerate() {
            if cl.cores == 0 {
                return err(format!("cluster {ci} has no cores"));
            }
            for spec in [&cl.l1i, &cl.l1d].into_iter().flatten() {
                Self::check_spec(ci, spec)?;
                if spec.geometry.line_size > cl.l2.geometry.line_size {
                    return err(format!("cluster {ci}: L1 lines exceed L2 line size"));
                }
            }
            Self::check_spec(ci, &cl.l2)?;
        }
        let lat = &self.latency;
        if lat.l1_hit.base == 0 || lat.flush_uncached.base == 0 {
            return err("latency bases must be positive".into());
        }
        if !(lat.l1_hit.base < lat.remote_hit.base && lat.remote_hit.base < lat.dram.base) {
            return err("latency ordering l1 < remote < dram violated".into());
        }
        if lat.flush_uncached.base >= lat.flush_cached.base {
            return err("flush_uncached must be cheaper than flush_cached".into());
        }
        Ok(())
    }

    fn check_spec(ci: usize, spec: &CacheSpec) -> Result<(), ProfileError> {
        let g = &spec.geometry;
        if !g.line_size.is_power_of_two() || !g.sets.is_power_of_two() || g.ways == 0 {
            return Err(ProfileError::Invalid(format!(
                "cluster {ci}: geometry must use power-of-two lines/sets and ways >= 1"
            )));
        }
        if let Some(kb) = spec.size_kb {
            if kb * 1024 != g.capacity() {
                return Err(ProfileError::Invalid(format!(
                    "cluster {ci}: declared {kb} KB but geometry holds {} bytes",
                    g.capacity()
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ProfileError> {
        let file: ProfileFile =
            toml::from_str(text).map_err(|e| ProfileError::Parse(e.to_string()))?;
        if file.schema_version != PROFILE_SCHEMA_VERSION {
            return Err(ProfileError::SchemaVersion {
                found: file.schema_version,
                expected: PROFILE_SCHEMA_VERSION,
            });
        }
        file.profile.validate()?;
        Ok(file.profile)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    /// Resolves a built-in profile name, falling back to a file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, ProfileError> {
        match name_or_path {
            "oneplus-one" => Ok(Self::oneplus_one()),
            "alcatel-pop2" => Ok(Self::alcatel_pop2()),
            "galaxy-s6" => Ok(Self::galaxy_s6()),
            other => Self::load(Path::new(other)),
        }
    }

    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            schema_version: u32,
            #[serde(flatten)]
            profile: &'a DeviceProfile,
        }
        toml::to_string_pretty(&Out {
            schema_version: PROFILE_SCHEMA_VERSION,
            profile: self,
        })
        .expect("profile serializes")
    }

    /// Dual-core device: 16 KB 4-way L1s over a 2 MB 8-way L2 with 128-byte
    /// lines, fully non-inclusive, no flush instruction.
    pub fn oneplus_one() -> Self {
        let l1 = CacheSpec {
            geometry: CacheGeometry { line_size: 64, sets: 64, ways: 4 },
            policy: ReplacementPolicy::Lru,
            size_kb: Some(16),
        };
        DeviceProfile {
            name: "oneplus-one".into(),
            clusters: vec![ClusterSpec {
                cores: 2,
                l1i: Some(l1.clone()),
                l1d: Some(l1),
                l2: CacheSpec {
                    geometry: CacheGeometry { line_size: 128, sets: 2048, ways: 8 },
                    policy: ReplacementPolicy::PseudoRandom,
                    size_kb: Some(2048),
                },
                inclusion_instruction: InclusionMode::NonInclusiveVictim,
                inclusion_data: InclusionMode::NonInclusiveVictim,
            }],
            flush_available: false,
            coherent_across_clusters: true,
            latency: LatencyModel::default(),
            page_size: 4096,
            phys_size: 256 << 20,
        }
    }

    /// Quad-core device: 32 KB 4-way L1s over a 512 KB 16-way L2,
    /// instruction-inclusive and data-non-inclusive, no flush instruction.
    pub fn alcatel_pop2() -> Self {
        let l1 = CacheSpec {
            geometry: CacheGeometry { line_size: 64, sets: 128, ways: 4 },
            policy: ReplacementPolicy::Lru,
            size_kb: Some(32),
        };
        DeviceProfile {
            name: "alcatel-pop2".into(),
            clusters: vec![ClusterSpec {
                cores: 4,
                l1i: Some(l1.clone()),
                l1d: Some(l1),
                l2: CacheSpec {
                    geometry: CacheGeometry { line_size: 64, sets: 512, ways: 16 },
                    policy: ReplacementPolicy::PseudoRandom,
                    size_kb: Some(512),
                },
                inclusion_instruction: InclusionMode::Inclusive,
                inclusion_data: InclusionMode::NonInclusiveVictim,
            }],
            flush_available: false,
            coherent_across_clusters: true,
            latency: LatencyModel::default(),
            page_size: 4096,
            phys_size: 256 << 20,
        }
    }

    /// Big.LITTLE device with two coherent clusters and an unlocked userspace
    /// flush instruction. Cores 0-3 sit on the little cluster
    /// (instruction-inclusive, data-non-inclusive 256 KB L2), cores 4-7 on the
    /// big cluster (instruction-non-inclusive, data-inclusive 2 MB L2).
    pub fn galaxy_s6() -> Self {
        let little_l1 = CacheSpec {
            geometry: CacheGeometry { line_size: 64, sets: 128, ways: 4 },
            policy: ReplacementPolicy::Lru,
            size_kb: Some(32),
        };
        let big_l1 = CacheSpec {
            geometry: CacheGeometry { line_size: 64, sets: 256, ways: 2 },
            policy: ReplacementPolicy::Lru,
            size_kb: Some(32),
        };
        DeviceProfile {
            name: "galaxy-s6".into(),
            clusters: vec![
                ClusterSpec {
                    cores: 4,
                    l1i: Some(little_l1.clone()),
                    l1d: Some(little_l1),
                    l2: CacheSpec {
                        geometry: CacheGeometry { line_size: 64, sets: 256, ways: 16 },
                        policy: ReplacementPolicy::PseudoRandom,
                        size_kb: Some(256),
                    },
                    inclusion_instruction: InclusionMode::Inclusive,
                    inclusion_data: InclusionMode::NonInclusiveVictim,
                },
                ClusterSpec {
                    cores: 4,
                    l1i: Some(big_l1.clone()),
                    l1d: Some(big_l1),
                    l2: CacheSpec {
                        geometry: CacheGeometry { line_size: 64, sets: 2048, ways: 16 },
                        policy: ReplacementPolicy::PseudoRandom,
                        size_kb: Some(2048),
                    },
                    inclusion_instruction: InclusionMode::NonInclusiveVictim,
                    inclusion_data: InclusionMode::Inclusive,
                },
            ],
            flush_available: true,
            coherent_across_clusters: true,
            latency: LatencyModel::default(),
            page_size: 4096,
            phys_size: 256 << 20,
        }
    }

    /// Single-level test profile: one core talking straight to an L2. Used by
    /// oracle tests where the closed-form replacement math must hold exactly.
    pub fn toy_l2_only(sets: u64, ways: usize, policy: ReplacementPolicy) -> Self {
        DeviceProfile {
            name: format!("toy-l2-{sets}x{ways}"),
            clusters: vec![ClusterSpec {
                cores: 1,
                l1i: None,
                l1d: None,
                l2: CacheSpec {
                    geometry: CacheGeometry { line_size: 64, sets, ways },
                    policy,
                    size_kb: None,
                },
                inclusion_instruction: InclusionMode::NonInclusiveVictim,
                inclusion_data: InclusionMode::NonInclusiveVictim,
            }],
            flush_available: false,
            coherent_across_clusters: true,
            latency: LatencyModel::default(),
            page_size: 4096,
            phys_size: 256 << 20,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_profiles_validate() {
        for p in [
            DeviceProfile::oneplus_one(),
            DeviceProfile::alcatel_pop2(),
            DeviceProfile::galaxy_s6(),
            DeviceProfile::toy_l2_only(16, 16, ReplacementPolicy::PseudoRandom),
        ] {
            p.validate().unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
    }

    #[test]
    fn geometry_capacities_match_declared_sizes() {
        let s6 = DeviceProfile::galaxy_s6();
        assert_eq!(s6.clusters[0].l2.geometry.capacity(), 256 * 1024);
        assert_eq!(s6.clusters[1].l2.geometry.capacity(), 2048 * 1024);
        let op = DeviceProfile::oneplus_one();
        assert_eq!(op.clusters[0].l2.geometry.capacity(), 2048 * 1024);
        assert_eq!(op.clusters[0].l1d.as_ref().unwrap().geometry.capacity(), 16 * 1024);
    }

    #[test]
    fn toml_round_trip_preserves_profiles() {
        for p in [
            DeviceProfile::oneplus_one(),
            DeviceProfile::alcatel_pop2(),
            DeviceProfile::galaxy_s6(),
        ] {
            let text = p.to_toml_string();
            let back = DeviceProfile::from_toml_str(&text).expect("parses");
            assert_eq!(p, back);
        }
    }

    #[test]
    fn schema_version_is_enforced() {
        let mut text = DeviceProfile::alcatel_pop2().to_toml_string();
        text = text.replace("schema_version = 1", "schema_version = 99");
        assert!(matches!(
            DeviceProfile::from_toml_str(&text),
            Err(ProfileError::SchemaVersion { found: 99, .. })
        ));
    }

    #[test]
    fn invalid_latency_ordering_is_rejected() {
        let mut p = DeviceProfile::alcatel_pop2();
        p.latency.remote_hit.base = p.latency.dram.base + 1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn declared_size_mismatch_is_rejected() {
        let mut p = DeviceProfile::alcatel_pop2();
        p.clusters[0].l2.size_kb = Some(123);
        assert!(p.validate().is_err());
    }
}
