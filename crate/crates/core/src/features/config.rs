use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, NUM_SITES};

/// Named site groups accepted wherever a configuration is parsed.
pub const SITE_PRESETS: &[(&str, &[&str])] = &[
    ("six", &["pelvis", "head", "wrist_l", "wrist_r", "shank_l", "shank_r"]),
    ("shanks", &["shank_l", "shank_r"]),
    ("wrists", &["wrist_l", "wrist_r"]),
];

/// Which IMU sites are instrumented and whether insoles are worn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorConfig {
    bits: u16,
    pub insoles: bool,
}

impl SensorConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all(insoles: bool) -> Self {
        Self { bits: (1 << NUM_SITES) - 1, insoles }
    }

    pub fn from_indices(sites: impl IntoIterator<Item = usize>, insoles: bool) -> Self {
        let mut bits = 0u16;
        for s in sites {
            assert!(s < NUM_SITES, "site index {s} out of range");
            bits |= 1 << s;
        }
        Self { bits, insoles }
    }

    pub fn contains(&self, site: usize) -> bool {
        site < NUM_SITES && self.bits & (1 << site) != 0
    }

    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_SITES).filter(move |s| self.contains(*s))
    }

    pub fn num_sites(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Counts insoles as one sensor.
    pub fn num_sensors(&self) -> usize {
        self.num_sites() + self.insoles as usize
    }

    pub fn without(&self, other: &SensorConfig) -> Self {
        Self { bits: self.bits & !other.bits, insoles: self.insoles && !other.insoles }
    }

    pub fn intersect(&self, other: &SensorConfig) -> Self {
        Self { bits: self.bits & other.bits, insoles: self.insoles && other.insoles }
    }

    pub fn is_subset_of(&self, other: &SensorConfig) -> bool {
        self.bits & !other.bits == 0 && (!self.insoles || other.insoles)
    }

    /// Comma-separated site names, presets (`all`, `none`, `six`, `shanks`,
    /// `wrists`) and the token `insoles`.
    pub fn parse(text: &str, tree: &KinematicTree) -> Result<Self> {
        let mut out = Self::empty();
        for tok in text.split([',', '+']).map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "none" | "empty" => {}
                "all" => out.bits = Self::all(false).bits,
                "insoles" => out.insoles = true,
                _ => {
                    if let Some((_, names)) = SITE_PRESETS.iter().find(|(p, _)| *p == tok) {
                        for n in *names {
                            out.bits |= 1 << tree.site_index(n).expect("preset names exist");
                        }
                    } else {
                        let i = tree
                            .site_index(tok)
                            .ok_or_else(|| Error::contract(format!("unknown sensor site {tok:?}")))?;
                        out.bits |= 1 << i;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Canonical text form, round-trips through [`SensorConfig::parse`].
    pub fn label(&self, tree: &KinematicTree) -> String {
        let mut parts: Vec<&str> = self.sites().map(|s| tree.sites[s].name.as_str()).collect();
        if self.insoles {
            parts.push("insoles");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(",")
        }
    }
}
