//! Scenario suites on disk, prior fitting and the ablation variants.

use crate::intention::initial_state_from_history;
use crate::kinematics::ControlProfile;
use crate::prior::{fit_prior, KinematicPrior};
use crate::scenario::{load_scenario, save_scenario, synth_scenario, Scenario, Template};
use crate::sim::{IntentionMode, OvExecution, SimConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// File name relative to the suite directory; absent in seed-only lists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    pub template: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// `n` entries; `all` cycles through the templates with seeds
    /// `seed, seed, seed, seed, seed + 1, ...`.
    pub fn plan(n: usize, template: &str, seed: u64) -> Result<Self> {
        let templates: Vec<Template> = if template == "all" {
            Template::ALL.to_vec()
        } else {
            vec![Template::from_name(template)
                .ok_or_else(|| Error::Config(format!("unknown template '{template}'")))?]
        };
        let k = templates.len();
        let entries = (0..n)
            .map(|i| {
                let t = templates[i % k];
                let s = seed + (i / k) as u64;
                ManifestEntry {
                    file: Some(format!("{i:04}-{}-{s}.json", t.name())),
                    template: t.name().into(),
                    seed: s,
                }
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Regenerates every scenario of the manifest.
    pub fn synthesize(&self) -> Result<Vec<(String, Scenario)>> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let t = Template::from_name(&e.template)
                    .ok_or_else(|| Error::Config(format!("unknown template '{}'", e.template)))?;
                let name = e
                    .file
                    .as_deref()
                    .map(stem)
                    .unwrap_or_else(|| format!("{i:04}-{}-{}", e.template, e.seed));
                Ok((name, synth_scenario(e.seed, t)))
            })
            .collect()
    }
}

fn stem(file: &str) -> String {
    Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file.to_string())
}

/// Writes via a temporary file in the same directory and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes the scenarios of `manifest` and the manifest itself into `dir`.
pub fn write_suite(dir: &Path, manifest: &Manifest) -> Result<()> {
    for ((_, scenario), entry) in manifest.synthesize()?.iter().zip(&manifest.entries) {
        let file = entry
            .file
            .as_deref()
            .expect("planned manifests name their files");
        atomic_write(&dir.join(file), &save_scenario(scenario))?;
    }
    atomic_write(&dir.join(MANIFEST), manifest.to_json().as_bytes())
}

/// Loads a suite directory: manifest order when a manifest is present,
/// otherwise every `*.json` file in name order.
pub fn load_suite(dir: &Path) -> Result<Vec<(String, Scenario)>> {
    let manifest_path = dir.join(MANIFEST);
    let files: Vec<PathBuf> = if manifest_path.exists() {
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m = Manifest::from_json(&text)?;
        if m.entries.iter().any(|e| e.file.is_none()) {
            return m.synthesize();
        }
        m.entries
            .iter()
            .map(|e| dir.join(e.file.as_deref().unwrap()))
            .collect()
    } else {
        let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        return Err(Error::Empty("scenario directory has no scenarios"));
    }
    files
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            let s = load_scenario(&bytes)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?;
            Ok((stem(&p.to_string_lossy()), s))
        })
        .collect()
}

/// Kinematic profiles of every logged trajectory in the scenarios.
pub fn logged_profiles(scenarios: &[&Scenario]) -> Vec<ControlProfile> {
    scenarios
        .iter()
        .flat_map(|s| {
            s.agents
                .iter()
                .filter(|a| a.trajectory.len() >= 4)
                .map(move |a| {
                    let init = initial_state_from_history(&a.trajectory.states[..3], s.dt);
                    let positions = a.trajectory.positions()[2..].to_vec();
                    ControlProfile::from_positions(&init, positions, s.dt)
                })
        })
        .collect()
}

/// Prior fitted to the scenarios' logged driving, with the given jerk weight.
pub fn fit_scenario_prior(scenarios: &[&Scenario], lambda: f64) -> Result<KinematicPrior> {
    fit_prior(&logged_profiles(scenarios), lambda)
}

pub const ABLATION_VARIANTS: [&str; 4] = ["none", "opt-only", "interp", "full"];

/// The ablation rows: no adversary, the optimizer's own profile executed
/// directly, an interpolated goal executed as its straight-line profile, and
/// the optimizer followed by the completion planner.
pub fn ablation_configs(base: &SimConfig) -> Vec<(&'static str, SimConfig)> {
    let with = |mode: IntentionMode, exec: OvExecution| SimConfig {
        intention_mode: mode,
        ov_execution: exec,
        ..base.clone()
    };
    vec![
        ("none", with(IntentionMode::None, base.ov_execution)),
        (
            "opt-only",
            with(IntentionMode::Optimization, OvExecution::SeedProfile),
        ),
        (
            "interp",
            with(IntentionMode::Heuristic, OvExecution::SeedProfile),
        ),
        (
            "full",
            with(IntentionMode::Optimization, OvExecution::Planner),
        ),
    ]
}
