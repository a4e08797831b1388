//! Scenario configuration: strict TOML with profile inheritance.
//!
//! A config file may start with `extends = "name"` or
//! `extends = ["a", "b"]`. Each named profile is loaded (recursively) and
//! layered in order, then the file itself is layered on top. Layering merges
//! sections key by key; a key's value is always replaced whole, so
//! `compute_ms = { constant = 6000 }` replaces an inherited
//! `{ normal = ... }` outright.
//!
//! A profile name resolves, in order, to `<dir>/<name>.toml`,
//! `<dir>/profiles/<name>.toml`, `<dir>/../profiles/<name>.toml` (where
//! `<dir>` is the directory of the file doing the extending) and finally to
//! the profiles shipped with this crate.
//!
//! Unknown keys are fatal and reported with the file that introduced them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cloud::CloudFunctionProfile;
use crate::cost::{RateCard, UsageScenario};
use crate::hub::{HubMode, HubPolicy};
use crate::network::LinkModel;
use crate::workloads::{ResourceProfile, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{location}: cannot read: {message}")]
    Io { location: String, message: String },
    #[error("{location}: parse error{}: {message}", key_suffix(.key))]
    ParseError {
        location: String,
        key: Option<String>,
        message: String,
    },
    #[error("{location}: unknown key `{key}`")]
    UnknownKey { location: String, key: String },
    #[error("{referenced_from}: profile `{name}` not found")]
    MissingProfile {
        name: String,
        referenced_from: String,
    },
    #[error("profile inheritance cycle: {}", .chain.join(" -> "))]
    ProfileCycle { chain: Vec<String> },
    #[error("{location}: invalid `{key}`: {reason}")]
    Invalid {
        location: String,
        key: String,
        reason: String,
    },
}

fn key_suffix(key: &Option<String>) -> String {
    key.as_ref()
        .map(|k| format!(" at `{k}`"))
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Edge,
    Cloud,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Virtual,
    Live,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    /// Blob name prefix; defaults to the workload kind.
    pub route: Option<String>,
    #[serde(default)]
    pub envelope_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub pipeline: Pipeline,
    pub platform_profile: String,
    #[serde(default)]
    pub mode: RunMode,
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub devices: u32,
    /// Constant offset added to every device-written timestamp.
    #[serde(default)]
    pub edge_clock_skew_ms: i64,
    pub output_dir: Option<String>,
    pub workload: WorkloadSpec,
    pub link: LinkModel,
    #[serde(default)]
    pub hub: HubPolicy,
    pub cloud_function: Option<CloudFunctionProfile>,
    pub resources: Option<ResourceProfile>,
    #[serde(default)]
    pub storage: StorageConfig,
}

fn one() -> u32 {
    1
}

impl ScenarioConfig {
    /// Checks cross-field rules that the schema alone cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: String| ConfigError::Invalid {
            location: self.name.clone(),
            key: key.to_string(),
            reason,
        };
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty".into()));
        }
        if self.devices == 0 {
            return Err(invalid("devices", "at least one device is required".into()));
        }
        if self.mode == RunMode::Virtual && self.seed.is_none() {
            return Err(invalid("seed", "a seed is required in virtual mode".into()));
        }
        self.workload
            .validate()
            .map_err(|e| invalid("workload", e.to_string()))?;
        self.link.validate().map_err(|e| invalid("link", e))?;
        if self.pipeline == Pipeline::Edge {
            self.hub.validate().map_err(|e| invalid("hub", e.0))?;
        }
        match (&self.cloud_function, self.pipeline) {
            (None, Pipeline::Cloud) => {
                return Err(invalid(
                    "cloud_function",
                    "cloud pipelines need a [cloud_function] section".into(),
                ))
            }
            (Some(cf), _) => cf.validate().map_err(|e| invalid("cloud_function", e))?,
            _ => {}
        }
        if let Some(r) = &self.resources {
            r.validate()
                .map_err(|e| invalid("resources", e.to_string()))?;
        }
        Ok(())
    }

    pub fn route(&self) -> String {
        self.storage
            .route
            .clone()
            .unwrap_or_else(|| self.workload.kind.as_str().to_string())
    }

    pub fn is_batched(&self) -> bool {
        self.pipeline == Pipeline::Edge && self.hub.mode == HubMode::Batched
    }

    /// SHA-256 over the canonical JSON form of the resolved config.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

macro_rules! builtins {
    ($dir:literal: $($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../fixtures/", $dir, "/", $name, ".toml")))),*]
    };
}

/// Profiles shipped with the crate, by name.
pub const BUILTIN_PROFILES: &[(&str, &str)] = builtins!("profiles":
    "audio", "image", "scalar",
    "greengrass", "azureedge", "aws-cloud", "azure-cloud",
    "greengrass-audio", "greengrass-image", "greengrass-scalar",
    "azureedge-audio", "azureedge-image", "azureedge-scalar",
    "aws-cloud-audio", "aws-cloud-image", "aws-cloud-scalar",
    "azure-cloud-audio", "azure-cloud-image", "azure-cloud-scalar",
);

/// Ready-to-run scenarios shipped with the crate, by name.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = builtins!("scenarios":
    "greengrass-audio", "greengrass-image", "greengrass-scalar",
    "azureedge-audio", "azureedge-image", "azureedge-scalar",
    "aws-cloud-audio", "aws-cloud-image", "aws-cloud-scalar",
    "azure-cloud-audio", "azure-cloud-image", "azure-cloud-scalar",
);

pub const BUILTIN_RATE_CARDS: &[(&str, &str)] = builtins!("cost": "us-east-2018");
pub const BUILTIN_USAGE: &[(&str, &str)] = builtins!("cost": "camera-image");

fn builtin(table: &[(&'static str, &'static str)], name: &str) -> Option<&'static str> {
    table.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Default)]
struct Layered {
    table: toml::Table,
    provenance: BTreeMap<String, String>,
}

impl Layered {
    fn overlay(&mut self, top: Layered) {
        for (key, value) in top.table {
            match (self.table.get_mut(&key), value) {
                (Some(toml::Value::Table(base)), toml::Value::Table(section)) => {
                    for (k, v) in section {
                        let path = format!("{key}.{k}");
                        if let Some(origin) = top.provenance.get(&path) {
                            self.provenance.insert(path, origin.clone());
                        }
                        base.insert(k, v);
                    }
                }
                (_, value) => {
                    let prefix = format!("{key}.");
                    self.provenance.retain(|p, _| !p.starts_with(&prefix));
                    for (p, o) in top.provenance.iter() {
                        if p == &key || p.starts_with(&prefix) {
                            self.provenance.insert(p.clone(), o.clone());
                        }
                    }
                    self.table.insert(key, value);
                }
            }
        }
    }

    fn from_table(table: toml::Table, origin: &str) -> Self {
        let mut provenance = BTreeMap::new();
        for (key, value) in &table {
            provenance.insert(key.clone(), origin.to_string());
            if let toml::Value::Table(section) = value {
                for k in section.keys() {
                    provenance.insert(format!("{key}.{k}"), origin.to_string());
                }
            }
        }
        Self { table, provenance }
    }

    fn origin_of(&self, key: &str, fallback: &str) -> String {
        let mut probe = key;
        loop {
            if let Some(o) = self.provenance.get(probe) {
                return o.clone();
            }
            match probe.rfind('.') {
                Some(i) => probe = &probe[..i],
                None => return fallback.to_string(),
            }
        }
    }
}

struct Source {
    text: String,
    origin: String,
    dir: Option<PathBuf>,
    path: Option<PathBuf>,
}

fn same_file(a: &Path, b: Option<&Path>) -> bool {
    match (a.canonicalize(), b.map(Path::canonicalize)) {
        (Ok(a), Some(Ok(b))) => a == b,
        _ => false,
    }
}

/// Finds a profile by name. The file doing the extending (`current`) is
/// never its own parent, so a scenario may share its profile's name.
fn find_profile(name: &str, dir: Option<&Path>, current: Option<&Path>) -> Option<Source> {
    let simple = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if !simple {
        return None;
    }
    if let Some(dir) = dir {
        let file = format!("{name}.toml");
        let candidates = [
            dir.join(&file),
            dir.join("profiles").join(&file),
            dir.join("..").join("profiles").join(&file),
        ];
        for path in candidates {
            if same_file(&path, current) {
                continue;
            }
            if let Ok(text) = fs::read_to_string(&path) {
                return Some(Source {
                    text,
                    origin: path.display().to_string(),
                    dir: path.parent().map(Path::to_path_buf),
                    path: Some(path),
                });
            }
        }
    }
    builtin(BUILTIN_PROFILES, name).map(|text| Source {
        text: text.to_string(),
        origin: format!("builtin:profiles/{name}.toml"),
        dir: None,
        path: None,
    })
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>()
        .map_err(|e| ConfigError::ParseError {
            location: origin.to_string(),
            key: None,
            message: e.message().to_string(),
        })
}

fn take_extends(table: &mut toml::Table, origin: &str) -> Result<Vec<String>, ConfigError> {
    let bad = || ConfigError::ParseError {
        location: origin.to_string(),
        key: Some("extends".into()),
        message: "expected a profile name or a list of profile names".into(),
    };
    match table.remove("extends") {
        None => Ok(Vec::new()),
        Some(toml::Value::String(s)) => Ok(vec![s]),
        Some(toml::Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                _ => Err(bad()),
            })
            .collect(),
        Some(_) => Err(bad()),
    }
}

fn resolve(source: Source, chain: &mut Vec<String>) -> Result<Layered, ConfigError> {
    let mut table = parse_table(&source.text, &source.origin)?;
    let parents = take_extends(&mut table, &source.origin)?;
    let mut acc = Layered::default();
    for name in parents {
        if chain.contains(&name) {
            let mut cycle = chain.clone();
            cycle.push(name);
            return Err(ConfigError::ProfileCycle { chain: cycle });
        }
        let parent = find_profile(&name, source.dir.as_deref(), source.path.as_deref())
            .ok_or_else(|| ConfigError::MissingProfile {
                name: name.clone(),
                referenced_from: source.origin.clone(),
            })?;
        chain.push(name);
        let layer = resolve(parent, chain)?;
        chain.pop();
        acc.overlay(layer);
    }
    acc.overlay(Layered::from_table(table, &source.origin));
    Ok(acc)
}

fn deserialize_layered<T: DeserializeOwned>(
    layered: Layered,
    origin: &str,
) -> Result<T, ConfigError> {
    let value = toml::Value::Table(layered.table.clone());
    serde_path_to_error::deserialize::<_, T>(value).map_err(|err| {
        let path = err.path().to_string();
        let message = err.inner().to_string();
        if let Some(rest) = message.strip_prefix("unknown field `") {
            let field = rest.split('`').next().unwrap_or_default();
            let key = if path == "." || path.is_empty() {
                field.to_string()
            } else if path.ends_with(field) {
                path.clone()
            } else {
                format!("{path}.{field}")
            };
            return ConfigError::UnknownKey {
                location: layered.origin_of(&key, origin),
                key,
            };
        }
        let key = (path != "." && !path.is_empty()).then_some(path);
        ConfigError::ParseError {
            location: key
                .as_deref()
                .map(|k| layered.origin_of(k, origin))
                .unwrap_or_else(|| origin.to_string()),
            key,
            message,
        }
    })
}

fn load_source(source: Source) -> Result<ScenarioConfig, ConfigError> {
    let origin = source.origin.clone();
    let mut chain = Vec::new();
    let layered = resolve(source, &mut chain)?;
    let config: ScenarioConfig = deserialize_layered(layered, &origin)?;
    config.validate().map_err(|e| match e {
        ConfigError::Invalid { key, reason, .. } => ConfigError::Invalid {
            location: origin,
            key,
            reason,
        },
        other => other,
    })?;
    Ok(config)
}

/// Loads, resolves and validates a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_source(Source {
        text,
        origin: path.display().to_string(),
        dir: path.parent().map(Path::to_path_buf),
        path: Some(path.to_path_buf()),
    })
}

/// Loads a scenario from text. Relative `extends` names resolve against
/// `base_dir` when given, then against the shipped profiles.
pub fn load_config_str(
    text: &str,
    origin: &str,
    base_dir: Option<&Path>,
) -> Result<ScenarioConfig, ConfigError> {
    load_source(Source {
        text: text.to_string(),
        origin: origin.to_string(),
        dir: base_dir.map(Path::to_path_buf),
        path: None,
    })
}

/// Loads one of the shipped scenarios, e.g. `greengrass-image`.
pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let text = builtin(BUILTIN_SCENARIOS, name).ok_or_else(|| ConfigError::MissingProfile {
        name: name.to_string(),
        referenced_from: "builtin scenarios".into(),
    })?;
    load_config_str(text, &format!("builtin:scenarios/{name}.toml"), None)
}

fn load_plain<T: DeserializeOwned>(
    spec: &str,
    table: &[(&'static str, &'static str)],
) -> Result<T, ConfigError> {
    let path = Path::new(spec);
    let (text, origin) = if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            location: spec.to_string(),
            message: e.to_string(),
        })?;
        (text, spec.to_string())
    } else if let Some(text) = builtin(table, spec) {
        (text.to_string(), format!("builtin:cost/{spec}.toml"))
    } else {
        return Err(ConfigError::MissingProfile {
            name: spec.to_string(),
            referenced_from: "command line".into(),
        });
    };
    let table = parse_table(&text, &origin)?;
    deserialize_layered(Layered::from_table(table, &origin), &origin)
}

/// Loads a rate card from a file path or a shipped name (`us-east-2018`).
pub fn load_rate_card(spec: &str) -> Result<RateCard, ConfigError> {
    let card: RateCard = load_plain(spec, BUILTIN_RATE_CARDS)?;
    card.validate().map_err(|e| ConfigError::Invalid {
        location: spec.to_string(),
        key: e.field.to_string(),
        reason: e.to_string(),
    })?;
    Ok(card)
}

/// Loads a usage scenario from a file path or a shipped name
/// (`camera-image`).
pub fn load_usage(spec: &str) -> Result<UsageScenario, ConfigError> {
    let usage: UsageScenario = load_plain(spec, BUILTIN_USAGE)?;
    usage.validate().map_err(|e| ConfigError::Invalid {
        location: spec.to_string(),
        key: e.field.to_string(),
        reason: e.to_string(),
    })?;
    Ok(usage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    #[test]
    fn every_builtin_scenario_loads() {
        for (name, _) in BUILTIN_SCENARIOS {
            let c = builtin_scenario(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&c.name, name);
        }
    }

    #[test]
    fn scenario_file_on_disk() {
        let c = load_config(fixture_dir().join("scenarios/greengrass-image.toml")).unwrap();
        assert_eq!(c.platform_profile, "greengrass");
        assert_eq!(c.pipeline, Pipeline::Edge);
        assert_eq!(c.workload.items, 500);
    }

    #[test]
    fn unknown_key_is_named() {
        let text =
            "extends = \"azureedge-audio\"\nname = \"typo\"\nseed = 1\n[hub]\nwindw_s = 90\n";
        let err = load_config_str(text, "typo.toml", None).unwrap_err();
        match err {
            ConfigError::UnknownKey { key, location } => {
                assert_eq!(key, "hub.windw_s");
                assert_eq!(location, "typo.toml");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_top_level_key() {
        let text = "extends = \"greengrass-audio\"\nname = \"x\"\nseed = 1\ncolour = 3\n";
        let err = load_config_str(text, "x.toml", None).unwrap_err();
        assert!(
            matches!(err, ConfigError::UnknownKey { ref key, .. } if key == "colour"),
            "{err}"
        );
    }

    #[test]
    fn short_window_rejected_when_platform_faithful() {
        let text =
            "extends = \"azureedge-audio\"\nname = \"short\"\nseed = 1\n[hub]\nwindow_s = 30\n";
        let err = load_config_str(text, "short.toml", None).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Invalid { .. }), "{msg}");
        assert!(msg.contains("60"), "{msg}");

        let text = "extends = \"azureedge-audio\"\nname = \"short\"\nseed = 1\n[hub]\nwindow_s = 30\nplatform_faithful = false\n";
        assert!(load_config_str(text, "short.toml", None).is_ok());
    }

    #[test]
    fn missing_profile_names_referrer() {
        let err = load_config_str("extends = \"nope\"\n", "a.toml", None).unwrap_err();
        assert!(
            matches!(err, ConfigError::MissingProfile { ref name, ref referenced_from } if name == "nope" && referenced_from == "a.toml"),
            "{err}"
        );
    }

    #[test]
    fn cycles_detected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.toml"), "extends = \"b\"\n").unwrap();
        fs::write(dir.path().join("b.toml"), "extends = \"a\"\n").unwrap();
        let err = load_config(dir.path().join("a.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::ProfileCycle { .. }), "{err}");
    }

    #[test]
    fn local_profiles_shadow_builtins() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("audio.toml"),
            "[workload]\nkind = \"audio\"\nitems = 7\ncompute_ms = { constant = 1 }\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("run.toml"),
            "extends = [\"greengrass\", \"audio\"]\nname = \"local\"\nseed = 3\n",
        )
        .unwrap();
        let c = load_config(dir.path().join("run.toml")).unwrap();
        assert_eq!(c.workload.items, 7);
    }

    #[test]
    fn values_replace_whole() {
        let text = "extends = \"greengrass-audio\"\nname = \"x\"\nseed = 1\n[workload]\ncompute_ms = { uniform = { min = 1, max = 2 } }\n";
        let c = load_config_str(text, "x.toml", None).unwrap();
        assert_eq!(
            c.workload.compute_ms,
            crate::dist::Distribution::Uniform { min: 1.0, max: 2.0 }
        );
    }

    #[test]
    fn seed_required_in_virtual_mode() {
        let text = "extends = \"greengrass-audio\"\nname = \"x\"\n";
        let err = load_config_str(text, "x.toml", None).unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid { ref key, .. } if key == "seed"),
            "{err}"
        );
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = load_config_str("name = [", "broken.toml", None).unwrap_err();
        assert!(
            matches!(err, ConfigError::ParseError { ref location, .. } if location == "broken.toml")
        );
        let text = "extends = \"greengrass-audio\"\nname = \"x\"\nseed = 1\n[workload]\nitems = \"many\"\n";
        let err = load_config_str(text, "x.toml", None).unwrap_err();
        assert!(
            matches!(err, ConfigError::ParseError { ref key, .. } if key.as_deref() == Some("workload.items")),
            "{err}"
        );
    }

    #[test]
    fn toml_round_trip() {
        for (name, _) in BUILTIN_SCENARIOS {
            let c = builtin_scenario(name).unwrap();
            let again = load_config_str(&c.to_toml_string(), "roundtrip.toml", None)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(c, again);
            assert_eq!(c.fingerprint(), again.fingerprint());
        }
    }

    #[test]
    fn json_round_trip_keeps_fingerprint() {
        let c = builtin_scenario("azureedge-image").unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.fingerprint(), back.fingerprint());
    }

    #[test]
    fn cost_inputs_load_by_name() {
        let card = load_rate_card("us-east-2018").unwrap();
        assert_eq!(card.name.as_deref(), Some("us-east-2018"));
        let usage = load_usage("camera-image").unwrap();
        assert_eq!(usage.messages_per_month, 259_200);
        assert!(load_rate_card("no-such-card").is_err());
    }
}
