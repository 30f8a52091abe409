//! JSON run configuration.
//!
//! Keys mirror [`SimConfig`]; every key is optional. Values are layered:
//! built-in defaults, then the named `preset` (if any), then explicit keys.
//! Command-line overrides are applied on top by the caller.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{hosts_from_rates, GatewayKind, SimConfig};

pub const NETWORK1_RATES: [u32; 6] = [2, 3, 2, 1, 6, 4];
pub const NETWORK2_RATES: [u32; 6] = [14, 7, 4, 5, 12, 3];

pub const PRESET_NAMES: [&str; 2] = ["network1", "network2"];

/// On-disk form. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hosts: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<GatewayKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maxth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maxp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_count_correction: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_states: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_rate: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_activation_prob: Option<f64>,
}

/// The bundled preset with the given name.
pub fn preset(name: &str) -> Result<SimConfig> {
    let rates: &[u32] = match name {
        "network1" => &NETWORK1_RATES,
        "network2" => &NETWORK2_RATES,
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown preset `{other}`, expected one of {PRESET_NAMES:?}"),
            ))
        }
    };
    Ok(SimConfig {
        hosts: hosts_from_rates(rates),
        ..SimConfig::default()
    })
}

/// JSON text of a preset, written out in full.
pub fn preset_json(name: &str) -> Result<String> {
    let config = preset(name)?;
    let file = ConfigFile::from(&config);
    Ok(serde_json::to_string_pretty(&file).expect("config serializes") + "\n")
}

impl From<&SimConfig> for ConfigFile {
    fn from(c: &SimConfig) -> Self {
        ConfigFile {
            preset: None,
            hosts: Some(c.hosts.iter().map(|h| h.rate).collect()),
            steps: Some(c.steps),
            seed: Some(c.seed),
            gateway: Some(c.gateway),
            minth: Some(c.red_params.minth),
            maxth: Some(c.red_params.maxth),
            maxp: Some(c.red_params.maxp),
            w_q: Some(c.red_params.w_q),
            use_count_correction: Some(c.red_params.use_count_correction),
            n_states: Some(c.n_states),
            dt: Some(c.dt),
            substeps: Some(c.substeps),
            service_rate: Some(c.service_rate),
            host_activation_prob: Some(c.host_activation_prob),
        }
    }
}

impl ConfigFile {
    /// Applies defaults and the preset, then validates.
    pub fn resolve(&self) -> Result<SimConfig> {
        let mut c = match &self.preset {
            Some(name) => preset(name)?,
            None => SimConfig::default(),
        };
        if let Some(hosts) = &self.hosts {
            c.hosts = hosts_from_rates(hosts);
        }
        let p = &mut c.red_params;
        set(&mut c.steps, self.steps);
        set(&mut c.seed, self.seed);
        set(&mut c.gateway, self.gateway);
        set(&mut p.minth, self.minth);
        set(&mut p.maxth, self.maxth);
        set(&mut p.maxp, self.maxp);
        set(&mut p.w_q, self.w_q);
        set(&mut p.use_count_correction, self.use_count_correction);
        set(&mut c.n_states, self.n_states);
        set(&mut c.dt, self.dt);
        set(&mut c.substeps, self.substeps);
        set(&mut c.service_rate, self.service_rate);
        set(&mut c.host_activation_prob, self.host_activation_prob);
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn parse_config_str(text: &str, path: &Path) -> Result<SimConfig> {
    let file: ConfigFile = serde_json::from_str(text).map_err(|source| Error::Syntax {
        path: path.to_path_buf(),
        source,
    })?;
    file.resolve()
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path)
}

/// A labelled run and where its CSV goes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: SimConfig,
    pub label: String,
    pub output_path: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(
        config: SimConfig,
        label: impl Into<String>,
        output_path: Option<PathBuf>,
    ) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::config("label", "must not be empty"));
        }
        config.validate()?;
        Ok(RunManifest {
            config,
            label,
            output_path,
        })
    }
}
