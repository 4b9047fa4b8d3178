use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use swapsim::interference::BsmParams;
use swapsim::mc::{ApparatusConfig, Setup};
use swapsim::source::SourceParams;
use swapsim::tomography::{SettingSet, DEFAULT_BOOTSTRAP_RESAMPLES};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyConfig {
    pub settings: usize,
    pub bootstrap: usize,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self { settings: 16, bootstrap: DEFAULT_BOOTSTRAP_RESAMPLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("."), format: Format::Csv }
    }
}

/// Everything a run depends on. Output placement is excluded from the hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub source: SourceParams,
    pub bsm: BsmParams,
    pub apparatus: ApparatusConfig,
    pub tomography: TomographyConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bsm = BsmParams::default();
        let apparatus = ApparatusConfig { jitter_fwhm_ps: bsm.jitter_ps, ..Default::default() };
        Self {
            seed: DEFAULT_SEED,
            source: SourceParams::default(),
            bsm,
            apparatus,
            tomography: TomographyConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`, and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.setup().validate().map_err(|e| CliError::Config(e.to_string()))?;
        SettingSet::from_count(self.tomography.settings).map_err(|e| CliError::Config(e.to_string()))?;
        if self.tomography.bootstrap < 100 {
            return Err(CliError::Config(format!(
                "tomography.bootstrap = {} is below the minimum of 100",
                self.tomography.bootstrap
            )));
        }
        Ok(())
    }

    pub fn setup(&self) -> Setup {
        Setup { source: self.source.clone(), bsm: self.bsm.clone(), apparatus: self.apparatus.clone() }
    }

    /// SHA-256 over the physics and analysis sections.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&(&self.source, &self.bsm, &self.apparatus, &self.tomography))
            .expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 9\n[source]\nf1 = 0.95\n[bsm]\ngate_ps = 47.0\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.source.f1, 0.95);
        assert_eq!(cfg.source.f2, SourceParams::default().f2);
        assert_eq!(cfg.bsm.gate_ps, Some(47.0));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[source]\nf3 = 0.9\n").is_err());
        assert!(toml::from_str::<RunConfig>("[extra]\nx = 1\n").is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bsm": {"gate": 3}}"#).is_err());
    }

    #[test]
    fn physical_constraints_checked_at_load() {
        let mut cfg = RunConfig::default();
        cfg.source.f1 = 1.2;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.tomography.settings = 20;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_and_seed() {
        let a = RunConfig::default();
        let b =
            RunConfig { seed: 5, output: OutputConfig { dir: "elsewhere".into(), format: Format::Json }, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.bsm.indistinguishability = 0.6;
        assert_ne!(a.hash(), c.hash());
    }
}
