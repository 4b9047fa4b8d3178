use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn csv_header(&self) -> String {
        format!(
            "# {} {}\n# command={}\n# config_hash={}\n# seed={}\n",
            self.tool, self.version, self.command, self.config_hash, self.seed
        )
    }
}

/// JSON document with provenance as its first key.
#[derive(Serialize)]
pub struct Document<'a, T: Serialize> {
    pub provenance: &'a Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub struct Sink {
    dir: PathBuf,
}

impl Sink {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    /// Write-temp-then-rename within the output directory.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut tmp = NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        tmp.write_all(bytes).map_err(|e| CliError::io(&path, e))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(&path, e))?;
        // temp files are created owner-only
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let perms = std::fs::Permissions::from_mode(0o644);
            tmp.as_file().set_permissions(perms).map_err(|e| CliError::io(&path, e))?;
        }
        tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        eprintln!("wrote {}", path.display());
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, provenance: &Provenance, body: T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(&Document { provenance, body }).map_err(swapsim::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn csv(&self, name: &str, provenance: &Provenance, body: &str) -> Result<PathBuf, CliError> {
        self.write(name, format!("{}{body}", provenance.csv_header()).as_bytes())
    }
}
