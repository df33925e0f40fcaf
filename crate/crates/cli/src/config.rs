//! Option resolution: built-in defaults, then a `key=value` config file,
//! then explicit command-line flags, strongest last. Relative output paths
//! resolve against `SETNAS_OUT_DIR` when it is set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Parsed `key=value` file (lines starting with `#` are comments).
#[derive(Clone, Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let raw = fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            for (lineno, line) in raw.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                match line.split_once('=') {
                    Some((k, v)) => {
                        values.insert(k.trim().to_string(), v.trim().to_string());
                    }
                    None => bail!(
                        "config file {}: line {} is not key=value",
                        path.display(),
                        lineno + 1
                    ),
                }
            }
        }
        Ok(FileConfig { values })
    }

    /// Flag value if given, else config-file value, else the default.
    pub fn resolve<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| anyhow::anyhow!("config key {key}={raw}: {e}")),
            None => Ok(default),
        }
    }
}

/// Resolve an output path against `SETNAS_OUT_DIR` for relative paths.
pub fn out_path(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os("SETNAS_OUT_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(p),
        _ => p.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        fs::write(&path, "# comment\nepochs = 7\nlr=0.5\n").unwrap();
        let cfg = FileConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.resolve::<usize>(None, "epochs", 3).unwrap(), 7);
        assert_eq!(cfg.resolve::<usize>(Some(9), "epochs", 3).unwrap(), 9);
        assert_eq!(cfg.resolve::<usize>(None, "missing", 3).unwrap(), 3);
        assert_eq!(cfg.resolve::<f64>(None, "lr", 0.1).unwrap(), 0.5);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        fs::write(&path, "epochs\n").unwrap();
        assert!(FileConfig::load(Some(&path)).is_err());
    }
}
