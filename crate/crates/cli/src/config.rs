//! Flat key-value config files and budget parsing.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored. Keys use the same names as the long command-line
//! flags (without the leading dashes). Flags always win over the file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scalq::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: HashMap<String, String>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    #[cfg(test)]
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidConfig(format!("config key `{key}`: cannot parse `{v}`"))
            }),
        }
    }
}

/// Flag wins; otherwise the config file; otherwise `None`.
pub fn resolve<T: FromStr>(flag: Option<T>, settings: &Settings, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => settings.parsed(key),
    }
}

/// As `resolve`, but the value must come from somewhere.
pub fn require<T: FromStr>(flag: Option<T>, settings: &Settings, key: &str) -> Result<T> {
    resolve(flag, settings, key)?.ok_or_else(|| {
        Error::InvalidConfig(format!("missing `--{key}` (or config key `{key}`)"))
    })
}

pub fn resolve_path(
    flag: Option<PathBuf>,
    settings: &Settings,
    key: &str,
) -> Result<Option<PathBuf>> {
    Ok(resolve::<PathBuf>(flag, settings, key)?)
}

pub fn require_path(flag: Option<PathBuf>, settings: &Settings, key: &str) -> Result<PathBuf> {
    require::<PathBuf>(flag, settings, key)
}

/// Bits per unit under the 1 KB = 1024 bytes convention.
const KB_BITS: f64 = 8.0 * 1024.0;
const MB_BITS: f64 = 8.0 * 1024.0 * 1024.0;

/// Parse a budget like `200KB`, `1.5MB`, or `123456b` into bits.
pub fn parse_budget(text: &str) -> Result<u64> {
    let t = text.trim();
    let lower = t.to_ascii_lowercase();
    let (number, scale) = if let Some(rest) = lower.strip_suffix("kb") {
        (rest, KB_BITS)
    } else if let Some(rest) = lower.strip_suffix("mb") {
        (rest, MB_BITS)
    } else if let Some(rest) = lower.strip_suffix('b') {
        (rest, 1.0)
    } else {
        return Err(Error::InvalidConfig(format!(
            "budget `{text}` needs a unit suffix: b, KB, or MB (1 KB = 1024 bytes)"
        )));
    };
    let value: f64 = number.trim().parse().map_err(|_| {
        Error::InvalidConfig(format!("budget `{text}`: cannot parse the number"))
    })?;
    let bits = (value * scale).floor();
    if !(bits >= 1.0) || !bits.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "budget `{text}` must be at least one bit"
        )));
    }
    Ok(bits as u64)
}

/// Human-readable size with the convention spelled out by `budget_note`.
pub fn format_kb(bits: u64) -> String {
    format!("{:.2} KB", bits as f64 / KB_BITS)
}

pub fn budget_note() -> &'static str {
    "1 KB = 1024 bytes = 8192 bits"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_budget_suffixes() {
        assert_eq!(parse_budget("200KB").unwrap(), 200 * 8192);
        assert_eq!(parse_budget("200 kb").unwrap(), 200 * 8192);
        assert_eq!(parse_budget("2MB").unwrap(), 2 * 8 * 1024 * 1024);
        assert_eq!(parse_budget("12345b").unwrap(), 12345);
        assert_eq!(parse_budget("0.5KB").unwrap(), 4096);
        assert!(parse_budget("200").is_err());
        assert!(parse_budget("xKB").is_err());
        assert!(parse_budget("0b").is_err());
    }

    #[test]
    fn config_file_grammar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("job.cfg");
        std::fs::write(
            &path,
            "# a job\nmodel = toy.sqnm\nconv-bits = 8\n\nbudget = 200KB # inline comment\n",
        )
        .unwrap();
        let s = Settings::load(&path).unwrap();
        assert_eq!(s.raw("model"), Some("toy.sqnm"));
        assert_eq!(s.parsed::<u16>("conv-bits").unwrap(), Some(8));
        assert_eq!(s.raw("budget"), Some("200KB"));
        assert_eq!(s.raw("missing"), None);

        std::fs::write(&path, "not a pair\n").unwrap();
        assert!(Settings::load(&path).is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let s = Settings {
            values: [("conv-bits".to_string(), "8".to_string())].into(),
        };
        assert_eq!(resolve(Some(10u16), &s, "conv-bits").unwrap(), Some(10));
        assert_eq!(resolve(None::<u16>, &s, "conv-bits").unwrap(), Some(8));
        assert!(require(None::<u16>, &s, "fc-bits").is_err());
    }
}
