//! Line-oriented run configuration.
//!
//! The grammar is deliberately small: `[section]` headers, `key = value`
//! pairs, and full-line `#` comments. Keys repeat; the last assignment
//! wins, which is also how command-line `--set section.key=value`
//! overrides work (they are appended after the file's own entries). Every
//! parse error carries the 1-based line number.
//!
//! A configuration's identity is the FNV-1a hash of its *effective*
//! entries (after last-wins resolution, sorted), so formatting, comments,
//! and override mechanics never change the hash — only the settings do.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// One `key = value` assignment and where it came from.
#[derive(Debug, Clone)]
pub struct Entry {
    pub section: String,
    pub key: String,
    pub value: String,
    /// 1-based source line; 0 for command-line overrides.
    pub line: usize,
}

/// A parsed configuration: ordered assignments with last-wins lookup.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: Vec<Entry>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == ':')
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    Error::config(format!("line {line}: unterminated section header `{trimmed}`"))
                })?;
                let name = name.trim();
                if !valid_name(name) {
                    return Err(Error::config(format!(
                        "line {line}: invalid section name `{name}`"
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::config(format!("line {line}: expected `key = value`, got `{trimmed}`"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !valid_name(key) {
                return Err(Error::config(format!("line {line}: invalid key `{key}`")));
            }
            if value.is_empty() {
                return Err(Error::config(format!("line {line}: empty value for `{key}`")));
            }
            let section = section.clone().ok_or_else(|| {
                Error::config(format!(
                    "line {line}: `{key}` appears before any [section] header"
                ))
            })?;
            entries.push(Entry { section, key: key.to_string(), value: value.to_string(), line });
        }
        Ok(ConfigFile { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read `{}`: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Append a `section.key=value` override; it wins over file entries.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec.split_once('=').ok_or_else(|| {
            Error::config(format!("override `{spec}` is not of the form section.key=value"))
        })?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| {
            Error::config(format!("override `{spec}` is not of the form section.key=value"))
        })?;
        let (section, key, value) = (section.trim(), key.trim(), value.trim());
        if !valid_name(section) || !valid_name(key) {
            return Err(Error::config(format!("override `{spec}` has an invalid name")));
        }
        if value.is_empty() {
            return Err(Error::config(format!("override `{spec}` has an empty value")));
        }
        self.entries.push(Entry {
            section: section.to_string(),
            key: key.to_string(),
            value: value.to_string(),
            line: 0,
        });
        Ok(())
    }

    /// Append every entry of `other`; later entries still win, so merged
    /// settings override same-keyed ones already present.
    pub fn merge(&mut self, other: &ConfigFile) {
        self.entries.extend(other.entries.iter().cloned());
    }

    /// Last assignment wins.
    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.section == section && e.key == key)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.entries.iter().any(|e| e.section == section)
    }

    fn context(entry: &Entry) -> String {
        if entry.line == 0 {
            format!("{}.{} (command-line)", entry.section, entry.key)
        } else {
            format!("{}.{} (line {})", entry.section, entry.key, entry.line)
        }
    }

    pub fn get_str(&self, section: &str, key: &str) -> Option<&str> {
        self.get(section, key).map(|e| e.value.as_str())
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                Error::config(format!("{}: `{}` is not a number", Self::context(e), e.value))
            }),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                Error::config(format!(
                    "{}: `{}` is not a non-negative integer",
                    Self::context(e),
                    e.value
                ))
            }),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        Ok(self.get_u64(section, key)?.map(|v| v as usize))
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => match e.value.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                other => Err(Error::config(format!(
                    "{}: `{other}` is not `true` or `false`",
                    Self::context(e)
                ))),
            },
        }
    }

    /// Comma-separated list; absent key gives an empty list.
    pub fn get_list(&self, section: &str, key: &str) -> Vec<String> {
        match self.get(section, key) {
            None => Vec::new(),
            Some(e) => e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        }
    }

    /// Effective settings after last-wins resolution, sorted.
    pub fn effective(&self) -> BTreeMap<(String, String), String> {
        self.entries
            .iter()
            .map(|e| ((e.section.clone(), e.key.clone()), e.value.clone()))
            .collect()
    }

    /// FNV-1a over the canonical `section.key=value` listing: stable under
    /// reformatting, comments, and redundant assignments.
    pub fn hash_hex(&self) -> String {
        let mut canonical = String::new();
        for ((section, key), value) in self.effective() {
            let _ = writeln!(canonical, "{section}.{key}={value}");
        }
        format!("{:016x}", fnv1a(canonical.as_bytes()))
    }

    /// Reject any entry outside the allowed `(section, keys)` table.
    pub fn validate_keys(&self, allowed: &[(&str, &[&str])]) -> Result<()> {
        for e in &self.entries {
            let Some((_, keys)) = allowed.iter().find(|(s, _)| *s == e.section) else {
                return Err(Error::config(format!(
                    "unknown section `[{}]` ({})",
                    e.section,
                    Self::context(e)
                )));
            };
            if !keys.contains(&e.key.as_str()) {
                return Err(Error::config(format!("unknown key {}", Self::context(e))));
            }
        }
        Ok(())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Keys understood in a `[model]` section.
pub const MODEL_KEYS: &[&str] =
    &["intercept", "linear", "rw1", "iid", "besag", "pc_median", "pc_override"];

/// Build a model specification from a `[model]` section.
pub fn model_spec(config: &ConfigFile) -> Result<ModelSpec> {
    if !config.has_section("model") {
        return Err(Error::config("no [model] section".to_string()));
    }
    let mut spec = ModelSpec::default();
    if let Some(v) = config.get_bool("model", "intercept")? {
        spec.intercept = v;
    }
    spec.linear_effects = config.get_list("model", "linear");
    for item in config.get_list("model", "rw1") {
        let entry = config.get("model", "rw1").unwrap();
        let (name, k) = item.split_once(':').ok_or_else(|| {
            Error::config(format!(
                "{}: `{item}` is not of the form covariate:classes",
                ConfigFile::context(entry)
            ))
        })?;
        let k: usize = k.trim().parse().map_err(|_| {
            Error::config(format!(
                "{}: `{item}` has a non-integer class count",
                ConfigFile::context(entry)
            ))
        })?;
        spec.rw1_effects.push((name.trim().to_string(), k));
    }
    spec.iid_effects = config.get_list("model", "iid");
    spec.besag_partition = config.get_str("model", "besag").map(str::to_string);
    if let Some(v) = config.get_f64("model", "pc_median")? {
        spec.pc_prior_median = v;
    }
    for item in config.get_list("model", "pc_override") {
        let entry = config.get("model", "pc_override").unwrap();
        let (block, median) = item.split_once('=').ok_or_else(|| {
            Error::config(format!(
                "{}: `{item}` is not of the form block=median",
                ConfigFile::context(entry)
            ))
        })?;
        let median: f64 = median.trim().parse().map_err(|_| {
            Error::config(format!(
                "{}: `{item}` has a non-numeric median",
                ConfigFile::context(entry)
            ))
        })?;
        spec.pc_prior_overrides.push((block.trim().to_string(), median));
    }
    Ok(spec)
}
