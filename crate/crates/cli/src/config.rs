//! Experiment configuration: INI sections of `key = value` pairs checked
//! against a fixed schema. Missing keys take defaults, unknown sections or
//! keys are rejected, and the fully resolved set can be written back out.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::CliError;

/// `(section, key, default)` in the order they are written back.
const SCHEMA: &[(&str, &str, &str)] = &[
    ("experiment", "seed", "0"),
    ("experiment", "slices", "1"),
    ("phantom", "size", "64"),
    ("phantom", "kind", "random"),
    ("phantom", "phase", "0"),
    ("coils", "count", "8"),
    ("coils", "width", "0.45"),
    ("mask", "kind", "uniform"),
    ("mask", "acceleration", "4"),
    ("mask", "acs", "16"),
    ("mask", "density", "0.25"),
    ("noise", "sigma", "0.01"),
    ("recon", "sensitivities", "true"),
    ("recon", "cg_tol", "5e-5"),
    ("recon", "cg_max_iter", "30"),
    ("recon", "tv_lambda", "0.002"),
    ("recon", "tv_iter", "300"),
    ("recon", "tgv_lambda", "0.002"),
    ("recon", "tgv_iter", "300"),
    ("recon", "grappa_bx", "2"),
    ("recon", "grappa_by", "1"),
    ("recon", "grappa_tikhonov", "1e-6"),
    ("recon", "spirit_beta", "1"),
    ("recon", "spirit_iter", "100"),
    ("recon", "spirit_tikhonov", "1e-3"),
    ("raki", "epochs", "500"),
    ("raki", "lr", "1e-3"),
    ("raki", "seed", "0"),
    ("unrolled", "stages", "5"),
    ("unrolled", "filters", "8"),
    ("unrolled", "taps", "7"),
    ("unrolled", "rbf_centers", "31"),
    ("unrolled", "weight_sharing", "false"),
    ("unrolled", "epochs", "200"),
    ("unrolled", "lr", "1e-3"),
    ("unrolled", "batch", "0"),
    ("unrolled", "seed", "0"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self { values: SCHEMA.iter().map(|(_, _, d)| d.to_string()).collect() }
    }
}

fn slot(section: &str, key: &str) -> Option<usize> {
    SCHEMA.iter().position(|(s, k, _)| *s == section && *k == key)
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::MissingFile(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::BadConfig(e.to_string()))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                cfg.set(section, key, value)?;
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        let i = slot(section, key).ok_or_else(|| {
            if section.is_empty() {
                CliError::BadConfig(format!("key {key:?} outside any section"))
            } else {
                CliError::BadConfig(format!("unknown key {key:?} in section [{section}]"))
            }
        })?;
        self.values[i] = value.trim().to_string();
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (path, value) = spec.split_once('=').ok_or_else(|| CliError::BadConfig(format!("override {spec:?} is not section.key=value")))?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| CliError::BadConfig(format!("override {spec:?} is not section.key=value")))?;
        self.set(section, key, value)
    }

    pub fn raw(&self, section: &str, key: &str) -> &str {
        &self.values[slot(section, key).unwrap_or_else(|| panic!("{section}.{key} is not in the schema"))]
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T, CliError> {
        let raw = self.raw(section, key);
        raw.parse().map_err(|_| CliError::BadConfig(format!("[{section}] {key} = {raw:?} is not a valid {}", std::any::type_name::<T>())))
    }

    /// Finite float satisfying `ok`.
    pub fn real(&self, section: &str, key: &str, ok: impl Fn(f64) -> bool, what: &str) -> Result<f64, CliError> {
        let v: f64 = self.get(section, key)?;
        if !v.is_finite() || !ok(v) {
            return Err(CliError::BadConfig(format!("[{section}] {key} = {v} must be {what}")));
        }
        Ok(v)
    }

    pub fn count(&self, section: &str, key: &str, min: usize) -> Result<usize, CliError> {
        let v: usize = self.get(section, key)?;
        if v < min {
            return Err(CliError::BadConfig(format!("[{section}] {key} = {v} must be at least {min}")));
        }
        Ok(v)
    }

    pub fn choice<'a>(&self, section: &str, key: &str, options: &[&'a str]) -> Result<&'a str, CliError> {
        let raw = self.raw(section, key);
        options
            .iter()
            .find(|o| **o == raw)
            .copied()
            .ok_or_else(|| CliError::BadConfig(format!("[{section}] {key} = {raw:?} must be one of {options:?}")))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for ((section, key, _), value) in SCHEMA.iter().zip(&self.values) {
            if *section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.render()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
