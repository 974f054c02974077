//! Minimal `--name value` flag parsing with config-key passthrough.

use std::collections::BTreeMap;

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Default)]
pub struct Flags {
    map: BTreeMap<String, String>,
}

impl Flags {
    /// Parses `--name value` and `--name=value` pairs; a flag followed by
    /// another flag (or nothing) becomes the boolean "true".
    pub fn parse(args: &[String]) -> Result<Flags, CliError> {
        let mut map = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let name = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::Config(format!("unexpected argument {arg:?}")))?;
            if let Some((k, v)) = name.split_once('=') {
                map.insert(k.to_string(), v.to_string());
                i += 1;
                continue;
            }
            if i + 1 < args.len() && !args[i + 1].starts_with("--") {
                map.insert(name.to_string(), args[i + 1].clone());
                i += 2;
            } else {
                map.insert(name.to_string(), "true".to_string());
                i += 1;
            }
        }
        Ok(Flags { map })
    }

    pub fn take(&mut self, name: &str) -> Option<String> {
        self.map.remove(name)
    }

    pub fn take_required(&mut self, name: &str) -> Result<String, CliError> {
        self.take(name)
            .ok_or_else(|| CliError::Config(format!("missing required flag --{name}")))
    }

    pub fn take_bool(&mut self, name: &str) -> bool {
        matches!(self.take(name).as_deref(), Some("true") | Some("1"))
    }

    pub fn take_usize(&mut self, name: &str, default: usize) -> Result<usize, CliError> {
        match self.take(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("--{name}: bad integer {v:?}"))),
        }
    }

    pub fn take_u64(&mut self, name: &str, default: u64) -> Result<u64, CliError> {
        match self.take(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("--{name}: bad integer {v:?}"))),
        }
    }

    pub fn take_f64(&mut self, name: &str, default: f64) -> Result<f64, CliError> {
        match self.take(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("--{name}: bad number {v:?}"))),
        }
    }

    /// Remaining flags become config-key overrides (`--embed-mode x`
    /// sets `embed_mode = x`); unknown keys are rejected.
    pub fn apply_overrides(self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        for (k, v) in self.map {
            cfg.set(&k.replace('-', "_"), &v)?;
        }
        Ok(())
    }

    /// For commands without a config: any leftover flag is an error.
    pub fn reject_unknown(self) -> Result<(), CliError> {
        if let Some((k, _)) = self.map.into_iter().next() {
            return Err(CliError::Config(format!("unknown flag --{k}")));
        }
        Ok(())
    }
}
