//! Command-line front end: `generate | train | eval | infer | render`.
//!
//! Global flags: `--config PATH`, `--seed N`, `--force`; trailing
//! `key=value` pairs override config entries. `RAFD_THREADS` caps worker
//! count (default 1).

pub mod commands;
pub mod config;
pub mod ppm;

use rafd_core::error::{Error, Result};

use config::RunConfig;

const USAGE: &str = "usage: rafd <generate|train|eval|infer|render> \
[--config PATH] [--seed N] [--force] [key=value ...]";

pub fn run(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        return Err(Error::InvalidConfig(USAGE.into()));
    };
    let mut cfg_path: Option<String> = None;
    let mut seed_override: Option<u64> = None;
    let mut force = false;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        match args[i].as_str() {
            "--config" => {
                i += 1;
                cfg_path = Some(args.get(i).cloned().ok_or_else(|| {
                    Error::InvalidConfig("--config needs a path".into())
                })?);
            }
            "--seed" => {
                i += 1;
                let v = args
                    .get(i)
                    .ok_or_else(|| Error::InvalidConfig("--seed needs a value".into()))?;
                seed_override = Some(v.parse().map_err(|_| {
                    Error::InvalidConfig(format!("--seed: bad integer {v:?}"))
                })?);
            }
            "--force" => force = true,
            other => {
                if let Some((k, v)) = other.split_once('=') {
                    overrides.push((k.trim().to_string(), v.trim().to_string()));
                } else {
                    return Err(Error::InvalidConfig(format!(
                        "unexpected argument {other:?}\n{USAGE}"
                    )));
                }
            }
        }
        i += 1;
    }

    let mut cfg = match cfg_path {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(&path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {path:?}: {e}"))
        })?)?,
        None => RunConfig::default(),
    };
    for (k, v) in &overrides {
        cfg.set_key(k, v)?;
    }
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;

    match command.as_str() {
        "generate" => commands::cmd_generate(&cfg, force),
        "train" => commands::cmd_train(&cfg),
        "eval" => commands::cmd_eval(&cfg),
        "infer" => commands::cmd_infer(&cfg),
        "render" => commands::cmd_render(&cfg),
        other => Err(Error::InvalidConfig(format!(
            "unknown command {other:?}\n{USAGE}"
        ))),
    }
}
