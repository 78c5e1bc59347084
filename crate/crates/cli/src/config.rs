//! `--config <path>`: a key=value file whose entries act as flags given before the
//! command line's own, so explicit flags win.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Flags that take no value; `key=true` enables them, `key=false` drops them.
const SWITCHES: &[&str] = &["exact-inner", "warmstart", "no-refresh", "identical-shards"];

pub fn parse_config(text: &str) -> Result<Vec<String>> {
    let mut flags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {raw:?}", i + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("config line {}: bad key {key:?}", i + 1);
        }
        if SWITCHES.contains(&key.as_str()) {
            match value {
                "true" | "1" | "yes" => flags.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                _ => bail!("config line {}: {key} expects true or false", i + 1),
            }
        } else {
            flags.push(format!("--{key}"));
            flags.push(value.to_owned());
        }
    }
    Ok(flags)
}

/// Removes `--config` from `args` and splices the file's flags in right after the
/// subcommand name.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_owned());
        } else {
            out.push(a);
        }
    }
    let Some(path) = config else { return Ok(out) };
    let text = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let flags = parse_config(&text).with_context(|| format!("in config {path}"))?;
    // first non-flag argument after the binary name is the subcommand
    let at = out.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 2).unwrap_or(out.len());
    out.splice(at..at, flags);
    Ok(out)
}
