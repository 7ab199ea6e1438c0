//! JSON config files for subcommands.
//!
//! A config is a flat JSON object whose keys are the subcommand's long flag
//! names (either `snake_case` or `kebab-case`). Its entries are spliced into
//! argv directly after the subcommand, ahead of the user's own flags; clap is
//! configured so that a later occurrence overrides an earlier one, which makes
//! command-line flags win over the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

/// Converts one config object to `--flag=value` tokens.
pub fn config_tokens(config: &Value) -> Result<Vec<String>> {
    let Value::Object(map) = config else {
        bail!("config file must hold a JSON object");
    };
    let mut out = Vec::with_capacity(map.len());
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        let text = match value {
            Value::Null => continue,
            Value::Bool(b) => b.to_string(),
            Value::Number(n) => n.to_string(),
            Value::String(s) => s.clone(),
            Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    other => bail!("config key {key:?}: unsupported list item {other}"),
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
            Value::Object(_) => bail!("config key {key:?}: nested objects are not supported"),
        };
        out.push(format!("{flag}={text}"));
    }
    Ok(out)
}

/// Returns argv with the contents of every `--config FILE` spliced in right
/// after the subcommand word. The `--config` tokens themselves are removed.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut files = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            files.push(iter.next().context("--config needs a file path")?);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            files.push(path.to_string());
        } else {
            rest.push(arg);
        }
    }
    if files.is_empty() {
        return Ok(rest);
    }
    // program name, then the subcommand word
    let Some(position) = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 2) else {
        bail!("--config given without a subcommand");
    };
    let mut injected = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(Path::new(&file)).with_context(|| format!("reading config {file}"))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {file}"))?;
        injected.extend(config_tokens(&value)?);
    }
    rest.splice(position..position, injected);
    Ok(rest)
}
