//! `--config <path>` support: a JSON object whose keys are flag names.
//!
//! Config entries are spliced into argv right after the subcommand, except
//! for flags that also appear on the command line.

use std::collections::BTreeSet;
use std::ffi::OsString;

use serde_json::Value;

use crate::CliError;

fn flag_name(key: &str) -> String {
    key.trim_start_matches("--").replace('_', "-")
}

fn scalar(key: &str, v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(CliError::config(format!(
            "config key `{key}`: unsupported value {other}"
        ))),
    }
}

fn to_flags(key: &str, v: &Value) -> Result<Vec<String>, CliError> {
    let flag = format!("--{}", flag_name(key));
    Ok(match v {
        Value::Null | Value::Bool(false) => Vec::new(),
        Value::Bool(true) => vec![flag],
        Value::Array(items) => {
            let parts = items.iter().map(|i| scalar(key, i)).collect::<Result<Vec<_>, _>>()?;
            vec![flag, parts.join(",")]
        }
        other => vec![flag, scalar(key, other)?],
    })
}

/// Returns argv with any `--config` file expanded in place.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            let path = it.next().ok_or_else(|| CliError::config("--config needs a path"))?;
            config = Some(path);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(OsString::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    // the subcommand is the first token after the binary name that is not a flag
    let Some(sub_idx) = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 1)
    else {
        return Err(CliError::config("--config given without a subcommand"));
    };

    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::io(format!("reading config {}: {e}", path.to_string_lossy())))?;
    let json: Value =
        serde_json::from_str(&text).map_err(|e| CliError::io(format!("config {}: {e}", path.to_string_lossy())))?;
    let Value::Object(map) = json else {
        return Err(CliError::config("config file must hold a JSON object"));
    };

    let given: BTreeSet<String> = rest[sub_idx + 1..]
        .iter()
        .filter_map(|a| {
            let s = a.to_string_lossy();
            s.strip_prefix("--")
                .map(|f| f.split('=').next().unwrap_or_default().to_string())
        })
        .collect();

    let mut injected = Vec::new();
    for (k, v) in &map {
        if given.contains(&flag_name(k)) {
            continue;
        }
        injected.extend(to_flags(k, v)?.into_iter().map(OsString::from));
    }
    let tail = rest.split_off(sub_idx + 1);
    rest.extend(injected);
    rest.extend(tail);
    Ok(rest)
}
