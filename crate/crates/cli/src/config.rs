//! `key = value` config files merged into the command line.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", k + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", k + 1);
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

fn flag_given(args: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("--{long}=");
    args.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == flag || a.starts_with(&prefix))
}

/// Removes `--config PATH` from `args` and inserts the file's settings after
/// the subcommand, skipping any key also given as a flag.
pub fn expand_config(args: Vec<OsString>, command: &Command) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        match a.to_str() {
            Some("--config") => {
                path = Some(iter.next().context("--config needs a path")?);
            }
            Some(s) if s.starts_with("--config=") => path = Some(OsString::from(&s[9..])),
            _ => rest.push(a),
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config {}", Path::new(&path).display()))?;
    let settings = parse_config(&text)?;

    let Some(pos) = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 1) else {
        bail!("--config needs a subcommand");
    };
    let name = rest[pos].to_string_lossy().into_owned();
    let Some(sub) = command.find_subcommand(&name) else {
        return Ok(rest);
    };
    let mut injected = Vec::new();
    for (key, value) in settings {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            bail!("config key `{key}` is not an option of `{name}`");
        };
        if flag_given(&rest, &key) {
            continue;
        }
        if arg.get_action().takes_values() {
            for v in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                injected.push(OsString::from(format!("--{key}={v}")));
            }
        } else {
            match value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => injected.push(OsString::from(format!("--{key}"))),
                "false" | "no" | "0" => {}
                other => bail!("config key `{key}` expects true or false, got `{other}`"),
            }
        }
    }
    rest.splice(pos + 1..pos + 1, injected);
    Ok(rest)
}
