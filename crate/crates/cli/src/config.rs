//! Flat `key = value` config files.
//!
//! Each key becomes the long flag of the same name and is inserted right
//! after the subcommand, so flags given on the command line win. `true`
//! turns a key into a bare switch; `false` drops it.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use rfkit::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = k.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("bad key `{}`", k.trim()),
            });
        }
        out.push((key.replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn as_flags(pairs: Vec<(String, String)>) -> Vec<OsString> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => out.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{k}").into());
                out.push(v.into());
            }
        }
    }
    out
}

fn config_path(args: &[OsString]) -> Option<(usize, usize, OsString)> {
    args.iter().enumerate().find_map(|(i, a)| {
        let s = a.to_str()?;
        if s == "--config" {
            args.get(i + 1).map(|p| (i, 2, p.clone()))
        } else {
            s.strip_prefix("--config=").map(|p| (i, 1, p.into()))
        }
    })
}

/// Splices the keys of the `--config` file (if any) into `args`, after the
/// first argument naming one of `subcommands`.
pub fn expand(mut args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let Some((at, len, path)) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let flags = as_flags(parse(&text)?);
    args.drain(at..at + len);
    let insert = args
        .iter()
        .skip(1)
        .position(|a| a.to_str().is_some_and(|s| subcommands.contains(&s)))
        .map_or(args.len(), |p| p + 2);
    args.splice(insert..insert, flags);
    Ok(args)
}
