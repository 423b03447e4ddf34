//! Config files are turned into flags placed before the user's own flags,
//! so later occurrences (the command line) win.

use std::ffi::OsString;
use std::path::Path;

use clap::{CommandFactory, Parser};
use toml::{Table, Value};

use crate::args::{Cli, SUBCOMMANDS};
use crate::CliError;

pub fn parse(argv: Vec<OsString>) -> Result<Cli, CliError> {
    let cli = Cli::try_parse_from(&argv)?;
    let Some(path) = cli.config.clone() else {
        return Ok(cli);
    };
    let sub = cli.command.name();
    let extra = config_flags(&path, sub)?;
    let pos = argv
        .iter()
        .skip(1)
        .position(|a| a.to_str() == Some(sub))
        .map(|i| i + 2)
        .ok_or_else(|| CliError::Usage(format!("subcommand `{sub}` not found in arguments")))?;
    let mut merged = argv[..pos].to_vec();
    merged.extend(extra.into_iter().map(OsString::from));
    merged.extend_from_slice(&argv[pos..]);
    Ok(Cli::try_parse_from(merged)?)
}

fn config_flags(path: &Path, sub: &str) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    let table: Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    let accepted = long_flags(sub);
    let mut out = Vec::new();
    for (key, value) in &table {
        match value {
            Value::Table(_) if SUBCOMMANDS.contains(&key.as_str()) => {}
            Value::Table(_) => {
                return Err(CliError::Usage(format!(
                    "--config {}: unknown section [{key}]",
                    path.display()
                )))
            }
            // shared keys are skipped by subcommands without that flag
            v if accepted.iter().any(|f| f == key) => push_flag(&mut out, key, v, path)?,
            _ if !any_subcommand_accepts(key) => {
                return Err(CliError::Usage(format!(
                    "--config {}: `{key}` is not a flag of any subcommand",
                    path.display()
                )))
            }
            _ => {}
        }
    }
    if let Some(Value::Table(section)) = table.get(sub) {
        for (key, value) in section {
            push_flag(&mut out, key, value, path)?;
        }
    }
    Ok(out)
}

fn long_flags(sub: &str) -> Vec<String> {
    Cli::command()
        .find_subcommand(sub)
        .map(|c| {
            c.get_arguments()
                .filter_map(|a| a.get_long())
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default()
}

fn any_subcommand_accepts(key: &str) -> bool {
    SUBCOMMANDS
        .iter()
        .any(|s| long_flags(s).iter().any(|f| f == key))
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Integer(i) => Some(i.to_string()),
        Value::Float(f) => Some(f.to_string()),
        _ => None,
    }
}

fn push_flag(out: &mut Vec<String>, key: &str, value: &Value, path: &Path) -> Result<(), CliError> {
    let flag = format!("--{key}");
    match value {
        Value::Boolean(true) => out.push(flag),
        Value::Boolean(false) => {}
        Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
            let parts = parts.ok_or_else(|| {
                CliError::Usage(format!(
                    "--config {}: `{key}` must hold scalars",
                    path.display()
                ))
            })?;
            out.push(format!("{flag}={}", parts.join(",")));
        }
        v => match scalar(v) {
            Some(s) => out.push(format!("{flag}={s}")),
            None => {
                return Err(CliError::Usage(format!(
                    "--config {}: unsupported value for `{key}`",
                    path.display()
                )))
            }
        },
    }
    Ok(())
}
