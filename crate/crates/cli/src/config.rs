//! JSON config files. Keys are subcommand flag names (`max-depth` or
//! `max_depth`); values are spliced in ahead of the command-line flags, so
//! with `args_override_self` the command line wins any conflict.

use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, CommandFactory};
use serde_json::Value;

use crate::{Cli, CliError};

/// Expands `--config <file>` into flags and returns the new argument list.
pub fn expand(argv: &[OsString], subcommand: &str, config: &Path) -> Result<Vec<OsString>, CliError> {
    let shown = config.display();
    let text = std::fs::read_to_string(config).map_err(|e| CliError::Usage(format!("cannot read config {shown}: {e}")))?;
    let json: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed config {shown}: {e}")))?;
    let Value::Object(entries) = json else {
        return Err(CliError::Usage(format!("config {shown} must be a JSON object")));
    };
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(subcommand)
        .ok_or_else(|| CliError::Usage(format!("unknown subcommand '{subcommand}'")))?;

    let mut flags = Vec::new();
    for (key, value) in &entries {
        let long = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && !a.is_hide_set() && long != "config")
            .ok_or_else(|| CliError::Usage(format!("unknown key '{key}' in config {shown} for '{subcommand}'")))?;
        let flag = format!("--{long}");
        match (arg.get_action(), value) {
            (ArgAction::SetTrue, Value::Bool(true)) => flags.push(flag),
            (ArgAction::SetTrue, Value::Bool(false)) => {}
            (ArgAction::SetTrue, _) => {
                return Err(CliError::Usage(format!("config key '{key}' must be true or false")));
            }
            (_, Value::String(s)) => flags.extend([flag, s.clone()]),
            (_, Value::Number(n)) => flags.extend([flag, n.to_string()]),
            (_, Value::Bool(b)) => flags.extend([flag, b.to_string()]),
            _ => return Err(CliError::Usage(format!("config key '{key}' must be a string, number or boolean"))),
        }
    }

    let at = argv
        .iter()
        .skip(1)
        .position(|a| a == subcommand)
        .map_or(1, |p| p + 2);
    let mut out: Vec<OsString> = argv[..at].to_vec();
    out.extend(flags.into_iter().map(OsString::from));
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}
