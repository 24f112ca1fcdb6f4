//! `--config FILE` support: entries become `--key=value` flags placed before
//! the user's own flags, so anything given on the command line wins.

use std::ffi::OsString;
use std::path::PathBuf;

use attncert::vit::parse_key_values;
use clap::CommandFactory;

use crate::cli::Cli;
use crate::error::{usage, CliResult};

const GLOBAL_VALUE_FLAGS: [&str; 2] = ["--threads", "--config"];

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Position and name of the subcommand token.
fn subcommand_at(args: &[OsString]) -> Option<(usize, String)> {
    let cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let mut skip_next = false;
    for (i, a) in args.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if skip_next {
            skip_next = false;
            continue;
        }
        if GLOBAL_VALUE_FLAGS.contains(&s.as_ref()) {
            skip_next = true;
            continue;
        }
        if names.iter().any(|n| *n == s) {
            return Some((i, s.into_owned()));
        }
    }
    None
}

pub fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let entries = parse_key_values(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let Some((at, sub)) = subcommand_at(&args) else {
        // clap reports the missing subcommand
        return Ok(args);
    };
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(&sub).expect("subcommand listed by clap");
    let known: Vec<&str> = sub_cmd.get_arguments().filter_map(|a| a.get_long()).collect();

    let mut global = Vec::new();
    let mut local = Vec::new();
    for (key, value) in entries {
        let flag = key.replace('_', "-");
        let arg = OsString::from(format!("--{flag}={value}"));
        if flag == "threads" {
            global.push(arg);
        } else if flag != "config" && known.contains(&flag.as_str()) {
            local.push(arg);
        } else {
            return Err(usage(format!("{}: unknown key {key:?} for {sub}", path.display())));
        }
    }
    let mut out = Vec::with_capacity(args.len() + global.len() + local.len());
    out.push(args[0].clone());
    out.extend(global);
    out.extend(args[1..=at].iter().cloned());
    out.extend(local);
    out.extend(args[at + 1..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn no_config_is_untouched() {
        let a = os(&["attncert", "gen-data", "--count", "3"]);
        assert_eq!(expand_config(a.clone()).unwrap(), a);
    }

    #[test]
    fn entries_go_before_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# defaults\ncount = 5\nthreads = 2\n").unwrap();
        let c = cfg.to_str().unwrap();
        let a = os(&["attncert", "--config", c, "gen-data", "--count", "3"]);
        let out = expand_config(a).unwrap();
        assert_eq!(
            out,
            os(&[
                "attncert",
                "--threads=2",
                "--config",
                c,
                "gen-data",
                "--count=5",
                "--count",
                "3"
            ])
        );
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "sigma = 0.5\n").unwrap();
        let a = os(&["attncert", "gen-data", "--config", cfg.to_str().unwrap()]);
        let err = expand_config(a).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("unknown key \"sigma\""));
    }
}
