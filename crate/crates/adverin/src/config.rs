//! `--config FILE` support: `key = value` lines become `--key=value` flags
//! inserted right after the subcommand, so explicit flags override them.

use std::path::Path;

use clap::CommandFactory;

use crate::cli::Cli;
use crate::UsageError;

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected `key = value`", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", n + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<(usize, String)> {
    for (i, a) in args.iter().enumerate().skip(1) {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return args.get(i + 1).map(|p| (i, p.clone()));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some((i, p.to_string()));
        }
    }
    None
}

/// Returns `args` with the config file's entries spliced in after the
/// subcommand name. Unknown keys are usage errors.
pub fn expand_args(args: Vec<String>) -> Result<Vec<String>, anyhow::Error> {
    let Some((_, path)) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| anyhow::Error::new(e).context(format!("reading config {path}")))?;
    let entries = parse(&text)?;
    let cmd = Cli::command();
    let sub_names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(pos) = args.iter().position(|a| sub_names.contains(a)) else {
        // no subcommand: let clap report it
        return Ok(args);
    };
    let sub = cmd.find_subcommand(&args[pos]).expect("listed above");
    let known: Vec<String> = sub
        .get_arguments()
        .chain(cmd.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let mut injected = Vec::with_capacity(entries.len());
    for (k, v) in entries {
        if k == "config" || !known.contains(&k) {
            return Err(UsageError(format!("unknown config key `{k}` for `{}`", args[pos])).into());
        }
        injected.push(format!("--{k}={v}"));
    }
    let mut out = args;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines() {
        let p = parse("a = 1\n# c\n\nb_c=x y # trailing\n").unwrap();
        assert_eq!(p, vec![("a".into(), "1".into()), ("b-c".into(), "x y".into())]);
        assert!(parse("novalue\n").is_err());
    }

    #[test]
    fn injects_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.txt");
        std::fs::write(&f, "epochs = 3\ndelta = 0.5\n").unwrap();
        let args: Vec<String> = ["adverin", "--config", f.to_str().unwrap(), "train", "--epochs", "7"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand_args(args).unwrap();
        assert_eq!(&out[3..], ["train", "--epochs=3", "--delta=0.5", "--epochs", "7"]);
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.txt");
        std::fs::write(&f, "bogus = 1\n").unwrap();
        let args = vec!["adverin".into(), "gen-data".into(), format!("--config={}", f.display())];
        let err = expand_args(args).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
