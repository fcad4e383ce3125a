//! Flat `key=value` config files. Keys are long flag names of the chosen
//! subcommand; explicit flags take precedence.

use std::path::Path;

use crate::error::CliError;

/// `(key, value)` pairs in file order. Blank lines and `#` comments are
/// skipped.
pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", origin.display(), i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Value of `--config` in `args`, if any.
pub fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

/// Flags for `pairs`: `key=true` becomes a bare switch and `key=false` is
/// dropped.
pub fn config_flags(pairs: &[(String, String)]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => out.push(format!("--{}", k)),
            "false" => {}
            _ => {
                out.push(format!("--{}", k));
                out.push(v.clone());
            }
        }
    }
    out
}

/// Inserts config flags right after the subcommand token so later explicit
/// flags override them. `subcommands` lists the valid subcommand names.
pub fn inject(args: &[String], flags: Vec<String>, subcommands: &[&str]) -> Vec<String> {
    match args.iter().position(|a| subcommands.contains(&a.as_str())) {
        Some(i) => {
            let mut out = args[..=i].to_vec();
            out.extend(flags);
            out.extend_from_slice(&args[i + 1..]);
            out
        }
        None => args.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parses_pairs_and_comments() {
        let p = parse_config("# c\nsteps = 30\n\nno-dean=true\n", Path::new("x")).unwrap();
        assert_eq!(p, vec![("steps".into(), "30".into()), ("no-dean".into(), "true".into())]);
        assert!(parse_config("oops", Path::new("x")).is_err());
    }

    #[test]
    fn flags_are_injected_after_subcommand() {
        let args = s(&["gwtrack", "--config", "c.txt", "train", "--steps", "5"]);
        assert_eq!(config_path(&args).as_deref(), Some("c.txt"));
        let flags = config_flags(&[("steps".into(), "30".into()), ("no-dean".into(), "true".into()), ("x".into(), "false".into())]);
        let out = inject(&args, flags, &["train"]);
        assert_eq!(out, s(&["gwtrack", "--config", "c.txt", "train", "--steps", "30", "--no-dean", "--steps", "5"]));
    }
}
