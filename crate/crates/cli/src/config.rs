//! Flat `key = value` config files, expanded into command-line flags.

use std::collections::BTreeMap;

/// Parses a flat config file. Keys are flag names without the leading dashes.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", lineno + 1))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(format!("config line {}: empty key", lineno + 1));
        }
        let value = value.trim().trim_matches('"').to_string();
        if out.insert(key.clone(), value).is_some() {
            return Err(format!("config key `{key}` given twice"));
        }
    }
    Ok(out)
}

const GLOBAL_KEYS: [&str; 2] = ["workers", "verbose"];

/// Rewrites `argv`, replacing `--config FILE` by the flags it contains.
///
/// Config values come right after the subcommand, so flags given explicitly on the command
/// line override them. A `command` key supplies the subcommand when argv has none.
pub fn expand(argv: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>, String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut file = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            file = Some(it.next().ok_or("--config needs a file")?);
        } else if let Some(f) = a.strip_prefix("--config=") {
            file = Some(f.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(file) = file else { return Ok(rest) };
    let text = std::fs::read_to_string(&file).map_err(|e| format!("cannot read config {file}: {e}"))?;
    let mut table = parse(&text)?;
    let command = table.remove("command");
    let mut flags = Vec::new();
    let mut globals = Vec::new();
    for (key, value) in table {
        let target = if GLOBAL_KEYS.contains(&key.as_str()) { &mut globals } else { &mut flags };
        match value.as_str() {
            "true" => target.push(format!("--{key}")),
            "false" => {}
            _ => {
                target.push(format!("--{key}"));
                target.push(value);
            }
        }
    }
    let pos = rest.iter().position(|a| subcommands.contains(&a.as_str()));
    let pos = match (pos, command) {
        (Some(p), Some(c)) if rest[p] != c => {
            return Err(format!("config command `{c}` disagrees with `{}`", rest[p]));
        }
        (Some(p), _) => p,
        (None, Some(c)) => {
            if !subcommands.contains(&c.as_str()) {
                return Err(format!("unknown command `{c}` in config"));
            }
            rest.insert(1.min(rest.len()), c);
            1.min(rest.len() - 1)
        }
        (None, None) => return Err("no subcommand given".into()),
    };
    let mut out: Vec<String> = rest[..pos].to_vec();
    out.extend(globals);
    out.push(rest[pos].clone());
    out.extend(flags);
    out.extend(rest[pos + 1..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parse_flat_file() {
        let t = parse("# comment\nsamples = 10\n tol=1e-8 \nmap = \"a.map\"\n").unwrap();
        assert_eq!(t["samples"], "10");
        assert_eq!(t["tol"], "1e-8");
        assert_eq!(t["map"], "a.map");
        assert!(parse("novalue\n").is_err());
        assert!(parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn expansion_places_config_before_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "command = verify\nsamples = 5\nworkers = 1\nallow-x = true\nskip = false\n").unwrap();
        let argv = s(&["ruelle", "--config", p.to_str().unwrap(), "--samples", "7"]);
        let out = expand(argv, &["verify"]).unwrap();
        assert_eq!(out, s(&["ruelle", "--workers", "1", "verify", "--allow-x", "--samples", "5", "--samples", "7"]));
    }
}
