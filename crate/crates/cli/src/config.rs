//! `--config FILE` support: TOML values become flags placed before the
//! user's own, so anything given on the command line wins.

use std::path::Path;

use toml::{Table, Value};

use crate::args::Cli;
use crate::error::CliError;

const SUBCOMMANDS: [&str; 9] =
    ["simulate", "sparsify", "fit", "depth", "outlyingness", "boxplot", "render", "study", "pipeline"];

/// Global flags that take a value.
const GLOBAL_VALUED: [&str; 3] = ["--seed", "--threads", "--config"];

/// Location of `--config` in `argv`, if any.
fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    let mut found = None;
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            found = it.next().cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            found = Some(v.to_string());
        }
    }
    found
}

/// Index of the subcommand token.
fn subcommand_index(argv: &[String]) -> Option<usize> {
    let mut k = 1;
    while k < argv.len() {
        let a = argv[k].as_str();
        if GLOBAL_VALUED.contains(&a) {
            k += 2;
            continue;
        }
        if a.starts_with('-') {
            k += 1;
            continue;
        }
        return SUBCOMMANDS.contains(&a).then_some(k);
    }
    None
}

fn scalar(key: &str, v: &Value) -> Result<String, CliError> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Array(items) => {
            items.iter().map(|x| scalar(key, x)).collect::<Result<Vec<_>, _>>()?.join(",")
        }
        other => {
            return Err(CliError::Usage(format!("config key `{key}`: unsupported value {other}")));
        }
    })
}

fn flags_of(table: &Table, out: &mut Vec<String>) -> Result<(), CliError> {
    for (key, v) in table {
        if v.is_table() {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Boolean(true) => out.push(flag),
            Value::Boolean(false) => {}
            v => {
                out.push(flag);
                out.push(scalar(key, v)?);
            }
        }
    }
    Ok(())
}

/// `argv` with the values of the config file spliced in after the
/// subcommand name.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(at) = subcommand_index(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = crate::io::read_text(path)?;
    let table: Table = text.parse().map_err(|e| CliError::io(path, e))?;
    let sub = argv[at].clone();
    let mut injected = Vec::new();
    flags_of(&table, &mut injected)?;
    if let Some(section) = table.get(&sub) {
        let section = section
            .as_table()
            .ok_or_else(|| CliError::Usage(format!("config entry `{sub}` must be a table")))?;
        flags_of(section, &mut injected)?;
    }
    let mut out = Vec::with_capacity(argv.len() + injected.len());
    out.push(argv[0].clone());
    out.push(sub);
    out.extend(injected);
    out.extend(argv[1..at].iter().cloned());
    out.extend(argv[at + 1..].iter().cloned());
    Ok(out)
}

/// The resolved configuration in the same layout a config file uses.
pub fn resolved(cli: &Cli) -> String {
    let mut root = Table::new();
    root.insert("seed".into(), Value::Integer(cli.seed as i64));
    if let Some(t) = cli.threads {
        root.insert("threads".into(), Value::Integer(t as i64));
    }
    // a struct variant serializes as { name = { ... } }
    if let Ok(Value::Table(cmd)) = Value::try_from(&cli.command) {
        root.extend(cmd);
    }
    toml::to_string(&root).unwrap_or_default()
}
