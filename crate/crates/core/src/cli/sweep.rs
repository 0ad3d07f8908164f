use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::experiment::{run, RunFlags, Summary};
use super::trace_csv::{fmt_num, fmt_opt};
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: &str = "id,problem,scheme,seed,iterations,status,theta_err,x_err,f_gap,avg_f_gap,vi_gap,bound,error";

/// Result of one sweep entry.
#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub id: String,
    pub problem: String,
    pub scheme: String,
    pub seed: u64,
    pub result: std::result::Result<Summary, String>,
}

/// Entries in input order.
#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub entries: Vec<SweepEntry>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.result.is_err()).count()
    }
}

fn load_one(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path)?;
    let located = |e: Error| match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{}: {field}", path.display()),
            message,
        },
        other => other,
    };
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| located(Error::config("document", e.message())))?;
    match table.remove("grid") {
        None => Ok(vec![ExperimentConfig::from_value(table).map_err(located)?]),
        Some(toml::Value::Table(grid)) => expand_grid(table, &grid).map_err(located),
        Some(_) => Err(located(Error::config("grid", "must be a table of arrays"))),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().unwrap_or_default();
    let mut node = table;
    for part in parts {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("grid.{key}"), format!("{part} is not a table")))?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}

fn label(value: &toml::Value) -> String {
    match value {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
    .chars()
    .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
    .collect()
}

/// Cartesian product over the `[grid]` entries in key order; each key is a
/// dotted path into the base config and ids get one `_<leaf>-<value>`
/// suffix per key.
fn expand_grid(base: toml::Table, grid: &toml::Table) -> Result<Vec<ExperimentConfig>> {
    let base_id = base
        .get("id")
        .and_then(toml::Value::as_str)
        .ok_or_else(|| Error::config("id", "grid configs need a string id"))?
        .to_string();
    let mut axes = Vec::new();
    for (key, values) in grid {
        let values = values
            .as_array()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::config(format!("grid.{key}"), "must be a non-empty array"))?;
        axes.push((key.clone(), values.clone()));
    }
    let mut combos: Vec<(toml::Table, String)> = vec![(base, base_id)];
    for (key, values) in &axes {
        let leaf = key.rsplit('.').next().unwrap_or(key);
        let mut next = Vec::with_capacity(combos.len() * values.len());
        for (table, id) in &combos {
            for value in values {
                let mut t = table.clone();
                set_dotted(&mut t, key, value.clone())?;
                next.push((t, format!("{id}_{leaf}-{}", label(value))));
            }
        }
        combos = next;
    }
    combos
        .into_iter()
        .map(|(mut table, id)| {
            table.insert("id".into(), toml::Value::String(id));
            ExperimentConfig::from_value(table)
        })
        .collect()
}

/// Configs named by `input`: a directory (its `*.toml` files in name
/// order), a config file (expanded if it has a `[grid]` table), or a list
/// file with one config path per line, relative to the list's directory.
pub fn expand_sweep_input(input: &Path) -> Result<Vec<ExperimentConfig>> {
    let paths: Vec<PathBuf> = if input.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "toml"));
        paths.sort();
        paths
    } else if input.extension().is_some_and(|e| e == "toml") {
        vec![input.to_path_buf()]
    } else {
        let dir = input.parent().unwrap_or(Path::new(""));
        std::fs::read_to_string(input)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| dir.join(l))
            .collect()
    };
    let mut configs = Vec::new();
    for path in paths {
        configs.extend(load_one(&path)?);
    }
    Ok(configs)
}

/// Runs every config on a pool of `parallelism` threads. Failures are
/// recorded per entry and do not stop the sweep.
pub fn sweep(configs: &[ExperimentConfig], parallelism: usize, flags: &RunFlags) -> Result<SweepOutcome> {
    let mut seen = HashSet::new();
    for c in configs {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::config("id", format!("duplicate id {} in sweep", c.id)));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config("parallelism", e.to_string()))?;
    let entries = pool.install(|| {
        configs
            .par_iter()
            .map(|config| SweepEntry {
                id: config.id.clone(),
                problem: config.problem.name().into(),
                scheme: config.scheme.name().into(),
                seed: flags.seed.unwrap_or(config.seed),
                result: run(config, flags).map(|o| o.summary).map_err(|e| e.to_string()),
            })
            .collect()
    });
    Ok(SweepOutcome { entries })
}

fn quote(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\"").replace('\n', " "))
}

/// Summary table in input order. Wall times are left out so the bytes
/// depend only on the configs.
pub fn summary_csv(outcome: &SweepOutcome) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for e in &outcome.entries {
        let fields = match &e.result {
            Ok(s) => [
                s.iterations.to_string(),
                "ok".into(),
                fmt_num(s.theta_err),
                fmt_opt(s.x_err),
                fmt_opt(s.f_gap),
                fmt_opt(s.avg_f_gap),
                fmt_opt(s.vi_gap),
                fmt_opt(s.bound),
                String::new(),
            ],
            Err(msg) => [
                String::new(),
                "failed".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                quote(msg),
            ],
        };
        out.push_str(&format!("{},{},{},{},{}\n", e.id, e.problem, e.scheme, e.seed, fields.join(",")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
id = "grid"
horizon = 20
scheme = "joint-gradient"

[problem]
kind = "quadratic-test"
q = [[1.0]]
coupling = [[-1.0]]
theta_star = [0.5]
x_lower = [-2.0]
x_upper = [2.0]

[schedule]
f = { kind = "constant", gamma = 0.5 }
g = { kind = "constant", gamma = 0.5 }

[grid]
"schedule.f.gamma" = [0.5, 1.0]
scheme = ["joint-gradient", "sequential"]
"#;

    #[test]
    fn grid_expands_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.toml");
        std::fs::write(&path, GRID).unwrap();
        let configs = expand_sweep_input(&path).unwrap();
        let ids: Vec<&str> = configs.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "grid_gamma-0.5_scheme-joint-gradient",
                "grid_gamma-0.5_scheme-sequential",
                "grid_gamma-1.0_scheme-joint-gradient",
                "grid_gamma-1.0_scheme-sequential"
            ]
        );
    }

    #[test]
    fn list_file_and_directory() {
        let dir = tempfile::tempdir().unwrap();
        let plain = GRID.split("[grid]").next().unwrap();
        std::fs::write(dir.path().join("b.toml"), plain.replace("\"grid\"", "\"b\"")).unwrap();
        std::fs::write(dir.path().join("a.toml"), plain.replace("\"grid\"", "\"a\"")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let ids = |cs: Vec<ExperimentConfig>| cs.into_iter().map(|c| c.id).collect::<Vec<_>>();
        assert_eq!(ids(expand_sweep_input(dir.path()).unwrap()), ["a", "b"]);
        let list = dir.path().join("runs.list");
        std::fs::write(&list, "# comment\nb.toml\n\na.toml\n").unwrap();
        assert_eq!(ids(expand_sweep_input(&list).unwrap()), ["b", "a"]);
    }

    #[test]
    fn empty_sweep_gives_header_only() {
        let out = sweep(&[], 4, &RunFlags::default()).unwrap();
        assert_eq!(summary_csv(&out), format!("{SUMMARY_HEADER}\n"));
        assert_eq!(out.failures(), 0);
    }

    #[test]
    fn failures_are_recorded_and_sweep_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.toml");
        std::fs::write(&path, GRID).unwrap();
        let configs = expand_sweep_input(&path).unwrap();
        let flags = RunFlags {
            out_dir: Some(dir.path().join("out")),
            ..RunFlags::default()
        };
        let mut configs = configs;
        configs[1].schedule.f = Some(crate::cli::StepSpec::Constant { gamma: 5.0 });
        let out = sweep(&configs, 2, &flags).unwrap();
        assert_eq!(out.failures(), 1);
        let table = summary_csv(&out);
        assert_eq!(table.lines().count(), 5);
        assert!(table.lines().nth(2).unwrap().contains(",failed,"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.toml");
        std::fs::write(&path, GRID).unwrap();
        let mut configs = expand_sweep_input(&path).unwrap();
        configs[1].id = configs[0].id.clone();
        assert!(sweep(&configs, 1, &RunFlags::default()).is_err());
    }
}
