use misspec::cli::{read_trace_csv, run, summary_csv, sweep, write_trace_csv, CsvRow, ExperimentConfig, RunFlags};
use proptest::prelude::*;

fn optional() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Some)]
}

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |v| v.is_finite())
}

prop_compose! {
    fn row()(k in 0usize..1_000_000, theta_err in finite(), x_err in optional(), f_gap in optional(), vi_gap in optional(),
             bound in optional(), gamma_f in finite(), gamma_g in finite(), epsilon in optional(), avg_f_gap in optional(),
             residual_r_norm in finite()) -> CsvRow {
        CsvRow { k, theta_err, x_err, f_gap, vi_gap, bound, gamma_f, gamma_g, epsilon, avg_f_gap, residual_r_norm }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_csv_round_trips(rows in prop::collection::vec(row(), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace_csv(&path, &rows).unwrap();
        prop_assert_eq!(read_trace_csv(&path).unwrap(), rows);
    }
}

fn sweep_configs() -> Vec<ExperimentConfig> {
    let mut configs = Vec::new();
    for n in [2, 3] {
        for scheme in ["joint-gradient", "sequential"] {
            configs.push(
                ExperimentConfig::from_toml(&format!(
                    r#"
id = "n{n}-{scheme}"
seed = {n}
horizon = 150
scheme = "{scheme}"
emit_bounds = true

[problem]
kind = "edisp-cost"
generators = {n}
periods = 3

[schedule]
f = {{ kind = "constant", gamma = 0.04 }}
g = {{ kind = "constant", gamma = 0.003 }}
"#
                ))
                .unwrap(),
            );
        }
    }
    configs
}

#[test]
fn identical_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = &sweep_configs()[0];
    let mut bytes = Vec::new();
    for sub in ["a", "b"] {
        let flags = RunFlags {
            out_dir: Some(dir.path().join(sub)),
            ..RunFlags::default()
        };
        let out = run(config, &flags).unwrap();
        bytes.push(std::fs::read(out.summary.trace_path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn sweep_output_does_not_depend_on_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let configs = sweep_configs();
    let mut tables = Vec::new();
    for (par, sub) in [(1, "p1"), (8, "p8")] {
        let flags = RunFlags {
            out_dir: Some(dir.path().join(sub)),
            ..RunFlags::default()
        };
        let out = sweep(&configs, par, &flags).unwrap();
        assert_eq!(out.failures(), 0);
        tables.push(summary_csv(&out));
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0].lines().count(), configs.len() + 1);
    for c in &configs {
        let name = format!("{}.csv", c.id);
        assert_eq!(
            std::fs::read(dir.path().join("p1").join(&name)).unwrap(),
            std::fs::read(dir.path().join("p8").join(&name)).unwrap()
        );
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = &sweep_configs()[0];
    let run_with = |seed: Option<u64>, sub: &str| {
        let flags = RunFlags {
            seed,
            out_dir: Some(dir.path().join(sub)),
            ..RunFlags::default()
        };
        run(config, &flags).unwrap().rows
    };
    assert_eq!(run_with(Some(config.seed), "a"), run_with(None, "b"));
    assert_ne!(run_with(Some(config.seed + 100), "c"), run_with(None, "d"));
}
