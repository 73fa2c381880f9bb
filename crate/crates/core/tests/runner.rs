use heat_sampling::runner::{exit_code, run, write_csv, Command, ExperimentConfig, CSV_HEADER};

fn config(command: Command) -> ExperimentConfig {
    ExperimentConfig { command: Some(command), field: vec!["shape:pair".into()], ..ExperimentConfig::default() }
}

fn csv_text(cfg: &ExperimentConfig) -> String {
    let rows = run(cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn observe_sweep_is_sorted_and_deterministic() {
    let cfg = ExperimentConfig { t: vec![1.0, 0.25], n: vec![2.0, 1.0], jobs: Some(2), ..config(Command::Observe) };
    let rows = run(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.bound == "residual"));
    let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.point.t.unwrap(), r.point.n.unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    assert!(rows.iter().all(|r| r.error.is_none()));
    assert_eq!(exit_code(&rows), 0);
    let one = csv_text(&cfg);
    let again = csv_text(&ExperimentConfig { jobs: Some(1), ..cfg });
    assert_eq!(one, again);
    assert_eq!(one.lines().next().unwrap(), CSV_HEADER.join(","));
}

#[test]
fn toml_configs_reject_unknown_fields_and_bad_values() {
    let ok = ExperimentConfig::from_toml_str("command = \"window\"\nT = [1.0]\nN = [1.0]\nr = [2.0]\n").unwrap();
    assert_eq!(ok.command, Some(Command::Window));
    ok.validate().unwrap();
    let err = ExperimentConfig::from_toml_str("command = \"observe\"\nfrobnicate = 3\n").unwrap_err();
    assert!(err.to_string().contains("frobnicate"), "{err}");
    let bad = ExperimentConfig { n: vec![-1.0], ..config(Command::Observe) };
    assert!(bad.validate().unwrap_err().to_string().contains("`N`"));
    let bad = ExperimentConfig { field: vec!["shape:blob".into()], ..config(Command::Observe) };
    assert!(bad.validate().unwrap_err().to_string().contains("`field`"));
    let bad = ExperimentConfig { bounds: vec!["bogus".into()], ..config(Command::Observe) };
    assert!(bad.validate().unwrap_err().to_string().contains("`bounds`"));
    let bad = ExperimentConfig { r: vec![0.5], ..config(Command::Window) };
    assert!(bad.validate().unwrap_err().to_string().contains("`r`"));
}

#[test]
fn every_command_produces_rows() {
    let cases = [
        ExperimentConfig { eps: vec![0.0, 0.1], bounds: vec!["all".into()], ..config(Command::Observe) },
        ExperimentConfig { r: vec![2.0], ..config(Command::Window) },
        ExperimentConfig { n: vec![2.0], growth: vec!["linear".into(), "constant".into()], ..config(Command::Counterexample) },
        ExperimentConfig { n: vec![2.0], eps: vec![0.1], r: vec![4.0], s: vec![1.0], ..config(Command::Control) },
        ExperimentConfig { s: vec![1.0, 1.5], r: vec![1.0], eps: vec![0.1], ..config(Command::Hs) },
        ExperimentConfig { n: vec![2.0], ..config(Command::Shannon) },
    ];
    for cfg in cases {
        let rows = run(&cfg).unwrap();
        assert!(!rows.is_empty());
        for r in &rows {
            assert!(r.error.is_none(), "{:?}: {:?}", cfg.command, r);
            assert!(r.report.as_ref().unwrap().holds(), "{:?}: {:?}", cfg.command, r);
        }
    }
}

#[test]
fn point_errors_become_rows() {
    // the frequency grid for a wide three-dimensional field exceeds the node cap
    let failing = ExperimentConfig { dim: 3, field: vec!["shape:wide".into(), "shape:unit".into()], ..config(Command::Shannon) };
    let rows = run(&failing).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().any(|r| r.field == "wide" && r.error.is_some()), "{rows:?}");
    assert_eq!(exit_code(&rows), 3);
}

#[test]
fn bound_selection_picks_rows() {
    let cfg = ExperimentConfig { eps: vec![0.0, 0.1], bounds: vec!["sample_l2".into(), "perturbed_sample_gap".into()], ..config(Command::Observe) };
    let bounds: Vec<String> = run(&cfg).unwrap().into_iter().map(|r| r.bound).collect();
    assert_eq!(bounds, ["sample_l2", "perturbed_sample_gap"]);
}
