use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn heatsample(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatsample")).args(args).output().expect("binary runs")
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(str::to_string).collect()
}

#[test]
fn one_point_observe_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one.csv");
    let o = heatsample(&["observe", "--t", "1", "--n", "2", "--field", "shape:pair", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("command,field,bound,"));
    let rows = data_lines(&out);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("observe,pair,residual,1,"), "{}", rows[0]);
    assert!(rows[0].contains(",pass,"));
}

#[test]
fn repeated_runs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(&config, "T = [0.5, 1.0]\nN = [1.0, 2.0]\neps = [0.1]\nrule = \"random\"\nseed = 7\nfield = [\"shape:triple\"]\n").unwrap();
    let mut files = Vec::new();
    for (i, jobs) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}.csv"));
        let o = heatsample(&["observe", "--config", config.to_str().unwrap(), "--jobs", jobs, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        files.push(fs::read(&out).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn twelve_point_sweep_is_sorted() {
    let o = heatsample(&["observe", "--t", "4,0.25,1", "--n", "2,1", "--eps", "0.1,0", "--field", "shape:unit", "--out", "-"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let keys: Vec<(f64, f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[4].parse().unwrap(), c[5].parse().unwrap(), c[6].parse().unwrap())
        })
        .collect();
    assert_eq!(keys.len(), 12);
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
}

#[test]
fn usage_errors_exit_with_two() {
    let cases: [&[&str]; 4] = [
        &["observe", "--n=-1"],
        &["observe", "--field", "shape:blob"],
        &["window", "--r", "0.5"],
        &["observe", "--bounds", "bogus"],
    ];
    for args in cases {
        let o = heatsample(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("config field"), "{args:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "T = [1.0]\ncolour = \"blue\"\n").unwrap();
    let o = heatsample(&["observe", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn calibrate_archives_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.json");
    let t = table.to_str().unwrap();
    let o = heatsample(&["calibrate", "--bounds", "local_sup", "--dim", "1", "--out", t]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read_to_string(&table).unwrap();
    assert!(first.contains("d1/local_sup"));

    // no bounds: nothing is fitted, written or archived
    let o = heatsample(&["calibrate", "--out", t]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&table).unwrap(), first);
    assert!(!dir.path().join("archive").exists());

    let o = heatsample(&["calibrate", "--bounds", "local_sup", "--dim", "1", "--out", t]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&table).unwrap(), first);
    let archived: Vec<_> = fs::read_dir(dir.path().join("archive")).unwrap().collect();
    assert_eq!(archived.len(), 1);

    // a sweep reading this table applies the constant it contains
    let o = heatsample(&["hs", "--t", "1", "--r", "1", "--s", "1", "--field", "shape:unit", "--bounds", "local_sup", "--calibration", t, "--out", "-"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.contains(",local_sup,") && row.ends_with(",applied"), "{row}");
}
