use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
[data.synthetic]
start = "2021-01-01T00:00"
days = 70
[[splits]]
test_year = 2021
test_month = 3
train_months = 2
[ngboost]
n_stages = 20
learning_rate = 0.1
"#;

fn solarprob(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solarprob"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(solarprob(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(solarprob(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(solarprob(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(solarprob(dir.path(), &["train", "--split", "x"]).status.code(), Some(1));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // No seed anywhere.
    let no_seed = write(dir.path(), "a.toml", &SMALL.replace("seed = 3", ""));
    let out = solarprob(dir.path(), &["generate", "--config", &no_seed]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    // Unknown key.
    let typo = write(dir.path(), "b.toml", &format!("{SMALL}\n[forecast]\norigin_hr = 3\n"));
    assert_eq!(solarprob(dir.path(), &["generate", "--config", &typo]).status.code(), Some(1));
    // Out-of-range hyperparameter.
    let bad = write(dir.path(), "c.toml", &SMALL.replace("learning_rate = 0.1", "learning_rate = 0.0"));
    assert_eq!(solarprob(dir.path(), &["train", "--config", &bad]).status.code(), Some(1));
    let cfg = write(dir.path(), "d.toml", SMALL);
    assert_eq!(solarprob(dir.path(), &["train", "--config", &cfg, "--split", "4"]).status.code(), Some(1));
    assert_eq!(solarprob(dir.path(), &["evaluate", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(solarprob(dir.path(), &["generate", "--config", &cfg, "--coverage", "150"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let with_path = |p: &str| SMALL.replace("[data.synthetic]", &format!("[data]\npath = \"{p}\"\n[data.synthetic]"));
    let missing = write(dir.path(), "a.toml", &with_path("nope.csv"));
    assert_eq!(solarprob(dir.path(), &["generate", "--config", &missing]).status.code(), Some(2));
    write(dir.path(), "bad.csv", "timestamp,power\n2021-01-01T00:00,abc\n");
    let garbled = write(dir.path(), "b.toml", &with_path("bad.csv"));
    assert_eq!(solarprob(dir.path(), &["generate", "--config", &garbled]).status.code(), Some(2));
    let cfg = write(dir.path(), "c.toml", SMALL);
    write(dir.path(), "junk.json", "{\"split\": 1}");
    assert_eq!(
        solarprob(dir.path(), &["evaluate", "--config", &cfg, "--model", "junk.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn train_then_evaluate_writes_stamped_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let train = solarprob(dir.path(), &["train", "--config", &cfg, "--out-dir", "out"]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let model = dir.path().join("out/model.json");
    assert!(model.exists());
    let eval = solarprob(
        dir.path(),
        &["evaluate", "--config", &cfg, "--out-dir", "out", "--model", "out/model.json", "--coverage", "50,90"],
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/eval.csv")).unwrap();
    assert!(csv.starts_with("# config_hash="));
    assert!(csv.contains("picp@0.5000,") && csv.contains("picp@0.9000,"));
    let forecasts = std::fs::read_to_string(dir.path().join("out/forecasts.csv")).unwrap();
    let header = forecasts.lines().nth(1).unwrap();
    assert!(header.contains("lower_50.00") && header.contains("upper_90.00"));
    // The seed flag changes the stamp.
    let other = solarprob(dir.path(), &["generate", "--config", &cfg, "--out-dir", "gen", "--seed", "99"]);
    assert!(other.status.success());
    let series = std::fs::read_to_string(dir.path().join("gen/series.csv")).unwrap();
    assert!(series.lines().next().unwrap().ends_with("seed=99"));
}
