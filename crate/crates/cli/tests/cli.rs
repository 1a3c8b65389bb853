use std::path::Path;
use std::process::Command;

use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
use ura_cli::run::{CONFIG_SNAPSHOT, RESULTS_CSV, SUMMARY_JSON};
use ura_cli::{run, CliError, RunManifest, Settings};
use ura_core::feedback_bs::FeedbackScheme;
use ura_core::harness::{CodeConfig, CSV_HEADER};

const SMALL: &str = "\
name = small
k_a = 6
n_p = 200
n_d = 500
preamble_bits = 10
repetition = 4
code = polar
coded_len = 255
list_size = 4
power = split
preamble_ebn0_db = 12
payload_ebn0_db = 8
scheme = single_threshold
c_tilde = 6
slots = 2
trials = 2
seed = 17
dictionary_seed = 3
";

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn system_a_preset_matches_table() {
    let g = Settings::preset("system-a").unwrap().resolve().unwrap().remove(0);
    let c = g.config;
    assert_eq!((c.n_p, c.n_d, c.repetition), (2000, 5500, 22));
    assert_eq!(c.code, CodeConfig::Polar { coded_len: 511, crc_len: 11, list_size: 8, design_snr_db: 0.0 });
    assert_eq!(c.feedback_ebn0_db, 20.0);
    assert_eq!(c.max_retransmissions, 1);
}

#[test]
fn empty_file_lists_required_keys() {
    let e = Settings::parse("# nothing here\n").unwrap().resolve().unwrap_err();
    let CliError::Missing(keys) = &e else { panic!("unexpected error {e}") };
    for k in ["k_a", "n_p", "n_d", "preamble_bits", "repetition", "code", "power"] {
        assert!(keys.iter().any(|x| x == k), "{k} not listed in {e}");
    }
}

#[test]
fn override_merges_into_preset() {
    let mut s = Settings::preset("iv-a-hamming").unwrap();
    s.apply_override("c_tilde=8").unwrap();
    s.apply_override("trials=3").unwrap();
    let c = s.resolve().unwrap().remove(0).config;
    assert_eq!(c.scheme, Some(FeedbackScheme::SingleThreshold { c_tilde: 8.0 }));
    assert_eq!(c.trials, 3);
    assert_eq!(c.k_a, 300);
    assert!(c.genie_feedback);
}

#[test]
fn out_of_range_value_is_rejected() {
    let mut s = Settings::preset("system-a").unwrap();
    let e = s.apply_override("signature_fraction=1.5").unwrap_err().to_string();
    assert!(e.contains("signature_fraction") && e.contains("1"), "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn snapshot_round_trips(k in 1usize..500, c in 0.5f64..20.0, frac in 0.01f64..1.0, seed in 0u64..u64::MAX, grid in proptest::bool::ANY) {
        let mut s = Settings::parse(SMALL).unwrap();
        s.set("k_a", &k.to_string()).unwrap();
        s.set("c_tilde", &if grid { format!("{c},{}", c + 1.0) } else { c.to_string() }).unwrap();
        s.set("signature_fraction", &frac.to_string()).unwrap();
        s.set("seed", &seed.to_string()).unwrap();
        let again = Settings::parse(&s.render()).unwrap();
        prop_assert_eq!(again.resolve().unwrap(), s.resolve().unwrap());
        prop_assert_eq!(again.render(), s.render());
    }
}

#[test]
fn identical_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut csvs = Vec::new();
    for sub in ["a", "b"] {
        let m = RunManifest { config_path: Some(cfg.clone()), out_dir: dir.path().join(sub), jobs: 2, ..Default::default() };
        run(&m).unwrap();
        csvs.push(std::fs::read(dir.path().join(sub).join(RESULTS_CSV)).unwrap());
        for f in [SUMMARY_JSON, CONFIG_SNAPSHOT] {
            assert!(dir.path().join(sub).join(f).is_file());
        }
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn grid_writes_one_group_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let m = RunManifest {
        config_path: Some(cfg),
        overrides: vec!["c_tilde=2,4,8,12".into(), "slots=1".into(), "trials=1".into()],
        out_dir: dir.path().join("out"),
        ..Default::default()
    };
    let report = run(&m).unwrap();
    let labels: Vec<&str> = report.groups.iter().map(|g| g.group.as_str()).collect();
    assert_eq!(labels, ["c_tilde=2", "c_tilde=4", "c_tilde=8", "c_tilde=12"]);
    let csv = std::fs::read_to_string(dir.path().join("out").join(RESULTS_CSV)).unwrap();
    let group_col = CSV_HEADER.iter().position(|h| *h == "group").unwrap();
    let groups: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').nth(group_col).unwrap().to_string()).collect();
    assert_eq!(groups, labels);
}

#[test]
fn snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let first = RunManifest { config_path: Some(cfg), seed: Some(99), out_dir: dir.path().join("one"), ..Default::default() };
    run(&first).unwrap();
    let snap = dir.path().join("one").join(CONFIG_SNAPSHOT);
    assert!(std::fs::read_to_string(&snap).unwrap().contains("seed = 99"));
    let second = RunManifest { config_path: Some(snap), out_dir: dir.path().join("two"), ..Default::default() };
    run(&second).unwrap();
    let read = |d: &str| std::fs::read(dir.path().join(d).join(RESULTS_CSV)).unwrap();
    assert_eq!(read("one"), read("two"));
}

#[test]
fn bad_output_path_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "x").unwrap();
    let m = RunManifest { config_path: Some(cfg), out_dir: blocker.join("out"), ..Default::default() };
    assert!(run(&m).is_err());
    let mut names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["blocker", "run.cfg"]);
}

#[test]
fn binary_reports_errors_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k_a = 5\n");
    let out = Command::new(env!("CARGO_BIN_EXE_ura-sim"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing required keys") && err.contains("n_p"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn binary_runs_a_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_ura-sim"))
        .args(["--config", cfg.to_str().unwrap(), "--seed", "5", "--jobs", "1", "--genie-feedback"])
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out").join(SUMMARY_JSON)).unwrap()).unwrap();
    assert_eq!(summary["seed"], 5);
    assert_eq!(summary["groups"][0]["summary"]["seed"], 5);
    let snap = std::fs::read_to_string(dir.path().join("out").join(CONFIG_SNAPSHOT)).unwrap();
    assert!(snap.contains("genie_feedback = true"));
}
