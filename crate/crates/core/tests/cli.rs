use std::path::Path;
use std::process::Command;

use ternadac::codec;
use ternadac::{cli, ErrorCategory};

fn run_to(dir: &Path, name: &str, args: &[&str]) -> String {
    let out = dir.join(name);
    let mut argv = vec!["ternadac".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend(["--out".to_string(), out.display().to_string()]);
    cli::run(argv).unwrap();
    std::fs::read_to_string(out).unwrap()
}

fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn header_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

#[test]
fn encode_silence_is_all_zero_lines() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(dir.path(), "d.txt", &["encode", "--signal", "silence", "--duration", "0.001"]);
    let lines = body(&text);
    assert_eq!(lines.len(), 64);
    assert!(lines.iter().all(|l| *l == "0".repeat(20)));
    assert_eq!(header_value(&text, "subcommand"), Some("encode"));
}

#[test]
fn encode_full_scale_sample() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.txt");
    std::fs::write(&input, "2147483647\n0\n-2147483647\n").unwrap();
    let text = run_to(dir.path(), "d.txt", &["encode", "--input", input.to_str().unwrap()]);
    assert_eq!(body(&text), vec!["+".repeat(20), "0".repeat(20), "-".repeat(20)]);
}

#[test]
fn encode_then_decode_reproduces_scaled_samples() {
    let dir = tempfile::tempdir().unwrap();
    let samples = [0, 1, -1, 12345, -987654321, i32::MAX, i32::MIN];
    let input = dir.path().join("s.txt");
    let list: Vec<String> = samples.iter().map(|s| s.to_string()).collect();
    std::fs::write(&input, list.join("\n")).unwrap();
    let text = run_to(dir.path(), "d.txt", &["encode", "--input", input.to_str().unwrap()]);
    let words = codec::parse_digit_dump(&text, 20).unwrap();
    for (s, w) in samples.iter().zip(&words) {
        let t = codec::from_balanced_ternary(w).unwrap();
        assert_eq!(t, codec::scale_sample(*s, 20).unwrap().value);
    }
}

#[test]
fn weights_of_prototype() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(dir.path(), "w.csv", &["weights"]);
    let lines = body(&text);
    assert_eq!(lines[0], "stage,weight_volts,ratio_to_next,attenuation_db");
    for row in &lines[1..20] {
        assert_eq!(row.split(',').nth(2), Some("3.000000000"));
    }
    let cell = |key: &str| -> f64 {
        let row = lines.iter().find(|l| l.starts_with(key)).unwrap();
        row.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!((cell("z_out,") - 15.0).abs() < 1.5);
    assert!((cell("v_full_scale,") - 90.0).abs() < 0.9);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let toml = run_to(dir.path(), "p.toml", &["prototype"]);
    let cfg_path = dir.path().join("p.toml");
    let from_file = run_to(dir.path(), "w1.csv", &["weights", "--config", cfg_path.to_str().unwrap()]);
    let builtin = run_to(dir.path(), "w2.csv", &["weights"]);
    assert!(toml.contains("[[stage]]"));
    assert_eq!(body(&from_file), body(&builtin));
}

#[test]
fn simulate_digit_dump_matches_stimulus() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.txt");
    let stim = ["--signal", "sine", "--level", "-30", "--duration", "0.005"];
    let mut args = vec!["simulate", "--dump", dump.to_str().unwrap()];
    args.extend(stim);
    let direct = run_to(dir.path(), "a.csv", &args);
    let replay = run_to(dir.path(), "b.csv", &["simulate", "--digits-in", dump.to_str().unwrap()]);
    assert_eq!(body(&direct), body(&replay));
    assert_eq!(body(&direct)[0], "time_s,v_out_volts,i90_amps,i12_amps");
    assert_eq!(body(&direct).len(), 321);
}

#[test]
fn montecarlo_zero_tolerance_rows_identical() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(
        dir.path(),
        "mc.csv",
        &["montecarlo", "--tol", "0", "--trials", "5", "--record", "4096"],
    );
    let rows = body(&text);
    assert_eq!(rows[0], "trial,sfdr_db");
    let values: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(values.len(), 5);
    assert!(values.iter().all(|v| *v == values[0]));
}

#[test]
fn noise_budget_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(dir.path(), "n.csv", &["noise", "--t", "300", "--b", "20000"]);
    let rows = body(&text);
    assert_eq!(rows[0], "t_k,b_hz,noise_w,noise_dbm,dr_db");
    let cells: Vec<f64> = rows[1].split(',').map(|c| c.parse().unwrap()).collect();
    assert!((cells[3] + 131.0).abs() < 0.5);
    assert!((cells[4] - 178.4).abs() < 0.5);
}

#[test]
fn manifest_records_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let text = run_to(dir.path(), "n.csv", &["noise", "--seed", "7"]);
    assert_eq!(header_value(&text, "seed"), Some("7"));
    assert!(header_value(&text, "args").unwrap().starts_with("noise --seed 7"));
    assert!(header_value(&text, "tool").unwrap().starts_with("ternadac "));
}

#[test]
fn errors_carry_categories() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1\n2\nnot-a-number\n").unwrap();
    let err = cli::run(["ternadac", "encode", "--input", bad.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Config);
    assert!(err.to_string().contains("line 3"), "{err}");

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "load_ohms = -1\n[[stage]]\nkind = \"ladder_4r3r\"\nr_base = 1000\nsupply_v = 12\n").unwrap();
    let err = cli::run(["ternadac", "weights", "--config", cfg.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Config);
    assert!(err.to_string().contains("load_ohms"), "{err}");

    let err = cli::run(["ternadac", "noise", "--t", "0"]).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Range);

    let missing = dir.path().join("missing.toml");
    let err = cli::run(["ternadac", "weights", "--config", missing.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Io);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_ternadac");
    let out = Command::new(exe).args(["noise", "--b", "-5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[RANGE]"));

    let out = Command::new(exe).args(["weights", "--digits", "7"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(exe).args(["noise"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("# tool=ternadac"));
}
