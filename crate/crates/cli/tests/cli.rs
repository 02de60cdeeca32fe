use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mfh(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfh"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = mfh(args, dir);
    assert!(
        out.status.success(),
        "mfh {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// White page with a dark bar, 37×50, so padding is exercised.
fn write_page(path: &Path) {
    let (w, h) = (50, 37);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let ink = (10..25).contains(&y) && (5..30).contains(&x);
            bytes.push(if ink { 20 } else { 240 });
        }
    }
    fs::write(path, bytes).unwrap();
}

fn mfht_dims(bytes: &[u8]) -> Vec<u32> {
    assert_eq!(&bytes[..5], b"MFHT\x01");
    let rank = bytes[6] as usize;
    (0..rank)
        .map(|i| u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap()))
        .collect()
}

#[test]
fn preprocess_dumps_padded_mfht_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write_page(&dir.path().join("in.pgm"));
    ok(&["preprocess", "in.pgm", "a.mfht"], dir.path());
    ok(&["preprocess", "in.pgm", "b.mfht"], dir.path());
    let a = fs::read(dir.path().join("a.mfht")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.mfht")).unwrap());
    assert_eq!(a[5], 2, "f64 by default");
    assert_eq!(mfht_dims(&a), vec![1, 40, 56]);

    ok(&["preprocess", "in.pgm", "c.mfht", "--dtype", "f32", "--patch-size", "16", "--retain", "3"], dir.path());
    let c = fs::read(dir.path().join("c.mfht")).unwrap();
    assert_eq!(c[5], 1);
    assert_eq!(mfht_dims(&c), vec![1, 48, 64]);
    assert_eq!(c.len(), 7 + 12 + 48 * 64 * 4);
}

#[test]
fn full_retention_viz_reproduces_input() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (16, 8);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend((0..w * h).map(|i| ((i * 37) % 256) as u8));
    bytes[14] = 0;
    *bytes.last_mut().unwrap() = 255;
    fs::write(dir.path().join("in.pgm"), &bytes).unwrap();
    ok(&["viz", "in.pgm", "out.pgm", "--retain", "8"], dir.path());
    assert_eq!(fs::read(dir.path().join("out.pgm")).unwrap(), bytes);
}

#[test]
fn viz_of_constant_image_is_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = b"P5\n16 16\n255\n".to_vec();
    bytes.extend([200u8; 256]);
    fs::write(dir.path().join("flat.pgm"), &bytes).unwrap();
    ok(&["viz", "flat.pgm", "out.pgm"], dir.path());
    let out = fs::read(dir.path().join("out.pgm")).unwrap();
    assert!(out[out.len() - 256..].iter().all(|&b| b == out[out.len() - 1]));
}

#[test]
fn invalid_flags_fail_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    write_page(&dir.path().join("in.pgm"));
    let cases: [&[&str]; 4] = [
        &["preprocess", "in.pgm", "x.mfht", "--retain", "9"],
        &["viz", "in.pgm", "x.pgm", "--patch-size", "4", "--retain", "5"],
        &["train-toy", "x.csv", "--channels", "10", "--steps", "1"],
        &["train-toy", "x.csv", "--freq-mode", "wavelet"],
    ];
    for args in cases {
        let out = mfh(args, dir.path());
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!dir.path().join(args[2]).exists(), "{args:?} wrote its output");
    }
    let out = mfh(&["preprocess", "missing.pgm", "x.mfht"], dir.path());
    assert!(!out.status.success());
    fs::write(dir.path().join("bad.pgm"), b"P5\n4 4\n255\n\x00").unwrap();
    let out = mfh(&["preprocess", "bad.pgm", "x.mfht"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at byte 12"));
}

#[test]
fn train_save_and_forward_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    write_page(&dir.path().join("in.pgm"));
    let small = ["--channels", "8", "--reduction", "4", "--mlp-layers", "1", "--batch", "2", "--image-size", "32"];
    let mut args = vec!["train-toy", "trace.csv", "--steps", "2", "--save-weights", "w.mfhw"];
    args.extend(small);
    ok(&args, dir.path());
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "step,loss");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,0.693147"));

    for dump in ["k", "t", "fused"] {
        let out = format!("{dump}.mfht");
        ok(&["forward", "in.pgm", "w.mfhw", &out, "--dump", dump], dir.path());
        assert_eq!(mfht_dims(&fs::read(dir.path().join(&out)).unwrap()), vec![8, 3, 4]);
    }
    let out = mfh(&["forward", "in.pgm", "w.mfhw", "x.mfht", "--channels", "16"], dir.path());
    assert!(!out.status.success());
    assert!(!dir.path().join("x.mfht").exists());
}

#[test]
fn sweep_emits_one_row_per_retention() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("imgs")).unwrap();
    write_page(&dir.path().join("imgs/a.pgm"));
    write_page(&dir.path().join("imgs/b.pgm"));
    ok(
        &[
            "sweep", "imgs", "sweep.csv", "--patch-size", "4", "--retain", "2", "--steps", "1", "--batch", "2",
            "--image-size", "32", "--channels", "8", "--reduction", "4", "--mlp-layers", "1",
        ],
        dir.path(),
    );
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "m,energy_fraction,toy_loss");
    assert_eq!(rows.len(), 5);
    assert!(rows[4].starts_with("4,1,"));
}

#[test]
fn gradcheck_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck", "--blocks", "linear_head,fab_forward", "--seeds", "2"], dir.path());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["blocks"].as_array().unwrap().len(), 4);
    let t = &report["blocks"][0]["tensors"][0];
    for key in ["max_abs_error", "max_rel_error", "entries_checked", "pass"] {
        assert!(!t[key].is_null(), "missing {key}");
    }
    let out = mfh(&["gradcheck", "--blocks", "decoder"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn bench_reports_throughput() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["bench", "--size", "64", "--repeats", "1", "--json"], dir.path());
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["patches"], 64);
    assert_eq!(r["multiply_ratio"], 4.0);
    assert!(r["separable_patches_per_sec"].as_f64().unwrap() > 0.0);
    let out = ok(&["bench", "--size", "32", "--repeats", "1"], dir.path());
    assert!(String::from_utf8_lossy(&out.stdout).contains("patches/sec"));
}
