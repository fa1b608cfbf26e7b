use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn pixint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixint")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = pixint(args);
    assert!(out.status.success(), "pixint {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Eight seeded 16x16 RGB images.
fn dataset(dir: &TempDir) -> std::path::PathBuf {
    let data = dir.path().join("data");
    ok(&["synth", "--seed", "3", "--count", "8", "--height", "16", "--width", "16", "--out", s(&data)]);
    data.join("manifest.csv")
}

fn small_run<'a>(manifest: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "interactions",
        "--manifest",
        manifest,
        "--out",
        out,
        "--num-images",
        "4",
        "--patch-size",
        "4",
        "--pairs-per-image",
        "6",
        "--contexts-per-pair",
        "5",
    ]
}

#[test]
fn missing_manifest_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = pixint(&["interactions", "--manifest", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn every_config_problem_is_reported() {
    let dir = TempDir::new().unwrap();
    let out = pixint(&[
        "interactions",
        "--manifest",
        s(&dir.path().join("nope.csv")),
        "--pairs-per-image",
        "0",
        "--order-ratios",
        "0.5,0.2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pairs_per_image"), "{err}");
    assert!(err.contains("order_ratios"), "{err}");
}

#[test]
fn help_lists_the_options() {
    let help = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    for flag in ["--manifest", "--model", "--pairs-per-image", "--contexts-per-pair", "--epsilon", "--sigma", "--seed"]
    {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn constant_classifier_has_no_interactions() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(&dir);
    let out = dir.path().join("run");
    let mut args = small_run(s(&manifest), s(&out));
    args.extend(["--model", "builtin:constant"]);
    ok(&args);
    let dist = fs::read_to_string(out.join("order_dist.csv")).unwrap();
    for line in dist.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(&cols[1..4], ["0", "0", "0"], "{line}");
    }
    let strength = fs::read_to_string(out.join("strength.csv")).unwrap();
    assert!(strength.lines().skip(1).all(|l| l.ends_with(",NA")), "{strength}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(&dir);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&small_run(s(&manifest), s(&a)));
    let mut args = small_run(s(&manifest), s(&b));
    args.extend(["--workers", "3"]);
    ok(&args);
    for f in ["samples.csv", "order_dist.csv", "averages.csv", "strength.csv", "histogram.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn external_bridge_matches_the_builtin_model() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(&dir);
    let (native, bridged) = (dir.path().join("native"), dir.path().join("bridged"));
    ok(&small_run(s(&manifest), s(&native)));
    let external = format!("external:cmd:{} serve --input-shape 16,16,3", env!("CARGO_BIN_EXE_pixint"));
    let mut args = small_run(s(&manifest), s(&bridged));
    args.extend(["--model", &external]);
    ok(&args);
    // the wire carries f32, so values agree closely but not bitwise
    let read = |p: &Path| -> Vec<f64> {
        let text = fs::read_to_string(p.join("samples.csv")).unwrap();
        text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
    };
    let (x, y) = (read(&native), read(&bridged));
    assert_eq!(x.len(), y.len());
    assert!(!x.is_empty());
    for (a, b) in x.iter().zip(&y) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn attack_then_transfer() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(&dir);
    let atk = dir.path().join("atk");
    ok(&["attack", "--manifest", s(&manifest), "--out", s(&atk), "--epsilon", "0.1"]);
    let rows = fs::read_to_string(atk.join("attack_manifest.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("clean_path,adv_path,label,pred_clean,pred_adv,success"));
    assert_eq!(rows.lines().count(), 9);
    let sweep = fs::read_to_string(atk.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next(), Some("epsilon,success_rate"));

    let tr = dir.path().join("tr");
    ok(&[
        "transfer",
        "--attack-manifest",
        s(&atk.join("attack_manifest.csv")),
        "--out",
        s(&tr),
        "--patch-size",
        "4",
        "--pairs-per-image",
        "4",
        "--contexts-per-pair",
        "3",
        "--transfer-ratios",
        "0.1,0.5",
    ]);
    let report = fs::read_to_string(tr.join("transfer_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("order_ratio,target,a1,a2,diff,n1,n2"));
    // two ratios times the two default targets
    assert_eq!(lines.count(), 4);
}

#[test]
fn corruption_writes_one_image_per_input() {
    let dir = TempDir::new().unwrap();
    let manifest = dataset(&dir);
    let out = dir.path().join("noisy");
    ok(&["corrupt", "--manifest", s(&manifest), "--out", s(&out), "--sigma", "0.2"]);
    let rows = fs::read_to_string(out.join("corrupt_manifest.csv")).unwrap();
    assert_eq!(rows.lines().count(), 9);

    let same = dir.path().join("same");
    ok(&["corrupt", "--manifest", s(&manifest), "--out", s(&same), "--sigma", "0"]);
    let clean = fs::read(manifest.parent().unwrap().join("images/00000.raw")).unwrap();
    assert_eq!(fs::read(same.join("corrupt/00000.raw")).unwrap(), clean);
    assert_ne!(fs::read(out.join("corrupt/00000.raw")).unwrap(), clean);
}

#[test]
fn selfcheck_passes() {
    let out = ok(&["selfcheck"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
