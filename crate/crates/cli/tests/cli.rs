use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resect-eval")).args(args).current_dir(cwd).output().unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.lines().last().unwrap()).unwrap()
}

#[test]
fn synth_then_baseline_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let synth = ok_json(&bin(&["synth", "--out", "cohort", "--patients", "8", "--seed", "3"], d));
    assert_eq!(synth["patients"], 8);
    let rt = synth["rt"].as_u64().unwrap();

    let eval = ok_json(&bin(
        &[
            "evaluate", "--manifest", "cohort/manifest.csv", "--fold-plan", "cohort/folds.txt", "--baseline",
            "--workers", "2", "--out", "out",
        ],
        d,
    ));
    assert_eq!(eval["failed"], 0);
    let patients = std::fs::read_to_string(d.join("out/patients.csv")).unwrap();
    assert_eq!(patients.lines().count(), 9);
    let rt_rows = patients.lines().skip(1).filter(|l| l.contains(",TP,TP,") || l.ends_with(",TP,")).count();
    assert_eq!(rt_rows as u64, rt);

    let cls: Value = ok_json(&bin(&["classify-eval", "--patients", "out/patients.csv"], d));
    for row in cls.as_array().unwrap() {
        assert_eq!(row["confusion"]["fp"], 0);
        assert_eq!(row["confusion"]["fn"], 0);
    }

    let rep = bin(&["report", "--patients", "out/patients.csv", "--out", "again", "--label", "configuration A"], d);
    assert!(rep.status.success());
    for f in ["patients.csv", "cohort.csv", "report.md"] {
        assert_eq!(std::fs::read(d.join("out").join(f)).unwrap(), std::fs::read(d.join("again").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn baseline_postprocess_and_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok_json(&bin(&["synth", "--out", "c", "--patients", "1", "--seed", "9"], d));
    let b = ok_json(&bin(
        &[
            "baseline", "--t1ce", "c/phantom000_t1ce.nii.gz", "--t1w", "c/phantom000_t1w.nii.gz", "--brain",
            "c/phantom000_brain.nii.gz", "--out", "prob.nii.gz",
        ],
        d,
    ));
    assert!(b["t1ce_bin"].is_u64());

    let ens = bin(&["ensemble", "--out", "avg.nii.gz", "prob.nii.gz", "prob.nii.gz"], d);
    assert!(ens.status.success());
    std::fs::write(d.join("post.cfg"), "min_voxels = 1\n").unwrap();
    let v = ok_json(&bin(
        &["postprocess", "--prob", "avg.nii.gz", "--out-mask", "mask.nii.gz", "--config", "post.cfg", "--connectivity", "6"],
        d,
    ));
    assert!(matches!(v["verdict"]["classification"].as_str(), Some("GTR") | Some("RT")), "{v}");
    assert_eq!(v["params"]["min_voxels"], 1);
    assert_eq!(v["params"]["connectivity"], 6);
    assert!(d.join("mask.nii.gz").exists());

    let out = bin(&["postprocess", "--prob", "prob.nii.gz", "--out-verdict", "v.json", "--min-voxels", "20"], d);
    assert!(out.status.success() && out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(d.join("v.json")).unwrap()).unwrap();
    assert_eq!(v["params"]["min_voxels"], 20);

    let sweep = bin(&["postprocess", "--prob", "prob.nii.gz", "--sweep", "11", "--gt", "c/phantom000_gt.nii.gz"], d);
    assert!(sweep.status.success());
    let text = String::from_utf8(sweep.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][0], "0");
    assert_eq!(rows[10][0], "1");
    // the baseline map is binary, so every threshold in (0, 1] gives the same mask
    assert!(rows[1..].windows(2).all(|w| w[0][3] == w[1][3] && w[0][5] == w[1][5]));

    let i = bin(&["interrater", "a=mask.nii.gz", "b=mask.nii.gz", "--consensus-out", "cons.nii.gz"], d);
    assert!(i.status.success());
    let text = String::from_utf8(i.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("rater,jaccard"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn errors_are_reported_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let e = err_json(&bin(&["postprocess", "--prob", "missing.nii"], d));
    assert_eq!(e["error"], "io-error");
    assert!(e["message"].as_str().unwrap().contains("missing.nii"));

    let e = err_json(&bin(&["postprocess", "--prob", "p.nii", "--threshold", "1.5"], d));
    assert_eq!(e["error"], "config-error");

    std::fs::write(d.join("bad.cfg"), "threshold = 2\n").unwrap();
    std::fs::write(d.join("p.nii"), b"not a nifti file at all").unwrap();
    let e = err_json(&bin(&["postprocess", "--prob", "p.nii", "--config", "bad.cfg"], d));
    assert_eq!(e["error"], "config-error");

    std::fs::write(d.join("m.csv"), "patient_id,hospital\na,H0\na,H1\n").unwrap();
    let e = err_json(&bin(&["evaluate", "--manifest", "m.csv", "--out", "o"], d));
    assert_eq!(e["error"], "manifest-error");

    let e = err_json(&bin(&["interrater", "noequals"], d));
    assert_eq!(e["error"], "error");
}
