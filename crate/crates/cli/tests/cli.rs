use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attncert"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 8×8 images, four patches, head fitted on the same data.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "gen-data", "--count", "6", "--size", "8", "--seed", "3", "--out", "data",
        ],
    );
    ok(p, &["init-model", "--size", "8", "--out", "model"]);
    ok(p, &["fit-head", "--model", "model", "--data", "data", "--out", "model"]);
    dir
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn gen_data_writes_files_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-data", "--count", "10", "--out", "a"]);
    ok(p, &["gen-data", "--count", "10", "--out", "b"]);
    let images = fs::read_dir(p.join("a"))
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().into_string().unwrap();
            name.ends_with(".fvtn") && !name.ends_with("_mask.fvtn")
        })
        .count();
    assert_eq!(images, 10);
    assert_eq!(csv_rows(&p.join("a/manifest.csv")).len(), 10);
    for e in fs::read_dir(p.join("a")).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(
            fs::read(p.join("a").join(&name)).unwrap(),
            fs::read(p.join("b").join(&name)).unwrap()
        );
    }
}

#[test]
fn usage_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = run(p, &["gen-data", "--count", "0", "--out", "d"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("count must be positive"));

    ok(p, &["gen-data", "--count", "2", "--out", "d"]);
    let out = run(p, &["certify", "--model", "missing", "--input", "d", "--out", "c.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--model"));

    assert_eq!(run(p, &["certify", "--input", "d"]).status.code(), Some(1));
    assert_eq!(run(p, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(p, &["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-data", "--count", "2", "--size", "8", "--out", "d"]);
    ok(p, &["init-model", "--size", "8", "--out", "m"]);
    fs::write(p.join("d/img_0001.fvtn"), b"FVTN garbage").unwrap();
    let out = run(
        p,
        &["certify", "--model", "m", "--input", "d", "--m", "8", "--out", "c.csv"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.cfg"), "count = 3\nsize = 8\nout = fromcfg\n").unwrap();
    ok(p, &["gen-data", "--config", "run.cfg"]);
    assert_eq!(csv_rows(&p.join("fromcfg/manifest.csv")).len(), 3);
    ok(
        p,
        &["--config", "run.cfg", "gen-data", "--count", "2", "--out", "fromflag"],
    );
    assert_eq!(csv_rows(&p.join("fromflag/manifest.csv")).len(), 2);

    fs::write(p.join("bad.cfg"), "count = 3\nsigma = 0.5\n").unwrap();
    let out = run(p, &["gen-data", "--config", "bad.cfg", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown key"));
    assert!(!p.join("x").exists());
}

#[test]
fn linf_report_divides_by_sqrt_d() {
    let ws = workspace();
    let p = ws.path();
    let common = [
        "certify", "--model", "model", "--input", "data", "--m", "64", "--k", "2", "--beta", "0.5",
    ];
    ok(p, &[&common[..], &["--out", "l2.csv"]].concat());
    ok(p, &[&common[..], &["--norm", "linf", "--out", "linf.csv"]].concat());
    ok(
        p,
        &[&common[..], &["--norm", "linf", "--linf-div", "d", "--out", "lind.csv"]].concat(),
    );
    let (l2, linf, lind) = (
        csv_rows(&p.join("l2.csv")),
        csv_rows(&p.join("linf.csv")),
        csv_rows(&p.join("lind.csv")),
    );
    assert_eq!(l2.len(), 6);
    for ((a, b), c) in l2.iter().zip(&linf).zip(&lind) {
        let (ra, rb, rc): (f64, f64, f64) = (a[10].parse().unwrap(), b[10].parse().unwrap(), c[10].parse().unwrap());
        assert!((rb - ra / 8.0).abs() <= 1e-12 * ra.max(1.0), "{ra} {rb}");
        assert!(rc <= rb);
        assert_eq!(b[5], "linf");
    }
}

#[test]
fn reports_are_identical_across_thread_counts() {
    let ws = workspace();
    let p = ws.path();
    for t in ["1", "8"] {
        ok(
            p,
            &[
                "--threads",
                t,
                "certify",
                "--model",
                "model",
                "--input",
                "data",
                "--m",
                "128",
                "--out",
                &format!("c{t}.csv"),
            ],
        );
        ok(
            p,
            &[
                "--threads",
                t,
                "eval",
                "--model",
                "model",
                "--input",
                "data",
                "--m",
                "16",
                "--out",
                &format!("e{t}.csv"),
            ],
        );
    }
    assert_eq!(fs::read(p.join("c1.csv")).unwrap(), fs::read(p.join("c8.csv")).unwrap());
    assert_eq!(fs::read(p.join("e1.csv")).unwrap(), fs::read(p.join("e8.csv")).unwrap());
}

#[test]
fn verify_rows_and_stale_detection() {
    let ws = workspace();
    let p = ws.path();
    ok(
        p,
        &[
            "certify",
            "--model",
            "model",
            "--input",
            "data",
            "--m",
            "64",
            "--k",
            "2",
            "--beta",
            "0.5",
            "--ci",
            "binomial:0.99",
            "--out",
            "c.csv",
        ],
    );
    let attack = ["--attempts", "2", "--steps", "2", "--attack-m", "2"];
    ok(
        p,
        &[
            &[
                "verify",
                "--cert-report",
                "c.csv",
                "--factors",
                "0,1.0,4.0",
                "--out",
                "v.csv",
            ][..],
            &attack[..],
        ]
        .concat(),
    );
    let rows = csv_rows(&p.join("v.csv"));
    assert_eq!(rows.len(), 6 * 3 * 2);
    for r in &rows {
        let (factor, successes): (f64, usize) = (r[1].parse().unwrap(), r[4].parse().unwrap());
        if factor <= 1.0 {
            assert_eq!(successes, 0, "{r:?}");
        }
    }
    for pair in rows.chunks(6) {
        // flip at 0, 1, 4, then break at 0, 1, 4 after regrouping
        let s: Vec<usize> = pair.iter().map(|r| r[4].parse().unwrap()).collect();
        assert!(s[0] <= s[2] && s[2] <= s[4] && s[1] <= s[3] && s[3] <= s[5], "{s:?}");
    }

    let out = run(
        p,
        &["verify", "--cert-report", "c.csv", "--factors", "", "--out", "v2.csv"],
    );
    assert_eq!(out.status.code(), Some(1));

    // a different model invalidates the report
    ok(p, &["init-model", "--size", "8", "--seed", "9", "--out", "model"]);
    let out = run(
        p,
        &[
            &["verify", "--cert-report", "c.csv", "--out", "v3.csv"][..],
            &attack[..],
        ]
        .concat(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stale"));

    fs::copy(p.join("c.csv"), p.join("orphan.csv")).unwrap();
    let out = run(p, &["verify", "--cert-report", "orphan.csv", "--out", "v4.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_modes() {
    let ws = workspace();
    let p = ws.path();
    let base = ["eval", "--model", "model", "--input", "data", "--m", "16"];
    ok(
        p,
        &[
            &base[..],
            &[
                "--saliency-mode",
                "oracle",
                "--metrics",
                "pixel_accuracy,average_precision,s_faith",
                "--out",
                "o.csv",
            ],
        ]
        .concat(),
    );
    let rows = csv_rows(&p.join("o.csv"));
    assert_eq!(rows.len(), 18);
    for r in &rows {
        let v: f64 = r[2].parse().unwrap();
        match r[1].as_str() {
            "s_faith" => assert_eq!(v, 64.0 / 0.01),
            _ => assert_eq!(v, 1.0, "{r:?}"),
        }
    }

    ok(
        p,
        &[
            &base[..],
            &["--saliency-mode", "random", "--dump-maps", "maps", "--out", "r1.csv"],
        ]
        .concat(),
    );
    ok(
        p,
        &[&base[..], &["--saliency-mode", "random", "--out", "r2.csv"]].concat(),
    );
    assert_eq!(fs::read(p.join("r1.csv")).unwrap(), fs::read(p.join("r2.csv")).unwrap());
    assert!(p.join("maps/img_0000_saliency.fvtn").exists());
    assert!(p.join("maps/img_0005_fused.fvtn").exists());

    let out = run(
        p,
        &[&base[..], &["--saliency-mode", "gradcam", "--out", "x.csv"]].concat(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = run(p, &[&base[..], &["--metrics", "accuracy", "--out", "x.csv"]].concat());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rollout_equals_raw_for_one_layer() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-data", "--count", "3", "--size", "8", "--out", "data"]);
    ok(p, &["init-model", "--size", "8", "--layers", "1", "--out", "model"]);
    let base = ["eval", "--model", "model", "--input", "data", "--m", "8"];
    ok(
        p,
        &[&base[..], &["--saliency-mode", "raw", "--out", "raw.csv"]].concat(),
    );
    ok(
        p,
        &[&base[..], &["--saliency-mode", "rollout", "--out", "roll.csv"]].concat(),
    );
    assert_eq!(
        fs::read(p.join("raw.csv")).unwrap(),
        fs::read(p.join("roll.csv")).unwrap()
    );
}
