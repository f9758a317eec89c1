use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MODELS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/models");

fn binfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binfer"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = binfer(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = binfer(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8_lossy(&out.stderr).into_owned() + &String::from_utf8_lossy(&out.stdout)
}

fn model(name: &str) -> String {
    format!("{MODELS}/{name}")
}

struct Artifacts {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Artifacts {
    fn path(&self, f: &str) -> String {
        self.root.join(f).to_str().unwrap().to_string()
    }

    /// Random weights and batch-norm parameters for the toy model, folded thresholds and 64 images.
    fn toy() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let a = Artifacts {
            root: dir.path().to_path_buf(),
            _dir: dir,
        };
        ok(&[
            "gen",
            "--model",
            &model("toy.toml"),
            "--seed",
            "3",
            "--model-out",
            &a.path("m.toml"),
            "--weights-out",
            &a.path("w.bnnw"),
        ]);
        ok(&[
            "fold",
            "--model",
            &a.path("m.toml"),
            "--out",
            &a.path("t.bin"),
        ]);
        // The toy input is 8x8x3, so images come from --random.
        a
    }

    fn infer(&self, extra: &[&str]) -> Output {
        let (m, w, t) = (self.path("m.toml"), self.path("w.bnnw"), self.path("t.bin"));
        let mut args = vec!["infer", "--model", &m, "--weights", &w, "--thresholds", &t];
        args.extend(extra);
        binfer(&args)
    }
}

#[test]
fn infer_modes_agree_and_rows_are_ordered() {
    let a = Artifacts::toy();
    let seq = a.path("seq.csv");
    let stream = a.path("stream.csv");
    for (mode, out) in [("sequential", &seq), ("streaming", &stream)] {
        let o = a.infer(&[
            "--random", "64", "--seed", "5", "--mode", mode, "--batch", "16", "--out", out,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let s = std::fs::read_to_string(&seq).unwrap();
    assert_eq!(s, std::fs::read_to_string(&stream).unwrap());
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 65);
    assert!(lines[0].starts_with("index,label,prediction,score_0"));
    for (i, l) in lines[1..].iter().enumerate() {
        assert!(l.starts_with(&format!("{i},,")));
    }
    // Rerun is byte-identical.
    let again = a.path("again.csv");
    assert!(a
        .infer(&["--random", "64", "--seed", "5", "--out", &again])
        .status
        .success());
    assert_eq!(s, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn infer_errors_name_the_layer() {
    let a = Artifacts::toy();
    // Drop the last threshold block.
    let t = std::fs::read(a.path("t.bin")).unwrap();
    let keep = 4 + 8 * 5 + 4 + 20 * 5;
    std::fs::write(a.path("t.bin"), &t[..keep]).unwrap();
    let o = a.infer(&["--random", "2"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("layer 2 (fc1)") && err.contains("missing thresholds"),
        "{err}"
    );

    let o = a.infer(&["--images", &a.path("nope.bin")]);
    assert!(!o.status.success());
}

#[test]
fn infer_reads_cifar_records() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    ok(&[
        "gen",
        "--model",
        &model("bcnn_cifar10.toml"),
        "--seed",
        "1",
        "--model-out",
        &p("m.toml"),
        "--weights-out",
        &p("w.bnnw"),
    ]);
    ok(&["fold", "--model", &p("m.toml"), "--out", &p("t.bin")]);
    let mut records = Vec::new();
    for label in 0..3u8 {
        records.push(label);
        records.extend((0..3072).map(|i| (i * 7 + label as usize * 13) as u8));
    }
    std::fs::write(p("batch.bin"), &records).unwrap();
    let csv = ok(&[
        "infer",
        "--model",
        &p("m.toml"),
        "--weights",
        &p("w.bnnw"),
        "--thresholds",
        &p("t.bin"),
        "--images",
        &p("batch.bin"),
        "--count",
        "2",
    ]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,0,") && rows[2].starts_with("1,1,"));
    std::fs::write(p("short.bin"), &records[..100]).unwrap();
    let err = fails(&[
        "infer",
        "--model",
        &p("m.toml"),
        "--weights",
        &p("w.bnnw"),
        "--thresholds",
        &p("t.bin"),
        "--images",
        &p("short.bin"),
    ]);
    assert!(err.contains("truncated"), "{err}");
}

#[test]
fn estimate_reports_reference_figures() {
    let m = model("bcnn_cifar10.toml");
    let arch = model("bcnn_cifar10_arch.toml");
    let text = ok(&["estimate", "--model", &m, "--arch", &arch]);
    assert!(text.contains("fps: 7324"), "{text}");
    assert!(text.contains("bottleneck: conv2"), "{text}");
    let measured = ok(&[
        "estimate",
        "--model",
        &m,
        "--arch",
        &arch,
        "--measured",
        "5233,12386,12296,13329,12386,14473",
    ]);
    assert!(measured.contains("fps: 6218"), "{measured}");
    let json = ok(&[
        "estimate", "--model", &m, "--arch", &arch, "--format", "json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["layers"][1]["cycle_est"], 12288);
    assert_eq!(v["lut_lower_bound"], 20007);
    let err = fails(&[
        "estimate",
        "--model",
        &m,
        "--arch",
        &arch,
        "--freq-mhz",
        "0",
    ]);
    assert!(err.contains("frequency"), "{err}");
}

#[test]
fn plan_writes_usable_arch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("arch.toml");
    let out_s = out.to_str().unwrap();
    let m = model("bcnn_cifar10.toml");
    let budget = "luts=433200,brams=2060,dsps=2800,overhead=calibrated";
    let text = ok(&["plan", "--model", &m, "--budget", budget, "--out", out_s]);
    assert!(text.contains("max cycle_est: 12288"), "{text}");
    let first = std::fs::read_to_string(&out).unwrap();
    ok(&["plan", "--model", &m, "--budget", budget, "--out", out_s]);
    assert_eq!(
        first,
        std::fs::read_to_string(&out).unwrap(),
        "plan must be deterministic"
    );
    let est = ok(&["estimate", "--model", &m, "--arch", out_s]);
    assert!(est.contains("fps: 7324"), "{est}");
    let err = fails(&["plan", "--model", &m, "--budget", "luts=10"]);
    assert!(err.contains("infeasible"), "{err}");
    let err = fails(&["plan", "--model", &m, "--budget", "luts=ten"]);
    assert!(err.contains("luts"), "{err}");
}

#[test]
fn verify_passes_fails_and_dumps() {
    let toy = model("toy.toml");
    let text = ok(&["verify", "--model", &toy, "--seed", "42", "--cases", "100"]);
    assert!(text.contains("PASS"), "{text}");
    ok(&[
        "verify",
        "--model",
        &toy,
        "--cases",
        "20",
        "--random-networks",
    ]);

    let zero = binfer(&["verify", "--model", &toy, "--cases", "0"]);
    assert!(zero.status.success());
    assert!(String::from_utf8_lossy(&zero.stderr).contains("warning"));

    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("repro");
    let o = binfer(&[
        "verify",
        "--model",
        &toy,
        "--cases",
        "3",
        "--inject-bitflip",
        "--dump",
        dump.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(
        text.contains("FAIL case 0") && text.contains("reproduce:"),
        "{text}"
    );
    for f in ["model.toml", "weights.bnnw", "thresholds.bin", "input.txt"] {
        assert!(Path::new(&dump).join(f).exists(), "{f} missing from dump");
    }
}

#[test]
fn bench_reports_both_modes() {
    let a = Artifacts::toy();
    let (m, w, t) = (a.path("m.toml"), a.path("w.bnnw"), a.path("t.bin"));
    let text = ok(&[
        "bench",
        "--model",
        &m,
        "--weights",
        &w,
        "--thresholds",
        &t,
        "--images",
        "8",
    ]);
    assert!(
        text.contains("sequential") && text.contains("streaming") && text.contains("images/s"),
        "{text}"
    );
}

#[test]
fn fold_rejects_bad_models() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "name = \"x\"\ninput = { width = 1, height = 1, depth = 1 }\nlayers = []\n",
    )
    .unwrap();
    fails(&[
        "fold",
        "--model",
        p.to_str().unwrap(),
        "--out",
        dir.path().join("t.bin").to_str().unwrap(),
    ]);
}
