use dpfmix::accountant::{clt_mu, MechanismStep};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

struct Workdir(tempfile::TempDir);

impl Workdir {
    fn new() -> Self {
        Workdir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_dpfmix"))
            .args(args)
            .current_dir(self.0.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn code(&self, args: &[&str]) -> i32 {
        self.run(args).status.code().unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_slice(&std::fs::read(self.path(name)).unwrap()).unwrap()
    }

    fn synth(&self, name: &str, draw: &str) {
        self.ok(&[
            "synth",
            "--n",
            "300",
            "--p",
            "8",
            "--classes",
            "3",
            "--seed",
            "1",
            "--draw",
            draw,
            "--output",
            name,
        ]);
    }
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn calibrate_reports_the_typical_setting() {
    let w = Workdir::new();
    let out = w.ok(&["calibrate", "--eps", "2", "--delta", "1e-5"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let mu = v["mu"].as_f64().unwrap();
    assert!((mu - 0.5016).abs() < 5e-4, "mu = {mu}");
    assert!((0.843..=0.846).contains(&v["sigma_eff"].as_f64().unwrap()));
    assert_eq!(v["config"]["n"], 50_000);
    assert_eq!(v["version"], dpfmix::VERSION);

    let cfg = &v["config"];
    let (n, m, t) = (
        cfg["n"].as_u64().unwrap(),
        cfg["m"].as_u64().unwrap(),
        cfg["T"].as_u64().unwrap(),
    );
    let step = MechanismStep::from_sigmas(
        n,
        m,
        v["sigma_x"].as_f64().unwrap(),
        v["sigma_y"].as_f64().unwrap(),
    )
    .unwrap();
    let back = clt_mu(&step, t, n, m).unwrap().mu();
    assert!((back - mu).abs() <= 1e-10 * mu);
}

#[test]
fn calibrate_budget_rules() {
    let w = Workdir::new();
    assert_eq!(w.code(&["calibrate", "--mu", "0"]), 5);
    assert_eq!(w.code(&["calibrate"]), 2);
    assert_eq!(
        w.code(&["calibrate", "--mu", "1", "--eps", "1", "--delta", "1e-5"]),
        2
    );
    assert_eq!(w.code(&["calibrate", "--eps", "1"]), 2);
    assert_eq!(w.code(&["calibrate", "--mu", "abc"]), 2);
    assert_eq!(
        w.code(&["calibrate", "--mu", "1", "--m", "10", "--n", "5"]),
        5
    );
}

#[test]
fn config_files_are_strict_and_flags_win() {
    let w = Workdir::new();
    std::fs::write(w.path("typo.json"), r#"{"mu": 1, "lamda": 2}"#).unwrap();
    assert_eq!(w.code(&["calibrate", "--config", "typo.json"]), 5);
    assert_eq!(w.code(&["calibrate", "--config", "missing.json"]), 3);

    std::fs::write(
        w.path("cfg.json"),
        r#"{"mu": 1, "m": 32, "output": "a.json"}"#,
    )
    .unwrap();
    w.ok(&["calibrate", "--config", "cfg.json", "--m", "16"]);
    let a = w.json("a.json");
    assert_eq!(a["config"]["m"], 16);
    assert_eq!(a["config"]["mu"], 1.0);

    // the output doubles as a manifest and reproduces itself
    w.ok(&["calibrate", "--config", "a.json", "--output", "b.json"]);
    let mut b = w.json("b.json");
    b["config"]["output"] = "a.json".into();
    assert_eq!(a, b);

    std::fs::write(
        w.path("wrong.json"),
        r#"{"command": "sweep", "config": {}}"#,
    )
    .unwrap();
    assert_eq!(w.code(&["calibrate", "--config", "wrong.json"]), 5);
}

#[test]
fn release_is_reproducible_and_guarded() {
    let w = Workdir::new();
    w.synth("data.csv", "0");
    let args = [
        "release", "--input", "data.csv", "--m", "8", "--T", "100", "--eps", "2", "--delta",
        "1e-5", "--seed", "9", "--output",
    ];
    let with = |out: &'static str| {
        let mut v = args.to_vec();
        v.push(out);
        v
    };
    w.ok(&with("r1"));
    w.ok(&with("r2"));
    for f in ["features.dpfm", "labels.dpfm", "manifest.json"] {
        assert_eq!(
            bytes(&w.path("r1").join(f)),
            bytes(&w.path("r2").join(f)),
            "{f}"
        );
    }
    let mut run2 = w.json("r2/run.json");
    run2["config"]["output"] = "r1".into();
    assert_eq!(w.json("r1/run.json"), run2);
    assert_eq!(w.code(&with("r1")), 5);
    let mut forced = with("r1");
    forced.push("--force");
    w.ok(&forced);

    let manifest = w.json("r1/manifest.json");
    let m: dpfmix::release::Manifest = serde_json::from_value(manifest.clone()).unwrap();
    m.verify().unwrap();
    assert_eq!(manifest["n"], 300);
    assert_eq!(manifest["T"], 100);

    w.ok(&["release", "--config", "r1/run.json", "--output", "r3"]);
    assert_eq!(
        bytes(&w.path("r1/features.dpfm")),
        bytes(&w.path("r3/features.dpfm"))
    );

    let mut too_big = args.to_vec();
    too_big[4] = "301";
    too_big.push("r4");
    assert_eq!(w.code(&too_big), 5);
    assert_eq!(
        w.code(&[
            "release", "--input", "nope.csv", "--output", "r5", "--m", "2", "--T", "5", "--mu", "1"
        ]),
        3
    );
}

#[test]
fn release_reads_binary_input_and_precomputed_features() {
    let w = Workdir::new();
    w.synth("data", "0");
    w.synth("feats", "1");
    w.ok(&[
        "release",
        "--input",
        "data",
        "--output",
        "rel",
        "--m",
        "4",
        "--T",
        "30",
        "--mu",
        "1",
        "--features-from",
        "feats/features.dpfm",
    ]);
    assert!(w.json("rel/manifest.json")["extractor"]
        .as_str()
        .unwrap()
        .starts_with("precomputed:"));
}

#[test]
fn malformed_csv_is_an_ingestion_error() {
    let w = Workdir::new();
    std::fs::write(w.path("bad.csv"), "f0,y0\n1.0,0\nnan,1\n").unwrap();
    let out = w.run(&[
        "release", "--input", "bad.csv", "--output", "o", "--m", "1", "--T", "2", "--mu", "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"));
}

#[test]
fn accountant_compare_writes_a_dominated_table() {
    let w = Workdir::new();
    w.ok(&[
        "accountant-compare",
        "--m-list",
        "1,64,4096",
        "--output",
        "a.csv",
    ]);
    w.ok(&[
        "accountant-compare",
        "--m-list",
        "1,64,4096",
        "--output",
        "b.csv",
    ]);
    assert_eq!(bytes(&w.path("a.csv")), bytes(&w.path("b.csv")));
    let text = String::from_utf8(bytes(&w.path("a.csv"))).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m,gdp_noise,rdp_noise"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1] <= r[2]));
    assert_eq!(
        w.json("a.csv.manifest.json")["command"],
        "accountant-compare"
    );

    std::fs::write(w.path("empty.json"), r#"{"m-list": []}"#).unwrap();
    assert_eq!(
        w.code(&[
            "accountant-compare",
            "--config",
            "empty.json",
            "--output",
            "c.csv"
        ]),
        2
    );
}

#[test]
fn sweep_writes_one_row_per_grid_point_and_needs_three_sizes() {
    let w = Workdir::new();
    let base = [
        "sweep",
        "--gamma",
        "1.5",
        "--engine",
        "moment",
        "--repeats",
        "2",
        "--p",
        "10",
    ];
    let mut one = base.to_vec();
    one.extend(["--n-list", "256", "--output", "s1"]);
    assert_eq!(w.code(&one), 2);
    let csv = String::from_utf8(bytes(&w.path("s1/sweep_n256.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);

    let mut three = base.to_vec();
    three.extend([
        "--n-list",
        "256,512,1024",
        "--grid",
        "geometric:2",
        "--output",
        "s3",
    ]);
    w.ok(&three);
    let summary = w.json("s3/summary.json");
    assert!(summary["slope"].is_number() && summary["r2"].is_number());
    let slope = String::from_utf8(bytes(&w.path("s3/slope.csv"))).unwrap();
    assert_eq!(slope.lines().next(), Some("log2n,log2mstar,gamma"));
    assert_eq!(slope.lines().count(), 4);
    assert_eq!(w.json("s3/run.json")["config"]["engine"], "moment");
    assert_eq!(
        w.code(&[
            "sweep",
            "--gamma",
            "2.5",
            "--n-list",
            "64,128,256",
            "--output",
            "s4"
        ]),
        5
    );
}

#[test]
fn curves_and_convergence_tables() {
    let w = Workdir::new();
    w.ok(&[
        "tradeoff-curve",
        "--mu",
        "1",
        "--grid-size",
        "11",
        "--output",
        "g.csv",
    ]);
    let g = String::from_utf8(bytes(&w.path("g.csv"))).unwrap();
    assert_eq!(g.lines().count(), 12);
    assert_eq!(
        w.code(&[
            "tradeoff-curve",
            "--mu",
            "1",
            "--T",
            "3",
            "--output",
            "x.csv"
        ]),
        2
    );

    w.ok(&[
        "clt-convergence",
        "--T-list",
        "10,40",
        "--grid-size",
        "1001",
        "--output",
        "c.csv",
    ]);
    let c = String::from_utf8(bytes(&w.path("c.csv"))).unwrap();
    assert_eq!(c.lines().next(), Some("T,linf_err,l2_err"));
    assert_eq!(c.lines().count(), 3);
}

#[test]
fn train_eval_emits_the_fixed_metrics_schema() {
    let w = Workdir::new();
    w.synth("members.csv", "0");
    w.synth("others.csv", "1");
    w.ok(&[
        "release",
        "--input",
        "members.csv",
        "--output",
        "rel",
        "--m",
        "4",
        "--T",
        "300",
        "--mu",
        "1",
        "--seed",
        "2",
    ]);
    let run = [
        "train-eval",
        "--release",
        "rel",
        "--train-clean",
        "members.csv",
        "--test-clean",
        "others.csv",
        "--epochs",
        "10",
        "--batch-size",
        "50",
        "--seed",
        "3",
        "--checkpoint",
        "model",
        "--output",
    ];
    let mut a = run.to_vec();
    a.push("m1.json");
    w.ok(&a);
    let mut b = run.to_vec();
    b.push("m2.json");
    w.ok(&b);
    assert_eq!(bytes(&w.path("m1.json")), bytes(&w.path("m2.json")));
    let m = w.json("m1.json");
    let keys: Vec<&String> = m.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["accuracy", "auc", "gap"]);
    assert!(w.path("model.dpfm").is_file() && w.path("model.json").is_file());

    let mut missing = run.to_vec();
    missing[2] = "no-such-dir";
    missing.push("m3.json");
    assert_eq!(w.code(&missing), 3);
}
