//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run all criteria with `cargo test --release -p dpfmix-cli --test acceptance`
//! or a subset by number, e.g. `... --test acceptance -- 3 5`.

use dpfmix::accountant::{calibrate_noise, clt_convergence, noise_vs_m_table, PrivacyBudget};
use dpfmix::data::{gaussian_classes, FeatureDataset};
use dpfmix::learner::{
    self, clip_labels, generalized_kl, membership_report, LinearModel, TrainConfig,
};
use dpfmix::par::Execution;
use dpfmix::regression::{
    fit_slope, geometric_grid, powers_of_two_grid, sweep_m, Engine, SweepConfig,
};
use dpfmix::release::{release_with, ReleaseConfig, ReleaseOptions};
use dpfmix::rng::{child_seed, stream, Purpose};
use dpfmix::tradeoff::{
    epsdelta_to_mu, mu_to_epsdelta, EpsDelta, GaussianTradeoffParam, DEFAULT_GRID_SIZE,
};
use rand::Rng;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = fn() -> Outcome;

const CRITERIA: [(u32, &str, Criterion); 10] = [
    (1, "budget round trip", budget_round_trip),
    (2, "typical-setting cross-check", typical_setting),
    (3, "CLT convergence", clt_convergence_check),
    (4, "accountant dominance", accountant_dominance),
    (5, "m* scaling law", scaling_law),
    (6, "non-monotonicity witness", non_monotonicity),
    (7, "release correctness", release_correctness),
    (8, "learner numerics", learner_numerics),
    (9, "membership ordering", membership_ordering),
    (10, "CLI end to end", cli_end_to_end),
];

fn main() {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} [{id:>2}] {name}: {} ({:.1} s)",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn budget_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(1, Purpose::Synthetic, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let eps = rng.random_range(0.1..=10.0);
        let delta = 10f64.powf(rng.random_range(-8.0..=-3.0));
        let mu = epsdelta_to_mu(EpsDelta::new(eps, delta).unwrap()).unwrap();
        let back = mu_to_epsdelta(mu, eps).unwrap().delta;
        worst = worst.max((back - delta).abs() / delta);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && within(elapsed, 1.0),
        format!(
            "max relative residual {worst:.2e} (tol 1e-10), {:.3} s (limit 1 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn typical_setting() -> Outcome {
    let mu = GaussianTradeoffParam::new(0.5016).unwrap();
    let s = calibrate_noise(50_000, 64, 50_000, mu, 1.0, 1.0, 1.0).unwrap();
    let sigma = s.effective_sigma();
    let delta = mu_to_epsdelta(mu, 2.0).unwrap().delta;
    outcome(
        (0.843..=0.846).contains(&sigma) && (0.9e-5..=1.1e-5).contains(&delta),
        format!(
            "sigma_eff = {sigma:.6} in [0.843, 0.846], delta(2) = {delta:.4e} in [0.9e-5, 1.1e-5]"
        ),
    )
}

fn clt_convergence_check() -> Outcome {
    let start = Instant::now();
    let mu = GaussianTradeoffParam::new(0.5016).unwrap();
    let sigma = calibrate_noise(50_000, 64, 50_000, mu, 1.0, 1.0, 1.0)
        .unwrap()
        .effective_sigma();
    let nu = mu.mu() / (1.0 / (sigma * sigma)).exp_m1().sqrt();
    let rows = clt_convergence(
        nu,
        sigma,
        &[10, 50, 200],
        DEFAULT_GRID_SIZE,
        Execution::default(),
    )
    .unwrap();
    let e: Vec<f64> = rows.iter().map(|r| r.linf_err).collect();
    let elapsed = start.elapsed();
    outcome(
        e[0] > e[1] && e[1] > e[2] && e[2] * 2.0 <= e[0] && within(elapsed, 120.0),
        format!(
            "linf at T = 10, 50, 200: {:.4e}, {:.4e}, {:.4e}; ratio {:.2} (need >= 2), {:.1} s (limit 120 s)",
            e[0],
            e[1],
            e[2],
            e[0] / e[2],
            elapsed.as_secs_f64()
        ),
    )
}

fn accountant_dominance() -> Outcome {
    let start = Instant::now();
    let ms: Vec<u64> = (0..=14).map(|k| 1u64 << k).collect();
    let target = EpsDelta::new(1.0, 1e-5).unwrap();
    let rows = noise_vs_m_table(50_000, 50_000, target, &ms, Execution::default()).unwrap();
    let bad: Vec<u64> = rows
        .iter()
        .filter(|r| r.gdp_noise > r.rdp_noise)
        .map(|r| r.m)
        .collect();
    let ratio = rows
        .iter()
        .map(|r| r.rdp_noise / r.gdp_noise)
        .fold(f64::INFINITY, f64::min);
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && within(elapsed, 300.0),
        format!(
            "GDP <= RDP at {}/{} values of m (min RDP/GDP ratio {ratio:.3}), {:.1} s (limit 300 s)",
            rows.len() - bad.len(),
            rows.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn scaling_law() -> Outcome {
    let start = Instant::now();
    let mu = GaussianTradeoffParam::new(2.0).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (g, gamma) in [1.0, 1.2, 1.5].into_iter().enumerate() {
        let points: Vec<(f64, f64)> = (10..=13)
            .map(|k| {
                let n = 1usize << k;
                let mut cfg = SweepConfig::new(n, gamma, mu, child_seed(5, 16 * g as u64 + k));
                cfg.engine = Engine::Moment;
                cfg.m_grid = geometric_grid(n, 4);
                let r = sweep_m(&cfg).unwrap();
                (k as f64, (r.m_star as f64).log2())
            })
            .collect();
        let fit = fit_slope(&points).unwrap();
        let target = (2.0 - gamma) / 2.0;
        pass &= (fit.slope - target).abs() <= 0.15 && fit.r2 >= 0.9;
        parts.push(format!(
            "gamma {gamma}: slope {:.3} vs {target:.2}, r2 {:.3}",
            fit.slope, fit.r2
        ));
    }
    let elapsed = start.elapsed();
    outcome(
        pass && within(elapsed, 1800.0),
        format!("{} (tol 0.15, r2 >= 0.9)", parts.join("; ")),
    )
}

fn non_monotonicity() -> Outcome {
    let mu = GaussianTradeoffParam::new(2.0).unwrap();
    let mut pass = true;
    let mut stars = Vec::new();
    for s in 0..5 {
        let mut cfg = SweepConfig::new(4096, 1.0, mu, child_seed(6, s));
        cfg.m_grid = powers_of_two_grid(4096);
        cfg.repeats = 4;
        let r = sweep_m(&cfg).unwrap();
        let first = r.records.first().unwrap().mean_err;
        let last = r.records.last().unwrap().mean_err;
        let best = r.mean_at(r.m_star).unwrap();
        let interior =
            r.m_star != r.records.first().unwrap().m && r.m_star != r.records.last().unwrap().m;
        pass &= interior && best < first && best < last;
        stars.push(r.m_star.to_string());
    }
    outcome(
        pass,
        format!(
            "interior minimum for all 5 seeds, m* = {}",
            stars.join(", ")
        ),
    )
}

fn release_correctness() -> Outcome {
    let data = gaussian_classes(1000, 10, 10, 1.0, 7, 0).unwrap();
    let budget = PrivacyBudget::Mu(2.0);
    let cfg = ReleaseConfig::new(16, 500, budget, 11);
    let quiet = |exec| ReleaseOptions {
        noise: false,
        execution: exec,
    };
    let noisy = |exec| ReleaseOptions {
        noise: true,
        execution: exec,
    };

    // Zeroing one record must move every pre-noise feature record by at most C_x/m.
    let (mut x, y) = data.clone().into_parts();
    x.row_mut(0).fill(0.0);
    let neighbour = FeatureDataset::new(x, y).unwrap();
    let a = release_with(&data, &cfg, quiet(Execution::Sequential)).unwrap();
    let b = release_with(&neighbour, &cfg, quiet(Execution::Sequential)).unwrap();
    let shift = (&a.features - &b.features)
        .outer_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    let bound = cfg.c_x / cfg.m as f64;
    let sensitivity = shift <= bound * (1.0 + 1e-12);

    let r1 = release_with(&data, &cfg, noisy(Execution::Sequential)).unwrap();
    let r2 = release_with(&data, &cfg, noisy(Execution::Parallel)).unwrap();
    let r3 = release_with(&data, &cfg, noisy(Execution::Parallel)).unwrap();
    let deterministic = r1 == r2 && r2 == r3 && r1.manifest.verify().is_ok();

    let diff = &r1.features - &a.features;
    let count = diff.len() as f64;
    let mean = diff.sum() / count;
    let var = diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (count - 1.0);
    let expected = r1.manifest.sigma_x_eff.powi(2);
    let rel = (var / expected - 1.0).abs();
    outcome(
        sensitivity && deterministic && rel <= 0.05,
        format!(
            "max shift {shift:.4e} <= C_x/m = {bound:.4e}; bit-identical across runs and schedules: {deterministic}; noise variance off by {:.2}% (tol 5%)",
            100.0 * rel
        ),
    )
}

fn learner_numerics() -> Outcome {
    let data = gaussian_classes(40, 6, 4, 1.0, 8, 0).unwrap();
    let mut rng = stream(8, Purpose::Init, 0);
    let mut model = LinearModel::zeros(4, 6);
    model.weights.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    model.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let targets = data.labels().mapv(|v| 0.8 * v + 0.05);
    let x = data.features().view();
    let (_, gw, gb) = model.loss_and_gradient(x, targets.view()).unwrap();
    let loss = |m: &LinearModel| m.loss_and_gradient(x, targets.view()).unwrap().0;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..4 {
        for j in 0..6 {
            let (mut up, mut dn) = (model.clone(), model.clone());
            up.weights[[i, j]] += h;
            dn.weights[[i, j]] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            worst = worst.max((fd - gw[[i, j]]).abs() / gw[[i, j]].abs().max(1e-3));
        }
        let (mut up, mut dn) = (model.clone(), model.clone());
        up.bias[i] += h;
        dn.bias[i] -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        worst = worst.max((fd - gb[i]).abs() / gb[i].abs().max(1e-3));
    }
    let p = [0.1, 0.2, 0.3, 0.4];
    let self_kl = generalized_kl(&p, &p).unwrap();
    let ln2 = generalized_kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    let ln2_err = (ln2 - std::f64::consts::LN_2).abs();
    outcome(
        worst <= 1e-5 && self_kl == 0.0 && ln2_err <= 1e-12,
        format!(
            "gradient max relative error {worst:.2e} (tol 1e-5); D(p||p) = {self_kl}; |D - ln 2| = {ln2_err:.1e} (tol 1e-12)"
        ),
    )
}

fn membership_ordering() -> Outcome {
    const SEEDS: u64 = 20;
    let mut auc = [0.0f64; 3];
    for s in 0..SEEDS {
        let members = gaussian_classes(500, 200, 10, 0.15, 9, 2 * s).unwrap();
        let others = gaussian_classes(500, 200, 10, 0.15, 9, 2 * s + 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            seed: s,
            ..TrainConfig::default()
        };
        let report = |model: &LinearModel| {
            membership_report(
                model,
                members.features().view(),
                members.labels().view(),
                others.features().view(),
                others.labels().view(),
            )
            .unwrap()
            .auc
        };
        let clean =
            learner::train(members.features().view(), members.labels().view(), &cfg).unwrap();
        auc[0] += report(&clean);
        let rc = ReleaseConfig::new(
            32,
            1000,
            PrivacyBudget::EpsDelta {
                eps: 1.0,
                delta: 1e-5,
            },
            s,
        );
        for (slot, noise) in [(1, false), (2, true)] {
            let opts = ReleaseOptions {
                noise,
                execution: Execution::default(),
            };
            let rel = release_with(&members, &rc, opts).unwrap();
            let model =
                learner::train(rel.features.view(), clip_labels(&rel.labels).view(), &cfg).unwrap();
            auc[slot] += report(&model);
        }
    }
    auc.iter_mut().for_each(|a| *a /= SEEDS as f64);
    outcome(
        auc[0] > auc[1] && auc[1] > 0.5 && (auc[2] - 0.5).abs() <= 0.02,
        format!(
            "mean AUC over {SEEDS} seeds: non-private {:.4} > mixup-only {:.4} > 0.5; DP (eps = 1) {:.4} within 0.02 of 0.5",
            auc[0], auc[1], auc[2]
        ),
    )
}

struct Cli {
    dir: tempfile::TempDir,
}

impl Cli {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> (i32, String) {
        let out = Command::new(env!("CARGO_BIN_EXE_dpfmix"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .expect("spawn dpfmix");
        let text = String::from_utf8_lossy(&out.stdout).into_owned()
            + &String::from_utf8_lossy(&out.stderr);
        (out.status.code().unwrap_or(-1), text)
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_default()
}

fn cli_end_to_end() -> Outcome {
    let cli = Cli {
        dir: tempfile::tempdir().unwrap(),
    };
    let steps: &[(&str, &[&str])] = &[
        (
            "synth members",
            &[
                "synth",
                "--n",
                "600",
                "--p",
                "20",
                "--classes",
                "5",
                "--seed",
                "3",
                "--output",
                "members.csv",
            ],
        ),
        (
            "synth nonmembers",
            &[
                "synth",
                "--n",
                "600",
                "--p",
                "20",
                "--classes",
                "5",
                "--seed",
                "3",
                "--draw",
                "1",
                "--output",
                "nonmembers.csv",
            ],
        ),
        (
            "calibrate",
            &[
                "calibrate",
                "--eps",
                "2",
                "--delta",
                "1e-5",
                "--output",
                "calibrate.json",
            ],
        ),
        (
            "release",
            &[
                "release",
                "--input",
                "members.csv",
                "--output",
                "rel",
                "--m",
                "8",
                "--T",
                "600",
                "--eps",
                "2",
                "--delta",
                "1e-5",
                "--seed",
                "4",
            ],
        ),
        (
            "release rerun",
            &["release", "--config", "rel/run.json", "--output", "rel2"],
        ),
        (
            "train-eval",
            &[
                "train-eval",
                "--release",
                "rel",
                "--train-clean",
                "members.csv",
                "--test-clean",
                "nonmembers.csv",
                "--epochs",
                "5",
                "--batch-size",
                "64",
                "--output",
                "metrics.json",
            ],
        ),
        (
            "accountant-compare",
            &[
                "accountant-compare",
                "--m-list",
                "1,16,256",
                "--output",
                "fig1.csv",
            ],
        ),
        (
            "clt-convergence",
            &[
                "clt-convergence",
                "--T-list",
                "10,50",
                "--grid-size",
                "2001",
                "--output",
                "clt.csv",
            ],
        ),
        (
            "tradeoff-curve",
            &[
                "tradeoff-curve",
                "--sample-rate",
                "0.01",
                "--sigma-eff",
                "0.9",
                "--T",
                "20",
                "--grid-size",
                "1001",
                "--output",
                "curve.csv",
            ],
        ),
        (
            "sweep",
            &[
                "sweep",
                "--gamma",
                "1.5",
                "--n-list",
                "256,512,1024",
                "--engine",
                "moment",
                "--repeats",
                "2",
                "--p",
                "20",
                "--output",
                "sweep",
            ],
        ),
    ];
    let mut failures = Vec::new();
    for (name, args) in steps {
        let (code, text) = cli.run(args);
        if code != 0 {
            failures.push(format!("{name} exited {code}: {}", text.trim()));
        }
    }
    let same = read(&cli.path("rel/features.dpfm")) == read(&cli.path("rel2/features.dpfm"))
        && !read(&cli.path("rel/features.dpfm")).is_empty();
    if !same {
        failures.push("release rerun from its manifest differs".into());
    }
    let metrics: serde_json::Value =
        serde_json::from_slice(&read(&cli.path("metrics.json"))).unwrap_or_default();
    if ["accuracy", "gap", "auc"]
        .iter()
        .any(|k| !metrics[k].is_number())
    {
        failures.push("metrics JSON lacks accuracy/gap/auc".into());
    }
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/run_acceptance.sh");
    if !script.is_file() {
        failures.push("scripts/run_acceptance.sh is missing".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} CLI steps succeeded offline; manifest re-run is byte-identical",
                steps.len()
            )
        } else {
            failures.join("; ")
        },
    )
}
