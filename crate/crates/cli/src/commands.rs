//! Subcommand bodies. Each resolves its keys, runs the library and writes
//! its outputs plus a run manifest.

use crate::config::{required, sidecar, write_manifest};
use crate::CliError;
use crate::{
    CalibrateArgs, CltArgs, CompareArgs, CurveArgs, ReleaseArgs, SweepArgs, SynthArgs, TrainArgs,
};
use dpfmix::accountant::{
    self, calibrate_noise, compose_exact, epsdelta_table, noise_vs_m_table, write_clt_table,
    write_noise_table, MechanismStep, PldGrid, PrivacyBudget,
};
use dpfmix::data::{gaussian_classes, load_dataset, store_dataset, DatasetFormat};
use dpfmix::learner::{self, TrainConfig};
use dpfmix::par::Execution;
use dpfmix::regression::{
    fit_slope, geometric_grid, powers_of_two_grid, sweep_m, write_slope_csv, write_sweep_csv,
    Engine, SweepConfig,
};
use dpfmix::release::{self, Extractor, ReleaseConfig};
use dpfmix::tradeoff::{gaussian_tradeoff, GaussianTradeoffParam, DEFAULT_GRID_SIZE};
use serde::Serialize;
use serde_json::json;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

const EPS_TABLE: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(dpfmix::Error::from)?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(dpfmix::Error::from)?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(dpfmix::Error::from)?;
    writeln!(w).map_err(dpfmix::Error::from)?;
    Ok(())
}

/// Exactly one of μ or the (ε, δ) pair.
fn budget(
    mu: Option<f64>,
    eps: Option<f64>,
    delta: Option<f64>,
) -> Result<PrivacyBudget, CliError> {
    match (mu, eps, delta) {
        (Some(mu), None, None) => Ok(PrivacyBudget::Mu(mu)),
        (None, Some(eps), Some(delta)) => Ok(PrivacyBudget::EpsDelta { eps, delta }),
        _ => Err(CliError::Usage(
            "give exactly one of --mu or the pair --eps and --delta".into(),
        )),
    }
}

fn resolve_mu(b: PrivacyBudget) -> Result<GaussianTradeoffParam, CliError> {
    b.resolve_mu().map_err(|e| match e {
        dpfmix::Error::Domain(msg) | dpfmix::Error::Accuracy(msg) => CliError::Config(msg),
        other => other.into(),
    })
}

pub fn calibrate(mut a: CalibrateArgs) -> Result<(), CliError> {
    let b = budget(a.mu, a.eps, a.delta)?;
    if let PrivacyBudget::Mu(mu) = b {
        if mu.is_nan() || mu <= 0.0 {
            return Err(CliError::Config(format!("non-positive budget mu = {mu}")));
        }
    }
    let n = *a.n.get_or_insert(50_000);
    let m = *a.m.get_or_insert(64);
    let t = *a.t.get_or_insert(50_000);
    let c_x = *a.c_x.get_or_insert(1.0);
    let c_y = *a.c_y.get_or_insert(1.0);
    let lambda = *a.lambda.get_or_insert(1.0);
    let mu = resolve_mu(b)?;
    let s = calibrate_noise(n, m, t, mu, c_x, c_y, lambda)?;
    let table = epsdelta_table(mu, &EPS_TABLE)?;
    let out = json!({
        "command": "calibrate",
        "config": &a,
        "version": dpfmix::VERSION,
        "mu": mu.mu(),
        "sigma_x": s.sigma_x,
        "sigma_y": s.sigma_y,
        "sigma_x_eff": s.sigma_x_eff,
        "sigma_y_eff": s.sigma_y_eff,
        "sigma_eff": s.effective_sigma(),
        "lambda": s.lambda,
        "epsdelta": table,
    });
    match &a.output {
        Some(path) => write_json(path, &out),
        None => {
            let text = serde_json::to_string_pretty(&out).map_err(dpfmix::Error::from)?;
            println!("{text}");
            Ok(())
        }
    }
}

pub fn release(mut a: ReleaseArgs, force: bool) -> Result<(), CliError> {
    let input = required(a.input.clone(), "input")?;
    let output = required(a.output.clone(), "output")?;
    let m = required(a.m, "m")?;
    let t = required(a.t, "T")?;
    let b = budget(a.mu, a.eps, a.delta)?;
    let cfg = ReleaseConfig {
        m,
        t,
        c_x: *a.c_x.get_or_insert(1.0),
        c_y: *a.c_y.get_or_insert(1.0),
        lambda: *a.lambda.get_or_insert(1.0),
        budget: b,
        seed: *a.seed.get_or_insert(0),
        extractor: match &a.features_from {
            Some(p) => Extractor::Precomputed(p.clone()),
            None => Extractor::Identity,
        },
    };
    let data = load_dataset(&input, DatasetFormat::detect(&input))?;
    let rel = release::release(&data, &cfg)?;
    rel.manifest.verify()?;
    release::store_released(&rel, &output, force)?;
    write_manifest(&output.join("run.json"), "release", &a)
}

fn parse_grid(spec: &str, n: usize) -> Result<Vec<u64>, CliError> {
    match spec.split_once(':') {
        None if spec == "pow2" => Ok(powers_of_two_grid(n)),
        Some(("geometric", k)) => match k.parse::<u32>() {
            Ok(k) if k > 0 => Ok(geometric_grid(n, k)),
            _ => Err(CliError::Config(format!(
                "bad steps per octave in grid {spec:?}"
            ))),
        },
        _ => Err(CliError::Config(format!(
            "unknown grid {spec:?}, expected \"pow2\" or \"geometric:<k>\""
        ))),
    }
}

pub fn sweep(mut a: SweepArgs) -> Result<(), CliError> {
    let gamma = required(a.gamma, "gamma")?;
    let n_list = required(a.n_list.clone(), "n-list")?;
    let output = required(a.output.clone(), "output")?;
    if n_list.is_empty() {
        return Err(CliError::Usage("--n-list is empty".into()));
    }
    let mu = resolve_mu(PrivacyBudget::Mu(*a.mu.get_or_insert(2.0)))?;
    let engine: Engine = a.engine.get_or_insert_with(|| "exact".into()).parse()?;
    let grid = a.grid.get_or_insert_with(|| "pow2".into()).clone();
    let repeats = *a.repeats.get_or_insert(20);
    let seed = *a.seed.get_or_insert(0);
    let p = *a.p.get_or_insert(100);
    let (c_x, c_y, lambda) = (
        *a.c_x.get_or_insert(14.0),
        *a.c_y.get_or_insert(36.0),
        *a.lambda.get_or_insert(1.0),
    );
    std::fs::create_dir_all(&output).map_err(dpfmix::Error::from)?;
    write_manifest(&output.join("run.json"), "sweep", &a)?;
    let mut points = Vec::with_capacity(n_list.len());
    let mut per_n = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        let mut cfg = SweepConfig::new(n, gamma, mu, dpfmix::rng::child_seed(seed, i as u64));
        cfg.engine = engine;
        cfg.m_grid = parse_grid(&grid, n)?;
        cfg.repeats = repeats;
        cfg.p = p;
        cfg.c_x = c_x;
        cfg.c_y = c_y;
        cfg.lambda = lambda;
        let r = sweep_m(&cfg)?;
        for w in &r.warnings {
            eprintln!("dpfmix: n = {n}: {w}");
        }
        write_sweep_csv(&r, create(&output.join(format!("sweep_n{n}.csv")))?)?;
        points.push(((n as f64).log2(), (r.m_star as f64).log2()));
        per_n.push(json!({ "n": n, "T": r.t, "m_star": r.m_star }));
    }
    write_slope_csv(&points, gamma, create(&output.join("slope.csv"))?)?;
    if points.len() < 3 {
        return Err(CliError::Usage(format!(
            "slope fit needs at least 3 values in --n-list, got {}",
            points.len()
        )));
    }
    let fit = fit_slope(&points)?;
    let summary = json!({
        "gamma": gamma,
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r2": fit.r2,
        "predicted_slope": (2.0 - gamma) / 2.0,
        "runs": per_n,
    });
    write_json(&output.join("summary.json"), &summary)
}

pub fn accountant_compare(mut a: CompareArgs) -> Result<(), CliError> {
    let output = required(a.output.clone(), "output")?;
    let n = *a.n.get_or_insert(50_000);
    let t = *a.t.get_or_insert(50_000);
    let eps = *a.eps.get_or_insert(1.0);
    let delta = *a.delta.get_or_insert(1e-5);
    let m_list = a
        .m_list
        .get_or_insert_with(|| (0..=14).map(|k| 1u64 << k).collect())
        .clone();
    if m_list.is_empty() {
        return Err(CliError::Usage("--m-list is empty".into()));
    }
    let target = dpfmix::tradeoff::EpsDelta::new(eps, delta)?;
    let rows = noise_vs_m_table(n, t, target, &m_list, Execution::default())?;
    write_noise_table(&rows, create(&output)?)?;
    write_manifest(&sidecar(&output), "accountant-compare", &a)
}

pub fn clt_convergence(mut a: CltArgs) -> Result<(), CliError> {
    let output = required(a.output.clone(), "output")?;
    let mu = *a.mu.get_or_insert(0.5016);
    let sigma = *a.sigma_eff.get_or_insert(0.8441);
    let ts = a.t_list.get_or_insert_with(|| vec![10, 50, 200]).clone();
    let grid = *a.grid_size.get_or_insert(DEFAULT_GRID_SIZE);
    if ts.is_empty() {
        return Err(CliError::Usage("--T-list is empty".into()));
    }
    if !(mu > 0.0 && sigma > 0.0) {
        return Err(CliError::Config("mu and sigma-eff must be positive".into()));
    }
    let nu = mu / (1.0 / (sigma * sigma)).exp_m1().sqrt();
    let rows = accountant::clt_convergence(nu, sigma, &ts, grid, Execution::default())?;
    write_clt_table(&rows, create(&output)?)?;
    write_manifest(&sidecar(&output), "clt-convergence", &a)
}

pub fn tradeoff_curve(mut a: CurveArgs) -> Result<(), CliError> {
    let output = required(a.output.clone(), "output")?;
    let grid = *a.grid_size.get_or_insert(DEFAULT_GRID_SIZE);
    let curve = match (a.mu, a.sample_rate, a.sigma_eff, a.t) {
        (Some(mu), None, None, None) => gaussian_tradeoff(GaussianTradeoffParam::new(mu)?, grid)?,
        (None, Some(p), Some(sigma), Some(t)) => {
            let step = MechanismStep::new(p, sigma)?;
            compose_exact(&step, t, PldGrid::for_sigma(sigma), grid)?
        }
        _ => {
            return Err(CliError::Usage(
                "give either --mu or all of --sample-rate, --sigma-eff and --T".into(),
            ))
        }
    };
    curve.write_csv(create(&output)?)?;
    write_manifest(&sidecar(&output), "tradeoff-curve", &a)
}

pub fn train_eval(mut a: TrainArgs) -> Result<(), CliError> {
    let rel_dir = required(a.release.clone(), "release")?;
    let train_path = required(a.train_clean.clone(), "train-clean")?;
    let test_path = required(a.test_clean.clone(), "test-clean")?;
    let output = required(a.output.clone(), "output")?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: *a.epochs.get_or_insert(defaults.epochs),
        batch_size: *a.batch_size.get_or_insert(defaults.batch_size),
        learning_rate: *a.lr.get_or_insert(defaults.learning_rate),
        seed: *a.seed.get_or_insert(defaults.seed),
        ..defaults
    };
    let rel = release::load_released(&rel_dir)?;
    let members = load_dataset(&train_path, DatasetFormat::detect(&train_path))?;
    let nonmembers = load_dataset(&test_path, DatasetFormat::detect(&test_path))?;
    let labels = learner::clip_labels(&rel.labels);
    let model = learner::train(rel.features.view(), labels.view(), &cfg)?;
    let hard = learner::argmax_rows(nonmembers.labels().view());
    let accuracy = learner::evaluate(&model, nonmembers.features().view(), &hard)?;
    let report = learner::membership_report(
        &model,
        members.features().view(),
        members.labels().view(),
        nonmembers.features().view(),
        nonmembers.labels().view(),
    )?;
    if let Some(stem) = &a.checkpoint {
        learner::write_checkpoint(&model, &cfg, stem)?;
    }
    let metrics = json!({ "accuracy": accuracy, "gap": report.gap, "auc": report.auc });
    write_json(&output, &metrics)?;
    write_manifest(&sidecar(&output), "train-eval", &a)
}

pub fn synth(mut a: SynthArgs) -> Result<(), CliError> {
    let output = required(a.output.clone(), "output")?;
    let ds = gaussian_classes(
        *a.n.get_or_insert(1000),
        *a.p.get_or_insert(10),
        *a.classes.get_or_insert(10),
        *a.separation.get_or_insert(1.0),
        *a.seed.get_or_insert(0),
        *a.draw.get_or_insert(0),
    )?;
    let format = if output.extension().is_some_and(|e| e == "csv") {
        DatasetFormat::Csv
    } else {
        DatasetFormat::Binary
    };
    store_dataset(&ds, &output, format)?;
    write_manifest(&sidecar(&output), "synth", &a)
}
