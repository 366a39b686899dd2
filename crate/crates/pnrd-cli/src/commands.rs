//! The five subcommands: analytic curve emitters, the simulator front end,
//! and the synthetic calibration driver.

use std::path::PathBuf;

use pnrd::{
    calibrate_tmc_nonlinear, calibrate_twb_linear, generate_synthetic_run, nrf, poisson_mean_count,
    q_measure, simulate_counts, vdp_tmc, vdp_twb, CalibrationMethod, CalibrationResult,
    DetectorModel, SimConfig, SourceKind, TwoModeSource,
};

use crate::config::{require, resolve, resolve_seed, FileConfig, GridSpec, MeanList};
use crate::output::{derived_path, fmt_float, read_run_csv, write_run_csv, CsvWriter};
use crate::{CalibrateArgs, CliError, QMapArgs, ResponseArgs, SimulateArgs, VdpArgs};

const DEFAULT_SEED: u64 = 12345;

fn detector(eta: f64, cap: usize) -> Result<DetectorModel, CliError> {
    DetectorModel::new(eta, cap).map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_source(name: &str) -> Result<SourceKind, CliError> {
    match name {
        "tmc" => Ok(SourceKind::Tmc),
        "twb" => Ok(SourceKind::Twb),
        other => Err(CliError::Usage(format!(
            "unknown source {other:?}; expected tmc or twb"
        ))),
    }
}

/// Mean-photocount response curve of one detector over a log-spaced sweep,
/// with the loss-only reference column.
pub fn run_response_curve(args: ResponseArgs, config: &FileConfig) -> Result<(), CliError> {
    let eta = resolve(args.eta, config, "eta", 0.5)?;
    let cap = resolve(args.n_max_count, config, "n-max-count", 3)?;
    let nbar_min = resolve(args.nbar_min, config, "nbar-min", 0.01)?;
    let nbar_max = resolve(args.nbar_max, config, "nbar-max", 100.0)?;
    let points = resolve(args.points, config, "points", 200)?;
    let out: PathBuf = require(args.out, config, "out")?;
    if !nbar_min.is_finite() || nbar_min <= 0.0 || nbar_max < nbar_min || points == 0 {
        return Err(CliError::Usage(format!(
            "need 0 < nbar-min <= nbar-max and points >= 1, got {nbar_min}, {nbar_max}, {points}"
        )));
    }
    let det = detector(eta, cap)?;
    let grid = GridSpec {
        min: nbar_min,
        max: nbar_max,
        points,
    };
    let mut w = CsvWriter::create(&out)?;
    w.header(&["nbar", "mean_count", "no_saturation_reference"])?;
    for nbar in grid.log_values()? {
        let mean = poisson_mean_count(&det, nbar)?;
        w.row(&[nbar, mean, eta * nbar])?;
    }
    w.finish()
}

/// VDP, NRF, and Q of both benchmark sources over a drive sweep.
pub fn run_vdp_curve(args: VdpArgs, config: &FileConfig) -> Result<(), CliError> {
    let eta1 = resolve(args.eta1, config, "eta1", 0.5)?;
    let eta2 = resolve(args.eta2, config, "eta2", 0.5)?;
    let n1 = resolve(args.n1, config, "n1", 3)?;
    let n2 = resolve(args.n2, config, "n2", 3)?;
    let grid = resolve(
        args.nbar_grid,
        config,
        "nbar-grid",
        GridSpec {
            min: 0.01,
            max: 100.0,
            points: 120,
        },
    )?;
    let out: PathBuf = require(args.out, config, "out")?;
    let d1 = detector(eta1, n1)?;
    let d2 = detector(eta2, n2)?;
    let mut w = CsvWriter::create(&out)?;
    w.header(&["nbar", "vdp_tmc", "vdp_twb", "nrf_tmc", "nrf_twb", "q"])?;
    for nbar in grid.log_values()? {
        let v_tmc = vdp_tmc(&d1, &d2, nbar)?;
        let v_twb = vdp_twb(&d1, &d2, nbar)?;
        let r_tmc = nrf(SourceKind::Tmc, &d1, &d2, nbar)?;
        let r_twb = nrf(SourceKind::Twb, &d1, &d2, nbar)?;
        w.row(&[nbar, v_tmc, v_twb, r_tmc, r_twb, v_tmc - v_twb])?;
    }
    w.finish()
}

/// Q over an (nbar, eta) grid, plus the two ridge files of grid-local
/// optima.
pub fn run_q_map(args: QMapArgs, config: &FileConfig) -> Result<(), CliError> {
    let cap = resolve(args.n_max_count, config, "n-max-count", 3)?;
    let nbar_grid = resolve(
        args.nbar_grid,
        config,
        "nbar-grid",
        GridSpec {
            min: 0.1,
            max: 100.0,
            points: 40,
        },
    )?;
    let eta_grid = resolve(
        args.eta_grid,
        config,
        "eta-grid",
        GridSpec {
            min: 0.05,
            max: 1.0,
            points: 40,
        },
    )?;
    let out: PathBuf = require(args.out, config, "out")?;
    if eta_grid.max > 1.0 {
        return Err(CliError::Usage(format!(
            "eta-grid must stay within (0, 1], got maximum {}",
            eta_grid.max
        )));
    }
    let nbars = nbar_grid.log_values()?;
    let etas = eta_grid.linear_values();

    // q[i][j] at nbars[i], etas[j]
    let mut q = vec![vec![0.0; etas.len()]; nbars.len()];
    for (j, &eta) in etas.iter().enumerate() {
        let det = detector(eta, cap)?;
        for (i, &nbar) in nbars.iter().enumerate() {
            q[i][j] = q_measure(&det, &det, nbar)?;
        }
    }

    let mut w = CsvWriter::create(&out)?;
    w.header(&["nbar", "eta", "q"])?;
    for (i, &nbar) in nbars.iter().enumerate() {
        for (j, &eta) in etas.iter().enumerate() {
            w.row(&[nbar, eta, q[i][j]])?;
        }
    }
    w.finish()?;

    // Optimal nbar for each eta.
    let mut ridge_nbar = CsvWriter::create(&derived_path(&out, "ridge-nbar"))?;
    ridge_nbar.header(&["eta", "nbar_opt", "q_max"])?;
    for (j, &eta) in etas.iter().enumerate() {
        let best = (0..nbars.len())
            .max_by(|&a, &b| q[a][j].total_cmp(&q[b][j]))
            .unwrap_or(0);
        ridge_nbar.row(&[eta, nbars[best], q[best][j]])?;
    }
    ridge_nbar.finish()?;

    // Optimal eta for each nbar.
    let mut ridge_eta = CsvWriter::create(&derived_path(&out, "ridge-eta"))?;
    ridge_eta.header(&["nbar", "eta_opt", "q_max"])?;
    for (i, &nbar) in nbars.iter().enumerate() {
        let best = (0..etas.len())
            .max_by(|&a, &b| q[i][a].total_cmp(&q[i][b]))
            .unwrap_or(0);
        ridge_eta.row(&[nbar, etas[best], q[i][best]])?;
    }
    ridge_eta.finish()
}

/// One Monte Carlo run against its analytic reference values.
pub fn run_simulate(args: SimulateArgs, config: &FileConfig) -> Result<(), CliError> {
    let source_name: String = require(args.source, config, "source")?;
    let kind = parse_source(&source_name)?;
    let eta1 = resolve(args.eta1, config, "eta1", 0.5)?;
    let eta2 = resolve(args.eta2, config, "eta2", 0.5)?;
    let n1 = resolve(args.n1, config, "n1", 3)?;
    let n2 = resolve(args.n2, config, "n2", 3)?;
    let nbar = resolve(args.nbar, config, "nbar", 1.0)?;
    let trials = resolve(args.trials, config, "trials", 100_000)?;
    let workers = resolve(args.workers, config, "workers", 1)?;
    let seed = resolve_seed(args.seed, config, DEFAULT_SEED)?;
    let out: PathBuf = require(args.out, config, "out")?;
    if trials == 0 {
        return Err(CliError::Usage("trials must be at least 1".into()));
    }
    if workers == 0 {
        return Err(CliError::Usage("workers must be at least 1".into()));
    }

    let d1 = detector(eta1, n1)?;
    let d2 = detector(eta2, n2)?;
    let source = TwoModeSource::make(kind, nbar)?;
    let cfg = SimConfig {
        seed,
        trials,
        workers,
    };
    let stats = simulate_counts(&source, &d1, &d2, &cfg)?;

    let mean1_ref = poisson_mean_count(&d1, nbar)?;
    let mean2_ref = poisson_mean_count(&d2, nbar)?;
    let vdp_ref = match kind {
        SourceKind::Tmc => vdp_tmc(&d1, &d2, nbar)?,
        _ => vdp_twb(&d1, &d2, nbar)?,
    };
    let nrf_ref = if nbar > 0.0 {
        nrf(kind, &d1, &d2, nbar)?
    } else {
        f64::NAN
    };
    let z = |emp: f64, reference: f64, se: f64| {
        if se > 0.0 {
            (emp - reference) / se
        } else {
            f64::NAN
        }
    };

    let mut w = CsvWriter::create(&out)?;
    w.header(&[
        "source",
        "nbar",
        "eta1",
        "eta2",
        "n1",
        "n2",
        "trials",
        "seed",
        "workers",
        "mean1",
        "mean1_se",
        "mean1_analytic",
        "mean1_z",
        "mean2",
        "mean2_se",
        "mean2_analytic",
        "mean2_z",
        "vdp",
        "vdp_se",
        "vdp_analytic",
        "vdp_z",
        "nrf",
        "nrf_se",
        "nrf_analytic",
        "nrf_z",
    ])?;
    w.raw_row([
        source_name,
        fmt_float(nbar),
        fmt_float(eta1),
        fmt_float(eta2),
        n1.to_string(),
        n2.to_string(),
        trials.to_string(),
        seed.to_string(),
        workers.to_string(),
        fmt_float(stats.mean1),
        fmt_float(stats.mean1_se),
        fmt_float(mean1_ref),
        fmt_float(z(stats.mean1, mean1_ref, stats.mean1_se)),
        fmt_float(stats.mean2),
        fmt_float(stats.mean2_se),
        fmt_float(mean2_ref),
        fmt_float(z(stats.mean2, mean2_ref, stats.mean2_se)),
        fmt_float(stats.vdp),
        fmt_float(stats.vdp_se),
        fmt_float(vdp_ref),
        fmt_float(z(stats.vdp, vdp_ref, stats.vdp_se)),
        fmt_float(stats.nrf),
        fmt_float(stats.nrf_se),
        fmt_float(nrf_ref),
        fmt_float(z(stats.nrf, nrf_ref, stats.nrf_se)),
    ])?;
    w.finish()
}

/// Synthetic calibration: simulate a run from known truth parameters (or
/// reload a stored one), fit it with the requested protocol, and report
/// recovery errors.
pub fn run_calibrate(args: CalibrateArgs, config: &FileConfig) -> Result<(), CliError> {
    let method_name: String = require(args.method, config, "method")?;
    let method = match method_name.as_str() {
        "twb-linear" => CalibrationMethod::TwbLinear,
        "tmc-nonlinear" => CalibrationMethod::TmcNonlinear,
        other => {
            return Err(CliError::Usage(format!(
                "unknown method {other:?}; expected twb-linear or tmc-nonlinear"
            )))
        }
    };
    let regime_threshold = resolve(args.regime_threshold, config, "regime-threshold", 0.1)?;
    let out: PathBuf = require(args.out, config, "out")?;

    let (run, truth) = if let Some(run_path) = args.run_csv {
        let run = read_run_csv(&run_path)?;
        let truth = args.true_eta1.zip(args.true_eta2);
        (run, truth)
    } else {
        let true_eta1 = require(args.true_eta1, config, "true-eta1")?;
        let true_eta2 = require(args.true_eta2, config, "true-eta2")?;
        let true_n1 = require(args.true_n1, config, "true-n1")?;
        let true_n2 = require(args.true_n2, config, "true-n2")?;
        let (default_grid, default_trials, kind) = match method {
            CalibrationMethod::TwbLinear => {
                (MeanList(vec![0.05, 0.1, 0.2]), 1_000_000, SourceKind::Twb)
            }
            CalibrationMethod::TmcNonlinear => (
                MeanList(vec![
                    0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0,
                ]),
                100_000,
                SourceKind::Tmc,
            ),
        };
        let grid = resolve(args.grid, config, "grid", default_grid)?;
        let trials = resolve(args.trials, config, "trials", default_trials)?;
        let seed = resolve_seed(args.seed, config, DEFAULT_SEED)?;
        let d1 = detector(true_eta1, true_n1)?;
        let d2 = detector(true_eta2, true_n2)?;
        let run = generate_synthetic_run(kind, &d1, &d2, &grid.0, trials, seed)?;
        (run, Some((true_eta1, true_eta2)))
    };
    write_run_csv(&out, &run)?;

    let result = match method {
        CalibrationMethod::TwbLinear => calibrate_twb_linear(&run, regime_threshold)?,
        CalibrationMethod::TmcNonlinear => calibrate_tmc_nonlinear(&run)?,
    };
    write_result_csv(&out, &result, truth)?;

    let (err1, err2) = recovery_errors(&result, truth);
    println!(
        "method={result_method} k={k:.6} eta1={e1:.6} eta2={e2:.6} n1_hat={n1} n2_hat={n2} \
         residual={res:.4} degenerate={deg} err_eta1={err1:.6} err_eta2={err2:.6}",
        result_method = result.method,
        k = result.k_ratio,
        e1 = result.eta1,
        e2 = result.eta2,
        n1 = result.n1_hat.map_or("-".into(), |v| v.to_string()),
        n2 = result.n2_hat.map_or("-".into(), |v| v.to_string()),
        res = result.fit_residual,
        deg = result.degenerate,
    );
    Ok(())
}

fn recovery_errors(result: &CalibrationResult, truth: Option<(f64, f64)>) -> (f64, f64) {
    match truth {
        Some((t1, t2)) => ((result.eta1 - t1).abs(), (result.eta2 - t2).abs()),
        None => (f64::NAN, f64::NAN),
    }
}

fn write_result_csv(
    out: &std::path::Path,
    result: &CalibrationResult,
    truth: Option<(f64, f64)>,
) -> Result<(), CliError> {
    let (true_eta1, true_eta2) = truth.unwrap_or((f64::NAN, f64::NAN));
    let mut w = CsvWriter::create(&derived_path(out, "result"))?;
    w.header(&[
        "method",
        "k_ratio",
        "k_ratio_se",
        "eta1",
        "eta1_se",
        "eta2",
        "eta2_se",
        "n1_hat",
        "n2_hat",
        "fit_residual",
        "degenerate",
        "true_eta1",
        "true_eta2",
        "abs_err_eta1",
        "abs_err_eta2",
    ])?;
    w.raw_row([
        result.method.to_string(),
        fmt_float(result.k_ratio),
        fmt_float(result.k_ratio_se),
        fmt_float(result.eta1),
        fmt_float(result.eta1_se),
        fmt_float(result.eta2),
        fmt_float(result.eta2_se),
        result.n1_hat.map_or(String::new(), |v| v.to_string()),
        result.n2_hat.map_or(String::new(), |v| v.to_string()),
        fmt_float(result.fit_residual),
        result.degenerate.to_string(),
        fmt_float(true_eta1),
        fmt_float(true_eta2),
        fmt_float((result.eta1 - true_eta1).abs()),
        fmt_float((result.eta2 - true_eta2).abs()),
    ])?;
    w.finish()
}
