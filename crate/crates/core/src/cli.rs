//! Command-line orchestration: load a config, apply overrides, dispatch the
//! requested mode, write outputs.
//!
//! Output locations: a file name with no directory component lands in
//! `output.dir` when set, else in the directory named by the
//! `PLASSO_OUT_DIR` environment variable, else in the working directory.
//! Absolute paths are used as given. A name without an extension gets the
//! output format's extension.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array1;

use crate::config::{apply_overrides, parse_config_text, ExperimentConfig, Mode};
use crate::debias::{choose_m_nodewise, debias, DeltaBoundSpec};
use crate::design::{read_matrix_csv, read_vector_csv, PartitionedDesign};
use crate::error::{Error, Result};
use crate::inference::{confidence_region, estimate_sigma, fit_partial};
use crate::lasso::{lambda_rule, solve, LassoProblem, SolveOptions};
use crate::report::{
    write_fit, write_keyvals, write_records, write_summary, FitReport, FitRow, KeyValueReport,
    OutputFormat,
};
use crate::sim::{run_monte_carlo, run_one_replicate};
use crate::theory::prob_floor;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PLASSO_OUT_DIR";

/// Execute the `run` subcommand: read the config file, fold in overrides,
/// and dispatch. Writes a one-line status per output file to stdout.
pub fn run(config_path: &Path, overrides: &[String]) -> Result<()> {
    let text = fs::read_to_string(config_path).map_err(|e| Error::ConfigParse {
        line: 0,
        message: format!("cannot read {}: {e}", config_path.display()),
    })?;
    let mut pairs = parse_config_text(&text)?;
    apply_overrides(&mut pairs, overrides)?;
    let config = ExperimentConfig::from_pairs(&pairs)?;
    match config.mode {
        Mode::Simulate => run_simulate(&config),
        Mode::Theory => run_theory(&config),
        Mode::Fit => run_fit(&config),
    }
}

fn output_format(config: &ExperimentConfig) -> Result<OutputFormat> {
    OutputFormat::from_name(&config.output_format)
}

/// Resolve an output file name against the configured directory and ensure
/// the directory exists.
fn resolve_output(config: &ExperimentConfig, name: &str, format: OutputFormat) -> Result<PathBuf> {
    let mut file = PathBuf::from(name);
    if file.extension().is_none() {
        file.set_extension(format.extension());
    }
    let full = if file.is_absolute() {
        file
    } else {
        let dir = if !config.output_dir.is_empty() {
            PathBuf::from(&config.output_dir)
        } else if let Ok(env_dir) = std::env::var(OUT_DIR_ENV) {
            PathBuf::from(env_dir)
        } else {
            PathBuf::from(".")
        };
        dir.join(file)
    };
    if let Some(parent) = full.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(full)
}

fn run_simulate(config: &ExperimentConfig) -> Result<()> {
    let params = config.to_sim_params()?;
    let run = run_monte_carlo(&params)?;
    let format = output_format(config)?;
    let sha = config.sha256_hex();

    let summary_path = resolve_output(config, &config.output_summary, format)?;
    let mut file = fs::File::create(&summary_path)?;
    write_summary(&mut file, &run.summary, &config.g, &sha, format)?;
    file.flush()?;
    println!(
        "simulate: {} replicates ({} failed) -> {}",
        run.summary.replicates,
        run.summary.failed,
        summary_path.display()
    );

    if !config.output_records.is_empty() {
        let records_path = resolve_output(config, &config.output_records, format)?;
        let mut file = fs::File::create(&records_path)?;
        write_records(
            &mut file,
            &run.records,
            &config.g,
            &sha,
            config.base_seed,
            format,
        )?;
        file.flush()?;
        println!("records -> {}", records_path.display());
    }
    for failure in &run.failures {
        eprintln!(
            "warning: replicate seed {} failed: {}",
            failure.seed, failure.message
        );
    }
    Ok(())
}

fn run_theory(config: &ExperimentConfig) -> Result<()> {
    let params = config.to_sim_params()?;
    params.validate()?;
    let record = run_one_replicate(&params, 0)?;

    let mut report = KeyValueReport::new();
    report.push("mode", "theory".to_string());
    report.push("design.family", config.design_family.clone());
    report.push("n", config.n.to_string());
    report.push("p", config.p.to_string());
    report.push("seed", record.seed.to_string());
    report.push_float(
        "lambda",
        lambda_rule(config.a, config.sigma, config.n, config.p)?,
    );
    report.push_float("phi0_used", record.phi0_used);
    report.push("omega0", record.omega0.to_string());
    report.push("bound_holds", record.bound_holds.to_string());
    report.push_float("lhs", record.lhs);
    report.push_float("rhs", record.rhs);
    report.push_float("prob_floor", prob_floor(config.a, config.p));
    report.push_float("delta_inf", record.delta_inf);
    report.push_float("delta_mid", record.delta_mid);
    if let Some(b) = record.corollary_bound {
        report.push_float("corollary_bound", b);
    }
    if let Some(ok) = record.corollary_ok {
        report.push("corollary_ok", ok.to_string());
    }
    report.push("chain_ok", record.chain_ok.to_string());
    report.push_float("decomposition_err", record.decomposition_err);
    report.push_float("kkt_gap", record.kkt_gap);
    report.push("converged", record.converged.to_string());

    let format = output_format(config)?;
    let sha = config.sha256_hex();
    let path = resolve_output(config, &config.output_summary, format)?;
    let mut file = fs::File::create(&path)?;
    write_keyvals(&mut file, &report, &sha, config.base_seed, format)?;
    file.flush()?;
    println!("theory: seed {} -> {}", record.seed, path.display());
    Ok(())
}

fn run_fit(config: &ExperimentConfig) -> Result<()> {
    let x_raw = read_matrix_csv(Path::new(&config.data_x))?;
    let y = read_vector_csv(Path::new(&config.data_y))?;
    let design = PartitionedDesign::new(x_raw, &config.g)?;
    let n = design.n();
    let p = design.p();
    let solver = SolveOptions {
        tol: config.solver_tol,
        max_sweeps: config.solver_max_sweeps,
    };

    let xt = design.residualize_minus_g();
    let yt = design.residualize_vec(&y.view())?;

    // Either trust the configured noise level or estimate it from a pilot
    // fit at unit scale and re-solve with the matched penalty.
    let estimate_mode = config.sigma_mode == "estimate";
    let (sigma, lambda, fit) = if estimate_mode {
        let pilot_lambda = lambda_rule(config.a, 1.0, n, p)?;
        let pilot_problem = LassoProblem::new(xt.view(), yt.view(), pilot_lambda)?;
        let pilot = solve(&pilot_problem, &solver)?;
        let sigma_hat = estimate_sigma(&design, &y.view(), &pilot)?;
        if !(sigma_hat > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma.mode",
                reason: "estimated noise level is zero; supply sigma explicitly".to_string(),
            });
        }
        let lambda = lambda_rule(config.a, sigma_hat, n, p)?;
        let problem = LassoProblem::new(xt.view(), yt.view(), lambda)?;
        let fit = solve(&problem, &solver)?;
        (sigma_hat, lambda, fit)
    } else {
        let lambda = lambda_rule(config.a, config.sigma, n, p)?;
        let problem = LassoProblem::new(xt.view(), yt.view(), lambda)?;
        let fit = solve(&problem, &solver)?;
        (config.sigma, lambda, fit)
    };

    let partial = fit_partial(&design, &y.view(), &fit, sigma)?;
    let region = confidence_region(&partial, config.level)?;
    if let Some(w) = &partial.warning {
        eprintln!("warning: {w}");
    }

    // Report on the raw column scale: normalized = c_j * raw, so a
    // coefficient on the normalized column scales by c_j going back.
    let scale = design.scale();
    let (grouped_est, grouped_cov, penalized_est): (Array1<f64>, _, Array1<f64>) =
        if config.debias_enabled {
            let lambda_node = lambda_rule(config.debias_a_node, 1.0, n, design.m().max(2))?;
            let m_matrix = choose_m_nodewise(&design, lambda_node)?;
            let result = debias(
                &design,
                &y.view(),
                &fit,
                &m_matrix.view(),
                DeltaBoundSpec::Plugin {
                    s: config.s,
                    phi0: config.phi0_value,
                    a: config.a,
                    sigma,
                },
                sigma,
            )?;
            eprintln!(
                "de-biasing: remainder row-sum norm {:.3e}, heuristic bias bound {:.3e}",
                result.r_inf_norm, result.delta_bound
            );
            (
                result.b_g.clone(),
                result.cov.clone(),
                result.b_minus_g.clone(),
            )
        } else {
            (
                partial.beta_g.clone(),
                partial.cov.clone(),
                fit.beta.clone(),
            )
        };

    let z = crate::inference::normal_quantile((1.0 + config.level) / 2.0)?;
    let mut rows = Vec::with_capacity(p);
    for (pos, &j) in design.g().iter().enumerate() {
        let c = scale[j];
        let est = c * grouped_est[pos];
        let se = c * grouped_cov[[pos, pos]].sqrt();
        rows.push(FitRow {
            index: j,
            grouped: true,
            estimate: est,
            stderr: Some(se),
            lower: Some(est - z * se),
            upper: Some(est + z * se),
        });
    }
    for (pos, &j) in design.minus_g().iter().enumerate() {
        rows.push(FitRow {
            index: j,
            grouped: false,
            estimate: scale[j] * penalized_est[pos],
            stderr: None,
            lower: None,
            upper: None,
        });
    }
    rows.sort_by_key(|r| r.index);
    // Region retained for its interval contract; grouped rows above carry
    // the same normalized-scale half-widths once rescaled.
    drop(region);

    let report = FitReport {
        rows,
        sigma,
        sigma_estimated: estimate_mode,
        lambda,
        level: config.level,
        converged: fit.converged,
        kkt_gap: fit.kkt_gap,
    };
    let format = output_format(config)?;
    let sha = config.sha256_hex();
    let path = resolve_output(config, &config.output_summary, format)?;
    let mut file = fs::File::create(&path)?;
    write_fit(&mut file, &report, &sha, config.base_seed, format)?;
    file.flush()?;
    println!(
        "fit: n = {n}, p = {p}, lambda = {lambda:.6e} -> {}",
        path.display()
    );
    Ok(())
}
