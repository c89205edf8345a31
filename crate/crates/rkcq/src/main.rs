use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use rkcq::heat_sphere::{self, HeatExperimentConfig};
use rkcq::opcalc::{self, CqContext, StageSequence};
use rkcq::report::{self, ConvergenceReport};
use rkcq::semigroup::{self, DissipativeSpec, Quantity};
use rkcq::tableau::{builtin_tableau, builtin_tableaus, StabilityGrid};
use rkcq::zlin;
use rkcq::Error;

#[derive(Parser)]
#[command(
    name = "rkcq",
    version,
    about = "Runge-Kutta convolution quadrature laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a built-in Runge-Kutta tableau and its classification
    Tableau {
        /// One of the built-in method names
        name: String,
        /// Also print every order-condition residual
        #[arg(long)]
        validate: bool,
        /// Emit a single JSON object instead of text
        #[arg(long)]
        json: bool,
    },
    /// Convergence study on the method-of-lines heat testbed
    Semigroup {
        #[arg(long)]
        method: String,
        /// step | integrated | differentiated | strong
        #[arg(long)]
        quantity: String,
        /// Interior grid points (fixed-grid studies)
        #[arg(long, default_value_t = 20)]
        grid: usize,
        /// Level list: k = t_final / level per level
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<usize>,
        #[arg(long = "t-final", default_value_t = 2.0)]
        t_final: f64,
        /// Couple the grid to the step size (n_grid = ceil(1/k))
        #[arg(long)]
        stiff: bool,
        /// Drive the problem through the boundary only (no volume data)
        #[arg(long)]
        boundary_only: bool,
        /// Output directory for CSV + JSON
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Convergence study for the sphere boundary-integral heat problem
    HeatSphere {
        #[arg(long)]
        method: String,
        /// Spherical harmonic degree
        #[arg(long, default_value_t = 2)]
        degree: u32,
        #[arg(long = "T", default_value_t = 6.0)]
        t_final: f64,
        /// Level list: k = T / level per level
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Structural checks across all built-in methods
    Diagnostics,
}

fn init_threads() {
    if let Ok(v) = std::env::var("RKCQ_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            let threads = if n == 0 { 1 } else { n };
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> rkcq::Result<()> {
    match cli.command {
        Command::Tableau {
            name,
            validate,
            json,
        } => cmd_tableau(&name, validate, json),
        Command::Semigroup {
            method,
            quantity,
            grid,
            levels,
            t_final,
            stiff,
            boundary_only,
            out,
        } => cmd_semigroup(
            &method,
            &quantity,
            grid,
            &levels,
            t_final,
            stiff,
            boundary_only,
            &out,
        ),
        Command::HeatSphere {
            method,
            degree,
            t_final,
            levels,
            out,
        } => cmd_heat_sphere(&method, degree, t_final, &levels, &out),
        Command::Diagnostics => cmd_diagnostics(),
    }
}

fn matrix_json(m: &nalgebra::DMatrix<f64>) -> serde_json::Value {
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect();
    serde_json::json!(rows)
}

fn cmd_tableau(name: &str, validate: bool, json: bool) -> rkcq::Result<()> {
    let t = builtin_tableau(name)?;
    let grid = StabilityGrid::default();
    let class = t.classify(&grid);
    let conditions = t.validate_order_conditions(1e-10);
    if json {
        let obj = serde_json::json!({
            "name": t.name(),
            "m": t.stages(),
            "q": t.stage_order(),
            "p": t.order(),
            "Q": matrix_json(t.matrix()),
            "b": t.weights().iter().cloned().collect::<Vec<f64>>(),
            "c": t.nodes().iter().cloned().collect::<Vec<f64>>(),
            "classification": class,
            "order_conditions": {
                "tol": 1e-10,
                "max_residual": conditions.max_residual(),
                "failures": conditions.failures().len(),
            },
        });
        println!("{}", serde_json::to_string_pretty(&obj)?);
        return Ok(());
    }
    println!(
        "{} (m = {}, q = {}, p = {})",
        t.name(),
        t.stages(),
        t.stage_order(),
        t.order()
    );
    println!("c = {:?}", t.nodes().iter().cloned().collect::<Vec<f64>>());
    println!("b = {:?}", t.weights().iter().cloned().collect::<Vec<f64>>());
    for i in 0..t.stages() {
        let row: Vec<f64> = (0..t.stages()).map(|j| t.matrix()[(i, j)]).collect();
        println!("Q[{i}] = {row:?}");
    }
    println!(
        "A-stable: {} (max |r(it)| on grid = {:.3e})",
        class.a_stable, class.max_axis_modulus
    );
    println!(
        "strictly A-stable (|r(it)| < 1 off 0, r(inf) < 1): {}",
        class.strictly_a_stable
    );
    println!("stiffly accurate: {}", class.stiffly_accurate);
    println!("r(inf) = {:.6e}", class.r_at_infinity);
    if validate {
        println!(
            "order conditions: {} residuals, max {:.3e}, failures at 1e-10: {}",
            conditions.residuals.len(),
            conditions.max_residual(),
            conditions.failures().len()
        );
        if !conditions.all_within() {
            return Err(Error::InvalidReport(format!(
                "order conditions fail for {name}"
            )));
        }
    }
    Ok(())
}

fn print_report(report: &ConvergenceReport) {
    println!(
        "# method = {}, quantity = {}, t_final = {}",
        report.method, report.quantity, report.t_final
    );
    print!("{}", report.csv_body());
    if let Some(median) = report.median_recent_eoc(3) {
        println!("# median of last three usable orders: {median:.3}");
    }
    if let Some(r) = &report.reference {
        println!(
            "# reference check: discrepancy {:.3e} (required <= {:.3e}) -> {}",
            r.discrepancy,
            r.required,
            if r.pass { "ok" } else { "FAILED" }
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_semigroup(
    method: &str,
    quantity: &str,
    grid: usize,
    levels: &[usize],
    t_final: f64,
    stiff: bool,
    boundary_only: bool,
    out: &std::path::Path,
) -> rkcq::Result<()> {
    let t = builtin_tableau(method)?;
    let quantity = Quantity::from_str(quantity)?;
    let report = if stiff {
        semigroup::measure_stiff_rates(&t, t_final, levels, quantity)?
    } else {
        let prob = if boundary_only {
            semigroup::boundary_driven_heat_problem(grid, t_final)?
        } else {
            semigroup::manufactured_heat_problem(grid, t_final)?
        };
        let ks: Vec<f64> = levels.iter().map(|&l| t_final / l as f64).collect();
        semigroup::measure_theorem_rates(&prob, &t, &ks, quantity)?
    };
    print_report(&report);
    let stem = format!(
        "semigroup_{}_{}{}",
        report.method,
        report.quantity,
        if stiff { "_stiff" } else { "" }
    );
    let config = serde_json::json!({
        "method": method,
        "quantity": report.quantity,
        "grid": if stiff { serde_json::json!("ceil(1/k)") } else { serde_json::json!(grid) },
        "levels": levels,
        "t_final": t_final,
        "boundary_only": boundary_only,
    });
    let (csv, json) = report::emit_report(&report, out, &stem, config)?;
    println!("# wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn cmd_heat_sphere(
    method: &str,
    degree: u32,
    t_final: f64,
    levels: &[usize],
    out: &std::path::Path,
) -> rkcq::Result<()> {
    let t = builtin_tableau(method)?;
    let cfg = HeatExperimentConfig::new(
        degree,
        Arc::new(heat_sphere::default_psi),
        t_final,
        t,
        levels,
    )?;
    let report = heat_sphere::run_heat_convergence(&cfg)?;
    print_report(&report);
    let stem = format!("heat_sphere_{method}_n{degree}");
    let config = serde_json::json!({
        "method": method,
        "degree": degree,
        "T": t_final,
        "levels": levels,
        "psi": "t^12 * exp(-2t)",
    });
    let (csv, json) = report::emit_report(&report, out, &stem, config)?;
    println!("# wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn check(ok: bool, label: &str, detail: String, failures: &mut usize) {
    if ok {
        println!("[ ok ] {label}: {detail}");
    } else {
        println!("[FAIL] {label}: {detail}");
        *failures += 1;
    }
}

fn cmd_diagnostics() -> rkcq::Result<()> {
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let mut failures = 0usize;

    // order conditions of every builtin
    for t in builtin_tableaus() {
        let rep = t.validate_order_conditions(1e-10);
        check(
            rep.all_within(),
            "order conditions",
            format!("{} max residual {:.3e}", t.name(), rep.max_residual()),
            &mut failures,
        );
    }

    // spectrum of the derivative symbol inside the unit disk
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in builtin_tableaus() {
        let mut min_re = f64::INFINITY;
        for _ in 0..200 {
            let z = Complex64::from_polar(
                0.95 * rng.random::<f64>(),
                std::f64::consts::TAU * rng.random::<f64>(),
            );
            let d = opcalc::delta(&t, z)?;
            let e = zlin::eig(&d)?;
            for v in e.values {
                min_re = min_re.min(v.re);
            }
        }
        check(
            min_re > 0.0,
            "delta spectrum",
            format!("{} min Re over samples {:.3e}", t.name(), min_re),
            &mut failures,
        );
    }

    // derivative/antiderivative pairing
    for t in builtin_tableaus() {
        let m = t.stages();
        let k = 0.05;
        let ctx = CqContext::new(t.clone(), k, 100)?;
        let stages: Vec<nalgebra::DMatrix<f64>> = (0..100)
            .map(|_| nalgebra::DMatrix::from_fn(m, 1, |_, _| rng.random::<f64>() - 0.5))
            .collect();
        let u = StageSequence::new(m, 1, stages, vec![nalgebra::DVector::zeros(1); 101])?;
        let x = opcalc::discrete_antiderivative(&ctx, &u);
        let v = opcalc::discrete_derivative(&ctx, &x);
        let mut err: f64 = 0.0;
        for n in 0..100 {
            err = err.max((v.stage(n) - u.stage(n)).amax());
        }
        check(
            err < 1e-12,
            "derivative inverts antiderivative",
            format!("{} max defect {err:.3e}", t.name()),
            &mut failures,
        );
    }

    // contraction sweep
    let spec = DissipativeSpec {
        count: 24,
        max_dim: 8,
        seed: 7,
    };
    for t in builtin_tableaus() {
        let rep = semigroup::contraction_diagnostics(&t, spec, &[0.01, 0.1, 1.0, 10.0], 10.0)?;
        check(
            rep.max_norm <= 1.0 + 1e-10 && rep.max_power_norm <= 1.0 + 1e-9,
            "contraction",
            format!(
                "{} max |r(kA)| = {:.12}, max power norm = {:.12}",
                t.name(),
                rep.max_norm,
                rep.max_power_norm
            ),
            &mut failures,
        );
    }

    // quadrature order of the discrete antiderivative
    for (name, p) in [("radau_iia_2", 3.0), ("radau_iia_3", 5.0)] {
        let t = builtin_tableau(name)?;
        let rep = semigroup::quadrature_convergence(
            &t,
            |x| (-x).exp() * (3.0 * x).sin(),
            |x| (3.0 - (-x).exp() * ((3.0 * x).sin() + 3.0 * (3.0 * x).cos())) / 10.0,
            3.0,
            &[8, 16, 32, 64, 128],
        )?;
        let med = rep.median_recent_eoc(3).unwrap_or(f64::NAN);
        check(
            (med - p).abs() <= 0.2,
            "quadrature order",
            format!("{name} median order {med:.3} (target {p})"),
            &mut failures,
        );
    }

    // stage defect order
    for (name, q1) in [("radau_iia_2", 3.0), ("radau_iia_3", 4.0)] {
        let t = builtin_tableau(name)?;
        let ks: Vec<f64> = (0..6).map(|i| 0.2 / 2f64.powi(i)).collect();
        let rep = semigroup::stage_defect_convergence(
            &t,
            |x| nalgebra::DVector::from_element(1, x.sin()),
            |x| nalgebra::DVector::from_element(1, x.cos()),
            0.3,
            &ks,
        );
        let med = rep.median_recent_eoc(3).unwrap_or(f64::NAN);
        check(
            (med - q1).abs() <= 0.1,
            "stage defect order",
            format!("{name} median order {med:.3} (target {q1})"),
            &mut failures,
        );
    }

    if failures > 0 {
        Err(Error::InvalidReport(format!("{failures} diagnostics failed")))
    } else {
        println!("all diagnostics passed");
        Ok(())
    }
}
