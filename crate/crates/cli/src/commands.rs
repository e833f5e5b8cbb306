//! Implementations of the CLI subcommands.
//!
//! Every command reads a validated configuration, runs its module
//! pipeline, and writes CSV plus a plain-text summary into the output
//! directory. Outputs are deterministic functions of (config, seed).

use crate::config::{Config, ConfigError};
use fracevol_core::evolution::{LinearModel, RandomEvolution, Variant};
use fracevol_core::fbm::{self, PathEnsemble};
use fracevol_core::fraccalc::{self, StepFunction};
use fracevol_core::grid::TimeGrid;
use fracevol_core::harness;
use fracevol_core::hurst::Hurst;
use fracevol_core::report::{fmt_f64, write_csv, write_text_file};
use fracevol_core::solver::{self, ForcingTerm, PicardInit, Trajectory};
use fracevol_core::spde::{self, SpectralHeatModel};
use nalgebra::{DMatrix, DVector};
use std::error::Error;
use std::path::Path;

pub type CmdResult = Result<i32, Box<dyn Error>>;

fn hurst_key(cfg: &Config, key: &str, default: f64) -> Result<Hurst, ConfigError> {
    let v = cfg.get_f64(key, default)?;
    Hurst::new(v).map_err(|e| Config::invalid(key, e.to_string()))
}

fn grid_keys(cfg: &Config, horizon_key: &str, default_t: f64, default_steps: usize) -> Result<TimeGrid, Box<dyn Error>> {
    let horizon = cfg.get_f64(horizon_key, default_t)?;
    let steps = cfg.get_usize("steps", default_steps)?;
    TimeGrid::uniform(horizon, steps)
        .map_err(|e| Box::new(Config::invalid(horizon_key, e.to_string())) as Box<dyn Error>)
}

fn sample_by_method(
    method: &str,
    h: Hurst,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    refine: usize,
) -> Result<PathEnsemble, Box<dyn Error>> {
    let ens = match method {
        "dense" => fbm::sample_dense(h, grid, paths, seed)?,
        "circulant" => fbm::sample_circulant(h, grid, paths, seed)?,
        "wiener" => fbm::sample_from_wiener(h, grid, paths, seed, refine)?,
        other => {
            return Err(Box::new(Config::invalid(
                "method",
                format!("expected dense | circulant | wiener, got {other:?}"),
            )))
        }
    };
    Ok(ens)
}

fn summary_header(title: &str, seed: u64, cfg: &Config) -> String {
    let mut text = format!("{title}\nseed = {seed}\n");
    for (k, v) in cfg.echo() {
        text.push_str(&format!("config {k} = {v}\n"));
    }
    text
}

/// `sample`: draw an ensemble, write it as CSV, and self-check its
/// covariance against the closed form.
pub fn cmd_sample(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let h = hurst_key(cfg, "hurst", 0.75)?;
    let grid = grid_keys(cfg, "horizon", 1.0, 64)?;
    let paths = cfg.get_usize("paths", 1000)?;
    let method = cfg.get_string("method", "circulant");
    let refine = cfg.get_usize("wiener.refine", fbm::WIENER_REFINE_DEFAULT)?;
    let compare = cfg.get_string("compare_with", "none");
    cfg.finish()?;

    let ens = sample_by_method(&method, h, &grid, paths, seed, refine)?;
    std::fs::create_dir_all(out)?;
    let mut buf = Vec::new();
    ens.to_csv(&mut buf)?;
    std::fs::write(out.join("ensemble.csv"), &buf)?;

    let check = fbm::covariance_self_check(&ens, h);
    let mut text = summary_header("sample run", seed, cfg);
    text.push_str(&format!("method = {}\n", ens.method()));
    text.push_str(&format!("paths = {}, grid points = {}\n", ens.n_paths(), grid.len()));
    if ens.used_fallback() {
        text.push_str("circulant embedding fell back to dense sampling\n");
    }
    text.push_str(&format!(
        "covariance self-check: max |z| = {:.3} over grid pairs ({})\n",
        check.max_abs_z,
        if check.pass_three_se { "pass at 3 se" } else { "above 3 se" }
    ));
    text.push_str(&format!(
        "variance at horizon: relative error {:.4}\n",
        check.horizon_var_rel_err
    ));
    if compare != "none" {
        let other_seed = seed ^ 0x9E37_79B9_7F4A_7C15;
        let other = sample_by_method(&compare, h, &grid, paths, other_seed, refine)?;
        let z = fbm::covariance_agreement(&ens, &other, h);
        text.push_str(&format!(
            "covariance agreement {method} vs {compare}: max |z| = {z:.3} ({})\n",
            if z <= 3.0 { "within 3 se" } else { "above 3 se" }
        ));
    }
    write_text_file(&out.join("summary.txt"), &text)?;
    Ok(0)
}

fn exit_from_checks(checks: &[(String, bool)], inconclusive: bool) -> i32 {
    if checks.iter().any(|(_, pass)| !pass) {
        1
    } else if inconclusive {
        2
    } else {
        0
    }
}

/// `verify --suite isometry`: Wick-integral second moments against the
/// closed-form inner product over a documented family of step-function
/// pairs.
pub fn verify_isometry(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let h = hurst_key(cfg, "hurst", 0.75)?;
    let paths = cfg.get_usize("paths", 20_000)?;
    cfg.finish()?;

    let unit = StepFunction::indicator(0.0, 1.0)?;
    let mid = StepFunction::indicator(0.25, 0.75)?;
    let left = StepFunction::indicator(0.0, 0.25)?;
    let right = StepFunction::indicator(0.5, 1.0)?;
    let mut pairs: Vec<(String, StepFunction, StepFunction)> = vec![
        ("unit_unit".into(), unit.clone(), unit.clone()),
        ("unit_mid".into(), unit.clone(), mid.clone()),
        ("disjoint".into(), left, right),
    ];
    for i in 0..3u64 {
        pairs.push((
            format!("random_{i}"),
            fraccalc::random_step_function(seed, 2 * i, 1.0, 4),
            fraccalc::random_step_function(seed, 2 * i + 1, 1.0, 4),
        ));
    }

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut inconclusive = false;
    let mut text = summary_header("verify: isometry", seed, cfg);
    for (i, (name, phi, psi)) in pairs.iter().enumerate() {
        let rep = fraccalc::isometry_report(phi, psi, h, paths, seed.wrapping_add(i as u64))?;
        // Power check: the Monte Carlo error must be able to resolve
        // the analytic value at all.
        let underpowered = 3.0 * rep.std_error > 0.25 * (rep.analytic.abs() + 0.1);
        inconclusive |= underpowered;
        rows.push(rep.csv_row(name));
        text.push_str(&format!(
            "{name}: analytic = {:.6}, mc = {:.6} (se {:.2e}) -> {}{}\n",
            rep.analytic,
            rep.mc_estimate,
            rep.std_error,
            if rep.pass { "pass" } else { "FAIL" },
            if underpowered { " [underpowered]" } else { "" }
        ));
        if !underpowered {
            checks.push((name.clone(), rep.pass));
        }
    }
    write_csv(&out.join("report.csv"), "name,analytic,mc,se,pass", &rows)?;
    let code = exit_from_checks(&checks, inconclusive);
    text.push_str(&format!("exit = {code}\n"));
    write_text_file(&out.join("summary.txt"), &text)?;
    Ok(code)
}

/// `verify --suite counterexample`: the mild-formula dichotomy between
/// the solution family and the corrected family on refining grids.
pub fn verify_counterexample(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let h = hurst_key(cfg, "hurst", 0.75)?;
    let a = cfg.get_f64("model.a", 1.0)?;
    let b = cfg.get_f64("model.b", 1.0)?;
    let min_pow = cfg.get_usize("grid.min_pow", 8)?;
    let max_pow = cfg.get_usize("grid.max_pow", 11)?;
    cfg.finish()?;
    if max_pow <= min_pow || max_pow > 16 {
        return Err(Box::new(Config::invalid(
            "grid.max_pow",
            "need grid.min_pow < grid.max_pow <= 16",
        )));
    }

    let grid = TimeGrid::uniform(1.0, 1 << max_pow).unwrap();
    let ens = fbm::sample_circulant(h, &grid, 1, seed)?;
    let traj_model = LinearModel::scalar(a, b);
    let family_model = LinearModel::scalar(0.0, b);
    let forcing = ForcingTerm::affine(
        move |_t| DVector::zeros(1),
        move |_t| DMatrix::from_element(1, 1, a),
        a.abs(),
    );
    let x0 = DVector::from_element(1, 1.0);

    let mut rows = Vec::new();
    let mut bar_res = Vec::new();
    let mut uy_res = Vec::new();
    for pow in min_pow..=max_pow {
        let sub = ens.subsample(1 << (max_pow - pow)).unwrap();
        let p = sub.path(0);
        let traj = solver::solve_geometric(&traj_model, h, p, 1.0)?;
        let rb = solver::mild_residual(&traj, &family_model, h, p, Variant::UyBar, &forcing, &x0)?;
        let ru = solver::mild_residual(&traj, &family_model, h, p, Variant::Uy, &forcing, &x0)?;
        rows.push(vec![(1usize << pow).to_string(), "corrected".into(), fmt_f64(rb)]);
        rows.push(vec![(1usize << pow).to_string(), "solution".into(), fmt_f64(ru)]);
        bar_res.push(rb);
        uy_res.push(ru);
    }
    write_csv(&out.join("report.csv"), "grid_steps,variant,residual", &rows)?;

    let bar_decreasing = bar_res.windows(2).all(|w| w[1] < w[0]);
    let span = (max_pow - min_pow) as f64;
    let bar_order = (bar_res[0] / bar_res[bar_res.len() - 1]).log2() / span;
    let uy_last = *uy_res.last().unwrap();
    let uy_stable = (uy_res[uy_res.len() - 2] - uy_last).abs() / uy_last.max(1e-30) < 0.25;

    let mut checks = vec![(
        "corrected residual decreasing with order >= 1".to_string(),
        bar_decreasing && bar_order >= 1.0,
    )];
    if h.is_brownian() {
        checks.push(("solution residual vanishes at H = 1/2".into(), uy_last < 0.02));
    } else {
        checks.push(("solution residual exceeds 0.01".into(), uy_last > 0.01));
        checks.push(("solution residual stabilizes".into(), uy_stable));
    }

    let mut text = summary_header("verify: counterexample", seed, cfg);
    text.push_str(&format!("corrected-family residuals: {bar_res:?}\n"));
    text.push_str(&format!("solution-family residuals: {uy_res:?}\n"));
    text.push_str(&format!("corrected-family observed order = {bar_order:.2}\n"));
    for (name, pass) in &checks {
        text.push_str(&format!("{name}: {}\n", if *pass { "pass" } else { "FAIL" }));
    }
    let code = exit_from_checks(&checks, false);
    text.push_str(&format!("exit = {code}\n"));
    write_text_file(&out.join("summary.txt"), &text)?;
    Ok(code)
}

/// `verify --suite composition`: the corrected family satisfies the
/// composition identity, the solution family does not.
pub fn verify_composition(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let h = hurst_key(cfg, "hurst", 0.75)?;
    let a = cfg.get_f64("model.a", 0.0)?;
    let b = cfg.get_f64("model.b", 1.0)?;
    let steps = cfg.get_usize("steps", 8)?;
    cfg.finish()?;

    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let ens = fbm::sample_circulant(h, &grid, 1, seed)?;
    let path = ens.path(0);
    let x = DVector::from_element(1, 1.0);
    let pts: Vec<f64> = grid.points().to_vec();

    let mut max_defect = [0.0f64; 2];
    for (vi, variant) in [Variant::UyBar, Variant::Uy].into_iter().enumerate() {
        let re = RandomEvolution::from_model(LinearModel::scalar(a, b), h, path, variant)?;
        let mut rows = Vec::new();
        for (i, &t) in pts.iter().enumerate() {
            for (j, &s) in pts[..=i].iter().enumerate() {
                let mut worst: f64 = 0.0;
                for &r in &pts[j..=i] {
                    worst = worst.max(re.composition_defect(t, r, s, &x)?);
                }
                rows.push(vec![fmt_f64(t), fmt_f64(s), fmt_f64(worst)]);
                max_defect[vi] = max_defect[vi].max(worst);
            }
        }
        let name = match variant {
            Variant::UyBar => "composition_corrected.csv",
            Variant::Uy => "composition_solution.csv",
        };
        write_csv(&out.join(name), "t,s,norm", &rows)?;
    }

    let mut checks = vec![(
        "corrected family composes exactly".to_string(),
        max_defect[0] < 1e-12,
    )];
    if h.is_brownian() {
        checks.push(("solution family composes at H = 1/2".into(), max_defect[1] < 1e-12));
    } else if b != 0.0 {
        checks.push(("solution family breaks composition".into(), max_defect[1] > 1e-3));
    }
    let mut text = summary_header("verify: composition", seed, cfg);
    text.push_str(&format!(
        "max defect corrected = {:.3e}, solution = {:.3e}\n",
        max_defect[0], max_defect[1]
    ));
    for (name, pass) in &checks {
        text.push_str(&format!("{name}: {}\n", if *pass { "pass" } else { "FAIL" }));
    }
    let code = exit_from_checks(&checks, false);
    text.push_str(&format!("exit = {code}\n"));
    write_text_file(&out.join("summary.txt"), &text)?;
    Ok(code)
}

/// `verify --suite reduction`: every fractional object collapses to its
/// Brownian counterpart at `H = 1/2`.
pub fn verify_reduction(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let steps = cfg.get_usize("steps", 16)?;
    cfg.finish()?;
    let h = Hurst::new(0.5).unwrap();
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let pts: Vec<f64> = grid.points().to_vec();

    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut rows = Vec::new();

    // Covariance equals min(s, t) exactly.
    let cov = fbm::covariance_matrix(h, &grid);
    let mut worst: f64 = 0.0;
    for (i, &s) in pts.iter().enumerate() {
        for (j, &t) in pts.iter().enumerate() {
            let expect = if i == 0 || j == 0 { 0.0 } else { s.min(t) };
            worst = worst.max((cov[(i, j)] - expect).abs());
        }
    }
    rows.push(vec!["covariance_vs_min".into(), fmt_f64(worst), (worst < 1e-14).to_string()]);
    checks.push(("covariance equals min(s,t)".into(), worst < 1e-14));

    // Memory inner product equals L^2 on random pairs.
    let mut worst: f64 = 0.0;
    for i in 0..5u64 {
        let a = fraccalc::random_step_function(seed, i, 1.0, 4);
        let b = fraccalc::random_step_function(seed, i + 100, 1.0, 4);
        worst =
            worst.max((fraccalc::inner_product_closed(&a, &b, h) - a.l2_inner(&b)).abs());
    }
    rows.push(vec!["inner_vs_l2".into(), fmt_f64(worst), (worst < 1e-12).to_string()]);
    checks.push(("memory product equals L^2".into(), worst < 1e-12));

    // The transfer kernel is the indicator.
    let kernel = fraccalc::transfer_kernel_indicator(h, 0.5, 1.0, &grid)?;
    let mut worst: f64 = 0.0;
    for (&t, &v) in pts.iter().zip(&kernel.values) {
        let expect = if t > 0.0 && t <= 0.5 { 1.0 } else { 0.0 };
        worst = worst.max((v - expect).abs());
    }
    rows.push(vec!["kernel_vs_indicator".into(), fmt_f64(worst), (worst == 0.0).to_string()]);
    checks.push(("transfer kernel is the indicator".into(), worst == 0.0));

    // The two random families coincide.
    let ens = fbm::sample_circulant(h, &grid, 1, seed)?;
    let path = ens.path(0);
    let x = DVector::from_element(1, 1.0);
    let uy = RandomEvolution::from_model(LinearModel::scalar(0.4, 0.9), h, path, Variant::Uy)?;
    let uybar =
        RandomEvolution::from_model(LinearModel::scalar(0.4, 0.9), h, path, Variant::UyBar)?;
    let mut worst: f64 = 0.0;
    for (i, &t) in pts.iter().enumerate() {
        for &s in &pts[..=i] {
            let d = (uy.apply(t, s, &x)? - uybar.apply(t, s, &x)?).norm();
            worst = worst.max(d);
        }
    }
    rows.push(vec!["families_coincide".into(), fmt_f64(worst), (worst < 1e-12).to_string()]);
    checks.push(("solution and corrected families coincide".into(), worst < 1e-12));

    write_csv(&out.join("report.csv"), "name,value,pass", &rows)?;
    let mut text = summary_header("verify: reduction (H = 1/2)", seed, cfg);
    for (name, pass) in &checks {
        text.push_str(&format!("{name}: {}\n", if *pass { "pass" } else { "FAIL" }));
    }
    let code = exit_from_checks(&checks, false);
    text.push_str(&format!("exit = {code}\n"));
    write_text_file(&out.join("summary.txt"), &text)?;
    Ok(code)
}

fn forcing_from_config(cfg: &Config, dim: usize) -> Result<ForcingTerm, Box<dyn Error>> {
    let kind = cfg.get_string("forcing.kind", "none");
    match kind.as_str() {
        "none" => Ok(ForcingTerm::none()),
        "constant" => {
            let value = cfg.get_f64("forcing.value", 1.0)?;
            Ok(ForcingTerm::constant(DVector::from_element(dim, value)))
        }
        other => Err(Box::new(Config::invalid(
            "forcing.kind",
            format!("expected none | constant, got {other:?}"),
        ))),
    }
}

/// `solve`: affine mild solutions (direct quadrature or Picard) for an
/// ensemble of driving paths.
pub fn cmd_solve(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let h = hurst_key(cfg, "hurst", 0.7)?;
    let grid = grid_keys(cfg, "horizon", 1.0, 128)?;
    let paths = cfg.get_usize("paths", 1)?;
    let a = cfg.get_f64("model.a", -1.0)?;
    let b = cfg.get_f64("model.b", 0.5)?;
    let x0v = cfg.get_f64("model.x", 1.0)?;
    let method = cfg.get_string("method", "quadrature");
    let picard_tol = cfg.get_f64("picard.tol", 1e-10)?;
    let picard_sweeps = cfg.get_usize("picard.max_sweeps", 200)?;
    let forcing = forcing_from_config(cfg, 1)?;
    cfg.finish()?;

    let model = LinearModel::scalar(a, b);
    let x0 = DVector::from_element(1, x0v);
    let ens = fbm::sample_circulant(h, &grid, paths, seed)?;

    std::fs::create_dir_all(out)?;
    let mut buf = Vec::new();
    let mut trajs: Vec<Trajectory> = Vec::with_capacity(paths);
    let mut sweeps_note = String::new();
    for (pid, p) in ens.paths().enumerate() {
        let mut traj = match method.as_str() {
            "quadrature" => solver::solve_affine_mild(&model, h, p, &forcing, &x0, None)?,
            "picard" => {
                let outcome = solver::solve_picard(
                    &model,
                    h,
                    p,
                    &forcing,
                    &x0,
                    picard_tol,
                    picard_sweeps,
                    PicardInit::HomogeneousPart,
                )?;
                if pid == 0 {
                    sweeps_note = format!(
                        "picard: {} sweeps, max contraction {:.3}, {} subintervals\n",
                        outcome.sweeps, outcome.max_contraction, outcome.subintervals
                    );
                }
                outcome.trajectory
            }
            other => {
                return Err(Box::new(Config::invalid(
                    "method",
                    format!("expected quadrature | picard, got {other:?}"),
                )))
            }
        };
        traj.path_id = pid as u64;
        traj.to_csv(&mut buf, pid == 0)?;
        trajs.push(traj);
    }
    std::fs::write(out.join("trajectories.csv"), &buf)?;

    let mut text = summary_header("solve run", seed, cfg);
    text.push_str(&sweeps_note);
    text.push_str(&format!("paths = {paths}, grid points = {}\n", grid.len()));

    if paths >= 2 && !forcing.is_state_dependent() {
        let res = solver::weak_mean_residual(&trajs, &model, &forcing, &DVector::from_element(1, 1.0))?;
        let rows: Vec<Vec<String>> = res
            .iter()
            .map(|p| vec![fmt_f64(p.t), fmt_f64(p.residual), fmt_f64(p.std_error)])
            .collect();
        write_csv(&out.join("residuals.csv"), "t,residual,se", &rows)?;
        let worst = res
            .iter()
            .map(|p| if p.std_error > 0.0 { p.residual.abs() / p.std_error } else { 0.0 })
            .fold(0.0f64, f64::max);
        text.push_str(&format!("weak-formulation residual: max |r|/se = {worst:.3}\n"));
    }
    write_text_file(&out.join("summary.txt"), &text)?;
    Ok(0)
}

/// `spde`: spectral solve of the heat/reaction equation with
/// multiplicative fractional noise; per-path field CSV output.
pub fn cmd_spde(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let nu = cfg.get_f64("nu", 1.0)?;
    let c = cfg.get_f64("c", 0.0)?;
    let b = cfg.get_f64("b", 1.0)?;
    let modes = cfg.get_usize("modes", 16)?;
    let h = hurst_key(cfg, "hurst", 0.75)?;
    let grid = grid_keys(cfg, "T", 1.0, 256)?;
    let paths = cfg.get_usize("paths", 1)?;
    let x0_kind = cfg.get_string("x0.kind", "parabola");
    let f_kind = cfg.get_string("f.kind", "zero");
    let f_value = cfg.get_f64("f.value", 1.0)?;
    let space_points = cfg.get_usize("space.points", 257)?;
    let projection_tol = cfg.get_f64("projection.tol", 1e-10)?;
    cfg.finish()?;

    let model = SpectralHeatModel::new(nu, c, modes, b)?;
    let x0_coeffs: Vec<f64> = match x0_kind.as_str() {
        "parabola" => spde::project(|x| x * (1.0 - x), modes, projection_tol)?,
        "mode1" => {
            let mut v = vec![0.0; modes];
            v[0] = 1.0;
            v
        }
        "zero" => vec![0.0; modes],
        other => {
            return Err(Box::new(Config::invalid(
                "x0.kind",
                format!("expected parabola | mode1 | zero, got {other:?}"),
            )))
        }
    };
    let forcing = match f_kind.as_str() {
        "zero" => ForcingTerm::none(),
        "constant" => {
            let coeffs = spde::project(|_| 1.0, modes, projection_tol)?;
            ForcingTerm::constant(DVector::from_iterator(
                modes,
                coeffs.iter().map(|v| v * f_value),
            ))
        }
        other => {
            return Err(Box::new(Config::invalid(
                "f.kind",
                format!("expected zero | constant, got {other:?}"),
            )))
        }
    };

    let space: Vec<f64> = (0..space_points)
        .map(|i| i as f64 / (space_points - 1) as f64)
        .collect();
    let ens = fbm::sample_circulant(h, &grid, paths, seed)?;
    std::fs::create_dir_all(out)?;

    let mut text = summary_header("spde run", seed, cfg);
    text.push_str(&format!(
        "eigenvalues: lambda_1 = {:.6}, lambda_{} = {:.6}\n",
        model.eigenvalue(1),
        modes,
        model.eigenvalue(modes)
    ));

    let mut closed_form_dev: f64 = 0.0;
    for (pid, p) in ens.paths().enumerate() {
        let sol = spde::solve_field(&model, h, p, &x0_coeffs, &forcing)?;
        let mut rows = Vec::new();
        for (i, _) in grid.points().iter().enumerate() {
            let snap = sol.snapshot(i, &space);
            for (x, v) in snap.space.iter().zip(&snap.values) {
                rows.push(vec![fmt_f64(snap.time), fmt_f64(*x), fmt_f64(*v)]);
            }
        }
        write_csv(&out.join(format!("field_{pid:04}.csv")), "t,x,value", &rows)?;

        // Single-mode data admits the geometric closed form; report the
        // worst deviation as a built-in oracle check.
        if x0_kind == "mode1" && matches!(forcing, ForcingTerm::None) {
            let scalar = LinearModel::scalar(model.eigenvalue(1), b);
            let geo = solver::solve_geometric(&scalar, h, p, 1.0)?;
            for i in 0..grid.len() {
                closed_form_dev = closed_form_dev
                    .max((sol.modal.states[i][0] - geo.states[i][0]).abs());
            }
        }
    }
    if x0_kind == "mode1" && matches!(forcing, ForcingTerm::None) {
        text.push_str(&format!(
            "single-mode closed-form check: max deviation = {closed_form_dev:.3e} ({})\n",
            if closed_form_dev < 1e-10 { "pass" } else { "FAIL" }
        ));
    }
    text.push_str(&format!("fields written for {paths} path(s)\n"));
    write_text_file(&out.join("summary.txt"), &text)?;
    Ok(0)
}

/// `moments`: Monte Carlo moments of the scalar solution against the
/// exact law and the growth bound.
pub fn cmd_moments(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let h = hurst_key(cfg, "hurst", 0.7)?;
    let grid = grid_keys(cfg, "horizon", 1.0, 64)?;
    let paths = cfg.get_usize("paths", 100_000)?;
    let a = cfg.get_f64("model.a", -1.0)?;
    let b = cfg.get_f64("model.b", 0.5)?;
    let x0 = cfg.get_f64("model.x", 1.0)?;
    let p_list = cfg.get_f64_list("p", &[1.0, 2.0])?;
    let times_count = cfg.get_usize("times.count", 9)?;
    cfg.finish()?;

    let model = LinearModel::scalar(a, b);
    let norms = harness::geometric_norm_ensemble(&model, h, &grid, x0, paths, seed)?;
    let stride = (grid.steps() / times_count.max(1)).max(1);
    let time_indices: Vec<usize> = (0..=grid.steps()).step_by(stride).collect();
    let law = harness::ScalarMomentLaw { drift: a, noise: b, hurst: h, x0_abs: x0.abs() };
    let mut report = harness::estimate_moments(&norms, &grid, &time_indices, &p_list, Some(&law))?;
    let params = harness::BoundParams {
        omega: a,
        m_const: 1.0,
        noise: b,
        hurst: h,
        x0_norm: x0.abs(),
        f_norm: &|_| 0.0,
    };
    harness::check_bounds(&mut report, &params);
    harness::emit_moment_report(&report, out, &cfg.echo(), seed)?;
    let all_pass = report.entries.iter().all(|e| e.pass != Some(false));
    Ok(if all_pass { 0 } else { 1 })
}

/// `stability`: the moment-growth / pathwise-decay dichotomy probe.
pub fn cmd_stability(cfg: &Config, seed: u64, out: &Path) -> CmdResult {
    let h = hurst_key(cfg, "hurst", 0.75)?;
    let horizon = cfg.get_f64("horizon", 4.0)?;
    let steps = cfg.get_usize("steps", 256)?;
    let paths = cfg.get_usize("paths", 100_000)?;
    let a = cfg.get_f64("model.a", -0.5)?;
    let b = cfg.get_f64("model.b", 1.5)?;
    let p = cfg.get_f64("p", 2.0)?;
    cfg.finish()?;

    let model = LinearModel::scalar(a, b);
    let report = harness::stability_probe(&model, h, horizon, steps, paths, seed, p)?;
    harness::emit_stability_report(&report, out, &cfg.echo(), seed)?;
    Ok(if report.inconclusive { 2 } else { 0 })
}
