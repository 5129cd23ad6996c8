use dabsde_core::fbm::{sample, sample_circulant, Hurst, SamplingMethod, TimeGrid};
use dabsde_core::problem::{DelayStructure, GeneratorSpec, LinearCoefficients, ProblemSpec, TerminalData};
use dabsde_core::solver::{
    contraction_ratio, pair_distance, picard_step, regress_conditional, solve, FeatureSet, PicardContext, RegressionBasis,
    SolutionPair, SolveConfig,
};
use dabsde_core::stats::moments;
use dabsde_core::ProblemConfig;

fn config(tol: f64, max_iter: usize) -> SolveConfig {
    SolveConfig {
        basis: RegressionBasis::default(),
        beta: 0.0,
        tol,
        max_iter,
    }
}

#[test]
fn brownian_martingale_regression() {
    let grid = TimeGrid::uniform(1.0, 2).unwrap();
    let paths = sample_circulant(&grid, Hurst::new(0.5).unwrap(), 20000, 9).unwrap();
    let (b_half, b_one) = (paths.column(1), paths.column(2));
    let basis = RegressionBasis::new(3, FeatureSet::FbmLevel, 0.0).unwrap();
    let fitted = regress_conditional(&b_one, &b_half, 1, &basis).unwrap();
    let mse = fitted.iter().zip(&b_half).map(|(f, b)| (f - b) * (f - b)).sum::<f64>() / fitted.len() as f64;
    assert!(mse <= 0.01, "mse {mse}");
}

#[test]
fn constant_drift_after_one_step() {
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let h = Hurst::for_solver(0.7).unwrap();
    let spec = ProblemSpec::new(
        grid.clone(),
        h,
        DelayStructure::none(),
        GeneratorSpec::constant(0.5),
        TerminalData::constant(2.0, 0.0),
    );
    let paths = sample(SamplingMethod::Circulant, &grid, h, 500, 1).unwrap();
    let prev = PicardContext::new(&spec, &paths, &RegressionBasis::default()).unwrap().initial_guess();
    let next = picard_step(&prev, &spec, &paths, &RegressionBasis::default()).unwrap();
    for i in 0..=50 {
        let t = grid.point(i);
        let expect = 2.0 + 0.5 * (1.0 - t);
        assert!(next.y_at(i).iter().all(|y| (y - expect).abs() <= 0.5 * grid.dt() + 1e-9));
    }
}

/// With H = 1/2 and f = a·y, ξ = B_T the solution is
/// `Y_t = e^{a(T-t)} B_t`, `Z_t = e^{a(T-t)}`.
#[test]
fn brownian_linear_bsde_matches_closed_form() {
    let a = 0.5;
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let h = Hurst::for_solver(0.5).unwrap();
    let spec = ProblemSpec::new(
        grid.clone(),
        h,
        DelayStructure::none(),
        GeneratorSpec::linear(LinearCoefficients { y: a, ..Default::default() }, None),
        TerminalData::level(1.0, 0.0, 1.0),
    );
    let paths = sample(SamplingMethod::Circulant, &grid, h, 40000, 3).unwrap();
    let (sol, diag) = solve(&spec, &paths, &config(1e-8, 50)).unwrap();
    assert!(diag.converged);

    let mut worst_z: f64 = 0.0;
    let mut mse_y = 0.0;
    for i in 1..50 {
        let t = grid.point(i);
        let g = (a * (1.0 - t)).exp();
        worst_z = worst_z.max((moments(sol.z_at(i)).mean / g - 1.0).abs());
        let b = paths.column(i);
        mse_y += sol.y_at(i).iter().zip(&b).map(|(y, w)| (y - g * w).powi(2)).sum::<f64>() / b.len() as f64;
    }
    mse_y /= 49.0;
    assert!(worst_z < 0.05, "worst relative Z error {worst_z}");
    assert!(mse_y < 0.01, "Y mse {mse_y}");
}

#[test]
fn deterministic_problem_gives_path_constant_y_and_zero_z() {
    let mut cfg = ProblemConfig::builtin("ode-rho").unwrap();
    cfg.n_paths = 1000;
    let spec = cfg.problem_spec().unwrap();
    let paths = sample(cfg.method, &spec.grid, spec.hurst, cfg.n_paths, cfg.seed).unwrap();
    let (sol, diag) = solve(&spec, &paths, &config(1e-8, 100)).unwrap();
    let zero = SolutionPair::zeros(cfg.n_paths, &spec.grid);
    let mut z_only = zero.clone();
    z_only.z.assign(&sol.z);
    assert!(pair_distance(&z_only, &zero, 0.0, spec.hurst).unwrap() <= 1e-6);
    for i in 0..spec.grid.len() {
        let ys = sol.y_at(i);
        let spread = ys.iter().fold(f64::NEG_INFINITY, |m, y| m.max(*y)) - ys.iter().fold(f64::INFINITY, |m, y| m.min(*y));
        assert!(spread <= 1e-8, "spread {spread} at {i}");
    }

    // ratios fall monotonically until the noise floor
    let mut prev = f64::INFINITY;
    for (k, r) in diag.ratios.iter().enumerate() {
        if diag.diff_norms[k + 1] <= diag.noise_floor {
            break;
        }
        assert!(*r <= prev * (1.0 + 1e-9), "ratio {k}: {r} after {prev}");
        prev = *r;
    }
}

#[test]
fn converged_solution_is_a_fixed_point() {
    let mut cfg = ProblemConfig::builtin("lipschitz-linear").unwrap();
    cfg.n_paths = 4000;
    let spec = cfg.problem_spec().unwrap();
    let paths = sample(cfg.method, &spec.grid, spec.hurst, cfg.n_paths, cfg.seed).unwrap();
    let solve_cfg = config(1e-6, 30);
    let (sol, diag) = solve(&spec, &paths, &solve_cfg).unwrap();
    assert!(diag.converged);
    let again = picard_step(&sol, &spec, &paths, &solve_cfg.basis).unwrap();
    let d = pair_distance(&again, &sol, 0.0, spec.hurst).unwrap();
    assert!(d <= 2.0 * solve_cfg.tol * diag.diff_norms[0], "moved by {d}");
    assert!(contraction_ratio(&diag).holds());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut cfg = ProblemConfig::builtin("lipschitz-linear").unwrap();
    cfg.n_paths = 2500;
    let spec = cfg.problem_spec().unwrap();
    let paths = sample(cfg.method, &spec.grid, spec.hurst, cfg.n_paths, cfg.seed).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| solve(&spec, &paths, &config(1e-6, 30)).unwrap())
    };
    let (a, da) = run(1);
    let (b, db) = run(5);
    assert_eq!(da.diff_norms, db.diff_norms);
    assert!(a.y.iter().zip(b.y.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.z.iter().zip(b.z.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
