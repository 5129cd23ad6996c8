use dabsde_core::comparison::{forward_process, monotone_iterate, ComparisonPair, OuterConfig, ReducedGenerator};
use dabsde_core::fbm::{sample, Hurst, SamplingMethod, TimeGrid};
use dabsde_core::frcalc::{beta_norm, BetaNormConfig};
use dabsde_core::problem::{DelayStructure, LinearCoefficients, TerminalData};
use dabsde_core::solver::{solve, RegressionBasis, SolutionPair, SolveConfig};
use dabsde_core::stats::moments;
use dabsde_core::ProblemConfig;

fn cfg() -> SolveConfig {
    SolveConfig {
        basis: RegressionBasis::default(),
        beta: 0.0,
        tol: 1e-8,
        max_iter: 100,
    }
}

fn lin(c: LinearCoefficients) -> ReducedGenerator {
    ReducedGenerator::linear(c, None).unwrap()
}

fn y_distance(a: &SolutionPair, b: &SolutionPair) -> f64 {
    let d = &a.y - &b.y;
    let norm = BetaNormConfig::new(0.0, false, Hurst::new(0.7).unwrap()).unwrap();
    beta_norm(d.view(), &a.grid, &norm, a.grid.t_max()).unwrap()
}

#[test]
fn forward_process_variance_scales_with_sigma() {
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let paths = sample(SamplingMethod::Circulant, &grid, Hurst::new(0.7).unwrap(), 20000, 2).unwrap();
    let eta = forward_process(0.0, |_| 0.0, |_| 2.0, &paths).unwrap();
    let end: Vec<f64> = eta.values.column(32).to_vec();
    let sq: Vec<f64> = end.iter().map(|x| x * x).collect();
    let m = moments(&sq);
    assert!((m.mean - 4.0).abs() <= 3.0 * m.std_error, "{} +- {}", m.mean, m.std_error);
}

#[test]
fn identical_problems_give_a_constant_chain() {
    let mut config = ProblemConfig::builtin("ordered-pair").unwrap();
    config.n_paths = 1500;
    let cmp = config.comparison.as_mut().unwrap();
    cmp.generator2 = config.generator.clone();
    cmp.terminal2 = config.terminal.clone();
    let pair = config.comparison_pair().unwrap();
    let paths = sample(config.method, &pair.spec1.grid, pair.spec1.hurst, config.n_paths, 4).unwrap();
    let chain = monotone_iterate(&pair, &paths, &cfg(), &OuterConfig::default()).unwrap();
    assert!(chain.converged);
    for y in &chain.iterates[1..] {
        let d = y_distance(y, chain.first());
        assert!(d < 1e-5, "drifted by {d}");
    }
}

#[test]
fn constant_drift_gap() {
    let grid = TimeGrid::uniform(1.0, 40).unwrap();
    let h = Hurst::for_solver(0.7).unwrap();
    let pair = ComparisonPair::new(
        grid.clone(),
        h,
        DelayStructure::none(),
        lin(LinearCoefficients::default()),
        TerminalData::constant(1.0, 0.0),
        lin(LinearCoefficients { constant: 0.1, ..Default::default() }),
        TerminalData::constant(1.0, 0.0),
    )
    .unwrap();
    let paths = sample(SamplingMethod::Circulant, &grid, h, 400, 1).unwrap();
    let chain = monotone_iterate(&pair, &paths, &cfg(), &OuterConfig::default()).unwrap();
    let (y1, y3) = (chain.first(), &chain.iterates[1]);
    for i in 0..=40 {
        let t = grid.point(i);
        assert!(y1.y_at(i).iter().all(|y| (y - 1.0).abs() < 1e-9));
        assert!(y3.y_at(i).iter().all(|y| (y - 1.0 - 0.1 * (1.0 - t)).abs() < 1e-9));
    }
}

/// `Y_t = 1 + ∫_t^1 (0.5 Y_{s+1/4} + 0.1) ds`, `Y ≡ 1` on `[1, 5/4]`, by
/// marching backwards on a fine grid.
fn anticipated_oracle(n: usize) -> f64 {
    let dt = 1.0 / n as f64;
    let lag = n / 4;
    let mut y = vec![1.0; n + lag + 1];
    for i in (0..n).rev() {
        let f = |j: usize| 0.5 * y[j + lag] + 0.1;
        y[i] = y[i + 1] + 0.5 * dt * (f(i) + f(i + 1));
    }
    y[0]
}

#[test]
fn anticipated_chain_rises_to_the_fixed_point() {
    let grid = TimeGrid::new(1.0, 0.25, 160).unwrap();
    let h = Hurst::for_solver(0.7).unwrap();
    let delays = DelayStructure::constant(0.0, 0.0, 0.25, 0.0, 0.25);
    let pair = ComparisonPair::new(
        grid.clone(),
        h,
        delays,
        lin(LinearCoefficients { phi: 0.5, ..Default::default() }),
        TerminalData::constant(1.0, 0.0),
        lin(LinearCoefficients { phi: 0.5, constant: 0.1, ..Default::default() }),
        TerminalData::constant(1.0, 0.0),
    )
    .unwrap();
    let paths = sample(SamplingMethod::Circulant, &grid, h, 400, 6).unwrap();
    let chain = monotone_iterate(&pair, &paths, &cfg(), &OuterConfig::default()).unwrap();
    assert!(chain.converged);
    assert!(chain.iterates.len() <= 6, "{} outer iterates", chain.iterates.len() - 1);
    for w in chain.iterates.windows(2) {
        assert!(w[1].y.iter().zip(w[0].y.iter()).all(|(b, a)| b >= &(a - 1e-9)));
    }
    let y0 = moments(chain.last().y_at(0)).mean;
    let oracle = anticipated_oracle(4096);
    assert!((y0 / oracle - 1.0).abs() < 0.01, "{y0} vs {oracle}");
}

#[test]
fn chain_limit_is_the_second_solution() {
    let mut config = ProblemConfig::builtin("ordered-pair").unwrap();
    config.n_paths = 2000;
    let outer = config.comparison.as_ref().unwrap().outer();
    let pair = config.comparison_pair().unwrap();
    let (solve_cfg, _) = config.solver.resolve(0.0);
    let paths = sample(config.method, &pair.spec1.grid, pair.spec1.hurst, config.n_paths, 8).unwrap();
    let chain = monotone_iterate(&pair, &paths, &solve_cfg, &outer).unwrap();
    assert!(chain.converged);
    let (direct, _) = solve(&pair.spec2, &paths, &solve_cfg).unwrap();
    let d = y_distance(chain.last(), &direct);
    assert!(d <= 2.0 * outer.tol_outer, "limit differs by {d}");
}
