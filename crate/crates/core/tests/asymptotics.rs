use qrcov::asymptotics::*;
use qrcov::experiments::{generate, SimConfig};
use qrcov::model::empirical_quantile;
use qrcov::{fit, ProblemSpec, SolverConfig};

struct Empirical {
    dual_q90: f64,
    nonpositive: f64,
    intercept: f64,
    error_norm: f64,
}

fn simulate(n: usize, d: usize, lambda_fit: f64, trials: usize) -> Empirical {
    let cfg = SimConfig::gaussian(n, d, 1, 0.9, trials, 77);
    let spec = ProblemSpec::new(0.9, lambda_fit).unwrap();
    let mut acc = Empirical { dual_q90: 0.0, nonpositive: 0.0, intercept: 0.0, error_norm: 0.0 };
    for t in 0..trials {
        let draw = generate(&cfg, t).unwrap();
        let f = fit(&draw.train, &spec, &SolverConfig::default()).unwrap();
        acc.dual_q90 += empirical_quantile(0.9, f.duals.as_slice()).unwrap();
        acc.nonpositive += f.duals.iter().filter(|&&e| e <= 1e-6).count() as f64 / n as f64;
        acc.intercept += f.intercept_or_offset;
        acc.error_norm += (&f.beta - &draw.beta_true).norm();
    }
    let k = trials as f64;
    Empirical {
        dual_q90: acc.dual_q90 / k,
        nonpositive: acc.nonpositive / k,
        intercept: acc.intercept / k,
        error_norm: acc.error_norm / k,
    }
}

#[test]
fn dual_quantile_matches_fitted_duals() {
    let pb = AsymptoticProblem::new(0.2, 0.9, 1.0);
    let sol = solve_asymptotic(&pb).unwrap();
    let law = limiting_dual_law(&sol, &pb).unwrap();
    let emp = simulate(200, 40, 0.0, 20);
    assert!((law.quantile(0.9) - emp.dual_q90).abs() <= 0.02, "{} vs {}", law.quantile(0.9), emp.dual_q90);
    assert!((law.prob_nonpositive() - emp.nonpositive).abs() <= 0.03);
    let (b0, mu) = predicted_primal_limits(&sol);
    assert!((b0 - emp.intercept).abs() / b0 <= 0.1, "{b0} vs {}", emp.intercept);
    assert!((mu - emp.error_norm).abs() / mu <= 0.1, "{mu} vs {}", emp.error_norm);
}

#[test]
fn ridge_limits_match_simulation() {
    let (n, d) = (400, 80);
    let lambda_scaled = 0.5;
    let pb = AsymptoticProblem::new(d as f64 / n as f64, 0.9, 1.0).with_lambda(lambda_scaled);
    let sol = solve_asymptotic(&pb).unwrap();
    let emp = simulate(n, d, d as f64 * lambda_scaled, 10);
    assert!((sol.m_u_star - emp.error_norm).abs() / sol.m_u_star <= 0.1);
    assert!((sol.beta0_star - emp.intercept).abs() / sol.beta0_star <= 0.1);
}

#[test]
fn solution_is_a_saddle_point() {
    for gamma in [0.05, 0.2, 0.4] {
        let pb = AsymptoticProblem::new(gamma, 0.9, 1.0);
        let sol = solve_asymptotic(&pb).unwrap();
        let x = [sol.beta0_star, sol.m_u_star, sol.rho1_star];
        let y = [sol.m_eta_star, sol.rho2_star];
        let f0 = pb.objective(x, y);
        for k in 0..3 {
            for s in [-1e-3, 1e-3] {
                let mut xp = x;
                xp[k] += s;
                let yp = pb.inner_argmax(xp);
                assert!(pb.objective(xp, yp) >= f0 - 1e-9, "gamma {gamma}, coord {k}");
            }
        }
        assert!(sol.rho1_fixed_point_residual(&pb) <= 1e-5);
        assert!(sol.predicted_coverage < 0.9);
    }
}

#[test]
fn coverage_shortfall_grows_with_ratio() {
    let covs: Vec<f64> = [0.05, 0.1, 0.2, 0.3]
        .iter()
        .map(|&g| solve_asymptotic(&AsymptoticProblem::new(g, 0.9, 1.0)).unwrap().predicted_coverage)
        .collect();
    assert!(covs.windows(2).all(|w| w[1] < w[0]), "{covs:?}");
}

#[test]
fn invalid_problems_are_rejected() {
    assert!(solve_asymptotic(&AsymptoticProblem::new(0.0, 0.9, 1.0)).is_err());
    assert!(solve_asymptotic(&AsymptoticProblem::new(0.2, 1.0, 1.0)).is_err());
    assert!(solve_asymptotic(&AsymptoticProblem::new(0.2, 0.9, -1.0)).is_err());
}
