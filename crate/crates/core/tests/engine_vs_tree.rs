use robust_impulse::config::RunConfig;
use robust_impulse::harness::run_oracle;
use robust_impulse::solver::solve_robust;

fn config(text: &str) -> RunConfig {
    let cfg = RunConfig::from_toml_str(text).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn engine_y0(cfg: &RunConfig) -> (f64, f64) {
    let spec = cfg.spec().unwrap();
    let grid = cfg.time_grid(&spec).unwrap();
    let sol = solve_robust(&spec, &cfg.forward_sim(grid), &cfg.solver_config()).unwrap();
    (sol.y0(), sol.se())
}

#[test]
fn drift_uncertain_martingale_matches_tree() {
    let cfg = config(
        r#"
        [problem]
        name = "mart1d"
        overrides = { actions = [-0.1, 0.0, 0.1] }
        [grid]
        steps = 50
        [monte_carlo]
        paths = 8000
        seed = 11
        [solver]
        k_max = 0
        se_sections = 4
        [oracle]
        enabled = true
        steps = 200
        "#,
    );
    let tree = run_oracle(&cfg).unwrap().root_values()[0];
    assert!((tree - 0.9).abs() < 1e-9, "tree {tree}");
    let (y0, se) = engine_y0(&cfg);
    assert!((y0 - tree).abs() <= 0.02 * tree.abs(), "y0 {y0} (se {se}) vs tree {tree}");
}

#[test]
fn cash_without_impulses_matches_tree() {
    let cfg = config(
        r#"
        [problem]
        name = "cash1d"
        [grid]
        steps = 50
        [monte_carlo]
        paths = 8000
        seed = 12
        [solver]
        k_max = 0
        se_sections = 4
        [oracle]
        enabled = true
        steps = 200
        "#,
    );
    let tree = run_oracle(&cfg).unwrap().root_values()[0];
    let (y0, se) = engine_y0(&cfg);
    assert!((y0 - tree).abs() <= (0.05 * tree.abs()).max(0.02), "y0 {y0} (se {se}) vs tree {tree}");
}

#[test]
fn cash_with_two_impulses_matches_tree() {
    let cfg = config(
        r#"
        [problem]
        name = "cash1d"
        [grid]
        steps = 25
        [monte_carlo]
        paths = 8000
        seed = 13
        [solver]
        k_max = 2
        se_sections = 4
        [oracle]
        enabled = true
        steps = 200
        "#,
    );
    let tree = run_oracle(&cfg).unwrap().root_values()[2];
    let (y0, se) = engine_y0(&cfg);
    assert!((y0 - tree).abs() <= (0.05 * tree.abs()).max(0.02), "y0 {y0} (se {se}) vs tree {tree}");
}
