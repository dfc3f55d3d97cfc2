use averaged_lorentz::config::ScenarioConfig;
use averaged_lorentz::experiments::compare;
use averaged_lorentz::io::{read_report, write_report};

fn data(name: &str) -> String {
    format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) + 1e-18
}

/// Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden`.
#[test]
fn compare_matches_the_recorded_baseline() {
    let cfg = ScenarioConfig::load(data("compare_small.toml").as_ref()).unwrap();
    let (records, summary) = compare(&cfg, cfg.ensemble.spread, cfg.ensemble.energy).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        write_report(&records, std::fs::File::create(data("compare_small.golden.csv")).unwrap()).unwrap();
    }
    let golden = read_report(std::fs::File::open(data("compare_small.golden.csv")).unwrap()).unwrap();
    assert_eq!(records.len(), golden.len());
    for (r, g) in records.iter().zip(&golden) {
        for (a, b) in [
            (r.t_lab, g.t_lab),
            (r.dx, g.dx),
            (r.dy, g.dy),
            (r.theta2, g.theta2),
            (r.theta_bar2, g.theta_bar2),
            (r.gamma_bar, g.gamma_bar),
            (r.alpha, g.alpha),
            (r.energy, g.energy),
        ] {
            assert!(close(a, b), "t = {}: {a:e} vs {b:e}", r.t_lab);
        }
    }
    assert!(summary.dx_monotone);
    assert!(summary.hypotheses.ultra_relativistic && summary.hypotheses.narrow);
}
