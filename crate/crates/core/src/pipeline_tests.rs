//! End-to-end checks across the solvers, regions and CSV output.

use approx::assert_relative_eq;

use crate::analysis::{
    convergence_sweep, default_delta_grid, default_lambda_grid, eff_model, linspace, scan_grid, solve_point, Method,
    RegionLabel, ScanTable, CSV_HEADER, DEAD_BAND,
};
use crate::effective::effective_cooling_predicate;
use crate::model::QarConfig;
use crate::redfield::SolverOptions;

fn at(lambda: f64, delta: f64) -> QarConfig {
    QarConfig::default().with_coupling(lambda).with_gap(delta).unwrap()
}

fn regions(table: &ScanTable) -> Vec<RegionLabel> {
    table.rows.iter().map(|r| r.region().expect("solved")).collect()
}

#[test]
fn effective_model_reduces_to_bare_at_weak_coupling() {
    let opts = SolverOptions::default();
    for delta in [0.1, 0.2, 0.3, 0.6, 0.8] {
        let cfg = at(0.05, delta);
        let eff = solve_point(Method::Eff, &cfg, &opts).unwrap();
        let bmr = solve_point(Method::Bmr, &cfg, &opts).unwrap();
        assert_relative_eq!(eff.j_c, bmr.j_c, max_relative = 0.05);
        assert_relative_eq!(eff.j_h, bmr.j_h, max_relative = 0.05);
        assert_relative_eq!(eff.j_w, bmr.j_w, max_relative = 0.05);
    }
}

#[test]
fn bmr_labels_do_not_depend_on_lambda() {
    let deltas = default_delta_grid();
    let table = scan_grid(Method::Bmr, &default_lambda_grid(), &deltas, &QarConfig::default(), &SolverOptions::default())
        .unwrap();
    let labels = regions(&table);
    for (k, label) in labels.iter().enumerate() {
        assert_eq!(*label, labels[k % deltas.len()], "Δ={}", deltas[k % deltas.len()]);
    }
}

#[test]
fn predicate_agrees_with_effective_currents() {
    let opts = SolverOptions::default();
    let mut checked = 0;
    for lambda in [1.0, 5.0, 9.0] {
        for delta in linspace(0.05, 0.95, 19) {
            let cfg = at(lambda, delta);
            let model = eff_model(&cfg).unwrap();
            let (bc, bh, bw) = cfg.betas();
            let p = solve_point(Method::Eff, &cfg, &opts).unwrap();
            if p.j_c.abs() < DEAD_BAND {
                continue;
            }
            assert_eq!(effective_cooling_predicate(&model, bc, bh, bw), p.j_c > 0.0, "λ={lambda}, Δ={delta}");
            checked += 1;
        }
    }
    assert!(checked > 50);
}

/// Collapses runs of equal labels.
fn runs(labels: &[RegionLabel]) -> Vec<RegionLabel> {
    let mut out: Vec<RegionLabel> = Vec::new();
    for &l in labels {
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

#[test]
fn rc_region_sequences_along_lambda() {
    let opts = SolverOptions::default();
    let cfg = QarConfig::default().with_truncation(6);
    let lambdas = linspace(0.5, 12.0, 24);

    let low = scan_grid(Method::Rc, &lambdas, &[0.2], &cfg, &opts).unwrap();
    let seq = runs(&regions(&low));
    assert_eq!(seq[0], RegionLabel::R3);
    assert!(seq[1..].iter().all(|l| matches!(l, RegionLabel::R2 | RegionLabel::R4)), "{seq:?}");

    let high = scan_grid(Method::Rc, &lambdas, &[0.6], &cfg, &opts).unwrap();
    let seq = runs(&regions(&high));
    assert_eq!(seq[0], RegionLabel::R1);
    assert_eq!(seq.iter().filter(|&&l| l == RegionLabel::R3).count(), 1, "{seq:?}");
    assert_ne!(*seq.last().unwrap(), RegionLabel::R3);
}

#[test]
fn weak_coupling_current_is_insensitive_to_truncation() {
    let cfg = QarConfig::default().with_gap(0.2).unwrap();
    let table = convergence_sweep(&[2, 3, 4, 5, 6], &cfg, &[0.01], &SolverOptions::default()).unwrap();
    for m in 2..6 {
        assert!(table.max_relative_deviation(m).unwrap() < 0.005, "M={m}");
    }
}

#[test]
fn csv_round_trip_keeps_values() {
    let table = scan_grid(
        Method::Rc,
        &[1.0, 3.0],
        &[0.2, 0.6],
        &QarConfig::default().with_truncation(3),
        &SolverOptions::default(),
    )
    .unwrap();
    let text = table.to_csv_string();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    for (line, row) in lines.zip(&table.rows) {
        let f: Vec<&str> = line.split(',').collect();
        let d = row.data().unwrap();
        assert_relative_eq!(f[0].parse::<f64>().unwrap(), row.lambda, max_relative = 1e-11);
        assert_relative_eq!(f[4].parse::<f64>().unwrap(), d.j_c, max_relative = 1e-11);
        assert_relative_eq!(f[6].parse::<f64>().unwrap(), d.j_w, max_relative = 1e-11);
        assert_eq!(f[8].parse::<RegionLabel>().unwrap(), d.region);
    }
}
