use krrip::bench::config::RipMethodChoice;
use krrip::bench::experiments::{
    bound_params, concentration_row, kappa_row, kappa_row_seed, phase_point, rip_row, tails_rows,
};
use krrip::bench::{run, Cell, ExperimentConfig, ExperimentKind, ModeSelection, Table};
use krrip::{Family, Mode};

fn floats(t: &Table, col: &str) -> Vec<f64> {
    t.column(col).unwrap().iter().map(|c| c.as_f64().unwrap()).collect()
}

fn seed_of(row: &[Cell], t: &Table) -> u64 {
    row[t.column_index("seed").unwrap()].as_u64().unwrap()
}

fn rip_cfg(family: Family, n: usize, cols: usize, s_list: Vec<usize>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ExperimentKind::RipSweep);
    c.family = family;
    c.n = Some(n);
    c.num_cols = Some(cols);
    c.s_list = s_list;
    c.seed = 11;
    c.bounds = Some(krrip::bench::config::BoundsSection {
        psi: Some(1.0),
        ..Default::default()
    });
    c
}

#[test]
fn kappa_table_examples() {
    let mut c = ExperimentConfig::new(ExperimentKind::KappaTable);
    c.families = vec![Family::Rademacher, Family::Spherical, Family::Gaussian];
    c.n_list = vec![4, 5, 10];
    c.kappa.samples = 100_000;
    c.seed = 2;
    let r = run(&c, 0).unwrap();
    let t = r.primary();
    let expect = |fam: &str, n: i64, kappa: f64| {
        let row = t
            .rows
            .iter()
            .find(|r| r[0].as_str() == Some(fam) && r[1] == Cell::Int(n))
            .unwrap();
        assert!((row[2].as_f64().unwrap() - kappa).abs() < 1e-12, "{fam} {n}");
        assert!(row[4].as_f64().unwrap() < 0.01, "{fam} {n} gap {:?}", row[4]);
    };
    expect("rademacher", 4, 4.0 / 3.0);
    expect("spherical", 10, 10.0 / 9.0);
    expect("gaussian", 5, 5.0 / 6.0);
}

#[test]
fn kappa_row_regenerates_from_seed() {
    let mut c = ExperimentConfig::new(ExperimentKind::KappaTable);
    c.families = vec![Family::BoundedUniform];
    c.n_list = vec![6];
    c.kappa.samples = 5000;
    let r = run(&c, 2).unwrap();
    let row = &r.primary().rows[0];
    let seed = seed_of(row, r.primary());
    assert_eq!(seed, kappa_row_seed(c.seed, Family::BoundedUniform, 6));
    assert_eq!(&kappa_row(Family::BoundedUniform, 6, 5000, seed).unwrap(), row);
}

#[test]
fn rip_sweep_spherical_s1_is_zero() {
    let c = rip_cfg(Family::Spherical, 4, 20, vec![1]);
    let r = run(&c, 0).unwrap();
    let t = r.primary();
    let modes = t.column("mode").unwrap();
    for (d, m) in floats(t, "delta").into_iter().zip(modes) {
        if m.as_str() == Some("centered") {
            assert!(d.abs() < 1e-10, "{d}");
        }
    }
    assert_eq!(t.rows.len(), 2);
}

#[test]
fn rip_sweep_exact_is_monotone() {
    let c = rip_cfg(Family::Gaussian, 4, 20, vec![1, 2, 3]);
    let r = run(&c, 0).unwrap();
    let t = r.primary();
    assert!(!r.downgraded);
    let deltas = floats(t, "delta");
    for chunk in deltas.chunks(3) {
        assert!(chunk[0] <= chunk[1] && chunk[1] <= chunk[2], "{chunk:?}");
    }
    for m in t.column("method").unwrap() {
        assert_eq!(m.as_str(), Some("exact"));
    }
}

#[test]
fn rip_sweep_downgrades_with_warning_row() {
    let mut c = rip_cfg(Family::Rademacher, 4, 40, vec![2, 6]);
    c.mode = ModeSelection::Centered;
    c.rip.method = RipMethodChoice::Exact;
    c.rip.enumeration_budget = 1000;
    c.rip.restarts = 3;
    let r = run(&c, 0).unwrap();
    assert!(r.downgraded);
    assert_eq!(r.warnings.len(), 1);
    let t = r.primary();
    let methods = t.column("method").unwrap();
    let notes = t.column("note").unwrap();
    assert_eq!(methods[0].as_str(), Some("exact"));
    assert_eq!(methods[1].as_str(), Some("greedy"));
    assert!(notes[1].as_str().unwrap().starts_with("downgraded"));
}

#[test]
fn rip_rows_regenerate_and_overlay_is_present() {
    let c = rip_cfg(Family::Gaussian, 4, 20, vec![2, 3]);
    let r = run(&c, 0).unwrap();
    let t = r.primary();
    let params = bound_params(&c, 4).unwrap();
    for row in &t.rows {
        let mode = if row[3].as_str() == Some("centered") { Mode::Centered } else { Mode::Uncentered };
        let s = row[4].as_u64().unwrap() as usize;
        let (again, _) = rip_row(&c, 4, mode, s, &params, seed_of(row, t)).unwrap();
        assert_eq!(&again, row);
        assert!(row[7].as_f64().unwrap() > 0.0);
        assert!(row[8].as_u64().unwrap() >= 1);
    }
}

#[test]
fn rip_rejects_too_few_columns() {
    let c = rip_cfg(Family::Gaussian, 5, 20, vec![1]);
    let err = run(&c, 0).unwrap_err();
    assert!(matches!(err, krrip::Error::Config(_)));
}

#[test]
fn psi_is_estimated_when_absent() {
    let mut c = rip_cfg(Family::Gaussian, 4, 16, vec![1]);
    c.bounds = None;
    let p = bound_params(&c, 4).unwrap();
    // ξ = ψ·K + K′ with K = K′ = 1 and a positive ψ.
    assert!(p.xi > 1.0 && p.xi < 10.0, "{}", p.xi);
}

fn phase_cfg(n: usize, cols: usize, s_list: Vec<usize>, trials: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ExperimentKind::PhaseTransition);
    c.family = Family::Spherical;
    c.n = Some(n);
    c.num_cols = Some(cols);
    c.s_list = s_list;
    c.trials = trials;
    c.seed = 99;
    c
}

#[test]
fn phase_s1_always_recovered_for_centered_spherical() {
    let mut c = phase_cfg(6, 64, vec![1], 50);
    c.mode = ModeSelection::Centered;
    let r = run(&c, 0).unwrap();
    assert_eq!(floats(r.primary(), "success_rate"), vec![1.0]);
}

#[test]
fn phase_dense_signal_is_never_recovered() {
    let mut c = phase_cfg(4, 24, vec![24], 20);
    c.solver.max_iters = 200;
    let r = run(&c, 0).unwrap();
    assert!(floats(r.primary(), "success_rate").iter().all(|&v| v == 0.0));
}

#[test]
fn phase_reports_separation_and_regenerates() {
    let c = phase_cfg(5, 30, vec![1, 2, 4], 20);
    let r = run(&c, 0).unwrap();
    let sep = r.table("separation").unwrap();
    assert_eq!(sep.rows.len(), 1);
    let row = &sep.rows[0];
    assert!(row[2].as_f64().unwrap() >= row[3].as_f64().unwrap());
    assert!(r.warnings.is_empty());

    let t = r.primary();
    for row in &t.rows {
        let mode = if row[3].as_str() == Some("centered") { Mode::Centered } else { Mode::Uncentered };
        let s = row[5].as_u64().unwrap() as usize;
        let hits = phase_point(&c, 5, mode, s, seed_of(row, t)).unwrap();
        assert_eq!(Cell::from(hits), row[7]);
    }
    let trials = r.table("trials").unwrap();
    assert_eq!(trials.rows.len(), 3 * 2 * 20);
    assert!(trials.column_index("noise_sigma").is_some());
    assert_eq!(r.extra["solver"]["kind"], "iht");
}

#[test]
fn phase_warns_on_few_trials() {
    let c = phase_cfg(4, 16, vec![1], 5);
    let r = run(&c, 0).unwrap();
    assert_eq!(r.warnings.len(), 1);
}

#[test]
fn concentration_rademacher_rows_are_zero() {
    let mut c = ExperimentConfig::new(ExperimentKind::Concentration);
    c.family = Family::Rademacher;
    c.n_list = vec![4, 8];
    c.num_cols = Some(32);
    c.trials = 20;
    c.concentration.t_grid = vec![0.1, 0.5];
    let r = run(&c, 0).unwrap();
    let t = r.primary();
    assert!(floats(t, "frequency").iter().all(|&f| f == 0.0));
    assert!(t.column_index("side_condition_ok").is_some());
    for row in &t.rows {
        let n = row[1].as_u64().unwrap() as usize;
        let again = concentration_row(&c, n, row[2].as_f64().unwrap(), seed_of(row, t)).unwrap();
        assert_eq!(&again, row);
    }
}

#[test]
fn concentration_gaussian_trend() {
    let mut c = ExperimentConfig::new(ExperimentKind::Concentration);
    c.family = Family::Gaussian;
    c.n_list = vec![4, 8, 16];
    c.num_cols = Some(8);
    c.trials = 100;
    c.concentration.t_grid = vec![1.0];
    c.seed = 4;
    let r = run(&c, 0).unwrap();
    let f = floats(r.primary(), "frequency");
    assert!(f[0] >= f[1] && f[1] >= f[2], "{f:?}");
    for e in floats(r.table("decomposition").unwrap(), "max_identity_error") {
        assert!(e < 1e-10);
    }
}

#[test]
fn tails_rows_regenerate() {
    let mut c = ExperimentConfig::new(ExperimentKind::Tails);
    c.family = Family::Rademacher;
    c.n_list = vec![3, 5];
    c.tails.samples = 2000;
    let r = run(&c, 0).unwrap();
    let t = r.primary();
    for row in &t.rows {
        let n = row[0].as_u64().unwrap() as usize;
        let (again, _, _) = tails_rows(&c, n, seed_of(row, t)).unwrap();
        assert_eq!(&again, row);
    }
    let curves = r.table("curves").unwrap();
    assert_eq!(curves.rows.len(), 2 * (8 + 24));
}

#[test]
fn output_is_identical_across_thread_counts() {
    let mut cfgs = vec![phase_cfg(4, 20, vec![1, 3], 6)];
    let mut rip = rip_cfg(Family::BoundedUniform, 4, 18, vec![2, 3]);
    rip.rip.method = RipMethodChoice::MonteCarlo;
    rip.rip.mc_trials = 50;
    cfgs.push(rip);
    let mut tails = ExperimentConfig::new(ExperimentKind::Tails);
    tails.n = Some(4);
    tails.tails.samples = 3000;
    cfgs.push(tails);
    for c in cfgs {
        let a = run(&c, 1).unwrap();
        let b = run(&c, 3).unwrap();
        for (x, y) in a.tables.iter().zip(&b.tables) {
            assert_eq!(x.to_csv_string(), y.to_csv_string(), "{:?}", c.experiment);
        }
    }
}

#[test]
fn run_rejects_wrong_kind_for_entry_point() {
    let c = phase_cfg(4, 20, vec![1], 20);
    assert!(krrip::bench::run_rip_sweep(&c).is_err());
}
