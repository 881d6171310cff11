mod common;

use common::{default_table, exact_bounds};
use hlfr::boundtable::{simulate_bounds, BoundKey, BoundTable};
use hlfr::seed::rng_from;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn simulation_matches_exact_enumeration() {
    let key = BoundKey::new(0.5, 0.8, 0.05, 8);
    let mc = simulate_bounds(&key, 100_000, 17).unwrap();
    let exact = exact_bounds(0.5, 0.8, 8, 0.05);
    assert!((mc.lower - exact.lower).abs() <= 0.02, "{mc:?} vs {exact:?}");
    assert!((mc.upper - exact.upper).abs() <= 0.02, "{mc:?} vs {exact:?}");
}

#[test]
fn stationary_spread_matches_closed_form() {
    // sample standard deviation of the statistic at large N
    let (p, eta) = (0.5, 0.9);
    let mut rng = rng_from(5);
    let values: Vec<f64> = (0..20_000)
        .map(|_| {
            let mut r = 0.5;
            for _ in 0..400 {
                r = eta * r + if rng.gen_bool(p) { 1.0 - eta } else { 0.0 };
            }
            r
        })
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    let expected = ((1.0 - eta) / (1.0 + eta) * p * (1.0 - p)).sqrt();
    assert!((expected - 0.1147).abs() < 1e-3);
    assert!((sd - expected).abs() / expected < 0.1, "{sd} vs {expected}");

    // the simulated 95% band is consistent with that spread
    let b = simulate_bounds(&BoundKey::new(p, eta, 0.05, 5000), 50_000, 2).unwrap();
    let width = (b.upper - b.lower) / (2.0 * 1.96);
    assert!((width - expected).abs() / expected < 0.15, "{b:?}");
}

#[test]
fn default_table_round_trips_exactly() {
    let table = default_table();
    assert_eq!(table.p_grid().len(), 99);
    assert_eq!(table.n_grid().len(), 16);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bounds.csv");
    table.save(&path).unwrap();
    let back = BoundTable::load(&path).unwrap();
    assert_eq!(&back, table.as_ref());
}

#[test]
fn default_table_invariants() {
    let table = default_table();
    for (_, _, _, _, b) in table.rows() {
        assert!(0.0 <= b.lower && b.lower <= b.upper && b.upper <= 1.0);
    }
    let (np, nn) = (table.p_grid().len(), table.n_grid().len());
    for p in 0..np {
        for n in 0..nn {
            // significance list is sorted: index 0 is the stricter level
            assert!(table.entry(p, 0, 0, n).contains(&table.entry(p, 0, 1, n)));
        }
    }
}

#[test]
fn load_reports_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "# m_draws=1000 seed=1\np,eta,sig,n,lower,upper\n0.5,0.9,0.01,4,0.1,x\n").unwrap();
    let err = BoundTable::load(&path).unwrap_err().to_string();
    assert!(err.contains("row 1"), "{err}");
    std::fs::write(&path, "p,eta,sig,n,lower,upper\n").unwrap();
    assert!(BoundTable::load(&path).is_err());
}

/// Null containment: a stationary stream rarely leaves the bounds.
#[test]
fn null_exceedance_near_level() {
    let table = default_table();
    let sig = 0.01;
    let (eta_idx, sig_idx) = (table.eta_index(0.9).unwrap(), table.sig_index(sig).unwrap());
    let p = 0.3;
    let mut rng = rng_from(99);
    let (mut outside, mut total) = (0usize, 0usize);
    for _ in 0..20 {
        let mut r = 0.5;
        let (mut hits, mut n) = (1u64, 2u64);
        for step in 0..5000 {
            let hit = rng.gen_bool(p);
            r = 0.9 * r + if hit { 0.1 } else { 0.0 };
            hits += u64::from(hit);
            n += 1;
            if step < 100 {
                continue;
            }
            let b = table
                .lookup_at(eta_idx, sig_idx, hits as f64 / n as f64, n as f64)
                .unwrap()
                .bounds;
            total += 1;
            outside += usize::from(b.excludes(r));
        }
    }
    let rate = outside as f64 / total as f64;
    let se = (sig * (1.0 - sig) / total as f64).sqrt();
    // exceedances are autocorrelated, so allow a wide band around the level
    assert!(rate <= sig + 10.0 * se, "{rate}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lookup_stays_between_bracketing_nodes(p in 0.011f64..0.989, n in 1.0f64..10_000.0) {
        let table = default_table();
        let e = table.eta_index(0.9).unwrap();
        let got = table.lookup_at(e, 1, p, n).unwrap();
        prop_assert!(!got.clamped);
        let pg = table.p_grid();
        let ng = table.n_grid();
        let pi = pg.partition_point(|&g| g <= p).saturating_sub(1);
        let ni = ng.partition_point(|&g| (g as f64) <= n).saturating_sub(1);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut lo_u = f64::INFINITY;
        let mut hi_u = f64::NEG_INFINITY;
        for a in [pi, (pi + 1).min(pg.len() - 1)] {
            for b in [ni, (ni + 1).min(ng.len() - 1)] {
                let node = table.entry(a, e, 1, b);
                lo = lo.min(node.lower);
                hi = hi.max(node.lower);
                lo_u = lo_u.min(node.upper);
                hi_u = hi_u.max(node.upper);
            }
        }
        prop_assert!(got.bounds.lower >= lo - 1e-12 && got.bounds.lower <= hi + 1e-12);
        prop_assert!(got.bounds.upper >= lo_u - 1e-12 && got.bounds.upper <= hi_u + 1e-12);
        prop_assert!(got.bounds.lower <= got.bounds.upper);
    }

    #[test]
    fn equal_neighbours_interpolate_to_themselves(level in 0.0f64..0.5) {
        let table = BoundTable::build(&[0.2, 0.4], &[0.9], &[0.05], &[3, 9], 1000, 1).unwrap();
        // a table whose two p nodes agree, built via save/load editing
        let mut text = Vec::new();
        table.write(&mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        let edited: String = text
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() == 6 && f[0] != "p" {
                    format!("{},{},{},{},{},{}\n", f[0], f[1], f[2], f[3], level, 1.0 - level)
                } else {
                    format!("{l}\n")
                }
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, edited).unwrap();
        let t = BoundTable::load(&path).unwrap();
        let got = t.lookup(&BoundKey::new(0.3, 0.9, 0.05, 5)).unwrap().bounds;
        prop_assert!((got.lower - level).abs() < 1e-12);
        prop_assert!((got.upper - (1.0 - level)).abs() < 1e-12);
    }
}
