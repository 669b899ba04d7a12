use gapdyn_core::ingest::{denormalize, fit_normalization, normalize, parse_csv, write_csv};
use gapdyn_core::knn::{knn_impute, KnnConfig};
use gapdyn_core::metrics::{ioa, rmse};
use gapdyn_core::missingness::{inject_blocks, inject_random, target_count};
use gapdyn_core::sindy::LibrarySpec;
use gapdyn_core::soft_impute::{shrink_step, soft_impute, SoftImputeConfig};
use gapdyn_core::{HourRange, SeriesMatrix, Space};
use nalgebra::DMatrix;
use proptest::prelude::*;

const START: i64 = 403_224;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

/// Series with every station observed at least once.
fn series(max_rows: usize, max_stations: usize, space: Space) -> impl Strategy<Value = SeriesMatrix> {
    (2..=max_rows, 1..=max_stations).prop_flat_map(move |(rows, stations)| {
        (
            prop::collection::vec(-50.0f64..50.0, rows * stations),
            prop::collection::vec(prop::bool::weighted(0.8), rows * stations),
        )
            .prop_map(move |(values, mut mask)| {
                for s in 0..stations {
                    mask[s] = true;
                    mask[stations + s] = true;
                }
                SeriesMatrix::new(START, ids(stations), values, mask, space).unwrap()
            })
    })
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&v| v > 1e-9 * top.max(1.0)).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ioa_is_bounded(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40)) {
        let (o, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(d) = ioa(&o, &p) {
            prop_assert!((0.0..=1.0).contains(&d), "{d}");
        }
    }

    #[test]
    fn ioa_translation_and_scale_invariant(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
        shift in -1e3f64..1e3,
        scale in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
    ) {
        let (o, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = ioa(&o, &p).unwrap();
        let shifted = ioa(
            &o.iter().map(|v| v + shift).collect::<Vec<_>>(),
            &p.iter().map(|v| v + shift).collect::<Vec<_>>(),
        ).unwrap();
        let scaled = ioa(
            &o.iter().map(|v| v * scale).collect::<Vec<_>>(),
            &p.iter().map(|v| v * scale).collect::<Vec<_>>(),
        ).unwrap();
        prop_assert!((base - shifted).abs() < 1e-9);
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn rmse_zero_iff_identical(o in prop::collection::vec(-1e3f64..1e3, 1..20), bump in 1e-3f64..10.0, at in any::<prop::sample::Index>()) {
        prop_assert_eq!(rmse(&o, &o).unwrap(), 0.0);
        let mut p = o.clone();
        p[at.index(o.len())] += bump;
        prop_assert!(rmse(&o, &p).unwrap() > 0.0);
    }

    #[test]
    fn csv_round_trip(m in series(12, 4, Space::Raw)) {
        let text = write_csv(&m);
        let back = parse_csv(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(write_csv(&back), text);
    }

    #[test]
    fn normalization_round_trip(m in series(15, 4, Space::Raw)) {
        let p = match fit_normalization(&m) {
            Ok(p) => p,
            Err(_) => return Ok(()),
        };
        let z = normalize(&m, &p).unwrap();
        for s in 0..z.stations() {
            let obs = z.station_observed(s);
            let n = obs.len() as f64;
            let mean = obs.iter().sum::<f64>() / n;
            let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
        let back = denormalize(&z, &p).unwrap();
        prop_assert_eq!(back.mask(), m.mask());
        for (r, s) in m.observed_cells() {
            let (a, b) = (back.get(r, s).unwrap(), m.get(r, s).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn injection_does_not_move_norm_params(m in series(20, 3, Space::Raw), seed in any::<u64>()) {
        let p = match fit_normalization(&m) {
            Ok(p) => p,
            Err(_) => return Ok(()),
        };
        let (masked, _) = inject_random(&m, 0.3, seed).unwrap();
        let z_full = normalize(&m, &p).unwrap();
        let z_masked = normalize(&masked, &p).unwrap();
        for (r, s) in masked.observed_cells() {
            prop_assert_eq!(z_full.get(r, s), z_masked.get(r, s));
        }
    }

    #[test]
    fn restrict_is_idempotent(m in series(30, 3, Space::Raw), a in 0i64..30, len in 1i64..30) {
        let range = HourRange::new(START + a, START + a + len);
        match m.restrict(range) {
            Ok(once) => {
                prop_assert_eq!(once.restrict(range).unwrap(), once.clone());
                once.validate().unwrap();
            }
            Err(_) => prop_assert!(START + a >= m.span().end),
        }
    }

    #[test]
    fn random_injection_laws(m in series(25, 4, Space::Raw), f in 0.0f64..=1.0, seed in any::<u64>()) {
        let (masked, rec) = inject_random(&m, f, seed).unwrap();
        let observed = m.observed_count();
        prop_assert_eq!(rec.cells.len(), target_count(f, observed));
        for &(r, s) in &rec.cells {
            prop_assert!(m.is_observed(r, s));
            prop_assert!(!masked.is_observed(r, s));
        }
        let cells = (m.rows() * m.stations()) as f64;
        let expected = m.observed_fraction() - f * m.observed_fraction();
        prop_assert!((masked.observed_fraction() - expected).abs() <= 1.0 / cells + 1e-12);
        let (_, again) = inject_random(&m, f, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&rec).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn block_injection_laws(m in series(40, 3, Space::Raw), f in 0.0f64..=1.0, seed in any::<u64>(), lo in 1usize..5, extra in 0usize..6) {
        let hi = (lo + extra).min(m.rows());
        let lo = lo.min(hi);
        let (masked, rec) = inject_blocks(&m, f, lo, hi, seed).unwrap();
        prop_assert_eq!(rec.cells.len(), target_count(f, m.observed_count()));
        for &(r, s) in &rec.cells {
            prop_assert!(m.is_observed(r, s));
            prop_assert!(!masked.is_observed(r, s));
        }
    }

    #[test]
    fn knn_preserves_observed_and_is_equivariant(m in series(14, 4, Space::Normalized), k in 1usize..6, rot in 0usize..4) {
        let cfg = KnnConfig { k, ..Default::default() };
        let out = knn_impute(&m, &cfg).unwrap();
        prop_assert!(out.is_complete());
        for (r, s) in m.observed_cells() {
            prop_assert_eq!(out.get(r, s), m.get(r, s));
        }
        let width = m.stations();
        let order: Vec<usize> = (0..width).map(|i| (i + rot) % width).collect();
        let permuted = knn_impute(&m.permute_stations(&order), &cfg).unwrap();
        prop_assert!(permuted.approx_eq(&out.permute_stations(&order), 1e-12));
    }

    #[test]
    fn knn_values_stay_in_station_range(m in series(14, 4, Space::Normalized), k in 1usize..6) {
        let out = knn_impute(&m, &KnnConfig { k, ..Default::default() }).unwrap();
        for (r, s) in m.missing_cells() {
            let obs = m.station_observed(s);
            let lo = obs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = out.get(r, s).unwrap();
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn soft_impute_preserves_observed(m in series(15, 4, Space::Normalized), lambda in 0.01f64..5.0) {
        let cfg = SoftImputeConfig { lambda, max_iter: 50, ..Default::default() };
        let out = soft_impute(&m, &cfg).unwrap();
        prop_assert!(out.matrix.is_complete());
        for (r, s) in m.observed_cells() {
            prop_assert_eq!(out.matrix.get(r, s), m.get(r, s));
        }
        prop_assert_eq!(out.convergence.history.len(), out.convergence.iterations);
    }

    #[test]
    fn shrink_step_is_monotone(
        (rows, cols, data) in (2usize..10, 1usize..6).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-5.0f64..5.0, r * c))),
        lambda in 0.0f64..4.0,
    ) {
        let input = DMatrix::from_row_slice(rows, cols, &data);
        let out = shrink_step(&input, lambda).unwrap();
        let nuclear = |m: &DMatrix<f64>| singular_values(m).iter().sum::<f64>();
        prop_assert!(nuclear(&out) <= nuclear(&input) + 1e-9);
        prop_assert!(numeric_rank(&out) <= numeric_rank(&input));
    }

    #[test]
    fn library_dimension_law(stations in 1usize..8, degree in 0usize..4, constant in any::<bool>()) {
        let spec = LibrarySpec { degree, include_constant: constant };
        let binom = |n: usize, k: usize| (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1));
        let full = binom(stations + degree, degree);
        let expected = if constant { full } else { full - 1 };
        prop_assert_eq!(spec.len(stations), expected);
        prop_assert_eq!(spec.terms(stations).len(), expected);
    }
}
