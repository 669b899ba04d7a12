//! Seeded synthetic missingness: uniformly random cells or per-station
//! contiguous outage blocks. Each injection returns the exact set of cells it
//! masked so the pre-injection values can be scored later.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{Cell, SeriesMatrix};

pub const DEFAULT_BLOCK_MIN_HOURS: usize = 6;
pub const DEFAULT_BLOCK_MAX_HOURS: usize = 72;

// Consecutive rejected block draws before blocks may touch earlier ones.
const MAX_ISOLATED_ATTEMPTS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InjectError {
    #[error("InvalidFraction: {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("InvalidBlockLength: need 1 <= min_len ({min_len}) <= max_len ({max_len}) <= rows ({rows})")]
    InvalidBlockLength {
        min_len: usize,
        max_len: usize,
        rows: usize,
    },
    #[error("Unsatisfiable: {target} cells requested but only {available} observed")]
    Unsatisfiable { target: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    Random {
        fraction: f64,
    },
    Block {
        fraction: f64,
        min_len_hours: usize,
        max_len_hours: usize,
    },
    /// Half the budget as blocks, the remainder as random cells.
    Mixed {
        fraction: f64,
        min_len_hours: usize,
        max_len_hours: usize,
    },
}

/// Ground truth for one injection: which observed cells were hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub seed: u64,
    pub regime: Regime,
    /// Sorted row-major.
    pub cells: Vec<Cell>,
}

fn check_fraction(fraction: f64) -> Result<(), InjectError> {
    if (0.0..=1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(InjectError::InvalidFraction(fraction))
    }
}

/// `round(fraction × observed)`, halves away from zero.
pub fn target_count(fraction: f64, observed: usize) -> usize {
    (fraction * observed as f64).round() as usize
}

/// Masks `round(fraction × observed)` observed cells drawn uniformly without
/// replacement.
pub fn inject_random(
    m: &SeriesMatrix,
    fraction: f64,
    seed: u64,
) -> Result<(SeriesMatrix, InjectionRecord), InjectError> {
    check_fraction(fraction)?;
    let observed = m.observed_cells();
    let target = target_count(fraction, observed.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = pick_random(&observed, target, &mut rng);
    let record = InjectionRecord {
        seed,
        regime: Regime::Random { fraction },
        cells,
    };
    Ok((apply(m, &record.cells), record))
}

fn pick_random(pool: &[Cell], count: usize, rng: &mut ChaCha8Rng) -> Vec<Cell> {
    let mut cells: Vec<Cell> = index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    cells.sort_unstable();
    cells
}

fn apply(m: &SeriesMatrix, cells: &[Cell]) -> SeriesMatrix {
    m.with_masked(cells)
        .expect("injected cells come from the matrix itself")
}

/// Masks contiguous single-station runs until exactly
/// `round(fraction × observed)` cells are hidden.
///
/// Each draw picks a station, a length uniform in `[min_len, max_len]` and a
/// start row so the run fits inside the matrix. Runs are kept apart from
/// earlier runs (at least one untouched hour between them) while that is
/// feasible; the last run is truncated to land on the target count.
pub fn inject_blocks(
    m: &SeriesMatrix,
    fraction: f64,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<(SeriesMatrix, InjectionRecord), InjectError> {
    check_fraction(fraction)?;
    let rows = m.rows();
    if min_len == 0 || min_len > max_len || max_len > rows {
        return Err(InjectError::InvalidBlockLength {
            min_len,
            max_len,
            rows,
        });
    }
    let available = m.observed_count();
    let target = target_count(fraction, available);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = draw_blocks(m, target, min_len, max_len, &mut rng)?;
    let record = InjectionRecord {
        seed,
        regime: Regime::Block {
            fraction,
            min_len_hours: min_len,
            max_len_hours: max_len,
        },
        cells,
    };
    Ok((apply(m, &record.cells), record))
}

fn draw_blocks(
    m: &SeriesMatrix,
    target: usize,
    min_len: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Cell>, InjectError> {
    let available = m.observed_count();
    if target > available {
        return Err(InjectError::Unsatisfiable { target, available });
    }
    let rows = m.rows();
    let width = m.stations();
    let mut taken = vec![false; rows * width];
    let mut injected = 0usize;
    let mut rejected = 0usize;

    while injected < target {
        let station = rng.gen_range(0..width);
        let len = rng.gen_range(min_len..=max_len);
        let start = rng.gen_range(0..=rows - len);
        let isolated = rejected < MAX_ISOLATED_ATTEMPTS;
        if isolated {
            let lo = start.saturating_sub(1);
            let hi = (start + len + 1).min(rows);
            if (lo..hi).any(|r| taken[r * width + station]) {
                rejected += 1;
                continue;
            }
        }
        let mut gained = 0;
        for r in start..start + len {
            if injected == target {
                break;
            }
            let i = r * width + station;
            if m.is_observed(r, station) && !taken[i] {
                taken[i] = true;
                injected += 1;
                gained += 1;
            }
        }
        if gained > 0 {
            rejected = 0;
        } else if isolated {
            rejected += 1;
        } else {
            // dense regime: fall back to anchoring on a remaining cell
            let remaining: Vec<Cell> = m
                .observed_cells()
                .into_iter()
                .filter(|&(r, s)| !taken[r * width + s])
                .collect();
            let (r, s) = remaining[rng.gen_range(0..remaining.len())];
            taken[r * width + s] = true;
            injected += 1;
        }
    }

    Ok(taken
        .iter()
        .enumerate()
        .filter(|(_, &t)| t)
        .map(|(i, _)| (i / width, i % width))
        .collect())
}

/// Injects `fraction` of observed cells, half as blocks and the rest as
/// random cells, keeping the exact total.
pub fn inject_mixed(
    m: &SeriesMatrix,
    fraction: f64,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<(SeriesMatrix, InjectionRecord), InjectError> {
    check_fraction(fraction)?;
    let rows = m.rows();
    if min_len == 0 || min_len > max_len || max_len > rows {
        return Err(InjectError::InvalidBlockLength {
            min_len,
            max_len,
            rows,
        });
    }
    let total = target_count(fraction, m.observed_count());
    let block_part = total / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = draw_blocks(m, block_part, min_len, max_len, &mut rng)?;
    let masked = apply(m, &cells);
    let pool = masked.observed_cells();
    cells.extend(pick_random(&pool, total - block_part, &mut rng));
    cells.sort_unstable();
    let record = InjectionRecord {
        seed,
        regime: Regime::Mixed {
            fraction,
            min_len_hours: min_len,
            max_len_hours: max_len,
        },
        cells,
    };
    Ok((apply(m, &record.cells), record))
}

/// Lengths of maximal runs of injected cells, per station, in time order.
pub fn run_lengths(cells: &[Cell], stations: usize) -> Vec<usize> {
    let mut by_station: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); stations];
    for &(r, s) in cells {
        by_station[s].insert(r);
    }
    let mut runs = Vec::new();
    for rows in by_station {
        let mut prev: Option<usize> = None;
        let mut len = 0;
        for r in rows {
            match prev {
                Some(p) if r == p + 1 => len += 1,
                _ => {
                    if len > 0 {
                        runs.push(len);
                    }
                    len = 1;
                }
            }
            prev = Some(r);
        }
        if len > 0 {
            runs.push(len);
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Space;

    fn full(rows: usize, width: usize) -> SeriesMatrix {
        let ids = (0..width).map(|i| format!("s{i}")).collect();
        SeriesMatrix::from_values(0, ids, (0..rows * width).map(|i| i as f64).collect(), Space::Raw)
            .unwrap()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let m = full(20, 2);
        let (out, rec) = inject_random(&m, 0.0, 3).unwrap();
        assert_eq!(out, m);
        assert!(rec.cells.is_empty());
        let (out, rec) = inject_blocks(&m, 0.0, 2, 4, 3).unwrap();
        assert_eq!(out, m);
        assert!(rec.cells.is_empty());
    }

    #[test]
    fn random_count_is_exact() {
        let m = full(10, 1);
        let (out, rec) = inject_random(&m, 0.2, 11).unwrap();
        assert_eq!(rec.cells.len(), 2);
        assert_eq!(out.observed_count(), 8);
    }

    #[test]
    fn random_is_deterministic() {
        let m = full(40, 3);
        let a = inject_random(&m, 0.35, 99).unwrap().1;
        let b = inject_random(&m, 0.35, 99).unwrap().1;
        assert_eq!(a, b);
        let c = inject_random(&m, 0.35, 100).unwrap().1;
        assert_ne!(a.cells, c.cells);
    }

    #[test]
    fn random_avoids_missing_cells() {
        let m = full(30, 2).with_masked(&[(0, 0), (5, 1), (7, 0)]).unwrap();
        let (_, rec) = inject_random(&m, 0.9, 1).unwrap();
        for c in [(0, 0), (5, 1), (7, 0)] {
            assert!(!rec.cells.contains(&c));
        }
        assert_eq!(rec.cells.len(), target_count(0.9, 57));
    }

    #[test]
    fn single_block_when_target_matches_length() {
        let m = full(100, 1);
        let (out, rec) = inject_blocks(&m, 0.1, 10, 10, 5).unwrap();
        assert_eq!(rec.cells.len(), 10);
        assert_eq!(run_lengths(&rec.cells, 1), vec![10]);
        let rows: Vec<usize> = rec.cells.iter().map(|c| c.0).collect();
        assert!(rows.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(out.observed_count(), 90);
    }

    #[test]
    fn full_fraction_masks_everything() {
        let m = full(50, 2);
        let (out, rec) = inject_blocks(&m, 1.0, 3, 7, 8).unwrap();
        assert_eq!(rec.cells.len(), 100);
        assert_eq!(out.observed_count(), 0);
    }

    #[test]
    fn block_lengths_within_bounds() {
        let m = full(2000, 3);
        let (_, rec) = inject_blocks(&m, 0.3, 6, 72, 21).unwrap();
        assert_eq!(rec.cells.len(), target_count(0.3, 6000));
        let runs = run_lengths(&rec.cells, 3);
        let short = runs.iter().filter(|&&l| l < 6).count();
        assert!(short <= 1, "{runs:?}");
        assert!(runs.iter().all(|&l| l <= 72), "{runs:?}");
    }

    #[test]
    fn bad_parameters() {
        let m = full(10, 1);
        assert_eq!(
            inject_random(&m, 1.5, 0).unwrap_err(),
            InjectError::InvalidFraction(1.5)
        );
        assert!(matches!(
            inject_blocks(&m, 0.5, 0, 3, 0),
            Err(InjectError::InvalidBlockLength { .. })
        ));
        assert!(matches!(
            inject_blocks(&m, 0.5, 4, 11, 0),
            Err(InjectError::InvalidBlockLength { .. })
        ));
    }

    #[test]
    fn mixed_total_is_exact() {
        let m = full(500, 4).with_masked(&[(3, 3), (4, 3)]).unwrap();
        let (out, rec) = inject_mixed(&m, 0.4, 6, 24, 2).unwrap();
        assert_eq!(rec.cells.len(), target_count(0.4, 1998));
        assert_eq!(out.observed_count(), 1998 - rec.cells.len());
    }

    #[test]
    fn record_json_shape() {
        let rec = InjectionRecord {
            seed: 7,
            regime: Regime::Random { fraction: 0.25 },
            cells: vec![(0, 1), (3, 0)],
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"seed":7,"regime":{"kind":"random","fraction":0.25},"cells":[[0,1],[3,0]]}"#
        );
        assert_eq!(serde_json::from_str::<InjectionRecord>(&json).unwrap(), rec);
    }
}
