//! Map quality criteria: spatial deviation, level error, resolution,
//! main-to-side-lobe ratio (MSR) and source-to-pattern ratio (SPR).
//!
//! Levels are `10·log10` of the linear map values. Connected regions use
//! 8-connectivity on the focus grid.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::beamform::{argmax, to_db, SourceMap};
use crate::geometry::Vec3;
use crate::scalar::{power_db, Real};
use crate::scene::FocusGrid;

/// Default MSR threshold decrement in dB.
pub const DEFAULT_STEP_DB: f64 = 0.1;
/// Depth below the map maximum at which the MSR search gives up.
pub const MSR_SEARCH_DEPTH_DB: f64 = 60.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty map")]
    EmptyMap,
    #[error("focus index {index} out of range for {n_focus} focus points")]
    IndexOutOfRange { index: usize, n_focus: usize },
    #[error("mask selects no focus points")]
    EmptyMask,
    #[error("MSR step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("frequency axes differ between source positions: {0}")]
    AxisMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Flag {
    /// All map values are equal; the argmax is the tie-broken first point.
    Degenerate,
    /// The main-lobe contour reaches the grid boundary.
    ContourClipped,
    /// No side lobe down to the search depth.
    MsrNotFound,
    /// Map value at the source is not positive; level error and SPR are
    /// undefined.
    NonpositiveSource,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Degenerate => "DEGENERATE",
            Flag::ContourClipped => "CONTOUR_CLIPPED",
            Flag::MsrNotFound => "MSR_NOT_FOUND",
            Flag::NonpositiveSource => "NONPOSITIVE_SOURCE",
        }
    }
}

fn check_index<T>(values: &[T], index: usize) -> Result<(), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyMap);
    }
    if index >= values.len() {
        return Err(MetricsError::IndexOutOfRange {
            index,
            n_focus: values.len(),
        });
    }
    Ok(())
}

/// Distance from the map maximum to `source`. Flags `Degenerate` when every
/// value is equal.
pub fn spatial_deviation<T: Real>(map: &SourceMap<T>, source: Vec3<T>) -> Result<(T, Option<Flag>), MetricsError> {
    if map.values.is_empty() {
        return Err(MetricsError::EmptyMap);
    }
    let first = map.values[0];
    let flag = map.values.iter().all(|&v| v == first).then_some(Flag::Degenerate);
    Ok((map.grid.point(map.argmax()).distance(source), flag))
}

/// `10·log10(A(y_s)) − 10·log10(true_power)`. A nonpositive source value
/// yields NaN and `NonpositiveSource`.
pub fn level_error<T: Real>(
    map: &SourceMap<T>,
    source_index: usize,
    true_power: T,
) -> Result<(T, Option<Flag>), MetricsError> {
    check_index(&map.values, source_index)?;
    let a = map.values[source_index];
    if !(a > T::zero()) {
        return Ok((T::nan(), Some(Flag::NonpositiveSource)));
    }
    Ok((power_db(a) - power_db(true_power), None))
}

fn neighbours<T: Real>(grid: &FocusGrid<T>, index: usize) -> impl Iterator<Item = usize> + '_ {
    let (i, j) = (index % grid.nx, index / grid.nx);
    (-1isize..=1)
        .flat_map(|dj| (-1isize..=1).map(move |di| (di, dj)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(di, dj)| {
            let (ni, nj) = (i as isize + di, j as isize + dj);
            (ni >= 0 && nj >= 0 && (ni as usize) < grid.nx && (nj as usize) < grid.ny)
                .then(|| nj as usize * grid.nx + ni as usize)
        })
}

/// Cells connected to `seed` whose level satisfies `keep`.
fn flood<T: Real>(grid: &FocusGrid<T>, seed: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::from([seed]);
    seen[seed] = true;
    while let Some(n) = queue.pop_front() {
        out.push(n);
        for k in neighbours(grid, n) {
            if !seen[k] && keep(k) {
                seen[k] = true;
                queue.push_back(k);
            }
        }
    }
    out
}

/// Main-lobe width `b`: twice the largest distance from `max_index` to a
/// point of its connected region at or above `L_max − 1 dB`. Flags
/// `ContourClipped` when that region touches the grid boundary.
pub fn resolution<T: Real>(map: &SourceMap<T>, max_index: usize) -> Result<(T, Option<Flag>), MetricsError> {
    check_index(&map.values, max_index)?;
    let grid = &map.grid;
    let db = map.values_db();
    let threshold = db[max_index] - T::one();
    let region = flood(grid, max_index, |k| db[k] >= threshold);
    let centre = grid.point(max_index);
    let reach = region
        .iter()
        .map(|&n| grid.point(n).distance(centre))
        .fold(T::zero(), T::max);
    let clipped = region.iter().any(|&n| grid.is_boundary(n));
    Ok((reach + reach, clipped.then_some(Flag::ContourClipped)))
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// Outcome of the side-lobe search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsrResult<T> {
    /// `L_s − L_SL`, or `L_s − (L_max − 60 dB)` when no side lobe was found.
    pub msr: T,
    /// Level of the highest side lobe, if found.
    pub side_lobe_db: Option<T>,
    pub flag: Option<Flag>,
}

fn msr_thresholds<T: Real>(l_max: T, step_db: T) -> impl Iterator<Item = T> {
    let floor = l_max - T::lit(MSR_SEARCH_DEPTH_DB);
    (0usize..)
        .map(move |k| l_max - T::from_usize_lossy(k) * step_db)
        .take_while(move |&t| t >= floor)
}

fn source_in_main_lobe<T: Real>(map: &SourceMap<T>, db: &[T], top: usize, source_index: usize) -> bool {
    let l_s = db[source_index];
    flood(&map.grid, top, |k| db[k] >= l_s).contains(&source_index)
}

fn check_step<T: Real>(step_db: T) -> Result<(), MetricsError> {
    if !(step_db > T::zero()) || !step_db.is_finite() {
        return Err(MetricsError::InvalidStep(step_db.to_f64_lossy()));
    }
    Ok(())
}

fn msr_outcome<T: Real>(l_s: T, l_max: T, side: Option<T>) -> MsrResult<T> {
    match side {
        Some(l_sl) => MsrResult {
            msr: l_s - l_sl,
            side_lobe_db: Some(l_sl),
            flag: None,
        },
        None => MsrResult {
            msr: l_s - (l_max - T::lit(MSR_SEARCH_DEPTH_DB)),
            side_lobe_db: None,
            flag: Some(Flag::MsrNotFound),
        },
    }
}

/// Main-to-side-lobe ratio. The threshold descends from `L_max` in steps of
/// `step_db`; the first connected region above threshold that does not
/// contain the map maximum is the highest side lobe, and its peak level is
/// `L_SL`. The ratio is taken against the level at the source.
///
/// When the source is not in the main lobe (not connected to the maximum
/// through cells at or above `L_s`), the highest lobe other than the
/// source's own is the main lobe, so `L_SL = L_max` and the ratio is
/// negative.
pub fn msr<T: Real>(map: &SourceMap<T>, source_index: usize, step_db: T) -> Result<MsrResult<T>, MetricsError> {
    check_index(&map.values, source_index)?;
    check_step(step_db)?;
    let grid = &map.grid;
    let db = map.values_db();
    let top = argmax(&map.values);
    let l_max = db[top];
    if !source_in_main_lobe(map, &db, top, source_index) {
        return Ok(msr_outcome(db[source_index], l_max, Some(l_max)));
    }

    // Cells in descending level order, lowest index first among equals.
    let mut order: Vec<usize> = (0..db.len()).filter(|&n| db[n].is_finite()).collect();
    order.sort_by(|&a, &b| db[b].partial_cmp(&db[a]).expect("finite levels").then(a.cmp(&b)));

    let mut uf = UnionFind::new(db.len());
    let mut active = vec![false; db.len()];
    let mut added = 0;
    let mut side = None;
    for t in msr_thresholds(l_max, step_db) {
        while added < order.len() && db[order[added]] >= t {
            let n = order[added];
            active[n] = true;
            for k in neighbours(grid, n) {
                if active[k] {
                    uf.union(n, k);
                }
            }
            added += 1;
        }
        let root = uf.find(top);
        if uf.size[root] < added {
            // Highest active cell outside the main region.
            side = order[..added]
                .iter()
                .copied()
                .find(|&n| uf.find(n) != root)
                .map(|n| db[n]);
            break;
        }
    }
    Ok(msr_outcome(db[source_index], l_max, side))
}

/// Reference MSR by flood fill at every threshold. Quadratic; used to check
/// [`msr`].
pub fn msr_naive<T: Real>(map: &SourceMap<T>, source_index: usize, step_db: T) -> Result<MsrResult<T>, MetricsError> {
    check_index(&map.values, source_index)?;
    check_step(step_db)?;
    let grid = &map.grid;
    let db = map.values_db();
    let top = argmax(&map.values);
    let l_max = db[top];
    if !source_in_main_lobe(map, &db, top, source_index) {
        return Ok(msr_outcome(db[source_index], l_max, Some(l_max)));
    }
    let mut side = None;
    for t in msr_thresholds(l_max, step_db) {
        let main = flood(grid, top, |k| db[k] >= t);
        let mut in_main = vec![false; db.len()];
        main.iter().for_each(|&n| in_main[n] = true);
        let outside = (0..db.len())
            .filter(|&n| db[n] >= t && !in_main[n])
            .max_by(|&a, &b| db[a].partial_cmp(&db[b]).expect("finite levels").then(b.cmp(&a)));
        if let Some(n) = outside {
            side = Some(db[n]);
            break;
        }
    }
    Ok(msr_outcome(db[source_index], l_max, side))
}

/// `10·log10(A(y_s) / mean(A))` with the mean over the grid's selected
/// points, the source included.
pub fn spr<T: Real>(map: &SourceMap<T>, source_index: usize) -> Result<(T, Option<Flag>), MetricsError> {
    check_index(&map.values, source_index)?;
    let selected: Vec<T> = (0..map.values.len())
        .filter(|&n| map.grid.is_selected(n))
        .map(|n| map.values[n])
        .collect();
    if selected.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let a = map.values[source_index];
    if !(a > T::zero()) {
        return Ok((T::nan(), Some(Flag::NonpositiveSource)));
    }
    let mean = selected.iter().copied().sum::<T>() / T::from_usize_lossy(selected.len());
    Ok((to_db(a / mean), None))
}

/// All criteria for one map and one source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapCriteria<T> {
    pub frequency: T,
    pub source_index: usize,
    pub spatial_deviation: T,
    pub level_error: T,
    pub resolution_b: T,
    pub msr: T,
    pub spr: T,
    pub flags: Vec<Flag>,
}

impl<T: Real> MapCriteria<T> {
    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Evaluates every criterion for a map whose true source sits at grid point
/// `source_index` with power `true_power`.
pub fn evaluate_map<T: Real>(
    map: &SourceMap<T>,
    source_index: usize,
    true_power: T,
    step_db: T,
) -> Result<MapCriteria<T>, MetricsError> {
    check_index(&map.values, source_index)?;
    let mut flags = Vec::new();
    let mut note = |f: Option<Flag>| {
        if let Some(f) = f {
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
    };
    let (dev, f) = spatial_deviation(map, map.grid.point(source_index))?;
    note(f);
    let (level, f) = level_error(map, source_index, true_power)?;
    note(f);
    let (b, f) = resolution(map, map.argmax())?;
    note(f);
    let m = msr(map, source_index, step_db)?;
    note(m.flag);
    let (s, f) = spr(map, source_index)?;
    note(f);
    flags.sort();
    Ok(MapCriteria {
        frequency: map.frequency,
        source_index,
        spatial_deviation: dev,
        level_error: level,
        resolution_b: b,
        msr: m.msr,
        spr: s,
        flags,
    })
}

/// Per-frequency means over source positions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateCriteria<T> {
    pub frequency: T,
    pub n_positions: usize,
    /// `None` when every value was excluded.
    pub spatial_deviation: Option<T>,
    pub level_error: Option<T>,
    pub resolution_b: Option<T>,
    pub msr: Option<T>,
    pub spr: Option<T>,
    /// Number of positions carrying each flag.
    pub flag_counts: BTreeMap<Flag, usize>,
}

fn mean<T: Real>(values: impl Iterator<Item = T>) -> Option<T> {
    let (sum, n) = values
        .filter(|v| v.is_finite())
        .fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / T::from_usize_lossy(n))
}

/// Arithmetic means per frequency over source positions, each entry of
/// `per_position` holding one criteria list over the same frequency axis.
/// `MsrNotFound` excludes that position's MSR; `NonpositiveSource` excludes
/// its level error and SPR. Other flags are counted only.
pub fn aggregate<T: Real>(per_position: &[Vec<MapCriteria<T>>]) -> Result<Vec<AggregateCriteria<T>>, MetricsError> {
    let Some(first) = per_position.first() else {
        return Ok(Vec::new());
    };
    for (p, list) in per_position.iter().enumerate() {
        let same = list.len() == first.len()
            && list.iter().zip(first).all(|(a, b)| {
                (a.frequency - b.frequency).abs() <= T::lit(1e-9) * b.frequency.abs().max(T::one())
            });
        if !same {
            return Err(MetricsError::AxisMismatch(format!("position {p} differs from position 0")));
        }
    }
    Ok((0..first.len())
        .map(|q| {
            let at: Vec<&MapCriteria<T>> = per_position.iter().map(|list| &list[q]).collect();
            let mut flag_counts = BTreeMap::new();
            for c in &at {
                for &f in &c.flags {
                    *flag_counts.entry(f).or_insert(0) += 1;
                }
            }
            let ok_source = |c: &&&MapCriteria<T>| !c.has(Flag::NonpositiveSource);
            AggregateCriteria {
                frequency: first[q].frequency,
                n_positions: at.len(),
                spatial_deviation: mean(at.iter().map(|c| c.spatial_deviation)),
                level_error: mean(at.iter().filter(ok_source).map(|c| c.level_error)),
                resolution_b: mean(at.iter().map(|c| c.resolution_b)),
                msr: mean(at.iter().filter(|c| !c.has(Flag::MsrNotFound)).map(|c| c.msr)),
                spr: mean(at.iter().filter(ok_source).map(|c| c.spr)),
                flag_counts,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::Provenance;
    use crate::scene::build_focus_grid;
    use crate::steering::{Preset, SteeringParams};
    use std::sync::Arc;

    fn map(nx: usize, ny: usize, spacing: f64, values: Vec<f64>) -> SourceMap<f64> {
        let grid = build_focus_grid(
            Vec3::zero(),
            (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
            ((nx - 1) as f64 * spacing, (ny - 1) as f64 * spacing),
            spacing,
        )
        .unwrap();
        assert_eq!(grid.len(), values.len());
        SourceMap {
            frequency: 1000.0,
            values,
            grid: Arc::new(grid),
            params: SteeringParams::preset(Preset::I),
            provenance: Provenance::Freefield,
        }
    }

    fn db(level: f64) -> f64 {
        10f64.powf(level / 10.0)
    }

    #[test]
    fn spatial_deviation_examples() {
        let mut v = vec![0.0; 25];
        v[12] = 1.0;
        let m = map(5, 5, 0.01, v);
        assert_eq!(spatial_deviation(&m, m.grid.point(12)).unwrap(), (0.0, None));
        assert!((spatial_deviation(&m, m.grid.point(13)).unwrap().0 - 0.01).abs() < 1e-15);

        let mut v = vec![0.0; 100];
        v[4 * 10 + 3] = 1.0;
        let m = map(10, 10, 0.01, v);
        assert!((spatial_deviation(&m, Vec3::zero()).unwrap().0 - 0.05).abs() < 1e-12);

        let flat = map(2, 2, 0.1, vec![1.0; 4]);
        assert_eq!(spatial_deviation(&flat, flat.grid.point(3)).unwrap().1, Some(Flag::Degenerate));
    }

    #[test]
    fn level_error_examples() {
        let m = map(1, 2, 0.1, vec![2.0, 0.5]);
        assert!((level_error(&m, 0, 1.0).unwrap().0 - 3.0103).abs() < 1e-4);
        assert!((level_error(&m, 1, 1.0).unwrap().0 + 3.0103).abs() < 1e-4);
        let z = map(1, 2, 0.1, vec![0.0, 1.0]);
        let (v, f) = level_error(&z, 0, 1.0).unwrap();
        assert!(v.is_nan());
        assert_eq!(f, Some(Flag::NonpositiveSource));
    }

    #[test]
    fn resolution_examples() {
        let mut v = vec![0.0; 25];
        v[12] = 1.0;
        assert_eq!(resolution(&map(5, 5, 0.1, v.clone()), 12).unwrap(), (0.0, None));
        v[13] = 1.0;
        let (b, f) = resolution(&map(5, 5, 0.1, v), 12).unwrap();
        assert!((b - 0.2).abs() < 1e-12);
        assert_eq!(f, None);
        let mut v = vec![0.0; 9];
        v[0] = 1.0;
        assert_eq!(resolution(&map(3, 3, 0.1, v), 0).unwrap().1, Some(Flag::ContourClipped));
    }

    #[test]
    fn msr_examples() {
        // Main lobe at the centre, isolated cell at −5 dB.
        let mut v = vec![db(-80.0); 49];
        v[24] = 1.0;
        v[25] = db(-0.5);
        v[0] = db(-5.0);
        let m = map(7, 7, 0.1, v);
        let r = msr(&m, 24, 0.1).unwrap();
        assert!((r.msr - 5.0).abs() < 1e-12);
        assert_eq!(r.flag, None);
        assert_eq!(msr_naive(&m, 24, 0.1).unwrap(), r);

        // Monotone single lobe.
        let v: Vec<f64> = (0..25)
            .map(|n| {
                let (i, j) = ((n % 5) as f64 - 2.0, (n / 5) as f64 - 2.0);
                db(-(i * i + j * j))
            })
            .collect();
        let r = msr(&map(5, 5, 0.1, v), 12, 0.1).unwrap();
        assert_eq!(r.flag, Some(Flag::MsrNotFound));
        assert!((r.msr - 60.0).abs() < 1e-12);

        // Source in a −3 dB lobe, separate lobe at 0 dB.
        let mut v = vec![db(-80.0); 49];
        v[8] = db(-3.0);
        v[40] = 1.0;
        let r = msr(&map(7, 7, 0.1, v), 8, 0.1).unwrap();
        assert!((r.msr + 3.0).abs() < 1e-12);
    }

    #[test]
    fn spr_examples() {
        let mut v = vec![0.0; 100];
        v[0] = 1.0;
        assert!((spr(&map(10, 10, 0.1, v), 0).unwrap().0 - 20.0).abs() < 1e-12);
        assert!(spr(&map(10, 10, 0.1, vec![0.3; 100]), 5).unwrap().0.abs() < 1e-12);
        let mut v = vec![0.1; 100];
        v[0] = 1.0;
        let expected = 10.0 * (1.0f64 / 0.109).log10();
        assert!((spr(&map(10, 10, 0.1, v), 0).unwrap().0 - expected).abs() < 1e-12);
        assert!((expected - 9.63).abs() < 0.01);
    }

    #[test]
    fn spr_respects_mask() {
        let mut m = map(2, 2, 0.1, vec![1.0, 0.0, 7.0, 7.0]);
        let grid = (*m.grid).clone().with_mask(vec![true, true, false, false]).unwrap();
        m.grid = Arc::new(grid);
        assert!((spr(&m, 0).unwrap().0 - 10.0 * 2f64.log10()).abs() < 1e-12);
        let grid = (*m.grid).clone().with_mask(vec![false; 4]).unwrap();
        m.grid = Arc::new(grid);
        assert!(matches!(spr(&m, 0), Err(MetricsError::EmptyMask)));
    }

    fn criteria(f: f64, dev: f64, msr: f64, flags: Vec<Flag>) -> MapCriteria<f64> {
        MapCriteria {
            frequency: f,
            source_index: 0,
            spatial_deviation: dev,
            level_error: 0.0,
            resolution_b: 0.1,
            msr,
            spr: 10.0,
            flags,
        }
    }

    #[test]
    fn aggregate_examples() {
        let one = vec![vec![criteria(100.0, 0.02, 5.0, vec![])]];
        let agg = aggregate(&one).unwrap();
        assert_eq!(agg[0].spatial_deviation, Some(0.02));
        assert_eq!(agg[0].msr, Some(5.0));

        let two = vec![vec![criteria(100.0, 0.0, 5.0, vec![])], vec![criteria(100.0, 0.02, 5.0, vec![])]];
        assert!((aggregate(&two).unwrap()[0].spatial_deviation.unwrap() - 0.01).abs() < 1e-15);

        let four: Vec<_> = [(1.0, vec![]), (2.0, vec![]), (3.0, vec![]), (60.0, vec![Flag::MsrNotFound])]
            .into_iter()
            .map(|(m, f)| vec![criteria(100.0, 0.0, m, f)])
            .collect();
        let agg = aggregate(&four).unwrap();
        assert_eq!(agg[0].msr, Some(2.0));
        assert_eq!(agg[0].flag_counts.get(&Flag::MsrNotFound), Some(&1));

        let bad = vec![vec![criteria(100.0, 0.0, 1.0, vec![])], vec![criteria(200.0, 0.0, 1.0, vec![])]];
        assert!(matches!(aggregate(&bad), Err(MetricsError::AxisMismatch(_))));
    }
}
