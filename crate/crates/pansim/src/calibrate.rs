//! Grid search for propagation constants and stationary positions that
//! reproduce target coverage gaps.

use std::thread;

use pansim_core::coverage::{complement, line_footprints, pairwise_overlaps, union, Anchor, CellGrid, Interval};
use pansim_core::{PhyParams, Placement, SimConfig};

use crate::experiments::{anchors, mobile_geometry};

/// What the calibrated network has to show.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// Gap intervals at `gap_power`, metres.
    pub gaps: Vec<(f64, f64)>,
    pub gap_power: f64,
    /// Lowest level that must be gap-free.
    pub gap_free_power: f64,
    /// Largest allowed error per gap boundary, metres.
    pub tolerance: f64,
    /// Report resolution used for visibility checks.
    pub cell: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Targets { gaps: vec![(2.0, 4.0), (11.0, 13.0)], gap_power: 0.0, gap_free_power: 4.0, tolerance: 0.5, cell: 0.1 }
    }
}

/// Parameter ranges as `(start, stop, step)`, inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub exponent: (f64, f64, f64),
    pub pl0: (f64, f64, f64),
    pub sensitivity: (f64, f64, f64),
    pub position: (f64, f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            exponent: (1.5, 6.0, 0.1),
            pl0: (30.0, 70.0, 1.0),
            sensitivity: (-100.0, -70.0, 1.0),
            position: (-3.0, 18.0, 0.5),
        }
    }
}

fn steps((start, stop, step): (f64, f64, f64)) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    // values are rebuilt from integers so that 3.5 is exactly 3.5
    (0..=n).map(|i| ((start + i as f64 * step) * 1e6).round() / 1e6).collect()
}

/// One parameter set and how well it meets the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub path_loss_exponent: f64,
    pub pl0: f64,
    pub rx_sensitivity: f64,
    /// Stationary x positions in anchor order.
    pub positions: Vec<f64>,
    /// Achieved gaps at the target power.
    pub achieved: Vec<Interval>,
    /// Absolute error per boundary, in target order (start, end, start, end, ...).
    pub errors: Vec<f64>,
    /// Unmet structural requirements, empty when feasible.
    pub violations: Vec<String>,
}

impl Candidate {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    fn sum_error(&self) -> f64 {
        self.errors.iter().sum()
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.violations.is_empty() && self.max_error() <= tol + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub targets: Targets,
    /// Best candidate found (or the supplied one when it already fits).
    pub best: Option<Candidate>,
    /// The supplied parameters already met the targets and were kept.
    pub identity: bool,
    pub evaluated: u64,
}

impl Calibration {
    pub fn feasible(&self) -> bool {
        self.best.as_ref().is_some_and(|c| c.feasible(self.targets.tolerance))
    }
}

struct Geometry {
    anchors: Vec<Anchor>,
    gain: f64,
    y: f64,
    lo: f64,
    hi: f64,
    levels: Vec<f64>,
}

fn geometry(base: &SimConfig) -> Option<Geometry> {
    let (_, gain, (lo, hi), y) = mobile_geometry(base)?;
    let mut levels = base.phy.levels.clone();
    levels.sort_by(f64::total_cmp);
    Some(Geometry { anchors: anchors(base), gain, y, lo, hi, levels })
}

fn cell_has(grid: &CellGrid, ivs: &[Interval]) -> bool {
    (0..grid.count).any(|k| ivs.iter().any(|iv| iv.start < grid.center(k) && grid.center(k) < iv.end))
}

/// Score one parameter set. Returns `None` when the gap count at the target
/// power is wrong, which no boundary error can describe.
fn evaluate(phy: &PhyParams, g: &Geometry, anchors: &[Anchor], t: &Targets) -> Option<Candidate> {
    let gaps_at = |p: f64| {
        let fp = line_footprints(phy, anchors, g.y, g.gain, p);
        let covered = union(fp.iter().map(|f| f.1).collect());
        (complement(&covered, g.lo, g.hi), fp)
    };
    let (achieved, _) = gaps_at(t.gap_power);
    if achieved.len() != t.gaps.len() {
        return None;
    }
    let errors: Vec<f64> = achieved
        .iter()
        .zip(&t.gaps)
        .flat_map(|(a, (s, e))| [(a.start - s).abs(), (a.end - e).abs()])
        .collect();
    let mut cand = Candidate {
        path_loss_exponent: phy.path_loss_exponent,
        pl0: phy.pl0,
        rx_sensitivity: phy.rx_sensitivity,
        positions: anchors.iter().map(|a| a.x).collect(),
        achieved,
        errors,
        violations: Vec::new(),
    };
    if cand.max_error() > t.tolerance + 1e-9 {
        return Some(cand);
    }
    let grid = CellGrid::new(g.lo, g.hi, t.cell);
    for &p in &g.levels {
        let (gaps, fp) = gaps_at(p);
        let overlaps = pairwise_overlaps(&fp);
        if p < t.gap_free_power && !cell_has(&grid, &gaps) {
            cand.violations.push(format!("no visible gap at {p} dBm"));
        }
        if p >= t.gap_free_power && !gaps.is_empty() {
            cand.violations.push(format!("gap at {p} dBm"));
        }
        if p == t.gap_free_power && cell_has(&grid, &overlaps) {
            cand.violations.push(format!("visible overlap at {p} dBm"));
        }
        if p > t.gap_free_power && !cell_has(&grid, &overlaps) {
            cand.violations.push(format!("no visible overlap at {p} dBm"));
        }
    }
    Some(cand)
}

/// Total order on candidates: feasibility, violation count, worst and total
/// boundary error, then closeness to the supplied constants, then position.
/// Being total, the winner does not depend on how the search is split.
fn better(a: &Candidate, b: &Candidate, reference: &PhyParams, tol: f64) -> bool {
    let k = |c: &Candidate| c.pl0 + c.rx_sensitivity;
    let k_ref = reference.pl0 + reference.rx_sensitivity;
    (!a.feasible(tol), a.violations.len())
        .cmp(&(!b.feasible(tol), b.violations.len()))
        .then(a.max_error().total_cmp(&b.max_error()))
        .then(a.sum_error().total_cmp(&b.sum_error()))
        .then(
            (a.path_loss_exponent - reference.path_loss_exponent)
                .abs()
                .total_cmp(&(b.path_loss_exponent - reference.path_loss_exponent).abs()),
        )
        .then((k(a) - k_ref).abs().total_cmp(&(k(b) - k_ref).abs()))
        .then(a.path_loss_exponent.total_cmp(&b.path_loss_exponent))
        .then(k(a).total_cmp(&k(b)))
        .then(a.positions.iter().zip(&b.positions).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
        .is_lt()
}

fn with_positions(anchors: &[Anchor], xs: &[f64]) -> Vec<Anchor> {
    anchors.iter().zip(xs).map(|(a, &x)| Anchor { x, ..*a }).collect()
}

/// Sorted position tuples of length `k` from `grid`.
fn position_tuples(grid: &[f64], k: usize) -> Vec<Vec<f64>> {
    fn rec(grid: &[f64], from: usize, k: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in from..grid.len() {
            cur.push(grid[i]);
            rec(grid, i + 1, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(grid, 0, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// One grid to search: exponents, `(pl0 + sensitivity, pl0, sensitivity)`
/// triples and sorted position tuples.
struct Grid {
    exponents: Vec<f64>,
    sums: Vec<(f64, f64, f64)>,
    tuples: Vec<Vec<f64>>,
}

impl Grid {
    fn size(&self) -> usize {
        self.exponents.len() * self.sums.len() * self.tuples.len()
    }
}

/// Distinct `pl0 + sensitivity` values, each mapped to the pair whose
/// sensitivity is closest to `supplied`, sorted by the sum.
fn link_sums(space: &SearchSpace, supplied: f64) -> Vec<(f64, f64, f64)> {
    let mut sums: Vec<(f64, f64, f64)> = Vec::new();
    for &p in &steps(space.pl0) {
        for &s in &steps(space.sensitivity) {
            let k = ((p + s) * 1e6).round() / 1e6;
            match sums.iter_mut().find(|e| e.0 == k) {
                Some(e) if (s - supplied).abs() < (e.2 - supplied).abs() => *e = (k, p, s),
                Some(_) => {}
                None => sums.push((k, p, s)),
            }
        }
    }
    sums.sort_by(|a, b| a.0.total_cmp(&b.0));
    sums
}

fn pick(best: &mut Option<Candidate>, c: Option<Candidate>, reference: &PhyParams, tol: f64) {
    if let Some(c) = c {
        if best.as_ref().is_none_or(|b| better(&c, b, reference, tol)) {
            *best = Some(c);
        }
    }
}

fn search(base: &SimConfig, g: &Geometry, targets: &Targets, grid: &Grid) -> (Option<Candidate>, u64) {
    let tol = targets.tolerance;
    let workers = thread::available_parallelism().map_or(4, |n| n.get()).min(grid.exponents.len().max(1));
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    let mut best = None;
                    let mut evaluated = 0u64;
                    for n in grid.exponents.iter().skip(w).step_by(workers) {
                        for &(_, pl0, sens) in &grid.sums {
                            let phy = PhyParams { path_loss_exponent: *n, pl0, rx_sensitivity: sens, ..base.phy.clone() };
                            for xs in &grid.tuples {
                                evaluated += 1;
                                let c = evaluate(&phy, g, &with_positions(&g.anchors, xs), targets);
                                pick(&mut best, c, &base.phy, tol);
                            }
                        }
                    }
                    (best, evaluated)
                })
            })
            .collect();
        let mut best = None;
        let mut evaluated = 0;
        for h in handles {
            let (c, e) = h.join().expect("calibration worker panicked");
            evaluated += e;
            pick(&mut best, c, &base.phy, tol);
        }
        (best, evaluated)
    })
}

const COARSE_EXPONENT: usize = 5;
const COARSE_SUM: usize = 5;
const COARSE_POSITION: usize = 3;

fn coarse_grid(space: &SearchSpace, sums: &[(f64, f64, f64)], anchors: usize) -> Grid {
    let (a, b, step) = space.exponent;
    let (pa, pb, pstep) = space.position;
    Grid {
        exponents: steps((a, b, step * COARSE_EXPONENT as f64)),
        sums: sums.iter().step_by(COARSE_SUM).copied().collect(),
        tuples: position_tuples(&steps((pa, pb, pstep * COARSE_POSITION as f64)), anchors),
    }
}

/// Full-resolution neighbourhood of `c`, one coarse step either side.
fn fine_grid(space: &SearchSpace, sums: &[(f64, f64, f64)], c: &Candidate) -> Grid {
    let near = |v: f64, centre: f64, reach: f64| (v - centre).abs() <= reach + 1e-9;
    let exponents =
        steps(space.exponent).into_iter().filter(|n| near(*n, c.path_loss_exponent, space.exponent.2 * COARSE_EXPONENT as f64)).collect();
    let k = c.pl0 + c.rx_sensitivity;
    let i = sums.iter().position(|e| (e.0 - k).abs() < 1e-6).unwrap_or(0);
    let sums = sums[i.saturating_sub(COARSE_SUM)..(i + COARSE_SUM + 1).min(sums.len())].to_vec();
    let all = steps(space.position);
    let reach = space.position.2 * COARSE_POSITION as f64;
    let mut tuples: Vec<Vec<f64>> = vec![Vec::new()];
    for &x in &c.positions {
        let options: Vec<f64> = all.iter().copied().filter(|v| near(*v, x, reach)).collect();
        let mut next = Vec::new();
        for t in &tuples {
            for &v in options.iter().filter(|v| t.last().is_none_or(|l| l < *v)) {
                let mut n = t.clone();
                n.push(v);
                next.push(n);
            }
        }
        tuples = next;
    }
    Grid { exponents, sums, tuples }
}

/// Search for parameters meeting `targets`. Only `pl0 + rx_sensitivity`
/// affects range, so each sum is evaluated once and mapped back to the pair
/// whose sensitivity is closest to the supplied one.
///
/// A coarse pass is refined at full resolution around its best candidate;
/// if that does not meet the targets the full grid is searched.
pub fn calibrate(base: &SimConfig, targets: &Targets, space: &SearchSpace) -> Calibration {
    let Some(g) = geometry(base) else {
        return Calibration { targets: targets.clone(), best: None, identity: false, evaluated: 0 };
    };
    if let Some(c) = evaluate(&base.phy, &g, &g.anchors, targets) {
        if c.feasible(targets.tolerance) {
            return Calibration { targets: targets.clone(), best: Some(c), identity: true, evaluated: 1 };
        }
    }
    let tol = targets.tolerance;
    let sums = link_sums(space, base.phy.rx_sensitivity);
    let full = Grid {
        exponents: steps(space.exponent),
        sums: sums.clone(),
        tuples: position_tuples(&steps(space.position), g.anchors.len()),
    };
    let coarse = coarse_grid(space, &sums, g.anchors.len());
    let (mut best, mut evaluated) = (None, 0);
    if coarse.size() < full.size() {
        let (c, e) = search(base, &g, targets, &coarse);
        evaluated += e;
        if let Some(c) = c {
            let (f, e) = search(base, &g, targets, &fine_grid(space, &sums, &c));
            evaluated += e;
            pick(&mut best, Some(c), &base.phy, tol);
            pick(&mut best, f, &base.phy, tol);
        }
    }
    if !best.as_ref().is_some_and(|b| b.feasible(tol)) {
        let (c, e) = search(base, &g, targets, &full);
        evaluated += e;
        pick(&mut best, c, &base.phy, tol);
    }
    Calibration { targets: targets.clone(), best, identity: false, evaluated }
}

/// Write a candidate's constants and positions into a configuration.
pub fn apply(base: &SimConfig, c: &Candidate) -> SimConfig {
    let mut cfg = base.clone();
    cfg.phy.path_loss_exponent = c.path_loss_exponent;
    cfg.phy.pl0 = c.pl0;
    cfg.phy.rx_sensitivity = c.rx_sensitivity;
    let ids: Vec<u16> = anchors(base).iter().map(|a| a.id).collect();
    for n in &mut cfg.nodes {
        if let Some(i) = ids.iter().position(|id| *id == n.id) {
            if let Placement::Fixed { x, .. } = &mut n.placement {
                *x = c.positions[i];
            }
        }
    }
    cfg
}
