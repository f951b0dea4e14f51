//! Static coverage along a straight path: which stationary nodes a mobile at
//! a given x can exchange frames with, and the gap / overlap intervals that
//! follow from it. No MAC is involved.

use alloc::vec::Vec;

use crate::mac::NodeId;
use crate::phy::{link_rx_power, PhyParams, Radio};

/// Default report resolution, metres.
pub const CELL_M: f64 = 0.1;

/// Half-open interval `[start, end)` in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.start && x < self.end
    }
}

/// A stationary node as seen by the coverage analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub gain: f64,
}

/// Regular grid of cells over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGrid {
    pub lo: f64,
    pub cell: f64,
    pub count: usize,
}

impl CellGrid {
    pub fn new(lo: f64, hi: f64, cell: f64) -> Self {
        let count = libm::round((hi - lo) / cell).max(0.0) as usize;
        CellGrid { lo, cell, count }
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.cell
    }

    pub fn edge(&self, k: usize) -> f64 {
        // rounding keeps edges on the decimal grid (2.0 rather than 1.9999999)
        let e = self.lo + k as f64 * self.cell;
        libm::round(e * 1e6) / 1e6
    }

    /// Cell containing `x`, if inside the grid.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        if x < self.lo {
            return None;
        }
        let k = libm::floor((x - self.lo) / self.cell + 1e-9) as usize;
        (k < self.count).then_some(k)
    }
}

/// Merge runs of flagged cells into intervals.
pub fn merge_cells(grid: &CellGrid, flags: &[bool]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut start = None;
    for k in 0..=flags.len() {
        let on = flags.get(k).copied().unwrap_or(false);
        match (on, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push(Interval::new(grid.edge(s), grid.edge(k)));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Stationary nodes with a two-way link to a mobile at `pos`, both ends
/// sending at `power`.
pub fn reachable(phy: &PhyParams, anchors: &[Anchor], pos: (f64, f64), mobile_gain: f64, power: f64) -> Vec<NodeId> {
    let me = Radio { position: pos, antenna_gain: mobile_gain };
    anchors
        .iter()
        .filter(|a| {
            let them = Radio { position: (a.x, a.y), antenna_gain: a.gain };
            link_rx_power(me, them, power, phy) > phy.rx_sensitivity
                && link_rx_power(them, me, power, phy) > phy.rx_sensitivity
        })
        .map(|a| a.id)
        .collect()
}

/// Per-cell reachability along the line `y = y` over `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticCoverage {
    pub grid: CellGrid,
    pub power: f64,
    pub cells: Vec<Vec<NodeId>>,
}

impl StaticCoverage {
    pub fn sample(phy: &PhyParams, anchors: &[Anchor], grid: CellGrid, y: f64, mobile_gain: f64, power: f64) -> Self {
        let cells = (0..grid.count).map(|k| reachable(phy, anchors, (grid.center(k), y), mobile_gain, power)).collect();
        StaticCoverage { grid, power, cells }
    }

    pub fn gaps(&self) -> Vec<Interval> {
        let flags: Vec<bool> = self.cells.iter().map(|c| c.is_empty()).collect();
        merge_cells(&self.grid, &flags)
    }

    pub fn overlaps(&self) -> Vec<Interval> {
        let flags: Vec<bool> = self.cells.iter().map(|c| c.len() >= 2).collect();
        merge_cells(&self.grid, &flags)
    }

    /// Segments served by each node when the mobile keeps its parent until it
    /// goes out of reach and then picks the lowest-id reachable node.
    pub fn association(&self) -> Vec<(Interval, NodeId)> {
        let mut out: Vec<(Interval, NodeId)> = Vec::new();
        let mut parent: Option<NodeId> = None;
        for (k, cell) in self.cells.iter().enumerate() {
            if parent.is_none_or(|p| !cell.contains(&p)) {
                parent = cell.iter().copied().min();
            }
            let Some(p) = parent else { continue };
            match out.last_mut() {
                Some((iv, id)) if *id == p && iv.end == self.grid.edge(k) => iv.end = self.grid.edge(k + 1),
                _ => out.push((Interval::new(self.grid.edge(k), self.grid.edge(k + 1)), p)),
            }
        }
        out
    }
}

/// Every point of `inner` lies in `outer`, compared on `grid` cell centres.
pub fn is_subset(inner: &[Interval], outer: &[Interval], grid: &CellGrid) -> bool {
    (0..grid.count).map(|k| grid.center(k)).all(|x| {
        !inner.iter().any(|i| i.contains(x)) || outer.iter().any(|o| o.contains(x))
    })
}

/// Open x-intervals on the line `y = y` covered by each anchor at `power`,
/// computed in closed form from the range.
pub fn line_footprints(phy: &PhyParams, anchors: &[Anchor], y: f64, mobile_gain: f64, power: f64) -> Vec<(NodeId, Interval)> {
    anchors
        .iter()
        .filter_map(|a| {
            let r = phy.range_m(power, a.gain, mobile_gain);
            let dy = a.y - y;
            let half = r * r - dy * dy;
            (half > 0.0).then(|| {
                let h = libm::sqrt(half);
                (a.id, Interval::new(a.x - h, a.x + h))
            })
        })
        .collect()
}

/// Sorted, merged union of intervals.
pub fn union(mut ivs: Vec<Interval>) -> Vec<Interval> {
    ivs.retain(|i| !i.is_empty());
    ivs.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut out: Vec<Interval> = Vec::new();
    for iv in ivs {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

/// Parts of `[lo, hi]` not covered by `covered` (which must be a union).
pub fn complement(covered: &[Interval], lo: f64, hi: f64) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut cursor = lo;
    for iv in covered {
        if iv.start > cursor {
            out.push(Interval::new(cursor, iv.start.min(hi)));
        }
        cursor = cursor.max(iv.end);
        if cursor >= hi {
            break;
        }
    }
    if cursor < hi {
        out.push(Interval::new(cursor, hi));
    }
    out.retain(|i| !i.is_empty());
    out
}

/// Intervals where at least two footprints intersect.
pub fn pairwise_overlaps(footprints: &[(NodeId, Interval)]) -> Vec<Interval> {
    let mut out = Vec::new();
    for (i, (_, a)) in footprints.iter().enumerate() {
        for (_, b) in &footprints[i + 1..] {
            let iv = Interval::new(a.start.max(b.start), a.end.min(b.end));
            if !iv.is_empty() {
                out.push(iv);
            }
        }
    }
    union(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn anchors() -> Vec<Anchor> {
        vec![
            Anchor { id: 1, x: -1.5, y: 0.0, gain: 0.0 },
            Anchor { id: 2, x: 7.5, y: 0.0, gain: 0.0 },
            Anchor { id: 3, x: 16.5, y: 0.0, gain: 0.0 },
        ]
    }

    #[test]
    fn grid_edges_are_decimal() {
        let g = CellGrid::new(0.0, 15.0, CELL_M);
        assert_eq!(g.count, 150);
        assert_eq!(g.edge(20), 2.0);
        assert_eq!(g.index_of(2.0), Some(20));
        assert_eq!(g.index_of(15.0), None);
        assert!((g.center(0) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn merge_runs() {
        let g = CellGrid::new(0.0, 1.0, 0.1);
        let mut f = vec![false; 10];
        f[2] = true;
        f[3] = true;
        f[9] = true;
        assert_eq!(merge_cells(&g, &f), vec![Interval::new(0.2, 0.4), Interval::new(0.9, 1.0)]);
    }

    #[test]
    fn default_layout_gaps_at_zero_dbm() {
        let phy = PhyParams::default();
        let cov = StaticCoverage::sample(&phy, &anchors(), CellGrid::new(0.0, 15.0, CELL_M), 0.0, 0.0, 0.0);
        assert_eq!(cov.gaps(), vec![Interval::new(2.0, 4.0), Interval::new(11.0, 13.0)]);
        assert!(cov.overlaps().is_empty());
        let assoc = cov.association();
        assert_eq!(assoc.iter().map(|a| a.1).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn four_dbm_is_gap_free_without_visible_overlap() {
        let phy = PhyParams::default();
        let g = CellGrid::new(0.0, 15.0, CELL_M);
        let cov = StaticCoverage::sample(&phy, &anchors(), g, 0.0, 0.0, 4.0);
        assert!(cov.gaps().is_empty());
        assert!(cov.overlaps().is_empty());
        let cov5 = StaticCoverage::sample(&phy, &anchors(), g, 0.0, 0.0, 5.0);
        assert!(!cov5.overlaps().is_empty());
    }

    #[test]
    fn footprints_match_sampling() {
        let phy = PhyParams::default();
        let fp = line_footprints(&phy, &anchors(), 0.0, 0.0, 0.0);
        let gaps = complement(&union(fp.iter().map(|f| f.1).collect()), 0.0, 15.0);
        assert_eq!(gaps.len(), 2);
        assert!((gaps[0].start - 1.99).abs() < 0.01 && (gaps[0].end - 4.01).abs() < 0.01);
        assert!(pairwise_overlaps(&fp).is_empty());
    }

    #[test]
    fn subset_on_grid() {
        let g = CellGrid::new(0.0, 15.0, CELL_M);
        let big = [Interval::new(2.0, 4.0)];
        let small = [Interval::new(2.5, 3.5)];
        assert!(is_subset(&small, &big, &g));
        assert!(!is_subset(&big, &small, &g));
        assert!(is_subset(&[], &small, &g));
    }

    #[test]
    fn complement_and_union() {
        let u = union(vec![Interval::new(3.0, 5.0), Interval::new(0.0, 1.0), Interval::new(4.0, 6.0)]);
        assert_eq!(u, vec![Interval::new(0.0, 1.0), Interval::new(3.0, 6.0)]);
        assert_eq!(complement(&u, 0.0, 10.0), vec![Interval::new(1.0, 3.0), Interval::new(6.0, 10.0)]);
        assert!(complement(&u, 0.0, 0.5).is_empty());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn more_power_never_adds_gaps(
            xs in proptest::collection::vec(-3.0f64..18.0, 1..4),
            lo in 0usize..6, hi in 0usize..6,
        ) {
            let phy = PhyParams::default();
            let levels = phy.levels.clone();
            let (p1, p2) = (levels[lo.min(hi)], levels[lo.max(hi)]);
            let anchors: Vec<Anchor> = xs.iter().enumerate().map(|(i, &x)| Anchor { id: i as u16 + 1, x, y: 0.0, gain: 0.0 }).collect();
            let g = CellGrid::new(0.0, 15.0, CELL_M);
            let weak = StaticCoverage::sample(&phy, &anchors, g, 0.0, 0.0, p1).gaps();
            let strong = StaticCoverage::sample(&phy, &anchors, g, 0.0, 0.0, p2).gaps();
            prop_assert!(is_subset(&strong, &weak, &g));
        }
    }
}
