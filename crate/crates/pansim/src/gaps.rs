//! Position-based coverage gaps recovered from a trace.

use std::collections::{BTreeMap, BTreeSet};

use pansim_core::coverage::{merge_cells, CellGrid, Interval};
use pansim_core::{CsmaOutcome, EventLabel, FrameKind, NodeId, TraceRecord};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GapError {
    #[error("trace has no rows with a position; cannot locate the mobile node")]
    NoPositions,
}

/// Nodes whose rows carry a position, i.e. the mobile nodes.
pub fn mobile_nodes(trace: &[TraceRecord]) -> BTreeSet<NodeId> {
    trace.iter().filter(|r| r.pos_x_m.is_some()).map(|r| r.node).collect()
}

/// Per-cell evidence for one mobile node.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEvidence {
    pub grid: CellGrid,
    /// The mobile logged something while in the cell.
    pub active: Vec<bool>,
    /// A data frame was delivered or a frame from a stationary node was
    /// received while in the cell.
    pub linked: Vec<bool>,
    /// Parent reported by `MOVE` rows in the cell.
    pub parents: Vec<Option<NodeId>>,
}

impl CellEvidence {
    pub fn collect(trace: &[TraceRecord], mobile: NodeId, grid: CellGrid) -> Self {
        let mobiles = mobile_nodes(trace);
        let mut ev = CellEvidence {
            grid,
            active: vec![false; grid.count],
            linked: vec![false; grid.count],
            parents: vec![None; grid.count],
        };
        for r in trace.iter().filter(|r| r.node == mobile) {
            let Some(k) = r.pos_x_m.and_then(|x| grid.index_of(x)) else { continue };
            ev.active[k] = true;
            let delivered = r.event == EventLabel::CsmaDone
                && r.frame_kind == Some(FrameKind::Data)
                && r.outcome.as_deref() == Some(CsmaOutcome::Delivered.name());
            let heard = r.event == EventLabel::Rx && r.src.is_some_and(|s| !mobiles.contains(&s));
            if delivered || heard {
                ev.linked[k] = true;
            }
            if r.event == EventLabel::Move {
                if let Some(Some(p)) = r.move_parent() {
                    ev.parents[k].get_or_insert(p);
                }
            }
        }
        ev
    }

    /// Cells where the mobile was active and nothing got through, merged.
    pub fn gaps(&self) -> Vec<Interval> {
        let flags: Vec<bool> = self.active.iter().zip(&self.linked).map(|(a, l)| *a && !*l).collect();
        merge_cells(&self.grid, &flags)
    }

    /// Trajectory segments per serving parent, from `MOVE` rows.
    pub fn association(&self) -> Vec<(Interval, NodeId)> {
        let mut out: Vec<(Interval, NodeId)> = Vec::new();
        for (k, p) in self.parents.iter().enumerate() {
            let Some(p) = *p else { continue };
            let (lo, hi) = (self.grid.edge(k), self.grid.edge(k + 1));
            match out.last_mut() {
                Some((iv, id)) if *id == p && iv.end == lo => iv.end = hi,
                _ => out.push((Interval::new(lo, hi), p)),
            }
        }
        out
    }
}

/// Grid spanning the positions seen in the trace, snapped outwards to `cell`.
pub fn grid_from_trace(trace: &[TraceRecord], mobile: NodeId, cell: f64) -> Result<CellGrid, GapError> {
    let xs = trace.iter().filter(|r| r.node == mobile).filter_map(|r| r.pos_x_m);
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() {
        return Err(GapError::NoPositions);
    }
    let lo = (lo / cell).floor() * cell;
    let hi = ((hi / cell).floor() + 1.0) * cell;
    Ok(CellGrid::new(lo, hi, cell))
}

/// Gap intervals per mobile node. An x-cell is a gap when the mobile was
/// active there and neither delivered data nor heard a stationary node.
/// `bounds` restricts the grid to the trajectory extent when known.
pub fn gap_analysis(
    trace: &[TraceRecord],
    bounds: Option<(f64, f64)>,
    cell: f64,
) -> Result<BTreeMap<NodeId, Vec<Interval>>, GapError> {
    let mobiles = mobile_nodes(trace);
    if mobiles.is_empty() {
        return Err(GapError::NoPositions);
    }
    let mut out = BTreeMap::new();
    for m in mobiles {
        let grid = match bounds {
            Some((lo, hi)) => CellGrid::new(lo, hi, cell),
            None => grid_from_trace(trace, m, cell)?,
        };
        out.insert(m, CellEvidence::collect(trace, m, grid).gaps());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pansim_core::SimTime;

    fn at(x: f64, event: EventLabel) -> TraceRecord {
        let mut r = TraceRecord::new(SimTime::from_micros((x * 1e6) as u64), 10, event);
        r.pos_x_m = Some(x);
        r
    }

    fn data_done(x: f64, ok: bool) -> TraceRecord {
        let mut r = at(x, EventLabel::CsmaDone);
        r.frame_kind = Some(FrameKind::Data);
        r.outcome = Some(if ok { "DELIVERED" } else { "NO_ACK" }.into());
        r
    }

    #[test]
    fn always_associated_has_no_gaps() {
        let trace: Vec<_> = (0..150).map(|k| data_done(0.05 + 0.1 * k as f64, true)).collect();
        assert_eq!(gap_analysis(&trace, Some((0.0, 15.0)), 0.1).unwrap()[&10], vec![]);
    }

    #[test]
    fn failures_confined_to_one_metre() {
        let trace: Vec<_> = (0..150)
            .map(|k| {
                let x = 0.05 + 0.1 * k as f64;
                data_done(x, !(5.0..6.0).contains(&x))
            })
            .collect();
        assert_eq!(gap_analysis(&trace, Some((0.0, 15.0)), 0.1).unwrap()[&10], vec![Interval::new(5.0, 6.0)]);
    }

    #[test]
    fn hearing_a_stationary_node_is_a_link() {
        let mut rx = at(5.55, EventLabel::Rx);
        rx.src = Some(2);
        let trace = vec![data_done(5.45, false), data_done(5.55, false), rx, data_done(5.65, false)];
        let gaps = gap_analysis(&trace, Some((5.0, 6.0)), 0.1).unwrap();
        assert_eq!(gaps[&10], vec![Interval::new(5.4, 5.5), Interval::new(5.6, 5.7)]);
    }

    #[test]
    fn bounds_inferred_from_positions() {
        let trace = vec![data_done(0.05, false), data_done(0.95, true)];
        let gaps = gap_analysis(&trace, None, 0.1).unwrap();
        assert_eq!(gaps[&10], vec![Interval::new(0.0, 0.1)]);
    }

    #[test]
    fn no_positions_is_an_error() {
        let trace = vec![TraceRecord::new(SimTime::ZERO, 1, EventLabel::TxStart)];
        assert_eq!(gap_analysis(&trace, None, 0.1), Err(GapError::NoPositions));
    }

    #[test]
    fn association_segments() {
        let mut rows = Vec::new();
        for (x, p) in [(0.05, "parent=1"), (0.15, "parent=1"), (0.25, "parent=none"), (0.35, "parent=2")] {
            let mut r = at(x, EventLabel::Move);
            r.outcome = Some(p.into());
            rows.push(r);
        }
        let ev = CellEvidence::collect(&rows, 10, CellGrid::new(0.0, 0.4, 0.1));
        assert_eq!(ev.association(), vec![(Interval::new(0.0, 0.2), 1), (Interval::new(0.3, 0.4), 2)]);
    }
}
