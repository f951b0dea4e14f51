//! Human-readable summaries and the CSV / gnuplot data files.

use std::fmt::Write as _;

use pansim_core::coverage::Interval;
use pansim_core::sim::SimReport;
use pansim_core::{NodeId, SimTime};

use crate::calibrate::Calibration;
use crate::experiments::{ArmResult, Comparison, SweepResult};

/// Published headline figures the comparison is set against.
pub const PUBLISHED_LATENCY_REDUCTION_S: f64 = 1.2;
pub const PUBLISHED_ENERGY_SAVING_PERCENT: f64 = 42.8;

pub fn fmt_intervals(ivs: &[Interval]) -> String {
    if ivs.is_empty() {
        return "-".into();
    }
    ivs.iter().map(|i| format!("({:.2}, {:.2})", i.start, i.end)).collect::<Vec<_>>().join(" ")
}

pub fn fmt_association(a: &[(Interval, NodeId)]) -> String {
    if a.is_empty() {
        return "-".into();
    }
    a.iter().map(|(i, id)| format!("{id}@({:.1}, {:.1})", i.start, i.end)).collect::<Vec<_>>().join(" ")
}

fn secs(t: SimTime) -> String {
    format!("{:.3} s", t.as_secs_f64())
}

pub fn run_summary(r: &SimReport) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "seed {}  duration {}", r.seed, secs(r.duration));
    let _ = writeln!(
        o,
        "events: scheduled {}  processed {}  cancelled {}",
        r.summary.scheduled, r.summary.processed, r.summary.cancelled
    );
    for (kind, n) in &r.summary.per_kind {
        let _ = writeln!(o, "  {kind:<14} {n}");
    }
    let _ = writeln!(o, "trace rows: {}", r.trace.len());
    let _ = writeln!(o);
    let _ = writeln!(o, "{:>5} {:<12} {:>10} {:>10} {:>10} {:>10} {:>11}", "node", "role", "sleep mJ", "idle mJ", "rx mJ", "tx mJ", "total mJ");
    for n in &r.nodes {
        let e = &n.energy;
        let _ = writeln!(
            o,
            "{:>5} {:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>11.3}",
            n.id,
            n.role.kind.name(),
            e.sleep_mj,
            e.idle_mj,
            e.rx_mj,
            e.tx_mj,
            e.total_mj
        );
    }
    for n in r.nodes.iter().filter(|n| n.handover.is_some()) {
        let h = n.handover.as_ref().expect("filtered");
        let c = &n.counters;
        let _ = writeln!(o);
        let _ = writeln!(o, "mobile {}:", n.id);
        let _ = writeln!(o, "  data generated {}  delivered {}  failed {}  outage losses {}", c.data_generated, c.data_delivered, c.data_failed, c.outage_losses);
        let _ = writeln!(o, "  handovers {} of {} attempts, mean latency {}, outage {}", h.completions, h.attempts, h.mean_latency().map_or("-".into(), secs), secs(h.total_outage));
        let _ = writeln!(o, "  radio on {}, mean tx power {}", secs(n.ledger.radio_on_time()), n.ledger.mean_tx_power().map_or("-".into(), |p| format!("{p:.2} dBm")));
        let _ = writeln!(o, "  final parent {}", n.final_parent.map_or("none".into(), |p| p.to_string()));
    }
    o
}

pub fn energy_csv(r: &SimReport) -> String {
    let mut o = String::from("node_id,role,sleep_us,idle_us,rx_us,tx_us,sleep_mj,idle_mj,rx_mj,tx_mj,total_mj\n");
    for n in &r.nodes {
        let l = &n.ledger;
        let e = &n.energy;
        let _ = writeln!(
            o,
            "{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
            n.id,
            n.role.kind.name(),
            l.sleep_time().as_micros(),
            l.idle_time().as_micros(),
            l.rx_time().as_micros(),
            l.tx_time().as_micros(),
            e.sleep_mj,
            e.idle_mj,
            e.rx_mj,
            e.tx_mj,
            e.total_mj
        );
    }
    o
}

pub fn sweep_summary(s: &SweepResult) -> String {
    let mut o = String::new();
    let optimal = s.optimal();
    let _ = writeln!(o, "{:>9}  {:<28} {:<24} {:<36} marker", "power", "gaps (m)", "overlaps (m)", "association (node@m)");
    for l in &s.levels {
        let mut marks = Vec::new();
        if optimal == Some(l.power) {
            marks.push("OPTIMAL");
        }
        if l.overprovisioned() {
            marks.push("OVERPROVISIONED");
        }
        let _ = writeln!(
            o,
            "{:>5} dBm  {:<28} {:<24} {:<36} {}",
            l.power,
            fmt_intervals(&l.gaps),
            fmt_intervals(&l.overlaps),
            fmt_association(&l.association),
            marks.join(" ")
        );
    }
    let _ = writeln!(o);
    match optimal {
        Some(p) => {
            let _ = writeln!(o, "lowest gap-free level: {p} dBm");
        }
        None => {
            let _ = writeln!(o, "no level is gap-free");
        }
    }
    let _ = writeln!(o, "gap sets shrink with power: {}", if s.monotone() { "yes" } else { "NO" });
    let _ = writeln!(o, "gaps are measured from the trace; overlaps from static range at cell centres");
    if s.levels.iter().any(|l| l.power == 2.0) {
        let _ = writeln!(
            o,
            "note: the reference traces label both of the first two runs 0 dBm although they differ; 2 dBm is swept as the presumed second level"
        );
    }
    o
}

/// One row per interval: `power_dbm,kind,start_m,end_m,node_id`.
pub fn coverage_csv(s: &SweepResult) -> String {
    let mut o = String::from("power_dbm,kind,start_m,end_m,node_id\n");
    for l in &s.levels {
        for (kind, ivs) in [("gap", &l.gaps), ("static_gap", &l.static_gaps), ("overlap", &l.overlaps)] {
            for i in ivs {
                let _ = writeln!(o, "{:.1},{kind},{:.2},{:.2},", l.power, i.start, i.end);
            }
        }
        for (i, id) in &l.association {
            let _ = writeln!(o, "{:.1},association,{:.2},{:.2},{id}", l.power, i.start, i.end);
        }
    }
    o
}

/// gnuplot data: one block per power level (select with `index`), columns
/// `start_m end_m power_dbm kind` where kind is 0 for gaps and 1 for overlaps.
pub fn coverage_dat(s: &SweepResult) -> String {
    let mut o = String::from("# start_m end_m power_dbm kind(0=gap,1=overlap)\n");
    for l in &s.levels {
        let _ = writeln!(o, "# {} dBm", l.power);
        for i in &l.gaps {
            let _ = writeln!(o, "{:.2} {:.2} {:.1} 0", i.start, i.end, l.power);
        }
        for i in &l.overlaps {
            let _ = writeln!(o, "{:.2} {:.2} {:.1} 1", i.start, i.end, l.power);
        }
        o.push_str("\n\n");
    }
    o
}

fn arm_line(a: &ArmResult) -> String {
    format!(
        "{:<24} {:>5} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>9} {:>7}",
        a.label,
        a.handover.completions,
        a.handover.mean_latency().map_or("-".into(), |t| format!("{:.1}", t.as_secs_f64() * 1e3)),
        format!("{:.1}", a.handover.total_latency().as_secs_f64() * 1e3),
        format!("{:.1}", a.handover.total_outage.as_secs_f64() * 1e3),
        format!("{:.1}", a.radio_on.as_secs_f64() * 1e3),
        format!("{:.2}", a.energy.tx_mj),
        format!("{:.2}", a.energy.rx_mj + a.energy.idle_mj),
        format!("{:.3}", a.energy.sleep_mj),
        format!("{:.2}", a.energy.total_mj),
        a.mean_tx_power.map_or("-".into(), |p| format!("{p:.2}")),
    )
}

pub fn comparison_summary(c: &Comparison) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "seed {}", c.seed);
    let _ = writeln!(
        o,
        "{:<24} {:>5} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>9} {:>7}",
        "configuration", "hand", "mean ms", "total ms", "outage ms", "on ms", "tx mJ", "listen", "sleep", "total mJ", "dBm"
    );
    for a in c.arms() {
        let _ = writeln!(o, "{}", arm_line(a));
    }
    let _ = writeln!(o);
    let p = &c.proposed;
    let b = &c.baseline;
    let _ = writeln!(o, "proposed (broadcast+tpc) vs baseline (scan+fixed max power):");
    match c.latency_reduction() {
        Some(d) => {
            let _ = writeln!(o, "  mean handover latency reduced by {:.3} s ({} vs {})", d,
                secs(p.handover.mean_latency().unwrap_or_default()), secs(b.handover.mean_latency().unwrap_or_default()));
        }
        None => {
            let _ = writeln!(o, "  mean handover latency: no completed handover in one of the arms");
        }
    }
    let outage = b.handover.total_outage.as_secs_f64() - p.handover.total_outage.as_secs_f64();
    let _ = writeln!(o, "  total outage reduced by {outage:.3} s");
    let on = b.radio_on.as_secs_f64() - p.radio_on.as_secs_f64();
    let _ = writeln!(o, "  radio-on time reduced by {on:.3} s");
    let _ = writeln!(o, "  mobile energy saving {:.1} % ({:.2} mJ vs {:.2} mJ)", c.energy_saving_percent, p.energy.total_mj, b.energy.total_mj);
    let tpc = c.broadcast_fixed.energy.total_mj - p.energy.total_mj;
    let ho = b.energy.total_mj - c.broadcast_fixed.energy.total_mj;
    let sleep = c.proposed_awake.energy.total_mj - p.energy.total_mj;
    let _ = writeln!(o, "  contributions: handover scheme {ho:.2} mJ, power control {tpc:.2} mJ; end-device sleep saves {sleep:.2} mJ on top");
    let _ = writeln!(o);
    let _ = writeln!(
        o,
        "published figures: {PUBLISHED_LATENCY_REDUCTION_S} s shorter communication time, {PUBLISHED_ENERGY_SAVING_PERCENT} % less energy."
    );
    let _ = writeln!(
        o,
        "Those magnitudes depend on an experimental setup that is not documented and are not reproducible here; only the direction is checked."
    );
    let lat_ok = match (p.handover.mean_latency(), b.handover.mean_latency()) {
        (Some(a), Some(b)) => a < b,
        _ => false,
    };
    let _ = writeln!(o, "direction: latency {}  energy {}", if lat_ok { "lower" } else { "NOT lower" },
        if p.energy.total_mj < b.energy.total_mj { "lower" } else { "NOT lower" });
    o
}

pub fn calibration_summary(c: &Calibration, levels: &[f64]) -> String {
    let mut o = String::new();
    let t = &c.targets;
    let tg: Vec<String> = t.gaps.iter().map(|(a, b)| format!("({a}, {b})")).collect();
    let _ = writeln!(o, "targets: gaps {} at {} dBm, gap-free from {} dBm, tolerance {} m", tg.join(" "), t.gap_power, t.gap_free_power, t.tolerance);
    let _ = writeln!(o, "candidates evaluated: {}", c.evaluated);
    let Some(b) = &c.best else {
        let _ = writeln!(o, "no candidate produced the requested number of gaps: INFEASIBLE");
        return o;
    };
    let _ = writeln!(o, "{}", if c.identity { "supplied parameters already meet the targets; kept unchanged" } else { "best candidate:" });
    let _ = writeln!(o, "  path_loss_exponent {}  pl0 {} dB  rx_sensitivity {} dBm", b.path_loss_exponent, b.pl0, b.rx_sensitivity);
    let xs: Vec<String> = b.positions.iter().map(|x| format!("{x} m")).collect();
    let _ = writeln!(o, "  stationary x: {}", xs.join(", "));
    let _ = writeln!(o, "  achieved gaps at {} dBm: {}", t.gap_power, fmt_intervals(&b.achieved));
    let errs: Vec<String> = b.errors.iter().map(|e| format!("{e:.3}")).collect();
    let _ = writeln!(o, "  boundary errors (m): {}  max {:.3}", errs.join(" "), b.max_error());
    let phy = pansim_core::PhyParams {
        path_loss_exponent: b.path_loss_exponent,
        pl0: b.pl0,
        rx_sensitivity: b.rx_sensitivity,
        ..pansim_core::PhyParams::default()
    };
    let ranges: Vec<String> = levels.iter().map(|p| format!("{p} dBm: {:.3} m", phy.range_m(*p, 0.0, 0.0))).collect();
    let _ = writeln!(o, "  range per level: {}", ranges.join(", "));
    for v in &b.violations {
        let _ = writeln!(o, "  violation: {v}");
    }
    let _ = writeln!(o, "{}", if c.feasible() { "FEASIBLE" } else { "INFEASIBLE" });
    o
}
