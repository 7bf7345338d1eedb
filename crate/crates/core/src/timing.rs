//! Static timing analysis over dual-rail netlists: the reduced
//! completion-detection quantities (worst valid-to-spacer times, the done
//! fall delay) and voltage-scaled delay multipliers.
//!
//! The analysis is purely topological: every structural path counts,
//! including false paths, with fall delays for valid-to-spacer quantities
//! and rise delays for spacer-to-valid. DELAY elements break timing paths
//! (the CD done gate is excluded from its own analysis).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{Driver, GateId, NetId, Netlist};
use crate::sim::{DelayModel, SimError};

#[derive(Debug, Error)]
pub enum TimingError {
    #[error("combinational cycle reaches the analyzer at gate {0}")]
    CyclicTiming(GateId),
    #[error("netlist contains state-holding gate {0}")]
    SequentialGate(GateId),
    #[error("vdd {vdd} outside table range [{min}, {max}]")]
    OutOfRange { vdd: f64, min: f64, max: f64 },
    #[error("vdd table invalid: {0}")]
    BadTable(String),
    #[error("delay model: {0}")]
    Delay(#[from] SimError),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy)]
pub struct TimingOptions {
    /// Multiplicative margin applied to the computed done fall delay.
    pub margin: f64,
}

impl Default for TimingOptions {
    fn default() -> Self {
        TimingOptions { margin: 1.1 }
    }
}

/// Worst-case path quantities in picoseconds.
///
/// `t_io` is the longest PI-to-PO valid-to-spacer propagation, `t_int` the
/// longest over all nets (so `t_int >= t_io`), `t_d_raw = t_int - t_io`
/// the required done fall delay before margin, and
/// `t_done_fall = t_io + t_d` the resulting done fall time bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub t_io: u64,
    pub t_int: u64,
    pub t_d_raw: u64,
    pub t_d: u64,
    pub t_done_fall: u64,
    pub max_t_spcw: u64,
    pub margin: f64,
    /// Gate chain realizing `t_io`, PI side first.
    pub critical_path_io: Vec<u32>,
    /// Gate chain realizing `t_int`.
    pub critical_path_int: Vec<u32>,
}

impl TimingReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Longest-path analysis at the nominal (jitter-free) delay model.
pub fn compute_timing(
    netlist: &Netlist,
    delay_model: &DelayModel,
    options: TimingOptions,
) -> Result<TimingReport, TimingError> {
    if let Some(g) = netlist
        .gate_ids()
        .find(|&g| netlist.gate(g).kind.is_sequential())
    {
        return Err(TimingError::SequentialGate(g));
    }
    let delays = delay_model.without_jitter().resolve(netlist)?;

    // topo_order excludes DELAY gates, which is exactly the path-break
    // semantics: nets driven by DELAY get no arrival and are skipped.
    let order = netlist.topo_order();
    let nets = netlist.net_count();
    let mut fall: Vec<Option<u64>> = vec![None; nets];
    let mut rise: Vec<Option<u64>> = vec![None; nets];
    let mut pred: Vec<Option<GateId>> = vec![None; nets]; // fall-path predecessor
    for &pi in netlist.pis() {
        fall[pi.index()] = Some(0);
        rise[pi.index()] = Some(0);
    }
    for &g in order {
        let gate = netlist.gate(g);
        let mut worst_fall = 0;
        let mut worst_rise = 0;
        let mut any = false;
        for input in &gate.inputs {
            if let Some(f) = fall[input.index()] {
                worst_fall = worst_fall.max(f);
                any = true;
            }
            if let Some(r) = rise[input.index()] {
                worst_rise = worst_rise.max(r);
            }
        }
        if !any && !gate.inputs.is_empty() {
            // All inputs behind DELAY breaks: start a fresh path here.
        }
        let out = gate.output.index();
        fall[out] = Some(worst_fall + delays[g.index()].fall);
        rise[out] = Some(worst_rise + delays[g.index()].rise);
        pred[out] = Some(g);
    }

    let max_over = |sel: &dyn Fn(NetId) -> Option<u64>, ids: &mut dyn Iterator<Item = NetId>| {
        ids.filter_map(|n| sel(n).map(|v| (v, n)))
            .max_by_key(|&(v, n)| (v, std::cmp::Reverse(n)))
    };
    let fall_of = |n: NetId| fall[n.index()];
    let rise_of = |n: NetId| rise[n.index()];

    let (t_io, io_net) = max_over(&fall_of, &mut netlist.pos().iter().copied())
        .unwrap_or((0, NetId::new(0)));
    let (t_int, int_net) = max_over(&fall_of, &mut netlist.net_ids()).unwrap_or((0, NetId::new(0)));
    let (max_t_spcw, _) =
        max_over(&rise_of, &mut netlist.pos().iter().copied()).unwrap_or((0, NetId::new(0)));

    let backtrack = |mut net: NetId| -> Vec<u32> {
        let mut chain = Vec::new();
        while let Some(g) = pred[net.index()] {
            chain.push(g.raw());
            // Follow the worst fall-arrival input.
            let gate = netlist.gate(g);
            let next = gate
                .inputs
                .iter()
                .filter_map(|&n| fall[n.index()].map(|v| (v, n)))
                .max_by_key(|&(v, n)| (v, std::cmp::Reverse(n)));
            match next {
                Some((_, n)) if matches!(netlist.driver(n), Driver::Gate(_)) => net = n,
                _ => break,
            }
        }
        chain.reverse();
        chain
    };

    let t_d_raw = t_int.saturating_sub(t_io);
    let t_d = (t_d_raw as f64 * options.margin).ceil() as u64;
    Ok(TimingReport {
        t_io,
        t_int,
        t_d_raw,
        t_d,
        t_done_fall: t_io + t_d,
        max_t_spcw,
        margin: options.margin,
        critical_path_io: backtrack(io_net),
        critical_path_int: backtrack(int_net),
    })
}

/// Earliest possible transition arrival per net: minimum over paths and
/// directions of accumulated gate delays. A sound lower bound on when any
/// net can first react to a PI change, used to size covering delays.
pub fn earliest_arrivals(
    netlist: &Netlist,
    delay_model: &DelayModel,
) -> Result<Vec<Option<u64>>, TimingError> {
    let delays = delay_model.without_jitter().resolve(netlist)?;
    let mut earliest: Vec<Option<u64>> = vec![None; netlist.net_count()];
    for &pi in netlist.pis() {
        earliest[pi.index()] = Some(0);
    }
    for &g in netlist.topo_order() {
        let gate = netlist.gate(g);
        let best = gate
            .inputs
            .iter()
            .filter_map(|n| earliest[n.index()])
            .min();
        if let Some(b) = best {
            let d = delays[g.index()].rise.min(delays[g.index()].fall);
            earliest[gate.output.index()] = Some(b + d);
        }
    }
    Ok(earliest)
}

// ---------------------------------------------------------------------------
// Voltage table
// ---------------------------------------------------------------------------

/// Supply-voltage to delay-multiplier table with log-linear interpolation
/// between rows. Multipliers are non-increasing in vdd and the nominal row
/// has multiplier 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VddTable {
    /// Sorted ascending by vdd.
    rows: Vec<(f64, f64)>,
}

impl VddTable {
    pub fn new(mut rows: Vec<(f64, f64)>) -> Result<Self, TimingError> {
        if rows.is_empty() {
            return Err(TimingError::BadTable("empty table".into()));
        }
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(TimingError::BadTable(format!("duplicate vdd {}", w[0].0)));
            }
            if w[0].1 < w[1].1 {
                return Err(TimingError::BadTable(
                    "multipliers must be non-increasing in vdd".into(),
                ));
            }
        }
        if !rows.iter().any(|&(_, m)| m == 1.0) {
            return Err(TimingError::BadTable(
                "no nominal row with multiplier 1".into(),
            ));
        }
        if rows.iter().any(|&(_, m)| m < 1.0) {
            return Err(TimingError::BadTable("multipliers must be >= 1".into()));
        }
        Ok(VddTable { rows })
    }

    /// Placeholder shape: exponential growth below 0.6 V, nominal 1.2 V.
    /// Non-normative; supply measured tables for real libraries.
    pub fn default_shape() -> Self {
        VddTable::new(vec![
            (1.2, 1.0),
            (0.9, 1.5),
            (0.6, 4.0),
            (0.4, 60.0),
            (0.25, 3000.0),
        ])
        .expect("default table is valid")
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn multiplier(&self, vdd: f64) -> Result<f64, TimingError> {
        let (min, max) = (self.rows[0].0, self.rows[self.rows.len() - 1].0);
        if vdd < min || vdd > max {
            return Err(TimingError::OutOfRange { vdd, min, max });
        }
        if let Some(&(_, m)) = self.rows.iter().find(|&&(v, _)| v == vdd) {
            return Ok(m);
        }
        let hi = self.rows.iter().position(|&(v, _)| v > vdd).unwrap();
        let (v0, m0) = self.rows[hi - 1];
        let (v1, m1) = self.rows[hi];
        let t = (vdd - v0) / (v1 - v0);
        Ok((m0.ln() + t * (m1.ln() - m0.ln())).exp())
    }

    pub fn to_json_string(&self) -> String {
        let file = VddTableFile {
            rows: self
                .rows
                .iter()
                .map(|&(vdd, multiplier)| VddRow { vdd, multiplier })
                .collect(),
            interpolation: "log-linear".into(),
        };
        serde_json::to_string_pretty(&file).expect("table serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self, TimingError> {
        let file: VddTableFile =
            serde_json::from_str(s).map_err(|e| TimingError::Json(e.to_string()))?;
        if file.interpolation != "log-linear" {
            return Err(TimingError::BadTable(format!(
                "unsupported interpolation {:?}",
                file.interpolation
            )));
        }
        VddTable::new(file.rows.iter().map(|r| (r.vdd, r.multiplier)).collect())
    }

    /// CSV rows `vdd,multiplier`, optional header line.
    pub fn from_csv_str(s: &str) -> Result<Self, TimingError> {
        let mut rows = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || (i == 0 && line.starts_with("vdd")) {
                continue;
            }
            let mut parts = line.split(',');
            let vdd: f64 = parts
                .next()
                .and_then(|p| p.trim().parse().ok())
                .ok_or_else(|| TimingError::BadTable(format!("line {}: bad vdd", i + 1)))?;
            let mult: f64 = parts
                .next()
                .and_then(|p| p.trim().parse().ok())
                .ok_or_else(|| TimingError::BadTable(format!("line {}: bad multiplier", i + 1)))?;
            rows.push((vdd, mult));
        }
        VddTable::new(rows)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VddTableFile {
    rows: Vec<VddRow>,
    interpolation: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VddRow {
    vdd: f64,
    multiplier: f64,
}

/// Scales every delay by the interpolated multiplier for `vdd`; effective
/// delays round up to at least one time unit at resolution.
pub fn scale_delay_model(
    model: &DelayModel,
    vdd: f64,
    table: &VddTable,
) -> Result<DelayModel, TimingError> {
    Ok(model.scaled(table.multiplier(vdd)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{GateKind, NetlistBuilder};
    use crate::sim::DelayModel;

    #[test]
    fn single_gate_t_d_is_zero() {
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let c = b.named_net("b");
        let y = b.named_net("y");
        b.gate(GateKind::And2, &[a, c], y);
        b.pi(a);
        b.pi(c);
        b.po(y);
        let n = b.build().unwrap();
        let r = compute_timing(&n, &DelayModel::nominal(), TimingOptions::default()).unwrap();
        assert_eq!(r.t_io, 15);
        assert_eq!(r.t_int, 15);
        assert_eq!(r.t_d_raw, 0);
        assert_eq!(r.t_done_fall, 15);
    }

    #[test]
    fn internal_only_path_raises_t_int() {
        // PO path: one AND2 (15). Internal-only path: AND2 -> OR2 -> OR2
        // dead-ending in an unused net (45).
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let c = b.named_net("b");
        let y = b.named_net("y");
        let t1 = b.net();
        let t2 = b.net();
        b.gate(GateKind::And2, &[a, c], y);
        b.gate(GateKind::Or2, &[y, a], t1);
        b.gate(GateKind::Or2, &[t1, c], t2);
        b.pi(a);
        b.pi(c);
        b.po(y);
        let n = b.build().unwrap();
        let r = compute_timing(&n, &DelayModel::nominal(), TimingOptions { margin: 1.0 }).unwrap();
        assert_eq!(r.t_io, 15);
        assert_eq!(r.t_int, 45);
        assert_eq!(r.t_d_raw, 30);
        assert_eq!(r.t_d, 30);
        assert_eq!(r.t_done_fall, 45);
        assert_eq!(r.t_d + r.t_io, r.t_int);
    }

    #[test]
    fn margin_applies_to_t_d_only() {
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let y = b.named_net("y");
        let t = b.net();
        b.gate(GateKind::Buf, &[a], y);
        b.gate(GateKind::Inv, &[y], t);
        b.pi(a);
        b.po(y);
        let n = b.build().unwrap();
        let r = compute_timing(&n, &DelayModel::nominal(), TimingOptions { margin: 1.1 }).unwrap();
        assert_eq!(r.t_io, 10);
        assert_eq!(r.t_int, 20);
        assert_eq!(r.t_d_raw, 10);
        assert_eq!(r.t_d, 11);
        assert!(r.t_done_fall >= r.t_int);
    }

    #[test]
    fn delay_gate_breaks_paths() {
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let y = b.named_net("y");
        let d = b.named_net("done");
        b.gate(GateKind::Buf, &[a], y);
        b.gate(GateKind::Delay { rise: 0, fall: 99 }, &[y], d);
        b.pi(a);
        b.po(y);
        b.po(d);
        let n = b.build().unwrap();
        let r = compute_timing(&n, &DelayModel::nominal(), TimingOptions::default()).unwrap();
        // The DELAY output contributes nothing to the maxima.
        assert_eq!(r.t_io, 10);
        assert_eq!(r.t_int, 10);
    }

    #[test]
    fn vdd_table_endpoints_and_interpolation() {
        let table = VddTable::default_shape();
        assert_eq!(table.multiplier(1.2).unwrap(), 1.0);
        assert_eq!(table.multiplier(0.6).unwrap(), 4.0);
        assert_eq!(table.multiplier(0.25).unwrap(), 3000.0);
        let mid = table.multiplier(0.75).unwrap();
        assert!(mid > 1.5 && mid < 4.0);
        assert!(matches!(
            table.multiplier(0.1),
            Err(TimingError::OutOfRange { .. })
        ));
        // identity at nominal
        let model = DelayModel::nominal();
        let scaled = scale_delay_model(&model, 1.2, &table).unwrap();
        assert_eq!(model, scaled);
    }

    #[test]
    fn vdd_table_validation() {
        assert!(VddTable::new(vec![(1.2, 1.0), (0.6, 0.5)]).is_err());
        assert!(VddTable::new(vec![(1.2, 2.0), (0.6, 4.0)]).is_err());
        assert!(VddTable::new(vec![]).is_err());
        let csv = "vdd,multiplier\n1.2,1\n0.6,4\n";
        let t = VddTable::from_csv_str(csv).unwrap();
        assert_eq!(t.multiplier(0.6).unwrap(), 4.0);
        let round = VddTable::from_json_str(&t.to_json_string()).unwrap();
        assert_eq!(t, round);
    }
}
