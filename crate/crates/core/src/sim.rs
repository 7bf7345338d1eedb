//! Deterministic event-driven timed simulation with transport delays, a
//! four-phase handshake environment, and runtime protocol checkers
//! (monotonic switching, forbidden codewords, 1-of-n exclusivity, input
//! timing).
//!
//! Timebase is integer picoseconds. The event queue processes ties in
//! ascending `(time, gate-id)` order, so runs are reproducible; randomness
//! enters only through the seeded jitter specification and operand
//! samplers.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapath::DatapathBundle;
use crate::dualrail::DualRailBinding;
use crate::netlist::{EvalError, GateKind, NetId, Netlist};
use crate::timing::{compute_timing, TimingError, TimingOptions};
use crate::tm::{ComparatorOutcome, TmConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no delay entry for gate kind {0}")]
    MissingKindDelay(&'static str),
    #[error("delay model names unknown gate kind {0:?}")]
    UnknownKindName(String),
    #[error("event count exceeded {0} (oscillation?)")]
    EventExplosion(u64),
    #[error("initial state: {0}")]
    Init(#[from] EvalError),
    #[error("done signal never rose for operand {0}")]
    DoneStuck(usize),
    #[error("no primary output asserted for operand {0}")]
    NoOutcome(usize),
    #[error("timing analysis: {0}")]
    Timing(Box<TimingError>),
    #[error("json: {0}")]
    Json(String),
}

impl From<TimingError> for SimError {
    fn from(e: TimingError) -> Self {
        SimError::Timing(Box::new(e))
    }
}

// ---------------------------------------------------------------------------
// Delay model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiseFall {
    pub rise: u64,
    pub fall: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterSpec {
    pub min: f64,
    pub max: f64,
    pub seed: u64,
}

/// Per-kind rise/fall delays in picoseconds, per-gate overrides, an
/// optional static jitter multiplier per gate instance, and a global
/// voltage multiplier. DELAY gates take their delays from the netlist
/// annotation (scaled like everything else).
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    pub defaults: BTreeMap<String, RiseFall>,
    pub overrides: BTreeMap<u32, RiseFall>,
    pub jitter: Option<JitterSpec>,
    pub vdd_multiplier: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::nominal()
    }
}

fn sym(v: u64) -> RiseFall {
    RiseFall { rise: v, fall: v }
}

impl DelayModel {
    /// Placeholder nominal delays: INV/BUF 10, two-input gates 15,
    /// three/four-input and complex gates 25, C2 30.
    pub fn nominal() -> Self {
        let mut defaults = BTreeMap::new();
        for kind in GateKind::all_kinds() {
            let d = match kind.arity() {
                1 => 10,
                2 => {
                    if *kind == GateKind::C2 {
                        30
                    } else {
                        15
                    }
                }
                _ => 25,
            };
            defaults.insert(kind.name().to_string(), sym(d));
        }
        DelayModel {
            defaults,
            overrides: BTreeMap::new(),
            jitter: None,
            vdd_multiplier: 1.0,
        }
    }

    pub fn with_jitter(mut self, min: f64, max: f64, seed: u64) -> Self {
        self.jitter = Some(JitterSpec { min, max, seed });
        self
    }

    pub fn scaled(&self, multiplier: f64) -> Self {
        let mut m = self.clone();
        m.vdd_multiplier *= multiplier;
        m
    }

    pub fn without_jitter(&self) -> Self {
        let mut m = self.clone();
        m.jitter = None;
        m
    }

    /// Effective per-gate delays. Jitter draws one multiplier per gate
    /// instance, in gate-id order, once per resolution. Nonzero delays are
    /// floored at one time unit after scaling; a zero DELAY annotation
    /// stays zero (same-timestamp transport edge).
    pub fn resolve(&self, netlist: &Netlist) -> Result<Vec<RiseFall>, SimError> {
        let mut rng = self.jitter.map(|j| StdRng::seed_from_u64(j.seed));
        let mut out = Vec::with_capacity(netlist.gate_count());
        for (i, gate) in netlist.gates().iter().enumerate() {
            let jit = match (&mut rng, self.jitter) {
                (Some(r), Some(j)) => r.random_range(j.min..=j.max),
                _ => 1.0,
            };
            let base = match gate.kind {
                GateKind::Delay { rise, fall } => RiseFall { rise, fall },
                kind => self
                    .overrides
                    .get(&(i as u32))
                    .copied()
                    .or_else(|| self.defaults.get(kind.name()).copied())
                    .ok_or(SimError::MissingKindDelay(kind.name()))?,
            };
            let eff = |v: u64| -> u64 {
                if v == 0 {
                    0
                } else {
                    ((v as f64 * jit * self.vdd_multiplier).round() as u64).max(1)
                }
            };
            out.push(RiseFall {
                rise: eff(base.rise),
                fall: eff(base.fall),
            });
        }
        Ok(out)
    }

    pub fn to_json_string(&self) -> String {
        let file = DelayModelFile {
            default: self.defaults.clone(),
            overrides: self
                .overrides
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            jitter: self.jitter,
            vdd_multiplier: self.vdd_multiplier,
        };
        serde_json::to_string_pretty(&file).expect("delay model serialization cannot fail")
    }

    /// Parses the delay-model file. Entries in `default` override the
    /// nominal table per kind; DELAY is not a valid key (its delays are
    /// netlist annotations).
    pub fn from_json_str(s: &str) -> Result<Self, SimError> {
        let file: DelayModelFile =
            serde_json::from_str(s).map_err(|e| SimError::Json(e.to_string()))?;
        let mut model = DelayModel::nominal();
        for (k, v) in file.default {
            let known = GateKind::all_kinds().iter().any(|g| g.name() == k);
            if !known {
                return Err(SimError::UnknownKindName(k));
            }
            model.defaults.insert(k, v);
        }
        for (k, v) in file.overrides {
            let id: u32 = k
                .parse()
                .map_err(|_| SimError::Json(format!("bad gate id {k:?} in overrides")))?;
            model.overrides.insert(id, v);
        }
        model.jitter = file.jitter;
        model.vdd_multiplier = file.vdd_multiplier;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelayModelFile {
    #[serde(default)]
    default: BTreeMap<String, RiseFall>,
    #[serde(default)]
    overrides: BTreeMap<String, RiseFall>,
    #[serde(default)]
    jitter: Option<JitterSpec>,
    #[serde(default = "one")]
    vdd_multiplier: f64,
}

fn one() -> f64 {
    1.0
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    ValidApplied,
    SpacerApplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseMarker {
    pub time: u64,
    pub kind: PhaseKind,
    pub operand: usize,
}

/// Time-ordered per-net transition record. Transitions are strictly
/// ordered and strictly alternate per net.
#[derive(Debug, Clone)]
pub struct Trace {
    pub start_time: u64,
    pub initial: Vec<bool>,
    pub transitions: Vec<Vec<(u64, bool)>>,
    pub markers: Vec<PhaseMarker>,
}

impl Trace {
    fn new(start_time: u64, initial: Vec<bool>) -> Self {
        let nets = initial.len();
        Trace {
            start_time,
            initial,
            transitions: vec![Vec::new(); nets],
            markers: Vec::new(),
        }
    }

    pub fn value_at(&self, net: NetId, time: u64) -> bool {
        let ts = &self.transitions[net.index()];
        match ts.partition_point(|&(t, _)| t <= time) {
            0 => self.initial[net.index()],
            k => ts[k - 1].1,
        }
    }

    pub fn final_value(&self, net: NetId) -> bool {
        self.transitions[net.index()]
            .last()
            .map(|&(_, v)| v)
            .unwrap_or(self.initial[net.index()])
    }

    /// First transition of `net` to `value` at or after `time`.
    pub fn edge_at_or_after(&self, net: NetId, value: bool, time: u64) -> Option<u64> {
        self.transitions[net.index()]
            .iter()
            .find(|&&(t, v)| t >= time && v == value)
            .map(|&(t, _)| t)
    }

    pub fn transitions_in(&self, net: NetId, from: u64, to: u64) -> &[(u64, bool)] {
        let ts = &self.transitions[net.index()];
        let a = ts.partition_point(|&(t, _)| t < from);
        let b = ts.partition_point(|&(t, _)| t < to);
        &ts[a..b]
    }

    pub fn last_event_time(&self) -> u64 {
        self.transitions
            .iter()
            .filter_map(|ts| ts.last().map(|&(t, _)| t))
            .max()
            .unwrap_or(self.start_time)
    }

    /// Latest transition at or after `from`, ignoring `excluded` nets.
    pub fn last_event_excluding(&self, from: u64, excluded: &[NetId]) -> Option<u64> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(i, _)| !excluded.contains(&NetId::new(*i)))
            .filter_map(|(_, ts)| ts.last().map(|&(t, _)| t))
            .filter(|&t| t >= from)
            .max()
    }
}

// ---------------------------------------------------------------------------
// Event-driven simulator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub event_limit: u64,
    pub c2_initial: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            event_limit: 100_000_000,
            c2_initial: false,
        }
    }
}

/// PI value changes at non-decreasing times.
#[derive(Debug, Clone, Default)]
pub struct Stimulus {
    pub changes: Vec<(u64, NetId, bool)>,
}

fn eval_gate_bool(kind: GateKind, ins: &[bool], current: bool) -> bool {
    use GateKind::*;
    match kind {
        Inv => !ins[0],
        Buf | Delay { .. } => ins[0],
        And2 | And3 | And4 => ins.iter().all(|&v| v),
        Or2 | Or3 | Or4 => ins.iter().any(|&v| v),
        Nand2 | Nand3 | Nand4 => !ins.iter().all(|&v| v),
        Nor2 | Nor3 | Nor4 => !ins.iter().any(|&v| v),
        Aoi21 => !((ins[0] && ins[1]) || ins[2]),
        Aoi22 => !((ins[0] && ins[1]) || (ins[2] && ins[3])),
        Oai21 => !((ins[0] || ins[1]) && ins[2]),
        Oai22 => !((ins[0] || ins[1]) && (ins[2] || ins[3])),
        Xor2 => ins[0] ^ ins[1],
        Xnor2 => !(ins[0] ^ ins[1]),
        C2 => {
            if ins[0] && ins[1] {
                true
            } else if !ins[0] && !ins[1] {
                false
            } else {
                current
            }
        }
    }
}

/// Transport-delay event simulator. A gate output change computed at time
/// `t` lands at `t + delay`; scheduling a transaction removes pending
/// transactions at or after its time (VHDL transport semantics).
pub struct Simulator<'a> {
    netlist: &'a Netlist,
    delays: Vec<RiseFall>,
    values: Vec<bool>,
    now: u64,
    queue: BinaryHeap<Reverse<(u64, u32, u64, u32, bool)>>,
    pending: Vec<Vec<(u64, u64, bool)>>,
    seq: u64,
    trace: Trace,
    events_applied: u64,
    limit: u64,
}

impl<'a> Simulator<'a> {
    /// Starts from the settled state with every PI low (the all-spacer
    /// reset of AllZero-discipline circuits).
    pub fn new(
        netlist: &'a Netlist,
        delay_model: &DelayModel,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        let delays = delay_model.resolve(netlist)?;
        let pis = vec![false; netlist.pis().len()];
        let settled = netlist.eval_zero_delay(&pis, config.c2_initial)?;
        let values: Vec<bool> = settled
            .iter()
            .map(|v| v.to_bool().expect("defined PIs settle to defined values"))
            .collect();
        let trace = Trace::new(0, values.clone());
        Ok(Simulator {
            netlist,
            delays,
            values,
            now: 0,
            queue: BinaryHeap::new(),
            pending: vec![Vec::new(); netlist.net_count()],
            seq: 0,
            trace,
            events_applied: 0,
            limit: config.event_limit,
        })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn value(&self, net: NetId) -> bool {
        self.values[net.index()]
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn mark(&mut self, time: u64, kind: PhaseKind, operand: usize) {
        self.trace.markers.push(PhaseMarker {
            time,
            kind,
            operand,
        });
    }

    /// Swaps out the accumulated trace, starting a fresh one from the
    /// current state.
    pub fn take_trace(&mut self) -> Trace {
        let fresh = Trace::new(self.now, self.values.clone());
        std::mem::replace(&mut self.trace, fresh)
    }

    pub fn schedule_pi(&mut self, time: u64, net: NetId, value: bool) {
        self.schedule(time, net, value, 0);
    }

    fn schedule(&mut self, time: u64, net: NetId, value: bool, src: u32) {
        let pend = &mut self.pending[net.index()];
        while let Some(&(t, _, _)) = pend.last() {
            if t >= time {
                pend.pop();
            } else {
                break;
            }
        }
        let projected = pend
            .last()
            .map(|&(_, _, v)| v)
            .unwrap_or(self.values[net.index()]);
        if projected == value {
            return;
        }
        self.seq += 1;
        pend.push((time, self.seq, value));
        self.queue
            .push(Reverse((time, src, self.seq, net.index() as u32, value)));
    }

    /// Drains the event queue; returns the time of the last applied event
    /// (or the current time when nothing fired).
    pub fn run_until_quiet(&mut self) -> Result<u64, SimError> {
        let mut last = self.now;
        let mut ins: Vec<bool> = Vec::with_capacity(4);
        while let Some(Reverse((time, _src, seq, net_raw, value))) = self.queue.pop() {
            let net = NetId::new(net_raw as usize);
            let pend = &mut self.pending[net.index()];
            match pend.iter().position(|&(_, s, _)| s == seq) {
                Some(i) => {
                    pend.remove(i);
                }
                None => continue, // cancelled transaction
            }
            self.now = time;
            if self.values[net.index()] == value {
                continue;
            }
            self.values[net.index()] = value;
            self.trace.transitions[net.index()].push((time, value));
            last = time;
            self.events_applied += 1;
            if self.events_applied > self.limit {
                return Err(SimError::EventExplosion(self.limit));
            }
            for gi in 0..self.netlist.fanout(net).len() {
                let g = self.netlist.fanout(net)[gi];
                let gate = self.netlist.gate(g);
                ins.clear();
                ins.extend(gate.inputs.iter().map(|n| self.values[n.index()]));
                let out = gate.output;
                let state = self.pending[out.index()]
                    .last()
                    .map(|&(_, _, v)| v)
                    .unwrap_or(self.values[out.index()]);
                let new = eval_gate_bool(gate.kind, &ins, state);
                let d = if new {
                    self.delays[g.index()].rise
                } else {
                    self.delays[g.index()].fall
                };
                self.schedule(time + d, out, new, g.raw() + 1);
            }
        }
        Ok(last)
    }
}

/// One-shot transport-delay simulation of a stimulus schedule.
pub fn simulate(
    netlist: &Netlist,
    delay_model: &DelayModel,
    stimulus: &Stimulus,
    config: SimConfig,
) -> Result<Trace, SimError> {
    let mut sim = Simulator::new(netlist, delay_model, config)?;
    for &(t, net, v) in &stimulus.changes {
        sim.schedule_pi(t, net, v);
    }
    sim.run_until_quiet()?;
    let mut trace = sim.take_trace();
    trace.markers.sort_by_key(|m| m.time);
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Protocol checkers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    NonMonotonic,
    ForbiddenState,
    PrematureInput,
    MissingReset,
    OneHotViolation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolViolation {
    pub kind: ViolationKind,
    pub net: Option<NetId>,
    pub signal: Option<String>,
    pub time: u64,
    pub operand: usize,
}

/// Within each half-phase (between consecutive phase markers), every net
/// may transition at most once.
pub fn check_monotonic(trace: &Trace, operand: usize) -> Vec<ProtocolViolation> {
    let mut violations = Vec::new();
    let mut boundaries: Vec<u64> = trace.markers.iter().map(|m| m.time).collect();
    boundaries.sort_unstable();
    boundaries.dedup();
    boundaries.insert(0, trace.start_time);
    boundaries.push(u64::MAX);
    for (i, ts) in trace.transitions.iter().enumerate() {
        if ts.len() < 2 {
            continue;
        }
        for w in boundaries.windows(2) {
            let a = ts.partition_point(|&(t, _)| t < w[0]);
            let b = ts.partition_point(|&(t, _)| t < w[1]);
            if b - a > 1 {
                violations.push(ProtocolViolation {
                    kind: ViolationKind::NonMonotonic,
                    net: Some(NetId::new(i)),
                    signal: None,
                    time: ts[a + 1].0,
                    operand,
                });
            }
        }
    }
    violations
}

/// No dual-rail pair may ever hold its forbidden codeword (`{1,1}` under
/// AllZero, `{0,0}` under AllOne).
pub fn check_forbidden(
    trace: &Trace,
    binding: &DualRailBinding,
    operand: usize,
) -> Vec<ProtocolViolation> {
    let mut violations = Vec::new();
    for s in &binding.signals {
        if s.pos == s.neg {
            continue;
        }
        let forbidden = s.polarity.forbidden();
        let mut p = trace.initial[s.pos.index()];
        let mut n = trace.initial[s.neg.index()];
        if (p, n) == forbidden {
            violations.push(ProtocolViolation {
                kind: ViolationKind::ForbiddenState,
                net: Some(s.pos),
                signal: Some(s.name.clone()),
                time: trace.start_time,
                operand,
            });
            continue;
        }
        let pt = &trace.transitions[s.pos.index()];
        let nt = &trace.transitions[s.neg.index()];
        let (mut i, mut j) = (0, 0);
        while i < pt.len() || j < nt.len() {
            let tp = pt.get(i).map(|&(t, _)| t).unwrap_or(u64::MAX);
            let tn = nt.get(j).map(|&(t, _)| t).unwrap_or(u64::MAX);
            let t = if tp <= tn {
                p = pt[i].1;
                i += 1;
                tp
            } else {
                n = nt[j].1;
                j += 1;
                tn
            };
            if (p, n) == forbidden {
                violations.push(ProtocolViolation {
                    kind: ViolationKind::ForbiddenState,
                    net: Some(s.pos),
                    signal: Some(s.name.clone()),
                    time: t,
                    operand,
                });
                break;
            }
        }
    }
    violations
}

/// At most one of the given wires may be high at any instant.
pub fn check_one_hot(trace: &Trace, wires: &[NetId], operand: usize) -> Vec<ProtocolViolation> {
    let mut violations = Vec::new();
    let mut values: Vec<bool> = wires.iter().map(|n| trace.initial[n.index()]).collect();
    let mut events: Vec<(u64, usize, bool)> = Vec::new();
    for (k, n) in wires.iter().enumerate() {
        for &(t, v) in &trace.transitions[n.index()] {
            events.push((t, k, v));
        }
    }
    events.sort_unstable();
    if values.iter().filter(|&&v| v).count() > 1 {
        violations.push(ProtocolViolation {
            kind: ViolationKind::OneHotViolation,
            net: None,
            signal: None,
            time: trace.start_time,
            operand,
        });
        return violations;
    }
    for (t, k, v) in events {
        values[k] = v;
        if values.iter().filter(|&&v| v).count() > 1 {
            violations.push(ProtocolViolation {
                kind: ViolationKind::OneHotViolation,
                net: Some(wires[k]),
                signal: None,
                time: t,
                operand,
            });
            break;
        }
    }
    violations
}

/// Every PI must return to its spacer value before each new valid phase.
pub fn check_pi_reset(
    trace: &Trace,
    netlist: &Netlist,
    spacer: &[bool],
    operand: usize,
) -> Vec<ProtocolViolation> {
    let mut violations = Vec::new();
    for m in &trace.markers {
        if m.kind != PhaseKind::ValidApplied || m.time == trace.start_time {
            continue;
        }
        for &pi in netlist.pis() {
            if trace.value_at(pi, m.time.saturating_sub(1)) != spacer[pi.index()] {
                violations.push(ProtocolViolation {
                    kind: ViolationKind::MissingReset,
                    net: Some(pi),
                    signal: None,
                    time: m.time,
                    operand,
                });
            }
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// Four-phase handshake environment
// ---------------------------------------------------------------------------

/// Environment timing discipline for the return-to-spacer phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeMode {
    /// Wait for done to rise, apply spacer, wait for done to fall
    /// (the delayed-done reduced-CD discipline).
    DoneSignalled,
    /// Wait exactly the STA `t_int` bound after applying spacer (the
    /// environment-guaranteed grace period).
    OracleTimed,
}

/// One operand: feature vector plus the exclude matrix driven on the `e`
/// inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operand {
    pub f: Vec<bool>,
    pub e: Vec<Vec<bool>>,
}

impl Operand {
    pub fn from_config(f: Vec<bool>, config: &TmConfig) -> Self {
        Operand {
            f,
            e: config.exclude().to_vec(),
        }
    }
}

/// Durations are relative: `t_spcw` and `done_rise` to the valid
/// application, `t_cwsp` and `done_fall` to the spacer application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperandMeasurement {
    pub operand: usize,
    pub t_spcw: u64,
    pub t_cwsp: u64,
    pub done_rise: u64,
    pub done_fall: u64,
    pub outcome: ComparatorOutcome,
    /// Absolute time the spacer phase settled (last internal net at
    /// spacer), for CD-coverage checks.
    pub spacer_settle_abs: u64,
    /// Absolute done fall time.
    pub done_fall_abs: u64,
    /// Net transitions in this operand's window (switching-activity
    /// proxy).
    pub transitions: u64,
}

#[derive(Debug, Clone)]
pub struct HandshakeRun {
    pub measurements: Vec<OperandMeasurement>,
    pub violations: Vec<ProtocolViolation>,
    pub traces: Vec<Trace>,
}

#[derive(Debug, Clone, Copy)]
pub struct HandshakeOptions {
    pub keep_traces: bool,
    pub check: bool,
    pub sim: SimConfig,
}

impl Default for HandshakeOptions {
    fn default() -> Self {
        HandshakeOptions {
            keep_traces: false,
            check: true,
            sim: SimConfig::default(),
        }
    }
}

fn apply_operand(sim: &mut Simulator<'_>, bundle: &DatapathBundle, t: u64, op: Option<&Operand>) {
    let drive = |sim: &mut Simulator<'_>, pair: (NetId, NetId), v: Option<bool>| match v {
        Some(v) => {
            sim.schedule_pi(t, pair.0, v);
            sim.schedule_pi(t, pair.1, !v);
        }
        None => {
            sim.schedule_pi(t, pair.0, false);
            sim.schedule_pi(t, pair.1, false);
        }
    };
    match op {
        Some(op) => {
            for (m, &pair) in bundle.pi_f.iter().enumerate() {
                drive(sim, pair, Some(op.f[m]));
            }
            for (j, row) in bundle.pi_e.iter().enumerate() {
                for (k, &pair) in row.iter().enumerate() {
                    drive(sim, pair, Some(op.e[j][k]));
                }
            }
        }
        None => {
            for &pair in &bundle.pi_f {
                drive(sim, pair, None);
            }
            for row in &bundle.pi_e {
                for &pair in row {
                    drive(sim, pair, None);
                }
            }
        }
    }
}

fn trio_outcome(
    sim: &Simulator<'_>,
    bundle: &DatapathBundle,
    operand: usize,
) -> Result<ComparatorOutcome, SimError> {
    let g = sim.value(bundle.po_greater);
    let e = sim.value(bundle.po_equal);
    let l = sim.value(bundle.po_less);
    match (g, e, l) {
        (true, false, false) => Ok(ComparatorOutcome::Greater),
        (false, true, false) => Ok(ComparatorOutcome::Equal),
        (false, false, true) => Ok(ComparatorOutcome::Less),
        _ => Err(SimError::NoOutcome(operand)),
    }
}

/// Drives the four-phase protocol for each operand and records latency
/// measurements; the protocol checkers run on every operand window.
///
/// In both modes the environment additionally waits for full circuit
/// quiescence before a phase change, keeping half-phases disjoint so the
/// monotonicity checker is exact. At zero jitter the done edges dominate,
/// so the done-delay guarantee is exercised unmasked; `OracleTimed`
/// applies the next valid at exactly `spacer + t_int` without waiting for
/// quiescence, exercising the STA bound itself.
pub fn run_handshake(
    bundle: &DatapathBundle,
    operands: &[Operand],
    delay_model: &DelayModel,
    mode: HandshakeMode,
    options: HandshakeOptions,
) -> Result<HandshakeRun, SimError> {
    let netlist = &bundle.netlist;
    let t_int = match mode {
        HandshakeMode::OracleTimed => {
            let report = compute_timing(netlist, delay_model, TimingOptions::default())?;
            report.t_int
        }
        HandshakeMode::DoneSignalled => 0,
    };
    let mut sim = Simulator::new(netlist, delay_model, options.sim)?;
    let done = bundle.po_done;
    let spacer = &bundle.spacer;
    let po_wires = [bundle.po_greater, bundle.po_equal, bundle.po_less];

    let mut run = HandshakeRun {
        measurements: Vec::with_capacity(operands.len()),
        violations: Vec::new(),
        traces: Vec::new(),
    };
    let mut next_valid_at = sim.now() + 1;
    for (idx, op) in operands.iter().enumerate() {
        sim.take_trace(); // discard the previous operand's tail
        let valid_t = next_valid_at;
        // Assumption check: every net back at spacer before the new valid.
        if options.check {
            let dirty = netlist
                .net_ids()
                .find(|n| sim.value(*n) != spacer[n.index()]);
            if let Some(n) = dirty {
                run.violations.push(ProtocolViolation {
                    kind: ViolationKind::PrematureInput,
                    net: Some(n),
                    signal: None,
                    time: valid_t,
                    operand: idx,
                });
            }
        }
        apply_operand(&mut sim, bundle, valid_t, Some(op));
        sim.mark(valid_t, PhaseKind::ValidApplied, idx);
        let valid_quiet = sim.run_until_quiet()?.max(valid_t);

        let done_rise_abs = sim
            .trace()
            .edge_at_or_after(done, true, valid_t)
            .ok_or(SimError::DoneStuck(idx))?;
        let outcome = trio_outcome(&sim, bundle, idx)?;
        let po_valid_abs = po_wires
            .iter()
            .filter_map(|&w| sim.trace().edge_at_or_after(w, true, valid_t))
            .max()
            .ok_or(SimError::NoOutcome(idx))?;
        if done_rise_abs < po_valid_abs {
            // done must indicate spacer-to-valid completion on the POs
            run.violations.push(ProtocolViolation {
                kind: ViolationKind::PrematureInput,
                net: Some(done),
                signal: None,
                time: done_rise_abs,
                operand: idx,
            });
        }

        let spacer_t = valid_quiet.max(done_rise_abs) + 1;
        apply_operand(&mut sim, bundle, spacer_t, None);
        sim.mark(spacer_t, PhaseKind::SpacerApplied, idx);
        let spacer_quiet = sim.run_until_quiet()?.max(spacer_t);
        let done_fall_abs = sim
            .trace()
            .edge_at_or_after(done, false, spacer_t)
            .ok_or(SimError::DoneStuck(idx))?;
        // Reset measurements cover the datapath, not the deliberately
        // delayed done fall itself.
        let datapath_settle = sim
            .trace()
            .last_event_excluding(spacer_t, &[done])
            .unwrap_or(spacer_t)
            .max(spacer_t);

        next_valid_at = match mode {
            HandshakeMode::DoneSignalled => spacer_quiet.max(done_fall_abs) + 1,
            HandshakeMode::OracleTimed => (spacer_t + t_int).max(done_fall_abs + 1),
        };

        if options.check {
            let trace = sim.trace();
            run.violations.extend(check_monotonic(trace, idx));
            run.violations
                .extend(check_forbidden(trace, &bundle.binding, idx));
            run.violations.extend(check_one_hot(trace, &po_wires, idx));
            run.violations
                .extend(check_pi_reset(trace, netlist, spacer, idx));
        }
        let transitions: u64 = sim
            .trace()
            .transitions
            .iter()
            .map(|ts| ts.len() as u64)
            .sum();
        run.measurements.push(OperandMeasurement {
            operand: idx,
            t_spcw: po_valid_abs - valid_t,
            t_cwsp: datapath_settle - spacer_t,
            done_rise: done_rise_abs - valid_t,
            done_fall: done_fall_abs - spacer_t,
            outcome,
            spacer_settle_abs: datapath_settle,
            done_fall_abs,
            transitions,
        });
        if options.keep_traces {
            run.traces.push(sim.trace().clone());
        }
    }
    Ok(run)
}

// ---------------------------------------------------------------------------
// Operand sampling and latency distributions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Uniform feature vectors; exclude matrix fixed from the config.
    Uniform,
    /// Upper half of the features biased high, lower half biased low.
    MsbSkewed,
    /// Rejection-sample feature vectors whose vote counts tie.
    EqualCounts,
    /// Both the feature vector and the exclude matrix drawn uniformly.
    RandomFe,
}

pub struct OperandSampler {
    kind: SamplerKind,
    rng: StdRng,
}

impl OperandSampler {
    pub fn new(kind: SamplerKind, seed: u64) -> Self {
        OperandSampler {
            kind,
            rng: StdRng::seed_from_u64(seed),
        }
    }

    pub fn next(&mut self, config: &TmConfig) -> Operand {
        let features = config.features();
        match self.kind {
            SamplerKind::Uniform => {
                let f = (0..features).map(|_| self.rng.random()).collect();
                Operand::from_config(f, config)
            }
            SamplerKind::MsbSkewed => {
                let f = (0..features)
                    .map(|m| {
                        let p = if m >= features / 2 { 0.8 } else { 0.2 };
                        self.rng.random_bool(p)
                    })
                    .collect();
                Operand::from_config(f, config)
            }
            SamplerKind::EqualCounts => {
                for _ in 0..1000 {
                    let f: Vec<bool> = (0..features).map(|_| self.rng.random()).collect();
                    let r = crate::tm::infer(&f, config).expect("config sizes match");
                    if r.comparator_outcome == ComparatorOutcome::Equal {
                        return Operand::from_config(f, config);
                    }
                }
                let f = (0..features).map(|_| self.rng.random()).collect();
                Operand::from_config(f, config)
            }
            SamplerKind::RandomFe => {
                let f = (0..features).map(|_| self.rng.random()).collect();
                let e = (0..config.clauses())
                    .map(|_| (0..2 * features).map(|_| self.rng.random()).collect())
                    .collect();
                Operand { f, e }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub bin_width: u64,
    /// `(bin start, count)` for non-empty bins.
    pub bins: Vec<(u64, u64)>,
}

impl Histogram {
    pub fn from_values(values: &[u64], bin_width: u64) -> Self {
        let width = bin_width.max(1);
        let mut map: BTreeMap<u64, u64> = BTreeMap::new();
        for &v in values {
            *map.entry(v / width * width).or_insert(0) += 1;
        }
        Histogram {
            bin_width: width,
            bins: map.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatencyDistribution {
    pub latencies: Vec<u64>,
    pub mean: f64,
    pub max: u64,
    pub histogram: Histogram,
    pub violations: usize,
    pub outcomes: Vec<ComparatorOutcome>,
}

/// Runs `n` sampled handshakes and summarizes the spacer-to-valid latency
/// distribution.
pub fn measure_latency_distribution(
    bundle: &DatapathBundle,
    sampler: &mut OperandSampler,
    n: usize,
    delay_model: &DelayModel,
    mode: HandshakeMode,
    bin_width: u64,
) -> Result<LatencyDistribution, SimError> {
    let operands: Vec<Operand> = (0..n).map(|_| sampler.next(&bundle.config)).collect();
    let run = run_handshake(
        bundle,
        &operands,
        delay_model,
        mode,
        HandshakeOptions::default(),
    )?;
    let latencies: Vec<u64> = run.measurements.iter().map(|m| m.t_spcw).collect();
    let max = latencies.iter().copied().max().unwrap_or(0);
    let mean = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<u64>() as f64 / latencies.len() as f64
    };
    let histogram = Histogram::from_values(&latencies, bin_width);
    Ok(LatencyDistribution {
        latencies,
        mean,
        max,
        histogram,
        violations: run.violations.len(),
        outcomes: run.measurements.iter().map(|m| m.outcome).collect(),
    })
}

/// Measurements CSV: one row per operand.
pub fn measurements_csv(measurements: &[OperandMeasurement]) -> String {
    let mut out =
        String::from("operand_index,t_spcw_ps,t_cwsp_ps,done_rise_ps,done_fall_ps,outcome\n");
    for m in measurements {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.operand,
            m.t_spcw,
            m.t_cwsp,
            m.done_rise,
            m.done_fall,
            m.outcome.name()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{GateKind, NetlistBuilder};

    fn and2() -> Netlist {
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let c = b.named_net("b");
        let y = b.named_net("y");
        b.gate(GateKind::And2, &[a, c], y);
        b.pi(a);
        b.pi(c);
        b.po(y);
        b.build().unwrap()
    }

    #[test]
    fn single_gate_delay() {
        let n = and2();
        let mut model = DelayModel::nominal();
        model.defaults.insert("AND2".into(), sym(7));
        let stim = Stimulus {
            changes: vec![(0, n.pis()[0], true), (0, n.pis()[1], true)],
        };
        let trace = simulate(&n, &model, &stim, SimConfig::default()).unwrap();
        assert_eq!(trace.transitions[n.pos()[0].index()], vec![(7, true)]);
    }

    #[test]
    fn inverter_chain_accumulates_delay() {
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let x1 = b.net();
        let x2 = b.net();
        let y = b.named_net("y");
        b.gate(GateKind::Inv, &[a], x1);
        b.gate(GateKind::Inv, &[x1], x2);
        b.gate(GateKind::Inv, &[x2], y);
        b.pi(a);
        b.po(y);
        let n = b.build().unwrap();
        let mut model = DelayModel::nominal();
        model.defaults.insert("INV".into(), sym(5));
        let stim = Stimulus {
            changes: vec![(0, n.pis()[0], true)],
        };
        let trace = simulate(&n, &model, &stim, SimConfig::default()).unwrap();
        // y starts settled at 1 (a=0), falls 15 after the PI step.
        assert_eq!(trace.transitions[n.pos()[0].index()], vec![(15, false)]);
    }

    #[test]
    fn doubling_delays_doubles_timestamps() {
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let c = b.named_net("b");
        let t = b.net();
        let y = b.named_net("y");
        b.gate(GateKind::And2, &[a, c], t);
        b.gate(GateKind::Or2, &[t, a], y);
        b.pi(a);
        b.pi(c);
        b.po(y);
        let n = b.build().unwrap();
        let stim = Stimulus {
            changes: vec![(0, n.pis()[0], true), (0, n.pis()[1], true)],
        };
        let t1 = simulate(&n, &DelayModel::nominal(), &stim, SimConfig::default()).unwrap();
        let t2 = simulate(
            &n,
            &DelayModel::nominal().scaled(2.0),
            &stim,
            SimConfig::default(),
        )
        .unwrap();
        for (a_ts, b_ts) in t1.transitions.iter().zip(&t2.transitions) {
            assert_eq!(a_ts.len(), b_ts.len());
            for (&(ta, va), &(tb, vb)) in a_ts.iter().zip(b_ts) {
                assert_eq!(ta * 2, tb);
                assert_eq!(va, vb);
            }
        }
    }

    #[test]
    fn settled_values_match_zero_delay_oracle() {
        let n = and2();
        let stim = Stimulus {
            changes: vec![(0, n.pis()[0], true), (3, n.pis()[1], true)],
        };
        let trace = simulate(&n, &DelayModel::nominal(), &stim, SimConfig::default()).unwrap();
        let oracle = n.eval_zero_delay(&[true, true], false).unwrap();
        for net in n.net_ids() {
            assert_eq!(Some(trace.final_value(net)), oracle[net.index()].to_bool());
        }
    }

    #[test]
    fn jitter_is_reproducible() {
        let n = and2();
        let model = DelayModel::nominal().with_jitter(0.5, 1.5, 42);
        let d1 = model.resolve(&n).unwrap();
        let d2 = model.resolve(&n).unwrap();
        assert_eq!(d1, d2);
        let other = DelayModel::nominal().with_jitter(0.5, 1.5, 43);
        assert_ne!(d1, other.resolve(&n).unwrap());
    }

    #[test]
    fn glitch_flagged_as_non_monotonic() {
        let n = and2();
        let mut trace = Trace::new(0, vec![false; n.net_count()]);
        trace.markers.push(PhaseMarker {
            time: 0,
            kind: PhaseKind::ValidApplied,
            operand: 0,
        });
        // 0 -> 1 -> 0 inside one half-phase.
        trace.transitions[2] = vec![(5, true), (9, false)];
        let v = check_monotonic(&trace, 0);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::NonMonotonic);
    }

    #[test]
    fn forbidden_codeword_flagged() {
        use crate::dualrail::{BoundSignal, SpacerPolarity};
        let n = and2();
        let binding = DualRailBinding {
            signals: vec![BoundSignal {
                name: "s".into(),
                pos: n.pis()[0],
                neg: n.pis()[1],
                polarity: SpacerPolarity::AllZero,
            }],
            overall_inverting: None,
        };
        let mut trace = Trace::new(0, vec![false; n.net_count()]);
        trace.transitions[0] = vec![(2, true)];
        trace.transitions[1] = vec![(4, true)]; // both rails high: {1,1}
        let v = check_forbidden(&trace, &binding, 0);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::ForbiddenState);
        assert_eq!(v[0].time, 4);
    }

    #[test]
    fn one_hot_violation_flagged() {
        let n = and2();
        let wires = [n.pis()[0], n.pis()[1], n.pos()[0]];
        let mut trace = Trace::new(0, vec![false; n.net_count()]);
        trace.transitions[0] = vec![(2, true)];
        trace.transitions[2] = vec![(5, true)];
        let v = check_one_hot(&trace, &wires, 0);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].time, 5);
    }

    #[test]
    fn delay_model_json_round_trip() {
        let model = DelayModel::nominal().with_jitter(0.5, 1.5, 7).scaled(2.0);
        let parsed = DelayModel::from_json_str(&model.to_json_string()).unwrap();
        assert_eq!(model, parsed);
        assert!(
            DelayModel::from_json_str("{\"default\":{\"MAJ3\":{\"rise\":1,\"fall\":1}}}").is_err()
        );
    }

    #[test]
    fn transport_preemption_swallows_reversed_pulses() {
        // Rise slower than fall: a short input pulse schedules a rise that
        // the later (but earlier-landing) fall transaction preempts, so
        // the output never moves.
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let y = b.named_net("y");
        b.gate(GateKind::Buf, &[a], y);
        b.pi(a);
        b.po(y);
        let n = b.build().unwrap();
        let mut model = DelayModel::nominal();
        model.defaults.insert("BUF".into(), RiseFall { rise: 20, fall: 5 });
        let stim = Stimulus {
            changes: vec![(0, n.pis()[0], true), (2, n.pis()[0], false)],
        };
        let trace = simulate(&n, &model, &stim, SimConfig::default()).unwrap();
        assert!(trace.transitions[n.pos()[0].index()].is_empty());
        // A wide pulse passes through with per-edge delays.
        let stim = Stimulus {
            changes: vec![(0, n.pis()[0], true), (50, n.pis()[0], false)],
        };
        let trace = simulate(&n, &model, &stim, SimConfig::default()).unwrap();
        assert_eq!(
            trace.transitions[n.pos()[0].index()],
            vec![(20, true), (55, false)]
        );
    }

    #[test]
    fn c2_holds_under_timed_simulation() {
        let mut b = NetlistBuilder::new();
        let a = b.named_net("a");
        let c = b.named_net("b");
        let q = b.named_net("q");
        b.gate(GateKind::C2, &[a, c], q);
        b.pi(a);
        b.pi(c);
        b.po(q);
        let n = b.build().unwrap();
        let stim = Stimulus {
            changes: vec![
                (10, n.pis()[0], true),  // one input high: hold 0
                (50, n.pis()[1], true),  // both high: set
                (100, n.pis()[0], false), // one low: hold 1
                (150, n.pis()[1], false), // both low: reset
            ],
        };
        let trace = simulate(&n, &DelayModel::nominal(), &stim, SimConfig::default()).unwrap();
        // C2 nominal delay 30: set lands at 80, reset at 180.
        assert_eq!(
            trace.transitions[n.pos()[0].index()],
            vec![(80, true), (180, false)]
        );
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::from_values(&[0, 10, 19, 20, 55], 10);
        assert_eq!(h.bins, vec![(0, 1), (10, 2), (20, 1), (50, 1)]);
    }
}
