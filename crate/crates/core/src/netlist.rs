//! Gate-graph data model: construction, validation, and a zero-delay
//! functional evaluator used as the logic oracle for every mapped circuit.
//!
//! A [`Netlist`] is a directed gate graph over integer-identified nets with
//! ordered primary inputs and outputs. Every net has exactly one driver (a
//! gate output or a primary input), and the combinational subgraph — all
//! gates except [`GateKind::C2`] and [`GateKind::Delay`] — must be acyclic.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense identifier of a net; also its index into [`Netlist::nets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetId(u32);

impl NetId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn new(index: usize) -> Self {
        NetId(index as u32)
    }
}

impl fmt::Display for NetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Dense identifier of a gate; also its index into [`Netlist::gates`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GateId(u32);

impl GateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub(crate) fn new(index: usize) -> Self {
        GateId(index as u32)
    }
}

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

/// Unateness of a gate with respect to one input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unateness {
    /// Output is non-decreasing in the input.
    Positive,
    /// Output is non-increasing in the input.
    Negative,
    /// Neither (XOR-class gates).
    NonUnate,
}

/// The fixed gate library.
///
/// Maximum fan-in is 4. AOI/OAI are the complex cells used by the dual-rail
/// adder blocks; XOR2/XNOR2 exist only so that the legalization pass can
/// name and reject them. `Delay` is a transport element whose rise/fall
/// delays are part of the netlist itself (completion-detection done delay).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Inv,
    Buf,
    And2,
    And3,
    And4,
    Or2,
    Or3,
    Or4,
    Nand2,
    Nand3,
    Nand4,
    Nor2,
    Nor3,
    Nor4,
    /// `!((a & b) | c)`
    Aoi21,
    /// `!((a & b) | (c & d))`
    Aoi22,
    /// `!((a | b) & c)`
    Oai21,
    /// `!((a | b) & (c | d))`
    Oai22,
    /// Muller C-element: output goes 1 when both inputs are 1, 0 when both
    /// are 0, otherwise holds its previous value.
    C2,
    Xor2,
    Xnor2,
    /// Transport delay element; `rise`/`fall` are in time units and belong
    /// to the netlist, not the delay model.
    Delay { rise: u64, fall: u64 },
}

impl GateKind {
    pub fn arity(self) -> usize {
        use GateKind::*;
        match self {
            Inv | Buf | Delay { .. } => 1,
            And2 | Or2 | Nand2 | Nor2 | Xor2 | Xnor2 | C2 => 2,
            And3 | Or3 | Nand3 | Nor3 | Aoi21 | Oai21 => 3,
            And4 | Or4 | Nand4 | Nor4 | Aoi22 | Oai22 => 4,
        }
    }

    /// Unateness with respect to input `_input`; uniform across inputs for
    /// every kind in this library.
    pub fn unateness_of_input(self, _input: usize) -> Unateness {
        use GateKind::*;
        match self {
            Buf | Delay { .. } | And2 | And3 | And4 | Or2 | Or3 | Or4 | C2 => Unateness::Positive,
            Inv | Nand2 | Nand3 | Nand4 | Nor2 | Nor3 | Nor4 | Aoi21 | Aoi22 | Oai21 | Oai22 => {
                Unateness::Negative
            }
            Xor2 | Xnor2 => Unateness::NonUnate,
        }
    }

    pub fn is_unate(self) -> bool {
        !matches!(self, GateKind::Xor2 | GateKind::Xnor2)
    }

    /// True for logically inverting kinds (one inversion per input path).
    pub fn is_inverting(self) -> bool {
        self.unateness_of_input(0) == Unateness::Negative
    }

    /// C2 holds state across evaluations.
    pub fn is_sequential(self) -> bool {
        matches!(self, GateKind::C2)
    }

    /// Gates excluded from the combinational subgraph: cycles through these
    /// are legal.
    pub fn breaks_combinational_cycle(self) -> bool {
        matches!(self, GateKind::C2 | GateKind::Delay { .. })
    }

    /// The upper-case name used by the JSON format.
    pub fn name(self) -> &'static str {
        use GateKind::*;
        match self {
            Inv => "INV",
            Buf => "BUF",
            And2 => "AND2",
            And3 => "AND3",
            And4 => "AND4",
            Or2 => "OR2",
            Or3 => "OR3",
            Or4 => "OR4",
            Nand2 => "NAND2",
            Nand3 => "NAND3",
            Nand4 => "NAND4",
            Nor2 => "NOR2",
            Nor3 => "NOR3",
            Nor4 => "NOR4",
            Aoi21 => "AOI21",
            Aoi22 => "AOI22",
            Oai21 => "OAI21",
            Oai22 => "OAI22",
            C2 => "C2",
            Xor2 => "XOR2",
            Xnor2 => "XNOR2",
            Delay { .. } => "DELAY",
        }
    }

    /// Combinational function over ternary values. `C2` is handled by the
    /// evaluators, not here.
    pub fn eval(self, inputs: &[LogicValue]) -> LogicValue {
        use GateKind::*;
        debug_assert_eq!(inputs.len(), self.arity());
        let and_all = |vs: &[LogicValue]| vs.iter().copied().fold(LogicValue::One, LogicValue::and);
        let or_all = |vs: &[LogicValue]| vs.iter().copied().fold(LogicValue::Zero, LogicValue::or);
        match self {
            Inv => inputs[0].not(),
            Buf | Delay { .. } => inputs[0],
            And2 | And3 | And4 => and_all(inputs),
            Or2 | Or3 | Or4 => or_all(inputs),
            Nand2 | Nand3 | Nand4 => and_all(inputs).not(),
            Nor2 | Nor3 | Nor4 => or_all(inputs).not(),
            Aoi21 => inputs[0].and(inputs[1]).or(inputs[2]).not(),
            Aoi22 => inputs[0].and(inputs[1]).or(inputs[2].and(inputs[3])).not(),
            Oai21 => inputs[0].or(inputs[1]).and(inputs[2]).not(),
            Oai22 => inputs[0].or(inputs[1]).and(inputs[2].or(inputs[3])).not(),
            Xor2 => inputs[0].xor(inputs[1]),
            Xnor2 => inputs[0].xor(inputs[1]).not(),
            C2 => unreachable!("C2 is evaluated with state by the evaluators"),
        }
    }

    pub fn all_kinds() -> &'static [GateKind] {
        use GateKind::*;
        &[
            Inv, Buf, And2, And3, And4, Or2, Or3, Or4, Nand2, Nand3, Nand4, Nor2, Nor3, Nor4,
            Aoi21, Aoi22, Oai21, Oai22, C2, Xor2, Xnor2,
        ]
    }
}

/// Ternary simulation value. `X` is unknown/uninitialized and propagates
/// pessimistically (`AND(0,X)=0`, `AND(1,X)=X`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogicValue {
    Zero,
    One,
    X,
}

impl LogicValue {
    pub fn from_bool(b: bool) -> Self {
        if b {
            LogicValue::One
        } else {
            LogicValue::Zero
        }
    }

    pub fn to_bool(self) -> Option<bool> {
        match self {
            LogicValue::Zero => Some(false),
            LogicValue::One => Some(true),
            LogicValue::X => None,
        }
    }

    pub fn and(self, other: LogicValue) -> LogicValue {
        use LogicValue::*;
        match (self, other) {
            (Zero, _) | (_, Zero) => Zero,
            (One, One) => One,
            _ => X,
        }
    }

    pub fn or(self, other: LogicValue) -> LogicValue {
        use LogicValue::*;
        match (self, other) {
            (One, _) | (_, One) => One,
            (Zero, Zero) => Zero,
            _ => X,
        }
    }

    pub fn not(self) -> LogicValue {
        use LogicValue::*;
        match self {
            Zero => One,
            One => Zero,
            X => X,
        }
    }

    pub fn xor(self, other: LogicValue) -> LogicValue {
        use LogicValue::*;
        match (self, other) {
            (X, _) | (_, X) => X,
            (a, b) => LogicValue::from_bool(a != b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    pub inputs: Vec<NetId>,
    pub output: NetId,
}

/// What drives a net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    Pi,
    Gate(GateId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("net {net} has multiple drivers")]
    MultipleDrivers { net: NetId },
    #[error("net {net} has no driver")]
    FloatingNet { net: NetId },
    #[error("gate {gate} ({kind}): expected {expected} inputs, got {got}")]
    ArityMismatch {
        gate: GateId,
        kind: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("combinational cycle through gate {gate}")]
    CombinationalCycle { gate: GateId },
    #[error("primary input listed twice: net {net}")]
    DuplicatePi { net: NetId },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no fixed point after {iterations} sweeps: unstable sequential loop")]
    Oscillation { iterations: usize },
    #[error("expected {expected} primary input values, got {got}")]
    PiCountMismatch { expected: usize, got: usize },
    #[error("netlist is not purely combinational (contains {gate})")]
    NotCombinational { gate: GateId },
}

/// Immutable gate graph. Construct with [`NetlistBuilder`].
#[derive(Debug, Clone)]
pub struct Netlist {
    nets: Vec<Net>,
    gates: Vec<Gate>,
    pis: Vec<NetId>,
    pos: Vec<NetId>,
    meta: BTreeMap<String, String>,
    /// Driver of each net.
    driver: Vec<Driver>,
    /// Gates reading each net.
    fanout: Vec<Vec<GateId>>,
    /// Combinational gates in topological order (C2/DELAY excluded).
    topo: Vec<GateId>,
    /// C2 and DELAY gates, in id order.
    breakers: Vec<GateId>,
}

impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.nets == other.nets
            && self.gates == other.gates
            && self.pis == other.pis
            && self.pos == other.pos
            && self.meta == other.meta
    }
}

impl Netlist {
    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn gate(&self, id: GateId) -> &Gate {
        &self.gates[id.index()]
    }

    pub fn net(&self, id: NetId) -> &Net {
        &self.nets[id.index()]
    }

    pub fn net_count(&self) -> usize {
        self.nets.len()
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    pub fn pis(&self) -> &[NetId] {
        &self.pis
    }

    pub fn pos(&self) -> &[NetId] {
        &self.pos
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn driver(&self, net: NetId) -> Driver {
        self.driver[net.index()]
    }

    pub fn fanout(&self, net: NetId) -> &[GateId] {
        &self.fanout[net.index()]
    }

    /// Combinational gates in topological order.
    pub fn topo_order(&self) -> &[GateId] {
        &self.topo
    }

    pub fn net_ids(&self) -> impl Iterator<Item = NetId> {
        (0..self.nets.len()).map(NetId::new)
    }

    pub fn gate_ids(&self) -> impl Iterator<Item = GateId> {
        (0..self.gates.len()).map(GateId::new)
    }

    /// Display name of a net: its declared name or `n<id>`.
    pub fn net_label(&self, id: NetId) -> String {
        match &self.nets[id.index()].name {
            Some(n) => n.clone(),
            None => format!("{id}"),
        }
    }

    /// Lists every non-unate gate. An empty list means the netlist is legal
    /// input for dual-rail mapping.
    pub fn check_unate_only(&self) -> Vec<GateId> {
        self.gate_ids()
            .filter(|&g| !self.gates[g.index()].kind.is_unate())
            .collect()
    }

    /// Fixed-point zero-delay evaluation.
    ///
    /// C2 outputs start at `c2_initial` and settle per the hold rule. The
    /// sweep bound is `2 * gate_count + 4`; exceeding it reports
    /// [`EvalError::Oscillation`]. For purely combinational netlists the
    /// result equals single-pass topological evaluation.
    pub fn eval_zero_delay(
        &self,
        pi_values: &[bool],
        c2_initial: bool,
    ) -> Result<Vec<LogicValue>, EvalError> {
        if pi_values.len() != self.pis.len() {
            return Err(EvalError::PiCountMismatch {
                expected: self.pis.len(),
                got: pi_values.len(),
            });
        }
        let mut values = vec![LogicValue::X; self.nets.len()];
        for (&net, &v) in self.pis.iter().zip(pi_values) {
            values[net.index()] = LogicValue::from_bool(v);
        }
        for &g in &self.breakers {
            if self.gates[g.index()].kind.is_sequential() {
                values[self.gates[g.index()].output.index()] = LogicValue::from_bool(c2_initial);
            }
        }

        let bound = 2 * self.gates.len() + 4;
        let mut ins: Vec<LogicValue> = Vec::with_capacity(4);
        for _ in 0..bound {
            let mut changed = false;
            for &g in self.topo.iter().chain(&self.breakers) {
                let gate = &self.gates[g.index()];
                ins.clear();
                ins.extend(gate.inputs.iter().map(|n| values[n.index()]));
                let out = gate.output.index();
                let new = match gate.kind {
                    GateKind::C2 => c2_next(ins[0], ins[1], values[out]),
                    kind => kind.eval(&ins),
                };
                if new != values[out] {
                    values[out] = new;
                    changed = true;
                }
            }
            if !changed {
                return Ok(values);
            }
        }
        Err(EvalError::Oscillation { iterations: bound })
    }

    /// Single-pass topological evaluation. Only valid for netlists without
    /// C2 gates and without cycles through DELAY elements; DELAY passes its
    /// input through.
    pub fn eval_topological(&self, pi_values: &[bool]) -> Result<Vec<LogicValue>, EvalError> {
        if pi_values.len() != self.pis.len() {
            return Err(EvalError::PiCountMismatch {
                expected: self.pis.len(),
                got: pi_values.len(),
            });
        }
        if let Some(&g) = self
            .breakers
            .iter()
            .find(|&&g| self.gates[g.index()].kind.is_sequential())
        {
            return Err(EvalError::NotCombinational { gate: g });
        }
        let order = self
            .topo_order_with_delays()
            .map_err(|gate| EvalError::NotCombinational { gate })?;
        let mut values = vec![LogicValue::X; self.nets.len()];
        for (&net, &v) in self.pis.iter().zip(pi_values) {
            values[net.index()] = LogicValue::from_bool(v);
        }
        let mut ins: Vec<LogicValue> = Vec::with_capacity(4);
        for g in order {
            let gate = &self.gates[g.index()];
            ins.clear();
            ins.extend(gate.inputs.iter().map(|n| values[n.index()]));
            values[gate.output.index()] = gate.kind.eval(&ins);
        }
        Ok(values)
    }

    /// Topological order over all gates treating DELAY as combinational.
    /// Errors with an offending gate if a cycle passes through a DELAY.
    pub(crate) fn topo_order_with_delays(&self) -> Result<Vec<GateId>, GateId> {
        topo_sort(&self.gates, self.nets.len(), &self.pis, |_| true)
    }

    pub fn po_values(&self, values: &[LogicValue]) -> Vec<LogicValue> {
        self.pos.iter().map(|n| values[n.index()]).collect()
    }
}

fn c2_next(a: LogicValue, b: LogicValue, current: LogicValue) -> LogicValue {
    use LogicValue::*;
    match (a, b) {
        (One, One) => One,
        (Zero, Zero) => Zero,
        (One, X) | (X, One) => {
            if current == One {
                One
            } else {
                X
            }
        }
        (Zero, X) | (X, Zero) => {
            if current == Zero {
                Zero
            } else {
                X
            }
        }
        (X, X) => X,
        _ => current,
    }
}

/// Kahn topological sort over the gates selected by `include`, using
/// net-mediated gate-to-gate edges. Returns `Err(gate)` naming a gate on a
/// cycle.
fn topo_sort(
    gates: &[Gate],
    net_count: usize,
    pis: &[NetId],
    include: impl Fn(&Gate) -> bool,
) -> Result<Vec<GateId>, GateId> {
    let mut driver_gate: Vec<Option<usize>> = vec![None; net_count];
    let selected: Vec<usize> = gates
        .iter()
        .enumerate()
        .filter(|(_, g)| include(g))
        .map(|(i, _)| i)
        .collect();
    for &i in &selected {
        driver_gate[gates[i].output.index()] = Some(i);
    }
    let mut ready_net = vec![false; net_count];
    for &pi in pis {
        ready_net[pi.index()] = true;
    }
    // Nets driven by excluded gates (or by nothing) count as sources here.
    for (n, d) in driver_gate.iter().enumerate() {
        if d.is_none() {
            ready_net[n] = true;
        }
    }
    let mut indeg: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in &selected {
        let deg = gates[i]
            .inputs
            .iter()
            .filter(|n| !ready_net[n.index()])
            .count();
        indeg.insert(i, deg);
    }
    let mut queue: Vec<usize> = indeg
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&i, _)| i)
        .collect();
    let mut fanout_gates: Vec<Vec<usize>> = vec![Vec::new(); net_count];
    for &i in &selected {
        for input in &gates[i].inputs {
            fanout_gates[input.index()].push(i);
        }
    }
    let mut order = Vec::with_capacity(selected.len());
    let mut head = 0;
    while head < queue.len() {
        let i = queue[head];
        head += 1;
        order.push(GateId::new(i));
        for &consumer in &fanout_gates[gates[i].output.index()] {
            let d = indeg.get_mut(&consumer).unwrap();
            if *d > 0 {
                *d -= 1;
                if *d == 0 {
                    queue.push(consumer);
                }
            }
        }
    }
    if order.len() != selected.len() {
        let stuck = indeg
            .iter()
            .filter(|(_, &d)| d > 0)
            .map(|(&i, _)| i)
            .min()
            .unwrap();
        return Err(GateId::new(stuck));
    }
    Ok(order)
}

/// Incremental netlist constructor. Validation happens in [`Self::build`].
#[derive(Debug, Default, Clone)]
pub struct NetlistBuilder {
    nets: Vec<Net>,
    gates: Vec<Gate>,
    pis: Vec<NetId>,
    pos: Vec<NetId>,
    meta: BTreeMap<String, String>,
}

impl NetlistBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn net(&mut self) -> NetId {
        let id = NetId::new(self.nets.len());
        self.nets.push(Net { name: None });
        id
    }

    pub fn named_net(&mut self, name: impl Into<String>) -> NetId {
        let id = NetId::new(self.nets.len());
        self.nets.push(Net {
            name: Some(name.into()),
        });
        id
    }

    pub fn gate(&mut self, kind: GateKind, inputs: &[NetId], output: NetId) -> GateId {
        let id = GateId::new(self.gates.len());
        self.gates.push(Gate {
            kind,
            inputs: inputs.to_vec(),
            output,
        });
        id
    }

    pub fn pi(&mut self, net: NetId) {
        self.pis.push(net);
    }

    pub fn po(&mut self, net: NetId) {
        self.pos.push(net);
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn net_count(&self) -> usize {
        self.nets.len()
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Validates and freezes the netlist: arity checks, exactly one driver
    /// per net, no floating nets, and an acyclic combinational subgraph
    /// (topological indices assigned here).
    pub fn build(self) -> Result<Netlist, BuildError> {
        let NetlistBuilder {
            nets,
            gates,
            pis,
            pos,
            meta,
        } = self;

        for (i, gate) in gates.iter().enumerate() {
            let expected = gate.kind.arity();
            if gate.inputs.len() != expected {
                return Err(BuildError::ArityMismatch {
                    gate: GateId::new(i),
                    kind: gate.kind.name(),
                    expected,
                    got: gate.inputs.len(),
                });
            }
        }

        let mut driver: Vec<Option<Driver>> = vec![None; nets.len()];
        for (i, &pi) in pis.iter().enumerate() {
            if driver[pi.index()].is_some() {
                // A net listed as PI twice, or a PI also driven by a gate
                // further down; disambiguate for the common case.
                if pis[..i].contains(&pi) {
                    return Err(BuildError::DuplicatePi { net: pi });
                }
                return Err(BuildError::MultipleDrivers { net: pi });
            }
            driver[pi.index()] = Some(Driver::Pi);
        }
        for (i, gate) in gates.iter().enumerate() {
            let slot = &mut driver[gate.output.index()];
            if slot.is_some() {
                return Err(BuildError::MultipleDrivers { net: gate.output });
            }
            *slot = Some(Driver::Gate(GateId::new(i)));
        }
        let driver: Vec<Driver> = driver
            .into_iter()
            .enumerate()
            .map(|(n, d)| d.ok_or(BuildError::FloatingNet { net: NetId::new(n) }))
            .collect::<Result<_, _>>()?;

        let topo = topo_sort(&gates, nets.len(), &pis, |g| {
            !g.kind.breaks_combinational_cycle()
        })
        .map_err(|gate| BuildError::CombinationalCycle { gate })?;
        let breakers: Vec<GateId> = gates
            .iter()
            .enumerate()
            .filter(|(_, g)| g.kind.breaks_combinational_cycle())
            .map(|(i, _)| GateId::new(i))
            .collect();

        let mut fanout: Vec<Vec<GateId>> = vec![Vec::new(); nets.len()];
        for (i, gate) in gates.iter().enumerate() {
            for input in &gate.inputs {
                fanout[input.index()].push(GateId::new(i));
            }
        }

        Ok(Netlist {
            nets,
            gates,
            pis,
            pos,
            meta,
            driver,
            fanout,
            topo,
            breakers,
        })
    }
}

// ---------------------------------------------------------------------------
// JSON file format
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown gate kind {0:?}")]
    UnknownKind(String),
    #[error("duplicate {what} id {id}")]
    DuplicateId { what: &'static str, id: u32 },
    #[error("gate {id}: reference to undeclared net {net}")]
    UndeclaredNet { id: u32, net: u32 },
    #[error("gate {id}: DELAY requires a delay field")]
    MissingDelay { id: u32 },
    #[error("gate {id}: delay field is only valid on DELAY gates")]
    UnexpectedDelay { id: u32 },
    #[error(transparent)]
    Build(#[from] BuildError),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetlistFile {
    nets: Vec<NetEntry>,
    gates: Vec<GateEntry>,
    pis: Vec<u32>,
    pos: Vec<u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetEntry {
    id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateEntry {
    id: u32,
    kind: String,
    inputs: Vec<u32>,
    output: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delay: Option<DelaySpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelaySpec {
    rise: u64,
    fall: u64,
}

fn kind_from_name(name: &str, delay: Option<&DelaySpec>) -> Option<GateKind> {
    use GateKind::*;
    Some(match name {
        "INV" => Inv,
        "BUF" => Buf,
        "AND2" => And2,
        "AND3" => And3,
        "AND4" => And4,
        "OR2" => Or2,
        "OR3" => Or3,
        "OR4" => Or4,
        "NAND2" => Nand2,
        "NAND3" => Nand3,
        "NAND4" => Nand4,
        "NOR2" => Nor2,
        "NOR3" => Nor3,
        "NOR4" => Nor4,
        "AOI21" => Aoi21,
        "AOI22" => Aoi22,
        "OAI21" => Oai21,
        "OAI22" => Oai22,
        "C2" => C2,
        "XOR2" => Xor2,
        "XNOR2" => Xnor2,
        "DELAY" => Delay {
            rise: delay?.rise,
            fall: delay?.fall,
        },
        _ => return None,
    })
}

impl Netlist {
    pub fn to_json(&self) -> serde_json::Value {
        let file = NetlistFile {
            nets: self
                .nets
                .iter()
                .enumerate()
                .map(|(i, n)| NetEntry {
                    id: i as u32,
                    name: n.name.clone(),
                })
                .collect(),
            gates: self
                .gates
                .iter()
                .enumerate()
                .map(|(i, g)| GateEntry {
                    id: i as u32,
                    kind: g.kind.name().to_string(),
                    inputs: g.inputs.iter().map(|n| n.index() as u32).collect(),
                    output: g.output.index() as u32,
                    delay: match g.kind {
                        GateKind::Delay { rise, fall } => Some(DelaySpec { rise, fall }),
                        _ => None,
                    },
                })
                .collect(),
            pis: self.pis.iter().map(|n| n.index() as u32).collect(),
            pos: self.pos.iter().map(|n| n.index() as u32).collect(),
            meta: self.meta.clone(),
        };
        serde_json::to_value(file).expect("netlist serialization cannot fail")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("netlist serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Netlist, FormatError> {
        let file: NetlistFile = serde_json::from_str(s)?;
        Self::from_file(file)
    }

    pub fn from_json(v: serde_json::Value) -> Result<Netlist, FormatError> {
        let file: NetlistFile = serde_json::from_value(v)?;
        Self::from_file(file)
    }

    fn from_file(file: NetlistFile) -> Result<Netlist, FormatError> {
        // Net ids may be sparse in hand-written files; remap in ascending
        // id order to dense indices.
        let mut net_entries = file.nets;
        net_entries.sort_by_key(|n| n.id);
        let mut net_map: BTreeMap<u32, NetId> = BTreeMap::new();
        let mut builder = NetlistBuilder::new();
        for entry in &net_entries {
            if net_map.contains_key(&entry.id) {
                return Err(FormatError::DuplicateId {
                    what: "net",
                    id: entry.id,
                });
            }
            let id = match &entry.name {
                Some(name) => builder.named_net(name.clone()),
                None => builder.net(),
            };
            net_map.insert(entry.id, id);
        }
        let lookup = |gate_id: u32, raw: u32| -> Result<NetId, FormatError> {
            net_map.get(&raw).copied().ok_or(FormatError::UndeclaredNet {
                id: gate_id,
                net: raw,
            })
        };
        let mut gate_entries = file.gates;
        gate_entries.sort_by_key(|g| g.id);
        let mut seen = std::collections::BTreeSet::new();
        for entry in &gate_entries {
            if !seen.insert(entry.id) {
                return Err(FormatError::DuplicateId {
                    what: "gate",
                    id: entry.id,
                });
            }
            let kind = kind_from_name(&entry.kind, entry.delay.as_ref())
                .ok_or_else(|| FormatError::UnknownKind(entry.kind.clone()))?;
            if entry.delay.is_some() && !matches!(kind, GateKind::Delay { .. }) {
                return Err(FormatError::UnexpectedDelay { id: entry.id });
            }
            if entry.kind == "DELAY" && entry.delay.is_none() {
                return Err(FormatError::MissingDelay { id: entry.id });
            }
            let inputs = entry
                .inputs
                .iter()
                .map(|&n| lookup(entry.id, n))
                .collect::<Result<Vec<_>, _>>()?;
            let output = lookup(entry.id, entry.output)?;
            builder.gate(kind, &inputs, output);
        }
        for &pi in &file.pis {
            let net = net_map
                .get(&pi)
                .copied()
                .ok_or(FormatError::UndeclaredNet { id: u32::MAX, net: pi })?;
            builder.pi(net);
        }
        for &po in &file.pos {
            let net = net_map
                .get(&po)
                .copied()
                .ok_or(FormatError::UndeclaredNet { id: u32::MAX, net: po })?;
            builder.po(net);
        }
        for (k, v) in file.meta {
            builder.meta(k, v);
        }
        Ok(builder.build()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn and2_netlist() -> Netlist {
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
    fn minimal_and2_builds() {
        let n = and2_netlist();
        assert_eq!(n.gate_count(), 1);
        assert_eq!(n.pis().len(), 2);
        assert_eq!(n.pos().len(), 1);
    }

    #[test]
    fn and2_truth_table() {
        let n = and2_netlist();
        for (a, b, y) in [
            (false, false, false),
            (false, true, false),
            (true, false, false),
            (true, true, true),
        ] {
            let vals = n.eval_zero_delay(&[a, b], false).unwrap();
            assert_eq!(n.po_values(&vals), vec![LogicValue::from_bool(y)]);
        }
    }

    #[test]
    fn multiple_drivers_rejected() {
        let mut b = NetlistBuilder::new();
        let a = b.net();
        let y = b.net();
        b.gate(GateKind::Inv, &[a], y);
        b.gate(GateKind::Buf, &[a], y);
        b.pi(a);
        b.po(y);
        assert_eq!(b.build().unwrap_err(), BuildError::MultipleDrivers { net: y });
    }

    #[test]
    fn floating_net_rejected() {
        let mut b = NetlistBuilder::new();
        let a = b.net();
        let y = b.net();
        let dangling = b.net();
        b.gate(GateKind::And2, &[a, dangling], y);
        b.pi(a);
        b.po(y);
        assert_eq!(
            b.build().unwrap_err(),
            BuildError::FloatingNet { net: dangling }
        );
    }

    #[test]
    fn self_loop_is_combinational_cycle() {
        let mut b = NetlistBuilder::new();
        let y = b.net();
        let g = b.gate(GateKind::Inv, &[y], y);
        b.po(y);
        assert_eq!(
            b.build().unwrap_err(),
            BuildError::CombinationalCycle { gate: g }
        );
    }

    #[test]
    fn arity_mismatch_rejected() {
        let mut b = NetlistBuilder::new();
        let a = b.net();
        let y = b.net();
        b.gate(GateKind::And3, &[a, a], y);
        b.pi(a);
        b.po(y);
        assert!(matches!(
            b.build().unwrap_err(),
            BuildError::ArityMismatch { expected: 3, got: 2, .. }
        ));
    }

    #[test]
    fn c2_holds_sets_and_resets() {
        let mut b = NetlistBuilder::new();
        let a = b.net();
        let c = b.net();
        let y = b.net();
        b.gate(GateKind::C2, &[a, c], y);
        b.pi(a);
        b.pi(c);
        b.po(y);
        let n = b.build().unwrap();
        // (1,0) holds the initial state.
        let vals = n.eval_zero_delay(&[true, false], false).unwrap();
        assert_eq!(n.po_values(&vals)[0], LogicValue::Zero);
        let vals = n.eval_zero_delay(&[true, false], true).unwrap();
        assert_eq!(n.po_values(&vals)[0], LogicValue::One);
        // (1,1) sets, (0,0) resets, regardless of initial state.
        let vals = n.eval_zero_delay(&[true, true], false).unwrap();
        assert_eq!(n.po_values(&vals)[0], LogicValue::One);
        let vals = n.eval_zero_delay(&[false, false], true).unwrap();
        assert_eq!(n.po_values(&vals)[0], LogicValue::Zero);
    }

    #[test]
    fn unstable_c2_loop_detected_as_oscillation() {
        // C2 with both inputs tied to the inverse of its own output: the
        // defined initial state keeps flipping, so no fixed point exists.
        let mut b = NetlistBuilder::new();
        let q = b.net();
        let i = b.net();
        b.gate(GateKind::C2, &[i, i], q);
        b.gate(GateKind::Inv, &[q], i);
        b.po(q);
        let n = b.build().unwrap();
        assert!(matches!(
            n.eval_zero_delay(&[], false),
            Err(EvalError::Oscillation { .. })
        ));
    }

    #[test]
    fn unate_check_flags_xor_only() {
        let mut b = NetlistBuilder::new();
        let a = b.net();
        let c = b.net();
        let x = b.net();
        let y = b.net();
        b.gate(GateKind::Xor2, &[a, c], x);
        let g_aoi = b.gate(GateKind::Aoi21, &[a, c, x], y);
        b.pi(a);
        b.pi(c);
        b.po(y);
        let n = b.build().unwrap();
        let violations = n.check_unate_only();
        assert_eq!(violations.len(), 1);
        assert_ne!(violations[0], g_aoi);
        assert_eq!(n.gate(violations[0]).kind, GateKind::Xor2);
    }

    #[test]
    fn aoi_oai_functions() {
        use LogicValue::*;
        // AOI21(1,1,0) = !(1|0) = 0 ; AOI21(0,1,0) = 1
        assert_eq!(GateKind::Aoi21.eval(&[One, One, Zero]), Zero);
        assert_eq!(GateKind::Aoi21.eval(&[Zero, One, Zero]), One);
        // OAI22(0,1,1,0) = !((0|1)&(1|0)) = 0
        assert_eq!(GateKind::Oai22.eval(&[Zero, One, One, Zero]), Zero);
        // X pessimism: AND(0,X)=0, AND(1,X)=X
        assert_eq!(Zero.and(X), Zero);
        assert_eq!(One.and(X), X);
        assert_eq!(One.or(X), One);
        assert_eq!(Zero.or(X), X);
    }

    #[test]
    fn json_round_trip() {
        let n = and2_netlist();
        let parsed = Netlist::from_json_str(&n.to_json_string()).unwrap();
        assert_eq!(n, parsed);
    }

    #[test]
    fn json_rejects_unknown_fields_and_kinds() {
        let bad = r#"{"nets":[{"id":0}],"gates":[],"pis":[0],"pos":[0],"bogus":1}"#;
        assert!(Netlist::from_json_str(bad).is_err());
        let bad_kind = r#"{"nets":[{"id":0},{"id":1}],
            "gates":[{"id":0,"kind":"MAJ3","inputs":[0],"output":1}],
            "pis":[0],"pos":[1]}"#;
        assert!(matches!(
            Netlist::from_json_str(bad_kind),
            Err(FormatError::UnknownKind(_))
        ));
    }

    #[test]
    fn json_sparse_ids_remap() {
        let sparse = r#"{"nets":[{"id":10,"name":"a"},{"id":20,"name":"b"},{"id":30,"name":"y"}],
            "gates":[{"id":5,"kind":"OR2","inputs":[10,20],"output":30}],
            "pis":[10,20],"pos":[30]}"#;
        let n = Netlist::from_json_str(sparse).unwrap();
        assert_eq!(n.gate_count(), 1);
        let vals = n.eval_zero_delay(&[false, true], false).unwrap();
        assert_eq!(n.po_values(&vals)[0], LogicValue::One);
    }

    #[test]
    fn topological_and_fixed_point_agree_on_combinational() {
        let mut b = NetlistBuilder::new();
        let a = b.net();
        let c = b.net();
        let d = b.net();
        let t = b.net();
        let y = b.net();
        b.gate(GateKind::And2, &[a, c], t);
        b.gate(GateKind::Or2, &[t, d], y);
        b.pi(a);
        b.pi(c);
        b.pi(d);
        b.po(y);
        let n = b.build().unwrap();
        for bits in 0..8u32 {
            let pis: Vec<bool> = (0..3).map(|i| bits & (1 << i) != 0).collect();
            assert_eq!(
                n.eval_zero_delay(&pis, false).unwrap(),
                n.eval_topological(&pis).unwrap()
            );
        }
    }
}
