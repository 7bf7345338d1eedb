//! Compiler passes from single-rail unate netlists to dual-rail netlists:
//! direct mapping, negative-gate optimization, spacer-polarity analysis,
//! and spacer-inverter insertion.
//!
//! Encoding: logical 0 is `{pos=0, neg=1}`, logical 1 is `{pos=1, neg=0}`.
//! The spacer is `{0,0}` (AllZero) or `{1,1}` (AllOne) per signal; the
//! remaining state is forbidden. An inverter in the source becomes a rail
//! swap, so inverter chains alias the same physical rail pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{
    BuildError, Driver, EvalError, GateId, GateKind, NetId, Netlist, NetlistBuilder,
};

/// Spacer polarity of one dual-rail signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpacerPolarity {
    /// Spacer is `{0,0}`; codeword `{1,1}` is forbidden.
    #[serde(rename = "ALL0")]
    AllZero,
    /// Spacer is `{1,1}`; codeword `{0,0}` is forbidden.
    #[serde(rename = "ALL1")]
    AllOne,
}

impl SpacerPolarity {
    pub fn flipped(self) -> Self {
        match self {
            SpacerPolarity::AllZero => SpacerPolarity::AllOne,
            SpacerPolarity::AllOne => SpacerPolarity::AllZero,
        }
    }

    /// The spacer value each rail holds.
    pub fn rail_value(self) -> bool {
        matches!(self, SpacerPolarity::AllOne)
    }

    /// The forbidden codeword `(pos, neg)`.
    pub fn forbidden(self) -> (bool, bool) {
        match self {
            SpacerPolarity::AllZero => (true, true),
            SpacerPolarity::AllOne => (false, false),
        }
    }
}

/// One logical signal bound to its rail pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundSignal {
    pub name: String,
    pub pos: NetId,
    pub neg: NetId,
    pub polarity: SpacerPolarity,
}

/// Maps each logical signal to `(positive rail, negative rail, spacer)`.
///
/// Rail pairs are distinct per signal except for inverter aliases, which
/// share a swapped pair with their source (an inverter chain of length two
/// yields the identity binding).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DualRailBinding {
    pub signals: Vec<BoundSignal>,
    /// Whether the block flips spacer polarity from its PIs to its POs;
    /// `None` when mixed or not yet analyzed.
    pub overall_inverting: Option<bool>,
}

impl DualRailBinding {
    pub fn find(&self, name: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.name == name)
    }

    pub fn signal(&self, index: usize) -> &BoundSignal {
        &self.signals[index]
    }

    /// Signals whose rails are both primary inputs of `netlist`.
    pub fn pi_signals(&self, netlist: &Netlist) -> Vec<usize> {
        let pi_set: std::collections::BTreeSet<NetId> = netlist.pis().iter().copied().collect();
        self.signals
            .iter()
            .enumerate()
            .filter(|(_, s)| pi_set.contains(&s.pos) && pi_set.contains(&s.neg))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<BindingEntry> = self
            .signals
            .iter()
            .map(|s| BindingEntry {
                signal: s.name.clone(),
                pos: s.pos.index() as u32,
                neg: s.neg.index() as u32,
                spacer: s.polarity,
            })
            .collect();
        serde_json::to_value(entries).expect("binding serialization cannot fail")
    }

    pub fn from_json(v: serde_json::Value, netlist: &Netlist) -> Result<Self, MapError> {
        let entries: Vec<BindingEntry> =
            serde_json::from_value(v).map_err(|e| MapError::Format(e.to_string()))?;
        let nets = netlist.net_count() as u32;
        let mut signals = Vec::with_capacity(entries.len());
        for e in entries {
            if e.pos >= nets || e.neg >= nets {
                return Err(MapError::UnknownSignal(e.signal));
            }
            signals.push(BoundSignal {
                name: e.signal,
                pos: NetId::new(e.pos as usize),
                neg: NetId::new(e.neg as usize),
                polarity: e.spacer,
            });
        }
        Ok(DualRailBinding {
            signals,
            overall_inverting: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BindingEntry {
    signal: String,
    pos: u32,
    neg: u32,
    spacer: SpacerPolarity,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("netlist contains non-unate gates: {0:?}")]
    NonUnateGate(Vec<GateId>),
    #[error("netlist is not combinational: gate {0}")]
    SequentialGate(GateId),
    #[error(
        "spacer parity conflict at signal {signal:?}: rails settle to ({pos_spacer}, {neg_spacer})"
    )]
    ParityConflict {
        signal: String,
        pos_spacer: bool,
        neg_spacer: bool,
    },
    #[error("unknown signal {0:?}")]
    UnknownSignal(String),
    #[error("spacer-inverter insertion did not converge after {0} rounds")]
    RepairDiverged(usize),
    #[error("spacer evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("internal rebuild failed: {0}")]
    Build(#[from] BuildError),
    #[error("binding format: {0}")]
    Format(String),
}

// ---------------------------------------------------------------------------
// Direct mapping
// ---------------------------------------------------------------------------

fn rail_names(label: &str) -> (String, String) {
    (format!("{label}__p"), format!("{label}__n"))
}

/// Maps a combinational unate single-rail netlist to dual rails.
///
/// AND becomes an AND/OR gate pair, OR dually; INV becomes a rail swap with
/// no logic; BUF becomes a rail alias. Negative-unate kinds (NAND, NOR,
/// AOI, OAI) map to their positive core with a swap on the output. The
/// positive rails compute the source function; all spacers are AllZero.
pub fn direct_map(single: &Netlist) -> Result<(Netlist, DualRailBinding), MapError> {
    let non_unate = single.check_unate_only();
    if !non_unate.is_empty() {
        return Err(MapError::NonUnateGate(non_unate));
    }
    if let Some(g) = single
        .gate_ids()
        .find(|&g| single.gate(g).kind.breaks_combinational_cycle())
    {
        return Err(MapError::SequentialGate(g));
    }

    let mut b = NetlistBuilder::new();
    let mut rails: Vec<Option<(NetId, NetId)>> = vec![None; single.net_count()];

    for &pi in single.pis() {
        let (pn, nn) = rail_names(&single.net_label(pi));
        let p = b.named_net(pn);
        let n = b.named_net(nn);
        b.pi(p);
        b.pi(n);
        rails[pi.index()] = Some((p, n));
    }

    for &g in single.topo_order() {
        let gate = single.gate(g);
        let out = gate.output;
        let label = single.net_label(out);
        let ins: Vec<(NetId, NetId)> = gate
            .inputs
            .iter()
            .map(|n| rails[n.index()].expect("inputs are mapped in topological order"))
            .collect();
        let pos_in: Vec<NetId> = ins.iter().map(|r| r.0).collect();
        let neg_in: Vec<NetId> = ins.iter().map(|r| r.1).collect();
        use GateKind::*;
        let pair = match gate.kind {
            Inv => (ins[0].1, ins[0].0),
            Buf => ins[0],
            And2 | And3 | And4 | Or2 | Or3 | Or4 => {
                let (pn, nn) = rail_names(&label);
                let p = b.named_net(pn);
                let n = b.named_net(nn);
                let (pos_kind, neg_kind) = match gate.kind {
                    And2 => (And2, Or2),
                    And3 => (And3, Or3),
                    And4 => (And4, Or4),
                    Or2 => (Or2, And2),
                    Or3 => (Or3, And3),
                    Or4 => (Or4, And4),
                    _ => unreachable!(),
                };
                b.gate(pos_kind, &pos_in, p);
                b.gate(neg_kind, &neg_in, n);
                (p, n)
            }
            Nand2 | Nand3 | Nand4 => {
                // The positive core computes the conjunction; the NAND
                // output is its swap.
                let (pn, nn) = rail_names(&label);
                let p = b.named_net(pn);
                let n = b.named_net(nn);
                let (and_kind, or_kind) = match gate.kind {
                    Nand2 => (And2, Or2),
                    Nand3 => (And3, Or3),
                    Nand4 => (And4, Or4),
                    _ => unreachable!(),
                };
                b.gate(and_kind, &pos_in, n);
                b.gate(or_kind, &neg_in, p);
                (p, n)
            }
            Nor2 | Nor3 | Nor4 => {
                let (pn, nn) = rail_names(&label);
                let p = b.named_net(pn);
                let n = b.named_net(nn);
                let (or_kind, and_kind) = match gate.kind {
                    Nor2 => (Or2, And2),
                    Nor3 => (Or3, And3),
                    Nor4 => (Or4, And4),
                    _ => unreachable!(),
                };
                b.gate(or_kind, &pos_in, n);
                b.gate(and_kind, &neg_in, p);
                (p, n)
            }
            Aoi21 | Aoi22 | Oai21 | Oai22 => {
                // Decompose into the positive two-level core and swap.
                let (pn, nn) = rail_names(&label);
                let groups: &[&[usize]] = match gate.kind {
                    Aoi21 | Oai21 => &[&[0, 1], &[2]],
                    Aoi22 | Oai22 => &[&[0, 1], &[2, 3]],
                    _ => unreachable!(),
                };
                let aoi = matches!(gate.kind, Aoi21 | Aoi22);
                let mut core_pos_ins = Vec::new();
                let mut core_neg_ins = Vec::new();
                for (gi, idxs) in groups.iter().enumerate() {
                    if idxs.len() == 1 {
                        core_pos_ins.push(pos_in[idxs[0]]);
                        core_neg_ins.push(neg_in[idxs[0]]);
                    } else {
                        let xp = b.named_net(format!("{label}__x{gi}__p"));
                        let xn = b.named_net(format!("{label}__x{gi}__n"));
                        let gp: Vec<NetId> = idxs.iter().map(|&i| pos_in[i]).collect();
                        let gn: Vec<NetId> = idxs.iter().map(|&i| neg_in[i]).collect();
                        if aoi {
                            b.gate(And2, &gp, xp);
                            b.gate(Or2, &gn, xn);
                        } else {
                            b.gate(Or2, &gp, xp);
                            b.gate(And2, &gn, xn);
                        }
                        core_pos_ins.push(xp);
                        core_neg_ins.push(xn);
                    }
                }
                let p = b.named_net(pn);
                let n = b.named_net(nn);
                if aoi {
                    // core = OR of the groups; the output is its swap
                    b.gate(Or2, &core_pos_ins, n);
                    b.gate(And2, &core_neg_ins, p);
                } else {
                    b.gate(And2, &core_pos_ins, n);
                    b.gate(Or2, &core_neg_ins, p);
                }
                (p, n)
            }
            C2 | Delay { .. } | Xor2 | Xnor2 => unreachable!("rejected by preconditions"),
        };
        rails[out.index()] = Some(pair);
    }

    for &po in single.pos() {
        let (p, n) = rails[po.index()].expect("PO nets are driven");
        b.po(p);
        b.po(n);
    }

    let dual = b.build()?;
    let signals = single
        .net_ids()
        .map(|n| {
            let (p, nn) = rails[n.index()].expect("every net is mapped");
            BoundSignal {
                name: single.net_label(n),
                pos: p,
                neg: nn,
                polarity: SpacerPolarity::AllZero,
            }
        })
        .collect();
    Ok((
        dual,
        DualRailBinding {
            signals,
            overall_inverting: Some(false),
        },
    ))
}

// ---------------------------------------------------------------------------
// Spacer-polarity analysis
// ---------------------------------------------------------------------------

/// Per-net spacer values and per-signal polarities obtained by evaluating
/// the netlist with all PI pairs held at their spacer.
#[derive(Debug, Clone)]
pub struct SpacerAnalysis {
    pub net_spacer: Vec<bool>,
    /// Aligned with the binding's signal list.
    pub polarity: Vec<SpacerPolarity>,
}

fn spacer_values(
    netlist: &Netlist,
    binding: &DualRailBinding,
    pi_polarity: &BTreeMap<String, SpacerPolarity>,
) -> Result<Vec<bool>, MapError> {
    let pi_set: std::collections::BTreeSet<NetId> = netlist.pis().iter().copied().collect();
    let mut rail_spacer: BTreeMap<NetId, bool> = BTreeMap::new();
    for s in &binding.signals {
        if pi_set.contains(&s.pos) && pi_set.contains(&s.neg) {
            let pol = pi_polarity.get(&s.name).copied().unwrap_or(s.polarity);
            rail_spacer.insert(s.pos, pol.rail_value());
            rail_spacer.insert(s.neg, pol.rail_value());
        }
    }
    let pis: Vec<bool> = netlist
        .pis()
        .iter()
        .map(|n| rail_spacer.get(n).copied().unwrap_or(false))
        .collect();
    let values = netlist.eval_zero_delay(&pis, false)?;
    Ok(values
        .iter()
        .map(|v| v.to_bool().expect("defined PIs give defined values"))
        .collect())
}

/// Forward spacer analysis. The spacer value of every net is what the
/// circuit settles to during a full spacer phase; a signal whose rails
/// settle to different values is missing a spacer inverter and is reported
/// as the first conflict.
pub fn compute_spacer_polarity(
    netlist: &Netlist,
    binding: &DualRailBinding,
    pi_polarity: &BTreeMap<String, SpacerPolarity>,
) -> Result<SpacerAnalysis, MapError> {
    let net_spacer = spacer_values(netlist, binding, pi_polarity)?;
    let mut polarity = Vec::with_capacity(binding.signals.len());
    for s in &binding.signals {
        let (sp, sn) = (net_spacer[s.pos.index()], net_spacer[s.neg.index()]);
        match (sp, sn) {
            (false, false) => polarity.push(SpacerPolarity::AllZero),
            (true, true) => polarity.push(SpacerPolarity::AllOne),
            _ => {
                return Err(MapError::ParityConflict {
                    signal: s.name.clone(),
                    pos_spacer: sp,
                    neg_spacer: sn,
                })
            }
        }
    }
    Ok(SpacerAnalysis {
        net_spacer,
        polarity,
    })
}

/// Applies a successful analysis back onto the binding and derives the
/// block-level spacer parity.
pub fn apply_polarity(netlist: &Netlist, binding: &mut DualRailBinding, analysis: &SpacerAnalysis) {
    for (s, &pol) in binding.signals.iter_mut().zip(&analysis.polarity) {
        s.polarity = pol;
    }
    let pi_sigs = binding.pi_signals(netlist);
    let base = pi_sigs
        .first()
        .map(|&i| binding.signals[i].polarity)
        .unwrap_or(SpacerPolarity::AllZero);
    let po_set: std::collections::BTreeSet<NetId> = netlist.pos().iter().copied().collect();
    let flips: Vec<bool> = binding
        .signals
        .iter()
        .filter(|s| po_set.contains(&s.pos) && po_set.contains(&s.neg))
        .map(|s| s.polarity != base)
        .collect();
    binding.overall_inverting = if flips.is_empty() {
        None
    } else if flips.iter().all(|&f| f) {
        Some(true)
    } else if flips.iter().all(|&f| !f) {
        Some(false)
    } else {
        None
    };
}

/// Inserts two inverters plus a rail swap on `signal`'s pair, converting
/// its spacer polarity while preserving the logical value. Downstream
/// consumers and PO references are rewired to the new pair.
pub fn insert_spacer_inverter(
    netlist: &Netlist,
    binding: &DualRailBinding,
    signal: &str,
) -> Result<(Netlist, DualRailBinding), MapError> {
    let idx = binding
        .find(signal)
        .ok_or_else(|| MapError::UnknownSignal(signal.to_string()))?;
    let old = binding.signals[idx].clone();

    let mut b = NetlistBuilder::new();
    for net in netlist.nets() {
        match &net.name {
            Some(n) => b.named_net(n.clone()),
            None => b.net(),
        };
    }
    let new_pos = b.named_net(format!("{}__si_p", old.name));
    let new_neg = b.named_net(format!("{}__si_n", old.name));
    let remap = |n: NetId| -> NetId {
        if n == old.pos {
            new_pos
        } else if n == old.neg {
            new_neg
        } else {
            n
        }
    };
    for gate in netlist.gates() {
        let inputs: Vec<NetId> = gate.inputs.iter().map(|&n| remap(n)).collect();
        b.gate(gate.kind, &inputs, gate.output);
    }
    // Value-preserving spacer flip: pos' = INV(neg), neg' = INV(pos).
    b.gate(GateKind::Inv, &[old.neg], new_pos);
    b.gate(GateKind::Inv, &[old.pos], new_neg);
    for &pi in netlist.pis() {
        b.pi(pi);
    }
    for &po in netlist.pos() {
        b.po(remap(po));
    }
    for (k, v) in netlist.meta() {
        b.meta(k.clone(), v.clone());
    }
    let rebuilt = b.build()?;

    let mut new_binding = binding.clone();
    new_binding.signals[idx].pos = new_pos;
    new_binding.signals[idx].neg = new_neg;
    new_binding.signals[idx].polarity = old.polarity.flipped();
    Ok((rebuilt, new_binding))
}

/// Runs the polarity analysis and repairs conflicts by inserting spacer
/// inverters on minority-polarity inputs of the first conflicting stage,
/// to a fixed point. Netlists produced by the mapping passes need no
/// repairs; this exists for composed or hand-built structures.
pub fn auto_insert_spacer_inverters(
    netlist: Netlist,
    binding: DualRailBinding,
    pi_polarity: &BTreeMap<String, SpacerPolarity>,
) -> Result<(Netlist, DualRailBinding, SpacerAnalysis), MapError> {
    let mut netlist = netlist;
    let mut binding = binding;
    let max_rounds = binding.signals.len() + 1;
    for _ in 0..max_rounds {
        match compute_spacer_polarity(&netlist, &binding, pi_polarity) {
            Ok(analysis) => {
                apply_polarity(&netlist, &mut binding, &analysis);
                return Ok((netlist, binding, analysis));
            }
            Err(MapError::ParityConflict {
                signal,
                pos_spacer,
                neg_spacer,
            }) => {
                let fixes = conflict_input_fixes(&netlist, &binding, pi_polarity, &signal)?;
                if fixes.is_empty() {
                    return Err(MapError::ParityConflict {
                        signal,
                        pos_spacer,
                        neg_spacer,
                    });
                }
                for name in fixes {
                    let (n2, b2) = insert_spacer_inverter(&netlist, &binding, &name)?;
                    netlist = n2;
                    binding = b2;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(MapError::RepairDiverged(max_rounds))
}

/// Input signals of the conflicting signal's driver gates whose spacer
/// polarity differs from the majority.
fn conflict_input_fixes(
    netlist: &Netlist,
    binding: &DualRailBinding,
    pi_polarity: &BTreeMap<String, SpacerPolarity>,
    signal: &str,
) -> Result<Vec<String>, MapError> {
    let net_spacer = spacer_values(netlist, binding, pi_polarity)?;
    let idx = binding
        .find(signal)
        .ok_or_else(|| MapError::UnknownSignal(signal.to_string()))?;
    let s = &binding.signals[idx];
    let mut input_nets: Vec<NetId> = Vec::new();
    for rail in [s.pos, s.neg] {
        if let Driver::Gate(g) = netlist.driver(rail) {
            input_nets.extend(netlist.gate(g).inputs.iter().copied());
        }
    }
    let mut feeders: Vec<(usize, SpacerPolarity)> = Vec::new();
    for (i, cand) in binding.signals.iter().enumerate() {
        if i == idx {
            continue;
        }
        if input_nets.contains(&cand.pos) || input_nets.contains(&cand.neg) {
            let (sp, sn) = (net_spacer[cand.pos.index()], net_spacer[cand.neg.index()]);
            let pol = match (sp, sn) {
                (false, false) => SpacerPolarity::AllZero,
                (true, true) => SpacerPolarity::AllOne,
                _ => continue,
            };
            if !feeders.iter().any(|(j, _)| *j == i) {
                feeders.push((i, pol));
            }
        }
    }
    let zeros = feeders
        .iter()
        .filter(|(_, p)| *p == SpacerPolarity::AllZero)
        .count();
    let ones = feeders.len() - zeros;
    if zeros == 0 || ones == 0 {
        return Ok(Vec::new());
    }
    // Ties flip the AllOne feeders, keeping the AllZero convention.
    let minority = if zeros < ones {
        SpacerPolarity::AllZero
    } else {
        SpacerPolarity::AllOne
    };
    Ok(feeders
        .iter()
        .filter(|(_, p)| *p == minority)
        .map(|(i, _)| binding.signals[*i].name.clone())
        .collect())
}

/// Per-net `(min, max)` count of inverting gates along any PI-to-net path.
/// Used to audit the single-inversion property of mapped blocks.
pub fn path_inversion_bounds(netlist: &Netlist) -> Vec<(u32, u32)> {
    let mut bounds: Vec<Option<(u32, u32)>> = vec![None; netlist.net_count()];
    for &pi in netlist.pis() {
        bounds[pi.index()] = Some((0, 0));
    }
    let order = netlist
        .topo_order_with_delays()
        .unwrap_or_else(|_| netlist.topo_order().to_vec());
    for g in order {
        let gate = netlist.gate(g);
        let inv = u32::from(gate.kind.is_inverting());
        let mut lo = u32::MAX;
        let mut hi = 0;
        let mut any = false;
        for input in &gate.inputs {
            if let Some((l, h)) = bounds[input.index()] {
                lo = lo.min(l);
                hi = hi.max(h);
                any = true;
            }
        }
        if any {
            bounds[gate.output.index()] = Some((lo + inv, hi + inv));
        }
    }
    bounds.into_iter().map(|b| b.unwrap_or((0, 0))).collect()
}

// ---------------------------------------------------------------------------
// Negative-gate optimization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lit {
    sig: usize,
    neg: bool,
}

impl Lit {
    fn negated(self) -> Lit {
        Lit {
            sig: self.sig,
            neg: !self.neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum StageOp {
    And(Vec<Lit>),
    Or(Vec<Lit>),
    /// OR of AND-groups; emitted as an OAI/AOI pair, always inverting.
    OrAnd(Vec<Vec<Lit>>),
    /// AND of OR-groups; emitted as an AOI/OAI pair, always inverting.
    AndOr(Vec<Vec<Lit>>),
}

#[derive(Debug, Clone, PartialEq)]
enum Def {
    Pi,
    Stage { op: StageOp },
    /// Rail swap (`of.neg`) and/or a both-rail inverter pair (`flip`).
    Alias { of: Lit, flip: bool },
}

struct Work {
    names: Vec<String>,
    defs: Vec<Def>,
}

/// Re-expresses a direct-mapped dual-rail netlist with negative gates:
/// per-rail inverter pairs are absorbed into the adjacent stage, stages
/// feeding only primary outputs become NAND/NOR pairs, and qualifying
/// two-level output cones fuse into AOI/OAI pairs. The logical function on
/// the rails is unchanged; spacer polarities are re-derived and recorded in
/// the returned binding. Gate count never increases and the pass is
/// idempotent. Inputs that do not parse as gate-pair structures (not
/// produced by [`direct_map`]) are returned unchanged.
pub fn negative_gate_optimize(
    netlist: &Netlist,
    binding: &DualRailBinding,
) -> (Netlist, DualRailBinding) {
    match try_optimize(netlist, binding) {
        Some(result) => result,
        None => (netlist.clone(), binding.clone()),
    }
}

struct Classifier<'a> {
    netlist: &'a Netlist,
    pair_index: BTreeMap<(NetId, NetId), usize>,
    rails: Vec<(NetId, NetId)>,
    work: Work,
    covered: Vec<bool>,
}

impl<'a> Classifier<'a> {
    fn lookup_lit(&self, p: NetId, n: NetId) -> Option<Lit> {
        if let Some(&s) = self.pair_index.get(&(p, n)) {
            return Some(Lit { sig: s, neg: false });
        }
        if let Some(&s) = self.pair_index.get(&(n, p)) {
            return Some(Lit { sig: s, neg: true });
        }
        None
    }

    /// Resolves a rail pair to a literal, synthesizing a signal for
    /// unbound intermediate pairs (AOI/OAI decomposition partials).
    fn resolve_lit(&mut self, p: NetId, n: NetId, queue: &mut Vec<usize>) -> Lit {
        if let Some(lit) = self.lookup_lit(p, n) {
            return lit;
        }
        let sig = self.work.defs.len();
        self.work.defs.push(Def::Pi); // placeholder until classified
        // Deterministic name derived from the positive rail so repeated
        // passes synthesize identical pairs.
        let label = self.netlist.net_label(p);
        let name = label.strip_suffix("__p").unwrap_or(&label).to_string();
        self.work.names.push(name);
        self.rails.push((p, n));
        self.pair_index.insert((p, n), sig);
        queue.push(sig);
        Lit { sig, neg: false }
    }

    fn classify_pair(&mut self, sig: usize, queue: &mut Vec<usize>) -> Option<Def> {
        use GateKind::*;
        let (pos, neg) = self.rails[sig];
        // A pair equal to (or the swap of) an earlier signal's pair is an
        // alias of that signal; inverter chains and buffers land here.
        if let Some(&other) = self.pair_index.get(&(pos, neg)) {
            if other < sig {
                return Some(Def::Alias {
                    of: Lit {
                        sig: other,
                        neg: false,
                    },
                    flip: false,
                });
            }
        }
        if let Some(&other) = self.pair_index.get(&(neg, pos)) {
            if other < sig {
                return Some(Def::Alias {
                    of: Lit {
                        sig: other,
                        neg: true,
                    },
                    flip: false,
                });
            }
        }
        let (dp, dn) = (self.netlist.driver(pos), self.netlist.driver(neg));
        let (gp_id, gn_id) = match (dp, dn) {
            (Driver::Pi, Driver::Pi) => return Some(Def::Pi),
            (Driver::Gate(a), Driver::Gate(b)) => (a, b),
            _ => return None,
        };
        let pg = self.netlist.gate(gp_id).clone();
        let ng = self.netlist.gate(gn_id).clone();
        // Positional pairing: input i of the pos gate corresponds to
        // input i of the neg gate (how direct_map emits pairs).
        let mut lits = |pos_srcs: &[NetId], neg_srcs: &[NetId]| -> Vec<Lit> {
            pos_srcs
                .iter()
                .zip(neg_srcs)
                .map(|(&p, &n)| self.resolve_lit(p, n, queue))
                .collect()
        };
        let def = match (pg.kind, ng.kind) {
            // Non-inverting simple stages: lit pos rails feed the pos gate.
            (And2, Or2) | (And3, Or3) | (And4, Or4) => Some(Def::Stage {
                op: StageOp::And(lits(&pg.inputs, &ng.inputs)),
            }),
            (Or2, And2) | (Or3, And3) | (Or4, And4) => Some(Def::Stage {
                op: StageOp::Or(lits(&pg.inputs, &ng.inputs)),
            }),
            // Inverting simple stages: lit pos rails feed the NEG-rail gate.
            (Nor2, Nand2) | (Nor3, Nand3) | (Nor4, Nand4) => Some(Def::Stage {
                op: StageOp::And(lits(&ng.inputs, &pg.inputs)),
            }),
            (Nand2, Nor2) | (Nand3, Nor3) | (Nand4, Nor4) => Some(Def::Stage {
                op: StageOp::Or(lits(&ng.inputs, &pg.inputs)),
            }),
            // Fused inverting stages.
            (Oai21, Aoi21) => {
                let l = lits(&ng.inputs, &pg.inputs);
                Some(Def::Stage {
                    op: StageOp::OrAnd(vec![vec![l[0], l[1]], vec![l[2]]]),
                })
            }
            (Oai22, Aoi22) => {
                let l = lits(&ng.inputs, &pg.inputs);
                Some(Def::Stage {
                    op: StageOp::OrAnd(vec![vec![l[0], l[1]], vec![l[2], l[3]]]),
                })
            }
            (Aoi21, Oai21) => {
                let l = lits(&ng.inputs, &pg.inputs);
                Some(Def::Stage {
                    op: StageOp::AndOr(vec![vec![l[0], l[1]], vec![l[2]]]),
                })
            }
            (Aoi22, Oai22) => {
                let l = lits(&ng.inputs, &pg.inputs);
                Some(Def::Stage {
                    op: StageOp::AndOr(vec![vec![l[0], l[1]], vec![l[2], l[3]]]),
                })
            }
            // Inverter pair: pos' = INV(x), neg' = INV(y). When (y,x) is a
            // known pair this is the value-preserving spacer flip of that
            // signal; when (x,y) is, it is its negation with a flip.
            (Inv, Inv) => {
                let lit = self.resolve_lit(ng.inputs[0], pg.inputs[0], queue);
                Some(Def::Alias { of: lit, flip: true })
            }
            (Buf, Buf) => {
                let lit = self.resolve_lit(pg.inputs[0], ng.inputs[0], queue);
                Some(Def::Alias {
                    of: lit,
                    flip: false,
                })
            }
            _ => None,
        }?;
        self.covered[gp_id.index()] = true;
        self.covered[gn_id.index()] = true;
        Some(def)
    }
}

fn try_optimize(netlist: &Netlist, binding: &DualRailBinding) -> Option<(Netlist, DualRailBinding)> {
    if netlist.pis().len() % 2 != 0 || netlist.pos().len() % 2 != 0 {
        return None;
    }
    let mut cls = Classifier {
        netlist,
        pair_index: BTreeMap::new(),
        rails: binding.signals.iter().map(|s| (s.pos, s.neg)).collect(),
        work: Work {
            names: binding.signals.iter().map(|s| s.name.clone()).collect(),
            defs: vec![Def::Pi; binding.signals.len()],
        },
        covered: vec![false; netlist.gate_count()],
    };
    for (i, s) in binding.signals.iter().enumerate() {
        cls.pair_index.entry((s.pos, s.neg)).or_insert(i);
    }

    let mut classified: Vec<bool> = Vec::new();
    let mut queue: Vec<usize> = (0..binding.signals.len()).collect();
    let mut head = 0;
    while head < queue.len() {
        let sig = queue[head];
        head += 1;
        if classified.len() < cls.work.defs.len() {
            classified.resize(cls.work.defs.len(), false);
        }
        if classified[sig] {
            continue;
        }
        classified[sig] = true;
        let def = cls.classify_pair(sig, &mut queue)?;
        cls.work.defs[sig] = def;
        if classified.len() < cls.work.defs.len() {
            classified.resize(cls.work.defs.len(), false);
        }
    }
    if !cls.covered.iter().all(|&c| c) {
        return None; // gates outside any recognized pair structure
    }

    let mut po_lits: Vec<Lit> = Vec::new();
    for pair in netlist.pos().chunks(2) {
        po_lits.push(cls.lookup_lit(pair[0], pair[1])?);
    }

    let Classifier { work, .. } = cls;
    transform_and_emit(netlist, binding, work, po_lits)
}

#[derive(Debug, Clone, Copy)]
struct Folded {
    lit: Lit,
    flip: bool,
}

fn fold(defs: &[Def], mut lit: Lit) -> Folded {
    let mut flip = false;
    loop {
        match &defs[lit.sig] {
            Def::Alias { of, flip: f } => {
                flip ^= f;
                lit = if lit.neg { of.negated() } else { *of };
            }
            _ => return Folded { lit, flip },
        }
    }
}

fn stage_lits(op: &StageOp) -> Vec<Lit> {
    match op {
        StageOp::And(l) | StageOp::Or(l) => l.clone(),
        StageOp::OrAnd(g) | StageOp::AndOr(g) => g.iter().flatten().copied().collect(),
    }
}

fn map_stage_lits(op: &StageOp, f: impl Fn(Lit) -> Lit) -> StageOp {
    match op {
        StageOp::And(l) => StageOp::And(l.iter().map(|&x| f(x)).collect()),
        StageOp::Or(l) => StageOp::Or(l.iter().map(|&x| f(x)).collect()),
        StageOp::OrAnd(g) => StageOp::OrAnd(
            g.iter()
                .map(|grp| grp.iter().map(|&x| f(x)).collect())
                .collect(),
        ),
        StageOp::AndOr(g) => StageOp::AndOr(
            g.iter()
                .map(|grp| grp.iter().map(|&x| f(x)).collect())
                .collect(),
        ),
    }
}

fn transform_and_emit(
    netlist: &Netlist,
    binding: &DualRailBinding,
    mut work: Work,
    po_lits: Vec<Lit>,
) -> Option<(Netlist, DualRailBinding)> {
    let defs_snapshot = work.defs.clone();
    let n_sigs = work.defs.len();

    // Fold alias chains inside stages. A stage literal that folds through a
    // flip cannot be absorbed locally; bail (never produced by direct_map).
    for i in 0..n_sigs {
        if let Def::Stage { op } = &work.defs[i] {
            for l in stage_lits(op) {
                if fold(&defs_snapshot, l).flip {
                    return None;
                }
            }
            let folded = map_stage_lits(op, |l| fold(&defs_snapshot, l).lit);
            work.defs[i] = Def::Stage { op: folded };
        }
    }
    let folded_pos: Vec<Folded> = po_lits.iter().map(|&l| fold(&defs_snapshot, l)).collect();

    // Uses per signal: stage references and PO references.
    let mut stage_uses: Vec<usize> = vec![0; n_sigs];
    let mut po_uses: Vec<usize> = vec![0; n_sigs];
    let mut po_flip_uses: Vec<usize> = vec![0; n_sigs];
    for def in &work.defs {
        if let Def::Stage { op } = def {
            for l in stage_lits(op) {
                stage_uses[l.sig] += 1;
            }
        }
    }
    for f in &folded_pos {
        po_uses[f.lit.sig] += 1;
        if f.flip {
            po_flip_uses[f.lit.sig] += 1;
        }
    }

    // A stage consumed only by POs is emitted with negative gates; flip
    // parities on its PO uses are absorbed by the inversion.
    let mut inverted: Vec<bool> = vec![false; n_sigs];
    for i in 0..n_sigs {
        match &work.defs[i] {
            Def::Stage { op } => {
                let po_only = stage_uses[i] == 0 && po_uses[i] > 0;
                let fused = matches!(op, StageOp::OrAnd(_) | StageOp::AndOr(_));
                inverted[i] = po_only || fused;
            }
            _ => {}
        }
    }
    let folded_pos: Vec<Folded> = folded_pos
        .into_iter()
        .map(|f| Folded {
            lit: f.lit,
            flip: f.flip && !inverted[f.lit.sig],
        })
        .collect();

    // Fusion of two-level output cones into AOI/OAI groups.
    let mut removed: Vec<bool> = vec![false; n_sigs];
    for i in 0..n_sigs {
        if !inverted[i] {
            continue;
        }
        let Def::Stage { op } = &work.defs[i] else {
            continue;
        };
        let (parent_and, lits) = match op {
            StageOp::And(l) if l.len() == 2 => (true, l.clone()),
            StageOp::Or(l) if l.len() == 2 => (false, l.clone()),
            _ => continue,
        };
        let mut groups: Vec<Vec<Lit>> = Vec::new();
        let mut expanded = false;
        let mut children = Vec::new();
        for lit in &lits {
            let absorbable = if !lit.neg
                && stage_uses[lit.sig] == 1
                && po_uses[lit.sig] == 0
                && !inverted[lit.sig]
            {
                match (&work.defs[lit.sig], parent_and) {
                    (Def::Stage { op: StageOp::Or(cl) }, true) if cl.len() == 2 => Some(cl.clone()),
                    (Def::Stage { op: StageOp::And(cl) }, false) if cl.len() == 2 => {
                        Some(cl.clone())
                    }
                    _ => None,
                }
            } else {
                None
            };
            match absorbable {
                Some(cl) => {
                    groups.push(cl);
                    expanded = true;
                    children.push(lit.sig);
                }
                None => groups.push(vec![*lit]),
            }
        }
        if !expanded {
            continue;
        }
        // Bigger group first so the result maps onto the 21-input cells.
        groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
        work.defs[i] = Def::Stage {
            op: if parent_and {
                StageOp::AndOr(groups)
            } else {
                StageOp::OrAnd(groups)
            },
        };
        for c in children {
            removed[c] = true;
        }
    }

    // Emission.
    let mut b = NetlistBuilder::new();
    let mut new_rails: Vec<Option<(NetId, NetId)>> = vec![None; n_sigs];

    let old_pair_index: BTreeMap<(NetId, NetId), usize> = binding
        .signals
        .iter()
        .enumerate()
        .rev() // first occurrence wins
        .map(|(i, s)| ((s.pos, s.neg), i))
        .collect();
    for pair in netlist.pis().chunks(2) {
        let &sig = old_pair_index.get(&(pair[0], pair[1]))?;
        if !matches!(work.defs[sig], Def::Pi) {
            return None;
        }
        let (pn, nn) = rail_names(&work.names[sig]);
        let p = b.named_net(pn);
        let n = b.named_net(nn);
        b.pi(p);
        b.pi(n);
        new_rails[sig] = Some((p, n));
    }
    // Every PI-classified signal must have rails by now.
    for i in 0..n_sigs {
        if matches!(work.defs[i], Def::Pi) && new_rails[i].is_none() {
            return None;
        }
    }

    // Dependency-ordered stage emission (iterative DFS).
    let mut emit_order: Vec<usize> = Vec::new();
    let mut state: Vec<u8> = vec![0; n_sigs]; // 0 new, 1 visiting, 2 done
    let mut stack: Vec<usize> = Vec::new();
    let roots: Vec<usize> = (0..n_sigs)
        .filter(|&i| matches!(work.defs[i], Def::Stage { .. }) && !removed[i])
        .collect();
    for root in roots {
        if state[root] == 2 {
            continue;
        }
        stack.push(root);
        while let Some(&sig) = stack.last() {
            if state[sig] == 2 {
                stack.pop();
                continue;
            }
            if state[sig] == 1 {
                state[sig] = 2;
                stack.pop();
                emit_order.push(sig);
                continue;
            }
            state[sig] = 1;
            if let Def::Stage { op } = &work.defs[sig] {
                for l in stage_lits(op) {
                    if state[l.sig] == 0 && matches!(work.defs[l.sig], Def::Stage { .. }) {
                        stack.push(l.sig);
                    }
                }
            }
        }
    }

    for &sig in &emit_order {
        if removed[sig] {
            continue;
        }
        let Def::Stage { op } = work.defs[sig].clone() else {
            continue;
        };
        let inv = inverted[sig];
        let lit_rails = |l: Lit, nr: &[Option<(NetId, NetId)>]| -> Option<(NetId, NetId)> {
            let (p, n) = nr[l.sig]?;
            Some(if l.neg { (n, p) } else { (p, n) })
        };
        let (pn, nn) = rail_names(&work.names[sig]);
        let p = b.named_net(pn);
        let n = b.named_net(nn);
        use GateKind::*;
        match &op {
            StageOp::And(lits) | StageOp::Or(lits) => {
                let mut pos_ins = Vec::with_capacity(lits.len());
                let mut neg_ins = Vec::with_capacity(lits.len());
                for &l in lits {
                    let (lp, ln) = lit_rails(l, &new_rails)?;
                    pos_ins.push(lp);
                    neg_ins.push(ln);
                }
                let is_and = matches!(op, StageOp::And(_));
                if !inv {
                    let (k_and, k_or) = match lits.len() {
                        2 => (And2, Or2),
                        3 => (And3, Or3),
                        4 => (And4, Or4),
                        _ => return None,
                    };
                    if is_and {
                        b.gate(k_and, &pos_ins, p);
                        b.gate(k_or, &neg_ins, n);
                    } else {
                        b.gate(k_or, &pos_ins, p);
                        b.gate(k_and, &neg_ins, n);
                    }
                } else {
                    let (k_nand, k_nor) = match lits.len() {
                        2 => (Nand2, Nor2),
                        3 => (Nand3, Nor3),
                        4 => (Nand4, Nor4),
                        _ => return None,
                    };
                    if is_and {
                        b.gate(k_nor, &neg_ins, p);
                        b.gate(k_nand, &pos_ins, n);
                    } else {
                        b.gate(k_nand, &neg_ins, p);
                        b.gate(k_nor, &pos_ins, n);
                    }
                }
            }
            StageOp::OrAnd(groups) | StageOp::AndOr(groups) => {
                let flat: Vec<Lit> = groups.iter().flatten().copied().collect();
                let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
                let mut pos_ins = Vec::with_capacity(flat.len());
                let mut neg_ins = Vec::with_capacity(flat.len());
                for &l in &flat {
                    let (lp, ln) = lit_rails(l, &new_rails)?;
                    pos_ins.push(lp);
                    neg_ins.push(ln);
                }
                let (aoi_k, oai_k) = match sizes.as_slice() {
                    [2, 1] => (Aoi21, Oai21),
                    [2, 2] => (Aoi22, Oai22),
                    _ => return None,
                };
                if matches!(op, StageOp::OrAnd(_)) {
                    // f = OR of ANDs: pos = OAI(neg rails), neg = AOI(pos)
                    b.gate(oai_k, &neg_ins, p);
                    b.gate(aoi_k, &pos_ins, n);
                } else {
                    b.gate(aoi_k, &neg_ins, p);
                    b.gate(oai_k, &pos_ins, n);
                }
            }
        }
        new_rails[sig] = Some((p, n));
    }

    // Surviving flipped PO uses become explicit spacer-inverter pairs,
    // shared per base signal.
    let mut flip_rails: BTreeMap<usize, (NetId, NetId)> = BTreeMap::new();
    let mut need_flip: Vec<usize> = folded_pos
        .iter()
        .filter(|f| f.flip)
        .map(|f| f.lit.sig)
        .collect();
    need_flip.sort_unstable();
    need_flip.dedup();
    for base in need_flip {
        let (p, n) = new_rails[base]?;
        let fp = b.named_net(format!("{}__si_p", work.names[base]));
        let fneg = b.named_net(format!("{}__si_n", work.names[base]));
        b.gate(GateKind::Inv, &[n], fp);
        b.gate(GateKind::Inv, &[p], fneg);
        flip_rails.insert(base, (fp, fneg));
    }

    let resolve = |l: Lit, flipped: bool| -> Option<(NetId, NetId)> {
        let (p, n) = if flipped {
            *flip_rails.get(&l.sig)?
        } else {
            new_rails[l.sig]?
        };
        Some(if l.neg { (n, p) } else { (p, n) })
    };

    for f in &folded_pos {
        let (p, n) = resolve(f.lit, f.flip)?;
        b.po(p);
        b.po(n);
    }
    for (k, v) in netlist.meta() {
        b.meta(k.clone(), v.clone());
    }

    let optimized = b.build().ok()?;
    if optimized.gate_count() > netlist.gate_count() {
        return None;
    }

    // Rebind the original signals onto the new rails. Signals absorbed by
    // fusion have no rails anymore and drop out of the binding.
    let mut signals = Vec::with_capacity(binding.signals.len());
    for (i, s) in binding.signals.iter().enumerate() {
        let f = fold(&work.defs, Lit { sig: i, neg: false });
        if removed[f.lit.sig] {
            continue;
        }
        let flipped = f.flip && !inverted[f.lit.sig];
        let (p, n) = resolve(f.lit, flipped)?;
        signals.push(BoundSignal {
            name: s.name.clone(),
            pos: p,
            neg: n,
            polarity: s.polarity,
        });
    }
    let mut new_binding = DualRailBinding {
        signals,
        overall_inverting: None,
    };
    let pi_pol: BTreeMap<String, SpacerPolarity> = binding
        .pi_signals(netlist)
        .into_iter()
        .map(|i| (binding.signals[i].name.clone(), binding.signals[i].polarity))
        .collect();
    if let Ok(analysis) = compute_spacer_polarity(&optimized, &new_binding, &pi_pol) {
        apply_polarity(&optimized, &mut new_binding, &analysis);
    }
    Some((optimized, new_binding))
}
