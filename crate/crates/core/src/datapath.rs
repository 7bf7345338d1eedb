//! Generators for the dual-rail inference datapath: clause blocks,
//! population-count trees, the 1-of-3 magnitude comparator, spacer
//! inverters, and the reduced completion detector.
//!
//! Spacer conventions per block: the half-adder and the dual-rail OR are
//! polarity-transparent (uniform input spacer in, same spacer out); the
//! full-adder is fixed at AllZero operands and sum with AllOne carry-in
//! and carry-out; the comparator takes AllZero operand rails and emits
//! three single 1-of-3 wires whose spacer is all-low. The builders insert
//! spacer inverters wherever a producer's polarity does not meet the
//! consumer's port convention, and the assembled netlist is re-checked
//! with the forward spacer analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dualrail::{
    apply_polarity, compute_spacer_polarity, direct_map, negative_gate_optimize, BoundSignal,
    DualRailBinding, MapError, SpacerPolarity,
};
use crate::netlist::{BuildError, FormatError, GateId, GateKind, LogicValue, NetId, Netlist, NetlistBuilder};
use crate::sim::DelayModel;
use crate::timing::{compute_timing, earliest_arrivals, TimingError, TimingOptions};
use crate::tm::{ComparatorOutcome, TmConfig, TmError};

#[derive(Debug, Error)]
pub enum DpError {
    #[error("spacer polarity of {0:?} unresolved")]
    UnknownPolarity(String),
    #[error("popcount width must be >= 1")]
    EmptyPopcount,
    #[error("comparator width must be >= 1")]
    EmptyComparator,
    #[error("mapping: {0}")]
    Map(#[from] MapError),
    #[error("netlist: {0}")]
    Build(#[from] BuildError),
    #[error("configuration: {0}")]
    Tm(#[from] TmError),
    #[error("timing: {0}")]
    Timing(#[from] TimingError),
    #[error("evaluation: {0}")]
    Eval(#[from] crate::netlist::EvalError),
    #[error("bundle format: {0}")]
    Format(String),
    #[error("netlist format: {0}")]
    NetlistFormat(#[from] FormatError),
}

/// A dual-rail pair handle inside a builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dr {
    pub pos: NetId,
    pub neg: NetId,
}

/// Builder that accumulates the netlist, the signal binding, and a block
/// label for every gate.
pub struct DpBuilder {
    b: NetlistBuilder,
    signals: Vec<BoundSignal>,
    block_map: BTreeMap<u32, String>,
    block: String,
}

impl DpBuilder {
    pub fn new() -> Self {
        DpBuilder {
            b: NetlistBuilder::new(),
            signals: Vec::new(),
            block_map: BTreeMap::new(),
            block: "top".into(),
        }
    }

    pub fn set_block(&mut self, label: impl Into<String>) {
        self.block = label.into();
    }

    fn gate(&mut self, kind: GateKind, inputs: &[NetId], output: NetId) -> GateId {
        let id = self.b.gate(kind, inputs, output);
        self.block_map.insert(id.raw(), self.block.clone());
        id
    }

    fn single(&mut self, name: impl Into<String>) -> NetId {
        self.b.named_net(name)
    }

    /// Creates a rail pair and records it as a bound signal.
    pub fn pair(&mut self, name: &str, polarity: SpacerPolarity) -> Dr {
        let pos = self.b.named_net(format!("{name}__p"));
        let neg = self.b.named_net(format!("{name}__n"));
        self.signals.push(BoundSignal {
            name: name.to_string(),
            pos,
            neg,
            polarity,
        });
        Dr { pos, neg }
    }

    /// Records an existing rail pair under a signal name.
    pub fn bind(&mut self, name: &str, dr: Dr, polarity: SpacerPolarity) {
        self.signals.push(BoundSignal {
            name: name.to_string(),
            pos: dr.pos,
            neg: dr.neg,
            polarity,
        });
    }

    pub fn pi_pair(&mut self, name: &str, polarity: SpacerPolarity) -> Dr {
        let dr = self.pair(name, polarity);
        self.b.pi(dr.pos);
        self.b.pi(dr.neg);
        dr
    }

    pub fn po_pair(&mut self, dr: Dr) {
        self.b.po(dr.pos);
        self.b.po(dr.neg);
    }

    pub fn po_single(&mut self, net: NetId) {
        self.b.po(net);
    }

    pub fn binding(&self) -> DualRailBinding {
        DualRailBinding {
            signals: self.signals.clone(),
            overall_inverting: None,
        }
    }

    /// Builds a preview netlist with the given extra POs appended (used
    /// for timing the datapath before the done delay exists).
    fn preview(&self, pos: &[NetId]) -> Result<Netlist, BuildError> {
        let mut b = self.b.clone();
        for &po in pos {
            b.po(po);
        }
        b.build()
    }

    pub fn finish(self) -> Result<(Netlist, DualRailBinding, BTreeMap<u32, String>), DpError> {
        let netlist = self.b.build()?;
        debug_assert_eq!(self.block_map.len(), netlist.gate_count());
        Ok((
            netlist,
            DualRailBinding {
                signals: self.signals,
                overall_inverting: None,
            },
            self.block_map,
        ))
    }
}

impl Default for DpBuilder {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Leaf blocks
// ---------------------------------------------------------------------------

/// Dual-rail OR: one OR and one AND. Polarity-transparent.
pub fn or_block(dp: &mut DpBuilder, a: Dr, b: Dr, pol: SpacerPolarity, name: &str) -> Dr {
    let out = dp.pair(name, pol);
    dp.gate(GateKind::Or2, &[a.pos, b.pos], out.pos);
    dp.gate(GateKind::And2, &[a.neg, b.neg], out.neg);
    out
}

/// Dual-rail half-adder: carry from the simple AND/OR pair, sum rails from
/// AOI22 complex gates re-inverted so every path has an even inversion
/// count (no spacer inversion). Polarity-transparent for uniform inputs.
pub fn half_adder(dp: &mut DpBuilder, a: Dr, b: Dr, pol: SpacerPolarity, name: &str) -> (Dr, Dr) {
    let sum = dp.pair(&format!("{name}_s"), pol);
    let carry = dp.pair(&format!("{name}_c"), pol);
    dp.gate(GateKind::And2, &[a.pos, b.pos], carry.pos);
    dp.gate(GateKind::Or2, &[a.neg, b.neg], carry.neg);
    let xp = dp.single(format!("{name}_xp"));
    let xn = dp.single(format!("{name}_xn"));
    dp.gate(GateKind::Aoi22, &[a.pos, b.neg, a.neg, b.pos], xp);
    dp.gate(GateKind::Inv, &[xp], sum.pos);
    dp.gate(GateKind::Aoi22, &[a.pos, b.pos, a.neg, b.neg], xn);
    dp.gate(GateKind::Inv, &[xn], sum.neg);
    (sum, carry)
}

/// Dual-rail full-adder: six complex gates, two simple gates, two
/// inverters. Operands and sum use the AllZero spacer; carry-in and
/// carry-out use the inverted (AllOne) spacer.
///
/// Every multi-input gate reads rails of one spacer class only, so each
/// net moves in a single direction per half-phase regardless of gate
/// delays: AllOne-class rails enter AllZero-class logic (and vice versa)
/// only through the single-input inverters.
pub fn full_adder(dp: &mut DpBuilder, a: Dr, b: Dr, cin: Dr, name: &str) -> (Dr, Dr) {
    let sum = dp.pair(&format!("{name}_s"), SpacerPolarity::AllZero);
    let cout = dp.pair(&format!("{name}_co"), SpacerPolarity::AllOne);
    // AllZero-spacer view of the carry-in, for the carry majority.
    let zc = dp.pair(&format!("{name}_zc"), SpacerPolarity::AllZero);
    dp.gate(GateKind::Inv, &[cin.neg], zc.pos);
    dp.gate(GateKind::Inv, &[cin.pos], zc.neg);
    // Majority on the carry rails over AllZero-class inputs only.
    let wp = dp.single(format!("{name}_wp"));
    let wn = dp.single(format!("{name}_wn"));
    dp.gate(GateKind::Or2, &[a.pos, b.pos], wp);
    dp.gate(GateKind::Or2, &[a.neg, b.neg], wn);
    dp.gate(GateKind::Aoi22, &[a.neg, b.neg, zc.neg, wn], cout.pos);
    dp.gate(GateKind::Aoi22, &[a.pos, b.pos, zc.pos, wp], cout.neg);
    // teq = (a == b) lives on the AllOne-spacer class with no inverters;
    // sum = XNOR(teq, cin) then needs AllOne-class gates only.
    let teq = dp.pair(&format!("{name}_teq"), SpacerPolarity::AllOne);
    dp.gate(GateKind::Aoi22, &[a.pos, b.neg, a.neg, b.pos], teq.pos);
    dp.gate(GateKind::Aoi22, &[a.pos, b.pos, a.neg, b.neg], teq.neg);
    dp.gate(GateKind::Aoi22, &[teq.pos, cin.neg, teq.neg, cin.pos], sum.pos);
    dp.gate(GateKind::Aoi22, &[teq.pos, cin.pos, teq.neg, cin.neg], sum.neg);
    (sum, cout)
}

/// Spacer inverter: two inverters plus a rail swap; the logical value is
/// preserved while the spacer polarity flips.
pub fn spacer_inverter(dp: &mut DpBuilder, x: Dr, pol: SpacerPolarity, name: &str) -> (Dr, SpacerPolarity) {
    let out = dp.pair(name, pol.flipped());
    dp.gate(GateKind::Inv, &[x.neg], out.pos);
    dp.gate(GateKind::Inv, &[x.pos], out.neg);
    (out, pol.flipped())
}

/// Standalone half-adder fragment: PI pairs `a`, `b`; PO pairs `sum`,
/// `carry` (all AllZero spacer).
pub fn build_half_adder_dr() -> Result<(Netlist, DualRailBinding, BTreeMap<u32, String>), DpError> {
    let mut dp = DpBuilder::new();
    dp.set_block("ha");
    let a = dp.pi_pair("a", SpacerPolarity::AllZero);
    let b = dp.pi_pair("b", SpacerPolarity::AllZero);
    let (sum, carry) = half_adder(&mut dp, a, b, SpacerPolarity::AllZero, "ha");
    dp.bind("sum", sum, SpacerPolarity::AllZero);
    dp.bind("carry", carry, SpacerPolarity::AllZero);
    dp.po_pair(sum);
    dp.po_pair(carry);
    dp.finish()
}

/// Standalone full-adder fragment: PI pairs `a`, `b` (AllZero) and `cin`
/// (AllOne); PO pairs `sum` (AllZero) and `cout` (AllOne).
pub fn build_full_adder_dr() -> Result<(Netlist, DualRailBinding, BTreeMap<u32, String>), DpError> {
    let mut dp = DpBuilder::new();
    dp.set_block("fa");
    let a = dp.pi_pair("a", SpacerPolarity::AllZero);
    let b = dp.pi_pair("b", SpacerPolarity::AllZero);
    let cin = dp.pi_pair("cin", SpacerPolarity::AllOne);
    let (sum, cout) = full_adder(&mut dp, a, b, cin, "fa");
    dp.bind("sum", sum, SpacerPolarity::AllZero);
    dp.bind("cout", cout, SpacerPolarity::AllOne);
    dp.po_pair(sum);
    dp.po_pair(cout);
    dp.finish()
}

// ---------------------------------------------------------------------------
// Clause block (single-rail source, then mapped)
// ---------------------------------------------------------------------------

fn and_tree_single(b: &mut NetlistBuilder, terms: &[NetId], prefix: &str) -> NetId {
    let mut layer: Vec<NetId> = terms.to_vec();
    let mut level = 0;
    while layer.len() > 1 {
        let mut next = Vec::new();
        for (i, chunk) in layer.chunks(4).enumerate() {
            match chunk.len() {
                1 => next.push(chunk[0]),
                k => {
                    let out = b.named_net(format!("{prefix}t{level}_{i}"));
                    let kind = match k {
                        2 => GateKind::And2,
                        3 => GateKind::And3,
                        _ => GateKind::And4,
                    };
                    b.gate(kind, chunk, out);
                    next.push(out);
                }
            }
        }
        layer = next;
        level += 1;
    }
    layer[0]
}

/// Single-rail clause circuit: OR masks `(e_k | literal_k)` over the `2F`
/// literals (`lit_{2m} = f_m`, `lit_{2m+1} = !f_m`) aggregated by an AND
/// tree of fan-in <= 4. PIs are `f0..f{F-1}` then `e0..e{2F-1}`; the
/// single PO is `clause`. After mapping, the negated literals ride the
/// negative rails, so no inverters survive.
pub fn build_clause_block(features: usize) -> Result<Netlist, DpError> {
    assert!(features >= 1);
    let mut b = NetlistBuilder::new();
    let f: Vec<NetId> = (0..features).map(|m| b.named_net(format!("f{m}"))).collect();
    let e: Vec<NetId> = (0..2 * features)
        .map(|k| b.named_net(format!("e{k}")))
        .collect();
    for &n in &f {
        b.pi(n);
    }
    for &n in &e {
        b.pi(n);
    }
    let mut literals = Vec::with_capacity(2 * features);
    for m in 0..features {
        literals.push(f[m]);
        let nf = b.named_net(format!("nf{m}"));
        b.gate(GateKind::Inv, &[f[m]], nf);
        literals.push(nf);
    }
    let masks: Vec<NetId> = literals
        .iter()
        .enumerate()
        .map(|(k, &lit)| {
            let pc = b.named_net(format!("pc{k}"));
            b.gate(GateKind::Or2, &[e[k], lit], pc);
            pc
        })
        .collect();
    let root = and_tree_single(&mut b, &masks, "a");
    // The PO is the tree root; give it the canonical name.
    let clause = b.named_net("clause");
    b.gate(GateKind::Buf, &[root], clause);
    b.po(clause);
    Ok(b.build()?)
}

/// Mapped and optimized dual-rail clause block.
pub fn build_clause_block_dr(features: usize) -> Result<(Netlist, DualRailBinding), DpError> {
    let single = build_clause_block(features)?;
    let (dual, binding) = direct_map(&single)?;
    Ok(negative_gate_optimize(&dual, &binding))
}

/// Copies a mapped fragment into the builder, substituting the fragment's
/// PI pairs with the provided rails. Internal signals are registered under
/// `prefix`; every copied gate is labeled with the current block.
fn instantiate(
    dp: &mut DpBuilder,
    fragment: &Netlist,
    frag_binding: &DualRailBinding,
    inputs: &BTreeMap<String, Dr>,
    prefix: &str,
) -> Result<BTreeMap<String, Dr>, DpError> {
    let mut net_map: Vec<Option<NetId>> = vec![None; fragment.net_count()];
    let pi_sigs = frag_binding.pi_signals(fragment);
    for &i in &pi_sigs {
        let s = &frag_binding.signals[i];
        if let Some(dr) = inputs.get(&s.name) {
            net_map[s.pos.index()] = Some(dr.pos);
            net_map[s.neg.index()] = Some(dr.neg);
        }
    }
    // Inverter aliases of PI pairs share (swapped) PI rails; they are
    // covered by the canonical mapping above.
    for &i in &pi_sigs {
        let s = &frag_binding.signals[i];
        if net_map[s.pos.index()].is_none() || net_map[s.neg.index()].is_none() {
            return Err(DpError::UnknownPolarity(format!("{prefix}{}", s.name)));
        }
    }
    for n in fragment.net_ids() {
        if net_map[n.index()].is_none() {
            let name = format!("{prefix}{}", fragment.net_label(n));
            net_map[n.index()] = Some(dp.single(name));
        }
    }
    for gate in fragment.gates() {
        let ins: Vec<NetId> = gate
            .inputs
            .iter()
            .map(|n| net_map[n.index()].unwrap())
            .collect();
        dp.gate(gate.kind, &ins, net_map[gate.output.index()].unwrap());
    }
    let mut out = BTreeMap::new();
    for (i, s) in frag_binding.signals.iter().enumerate() {
        let dr = Dr {
            pos: net_map[s.pos.index()].unwrap(),
            neg: net_map[s.neg.index()].unwrap(),
        };
        if pi_sigs.contains(&i) {
            out.insert(s.name.clone(), dr);
        } else {
            dp.bind(&format!("{prefix}{}", s.name), dr, s.polarity);
            out.insert(s.name.clone(), dr);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Population counts
// ---------------------------------------------------------------------------

/// Fixed eight-input population count: nine half-adders, two full-adders,
/// two dual-rail ORs, and the two spacer inverters (half-adder carry into
/// the first full-adder's carry-in; second full-adder's carry-out into the
/// top output bit). No spacer inversion overall.
///
/// Block labels within `prefix`: `ha0..ha8`, `fa0`, `fa1`, `or0`, `or1`,
/// `spinv0`, `spinv1`.
pub fn popcount8_into(dp: &mut DpBuilder, inputs: &[Dr; 8], prefix: &str) -> [Dr; 4] {
    let z = SpacerPolarity::AllZero;
    let lbl = |s: &str| format!("{prefix}{s}");
    let ha = |dp: &mut DpBuilder, k: usize, a: Dr, b: Dr| -> (Dr, Dr) {
        dp.set_block(lbl(&format!("ha{k}")));
        half_adder(dp, a, b, z, &format!("{prefix}ha{k}"))
    };
    let (s0, c0) = ha(dp, 0, inputs[0], inputs[1]);
    let (s1, c1) = ha(dp, 1, inputs[2], inputs[3]);
    let (s2, c2) = ha(dp, 2, inputs[4], inputs[5]);
    let (s3, c3) = ha(dp, 3, inputs[6], inputs[7]);
    // Half A: bits a0,a1,a2 of inputs 0..3.
    let (a0, ka) = ha(dp, 4, s0, s1);
    let (ma, a2) = ha(dp, 5, c0, c1);
    dp.set_block(lbl("or0"));
    let a1 = or_block(dp, ma, ka, z, &format!("{prefix}a1"));
    // Half B.
    let (b0, kb) = ha(dp, 6, s2, s3);
    let (mb, b2) = ha(dp, 7, c2, c3);
    dp.set_block(lbl("or1"));
    let b1 = or_block(dp, mb, kb, z, &format!("{prefix}b1"));
    // Final: y0 plus two full-adders; the FA carry chain runs on the
    // inverted spacer, entered and exited through spacer inverters.
    let (y0, e0) = ha(dp, 8, a0, b0);
    dp.set_block(lbl("spinv0"));
    let (e0i, _) = spacer_inverter(dp, e0, z, &format!("{prefix}e0i"));
    dp.set_block(lbl("fa0"));
    let (y1, e1) = full_adder(dp, a1, b1, e0i, &format!("{prefix}fa0"));
    dp.set_block(lbl("fa1"));
    let (y2, y3_raw) = full_adder(dp, a2, b2, e1, &format!("{prefix}fa1"));
    dp.set_block(lbl("spinv1"));
    let (y3, _) = spacer_inverter(dp, y3_raw, SpacerPolarity::AllOne, &format!("{prefix}y3"));
    [y0, y1, y2, y3]
}

/// Standalone eight-input population count with AllZero PI/PO pairs.
pub fn build_popcount8() -> Result<PopcountBlock, DpError> {
    let mut dp = DpBuilder::new();
    dp.set_block("pi");
    let inputs: Vec<Dr> = (0..8)
        .map(|i| dp.pi_pair(&format!("x{i}"), SpacerPolarity::AllZero))
        .collect();
    let arr: [Dr; 8] = inputs.as_slice().try_into().unwrap();
    let y = popcount8_into(&mut dp, &arr, "");
    for (i, dr) in y.iter().enumerate() {
        dp.bind(&format!("y{i}"), *dr, SpacerPolarity::AllZero);
        dp.po_pair(*dr);
    }
    finish_block(dp, 8, 4)
}

/// Generic polarity-aware column compressor: levels of half-adder pairs
/// per column (for depth), one full-adder when exactly three bits remain,
/// and a dual-rail OR merge for the top pair of carries when the input
/// count proves them mutually exclusive (two set bits in column `w` would
/// exceed `n` once `2^(w+1) > n`). Inputs may carry either spacer;
/// outputs are normalized to AllZero. Spacer inverters are inserted
/// wherever a signal's polarity does not meet a port convention.
pub fn popcount_into(
    dp: &mut DpBuilder,
    inputs: &[(Dr, SpacerPolarity)],
    prefix: &str,
) -> Result<Vec<Dr>, DpError> {
    use SpacerPolarity::{AllOne, AllZero};
    let n = inputs.len();
    if n == 0 {
        return Err(DpError::EmptyPopcount);
    }
    let mut counters: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut fresh = |dp: &mut DpBuilder, class: &'static str| -> String {
        let k = counters.entry(class).or_insert(0);
        let label = format!("{prefix}{class}{k}");
        *k += 1;
        dp.set_block(label.clone());
        label
    };
    let mut cols: Vec<Vec<(Dr, SpacerPolarity)>> = vec![inputs.to_vec()];
    let mut outs: Vec<Dr> = Vec::new();
    let mut w = 0;
    while w < cols.len() {
        loop {
            match cols[w].len() {
                0 | 1 => break,
                2 => {
                    let (a, a_pol) = cols[w].remove(0);
                    let (b, b_pol) = cols[w].remove(0);
                    let pol = a_pol;
                    let b = normalize(dp, b, b_pol, pol, &mut fresh);
                    if n < (1usize << (w + 1)) {
                        // Two set bits in this column would exceed n, so
                        // the pair is mutually exclusive: merge with a
                        // dual-rail OR, no carry.
                        let label = fresh(dp, "or");
                        let merged = or_block(dp, a, b, pol, &label);
                        cols[w].push((merged, pol));
                    } else {
                        let label = fresh(dp, "ha");
                        let (sum, carry) = half_adder(dp, a, b, pol, &label);
                        cols[w].push((sum, pol));
                        if cols.len() == w + 1 {
                            cols.push(Vec::new());
                        }
                        cols[w + 1].push((carry, pol));
                    }
                }
                3 => {
                    let (a, a_pol) = cols[w].remove(0);
                    let (b, b_pol) = cols[w].remove(0);
                    let (cin, cin_pol) = cols[w].remove(0);
                    let a = normalize(dp, a, a_pol, AllZero, &mut fresh);
                    let b = normalize(dp, b, b_pol, AllZero, &mut fresh);
                    let cin = normalize(dp, cin, cin_pol, AllOne, &mut fresh);
                    let label = fresh(dp, "fa");
                    let (sum, cout) = full_adder(dp, a, b, cin, &label);
                    cols[w].push((sum, AllZero));
                    if cols.len() == w + 1 {
                        cols.push(Vec::new());
                    }
                    cols[w + 1].push((cout, AllOne));
                }
                _ => {
                    // One level of pairwise half-adders across the column.
                    let level = std::mem::take(&mut cols[w]);
                    let mut sums = Vec::with_capacity(level.len().div_ceil(2));
                    let mut carries = Vec::new();
                    let mut iter = level.into_iter();
                    while let Some((a, a_pol)) = iter.next() {
                        match iter.next() {
                            Some((b, b_pol)) => {
                                let pol = a_pol;
                                let b = normalize(dp, b, b_pol, pol, &mut fresh);
                                let label = fresh(dp, "ha");
                                let (sum, carry) = half_adder(dp, a, b, pol, &label);
                                sums.push((sum, pol));
                                carries.push((carry, pol));
                            }
                            None => sums.push((a, a_pol)),
                        }
                    }
                    cols[w] = sums;
                    if !carries.is_empty() {
                        if cols.len() == w + 1 {
                            cols.push(Vec::new());
                        }
                        cols[w + 1].extend(carries);
                    }
                }
            }
        }
        let (y, y_pol) = cols[w].remove(0);
        outs.push(normalize(dp, y, y_pol, AllZero, &mut fresh));
        w += 1;
    }
    Ok(outs)
}

fn normalize(
    dp: &mut DpBuilder,
    dr: Dr,
    pol: SpacerPolarity,
    want: SpacerPolarity,
    fresh: &mut impl FnMut(&mut DpBuilder, &'static str) -> String,
) -> Dr {
    if pol == want {
        return dr;
    }
    let label = fresh(dp, "spinv");
    spacer_inverter(dp, dr, pol, &label).0
}

/// Standalone n-input population count (AllZero PI/PO pairs).
pub fn build_popcount(n: usize) -> Result<PopcountBlock, DpError> {
    if n == 0 {
        return Err(DpError::EmptyPopcount);
    }
    let mut dp = DpBuilder::new();
    dp.set_block("pi");
    let inputs: Vec<(Dr, SpacerPolarity)> = (0..n)
        .map(|i| {
            (
                dp.pi_pair(&format!("x{i}"), SpacerPolarity::AllZero),
                SpacerPolarity::AllZero,
            )
        })
        .collect();
    let y = popcount_into(&mut dp, &inputs, "")?;
    let bits = y.len();
    for (i, dr) in y.iter().enumerate() {
        dp.bind(&format!("y{i}"), *dr, SpacerPolarity::AllZero);
        dp.po_pair(*dr);
    }
    finish_block(dp, n, bits)
}

/// A mapped block with its binding and block labels.
#[derive(Debug, Clone)]
pub struct PopcountBlock {
    pub netlist: Netlist,
    pub binding: DualRailBinding,
    pub block_map: BTreeMap<u32, String>,
    pub input_bits: usize,
    pub output_bits: usize,
}

fn finish_block(dp: DpBuilder, input_bits: usize, output_bits: usize) -> Result<PopcountBlock, DpError> {
    let (netlist, mut binding, block_map) = dp.finish()?;
    let analysis = compute_spacer_polarity(&netlist, &binding, &BTreeMap::new())?;
    apply_polarity(&netlist, &mut binding, &analysis);
    Ok(PopcountBlock {
        netlist,
        binding,
        block_map,
        input_bits,
        output_bits,
    })
}

impl PopcountBlock {
    /// Evaluates the block on one input assignment (zero delay) and
    /// returns the output value.
    pub fn eval(&self, inputs: &[bool]) -> Result<usize, DpError> {
        assert_eq!(inputs.len(), self.input_bits);
        let pi_values: Vec<bool> = inputs.iter().flat_map(|&v| [v, !v]).collect();
        let values = self.netlist.eval_topological(&pi_values)?;
        let mut out = 0usize;
        for bit in 0..self.output_bits {
            let sig = &self.binding.signals[self
                .binding
                .find(&format!("y{bit}"))
                .expect("output signals are bound")];
            let p = values[sig.pos.index()] == LogicValue::One;
            let n = values[sig.neg.index()] == LogicValue::One;
            debug_assert_ne!(p, n, "valid codeword expected");
            if p {
                out |= 1 << bit;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Magnitude comparator
// ---------------------------------------------------------------------------

fn or_tree_single(dp: &mut DpBuilder, terms: &[NetId], prefix: &str) -> NetId {
    let mut layer: Vec<NetId> = terms.to_vec();
    let mut level = 0;
    while layer.len() > 1 {
        let mut next = Vec::new();
        for (i, chunk) in layer.chunks(4).enumerate() {
            match chunk.len() {
                1 => next.push(chunk[0]),
                k => {
                    let out = dp.single(format!("{prefix}or{level}_{i}"));
                    let kind = match k {
                        2 => GateKind::Or2,
                        3 => GateKind::Or3,
                        _ => GateKind::Or4,
                    };
                    dp.gate(kind, chunk, out);
                    next.push(out);
                }
            }
        }
        layer = next;
        level += 1;
    }
    layer[0]
}

/// MSB-first bit-pair comparator with a rippling request wire and 1-of-3
/// output. Stage `s` compares bit `w-1-s`; when the bits differ it asserts
/// greater/less directly and starves the downstream request, so stages
/// past the first difference never switch. The final forwarded request is
/// the equal output. Operand rails use the AllZero spacer; the three
/// output wires are all-low at spacer and mutually exclusive.
pub fn comparator_into(
    dp: &mut DpBuilder,
    a_bits: &[Dr],
    b_bits: &[Dr],
    prefix: &str,
) -> Result<(NetId, NetId, NetId), DpError> {
    let w = a_bits.len();
    if w == 0 || w != b_bits.len() {
        return Err(DpError::EmptyComparator);
    }
    let mut gts = Vec::with_capacity(w);
    let mut lts = Vec::with_capacity(w);
    let mut req: Option<NetId> = None;
    for s in 0..w {
        dp.set_block(format!("{prefix}stage{s}"));
        let i = w - 1 - s;
        let (a, b) = (a_bits[i], b_bits[i]);
        let eq_pp = dp.single(format!("{prefix}s{s}_eqp"));
        dp.gate(GateKind::And2, &[a.pos, b.pos], eq_pp);
        let eq_nn = dp.single(format!("{prefix}s{s}_eqn"));
        dp.gate(GateKind::And2, &[a.neg, b.neg], eq_nn);
        let eq = dp.single(format!("{prefix}s{s}_eq"));
        dp.gate(GateKind::Or2, &[eq_pp, eq_nn], eq);
        let gt = dp.single(format!("{prefix}s{s}_gt"));
        let lt = dp.single(format!("{prefix}s{s}_lt"));
        match req {
            None => {
                dp.gate(GateKind::And2, &[a.pos, b.neg], gt);
                dp.gate(GateKind::And2, &[a.neg, b.pos], lt);
                req = Some(eq);
            }
            Some(r) => {
                dp.gate(GateKind::And3, &[r, a.pos, b.neg], gt);
                dp.gate(GateKind::And3, &[r, a.neg, b.pos], lt);
                let fwd = dp.single(format!("{prefix}s{s}_req"));
                dp.gate(GateKind::And2, &[r, eq], fwd);
                req = Some(fwd);
            }
        }
        gts.push(gt);
        lts.push(lt);
    }
    dp.set_block(format!("{prefix}out"));
    let greater = or_tree_single(dp, &gts, &format!("{prefix}g"));
    let less = or_tree_single(dp, &lts, &format!("{prefix}l"));
    Ok((greater, req.unwrap(), less))
}

/// Standalone comparator over two w-bit dual-rail operands.
#[derive(Debug, Clone)]
pub struct ComparatorBlock {
    pub netlist: Netlist,
    pub binding: DualRailBinding,
    pub block_map: BTreeMap<u32, String>,
    pub width: usize,
    pub greater: NetId,
    pub equal: NetId,
    pub less: NetId,
}

pub fn build_comparator(w: usize) -> Result<ComparatorBlock, DpError> {
    if w == 0 {
        return Err(DpError::EmptyComparator);
    }
    let mut dp = DpBuilder::new();
    dp.set_block("pi");
    let a: Vec<Dr> = (0..w)
        .map(|i| dp.pi_pair(&format!("a{i}"), SpacerPolarity::AllZero))
        .collect();
    let b: Vec<Dr> = (0..w)
        .map(|i| dp.pi_pair(&format!("b{i}"), SpacerPolarity::AllZero))
        .collect();
    let (greater, equal, less) = comparator_into(&mut dp, &a, &b, "cmp/")?;
    dp.po_single(greater);
    dp.po_single(equal);
    dp.po_single(less);
    let (netlist, mut binding, block_map) = dp.finish()?;
    let analysis = compute_spacer_polarity(&netlist, &binding, &BTreeMap::new())?;
    apply_polarity(&netlist, &mut binding, &analysis);
    Ok(ComparatorBlock {
        netlist,
        binding,
        block_map,
        width: w,
        greater,
        equal,
        less,
    })
}

impl ComparatorBlock {
    pub fn eval(&self, a: usize, b: usize) -> Result<ComparatorOutcome, DpError> {
        let mut pi_values = Vec::with_capacity(4 * self.width);
        for i in 0..self.width {
            let v = a & (1 << i) != 0;
            pi_values.push(v);
            pi_values.push(!v);
        }
        for i in 0..self.width {
            let v = b & (1 << i) != 0;
            pi_values.push(v);
            pi_values.push(!v);
        }
        let values = self.netlist.eval_topological(&pi_values)?;
        let g = values[self.greater.index()] == LogicValue::One;
        let e = values[self.equal.index()] == LogicValue::One;
        let l = values[self.less.index()] == LogicValue::One;
        match (g, e, l) {
            (true, false, false) => Ok(ComparatorOutcome::Greater),
            (false, true, false) => Ok(ComparatorOutcome::Equal),
            (false, false, true) => Ok(ComparatorOutcome::Less),
            other => Err(DpError::Format(format!(
                "comparator output not one-hot: {other:?}"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Completion detector
// ---------------------------------------------------------------------------

fn and_tree_net(dp: &mut DpBuilder, terms: &[NetId], prefix: &str) -> NetId {
    let mut layer: Vec<NetId> = terms.to_vec();
    let mut level = 0;
    while layer.len() > 1 {
        let mut next = Vec::new();
        for (i, chunk) in layer.chunks(4).enumerate() {
            match chunk.len() {
                1 => next.push(chunk[0]),
                k => {
                    let out = dp.single(format!("{prefix}and{level}_{i}"));
                    let kind = match k {
                        2 => GateKind::And2,
                        3 => GateKind::And3,
                        _ => GateKind::And4,
                    };
                    dp.gate(kind, chunk, out);
                    next.push(out);
                }
            }
        }
        layer = next;
        level += 1;
    }
    layer[0]
}

/// Validity sensing half of the reduced completion detector: per-pair
/// validity (OR of rails for an AllZero pair, NAND for AllOne), OR3 over a
/// 1-of-3 group, and an AND tree into `done_raw`. No C-elements.
pub fn completion_tree_into(
    dp: &mut DpBuilder,
    pairs: &[(Dr, SpacerPolarity)],
    trio: Option<(NetId, NetId, NetId)>,
    prefix: &str,
) -> NetId {
    dp.set_block(format!("{prefix}cd"));
    let mut validity = Vec::new();
    for (k, &(dr, pol)) in pairs.iter().enumerate() {
        let vw = dp.single(format!("{prefix}cd_v{k}"));
        match pol {
            SpacerPolarity::AllZero => dp.gate(GateKind::Or2, &[dr.pos, dr.neg], vw),
            SpacerPolarity::AllOne => dp.gate(GateKind::Nand2, &[dr.pos, dr.neg], vw),
        };
        validity.push(vw);
    }
    if let Some((g, e, l)) = trio {
        let vw = dp.single(format!("{prefix}cd_v1of3"));
        dp.gate(GateKind::Or3, &[g, e, l], vw);
        validity.push(vw);
    }
    and_tree_net(dp, &validity, &format!("{prefix}cd_"))
}

/// Transport element delaying only the falling edge of `done_raw` by
/// `t_d`: done then indicates spacer-to-valid promptly while its falling
/// edge grants the internal reset grace period.
pub fn done_delay_into(dp: &mut DpBuilder, done_raw: NetId, t_d: u64, prefix: &str) -> NetId {
    dp.set_block(format!("{prefix}cd"));
    let done = dp.single(format!("{prefix}done"));
    dp.gate(GateKind::Delay { rise: 0, fall: t_d }, &[done_raw], done);
    done
}

/// Reduced completion detector: validity tree plus the delayed-fall done.
pub fn completion_detector_into(
    dp: &mut DpBuilder,
    pairs: &[(Dr, SpacerPolarity)],
    trio: Option<(NetId, NetId, NetId)>,
    t_d: u64,
    prefix: &str,
) -> NetId {
    let done_raw = completion_tree_into(dp, pairs, trio, prefix);
    done_delay_into(dp, done_raw, t_d, prefix)
}

/// Standalone completion detector over fresh PI pairs with the given
/// spacer polarities (plus an optional 1-of-3 group).
pub fn build_completion_detector(
    pair_polarities: &[SpacerPolarity],
    with_trio: bool,
    t_d: u64,
) -> Result<(Netlist, DualRailBinding, NetId), DpError> {
    let mut dp = DpBuilder::new();
    dp.set_block("pi");
    let pairs: Vec<(Dr, SpacerPolarity)> = pair_polarities
        .iter()
        .enumerate()
        .map(|(i, &pol)| (dp.pi_pair(&format!("po{i}"), pol), pol))
        .collect();
    let trio = if with_trio {
        let g = dp.single("gt");
        let e = dp.single("eq");
        let l = dp.single("lt");
        for n in [g, e, l] {
            dp.b.pi(n);
        }
        Some((g, e, l))
    } else {
        None
    };
    let done = completion_detector_into(&mut dp, &pairs, trio, t_d, "");
    dp.po_single(done);
    let (netlist, binding, _) = dp.finish()?;
    Ok((netlist, binding, done))
}

// ---------------------------------------------------------------------------
// Full inference datapath
// ---------------------------------------------------------------------------

/// The assembled dual-rail inference datapath.
#[derive(Debug, Clone)]
pub struct DatapathBundle {
    pub netlist: Netlist,
    pub binding: DualRailBinding,
    /// Gate id -> block label; covers every gate exactly once.
    pub block_map: BTreeMap<u32, String>,
    /// Feature input rail pairs, `f0..f{F-1}`.
    pub pi_f: Vec<(NetId, NetId)>,
    /// Exclude input rail pairs, per clause then per literal.
    pub pi_e: Vec<Vec<(NetId, NetId)>>,
    pub po_greater: NetId,
    pub po_equal: NetId,
    pub po_less: NetId,
    pub po_done: NetId,
    pub config: TmConfig,
    /// Per-net spacer value from the forward analysis.
    pub spacer: Vec<bool>,
}

/// Builds clause blocks, the two vote-count trees, the comparator, and the
/// reduced completion detector for `config`, sizing the done fall delay
/// from a timing analysis at `delay_model`.
pub fn build_inference_datapath(
    config: &TmConfig,
    delay_model: &DelayModel,
    timing: TimingOptions,
) -> Result<DatapathBundle, DpError> {
    let features = config.features();
    let clauses = config.clauses();
    let half = clauses / 2;

    let mut dp = DpBuilder::new();
    dp.set_block("pi");
    let f: Vec<Dr> = (0..features)
        .map(|m| dp.pi_pair(&format!("f{m}"), SpacerPolarity::AllZero))
        .collect();
    let e: Vec<Vec<Dr>> = (0..clauses)
        .map(|j| {
            (0..2 * features)
                .map(|k| dp.pi_pair(&format!("e{j}_{k}"), SpacerPolarity::AllZero))
                .collect()
        })
        .collect();

    // One mapped clause fragment, instantiated per clause.
    let (frag, frag_binding) = build_clause_block_dr(features)?;
    let mut clause_outs: Vec<(Dr, SpacerPolarity)> = Vec::with_capacity(clauses);
    for j in 0..clauses {
        dp.set_block(format!("clause_{j}"));
        let mut inputs = BTreeMap::new();
        for m in 0..features {
            inputs.insert(format!("f{m}"), f[m]);
        }
        for k in 0..2 * features {
            inputs.insert(format!("e{k}"), e[j][k]);
        }
        let sigs = instantiate(&mut dp, &frag, &frag_binding, &inputs, &format!("c{j}/"))?;
        let out = sigs
            .get("clause")
            .copied()
            .ok_or_else(|| DpError::UnknownPolarity(format!("c{j}/clause")))?;
        let pol = frag_binding
            .signals
            .iter()
            .find(|s| s.name == "clause")
            .map(|s| s.polarity)
            .ok_or_else(|| DpError::UnknownPolarity("clause".into()))?;
        clause_outs.push((out, pol));
    }

    // Vote-count trees. The fixed eight-input topology is used when a tree
    // counts exactly eight clauses; its AllZero ports then take explicit
    // spacer inverters on the (AllOne-spacer) clause outputs.
    let tree = |dp: &mut DpBuilder,
                    ins: &[(Dr, SpacerPolarity)],
                    prefix: &str|
     -> Result<Vec<Dr>, DpError> {
        if ins.len() == 8 {
            let mut zs = Vec::with_capacity(8);
            for (k, &(dr, pol)) in ins.iter().enumerate() {
                if pol == SpacerPolarity::AllZero {
                    zs.push(dr);
                } else {
                    dp.set_block(format!("{prefix}spinv_in{k}"));
                    zs.push(spacer_inverter(dp, dr, pol, &format!("{prefix}in{k}z")).0);
                }
            }
            let arr: [Dr; 8] = zs.as_slice().try_into().unwrap();
            Ok(popcount8_into(dp, &arr, prefix).to_vec())
        } else {
            popcount_into(dp, ins, prefix)
        }
    };
    let pos_bits = tree(&mut dp, &clause_outs[..half], "pcp/")?;
    let neg_bits = tree(&mut dp, &clause_outs[half..], "pcn/")?;
    debug_assert_eq!(pos_bits.len(), neg_bits.len());
    for (i, dr) in pos_bits.iter().enumerate() {
        dp.bind(&format!("pcp/y{i}"), *dr, SpacerPolarity::AllZero);
    }
    for (i, dr) in neg_bits.iter().enumerate() {
        dp.bind(&format!("pcn/y{i}"), *dr, SpacerPolarity::AllZero);
    }

    let (greater, equal, less) = comparator_into(&mut dp, &pos_bits, &neg_bits, "cmp/")?;

    // Build the validity tree, then size the done fall delay. The formula
    // delay (t_int - t_io, margined) anchors on the worst-case output
    // collapse; because early propagation lets the 1-of-3 output collapse
    // data-dependently early, the annotation is widened to cover the gap
    // between the earliest possible done_raw fall and the internal reset
    // bound, so done's falling edge always trails the last internal net.
    let done_raw = completion_tree_into(&mut dp, &[], Some((greater, equal, less)), "");
    let preview = dp.preview(&[greater, equal, less])?;
    let report = compute_timing(&preview, delay_model, timing)?;
    let earliest = earliest_arrivals(&preview, delay_model)?;
    let raw_anchor = earliest[done_raw.index()].unwrap_or(0);
    let t_d_cover = report.t_int.saturating_sub(raw_anchor);
    let t_d = ((report.t_d_raw.max(t_d_cover)) as f64 * timing.margin).ceil() as u64;
    let done = done_delay_into(&mut dp, done_raw, t_d, "");

    dp.po_single(greater);
    dp.po_single(equal);
    dp.po_single(less);
    dp.po_single(done);
    dp.b.meta("tm_features", features.to_string());
    dp.b.meta("tm_clauses", clauses.to_string());

    let pi_f: Vec<(NetId, NetId)> = f.iter().map(|dr| (dr.pos, dr.neg)).collect();
    let pi_e: Vec<Vec<(NetId, NetId)>> = e
        .iter()
        .map(|row| row.iter().map(|dr| (dr.pos, dr.neg)).collect())
        .collect();

    let (netlist, mut binding, block_map) = dp.finish()?;
    let analysis = compute_spacer_polarity(&netlist, &binding, &BTreeMap::new())?;
    apply_polarity(&netlist, &mut binding, &analysis);

    Ok(DatapathBundle {
        netlist,
        binding,
        block_map,
        pi_f,
        pi_e,
        po_greater: greater,
        po_equal: equal,
        po_less: less,
        po_done: done,
        config: config.clone(),
        spacer: analysis.net_spacer,
    })
}

impl DatapathBundle {
    /// Zero-delay functional evaluation of one `(f, e)` assignment.
    pub fn eval_outcome(&self, f: &[bool], e: &[Vec<bool>]) -> Result<ComparatorOutcome, DpError> {
        let mut pi_values = vec![false; self.netlist.pis().len()];
        let pi_pos: BTreeMap<NetId, usize> = self
            .netlist
            .pis()
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, i))
            .collect();
        let mut set = |pair: (NetId, NetId), v: bool| {
            pi_values[pi_pos[&pair.0]] = v;
            pi_values[pi_pos[&pair.1]] = !v;
        };
        for (m, &pair) in self.pi_f.iter().enumerate() {
            set(pair, f[m]);
        }
        for (j, row) in self.pi_e.iter().enumerate() {
            for (k, &pair) in row.iter().enumerate() {
                set(pair, e[j][k]);
            }
        }
        let values = self.netlist.eval_topological(&pi_values)?;
        let g = values[self.po_greater.index()] == LogicValue::One;
        let eq = values[self.po_equal.index()] == LogicValue::One;
        let l = values[self.po_less.index()] == LogicValue::One;
        match (g, eq, l) {
            (true, false, false) => Ok(ComparatorOutcome::Greater),
            (false, true, false) => Ok(ComparatorOutcome::Equal),
            (false, false, true) => Ok(ComparatorOutcome::Less),
            other => Err(DpError::Format(format!(
                "datapath output not one-hot: {other:?}"
            ))),
        }
    }

    pub fn to_json_string(&self) -> String {
        let file = BundleFile {
            netlist: self.netlist.to_json(),
            binding: self.binding.to_json(),
            block_map: self
                .block_map
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            pi_groups: PiGroupsFile {
                f: self.pi_f.iter().map(|&(p, n)| [p.index() as u32, n.index() as u32]).collect(),
                e: self
                    .pi_e
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|&(p, n)| [p.index() as u32, n.index() as u32])
                            .collect()
                    })
                    .collect(),
            },
            po_group: PoGroupFile {
                greater: self.po_greater.index() as u32,
                equal: self.po_equal.index() as u32,
                less: self.po_less.index() as u32,
                done: self.po_done.index() as u32,
            },
            tm_config: serde_json::from_str(&self.config.to_json_string())
                .expect("config serializes to valid json"),
        };
        serde_json::to_string_pretty(&file).expect("bundle serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self, DpError> {
        let file: BundleFile =
            serde_json::from_str(s).map_err(|e| DpError::Format(e.to_string()))?;
        let netlist = Netlist::from_json(file.netlist)?;
        let binding = DualRailBinding::from_json(file.binding, &netlist)?;
        let net = |raw: u32| -> Result<NetId, DpError> {
            if (raw as usize) < netlist.net_count() {
                Ok(netlist.net_ids().nth(raw as usize).unwrap())
            } else {
                Err(DpError::Format(format!("net id {raw} out of range")))
            }
        };
        let pair = |p: [u32; 2]| -> Result<(NetId, NetId), DpError> { Ok((net(p[0])?, net(p[1])?)) };
        let pi_f = file
            .pi_groups
            .f
            .iter()
            .map(|&p| pair(p))
            .collect::<Result<Vec<_>, _>>()?;
        let pi_e = file
            .pi_groups
            .e
            .iter()
            .map(|row| row.iter().map(|&p| pair(p)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let config = TmConfig::from_json_str(
            &serde_json::to_string(&file.tm_config).map_err(|e| DpError::Format(e.to_string()))?,
        )?;
        let block_map = file
            .block_map
            .iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .map(|id| (id, v.clone()))
                    .map_err(|_| DpError::Format(format!("bad gate id {k:?} in block_map")))
            })
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        let mut bundle = DatapathBundle {
            po_greater: net(file.po_group.greater)?,
            po_equal: net(file.po_group.equal)?,
            po_less: net(file.po_group.less)?,
            po_done: net(file.po_group.done)?,
            netlist,
            binding,
            block_map,
            pi_f,
            pi_e,
            config,
            spacer: Vec::new(),
        };
        let analysis =
            compute_spacer_polarity(&bundle.netlist, &bundle.binding, &BTreeMap::new())?;
        apply_polarity(&bundle.netlist, &mut bundle.binding, &analysis);
        bundle.spacer = analysis.net_spacer;
        Ok(bundle)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    netlist: serde_json::Value,
    binding: serde_json::Value,
    block_map: BTreeMap<String, String>,
    pi_groups: PiGroupsFile,
    po_group: PoGroupFile,
    tm_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PiGroupsFile {
    f: Vec<[u32; 2]>,
    e: Vec<Vec<[u32; 2]>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoGroupFile {
    greater: u32,
    equal: u32,
    less: u32,
    done: u32,
}

// ---------------------------------------------------------------------------
// Structural audits
// ---------------------------------------------------------------------------

/// Cell class used by the gate-count reports.
pub fn kind_class(kind: GateKind) -> &'static str {
    use GateKind::*;
    match kind {
        Aoi21 | Aoi22 | Oai21 | Oai22 => "complex",
        Inv => "inverter",
        Delay { .. } => "delay",
        C2 => "sequential",
        _ => "simple",
    }
}

/// Number of gates per block label.
pub fn gates_per_block(block_map: &BTreeMap<u32, String>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for label in block_map.values() {
        *out.entry(label.clone()).or_insert(0) += 1;
    }
    out
}

/// Distinct block instances per class, where the class is the label with
/// trailing digits stripped (`ha3` -> `ha`, `pcp/fa1` -> `pcp/fa`).
pub fn block_instances(block_map: &BTreeMap<u32, String>) -> BTreeMap<String, usize> {
    let mut seen: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
    for label in block_map.values() {
        let class = label.trim_end_matches(|c: char| c.is_ascii_digit()).to_string();
        seen.entry(class).or_default().insert(label.clone());
    }
    seen.into_iter().map(|(k, v)| (k, v.len())).collect()
}

/// Per-block kind-class histogram for one block label.
pub fn block_kind_histogram(
    netlist: &Netlist,
    block_map: &BTreeMap<u32, String>,
    label: &str,
) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for (raw, l) in block_map {
        if l == label {
            let kind = netlist.gate(netlist.gate_ids().nth(*raw as usize).unwrap()).kind;
            *out.entry(kind_class(kind)).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tm::{compare_oracle, popcount_oracle};

    fn eval_pairs(netlist: &Netlist, pi_values: &[bool]) -> Vec<LogicValue> {
        netlist.eval_topological(pi_values).unwrap()
    }

    fn dr_value(values: &[LogicValue], dr: &BoundSignal) -> bool {
        let p = values[dr.pos.index()] == LogicValue::One;
        let n = values[dr.neg.index()] == LogicValue::One;
        assert_ne!(p, n, "signal {} not a valid codeword", dr.name);
        p
    }

    #[test]
    fn half_adder_exhaustive_and_counts() {
        let mut dp = DpBuilder::new();
        dp.set_block("ha");
        let a = dp.pi_pair("a", SpacerPolarity::AllZero);
        let b = dp.pi_pair("b", SpacerPolarity::AllZero);
        let (sum, carry) = half_adder(&mut dp, a, b, SpacerPolarity::AllZero, "ha");
        dp.po_pair(sum);
        dp.po_pair(carry);
        let (netlist, binding, block_map) = dp.finish().unwrap();
        // 2 complex + 2 simple + 2 inverters.
        let hist = block_kind_histogram(&netlist, &block_map, "ha");
        assert_eq!(hist.get("complex"), Some(&2));
        assert_eq!(hist.get("simple"), Some(&2));
        assert_eq!(hist.get("inverter"), Some(&2));
        for av in [false, true] {
            for bv in [false, true] {
                let values = eval_pairs(&netlist, &[av, !av, bv, !bv]);
                let s = dr_value(&values, &binding.signals[binding.find("ha_s").unwrap()]);
                let c = dr_value(&values, &binding.signals[binding.find("ha_c").unwrap()]);
                assert_eq!(s, av ^ bv);
                assert_eq!(c, av && bv);
            }
        }
        // HA(1,1) -> sum 0 carry 1 is covered above; no spacer inversion:
        let analysis = compute_spacer_polarity(&netlist, &binding, &BTreeMap::new()).unwrap();
        assert!(analysis.polarity.iter().all(|&p| p == SpacerPolarity::AllZero));
    }

    #[test]
    fn full_adder_exhaustive_counts_and_carry_spacer() {
        let mut dp = DpBuilder::new();
        dp.set_block("fa");
        let a = dp.pi_pair("a", SpacerPolarity::AllZero);
        let b = dp.pi_pair("b", SpacerPolarity::AllZero);
        let cin = dp.pi_pair("cin", SpacerPolarity::AllOne);
        let (sum, cout) = full_adder(&mut dp, a, b, cin, "fa");
        dp.po_pair(sum);
        dp.po_pair(cout);
        let (netlist, binding, block_map) = dp.finish().unwrap();
        // Six complex and two simple gates, plus the two carry-view
        // inverters of the hazard-free arrangement.
        let hist = block_kind_histogram(&netlist, &block_map, "fa");
        assert_eq!(hist.get("complex"), Some(&6));
        assert_eq!(hist.get("simple"), Some(&2));
        assert_eq!(hist.get("inverter"), Some(&2));
        for av in [false, true] {
            for bv in [false, true] {
                for cv in [false, true] {
                    let values =
                        eval_pairs(&netlist, &[av, !av, bv, !bv, cv, !cv]);
                    let s = dr_value(&values, &binding.signals[binding.find("fa_s").unwrap()]);
                    let co = dr_value(&values, &binding.signals[binding.find("fa_co").unwrap()]);
                    let total = av as usize + bv as usize + cv as usize;
                    assert_eq!(s, total % 2 == 1, "sum for {av}{bv}{cv}");
                    assert_eq!(co, total >= 2, "carry for {av}{bv}{cv}");
                }
            }
        }
        // Carry-out spacer inverted with respect to sum.
        let analysis = compute_spacer_polarity(&netlist, &binding, &BTreeMap::new()).unwrap();
        let s = binding.find("fa_s").unwrap();
        let co = binding.find("fa_co").unwrap();
        assert_eq!(analysis.polarity[s], SpacerPolarity::AllZero);
        assert_eq!(analysis.polarity[co], SpacerPolarity::AllOne);
    }

    #[test]
    fn popcount8_exhaustive_and_structure() {
        let pc = build_popcount8().unwrap();
        for x in 0..256usize {
            let bits: Vec<bool> = (0..8).map(|i| x & (1 << i) != 0).collect();
            assert_eq!(pc.eval(&bits).unwrap(), popcount_oracle(&bits), "x={x:#04x}");
        }
        let blocks = block_instances(&pc.block_map);
        assert_eq!(blocks.get("ha"), Some(&9));
        assert_eq!(blocks.get("fa"), Some(&2));
        assert_eq!(blocks.get("or"), Some(&2));
        assert_eq!(blocks.get("spinv"), Some(&2));
        // No spacer inversion overall: outputs AllZero like the inputs.
        for i in 0..4 {
            let y = pc.binding.find(&format!("y{i}")).unwrap();
            assert_eq!(pc.binding.signals[y].polarity, SpacerPolarity::AllZero);
        }
    }

    #[test]
    fn popcount_generic_small_sizes() {
        // n=1 is a wire.
        let pc1 = build_popcount(1).unwrap();
        assert_eq!(pc1.netlist.gate_count(), 0);
        assert_eq!(pc1.eval(&[true]).unwrap(), 1);
        // n=3 is one full-adder plus spacer inverters.
        let pc3 = build_popcount(3).unwrap();
        let blocks = block_instances(&pc3.block_map);
        assert_eq!(blocks.get("fa"), Some(&1));
        assert_eq!(blocks.get("ha"), None);
        for x in 0..8usize {
            let bits: Vec<bool> = (0..3).map(|i| x & (1 << i) != 0).collect();
            assert_eq!(pc3.eval(&bits).unwrap(), popcount_oracle(&bits));
        }
        for n in [2usize, 4, 5, 6, 7] {
            let pc = build_popcount(n).unwrap();
            for x in 0..(1usize << n) {
                let bits: Vec<bool> = (0..n).map(|i| x & (1 << i) != 0).collect();
                assert_eq!(pc.eval(&bits).unwrap(), popcount_oracle(&bits), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn popcount_generic_matches_fixed_popcount8() {
        let generic = build_popcount(8).unwrap();
        let fixed = build_popcount8().unwrap();
        for x in 0..256usize {
            let bits: Vec<bool> = (0..8).map(|i| x & (1 << i) != 0).collect();
            assert_eq!(generic.eval(&bits).unwrap(), fixed.eval(&bits).unwrap());
        }
    }

    #[test]
    fn comparator_exhaustive_w4() {
        let cmp = build_comparator(4).unwrap();
        for a in 0..16usize {
            for b in 0..16usize {
                assert_eq!(cmp.eval(a, b).unwrap(), compare_oracle(a, b), "({a},{b})");
            }
        }
    }

    #[test]
    fn comparator_w1_and_equal_inputs() {
        let cmp = build_comparator(1).unwrap();
        assert_eq!(cmp.eval(1, 0).unwrap(), ComparatorOutcome::Greater);
        assert_eq!(cmp.eval(0, 0).unwrap(), ComparatorOutcome::Equal);
        let cmp4 = build_comparator(4).unwrap();
        assert_eq!(cmp4.eval(5, 5).unwrap(), ComparatorOutcome::Equal);
    }

    #[test]
    fn clause_block_matches_oracle_and_single_inversion() {
        use crate::dualrail::path_inversion_bounds;
        for features in 1..=3usize {
            let single = build_clause_block(features).unwrap();
            let (dual, binding) = build_clause_block_dr(features).unwrap();
            let n_pi = single.pis().len();
            for bits in 0..(1u32 << n_pi) {
                let pis: Vec<bool> = (0..n_pi).map(|i| bits & (1 << i) != 0).collect();
                let f = &pis[..features];
                let e = &pis[features..];
                let want = crate::tm::clause_eval(f, e).unwrap();
                let dual_pis: Vec<bool> = pis.iter().flat_map(|&v| [v, !v]).collect();
                let values = dual.eval_topological(&dual_pis).unwrap();
                let sig = &binding.signals[binding.find("clause").unwrap()];
                let p = values[sig.pos.index()] == LogicValue::One;
                assert_eq!(p, want, "F={features} bits={bits:b}");
            }
            // Every PI-to-PO path passes exactly one inverting gate.
            let bounds = path_inversion_bounds(&dual);
            for &po in dual.pos() {
                assert_eq!(bounds[po.index()], (1, 1), "F={features}");
            }
            // Inverting spacer overall.
            let sig = &binding.signals[binding.find("clause").unwrap()];
            assert_eq!(sig.polarity, SpacerPolarity::AllOne);
        }
    }

    #[test]
    fn completion_detector_validity() {
        // Two AllZero pairs, one AllOne pair, no trio.
        let pols = [
            SpacerPolarity::AllZero,
            SpacerPolarity::AllZero,
            SpacerPolarity::AllOne,
        ];
        let (netlist, _binding, done) = build_completion_detector(&pols, false, 17).unwrap();
        // All pairs at spacer: done low.
        let spacer_pis = [false, false, false, false, true, true];
        let values = netlist.eval_topological(&spacer_pis).unwrap();
        assert_eq!(values[done.index()], LogicValue::Zero);
        // All pairs valid: done high.
        let valid_pis = [true, false, false, true, true, false];
        let values = netlist.eval_topological(&valid_pis).unwrap();
        assert_eq!(values[done.index()], LogicValue::One);
        // One pair still at spacer: done stays low.
        let partial = [true, false, false, false, true, false];
        let values = netlist.eval_topological(&partial).unwrap();
        assert_eq!(values[done.index()], LogicValue::Zero);
    }

    #[test]
    fn datapath_small_config_matches_inference_oracle() {
        let config = TmConfig::all_excluded(2, 4).unwrap();
        let bundle =
            build_inference_datapath(&config, &DelayModel::nominal(), TimingOptions::default())
                .unwrap();
        // Every gate is labeled.
        assert_eq!(bundle.block_map.len(), bundle.netlist.gate_count());
        // All-excluded: both counts C/2, outcome Equal for any f.
        for bits in 0..4u32 {
            let f = vec![bits & 1 != 0, bits & 2 != 0];
            let got = bundle.eval_outcome(&f, config.exclude()).unwrap();
            assert_eq!(got, ComparatorOutcome::Equal);
        }
    }

    #[test]
    fn datapath_randomized_oracle_equivalence() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let features = 2;
        let clauses = 4;
        for _ in 0..25 {
            let exclude: Vec<Vec<bool>> = (0..clauses)
                .map(|_| (0..2 * features).map(|_| rng.random()).collect())
                .collect();
            let config = TmConfig::new(features, clauses, exclude).unwrap();
            let bundle = build_inference_datapath(
                &config,
                &DelayModel::nominal(),
                TimingOptions::default(),
            )
            .unwrap();
            for bits in 0..(1u32 << features) {
                let f: Vec<bool> = (0..features).map(|i| bits & (1 << i) != 0).collect();
                let want = crate::tm::infer(&f, &config).unwrap().comparator_outcome;
                let got = bundle.eval_outcome(&f, config.exclude()).unwrap();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn standalone_adder_fragments() {
        let (ha, ha_binding, _) = build_half_adder_dr().unwrap();
        assert_eq!(ha.pis().len(), 4);
        assert_eq!(ha.pos().len(), 4);
        assert!(ha_binding.find("sum").is_some());
        let (fa, fa_binding, _) = build_full_adder_dr().unwrap();
        assert_eq!(fa.pis().len(), 6);
        let cout = &fa_binding.signals[fa_binding.find("cout").unwrap()];
        assert_eq!(cout.polarity, SpacerPolarity::AllOne);
        // FA(1,1,1) -> sum 1, carry 1.
        let pis = [true, false, true, false, true, false];
        let values = fa.eval_topological(&pis).unwrap();
        let sum = &fa_binding.signals[fa_binding.find("sum").unwrap()];
        assert_eq!(values[sum.pos.index()], LogicValue::One);
        assert_eq!(values[cout.pos.index()], LogicValue::One);
    }

    #[test]
    fn builder_error_paths() {
        assert!(matches!(build_popcount(0), Err(DpError::EmptyPopcount)));
        assert!(matches!(build_comparator(0), Err(DpError::EmptyComparator)));
    }

    #[test]
    fn bundle_json_round_trip() {
        let config = TmConfig::all_excluded(2, 4).unwrap();
        let bundle =
            build_inference_datapath(&config, &DelayModel::nominal(), TimingOptions::default())
                .unwrap();
        let parsed = DatapathBundle::from_json_str(&bundle.to_json_string()).unwrap();
        assert_eq!(parsed.netlist, bundle.netlist);
        assert_eq!(parsed.binding.signals, bundle.binding.signals);
        assert_eq!(parsed.block_map, bundle.block_map);
        assert_eq!(parsed.config, bundle.config);
        assert_eq!(parsed.spacer, bundle.spacer);
    }
}
