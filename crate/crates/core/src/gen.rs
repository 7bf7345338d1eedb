//! Seeded random unate netlist generation for property testing and
//! mapping-soundness sweeps.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::netlist::{GateKind, NetId, Netlist, NetlistBuilder};

/// Shape parameters for one random netlist.
#[derive(Debug, Clone, Copy)]
pub struct RandomNetlistSpec {
    pub min_pis: usize,
    pub max_pis: usize,
    pub min_gates: usize,
    pub max_gates: usize,
    /// Include the negative-unate kinds (NAND/NOR/AOI/OAI) in the pool.
    pub negative_kinds: bool,
}

impl Default for RandomNetlistSpec {
    fn default() -> Self {
        RandomNetlistSpec {
            min_pis: 2,
            max_pis: 8,
            min_gates: 1,
            max_gates: 25,
            negative_kinds: true,
        }
    }
}

const POSITIVE_POOL: &[GateKind] = &[
    GateKind::Inv,
    GateKind::Buf,
    GateKind::And2,
    GateKind::And3,
    GateKind::And4,
    GateKind::Or2,
    GateKind::Or3,
    GateKind::Or4,
];

const NEGATIVE_POOL: &[GateKind] = &[
    GateKind::Nand2,
    GateKind::Nand3,
    GateKind::Nand4,
    GateKind::Nor2,
    GateKind::Nor3,
    GateKind::Nor4,
    GateKind::Aoi21,
    GateKind::Aoi22,
    GateKind::Oai21,
    GateKind::Oai22,
];

/// Generates a valid combinational unate netlist: every gate reads nets
/// already driven (so the graph is acyclic by construction) and every sink
/// net becomes a primary output.
pub fn random_unate_netlist(rng: &mut StdRng, spec: &RandomNetlistSpec) -> Netlist {
    let n_pis = rng.random_range(spec.min_pis..=spec.max_pis);
    let n_gates = rng.random_range(spec.min_gates..=spec.max_gates);
    let mut b = NetlistBuilder::new();
    let mut available: Vec<NetId> = (0..n_pis)
        .map(|i| {
            let n = b.named_net(format!("i{i}"));
            b.pi(n);
            n
        })
        .collect();
    let mut pool: Vec<GateKind> = POSITIVE_POOL.to_vec();
    if spec.negative_kinds {
        pool.extend_from_slice(NEGATIVE_POOL);
    }
    let mut consumed = vec![false; n_pis + n_gates];
    for g in 0..n_gates {
        let kind = pool[rng.random_range(0..pool.len())];
        let inputs: Vec<NetId> = (0..kind.arity())
            .map(|_| available[rng.random_range(0..available.len())])
            .collect();
        for input in &inputs {
            consumed[input.index()] = true;
        }
        let out = b.named_net(format!("g{g}"));
        b.gate(kind, &inputs, out);
        available.push(out);
    }
    for &net in &available {
        if !consumed[net.index()] {
            b.po(net);
        }
    }
    b.build().expect("generated netlists are valid")
}

/// Convenience: a deterministic batch from one seed.
pub fn random_unate_netlists(seed: u64, count: usize, spec: &RandomNetlistSpec) -> Vec<Netlist> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count).map(|_| random_unate_netlist(&mut rng, spec)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_netlists_are_valid_and_unate() {
        for n in random_unate_netlists(11, 50, &RandomNetlistSpec::default()) {
            assert!(n.check_unate_only().is_empty());
            assert!(!n.pos().is_empty());
            assert!(n.pis().len() <= 8);
            assert!(n.gate_count() <= 25);
            // Evaluable on an arbitrary assignment.
            let pis = vec![true; n.pis().len()];
            n.eval_zero_delay(&pis, false).unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = random_unate_netlists(3, 5, &RandomNetlistSpec::default());
        let b = random_unate_netlists(3, 5, &RandomNetlistSpec::default());
        assert_eq!(a, b);
    }
}
