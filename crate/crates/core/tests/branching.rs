//! Split scores against an independent dense re-derivation, and selection
//! against brute force.

use proptest::prelude::*;

use nnbound::bounds::{LayerBounds, Phase};
use nnbound::branching::{
    choose_branch, fsb_candidates, fsb_child_bound, fsb_decide, fsb_scores, sr_scores, sr_select, BranchDecision,
    Branching, SR_THRESHOLD,
};
use nnbound::instances::{random_instance, rng_from_seed, Instance, InstanceShape};
use nnbound::network::{Dense, LinearMap, Network};
use nnbound::propagation::{intermediate_bounds, IbStrategy};

fn shape() -> InstanceShape {
    InstanceShape {
        input_dim: (2, 4),
        hidden_layers: (1, 3),
        width: (3, 7),
        radius: (0.3, 1.0),
        activation: nnbound::network::Activation::Relu,
    }
}

fn setup(seed: u64) -> (Instance, LayerBounds) {
    let inst = random_instance(&mut rng_from_seed(seed), &shape());
    let b = intermediate_bounds(&inst.net, &inst.domain, IbStrategy::WkCrown, None).unwrap();
    (inst, b)
}

fn ambiguous(l: f64, u: f64) -> bool {
    l < 0.0 && u > 0.0 && u - l >= 1e-12
}

fn dense(net: &Network, k: usize) -> Dense {
    match net.layer(k) {
        LinearMap::Dense(d) => d.clone(),
        other => other.materialize(),
    }
}

/// `λ̄_k = -W_{k+1}ᵀ g_{k+1}` with `g_n = 1` and `g_k = slope_k ⊙ (-λ̄_k)`,
/// slopes `1`, `0` or `u/(u-l)` by phase.
fn reference_lambda(net: &Network, b: &LayerBounds) -> Vec<Vec<f64>> {
    let n = net.num_linear();
    let mut g = vec![1.0];
    let mut out = vec![Vec::new(); n - 1];
    for k in (1..n).rev() {
        let w = dense(net, k + 1);
        let lam: Vec<f64> = (0..w.cols())
            .map(|j| -(0..w.rows()).map(|i| w.at(i, j) * g[i]).sum::<f64>())
            .collect();
        let h = k - 1;
        g = lam
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (l, u) = (b.lower[h][i], b.upper[h][i]);
                let slope = if l >= 0.0 {
                    1.0
                } else if u <= 0.0 || !ambiguous(l, u) {
                    0.0
                } else {
                    u / (u - l)
                };
                -v * slope
            })
            .collect();
        out[h] = lam;
    }
    out
}

/// `(s_SR, s_FSB, t)` per hidden neuron, zero outside the ambiguous set.
fn reference_scores(net: &Network, b: &LayerBounds) -> [Vec<Vec<f64>>; 3] {
    let lam = reference_lambda(net, b);
    let mut sr = Vec::new();
    let mut fsb = Vec::new();
    let mut t = Vec::new();
    for (h, lam_h) in lam.iter().enumerate() {
        let bias = dense(net, h + 1).bias().to_vec();
        let (mut a, mut c, mut d) = (vec![0.0; lam_h.len()], vec![0.0; lam_h.len()], vec![0.0; lam_h.len()]);
        for i in 0..lam_h.len() {
            let (l, u) = (b.lower[h][i], b.upper[h][i]);
            if !ambiguous(l, u) {
                continue;
            }
            let lb = lam_h[i] * bias[i];
            let relaxed = -u / (u - l) * lb + u * l / (u - l) * lam_h[i].max(0.0);
            a[i] = (lb.max(0.0) + relaxed).abs();
            c[i] = (lb.min(0.0) + relaxed).abs();
            d[i] = -u * l / (u - l) * lam_h[i].max(0.0);
        }
        sr.push(a);
        fsb.push(c);
        t.push(d);
    }
    [sr, fsb, t]
}

fn close(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| (x - y).abs() <= 1e-10 * (1.0 + y.abs()))
}

/// All ambiguous neurons, ordered by `(layer, neuron)`.
fn ambiguous_list(b: &LayerBounds) -> Vec<BranchDecision> {
    let mut v = Vec::new();
    for h in 0..b.num_layers() {
        for i in 0..b.lower[h].len() {
            if ambiguous(b.lower[h][i], b.upper[h][i]) {
                v.push(BranchDecision { layer: h, neuron: i });
            }
        }
    }
    v
}

fn brute_argmax(values: &[Vec<f64>], cands: &[BranchDecision]) -> Option<(BranchDecision, f64)> {
    let mut best: Option<(BranchDecision, f64)> = None;
    for &d in cands {
        let v = values[d.layer][d.neuron];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((d, v));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_match_reference(seed in any::<u64>()) {
        let (inst, b) = setup(seed);
        let [sr, fsb, t] = reference_scores(&inst.net, &b);
        let got_sr = sr_scores(&inst.net, &inst.domain, &b).unwrap();
        let got_fsb = fsb_scores(&inst.net, &inst.domain, &b).unwrap();
        prop_assert!(close(&got_sr.s, &sr));
        prop_assert!(close(&got_fsb.s, &fsb));
        prop_assert!(close(&got_sr.t, &t) && close(&got_fsb.t, &t));
    }

    /// SR picks the brute-force argmax, or the backup argmax below the threshold.
    #[test]
    fn sr_selection_is_the_argmax(seed in any::<u64>()) {
        let (inst, b) = setup(seed);
        let cands = ambiguous_list(&b);
        let table = sr_scores(&inst.net, &inst.domain, &b).unwrap();
        let got = sr_select(&table, &b);
        match brute_argmax(&table.s, &cands) {
            None => prop_assert!(got.is_none()),
            Some((d, s)) if s >= SR_THRESHOLD => prop_assert_eq!(got, Some(d)),
            Some(_) => match brute_argmax(&table.t, &cands) {
                Some((d, t)) if t > 0.0 => prop_assert_eq!(got, Some(d)),
                _ => prop_assert_eq!(got, cands.first().copied()),
            },
        }
    }

    /// The FSB decision maximizes the worse child bound over its candidates,
    /// re-evaluated here one child at a time.
    #[test]
    fn fsb_decision_maximizes_worse_child(seed in any::<u64>()) {
        let (inst, b) = setup(seed);
        let table = fsb_scores(&inst.net, &inst.domain, &b).unwrap();
        let cands = fsb_candidates(&table, &b);
        prop_assert!(cands.len() <= 2 * b.num_layers());
        let got = fsb_decide(&inst.net, &inst.domain, &b, &cands).unwrap();
        let value = |d: BranchDecision| {
            BranchDecision::PHASES
                .iter()
                .map(|&p| fsb_child_bound(&inst.net, &inst.domain, &b, d, p).unwrap())
                .fold(f64::INFINITY, f64::min)
        };
        match got {
            None => prop_assert!(cands.is_empty()),
            Some(d) => {
                prop_assert!(cands.contains(&d));
                let best = value(d);
                for &c in &cands {
                    prop_assert!(value(c) <= best);
                }
            }
        }
        let chosen = choose_branch(Branching::Fsb, &inst.net, &inst.domain, &b).unwrap();
        prop_assert_eq!(chosen, got);
    }
}

/// With zero biases the split term vanishes and both primary scores agree.
#[test]
fn zero_bias_makes_primary_scores_equal() {
    for seed in 0..20 {
        let (inst, _) = setup(seed);
        let linears = inst
            .net
            .linears()
            .iter()
            .map(|l| {
                let d = l.materialize();
                let rows: Vec<Vec<f64>> = (0..d.rows()).map(|i| d.row(i).to_vec()).collect();
                LinearMap::Dense(Dense::from_rows(&rows, vec![0.0; d.rows()]).unwrap())
            })
            .collect();
        let net = Network::new(linears, inst.net.activations().to_vec()).unwrap();
        let b = intermediate_bounds(&net, &inst.domain, IbStrategy::WkCrown, None).unwrap();
        let sr = sr_scores(&net, &inst.domain, &b).unwrap();
        let fsb = fsb_scores(&net, &inst.domain, &b).unwrap();
        assert!(close(&sr.s, &fsb.s));
    }
}

#[test]
fn no_ambiguous_neuron_means_no_branch() {
    let (inst, mut b) = setup(3);
    for (h, i) in b.ambiguous() {
        b.clamp(h, i, Phase::Passing);
    }
    for s in [Branching::Sr, Branching::Fsb] {
        assert_eq!(choose_branch(s, &inst.net, &inst.domain, &b).unwrap(), None);
    }
}
