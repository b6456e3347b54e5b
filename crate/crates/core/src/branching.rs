//! Activation-split scoring and selection.
//!
//! Scores come from one backward pass with the rounded slopes
//! `s_k = [û_k]₊ / ([û_k]₊ - [l̂_k]₋)`, giving multipliers `λ̄_k` on the
//! activation outputs. For an ambiguous neuron the ambiguous-case term of the
//! propagation bound is `-(û/(û-l̂)) λ̄ b + (û l̂/(û-l̂)) [λ̄]₊`; the primary score
//! compares it with `max{0, λ̄ b}` (SR) or `min{0, λ̄ b}` (FSB), where `b` is the
//! bias of the layer producing `x̂_k`. The backup score `t` is the multiplier of
//! the relaxed upper constraint times its largest distance from the ReLU.

use rayon::prelude::*;

use crate::bounds::{classify, LayerBounds, NeuronClass, Phase};
use crate::error::Result;
use crate::network::{InputDomain, Network};
use crate::propagation::{propagation_bound, SlopeRule};

/// Below this primary score SR falls back to the backup score.
pub const SR_THRESHOLD: f64 = 1e-4;

/// Split on hidden neuron `neuron` of hidden layer `layer` (zero based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BranchDecision {
    pub layer: usize,
    pub neuron: usize,
}

impl BranchDecision {
    /// The two children's phases: passing first.
    pub const PHASES: [Phase; 2] = [Phase::Passing, Phase::Blocking];
}

/// Primary and backup scores per hidden neuron; zero on non-ambiguous neurons.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub s: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Variant {
    Sr,
    Fsb,
}

/// `λ̄_k` for every hidden layer from the rounded-slope backward pass.
pub fn backward_multipliers(net: &Network, domain: &InputDomain, bounds: &LayerBounds) -> Result<Vec<Vec<f64>>> {
    Ok(propagation_bound(net, domain, bounds, SlopeRule::Wk)?.duals.lambda)
}

fn scores(net: &Network, domain: &InputDomain, bounds: &LayerBounds, variant: Variant) -> Result<ScoreTable> {
    let lambda = backward_multipliers(net, domain, bounds)?;
    let mut s = Vec::with_capacity(lambda.len());
    let mut t = Vec::with_capacity(lambda.len());
    for (h, lam) in lambda.iter().enumerate() {
        let bias = net.layer(h + 1).bias();
        let (ls, us) = (&bounds.lower[h], &bounds.upper[h]);
        let mut sk = vec![0.0; lam.len()];
        let mut tk = vec![0.0; lam.len()];
        for i in 0..lam.len() {
            if classify(ls[i], us[i]) != NeuronClass::Ambiguous {
                continue;
            }
            let (l, u) = (ls[i], us[i]);
            let lb = lam[i] * bias[i];
            let pos = lam[i].max(0.0);
            let split = match variant {
                Variant::Sr => lb.max(0.0),
                Variant::Fsb => lb.min(0.0),
            };
            sk[i] = (split - u / (u - l) * lb + u * l / (u - l) * pos).abs();
            tk[i] = -u * l / (u - l) * pos;
        }
        s.push(sk);
        t.push(tk);
    }
    Ok(ScoreTable { s, t })
}

pub fn sr_scores(net: &Network, domain: &InputDomain, bounds: &LayerBounds) -> Result<ScoreTable> {
    scores(net, domain, bounds, Variant::Sr)
}

pub fn fsb_scores(net: &Network, domain: &InputDomain, bounds: &LayerBounds) -> Result<ScoreTable> {
    scores(net, domain, bounds, Variant::Fsb)
}

/// Index of the largest entry over the ambiguous neurons of one layer; ties
/// go to the lowest index.
fn layer_argmax(values: &[f64], ls: &[f64], us: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..values.len() {
        if classify(ls[i], us[i]) != NeuronClass::Ambiguous {
            continue;
        }
        if best.is_none_or(|b| values[i] > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Argmax over all ambiguous neurons, lowest `(layer, neuron)` on ties.
fn global_argmax(values: &[Vec<f64>], bounds: &LayerBounds) -> Option<(BranchDecision, f64)> {
    let mut best: Option<(BranchDecision, f64)> = None;
    for (h, v) in values.iter().enumerate() {
        if let Some(i) = layer_argmax(v, &bounds.lower[h], &bounds.upper[h]) {
            if best.is_none_or(|(_, b)| v[i] > b) {
                best = Some((BranchDecision { layer: h, neuron: i }, v[i]));
            }
        }
    }
    best
}

/// SR selection: largest primary score, or the largest backup score when the
/// primary one is below [`SR_THRESHOLD`]; the first ambiguous neuron when
/// every score vanishes. `None` without ambiguous neurons.
pub fn sr_select(scores: &ScoreTable, bounds: &LayerBounds) -> Option<BranchDecision> {
    let (d, s) = global_argmax(&scores.s, bounds)?;
    if s >= SR_THRESHOLD {
        return Some(d);
    }
    match global_argmax(&scores.t, bounds) {
        Some((dt, t)) if t > 0.0 => Some(dt),
        _ => bounds
            .ambiguous()
            .first()
            .map(|&(layer, neuron)| BranchDecision { layer, neuron }),
    }
}

/// Per layer, the argmax of the primary score and of the backup score,
/// deduplicated, in layer order.
pub fn fsb_candidates(scores: &ScoreTable, bounds: &LayerBounds) -> Vec<BranchDecision> {
    let mut out = Vec::new();
    for h in 0..scores.s.len() {
        let (ls, us) = (&bounds.lower[h], &bounds.upper[h]);
        for values in [&scores.s[h], &scores.t[h]] {
            if let Some(i) = layer_argmax(values, ls, us) {
                let d = BranchDecision { layer: h, neuron: i };
                if !out.contains(&d) {
                    out.push(d);
                }
            }
        }
    }
    out
}

/// Child lower bound used to rank candidates: the better of the CROWN and WK
/// bounds on the parent's bounds with the split neuron clamped; `+∞` for an
/// empty child.
pub fn fsb_child_bound(
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
    d: BranchDecision,
    phase: Phase,
) -> Result<f64> {
    let mut child = bounds.clone();
    child.clamp(d.layer, d.neuron, phase);
    if !child.is_feasible() {
        return Ok(f64::INFINITY);
    }
    let crown = propagation_bound(net, domain, &child, SlopeRule::Crown)?.bound;
    let wk = propagation_bound(net, domain, &child, SlopeRule::Wk)?.bound;
    Ok(crown.max(wk))
}

/// The candidate maximizing the smaller of its two child bounds; ties go to
/// the lowest `(layer, neuron)`. `None` for an empty candidate set.
pub fn fsb_decide(
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
    candidates: &[BranchDecision],
) -> Result<Option<BranchDecision>> {
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|&d| -> Result<f64> {
            let a = fsb_child_bound(net, domain, bounds, d, Phase::Passing)?;
            let b = fsb_child_bound(net, domain, bounds, d, Phase::Blocking)?;
            Ok(a.min(b))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(BranchDecision, f64)> = None;
    for (&d, &v) in candidates.iter().zip(&values) {
        let better = match best {
            None => true,
            Some((bd, bv)) => v > bv || (v == bv && d < bd),
        };
        if better {
            best = Some((d, v));
        }
    }
    Ok(best.map(|(d, _)| d))
}

/// Branching heuristics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branching {
    Sr,
    Fsb,
}

/// Chooses a split for a subproblem; `None` when no neuron is ambiguous.
pub fn choose_branch(
    strategy: Branching,
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
) -> Result<Option<BranchDecision>> {
    if bounds.num_ambiguous() == 0 {
        return Ok(None);
    }
    match strategy {
        Branching::Sr => Ok(sr_select(&sr_scores(net, domain, bounds)?, bounds)),
        Branching::Fsb => {
            let table = fsb_scores(net, domain, bounds)?;
            let candidates = fsb_candidates(&table, bounds);
            fsb_decide(net, domain, bounds, &candidates)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Dense, LinearMap};

    fn single_relu() -> (Network, InputDomain) {
        // x̂1 = x0 + 0.5, x̂2 = -x1 + 1 on x0 ∈ [-1, 1].
        let net = Network::new(
            vec![
                LinearMap::Dense(Dense::new(1, 1, vec![1.0], vec![0.5]).unwrap()),
                LinearMap::Dense(Dense::new(1, 1, vec![-1.0], vec![1.0]).unwrap()),
            ],
            vec![Activation::Relu],
        )
        .unwrap();
        let dom = InputDomain::Box {
            lower: vec![-1.0],
            upper: vec![1.0],
        };
        (net, dom)
    }

    #[test]
    fn hand_computed_scores() {
        let (net, dom) = single_relu();
        let b = LayerBounds::new(vec![vec![-0.5]], vec![vec![1.5]]);
        // λ̄ = 1, b = 0.5, û/(û-l̂) = 0.75, ûl̂/(û-l̂) = -0.375.
        let sr = sr_scores(&net, &dom, &b).unwrap();
        assert!((sr.s[0][0] - 0.25).abs() < 1e-15);
        assert!((sr.t[0][0] - 0.375).abs() < 1e-15);
        let fsb = fsb_scores(&net, &dom, &b).unwrap();
        assert!((fsb.s[0][0] - 0.75).abs() < 1e-15);
        assert_eq!(fsb.t, sr.t);
    }

    #[test]
    fn fixed_neurons_are_masked() {
        let (net, dom) = single_relu();
        let b = LayerBounds::new(vec![vec![0.5]], vec![vec![1.5]]);
        let sr = sr_scores(&net, &dom, &b).unwrap();
        assert_eq!(sr.s, vec![vec![0.0]]);
        assert_eq!(sr_select(&sr, &b), None);
        assert!(fsb_candidates(&sr, &b).is_empty());
    }

    #[test]
    fn small_primary_score_falls_back_to_backup() {
        let b = LayerBounds::new(vec![vec![-1.0, -1.0]], vec![vec![1.0, 1.0]]);
        let table = ScoreTable {
            s: vec![vec![1e-5, 0.0]],
            t: vec![vec![0.0, 2.0]],
        };
        assert_eq!(sr_select(&table, &b), Some(BranchDecision { layer: 0, neuron: 1 }));
        let zero = ScoreTable {
            s: vec![vec![0.0, 0.0]],
            t: vec![vec![0.0, 0.0]],
        };
        assert_eq!(sr_select(&zero, &b), Some(BranchDecision { layer: 0, neuron: 0 }));
    }

    #[test]
    fn coinciding_argmaxes_give_one_candidate() {
        let b = LayerBounds::new(vec![vec![-1.0, -1.0]], vec![vec![1.0, 1.0]]);
        let table = ScoreTable {
            s: vec![vec![3.0, 1.0]],
            t: vec![vec![2.0, 1.0]],
        };
        assert_eq!(fsb_candidates(&table, &b), vec![BranchDecision { layer: 0, neuron: 0 }]);
    }
}
