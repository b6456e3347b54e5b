//! Single-pass bounds: interval arithmetic and linear-bound backpropagation.
//!
//! The backward pass fixes one linear upper and lower function per neuron and
//! chains the dual assignment
//! `λ̄_{j-1} = -W_jᵀc`, `μ̄_k = ā⊙[λ̄_k]₊ + a̲⊙[λ̄_k]₋`, `λ̄_{k-1} = W_kᵀμ̄_k`,
//! giving a lower bound on `cᵀx̂_j` in closed form.

use serde::{Deserialize, Serialize};

use crate::bounds::{classify, LayerBounds, NeuronClass, Phase, Phases};
use crate::error::{Error, Result};
use crate::hulls::sigmoid_linear_bounds;
use crate::network::{dot, sigmoid, Activation, InputDomain, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlopeRule {
    /// Lower slope equal to the upper slope.
    Wk,
    /// Lower slope 0 or 1, whichever side of the interval is longer.
    Crown,
}

/// Linear functions bounding each activation on its interval.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBounds {
    pub lower_slope: Vec<Vec<f64>>,
    pub lower_intercept: Vec<Vec<f64>>,
    pub upper_slope: Vec<Vec<f64>>,
    pub upper_intercept: Vec<Vec<f64>>,
}

/// Multipliers `μ_k` of the layer equalities and `λ_k` of the activation constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxationDuals {
    pub mu: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

impl RelaxationDuals {
    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            mu: widths.iter().map(|&w| vec![0.0; w]).collect(),
            lambda: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BackwardResult {
    pub bound: f64,
    pub duals: RelaxationDuals,
}

/// Intermediate-bound strategies: two algorithms whose element-wise best is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IbStrategy {
    IbpWk,
    WkCrown,
}

/// ReLU relaxation slopes for one neuron: `(a̲, b̲, ā, b̄)`.
pub fn relu_lines(l: f64, u: f64, rule: SlopeRule) -> (f64, f64, f64, f64) {
    match classify(l, u) {
        NeuronClass::Passing => (1.0, 0.0, 1.0, 0.0),
        NeuronClass::Blocking => (0.0, 0.0, 0.0, 0.0),
        NeuronClass::Ambiguous => {
            let s = u / (u - l);
            let lower = match rule {
                SlopeRule::Wk => s,
                SlopeRule::Crown => {
                    if -l <= u {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            (lower, 0.0, s, -l * u / (u - l))
        }
    }
}

pub fn relaxation_lines(net: &Network, bounds: &LayerBounds, rule: SlopeRule) -> Result<LinearBounds> {
    let mut lb = LinearBounds {
        lower_slope: Vec::new(),
        lower_intercept: Vec::new(),
        upper_slope: Vec::new(),
        upper_intercept: Vec::new(),
    };
    for h in 0..net.num_hidden() {
        let act = net.activations()[h];
        let w = bounds.lower[h].len();
        let (mut ls, mut li, mut us, mut ui) = (vec![0.0; w], vec![0.0; w], vec![0.0; w], vec![0.0; w]);
        for i in 0..w {
            let (l, u) = (bounds.lower[h][i], bounds.upper[h][i]);
            let lines = match act {
                Activation::Relu => relu_lines(l, u, rule),
                Activation::Sigmoid => sigmoid_linear_bounds(l, u)?,
            };
            (ls[i], li[i], us[i], ui[i]) = lines;
        }
        lb.lower_slope.push(ls);
        lb.lower_intercept.push(li);
        lb.upper_slope.push(us);
        lb.upper_intercept.push(ui);
    }
    Ok(lb)
}

fn check_bounds(net: &Network, bounds: &LayerBounds, upto: usize) -> Result<()> {
    if bounds.num_layers() < upto {
        return Err(Error::Dimension {
            expected: upto,
            got: bounds.num_layers(),
        });
    }
    for (h, w) in net.hidden_widths().into_iter().take(upto).enumerate() {
        if bounds.lower[h].len() != w || bounds.upper[h].len() != w {
            return Err(Error::Shape {
                layer: h + 1,
                detail: format!("bounds have width {} but the layer has {w}", bounds.lower[h].len()),
            });
        }
    }
    Ok(())
}

/// Lower bound on `cᵀx̂_j` (one-based `j`) using bounds of layers `1 … j-1`.
pub fn linear_bound_backward(
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
    rule: SlopeRule,
    layer: usize,
    c: &[f64],
) -> Result<BackwardResult> {
    check_bounds(net, bounds, layer - 1)?;
    let lines = relaxation_lines_upto(net, bounds, rule, layer - 1)?;
    Ok(backward_with_lines(net, domain, &lines, layer, c))
}

fn relaxation_lines_upto(net: &Network, bounds: &LayerBounds, rule: SlopeRule, upto: usize) -> Result<LinearBounds> {
    let trimmed = LayerBounds::new(bounds.lower[..upto].to_vec(), bounds.upper[..upto].to_vec());
    let sub = Network::new(net.linears()[..=upto].to_vec(), net.activations()[..upto].to_vec())?;
    relaxation_lines(&sub, &trimmed, rule)
}

/// Backward pass with precomputed relaxation lines for layers `1 … j-1`.
pub fn backward_with_lines(
    net: &Network,
    domain: &InputDomain,
    lines: &LinearBounds,
    layer: usize,
    c: &[f64],
) -> BackwardResult {
    let hidden = layer - 1;
    let mut mu: Vec<Vec<f64>> = vec![Vec::new(); hidden];
    let mut lambda: Vec<Vec<f64>> = vec![Vec::new(); hidden];
    let top = net.layer(layer);
    let mut bound = dot(c, &top.bias());
    let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
    let mut lam = top.adjoint(&neg_c);
    for h in (0..hidden).rev() {
        let mut m = vec![0.0; lam.len()];
        for i in 0..lam.len() {
            let li = lam[i];
            if li > 0.0 {
                m[i] = lines.upper_slope[h][i] * li;
                bound -= li * lines.upper_intercept[h][i];
            } else if li < 0.0 {
                m[i] = lines.lower_slope[h][i] * li;
                bound -= li * lines.lower_intercept[h][i];
            }
        }
        let lin = net.layer(h + 1);
        bound -= dot(&m, &lin.bias());
        let next = lin.adjoint(&m);
        lambda[h] = lam;
        mu[h] = m;
        lam = next;
    }
    // lam is now λ̄_0 = W_1ᵀμ̄_1; the input term is min over C of -λ̄_0ᵀx0.
    let g: Vec<f64> = lam.iter().map(|v| -v).collect();
    bound += domain.min_linear(&g).1;
    BackwardResult {
        bound,
        duals: RelaxationDuals { mu, lambda },
    }
}

/// Lower bound on the scalar output of a canonical network.
pub fn propagation_bound(
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
    rule: SlopeRule,
) -> Result<BackwardResult> {
    if !net.is_canonical() {
        return Err(Error::Dimension {
            expected: 1,
            got: net.output_dim(),
        });
    }
    linear_bound_backward(net, domain, bounds, rule, net.num_linear(), &[1.0])
}

/// Exact range of each output of the first layer over the domain.
fn first_layer_interval(net: &Network, domain: &InputDomain) -> (Vec<f64>, Vec<f64>) {
    let lin = net.layer(1);
    match domain {
        InputDomain::Box { lower, upper } => {
            let mid: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
            let rad: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect();
            center_radius(&lin.apply(&mid), &lin.apply_abs(&rad))
        }
        InputDomain::L2 { center, eps } => {
            let c = lin.apply(center);
            let norms = lin.row_norms();
            let rad: Vec<f64> = norms.iter().map(|n| eps * n).collect();
            center_radius(&c, &rad)
        }
    }
}

fn center_radius(c: &[f64], r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        c.iter().zip(r).map(|(c, r)| c - r).collect(),
        c.iter().zip(r).map(|(c, r)| c + r).collect(),
    )
}

/// Interval image of layer `j ≥ 2` given the bounds on `x̂_{j-1}`.
fn interval_step(net: &Network, bounds: &LayerBounds, layer: usize) -> (Vec<f64>, Vec<f64>) {
    let h = layer - 2;
    let act = net.activations()[h];
    let (ls, us) = (&bounds.lower[h], &bounds.upper[h]);
    let mut mid = Vec::with_capacity(ls.len());
    let mut rad = Vec::with_capacity(ls.len());
    for (&l, &u) in ls.iter().zip(us) {
        let (lo, hi) = match act {
            Activation::Relu => match classify(l, u) {
                NeuronClass::Passing => (l, u),
                NeuronClass::Blocking => (0.0, 0.0),
                NeuronClass::Ambiguous => (0.0, u),
            },
            Activation::Sigmoid => (sigmoid(l), sigmoid(u)),
        };
        mid.push(0.5 * (lo + hi));
        rad.push(0.5 * (hi - lo));
    }
    let lin = net.layer(layer);
    center_radius(&lin.apply(&mid), &lin.apply_abs(&rad))
}

/// Interval lower bound on the output given hidden-layer bounds.
pub fn interval_bound(net: &Network, domain: &InputDomain, bounds: &LayerBounds) -> f64 {
    let n = net.num_linear();
    if n == 1 {
        first_layer_interval(net, domain).0[0]
    } else {
        interval_step(net, bounds, n).0[0]
    }
}

/// Interval bounds for every hidden layer, plus the output lower bound.
pub fn ibp_bounds(net: &Network, domain: &InputDomain, phases: Option<&Phases>) -> (LayerBounds, f64) {
    let mut bounds = LayerBounds::new(Vec::new(), Vec::new());
    for layer in 1..net.num_linear() {
        let (l, u) = if layer == 1 {
            first_layer_interval(net, domain)
        } else {
            interval_step(net, &bounds, layer)
        };
        bounds.lower.push(l);
        bounds.upper.push(u);
        if let Some(p) = phases {
            bounds.clamp_layer(layer - 1, &p[layer - 1]);
        }
    }
    let out = if bounds.is_feasible() {
        interval_bound(net, domain, &bounds)
    } else {
        f64::INFINITY
    };
    (bounds, out)
}

/// Bounds for every hidden neuron, computed layer by layer with two
/// algorithms whose element-wise best is kept. Empty intervals are reported
/// through [`LayerBounds::is_feasible`], and later layers are then left at zero.
pub fn intermediate_bounds(
    net: &Network,
    domain: &InputDomain,
    strategy: IbStrategy,
    phases: Option<&Phases>,
) -> Result<LayerBounds> {
    intermediate_bounds_within(net, domain, strategy, phases, None)
}

/// As [`intermediate_bounds`], additionally intersecting every layer with
/// `prior` (bounds known to hold on the same region) before moving on.
pub fn intermediate_bounds_within(
    net: &Network,
    domain: &InputDomain,
    strategy: IbStrategy,
    phases: Option<&Phases>,
    prior: Option<&LayerBounds>,
) -> Result<LayerBounds> {
    let widths = net.hidden_widths();
    let mut bounds = LayerBounds::new(Vec::new(), Vec::new());
    let mut feasible = true;
    for layer in 1..net.num_linear() {
        let h = layer - 1;
        if !feasible {
            bounds.lower.push(vec![0.0; widths[h]]);
            bounds.upper.push(vec![0.0; widths[h]]);
            continue;
        }
        let (mut lo, mut hi) = if layer == 1 {
            first_layer_interval(net, domain)
        } else {
            let rules: &[SlopeRule] = match strategy {
                IbStrategy::IbpWk => &[SlopeRule::Wk],
                IbStrategy::WkCrown => &[SlopeRule::Wk, SlopeRule::Crown],
            };
            let (mut lo, mut hi) = if strategy == IbStrategy::IbpWk {
                interval_step(net, &bounds, layer)
            } else {
                (vec![f64::NEG_INFINITY; widths[h]], vec![f64::INFINITY; widths[h]])
            };
            for &rule in rules {
                let lines = relaxation_lines_upto(net, &bounds, rule, h)?;
                let mut e = vec![0.0; widths[h]];
                for i in 0..widths[h] {
                    e[i] = 1.0;
                    let low = backward_with_lines(net, domain, &lines, layer, &e).bound;
                    e[i] = -1.0;
                    let up = -backward_with_lines(net, domain, &lines, layer, &e).bound;
                    e[i] = 0.0;
                    lo[i] = lo[i].max(low);
                    hi[i] = hi[i].min(up);
                }
            }
            (lo, hi)
        };
        if let Some(p) = prior {
            for i in 0..widths[h] {
                lo[i] = lo[i].max(p.lower[h][i]);
                hi[i] = hi[i].min(p.upper[h][i]);
            }
        }
        bounds.lower.push(lo);
        bounds.upper.push(hi);
        if let Some(p) = phases {
            bounds.clamp_layer(h, &p[h]);
        }
        feasible = bounds.lower[h].iter().zip(&bounds.upper[h]).all(|(l, u)| l <= u);
    }
    Ok(bounds)
}

/// Phase constraints implied by a set of bounds: fixed neurons only.
pub fn phases_of(bounds: &LayerBounds) -> Phases {
    bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(ls, us)| {
            ls.iter()
                .zip(us)
                .map(|(&l, &u)| match classify(l, u) {
                    NeuronClass::Passing if l >= 0.0 => Phase::Passing,
                    NeuronClass::Blocking if u <= 0.0 => Phase::Blocking,
                    _ => Phase::Free,
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Dense, LinearMap};

    fn dense(w: &[&[f64]], b: &[f64]) -> LinearMap {
        let rows: Vec<Vec<f64>> = w.iter().map(|r| r.to_vec()).collect();
        LinearMap::Dense(Dense::from_rows(&rows, b.to_vec()).unwrap())
    }

    fn single_relu() -> (Network, InputDomain) {
        let net = Network::new(
            vec![dense(&[&[1.0]], &[0.0]), dense(&[&[-1.0]], &[0.0])],
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
    fn hand_checked_single_relu() {
        let (net, dom) = single_relu();
        let b = intermediate_bounds(&net, &dom, IbStrategy::WkCrown, None).unwrap();
        assert_eq!((b.lower[0][0], b.upper[0][0]), (-1.0, 1.0));
        let r = propagation_bound(&net, &dom, &b, SlopeRule::Wk).unwrap();
        assert_eq!(r.duals.lambda[0], vec![1.0]);
        assert_eq!(r.duals.mu[0], vec![0.5]);
        assert_eq!(r.bound, -1.0);
    }

    #[test]
    fn ibp_examples() {
        let net = Network::new(vec![dense(&[&[2.0]], &[-1.0])], vec![]).unwrap();
        let dom = InputDomain::Box {
            lower: vec![0.0],
            upper: vec![1.0],
        };
        assert_eq!(ibp_bounds(&net, &dom, None).1, -1.0);
        let net = Network::new(
            vec![dense(&[&[1.0, -1.0]], &[0.0]), dense(&[&[1.0]], &[0.0])],
            vec![Activation::Relu],
        )
        .unwrap();
        let dom = InputDomain::Box {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        let (b, _) = ibp_bounds(&net, &dom, None);
        assert_eq!((b.lower[0][0], b.upper[0][0]), (-1.0, 1.0));
    }

    #[test]
    fn crown_lower_slope_tie_is_one() {
        assert_eq!(relu_lines(-1.0, 1.0, SlopeRule::Crown).0, 1.0);
        assert_eq!(relu_lines(-2.0, 1.0, SlopeRule::Crown).0, 0.0);
        assert_eq!(relu_lines(-1.0, 3.0, SlopeRule::Wk).0, 0.75);
    }
}
