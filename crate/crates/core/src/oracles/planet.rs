//! The triangle (Planet) relaxation written out as an explicit LP.

use crate::bounds::LayerBounds;
use crate::error::{Error, Result};
use crate::network::{Dense, InputDomain, LinearMap, Network};
use crate::oracles::simplex::{lp_solve, LinearProgram, LpOutcome, Relation};

#[derive(Clone, Debug, PartialEq)]
pub struct PlanetSolution {
    pub value: f64,
    /// Input part of an optimal LP vertex.
    pub x0: Vec<f64>,
}

pub(crate) fn dense_layers(net: &Network) -> Vec<Dense> {
    net.linears().iter().map(LinearMap::materialize).collect()
}

pub(crate) fn require_box_relu(net: &Network, domain: &InputDomain) -> Result<(Vec<f64>, Vec<f64>)> {
    if !net.is_relu() {
        return Err(Error::Unsupported("LP oracles need a ReLU network".into()));
    }
    match domain {
        InputDomain::Box { lower, upper } => Ok((lower.clone(), upper.clone())),
        InputDomain::L2 { .. } => Err(Error::Unsupported("LP oracles need a box domain".into())),
    }
}

/// Planet LP over layers `1 … depth`, with `x̂_depth` left free.
pub(crate) struct PlanetModel {
    pub lp: LinearProgram,
    pub x0: Vec<usize>,
    /// Variable indices of `x̂_depth`.
    pub top: Vec<usize>,
}

pub(crate) fn build_planet(
    layers: &[Dense],
    lower: &[f64],
    upper: &[f64],
    bounds: &LayerBounds,
    depth: usize,
) -> PlanetModel {
    let mut lp = LinearProgram::new(0);
    let x0: Vec<usize> = lower.iter().zip(upper).map(|(&l, &u)| lp.add_var(l, u)).collect();
    let mut prev = x0.clone();
    let mut top = Vec::new();
    for k in 1..=depth {
        let w = &layers[k - 1];
        let hidden = k < depth;
        let xhat: Vec<usize> = (0..w.rows())
            .map(|i| {
                if hidden {
                    lp.add_var(bounds.lower[k - 1][i], bounds.upper[k - 1][i])
                } else {
                    lp.add_var(f64::NEG_INFINITY, f64::INFINITY)
                }
            })
            .collect();
        for i in 0..w.rows() {
            let mut coeffs = vec![(xhat[i], 1.0)];
            for (j, &v) in prev.iter().enumerate() {
                let a = w.at(i, j);
                if a != 0.0 {
                    coeffs.push((v, -a));
                }
            }
            lp.add(coeffs, Relation::Eq, w.bias()[i]);
        }
        if !hidden {
            top = xhat;
            break;
        }
        let mut post = Vec::with_capacity(w.rows());
        for i in 0..w.rows() {
            let (l, u) = (bounds.lower[k - 1][i], bounds.upper[k - 1][i]);
            let x = lp.add_var(0.0, f64::INFINITY);
            if l >= 0.0 {
                lp.add(vec![(x, 1.0), (xhat[i], -1.0)], Relation::Eq, 0.0);
            } else if u <= 0.0 {
                lp.upper[x] = 0.0;
            } else {
                let s = u / (u - l);
                lp.add(vec![(x, 1.0), (xhat[i], -1.0)], Relation::Ge, 0.0);
                lp.add(vec![(x, 1.0), (xhat[i], -s)], Relation::Le, -s * l);
            }
            post.push(x);
        }
        prev = post;
    }
    PlanetModel { lp, x0, top }
}

/// Solves the relaxation for the output; `None` when the region is empty.
pub fn planet_lp_solve(net: &Network, domain: &InputDomain, bounds: &LayerBounds) -> Result<Option<PlanetSolution>> {
    let (lower, upper) = require_box_relu(net, domain)?;
    if !net.is_canonical() {
        return Err(Error::Dimension {
            expected: 1,
            got: net.output_dim(),
        });
    }
    if !bounds.is_feasible() {
        return Ok(None);
    }
    let layers = dense_layers(net);
    let mut model = build_planet(&layers, &lower, &upper, bounds, net.num_linear());
    model.lp.objective[model.top[0]] = 1.0;
    match lp_solve(&model.lp)? {
        LpOutcome::Optimal(s) => Ok(Some(PlanetSolution {
            value: s.value,
            x0: model.x0.iter().map(|&j| s.x[j]).collect(),
        })),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::Lp("relaxation reported unbounded".into())),
    }
}

/// Optimal value `p*` of the relaxation given intermediate bounds.
pub fn planet_lp_bound(net: &Network, domain: &InputDomain, bounds: &LayerBounds) -> Result<f64> {
    planet_lp_solve(net, domain, bounds)?
        .map(|s| s.value)
        .ok_or_else(|| Error::Lp("relaxation is infeasible".into()))
}
