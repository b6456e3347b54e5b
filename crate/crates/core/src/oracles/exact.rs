//! Exact global minimum by enumerating the phases of ambiguous ReLUs.
//!
//! Sound pre-activation bounds are computed first with one relaxation LP per
//! neuron and bound side, independently of the propagation module. Each
//! phase pattern makes the network affine in `x0`; the pattern's region is a
//! polytope and its minimum is one small LP. Infeasible prefixes are pruned.

use crate::bounds::{LayerBounds, Phase, Phases};
use crate::error::{Error, Result};
use crate::network::{Dense, InputDomain, Network};
use crate::oracles::planet::{build_planet, dense_layers, require_box_relu};
use crate::oracles::simplex::{lp_solve, LinearProgram, LpOutcome, Relation};

/// Refuse to enumerate beyond this many ambiguous neurons.
pub const MAX_AMBIGUOUS: usize = 16;

/// Branches split across threads up to this depth.
const PARALLEL_DEPTH: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ExactMinimum {
    /// `+∞` when the constrained region is empty.
    pub value: f64,
    pub argmin: Option<Vec<f64>>,
    /// Bounds the enumeration was based on.
    pub bounds: LayerBounds,
}

/// Pre-activation bounds from the relaxation LP, layer by layer, with phase clamps.
pub fn lp_layer_bounds(net: &Network, domain: &InputDomain, phases: Option<&Phases>) -> Result<Option<LayerBounds>> {
    let (lower, upper) = require_box_relu(net, domain)?;
    let layers = dense_layers(net);
    let mut bounds = LayerBounds::new(Vec::new(), Vec::new());
    for depth in 1..net.num_linear() {
        let w = &layers[depth - 1];
        let (mut lo, mut hi) = (vec![0.0; w.rows()], vec![0.0; w.rows()]);
        let mut model = build_planet(&layers, &lower, &upper, &bounds, depth);
        for i in 0..w.rows() {
            let var = model.top[i];
            for sign in [1.0, -1.0] {
                model.lp.objective[var] = sign;
                let v = match lp_solve(&model.lp)? {
                    LpOutcome::Optimal(s) => s.value,
                    LpOutcome::Infeasible => return Ok(None),
                    LpOutcome::Unbounded => return Err(Error::Lp("bound LP reported unbounded".into())),
                };
                if sign > 0.0 {
                    lo[i] = v;
                } else {
                    hi[i] = -v;
                }
            }
            model.lp.objective[var] = 0.0;
        }
        bounds.lower.push(lo);
        bounds.upper.push(hi);
        if let Some(p) = phases {
            bounds.clamp_layer(depth - 1, &p[depth - 1]);
        }
        if !bounds.is_feasible() {
            return Ok(None);
        }
    }
    Ok(Some(bounds))
}

/// Exact minimum of a canonical ReLU network over a box, optionally under phase constraints.
pub fn exact_min(net: &Network, domain: &InputDomain, phases: Option<&Phases>) -> Result<ExactMinimum> {
    let (lower, upper) = require_box_relu(net, domain)?;
    if !net.is_canonical() {
        return Err(Error::Dimension {
            expected: 1,
            got: net.output_dim(),
        });
    }
    let Some(bounds) = lp_layer_bounds(net, domain, phases)? else {
        return Ok(ExactMinimum {
            value: f64::INFINITY,
            argmin: None,
            bounds: LayerBounds::new(Vec::new(), Vec::new()),
        });
    };
    let ambiguous = bounds
        .lower
        .iter()
        .flatten()
        .zip(bounds.upper.iter().flatten())
        .filter(|(&l, &u)| l < 0.0 && u > 0.0)
        .count();
    if ambiguous > MAX_AMBIGUOUS {
        return Err(Error::TooManyAmbiguous {
            count: ambiguous,
            limit: MAX_AMBIGUOUS,
        });
    }
    let layers = dense_layers(net);
    let n0 = lower.len();
    // Neurons whose sign must be enforced explicitly: ambiguous ones (branched)
    // and ones clamped by the caller's phases.
    let mut decisions = Vec::new();
    for (h, (ls, us)) in bounds.lower.iter().zip(&bounds.upper).enumerate() {
        for i in 0..ls.len() {
            let forced = phases.map_or(Phase::Free, |p| p[h][i]);
            let kind = if ls[i] < 0.0 && us[i] > 0.0 {
                if forced == Phase::Free {
                    Decision::Branch
                } else {
                    Decision::Forced(forced == Phase::Passing)
                }
            } else {
                match forced {
                    Phase::Free => Decision::Fixed(ls[i] >= 0.0),
                    p => Decision::Forced(p == Phase::Passing),
                }
            };
            decisions.push((h, i, kind));
        }
    }
    let ctx = Enumerator {
        layers: &layers,
        lower: &lower,
        upper: &upper,
        decisions: &decisions,
        n0,
    };
    let first = Affine::from_dense(&layers[0]);
    let best = ctx.search(0, first, Vec::new(), Vec::new(), 0)?;
    Ok(match best {
        Some((v, x)) => ExactMinimum {
            value: v,
            argmin: Some(x),
            bounds,
        },
        None => ExactMinimum {
            value: f64::INFINITY,
            argmin: None,
            bounds,
        },
    })
}

#[derive(Clone, Copy, Debug)]
enum Decision {
    /// Ambiguous: try both phases.
    Branch,
    /// Phase constrained by the caller; `true` for passing.
    Forced(bool),
    /// Phase implied by the bounds; `true` for passing.
    Fixed(bool),
}

/// `x̂ = A x0 + c` for one layer.
#[derive(Clone, Debug)]
struct Affine {
    a: Vec<Vec<f64>>,
    c: Vec<f64>,
}

impl Affine {
    fn from_dense(w: &Dense) -> Self {
        Affine {
            a: (0..w.rows()).map(|i| w.row(i).to_vec()).collect(),
            c: w.bias().to_vec(),
        }
    }

    /// Next layer's affine form given which neurons of this layer pass.
    fn next(&self, w: &Dense, active: &[bool]) -> Self {
        let n0 = self.a.first().map_or(0, Vec::len);
        let mut a = vec![vec![0.0; n0]; w.rows()];
        let mut c = w.bias().to_vec();
        for r in 0..w.rows() {
            for (j, &on) in active.iter().enumerate() {
                let wij = w.at(r, j);
                if on && wij != 0.0 {
                    for (t, s) in a[r].iter_mut().zip(&self.a[j]) {
                        *t += wij * s;
                    }
                    c[r] += wij * self.c[j];
                }
            }
        }
        Affine { a, c }
    }
}

struct Enumerator<'a> {
    layers: &'a [Dense],
    lower: &'a [f64],
    upper: &'a [f64],
    decisions: &'a [(usize, usize, Decision)],
    n0: usize,
}

/// Row `a·x ≤ b`.
type Row = (Vec<f64>, f64);

impl Enumerator<'_> {
    fn lp(&self, rows: &[Row], objective: Option<&[f64]>) -> LinearProgram {
        let mut lp = LinearProgram::new(self.n0);
        lp.lower = self.lower.to_vec();
        lp.upper = self.upper.to_vec();
        if let Some(o) = objective {
            lp.objective = o.to_vec();
        }
        for (a, b) in rows {
            let coeffs = a
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect();
            lp.add(coeffs, Relation::Le, *b);
        }
        lp
    }

    fn feasible(&self, rows: &[Row]) -> Result<bool> {
        Ok(matches!(lp_solve(&self.lp(rows, None))?, LpOutcome::Optimal(_)))
    }

    /// Depth-first over decisions in layer order; returns the best `(value, x0)`.
    fn search(
        &self,
        idx: usize,
        affine: Affine,
        active: Vec<bool>,
        rows: Vec<Row>,
        branch_depth: usize,
    ) -> Result<Option<(f64, Vec<f64>)>> {
        if idx == self.decisions.len() {
            return self.leaf(&affine, &rows);
        }
        let (h, i, kind) = self.decisions[idx];
        let width = self.layers[h].rows();
        let row_for = |passing: bool| -> Row {
            if passing {
                (affine.a[i].iter().map(|v| -v).collect(), affine.c[i])
            } else {
                (affine.a[i].clone(), -affine.c[i])
            }
        };
        let go = |passing: bool, constrain: bool, depth: usize| -> Result<Option<(f64, Vec<f64>)>> {
            let mut rows = rows.clone();
            if constrain {
                rows.push(row_for(passing));
                if !self.feasible(&rows)? {
                    return Ok(None);
                }
            }
            let mut act = active.clone();
            act.push(passing);
            if act.len() == width {
                let next = affine.next(&self.layers[h + 1], &act);
                self.search(idx + 1, next, Vec::new(), rows, depth)
            } else {
                self.search(idx + 1, affine.clone(), act, rows, depth)
            }
        };
        match kind {
            Decision::Fixed(p) => go(p, false, branch_depth),
            Decision::Forced(p) => go(p, true, branch_depth),
            Decision::Branch => {
                let (on, off) = if branch_depth < PARALLEL_DEPTH {
                    rayon::join(
                        || go(true, true, branch_depth + 1),
                        || go(false, true, branch_depth + 1),
                    )
                } else {
                    (go(true, true, branch_depth + 1), go(false, true, branch_depth + 1))
                };
                Ok(better(off?, on?))
            }
        }
    }

    fn leaf(&self, out: &Affine, rows: &[Row]) -> Result<Option<(f64, Vec<f64>)>> {
        let lp = self.lp(rows, Some(&out.a[0]));
        Ok(match lp_solve(&lp)? {
            LpOutcome::Optimal(s) => Some((s.value + out.c[0], s.x)),
            LpOutcome::Infeasible => None,
            LpOutcome::Unbounded => return Err(Error::Lp("pattern LP reported unbounded".into())),
        })
    }
}

/// Lower value wins; ties keep the first argument.
fn better(a: Option<(f64, Vec<f64>)>, b: Option<(f64, Vec<f64>)>) -> Option<(f64, Vec<f64>)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.0 < x.0 { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}
