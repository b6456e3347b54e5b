//! Best-first branch and bound over ReLU phases.
//!
//! Subproblems are kept in an open list; each round takes the `B` with the
//! lowest lower bounds, splits each on one ambiguous ReLU, and bounds the
//! `2B` children. A child is pruned once its lower bound is non-negative; the
//! run is falsified as soon as some evaluated input has a negative output.
//! Subproblems without ambiguous ReLUs are linear on their region and are
//! solved exactly.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{free_phases, LayerBounds, Phase, Phases};
use crate::branching::{choose_branch, BranchDecision, Branching};
use crate::decomposition::{
    init_duals_from_propagation, supergradient_solve, DecompositionDuals, DualProblem, StepSchedule,
};
use crate::error::{Error, Result};
use crate::network::{InputDomain, Network};
use crate::oracles::planet_lp_solve;
use crate::propagation::{intermediate_bounds, intermediate_bounds_within, IbStrategy, SlopeRule};
use crate::proximal::{proximal_solve, ProximalConfig};

/// Last-layer bounding algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bounding {
    /// The triangle relaxation solved exactly by the simplex oracle.
    Simplex,
    /// Decomposition dual, proximal solver.
    Proximal,
    /// Decomposition dual, supergradient ascent.
    Supergradient,
}

/// Where intermediate bounds are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntermediateMode {
    pub strategy: IbStrategy,
    /// Recompute after every split (intersected with the parent's bounds);
    /// otherwise only at the root, with splits applied as clamps.
    pub per_split: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BabConfig {
    pub bounding: Bounding,
    /// Iteration counts `T_0 < T_1 < …` for iterative bounding.
    pub ladder: Vec<usize>,
    pub branching: Branching,
    pub intermediate: IntermediateMode,
    /// Subproblems branched per round.
    pub batch: usize,
    pub timeout: Option<Duration>,
    /// EMA coefficient of the improvement estimate.
    pub alpha: f64,
    /// Depth of the subproblem used to measure the ladder's gains.
    pub test_depth: usize,
    /// Stop after this many bounded subproblems.
    pub max_subproblems: Option<usize>,
}

impl BabConfig {
    /// Dual bounding with the proximal solver, FSB, root-only WK+CROWN
    /// intermediate bounds and an adaptive iteration ladder.
    pub fn badnb() -> Self {
        Self {
            bounding: Bounding::Proximal,
            ladder: vec![50, 100, 200],
            branching: Branching::Fsb,
            intermediate: IntermediateMode {
                strategy: IbStrategy::WkCrown,
                per_split: false,
            },
            batch: 16,
            timeout: None,
            alpha: 0.5,
            test_depth: 4,
            max_subproblems: None,
        }
    }

    /// Exact LP bounding, SR branching, IBP+WK intermediate bounds after every split.
    pub fn babsr() -> Self {
        Self {
            bounding: Bounding::Simplex,
            ladder: vec![1],
            branching: Branching::Sr,
            intermediate: IntermediateMode {
                strategy: IbStrategy::IbpWk,
                per_split: true,
            },
            batch: 1,
            timeout: None,
            alpha: 0.5,
            test_depth: 4,
            max_subproblems: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Unsupported(
                "the iteration ladder must be strictly increasing".into(),
            ));
        }
        if self.batch == 0 {
            return Err(Error::Unsupported("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Unsupported("alpha must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subproblem {
    pub phases: Phases,
    pub bounds: LayerBounds,
    pub lower: f64,
    /// Output at `witness`; `+∞` without one.
    pub upper: f64,
    pub witness: Option<Vec<f64>>,
    /// Multipliers from this subproblem's bounding, inherited by its children.
    pub rho: Option<DecompositionDuals>,
    /// Moving average of parent-to-child lower-bound improvement.
    pub improvement: f64,
    pub depth: usize,
    /// Creation order; breaks lower-bound ties.
    pub id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Verified,
    Falsified,
    /// Time or subproblem budget exhausted, or the search could not proceed.
    Timeout,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Verified => "verified",
            Decision::Falsified => "falsified",
            Decision::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BabResult {
    pub decision: Decision,
    /// Input with a negative output, checked by a forward pass.
    pub counterexample: Option<Vec<f64>>,
    /// Number of subproblems bounded, root included.
    pub subproblems: usize,
    pub global_lb: f64,
    pub global_ub: f64,
    pub elapsed: Duration,
    /// Ladder index in force during each round.
    pub ladder_trace: Vec<usize>,
    /// Global lower bound after the root and after each round.
    pub lb_trace: Vec<f64>,
}

/// Ladder advance rule: tighter bounding pays off once its measured gain,
/// scaled by the cost ratio `t(T_j)/t(T_{j+1})`, exceeds the expected
/// improvement from branching. A non-positive gain never triggers.
pub fn should_advance(improvement: f64, gain: f64, time_ratio: f64) -> bool {
    gain > 0.0 && improvement < gain * time_ratio
}

/// Iteration ladder with its one-off gain measurements. The cost of `T`
/// iterations is modelled as proportional to `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ladder {
    pub levels: Vec<usize>,
    pub index: usize,
    /// `l_{T_{j+1}}(r) - l_{T_j}(r)` once the test subproblem has been seen.
    pub gains: Option<Vec<f64>>,
}

impl Ladder {
    pub fn new(levels: Vec<usize>) -> Self {
        Self {
            levels,
            index: 0,
            gains: None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.levels[self.index]
    }

    /// Records the test subproblem's bounds at every level.
    pub fn measure(&mut self, bounds_per_level: &[f64]) {
        self.gains = Some(bounds_per_level.windows(2).map(|w| w[1] - w[0]).collect());
    }

    /// Moves up at most one level given the batch's lowest subproblem.
    pub fn update(&mut self, improvement: f64) -> bool {
        let Some(gains) = &self.gains else {
            return false;
        };
        let j = self.index;
        if j + 1 >= self.levels.len() {
            return false;
        }
        let ratio = self.levels[j] as f64 / self.levels[j + 1] as f64;
        if should_advance(improvement, gains[j], ratio) {
            self.index += 1;
            true
        } else {
            false
        }
    }
}

/// Removes and returns the `b` subproblems with the lowest lower bounds,
/// ordered by lower bound then creation order.
pub fn select_batch(queue: &mut Vec<Subproblem>, b: usize) -> Vec<Subproblem> {
    queue.sort_by(|x, y| x.lower.total_cmp(&y.lower).then(x.id.cmp(&y.id)));
    let take = b.min(queue.len());
    queue.drain(..take).collect()
}

/// Result of bounding one region.
#[derive(Clone, Debug)]
struct NodeBound {
    lower: f64,
    upper: f64,
    witness: Option<Vec<f64>>,
    rho: Option<DecompositionDuals>,
}

/// Relative tolerance under which an exact leaf's lower bound is replaced by
/// the output at its minimizer.
const LEAF_TOL: f64 = 1e-7;

struct Search<'a> {
    net: &'a Network,
    domain: &'a InputDomain,
    cfg: &'a BabConfig,
}

impl Search<'_> {
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.net.eval_scalar(x)
    }

    fn bound(&self, bounds: &LayerBounds, warm: Option<&DecompositionDuals>, iters: usize) -> Result<NodeBound> {
        if !bounds.is_feasible() {
            return Ok(NodeBound {
                lower: f64::INFINITY,
                upper: f64::INFINITY,
                witness: None,
                rho: None,
            });
        }
        if bounds.num_ambiguous() == 0 || self.cfg.bounding == Bounding::Simplex {
            return self.bound_lp(bounds, bounds.num_ambiguous() == 0);
        }
        let prob = DualProblem::new(self.net, self.domain, bounds)?;
        let rho0 = match warm {
            Some(r) => r.clone(),
            None => init_duals_from_propagation(self.net, self.domain, bounds, SlopeRule::Crown)?,
        };
        let (best, rho, x0) = match self.cfg.bounding {
            Bounding::Proximal => {
                let (res, state) = proximal_solve(&prob, &rho0, &ProximalConfig::complete(iters));
                (res.best, res.rho, state.primal.x0)
            }
            Bounding::Supergradient => {
                let schedule = StepSchedule { start: 1e-3, end: 1e-4 };
                let res = supergradient_solve(&prob, &rho0, iters, schedule);
                (res.best, res.rho, res.primal.x0)
            }
            Bounding::Simplex => unreachable!("handled above"),
        };
        let upper = self.evaluate(&x0)?;
        Ok(NodeBound {
            lower: best,
            upper,
            witness: Some(x0),
            rho: Some(rho),
        })
    }

    fn bound_lp(&self, bounds: &LayerBounds, exact: bool) -> Result<NodeBound> {
        let Some(sol) = planet_lp_solve(self.net, self.domain, bounds)? else {
            return Ok(NodeBound {
                lower: f64::INFINITY,
                upper: f64::INFINITY,
                witness: None,
                rho: None,
            });
        };
        let upper = self.evaluate(&sol.x0)?;
        let mut lower = sol.value;
        if exact && (upper - lower).abs() <= LEAF_TOL * (1.0 + upper.abs()) {
            lower = upper;
        }
        Ok(NodeBound {
            lower,
            upper,
            witness: Some(sol.x0),
            rho: None,
        })
    }

    fn child_bounds(
        &self,
        parent: &Subproblem,
        phases: &Phases,
        d: BranchDecision,
        phase: Phase,
    ) -> Result<LayerBounds> {
        if self.cfg.intermediate.per_split {
            let mut prior = parent.bounds.clone();
            prior.clamp(d.layer, d.neuron, phase);
            if !prior.is_feasible() {
                return Ok(prior);
            }
            intermediate_bounds_within(
                self.net,
                self.domain,
                self.cfg.intermediate.strategy,
                Some(phases),
                Some(&prior),
            )
        } else {
            let mut b = parent.bounds.clone();
            b.clamp(d.layer, d.neuron, phase);
            Ok(b)
        }
    }

    /// Splits one subproblem and bounds both children; `None` when it has no
    /// ambiguous neuron left.
    fn expand(&self, parent: &Subproblem, iters: usize) -> Result<Option<[Subproblem; 2]>> {
        let Some(d) = choose_branch(self.cfg.branching, self.net, self.domain, &parent.bounds)? else {
            return Ok(None);
        };
        let make = |phase: Phase| -> Result<Subproblem> {
            let (phases, bounds) = split(parent, d, phase, |ph| self.child_bounds(parent, ph, d, phase))?;
            let nb = self.bound(&bounds, parent.rho.as_ref(), iters)?;
            let a = self.cfg.alpha;
            let improvement = if nb.lower.is_finite() && parent.lower.is_finite() {
                a * (nb.lower - parent.lower) + (1.0 - a) * parent.improvement
            } else {
                parent.improvement
            };
            Ok(Subproblem {
                phases,
                bounds,
                lower: nb.lower,
                upper: nb.upper,
                witness: nb.witness,
                rho: nb.rho.or_else(|| parent.rho.clone()),
                improvement,
                depth: parent.depth + 1,
                id: 0,
            })
        };
        let on = make(Phase::Passing)?;
        let off = make(Phase::Blocking)?;
        Ok(Some([on, off]))
    }
}

/// One child of `parent`: the neuron's phase is fixed and its bounds are
/// produced by `bounds_for` from the child's phases.
pub fn split(
    parent: &Subproblem,
    d: BranchDecision,
    phase: Phase,
    bounds_for: impl FnOnce(&Phases) -> Result<LayerBounds>,
) -> Result<(Phases, LayerBounds)> {
    let mut phases = parent.phases.clone();
    phases[d.layer][d.neuron] = phase;
    let bounds = bounds_for(&phases)?;
    Ok((phases, bounds))
}

/// Runs branch and bound on a canonical ReLU network over a box.
pub fn bab_run(net: &Network, domain: &InputDomain, cfg: &BabConfig) -> Result<BabResult> {
    cfg.validate()?;
    if !net.is_relu() {
        return Err(Error::Unsupported(
            "branch and bound splits ReLU activations only".into(),
        ));
    }
    if !domain.is_box() {
        return Err(Error::Unsupported("branch and bound needs a box input domain".into()));
    }
    if !net.is_canonical() {
        return Err(Error::Dimension {
            expected: 1,
            got: net.output_dim(),
        });
    }
    domain.validate()?;
    let start = Instant::now();
    let timed_out = |start: &Instant| cfg.timeout.is_some_and(|t| start.elapsed() >= t);
    let mut result = BabResult {
        decision: Decision::Timeout,
        counterexample: None,
        subproblems: 0,
        global_lb: f64::NEG_INFINITY,
        global_ub: f64::INFINITY,
        elapsed: Duration::ZERO,
        ladder_trace: Vec::new(),
        lb_trace: Vec::new(),
    };
    if timed_out(&start) {
        return Ok(result);
    }
    let search = Search { net, domain, cfg };
    let mut ladder = Ladder::new(cfg.ladder.clone());

    let root_bounds = intermediate_bounds(net, domain, cfg.intermediate.strategy, None)?;
    let root_phases = free_phases(&net.hidden_widths());
    let nb = search.bound(&root_bounds, None, ladder.iterations())?;
    result.subproblems = 1;
    let center = domain.center();
    let center_out = net.eval_scalar(&center)?;
    let mut incumbent = (center_out, center);
    if let Some(w) = &nb.witness {
        if nb.upper < incumbent.0 {
            incumbent = (nb.upper, w.clone());
        }
    }
    let root = Subproblem {
        phases: root_phases,
        bounds: root_bounds,
        lower: nb.lower,
        upper: nb.upper,
        witness: nb.witness,
        rho: nb.rho,
        improvement: 0.0,
        depth: 0,
        id: 0,
    };
    let mut next_id = 1u64;
    let mut pruned_min = f64::INFINITY;
    let mut queue = Vec::new();
    if root.lower >= 0.0 {
        pruned_min = root.lower;
    } else {
        queue.push(root);
    }
    let mut stalled = false;
    let open_min = |q: &[Subproblem]| q.iter().map(|s| s.lower).fold(f64::INFINITY, f64::min);
    result.lb_trace.push(open_min(&queue).min(pruned_min));

    loop {
        result.global_ub = incumbent.0;
        result.global_lb = open_min(&queue).min(pruned_min);
        if incumbent.0 < 0.0 {
            result.decision = Decision::Falsified;
            result.counterexample = Some(incumbent.1.clone());
            break;
        }
        if queue.is_empty() {
            result.decision = if stalled { Decision::Timeout } else { Decision::Verified };
            break;
        }
        if timed_out(&start) || cfg.max_subproblems.is_some_and(|m| result.subproblems >= m) {
            break;
        }
        let batch = select_batch(&mut queue, cfg.batch);
        ladder.update(batch[0].improvement);
        result.ladder_trace.push(ladder.index);
        let iters = ladder.iterations();
        let expanded: Vec<Result<Option<[Subproblem; 2]>>> =
            batch.par_iter().map(|sub| search.expand(sub, iters)).collect();
        for (parent, children) in batch.iter().zip(expanded) {
            let Some(children) = children? else {
                // Linear region whose bound could not be closed numerically.
                stalled = true;
                pruned_min = pruned_min.min(parent.lower);
                continue;
            };
            for mut child in children {
                child.id = next_id;
                next_id += 1;
                result.subproblems += 1;
                if let Some(w) = &child.witness {
                    if child.upper < incumbent.0 {
                        incumbent = (child.upper, w.clone());
                    }
                }
                if ladder.gains.is_none()
                    && child.depth == cfg.test_depth
                    && child.lower.is_finite()
                    && cfg.ladder.len() > 1
                {
                    let levels = cfg
                        .ladder
                        .iter()
                        .map(|&t| search.bound(&child.bounds, parent.rho.as_ref(), t).map(|b| b.lower))
                        .collect::<Result<Vec<_>>>()?;
                    ladder.measure(&levels);
                }
                if child.lower >= 0.0 {
                    pruned_min = pruned_min.min(child.lower);
                } else {
                    queue.push(child);
                }
            }
        }
        result.lb_trace.push(open_min(&queue).min(pruned_min));
    }
    if let Some(x) = &result.counterexample {
        let v = net.eval_scalar(x)?;
        debug_assert!(v < 0.0);
        result.global_ub = v;
    }
    result.elapsed = start.elapsed();
    Ok(result)
}
