//! Experiment runners behind the command-line tool: incomplete bound
//! comparison and complete verification, each producing CSV rows.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::bab::{bab_run, BabConfig, Decision};
use crate::bounds::LayerBounds;
use crate::decomposition::{init_duals_from_propagation, supergradient_solve, DualProblem, StepSchedule};
use crate::dsg::{dec_dsg_bound, dsg_supergradient_solve};
use crate::error::{Error, Result};
use crate::network::{load_network, load_properties, InputDomain, Network, VerificationProperty};
use crate::oracles::planet_lp_bound;
use crate::propagation::{intermediate_bounds, interval_bound, propagation_bound, IbStrategy, SlopeRule};
use crate::proximal::{proximal_solve, ProximalConfig};

/// Largest network (hidden neurons) for which the simplex oracle is run.
pub const ORACLE_MAX_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Ibp,
    Wk,
    Crown,
    DsgPlus,
    DecDsgPlus,
    Supergradient,
    Proximal,
    Simplex,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ibp,
        Method::Wk,
        Method::Crown,
        Method::DsgPlus,
        Method::DecDsgPlus,
        Method::Supergradient,
        Method::Proximal,
        Method::Simplex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ibp => "ibp",
            Method::Wk => "wk",
            Method::Crown => "crown",
            Method::DsgPlus => "dsg+",
            Method::DecDsgPlus => "dec-dsg+",
            Method::Supergradient => "supergradient",
            Method::Proximal => "proximal",
            Method::Simplex => "simplex",
        }
    }

    /// Iterative methods take an iteration budget; the others run once.
    pub fn is_iterative(self) -> bool {
        matches!(
            self,
            Method::DsgPlus | Method::DecDsgPlus | Method::Supergradient | Method::Proximal
        )
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownId {
                kind: "method",
                name: s.to_string(),
            })
    }
}

/// Wall-clock timing, or zero for byte-reproducible output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Timing {
    #[default]
    Wall,
    Zero,
}

impl Timing {
    fn seconds(self, d: Duration) -> f64 {
        match self {
            Timing::Wall => d.as_secs_f64(),
            Timing::Zero => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub timing: Timing,
    pub parallel: bool,
}

/// A property with the network it refers to.
#[derive(Clone, Debug)]
pub struct Problem {
    pub property: VerificationProperty,
    pub net: Network,
}

/// Loads a properties file and the models it names from `models_dir`. A
/// property without a model name uses the directory's only model file.
pub fn load_problems(models_dir: &Path, props_file: &Path) -> Result<Vec<Problem>> {
    let props = load_properties(props_file)?;
    let mut default_model: Option<PathBuf> = None;
    let mut out = Vec::with_capacity(props.len());
    for property in props {
        let path = match &property.model {
            Some(name) => models_dir.join(name),
            None => {
                if default_model.is_none() {
                    default_model = Some(single_model(models_dir)?);
                }
                default_model.clone().expect("set above")
            }
        };
        if !path.exists() {
            return Err(Error::UnknownId {
                kind: "model",
                name: path.display().to_string(),
            });
        }
        let net = load_network(&path)?;
        property.check(&net)?;
        out.push(Problem { property, net });
    }
    Ok(out)
}

fn single_model(dir: &Path) -> Result<PathBuf> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut models: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    models.sort();
    match models.len() {
        1 => Ok(models.remove(0)),
        n => Err(Error::Parse(format!(
            "a property names no model and {} holds {n} model files",
            dir.display()
        ))),
    }
}

/// True when the simplex oracle is run: box domain, ReLU, at most
/// [`ORACLE_MAX_HIDDEN`] hidden neurons.
pub fn oracle_tractable(net: &Network, domain: &InputDomain) -> bool {
    domain.is_box() && net.is_relu() && net.hidden_widths().iter().sum::<usize>() <= ORACLE_MAX_HIDDEN
}

/// Lower bound from one method on one canonical network with fixed
/// intermediate bounds. Iterative methods start from CROWN.
pub fn method_bound(
    method: Method,
    net: &Network,
    domain: &InputDomain,
    bounds: &LayerBounds,
    budget: usize,
) -> Result<f64> {
    if !bounds.is_feasible() {
        return Ok(f64::INFINITY);
    }
    match method {
        Method::Ibp => Ok(interval_bound(net, domain, bounds)),
        Method::Wk => Ok(propagation_bound(net, domain, bounds, SlopeRule::Wk)?.bound),
        Method::Crown => Ok(propagation_bound(net, domain, bounds, SlopeRule::Crown)?.bound),
        Method::DsgPlus | Method::DecDsgPlus => {
            let init = propagation_bound(net, domain, bounds, SlopeRule::Crown)?.duals;
            let res = dsg_supergradient_solve(net, domain, bounds, &init, budget, StepSchedule::default())?;
            if method == Method::DsgPlus {
                Ok(res.best)
            } else {
                let prob = DualProblem::new(net, domain, bounds)?;
                Ok(dec_dsg_bound(&prob, &res.duals))
            }
        }
        Method::Supergradient => {
            let prob = DualProblem::new(net, domain, bounds)?;
            let rho0 = init_duals_from_propagation(net, domain, bounds, SlopeRule::Crown)?;
            Ok(supergradient_solve(&prob, &rho0, budget, StepSchedule::default()).best)
        }
        Method::Proximal => {
            let prob = DualProblem::new(net, domain, bounds)?;
            let rho0 = init_duals_from_propagation(net, domain, bounds, SlopeRule::Crown)?;
            Ok(proximal_solve(&prob, &rho0, &ProximalConfig::incomplete(budget)).0.best)
        }
        Method::Simplex => {
            if !oracle_tractable(net, domain) {
                return Err(Error::Unsupported("simplex oracle is intractable here".into()));
            }
            planet_lp_bound(net, domain, bounds)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IncompleteRow {
    pub property_id: String,
    pub method: String,
    pub budget: usize,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub time_s: f64,
}

struct Canonical {
    net: Network,
    bounds: LayerBounds,
}

fn canonical_parts(problem: &Problem) -> Result<Vec<Canonical>> {
    let domain = &problem.property.input;
    problem
        .property
        .canonical_networks(&problem.net)?
        .into_iter()
        .map(|net| {
            let bounds = intermediate_bounds(&net, domain, IbStrategy::WkCrown, None)?;
            Ok(Canonical { net, bounds })
        })
        .collect()
}

/// Bound over all functionals of a property: the smallest per-functional bound.
/// `None` when the method does not apply to this network.
fn property_bound(method: Method, parts: &[Canonical], domain: &InputDomain, budget: usize) -> Result<Option<f64>> {
    let mut worst = f64::INFINITY;
    for part in parts {
        match method_bound(method, &part.net, domain, &part.bounds, budget) {
            Ok(v) => worst = worst.min(v),
            Err(Error::Unsupported(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(worst))
}

fn incomplete_one(
    problem: &Problem,
    methods: &[Method],
    budgets: &[usize],
    opts: RunOptions,
) -> Result<Vec<IncompleteRow>> {
    let domain = &problem.property.input;
    let parts = canonical_parts(problem)?;
    let optimum = if oracle_tractable(&problem.net, domain) {
        property_bound(Method::Simplex, &parts, domain, 0)?
    } else {
        None
    };
    let mut rows = Vec::new();
    for &m in methods {
        let runs: Vec<usize> = if m.is_iterative() { budgets.to_vec() } else { vec![0] };
        for budget in runs {
            let start = Instant::now();
            let bound = property_bound(m, &parts, domain, budget)?;
            let time_s = opts.timing.seconds(start.elapsed());
            let gap = match (optimum, bound) {
                (Some(p), Some(b)) => Some(p - b),
                _ => None,
            };
            rows.push(IncompleteRow {
                property_id: problem.property.id.clone(),
                method: m.as_str().to_string(),
                budget,
                bound,
                gap,
                time_s,
            });
        }
    }
    Ok(rows)
}

fn map_problems<T: Send>(
    problems: &[Problem],
    parallel: bool,
    f: impl Fn(&Problem) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if parallel {
        problems.par_iter().map(f).collect()
    } else {
        problems.iter().map(f).collect()
    }
}

/// One row per (property, method, budget); non-iterative methods get budget 0.
pub fn run_incomplete(
    problems: &[Problem],
    methods: &[Method],
    budgets: &[usize],
    opts: RunOptions,
) -> Result<Vec<IncompleteRow>> {
    let per = map_problems(problems, opts.parallel, |p| incomplete_one(p, methods, budgets, opts))?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompleteRow {
    pub property_id: String,
    pub preset: String,
    pub decision: String,
    pub time_s: f64,
    pub subproblems: usize,
    pub global_lb: f64,
    pub global_ub: f64,
}

/// Verifies every functional of a property with branch and bound. Falsified
/// as soon as one functional is, verified when all are; a timed-out run
/// reports the time limit as its time.
pub fn complete_one(problem: &Problem, preset: &str, cfg: &BabConfig, opts: RunOptions) -> Result<CompleteRow> {
    let domain = &problem.property.input;
    let start = Instant::now();
    let mut decision = Decision::Verified;
    let mut subproblems = 0;
    let (mut lb, mut ub) = (f64::INFINITY, f64::INFINITY);
    for net in problem.property.canonical_networks(&problem.net)? {
        let mut local = cfg.clone();
        if let Some(t) = cfg.timeout {
            local.timeout = Some(t.saturating_sub(start.elapsed()));
        }
        let r = bab_run(&net, domain, &local)?;
        subproblems += r.subproblems;
        lb = lb.min(r.global_lb);
        ub = ub.min(r.global_ub);
        match r.decision {
            Decision::Verified => {}
            Decision::Falsified => {
                decision = Decision::Falsified;
                break;
            }
            Decision::Timeout => {
                decision = Decision::Timeout;
                break;
            }
        }
    }
    let elapsed = match (decision, cfg.timeout) {
        (Decision::Timeout, Some(t)) => t,
        _ => start.elapsed(),
    };
    Ok(CompleteRow {
        property_id: problem.property.id.clone(),
        preset: preset.to_string(),
        decision: decision.as_str().to_string(),
        time_s: opts.timing.seconds(elapsed),
        subproblems,
        global_lb: lb,
        global_ub: ub,
    })
}

pub fn run_complete(problems: &[Problem], preset: &str, cfg: &BabConfig, opts: RunOptions) -> Result<Vec<CompleteRow>> {
    map_problems(problems, opts.parallel, |p| complete_one(p, preset, cfg, opts))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CactusPoint {
    pub time_s: f64,
    pub solved_fraction: f64,
}

/// Fraction of properties decided within each observed solve time.
pub fn cactus(rows: &[CompleteRow]) -> Vec<CactusPoint> {
    let total = rows.len().max(1) as f64;
    let mut times: Vec<f64> = rows
        .iter()
        .filter(|r| r.decision != Decision::Timeout.as_str())
        .map(|r| r.time_s)
        .collect();
    times.sort_by(f64::total_cmp);
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| CactusPoint {
            time_s: t,
            solved_fraction: (i + 1) as f64 / total,
        })
        .collect()
}

/// Writes rows with a fixed header to any writer.
pub fn write_csv<T: Serialize, W: std::io::Write>(rows: &[T], header: &[&str], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

pub const INCOMPLETE_HEADER: [&str; 6] = ["property_id", "method", "budget", "bound", "gap", "time_s"];
pub const COMPLETE_HEADER: [&str; 7] = [
    "property_id",
    "preset",
    "decision",
    "time_s",
    "subproblems",
    "global_lb",
    "global_ub",
];
pub const CACTUS_HEADER: [&str; 2] = ["time_s", "solved_fraction"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("gurobi".parse::<Method>().is_err());
    }

    #[test]
    fn cactus_counts_solved_only() {
        let row = |d: &str, t: f64| CompleteRow {
            property_id: "p".into(),
            preset: "x".into(),
            decision: d.into(),
            time_s: t,
            subproblems: 1,
            global_lb: 0.0,
            global_ub: 0.0,
        };
        let pts = cactus(&[row("verified", 2.0), row("timeout", 5.0), row("falsified", 1.0)]);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].time_s, 1.0);
        assert!((pts[1].solved_fraction - 2.0 / 3.0).abs() < 1e-15);
    }
}
