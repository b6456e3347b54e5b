//! Dense-tableau two-phase simplex with Bland's rule.
//!
//! A general problem `min cᵀx` subject to row constraints and variable bounds
//! is rewritten in standard form `min c'ᵀy, A'y = b', y ≥ 0, b' ≥ 0`: finite
//! lower bounds are shifted out, upper bounds become rows, free variables are
//! split. Rows with a usable slack start basic on it; the rest get artificials.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const OPT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-8;
const MAX_PIVOTS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    /// Sparse coefficients `(variable, value)`.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `min cᵀx` over rows and bounds; bounds may be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.objective.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }
}

/// Residuals of the optimality conditions in standard-form space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    /// `max |A'y - b'|` and `max(-y)`.
    pub primal: f64,
    /// `max(-d)` over reduced costs `d = c' - A'ᵀπ`.
    pub dual: f64,
    /// `max |y_j d_j|`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    pub kkt: KktResiduals,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

/// `x_j = offset + Σ coef · y`.
#[derive(Clone, Debug)]
struct VarMap {
    offset: f64,
    terms: Vec<(usize, f64)>,
}

struct StandardForm {
    /// Dense `m × n` matrix.
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// Column usable as an initial basic variable (coefficient +1, only in this row).
    slack_basis: Vec<Option<usize>>,
    maps: Vec<VarMap>,
}

fn to_standard(lp: &LinearProgram) -> Result<StandardForm> {
    let nv = lp.num_vars();
    let mut maps = Vec::with_capacity(nv);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..nv {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l > u || l == f64::INFINITY || u == f64::NEG_INFINITY || l.is_nan() || u.is_nan() {
            return Err(Error::Lp(format!("variable {j} has empty bounds [{l}, {u}]")));
        }
        if l.is_finite() {
            maps.push(VarMap {
                offset: l,
                terms: vec![(ncols, 1.0)],
            });
            if u.is_finite() {
                bound_rows.push((ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            maps.push(VarMap {
                offset: u,
                terms: vec![(ncols, -1.0)],
            });
            ncols += 1;
        } else {
            maps.push(VarMap {
                offset: 0.0,
                terms: vec![(ncols, 1.0), (ncols + 1, -1.0)],
            });
            ncols += 2;
        }
    }
    let structural = ncols;
    let n_slack = lp.constraints.iter().filter(|c| c.relation != Relation::Eq).count() + bound_rows.len();
    let total = structural + n_slack;
    let m = lp.constraints.len() + bound_rows.len();
    let mut a = vec![vec![0.0; total]; m];
    let mut b = vec![0.0; m];
    let mut slack_basis = vec![None; m];
    let mut next_slack = structural;
    for (r, con) in lp.constraints.iter().enumerate() {
        let mut rhs = con.rhs;
        for &(j, v) in &con.coeffs {
            if j >= nv {
                return Err(Error::Lp(format!("constraint {r} references variable {j}")));
            }
            rhs -= v * maps[j].offset;
            for &(col, s) in &maps[j].terms {
                a[r][col] += v * s;
            }
        }
        let slack_sign = match con.relation {
            Relation::Le => Some(1.0),
            Relation::Ge => Some(-1.0),
            Relation::Eq => None,
        };
        let mut slack_col = None;
        if let Some(s) = slack_sign {
            a[r][next_slack] = s;
            slack_col = Some(next_slack);
            next_slack += 1;
        }
        if rhs < 0.0 {
            a[r].iter_mut().for_each(|v| *v = -*v);
            rhs = -rhs;
        }
        b[r] = rhs;
        if let Some(col) = slack_col {
            if a[r][col] == 1.0 {
                slack_basis[r] = Some(col);
            }
        }
    }
    for (i, &(col, cap)) in bound_rows.iter().enumerate() {
        let r = lp.constraints.len() + i;
        a[r][col] = 1.0;
        a[r][next_slack] = 1.0;
        slack_basis[r] = Some(next_slack);
        next_slack += 1;
        b[r] = cap;
    }
    let mut c = vec![0.0; total];
    for j in 0..nv {
        for &(col, s) in &maps[j].terms {
            c[col] += lp.objective[j] * s;
        }
    }
    Ok(StandardForm {
        a,
        b,
        c,
        slack_basis,
        maps,
    })
}

struct Tableau {
    rows: usize,
    width: usize,
    /// Row-major; each row has `width` coefficients followed by the rhs.
    t: Vec<f64>,
    basis: Vec<usize>,
    obj: Vec<f64>,
    obj_rhs: f64,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.width + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * (self.width + 1) + self.width]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let stride = self.width + 1;
        let p = self.t[r * stride + col];
        for v in &mut self.t[r * stride..(r + 1) * stride] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.t[r * stride..(r + 1) * stride].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * stride + col];
            if f != 0.0 {
                let row = &mut self.t[i * stride..(i + 1) * stride];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row[..self.width]) {
                *v -= f * pv;
            }
            self.obj[col] = 0.0;
            self.obj_rhs -= f * pivot_row[self.width];
        }
        self.basis[r] = col;
    }

    /// Bland's rule iterations over columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize, pivots: &mut usize) -> Result<bool> {
        loop {
            let Some(col) = (0..allowed).find(|&j| self.obj[j] < -OPT_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, col);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Ok(false);
            };
            self.pivot(r, col);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::Lp(format!("pivot limit {MAX_PIVOTS} exceeded")));
            }
        }
    }
}

/// Solves `lp` to optimality or reports infeasibility / unboundedness.
pub fn lp_solve(lp: &LinearProgram) -> Result<LpOutcome> {
    let sf = to_standard(lp)?;
    let m = sf.b.len();
    let n = sf.c.len();
    let art_rows: Vec<usize> = (0..m).filter(|&r| sf.slack_basis[r].is_none()).collect();
    let width = n + art_rows.len();
    let mut t = vec![0.0; m * (width + 1)];
    let mut basis = vec![0; m];
    let mut init_col = vec![0; m];
    for r in 0..m {
        let row = &mut t[r * (width + 1)..(r + 1) * (width + 1)];
        row[..n].copy_from_slice(&sf.a[r]);
        row[width] = sf.b[r];
    }
    for (k, &r) in art_rows.iter().enumerate() {
        t[r * (width + 1) + n + k] = 1.0;
        basis[r] = n + k;
        init_col[r] = n + k;
    }
    for r in 0..m {
        if let Some(col) = sf.slack_basis[r] {
            basis[r] = col;
            init_col[r] = col;
        }
    }
    let mut tab = Tableau {
        rows: m,
        width,
        t,
        basis,
        obj: vec![0.0; width],
        obj_rhs: 0.0,
    };
    let mut pivots = 0;

    if !art_rows.is_empty() {
        // Phase 1 reduced costs: minus the sum of artificial rows.
        for &r in &art_rows {
            for j in 0..n {
                tab.obj[j] -= tab.at(r, j);
            }
            tab.obj_rhs -= tab.rhs(r);
        }
        tab.optimize(n, &mut pivots)?;
        let infeas: f64 = (0..m).filter(|&r| tab.basis[r] >= n).map(|r| tab.rhs(r)).sum();
        if infeas > FEAS_TOL * (1.0 + sf.b.iter().fold(0.0_f64, |a, v| a.max(v.abs()))) {
            return Ok(LpOutcome::Infeasible);
        }
        for r in 0..m {
            if tab.basis[r] >= n {
                if let Some(col) = (0..n).find(|&j| tab.at(r, j).abs() > 1e-9) {
                    tab.pivot(r, col);
                }
            }
        }
    }

    tab.obj = vec![0.0; width];
    tab.obj[..n].copy_from_slice(&sf.c);
    tab.obj_rhs = 0.0;
    for r in 0..m {
        let bcol = tab.basis[r];
        let cb = if bcol < n { sf.c[bcol] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..width {
                tab.obj[j] -= cb * tab.at(r, j);
            }
            tab.obj_rhs -= cb * tab.rhs(r);
        }
    }
    if !tab.optimize(n, &mut pivots)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut y = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            y[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    // π = c_Bᵀ B⁻¹, with B⁻¹ read from the initial basis columns.
    let mut pi = vec![0.0; m];
    for (r, &col) in init_col.iter().enumerate() {
        pi[r] = (0..m)
            .map(|i| {
                let bcol = tab.basis[i];
                let cb = if bcol < n { sf.c[bcol] } else { 0.0 };
                cb * tab.at(i, col)
            })
            .sum();
    }
    let kkt = residuals(&sf, &y, &pi);
    let x: Vec<f64> = sf
        .maps
        .iter()
        .map(|vm| vm.offset + vm.terms.iter().map(|&(c, s)| s * y[c]).sum::<f64>())
        .collect();
    let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    Ok(LpOutcome::Optimal(LpSolution { value, x, kkt }))
}

fn residuals(sf: &StandardForm, y: &[f64], pi: &[f64]) -> KktResiduals {
    let mut primal = y.iter().fold(0.0_f64, |a, v| a.max(-v));
    for (row, b) in sf.a.iter().zip(&sf.b) {
        let ay: f64 = row.iter().zip(y).map(|(a, v)| a * v).sum();
        primal = primal.max((ay - b).abs());
    }
    let mut dual = 0.0_f64;
    let mut comp = 0.0_f64;
    for j in 0..sf.c.len() {
        let d = sf.c[j] - (0..sf.a.len()).map(|r| sf.a[r][j] * pi[r]).sum::<f64>();
        dual = dual.max(-d);
        comp = comp.max((y[j] * d).abs());
    }
    KktResiduals {
        primal,
        dual,
        complementarity: comp,
    }
}
