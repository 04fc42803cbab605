//! Small dense linear programs, solved with a two-phase tableau simplex.
//!
//! Pivoting follows Bland's rule (lowest-index entering column, lowest-index
//! basic variable among ratio ties), so degenerate problems terminate and the
//! returned vertex is deterministic. Sized for desk-scale networks: tens of
//! variables, a few dozen rows.

use thiserror::Error;

pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// Sparse `(variable, coefficient)` terms.
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective·x` subject to the constraints, `0 <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub upper: Vec<Option<f64>>,
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, objective: vec![0.0; num_vars], constraints: Vec::new(), upper: vec![None; num_vars] }
    }

    pub fn constrain(&mut self, terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { terms, relation, rhs });
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &xj) in x.iter().enumerate() {
            worst = worst.max(-xj);
            if let Some(u) = self.upper[j] {
                worst = worst.max(xj - u);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("objective is unbounded")]
    Unbounded,
    #[error("malformed problem: {0}")]
    Malformed(String),
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize, costs: &mut [f64], value: &mut f64) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        let (pr, prhs) = (self.rows[r].clone(), self.rhs[r]);
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][col];
            if f != 0.0 {
                for (v, a) in self.rows[i].iter_mut().zip(&pr) {
                    *v -= f * a;
                }
                self.rhs[i] -= f * prhs;
            }
        }
        let f = costs[col];
        if f != 0.0 {
            for (v, a) in costs.iter_mut().zip(&pr) {
                *v -= f * a;
            }
            *value += f * prhs;
        }
        self.basis[r] = col;
    }

    /// Runs simplex iterations on reduced costs `costs` restricted to
    /// columns `< active`. Returns false if unbounded.
    fn optimize(&mut self, costs: &mut [f64], value: &mut f64, active: usize) -> bool {
        loop {
            let Some(col) = (0..active).find(|&j| costs[j] > TOLERANCE) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > TOLERANCE {
                    let ratio = self.rhs[i] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - TOLERANCE || (ratio <= lr + TOLERANCE && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return false;
            };
            self.pivot(r, col, costs, value);
        }
    }
}

pub fn lp_solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    let n = p.num_vars;
    if p.objective.len() != n || p.upper.len() != n {
        return Err(LpError::Malformed("objective/upper length differs from num_vars".into()));
    }
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &p.constraints {
        let mut row = vec![0.0; n];
        for &(j, a) in &c.terms {
            if j >= n {
                return Err(LpError::Malformed(format!("variable {j} out of range")));
            }
            row[j] += a;
        }
        if !c.rhs.is_finite() || row.iter().any(|a| !a.is_finite()) {
            return Err(LpError::Malformed("non-finite coefficient".into()));
        }
        rows.push((row, c.relation, c.rhs));
    }
    for (j, u) in p.upper.iter().enumerate() {
        if let Some(u) = *u {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            rows.push((row, Relation::Le, u));
        }
    }
    // Normalize to nonnegative right-hand sides.
    for (row, rel, rhs) in rows.iter_mut() {
        if *rhs < 0.0 {
            row.iter_mut().for_each(|a| *a = -*a);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }
    let m = rows.len();
    let slacks = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let arts = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + slacks + arts;
    let art_start = n + slacks;

    let mut t = Tableau { rows: Vec::with_capacity(m), rhs: Vec::with_capacity(m), basis: Vec::with_capacity(m), cols };
    let (mut s, mut a) = (n, art_start);
    for (row, rel, rhs) in rows {
        let mut full = row;
        full.resize(cols, 0.0);
        match rel {
            Relation::Le => {
                full[s] = 1.0;
                t.basis.push(s);
                s += 1;
            }
            Relation::Ge => {
                full[s] = -1.0;
                full[a] = 1.0;
                t.basis.push(a);
                s += 1;
                a += 1;
            }
            Relation::Eq => {
                full[a] = 1.0;
                t.basis.push(a);
                a += 1;
            }
        }
        t.rows.push(full);
        t.rhs.push(rhs);
    }

    // Phase 1: maximize -sum(artificials), written in reduced-cost form.
    let mut costs = vec![0.0; cols];
    let mut value = 0.0;
    if arts > 0 {
        for i in 0..m {
            if t.basis[i] >= art_start {
                for j in 0..art_start {
                    costs[j] += t.rows[i][j];
                }
                value -= t.rhs[i];
            }
        }
        t.optimize(&mut costs, &mut value, art_start);
        if value < -TOLERANCE * (1.0 + t.rhs.iter().fold(0.0_f64, |x, y| x.max(y.abs()))) {
            return Err(LpError::Infeasible);
        }
        // Pivot degenerate artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < t.rows.len() {
            if t.basis[i] >= art_start {
                if let Some(col) = (0..art_start).find(|&j| t.rows[i][j].abs() > TOLERANCE) {
                    let mut dummy = vec![0.0; cols];
                    let mut dv = 0.0;
                    t.pivot(i, col, &mut dummy, &mut dv);
                } else {
                    t.rows.remove(i);
                    t.rhs.remove(i);
                    t.basis.remove(i);
                    continue;
                }
            }
            i += 1;
        }
    }

    // Phase 2.
    let mut costs = vec![0.0; t.cols];
    costs[..n].copy_from_slice(&p.objective);
    let mut value = 0.0;
    for i in 0..t.rows.len() {
        let cb = if t.basis[i] < n { p.objective[t.basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..t.cols {
                costs[j] -= cb * t.rows[i][j];
            }
            value += cb * t.rhs[i];
        }
    }
    if !t.optimize(&mut costs, &mut value, art_start) {
        return Err(LpError::Unbounded);
    }
    let mut x = vec![0.0; n];
    for (i, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.rhs[i].max(0.0);
        }
    }
    let objective = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_variable() {
        let mut p = LpProblem::new(1);
        p.objective[0] = 1.0;
        p.constrain(vec![(0, 1.0)], Relation::Le, 1.0);
        let s = lp_solve(&p).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);

        let mut p = LpProblem::new(1);
        p.objective[0] = 1.0;
        p.constrain(vec![(0, 1.0)], Relation::Le, -1.0);
        assert_eq!(lp_solve(&p), Err(LpError::Infeasible));
    }

    #[test]
    fn unbounded() {
        let mut p = LpProblem::new(2);
        p.objective = vec![1.0, 0.0];
        p.constrain(vec![(1, 1.0)], Relation::Le, 3.0);
        assert_eq!(lp_solve(&p), Err(LpError::Unbounded));
    }

    #[test]
    fn two_commodity_shared_link() {
        // Vertices of {r1 + r2 <= 1, r >= 0}: (0,0), (1,0), (0,1).
        let vertices: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        let best = vertices.iter().copied().max_by(|a, b| (3.0 * a.0 + 2.0 * a.1).total_cmp(&(3.0 * b.0 + 2.0 * b.1))).unwrap();
        let mut p = LpProblem::new(2);
        p.objective = vec![3.0, 2.0];
        p.constrain(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0);
        let s = lp_solve(&p).unwrap();
        assert_eq!((s.x[0], s.x[1]), best);
        assert_eq!(s.objective, 3.0);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x + y  s.t.  x + 2y = 4, x >= 1, y <= 1.2 (as bound)
        let mut p = LpProblem::new(2);
        p.objective = vec![1.0, 1.0];
        p.constrain(vec![(0, 1.0), (1, 2.0)], Relation::Eq, 4.0);
        p.constrain(vec![(0, 1.0)], Relation::Ge, 1.0);
        p.upper[1] = Some(1.2);
        let s = lp_solve(&p).unwrap();
        assert!((s.x[0] - 4.0).abs() < 1e-9 && s.x[1].abs() < 1e-9);
        assert!(p.max_violation(&s.x) < 1e-9);
    }

    #[test]
    fn redundant_equalities() {
        let mut p = LpProblem::new(2);
        p.objective = vec![1.0, 0.0];
        p.constrain(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 2.0);
        p.constrain(vec![(0, 2.0), (1, 2.0)], Relation::Eq, 4.0);
        let s = lp_solve(&p).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the largest-coefficient rule.
        let mut p = LpProblem::new(4);
        p.objective = vec![0.75, -150.0, 0.02, -6.0];
        p.constrain(vec![(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)], Relation::Le, 0.0);
        p.constrain(vec![(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)], Relation::Le, 0.0);
        p.constrain(vec![(2, 1.0)], Relation::Le, 1.0);
        let s = lp_solve(&p).unwrap();
        assert!((s.objective - 0.05).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Box-constrained LPs have an obvious optimum: each variable sits at
            /// its upper bound when its cost is positive.
            #[test]
            fn box_optimum(c in prop::collection::vec(-5.0..5.0f64, 1..6), u in prop::collection::vec(0.0..4.0f64, 6)) {
                let n = c.len();
                let mut p = LpProblem::new(n);
                p.objective = c.clone();
                for j in 0..n {
                    p.upper[j] = Some(u[j]);
                }
                let s = lp_solve(&p).unwrap();
                let expect: f64 = c.iter().zip(&u).map(|(c, u)| if *c > 0.0 { c * u } else { 0.0 }).sum();
                prop_assert!((s.objective - expect).abs() < 1e-9);
                prop_assert!(p.max_violation(&s.x) < 1e-9);
            }
        }
    }
}
