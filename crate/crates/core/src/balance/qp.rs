//! Dual active-set solver for `min ½‖w‖²` under two-sided linear
//! constraints `|aₖᵀw − bₖ| ≤ δₖ` and optional bounds `w ≥ 0`.
//!
//! This is the Goldfarb–Idnani scheme specialized to an identity Hessian.
//! It starts from the unconstrained minimizer `w = 0` and adds violated
//! constraints one at a time while keeping the multipliers dual feasible.
//! Active bounds are eliminated: their coordinates are fixed at zero and
//! dropped from the Gram matrix of the active general constraints.

use nalgebra::{DMatrix, DVector};

const DEPENDENT_TOL: f64 = 1e-10;
const REFRESH_EVERY: usize = 32;

#[derive(Clone, Copy, Debug)]
struct Cons {
    col: usize,
    sign: f64,
    rhs: f64,
    equality: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct QpOutcome {
    pub weights: Vec<f64>,
    /// Net multiplier per input column (upper minus lower side).
    pub duals: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub result: QpResult,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum QpResult {
    Solved,
    /// Index of the input column whose constraint could not be added, and
    /// whether it was the upper side.
    Infeasible { column: Option<usize>, upper: bool, violation: f64 },
    MaxIterations,
}

pub(crate) struct Qp<'a> {
    a: &'a DMatrix<f64>,
    nonneg: bool,
    cons: Vec<Cons>,
    max_iter: usize,
    viol_tol: f64,
}

struct State {
    w: DVector<f64>,
    free: Vec<bool>,
    active: Vec<usize>,
    u: Vec<f64>,
    ub: Vec<f64>,
    gram: DMatrix<f64>,
    since_refresh: usize,
}

impl<'a> Qp<'a> {
    pub fn new(a: &'a DMatrix<f64>, targets: &[f64], tolerance: &[f64], nonneg: bool, max_iter: usize) -> Self {
        let mut cons = Vec::new();
        for k in 0..a.ncols() {
            if tolerance[k] == 0.0 {
                cons.push(Cons { col: k, sign: 1.0, rhs: targets[k], equality: true });
            } else {
                cons.push(Cons { col: k, sign: 1.0, rhs: targets[k] - tolerance[k], equality: false });
                cons.push(Cons { col: k, sign: -1.0, rhs: -targets[k] - tolerance[k], equality: false });
            }
        }
        Qp { a, nonneg, cons, max_iter, viol_tol: 1e-12 }
    }

    fn n(&self) -> usize {
        self.a.nrows()
    }

    #[inline]
    fn coef(&self, c: usize, j: usize) -> f64 {
        let k = &self.cons[c];
        k.sign * self.a[(j, k.col)]
    }

    fn value(&self, c: usize, w: &DVector<f64>) -> f64 {
        let k = &self.cons[c];
        k.sign * self.a.column(k.col).dot(w)
    }

    fn slack(&self, c: usize, w: &DVector<f64>) -> f64 {
        self.value(c, w) - self.cons[c].rhs
    }

    fn gram_from_scratch(&self, st: &State) -> DMatrix<f64> {
        let m = st.active.len();
        let mut g = DMatrix::zeros(m, m);
        for (x, &ci) in st.active.iter().enumerate() {
            for (y, &cj) in st.active.iter().enumerate().skip(x) {
                let mut s = 0.0;
                for j in 0..self.n() {
                    if st.free[j] {
                        s += self.coef(ci, j) * self.coef(cj, j);
                    }
                }
                g[(x, y)] = s;
                g[(y, x)] = s;
            }
        }
        g
    }

    /// Active-row vector of bound coordinate `j`.
    fn active_row(&self, st: &State, j: usize) -> DVector<f64> {
        DVector::from_iterator(st.active.len(), st.active.iter().map(|&c| self.coef(c, j)))
    }

    fn solve_gram(&self, st: &mut State, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        if st.active.is_empty() {
            return Some(DVector::zeros(0));
        }
        if st.since_refresh >= REFRESH_EVERY {
            st.gram = self.gram_from_scratch(st);
            st.since_refresh = 0;
        }
        let chol = nalgebra::Cholesky::new(st.gram.clone())?;
        Some(chol.solve(rhs))
    }

    /// Most violated inequality (general or bound), scaled by its norm.
    fn most_violated(&self, st: &State) -> Option<(Candidate, f64)> {
        let mut best: Option<(Candidate, f64)> = None;
        for c in 0..self.cons.len() {
            if self.cons[c].equality || st.active.contains(&c) {
                continue;
            }
            let norm = self.a.column(self.cons[c].col).norm().max(1e-300);
            let v = -self.slack(c, &st.w) / norm;
            if v > self.viol_tol && best.map_or(true, |(_, b)| v > b) {
                best = Some((Candidate::General(c), v));
            }
        }
        if self.nonneg {
            for j in 0..self.n() {
                if st.free[j] {
                    let v = -st.w[j];
                    if v > self.viol_tol && best.map_or(true, |(_, b)| v > b) {
                        best = Some((Candidate::Bound(j), v));
                    }
                }
            }
        }
        best
    }

    pub fn solve(&mut self) -> QpOutcome {
        let n = self.n();
        let mut st = State {
            w: DVector::zeros(n),
            free: vec![true; n],
            active: Vec::new(),
            u: Vec::new(),
            ub: vec![0.0; n],
            gram: DMatrix::zeros(0, 0),
            since_refresh: 0,
        };
        let mut iterations = 0;
        let equalities: Vec<usize> = (0..self.cons.len()).filter(|&c| self.cons[c].equality).collect();
        for c in equalities {
            if self.slack(c, &st.w) > 0.0 {
                let k = &mut self.cons[c];
                k.sign = -k.sign;
                k.rhs = -k.rhs;
            }
            match self.add_constraint(&mut st, Candidate::General(c), &mut iterations) {
                Step::Added | Step::Skipped => {}
                Step::Infeasible(v) => return self.finish(st, iterations, self.infeasible(c, v)),
                Step::MaxIter => return self.finish(st, iterations, QpResult::MaxIterations),
            }
        }
        for round in 0..4 {
            while let Some((cand, _)) = self.most_violated(&st) {
                match self.add_constraint(&mut st, cand, &mut iterations) {
                    Step::Added | Step::Skipped => {}
                    Step::Infeasible(v) => {
                        let res = match cand {
                            Candidate::General(c) => self.infeasible(c, v),
                            Candidate::Bound(_) => QpResult::Infeasible { column: None, upper: false, violation: v },
                        };
                        return self.finish(st, iterations, res);
                    }
                    Step::MaxIter => return self.finish(st, iterations, QpResult::MaxIterations),
                }
            }
            self.polish(&mut st);
            if self.most_violated(&st).is_none() || round == 3 {
                break;
            }
        }
        self.finish(st, iterations, QpResult::Solved)
    }

    fn infeasible(&self, c: usize, violation: f64) -> QpResult {
        let k = &self.cons[c];
        QpResult::Infeasible { column: Some(k.col), upper: k.sign < 0.0, violation }
    }

    fn add_constraint(&self, st: &mut State, cand: Candidate, iterations: &mut usize) -> Step {
        let n = self.n();
        let mut u_p = 0.0;
        let equality = matches!(cand, Candidate::General(c) if self.cons[c].equality);
        loop {
            *iterations += 1;
            if *iterations > self.max_iter {
                return Step::MaxIter;
            }
            let s_p = match cand {
                Candidate::General(c) => self.slack(c, &st.w),
                Candidate::Bound(j) => st.w[j],
            };
            // d = N_{F,A}ᵀ n_{p,F}
            let d = match cand {
                Candidate::General(c) => {
                    let mut d = DVector::zeros(st.active.len());
                    for (x, &ci) in st.active.iter().enumerate() {
                        let mut s = 0.0;
                        for j in 0..n {
                            if st.free[j] {
                                s += self.coef(ci, j) * self.coef(c, j);
                            }
                        }
                        d[x] = s;
                    }
                    d
                }
                Candidate::Bound(j) => self.active_row(st, j),
            };
            let r = match self.solve_gram(st, &d) {
                Some(r) => r,
                None => {
                    st.gram = self.gram_from_scratch(st);
                    st.since_refresh = 0;
                    match self.solve_gram(st, &d) {
                        Some(r) => r,
                        None => return Step::MaxIter,
                    }
                }
            };
            // z over free coordinates; bound multiplier direction over fixed ones.
            let mut z = DVector::zeros(n);
            let mut rz = vec![0.0; n];
            let mut np_norm2 = 0.0;
            for j in 0..n {
                let np = match cand {
                    Candidate::General(c) => self.coef(c, j),
                    Candidate::Bound(b) => (b == j) as u8 as f64,
                };
                let mut na_r = 0.0;
                for (x, &ci) in st.active.iter().enumerate() {
                    na_r += self.coef(ci, j) * r[x];
                }
                if st.free[j] {
                    z[j] = np - na_r;
                    np_norm2 += np * np;
                } else {
                    rz[j] = np - na_r;
                }
            }
            let z2 = z.norm_squared();
            let dependent = z2.sqrt() <= DEPENDENT_TOL * np_norm2.sqrt().max(1.0) || np_norm2 == 0.0;
            if dependent && equality && u_p == 0.0 && s_p.abs() <= self.viol_tol.max(1e-10 * self.cons_scale(cand)) {
                return Step::Skipped;
            }
            if !dependent && s_p >= 0.0 && !equality && u_p == 0.0 {
                // Already satisfied after earlier partial steps.
                return Step::Skipped;
            }
            // Partial step over active inequalities.
            let mut t1 = f64::INFINITY;
            let mut block: Option<Candidate> = None;
            for (x, &ci) in st.active.iter().enumerate() {
                if !self.cons[ci].equality && r[x] > 1e-14 {
                    let t = st.u[x] / r[x];
                    if t < t1 {
                        t1 = t;
                        block = Some(Candidate::General(ci));
                    }
                }
            }
            for j in 0..n {
                if !st.free[j] && rz[j] > 1e-14 {
                    let t = st.ub[j] / rz[j];
                    if t < t1 {
                        t1 = t;
                        block = Some(Candidate::Bound(j));
                    }
                }
            }
            let t2 = if dependent { f64::INFINITY } else { -s_p / z2 };
            if !t1.is_finite() && !t2.is_finite() {
                return Step::Infeasible(-s_p);
            }
            let t = t1.min(t2).max(0.0);
            if t.is_finite() && t > 0.0 {
                st.w.axpy(t, &z, 1.0);
                for x in 0..st.active.len() {
                    st.u[x] -= t * r[x];
                }
                for j in 0..n {
                    if !st.free[j] {
                        st.ub[j] -= t * rz[j];
                    }
                }
                u_p += t;
            }
            if t2 <= t1 {
                match cand {
                    Candidate::General(c) => {
                        let m = st.active.len();
                        let mut g = DMatrix::zeros(m + 1, m + 1);
                        g.view_mut((0, 0), (m, m)).copy_from(&st.gram);
                        for x in 0..m {
                            g[(x, m)] = d[x];
                            g[(m, x)] = d[x];
                        }
                        g[(m, m)] = np_norm2;
                        st.gram = g;
                        st.active.push(c);
                        st.u.push(u_p);
                    }
                    Candidate::Bound(j) => {
                        let a = self.active_row(st, j);
                        st.gram -= &a * a.transpose();
                        st.free[j] = false;
                        st.w[j] = 0.0;
                        st.ub[j] = u_p;
                    }
                }
                st.since_refresh += 1;
                return Step::Added;
            }
            match block.expect("finite partial step has a blocking constraint") {
                Candidate::General(c) => {
                    let x = st.active.iter().position(|&a| a == c).unwrap();
                    st.active.remove(x);
                    st.u.remove(x);
                    st.gram = st.gram.clone().remove_row(x).remove_column(x);
                }
                Candidate::Bound(j) => {
                    st.free[j] = true;
                    st.ub[j] = 0.0;
                    let a = self.active_row(st, j);
                    st.gram += &a * a.transpose();
                }
            }
            st.since_refresh += 1;
        }
    }

    fn cons_scale(&self, cand: Candidate) -> f64 {
        match cand {
            Candidate::General(c) => 1.0 + self.cons[c].rhs.abs(),
            Candidate::Bound(_) => 1.0,
        }
    }

    /// Re-solve the active system exactly to remove accumulated drift.
    fn polish(&self, st: &mut State) {
        if st.active.is_empty() {
            st.w.fill(0.0);
            for j in 0..self.n() {
                if !st.free[j] {
                    st.ub[j] = 0.0;
                }
            }
            return;
        }
        st.gram = self.gram_from_scratch(st);
        st.since_refresh = 0;
        let b = DVector::from_iterator(st.active.len(), st.active.iter().map(|&c| self.cons[c].rhs));
        let Some(chol) = nalgebra::Cholesky::new(st.gram.clone()) else { return };
        let mu = chol.solve(&b);
        for j in 0..self.n() {
            let mut s = 0.0;
            for (x, &c) in st.active.iter().enumerate() {
                s += self.coef(c, j) * mu[x];
            }
            if st.free[j] {
                st.w[j] = s;
            } else {
                st.w[j] = 0.0;
                st.ub[j] = -s;
            }
        }
        st.u = mu.iter().copied().collect();
    }

    fn finish(&self, st: State, iterations: usize, result: QpResult) -> QpOutcome {
        let n = self.n();
        let mut w: Vec<f64> = st.w.iter().copied().collect();
        let mut duals = vec![0.0; self.a.ncols()];
        for (x, &c) in st.active.iter().enumerate() {
            duals[self.cons[c].col] += self.cons[c].sign * st.u[x];
        }
        // Stationarity: w = Σ u_i n_i + Σ_Z ub_j e_j.
        let mut stat: f64 = 0.0;
        for j in 0..n {
            let mut s = 0.0;
            for (x, &c) in st.active.iter().enumerate() {
                s += self.coef(c, j) * st.u[x];
            }
            if !st.free[j] {
                s += st.ub[j];
            }
            stat = stat.max((st.w[j] - s).abs());
        }
        let mut primal: f64 = 0.0;
        for c in 0..self.cons.len() {
            let s = self.slack(c, &st.w);
            primal = primal.max(if self.cons[c].equality { s.abs() } else { (-s).max(0.0) });
        }
        let mut dual: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for (x, &c) in st.active.iter().enumerate() {
            if !self.cons[c].equality {
                dual = dual.max((-st.u[x]).max(0.0));
                comp = comp.max((st.u[x] * self.slack(c, &st.w)).abs());
            }
        }
        for j in 0..n {
            if self.nonneg {
                primal = primal.max((-st.w[j]).max(0.0));
            }
            if !st.free[j] {
                dual = dual.max((-st.ub[j]).max(0.0));
                comp = comp.max((st.ub[j] * st.w[j]).abs());
            }
        }
        if self.nonneg {
            for v in w.iter_mut() {
                if *v < 0.0 && *v > -1e-12 {
                    *v = 0.0;
                }
            }
        }
        QpOutcome { weights: w, duals, kkt_residual: stat.max(primal).max(dual).max(comp), iterations, result }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Candidate {
    General(usize),
    Bound(usize),
}

enum Step {
    Added,
    Skipped,
    Infeasible(f64),
    MaxIter,
}
