//! Ground truth for small instances.
//!
//! * [`solve_reference`]: dense bounded-variable primal simplex, two phases,
//!   Bland's rule.
//! * [`vertex_enumeration_optimum`]: brute force over basic points, for
//!   cross-checking the simplex on tiny instances.
//! * [`kkt_residual`] and [`kkt_residual_consensus`]: how far a point and a
//!   set of multipliers are from satisfying the KKT conditions.
//! * [`numeric_minimize`] and [`box_qp_brute_force`]: minimizers used to test
//!   the closed-form updates.

use itertools::Itertools;
use thiserror::Error;

use crate::model::{dot, ModelError, PartitionPlan, ProblemSpec};

/// Largest `n` accepted by [`solve_reference`].
pub const SIMPLEX_CAP: usize = 50;
/// Largest `n` accepted by [`vertex_enumeration_optimum`].
pub const ENUMERATION_CAP: usize = 12;
/// Largest number of candidate systems the enumeration will solve.
pub const ENUMERATION_BUDGET: u64 = 5_000_000;

const SIMPLEX_MAX_PIVOTS: usize = 200_000;
const REDUCED_COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-8;
const FEAS_TOL: f64 = 1e-9;
const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("over oracle cap: n = {n} exceeds {cap}")]
    OverCap { n: usize, cap: usize },
    #[error("enumeration needs {candidates} candidate systems, budget is {budget}")]
    TooLarge { candidates: u64, budget: u64 },
    #[error("simplex did not terminate within {0} pivots")]
    PivotLimit(usize),
    #[error("unbounded direction found on a boxed problem")]
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleStatus {
    Optimal,
    Infeasible,
}

/// Multipliers of `X = Z`, `G <= 0` and `H = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Duals {
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalCertificate {
    pub status: OracleStatus,
    /// Optimal point, or the phase-one end point when infeasible.
    pub x_star: Vec<f64>,
    /// `+inf` when infeasible.
    pub f_star: f64,
    pub kkt_residual: f64,
    pub duals: Option<Duals>,
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting. Returns
/// `None` when a pivot falls below `1e-10` times the largest entry.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Bounded-variable tableau over `[x | slacks | artificials]`.
struct Tableau {
    /// `B^-1 A`, one row per constraint.
    t: Vec<Vec<f64>>,
    /// Original constraint columns, row-major.
    a: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    val: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Tableau {
    fn new(spec: &ProblemSpec) -> Self {
        let (n, p, q) = (spec.n, spec.p(), spec.q());
        let m = p + q;
        let total = n + p + m;
        let mut a = vec![vec![0.0; total]; m];
        let mut rhs = Vec::with_capacity(m);
        for (r, (row, &b)) in spec
            .ineq
            .matrix
            .iter()
            .zip(&spec.ineq.offset)
            .chain(spec.eq.matrix.iter().zip(&spec.eq.offset))
            .enumerate()
        {
            a[r][..n].copy_from_slice(row);
            if r < p {
                a[r][n + r] = 1.0;
            }
            rhs.push(-b);
        }

        let mut lo = spec.lower.clone();
        let mut hi = spec.upper.clone();
        lo.extend(std::iter::repeat_n(0.0, p + m));
        hi.extend(std::iter::repeat_n(f64::INFINITY, p + m));
        let mut val = lo.clone();

        // Nonbasic x at its lower bound, slacks at zero; artificials absorb the
        // residual with a sign that keeps them nonnegative.
        let mut basis = Vec::with_capacity(m);
        for r in 0..m {
            let res = rhs[r] - dot(&a[r][..n], &spec.lower);
            let art = n + p + r;
            a[r][art] = if res >= 0.0 { 1.0 } else { -1.0 };
            val[art] = res.abs();
            basis.push(art);
        }
        // With the artificial columns as +-e_r, B^-1 flips the sign of rows
        // whose artificial coefficient is -1.
        let t = a
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let s = row[n + p + r];
                row.iter().map(|v| v * s).collect()
            })
            .collect();
        let mut is_basic = vec![false; total];
        for &b in &basis {
            is_basic[b] = true;
        }
        Self {
            t,
            a,
            rhs,
            basis,
            is_basic,
            at_upper: vec![false; total],
            val,
            lo,
            hi,
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let piv = self.t[r][j];
        for v in &mut self.t[r] {
            *v /= piv;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }

    /// Minimizes `cost . v` from the current basis. Bland's rule: lowest
    /// eligible index enters; among tied ratios the lowest index leaves, with
    /// the entering variable's own bound flip counted as a candidate.
    fn optimize(&mut self, cost: &[f64]) -> Result<(), OracleError> {
        let total = cost.len();
        for _ in 0..SIMPLEX_MAX_PIVOTS {
            let entering = (0..total).find_map(|j| {
                if self.is_basic[j] || self.hi[j] <= self.lo[j] {
                    return None;
                }
                let d = cost[j]
                    - self
                        .basis
                        .iter()
                        .zip(&self.t)
                        .map(|(&b, row)| cost[b] * row[j])
                        .sum::<f64>();
                match (self.at_upper[j], d) {
                    (false, d) if d < -REDUCED_COST_TOL => Some((j, 1.0)),
                    (true, d) if d > REDUCED_COST_TOL => Some((j, -1.0)),
                    _ => None,
                }
            });
            let Some((j, delta)) = entering else {
                return Ok(());
            };

            let mut step = self.hi[j] - self.lo[j];
            let mut leave: Option<(usize, usize)> = None; // (row, variable)
            let mut best_index = j;
            for (i, row) in self.t.iter().enumerate() {
                let alpha = delta * row[j];
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let limit = if alpha > 0.0 {
                    (self.val[b] - self.lo[b]) / alpha
                } else if self.hi[b].is_finite() {
                    (self.hi[b] - self.val[b]) / -alpha
                } else {
                    continue;
                }
                .max(0.0);
                let tie = (limit - step).abs() <= 1e-12 * (1.0 + step.abs().min(1e12));
                if (limit < step && !tie) || (tie && b < best_index) {
                    step = limit;
                    leave = Some((i, b));
                    best_index = b;
                }
            }
            if !step.is_finite() {
                return Err(OracleError::Unbounded);
            }

            for (i, row) in self.t.iter().enumerate() {
                self.val[self.basis[i]] -= step * delta * row[j];
            }
            self.val[j] += step * delta;
            match leave {
                None => {
                    self.at_upper[j] = !self.at_upper[j];
                    self.val[j] = if self.at_upper[j] { self.hi[j] } else { self.lo[j] };
                }
                Some((r, b)) => {
                    let alpha = delta * self.t[r][j];
                    self.at_upper[b] = alpha < 0.0;
                    self.val[b] = if alpha < 0.0 { self.hi[b] } else { self.lo[b] };
                    self.at_upper[j] = false;
                    self.pivot(r, j);
                }
            }
        }
        Err(OracleError::PivotLimit(SIMPLEX_MAX_PIVOTS))
    }

    fn basis_matrix(&self) -> Vec<Vec<f64>> {
        self.a
            .iter()
            .map(|row| self.basis.iter().map(|&b| row[b]).collect())
            .collect()
    }

    /// Recomputes the basic values from the original columns.
    fn refine(&mut self) {
        let m = self.basis.len();
        let mut r = self.rhs.clone();
        for (j, &basic) in self.is_basic.iter().enumerate() {
            if !basic && self.val[j] != 0.0 {
                for (ri, row) in r.iter_mut().zip(&self.a) {
                    *ri -= row[j] * self.val[j];
                }
            }
        }
        if m == 0 {
            return;
        }
        if let Some(xb) = solve_dense(self.basis_matrix(), r) {
            for (&b, v) in self.basis.iter().zip(xb) {
                self.val[b] = v;
            }
        }
    }

    /// Row prices `pi` with `B^T pi = c_B`.
    fn prices(&self, cost: &[f64]) -> Option<Vec<f64>> {
        let m = self.basis.len();
        let b = self.basis_matrix();
        let bt = (0..m).map(|i| (0..m).map(|k| b[k][i]).collect()).collect();
        solve_dense(bt, self.basis.iter().map(|&j| cost[j]).collect())
    }
}

/// Optimal value and point of a boxed LP.
pub fn solve_reference(spec: &ProblemSpec) -> Result<OptimalCertificate, OracleError> {
    spec.validate()?;
    if spec.n > SIMPLEX_CAP {
        return Err(OracleError::OverCap {
            n: spec.n,
            cap: SIMPLEX_CAP,
        });
    }
    let (n, p, q) = (spec.n, spec.p(), spec.q());
    let m = p + q;
    let total = n + p + m;
    let mut tab = Tableau::new(spec);

    let mut phase1 = vec![0.0; total];
    phase1[n + p..].fill(1.0);
    tab.optimize(&phase1)?;
    let infeasibility: f64 = tab.val[n + p..].iter().sum();
    let scale = tab.rhs.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    if infeasibility > PHASE1_TOL * scale {
        return Ok(OptimalCertificate {
            status: OracleStatus::Infeasible,
            x_star: tab.val[..n].to_vec(),
            f_star: f64::INFINITY,
            kkt_residual: f64::INFINITY,
            duals: None,
        });
    }

    for j in n + p..total {
        tab.hi[j] = 0.0;
        if !tab.is_basic[j] {
            tab.val[j] = 0.0;
            tab.at_upper[j] = false;
        }
    }
    let mut phase2 = vec![0.0; total];
    phase2[..n].copy_from_slice(&spec.cost);
    tab.optimize(&phase2)?;
    tab.refine();

    let x_star = spec.project_box(&tab.val[..n]);
    let duals = tab.prices(&phase2).map(|pi| Duals {
        w: vec![0.0; n],
        mu: pi[..p].iter().map(|v| -v).collect(),
        nu: pi[p..].iter().map(|v| -v).collect(),
    });
    let kkt = duals
        .as_ref()
        .map_or(f64::INFINITY, |d| kkt_residual(spec, &x_star, d));
    Ok(OptimalCertificate {
        status: OracleStatus::Optimal,
        f_star: spec.objective(&x_star),
        x_star,
        kkt_residual: kkt,
        duals,
    })
}

/// Number of square systems [`vertex_enumeration_optimum`] would solve.
pub fn enumeration_candidates(n: usize, p: usize, q: usize) -> u64 {
    if q > n {
        return 0;
    }
    let free = n - q;
    (0..=free.min(p))
        .map(|s| {
            let fixed = free - s;
            binomial(p, s)
                .saturating_mul(binomial(n, fixed))
                .saturating_mul(1u64 << fixed.min(63))
        })
        .fold(0u64, u64::saturating_add)
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    (0..k.min(n - k)).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// Best feasible basic point, found by trying every choice of `n - q` active
/// inequality rows and variable bounds alongside all equality rows. Assumes
/// `A_H` has full row rank. `None` when no basic point is feasible.
pub fn vertex_enumeration_optimum(spec: &ProblemSpec) -> Result<Option<(f64, Vec<f64>)>, OracleError> {
    spec.validate()?;
    let (n, p, q) = (spec.n, spec.p(), spec.q());
    if n > ENUMERATION_CAP {
        return Err(OracleError::OverCap {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    let candidates = enumeration_candidates(n, p, q);
    if candidates > ENUMERATION_BUDGET {
        return Err(OracleError::TooLarge {
            candidates,
            budget: ENUMERATION_BUDGET,
        });
    }
    if q > n {
        return Ok(None);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let free = n - q;
    for s in 0..=free.min(p) {
        for rows in (0..p).combinations(s) {
            for fixed in (0..n).combinations(free - s) {
                for mask in 0u32..(1 << fixed.len()) {
                    let mut a = spec.eq.matrix.clone();
                    let mut b: Vec<f64> = spec.eq.offset.iter().map(|v| -v).collect();
                    for &r in &rows {
                        a.push(spec.ineq.matrix[r].clone());
                        b.push(-spec.ineq.offset[r]);
                    }
                    for (t, &j) in fixed.iter().enumerate() {
                        let mut e = vec![0.0; n];
                        e[j] = 1.0;
                        a.push(e);
                        b.push(if mask >> t & 1 == 1 {
                            spec.upper[j]
                        } else {
                            spec.lower[j]
                        });
                    }
                    let Some(x) = solve_dense(a, b) else { continue };
                    if spec.max_violation(&x) > FEAS_TOL {
                        continue;
                    }
                    let f = spec.objective(&x);
                    if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
                        best = Some((f, x));
                    }
                }
            }
        }
    }
    Ok(best)
}

/// Distance from `v` to the normal cone of `[l, u]` at `x`, per coordinate,
/// as a max-norm.
fn normal_cone_distance(v: &[f64], x: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    v.iter()
        .zip(x)
        .zip(lower.iter().zip(upper))
        .map(|((&v, &x), (&l, &u))| {
            let at_l = x - l <= ACTIVE_TOL;
            let at_u = u - x <= ACTIVE_TOL;
            match (at_l, at_u) {
                (true, true) => 0.0,
                (true, false) => v.max(0.0),
                (false, true) => (-v).max(0.0),
                (false, false) => v.abs(),
            }
        })
        .fold(0.0, f64::max)
}

fn sign_violation(mu: &[f64]) -> f64 {
    mu.iter()
        .filter(|&&m| m < -1e-12)
        .fold(0.0_f64, |acc, &m| acc.max(-m))
}

/// KKT residual of `x` with multipliers `duals` for the undecomposed problem:
/// the max of the stationarity gap `dist(-w - c - A_G^T mu - A_H^T nu,
/// N_box(x))`, the primal violation, `|<mu, G(x)>|` and any negative `mu`.
pub fn kkt_residual(spec: &ProblemSpec, x: &[f64], duals: &Duals) -> f64 {
    let mut v: Vec<f64> = spec.cost.iter().zip(&duals.w).map(|(c, w)| c + w).collect();
    spec.ineq.add_transpose_product(&duals.mu, &mut v);
    spec.eq.add_transpose_product(&duals.nu, &mut v);
    v.iter_mut().for_each(|e| *e = -*e);

    let stationarity = normal_cone_distance(&v, x, &spec.lower, &spec.upper);
    let complementarity = dot(&duals.mu, &spec.ineq.eval(x)).abs();
    stationarity
        .max(spec.max_violation(x))
        .max(complementarity)
        .max(sign_violation(&duals.mu))
}

/// KKT residual of the consensus decomposition at the common point `x`:
/// block `i` carries `(W_i, mu_i, nu_i)` for its own rows, each block's
/// stationarity uses its own terms, and the `W_i` must sum to zero.
pub fn kkt_residual_consensus(spec: &ProblemSpec, plan: &PartitionPlan, x: &[f64], duals: &[Duals]) -> f64 {
    let mut worst = spec.max_violation(x);
    let mut w_sum = vec![0.0; spec.n];
    for (i, d) in duals.iter().enumerate() {
        let (ineq, eq) = plan.block_systems(spec, i);
        let mut v: Vec<f64> = spec.cost.iter().zip(&d.w).map(|(c, w)| c + w).collect();
        ineq.add_transpose_product(&d.mu, &mut v);
        eq.add_transpose_product(&d.nu, &mut v);
        v.iter_mut().for_each(|e| *e = -*e);
        worst = worst
            .max(normal_cone_distance(&v, x, &spec.lower, &spec.upper))
            .max(dot(&d.mu, &ineq.eval(x)).abs())
            .max(sign_violation(&d.mu));
        for (s, w) in w_sum.iter_mut().zip(&d.w) {
            *s += w;
        }
    }
    worst.max(w_sum.iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Minimizer of a unimodal function on `[a, b]` by golden-section search,
/// compared against both endpoints.
pub fn numeric_minimize(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a, b);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    [a, b, mid]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .expect("three candidates")
}

/// Exact minimizer of `1/2 x^T Q x + g^T x` on a box, for symmetric positive
/// definite `Q`, by trying every assignment of each coordinate to its lower
/// bound, its upper bound or free. Exponential in `m`: keep `m` tiny.
pub fn box_qp_brute_force(q: &[Vec<f64>], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let m = g.len();
    let objective = |x: &[f64]| {
        let qx: f64 = (0..m)
            .map(|i| x[i] * (0..m).map(|j| q[i][j] * x[j]).sum::<f64>())
            .sum();
        0.5 * qx + dot(g, x)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let mut kind = Vec::with_capacity(m);
        let mut c = code;
        for _ in 0..m {
            kind.push(c % 3);
            c /= 3;
        }
        let mut x: Vec<f64> = (0..m)
            .map(|j| match kind[j] {
                0 => lower[j],
                1 => upper[j],
                _ => 0.0,
            })
            .collect();
        let free: Vec<usize> = (0..m).filter(|&j| kind[j] == 2).collect();
        if !free.is_empty() {
            let a = free.iter().map(|&i| free.iter().map(|&j| q[i][j]).collect()).collect();
            let b = free
                .iter()
                .map(|&i| {
                    -g[i] - (0..m)
                        .filter(|j| kind[*j] != 2)
                        .map(|j| q[i][j] * x[j])
                        .sum::<f64>()
                })
                .collect();
            let Some(sol) = solve_dense(a, b) else { continue };
            for (&j, v) in free.iter().zip(sol) {
                x[j] = v;
            }
        }
        if (0..m).any(|j| x[j] < lower[j] - 1e-12 || x[j] > upper[j] + 1e-12) {
            continue;
        }
        let f = objective(&x);
        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, x));
        }
    }
    best.expect("a vertex of the box is always a candidate").1
}
