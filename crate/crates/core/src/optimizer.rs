//! Derivative-free constrained optimisation by linear approximations
//! (Powell's COBYLA).
//!
//! The method keeps a simplex of `n + 1` evaluated points, interpolates a
//! linear model of the objective and of every constraint on it, and takes
//! steps that solve the linearised problem inside a trust region of radius
//! `rho`. Steps are accepted against the merit function
//! `Φ(x) = f(x) + μ · max(0, −c_k(x))` with an adaptive penalty `μ`.
//! `rho` shrinks from `rho_begin` to `rho_end`.
//!
//! Constraints are satisfied when `c_k(x) ≥ 0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math::sqrt;

/// Simplex acceptability and step-size constants.
const ALPHA: f64 = 0.25;
const BETA: f64 = 2.1;
const GAMMA: f64 = 0.5;
const DELTA: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptError {
    #[error("start violates the constraints by {violation} (tolerance {tol})")]
    InfeasibleStart { violation: f64, tol: f64 },
    #[error("start has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite function value at {point:?}")]
    NonFinite { point: Vec<f64> },
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptConfig {
    pub rho_begin: f64,
    pub rho_end: f64,
    /// `None` means `500 · D`.
    pub max_evals: Option<usize>,
    pub tol_c: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            rho_begin: 0.5,
            rho_end: 1e-6,
            max_evals: None,
            tol_c: 1e-6,
        }
    }
}

impl OptConfig {
    pub fn budget(&self, dim: usize) -> usize {
        self.max_evals.unwrap_or(500 * dim)
    }

    pub fn validate(&self, dim: usize) -> Result<(), OptError> {
        if !(self.rho_end > 0.0 && self.rho_end <= self.rho_begin && self.rho_begin.is_finite()) {
            return Err(OptError::BadConfig("need 0 < rho_end <= rho_begin"));
        }
        if self.budget(dim) < dim + 2 {
            return Err(OptError::BadConfig("max_evals must be at least D + 2"));
        }
        if !(self.tol_c >= 0.0) {
            return Err(OptError::BadConfig("tol_c must be nonnegative"));
        }
        if dim == 0 {
            return Err(OptError::BadConfig("dimension must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Termination {
    /// The trust region reached `rho_end`.
    RadiusConverged,
    /// The evaluation budget ran out.
    EvalBudget,
    /// No merit improvement over `10·D` evaluations at the final radius, or
    /// the simplex became numerically degenerate.
    Stall,
}

/// A problem for [`minimize_cobyla`]: minimise `f` subject to `c_k ≥ 0`.
pub trait Problem {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Returns `f(x)` and writes `c_k(x)` into `constraints`.
    fn evaluate(&self, x: &[f64], constraints: &mut [f64]) -> f64;
}

/// Closure-backed [`Problem`] with at most one constraint.
pub struct OptProblem<F, C> {
    pub objective: F,
    pub constraint: Option<C>,
    pub dim: usize,
}

impl<F, C> Problem for OptProblem<F, C>
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&[f64]) -> f64,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_constraints(&self) -> usize {
        usize::from(self.constraint.is_some())
    }

    fn evaluate(&self, x: &[f64], constraints: &mut [f64]) -> f64 {
        if let Some(c) = &self.constraint {
            constraints[0] = c(x);
        }
        (self.objective)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptResult {
    pub point: Vec<f64>,
    /// Objective at `point` in the caller's sense (minimised value for
    /// [`minimize_cobyla`], maximised score for [`maximize_constrained`]).
    pub objective: f64,
    /// Smallest constraint value at `point`; `+∞` when unconstrained.
    pub constraint: f64,
    pub evaluations: usize,
    pub termination: Termination,
}

fn min_constraint(cons: &[f64]) -> f64 {
    cons.iter().copied().fold(f64::INFINITY, f64::min)
}

fn violation(cons: &[f64]) -> f64 {
    cons.iter().fold(0.0_f64, |acc, &c| acc.max(-c))
}

enum Stop {
    Done(Termination),
    Fail(OptError),
}

/// A point with its objective, smallest constraint value and violation.
struct Record {
    x: Vec<f64>,
    f: f64,
    min_c: f64,
    viol: f64,
}

/// Evaluation bookkeeping: budget, best feasible point, current pole.
struct Tracker<'p, P: Problem> {
    problem: &'p P,
    budget: usize,
    evals: usize,
    tol_c: f64,
    best: Option<Record>,
    pole: Option<Record>,
    constraints: Vec<f64>,
}

impl<P: Problem> Tracker<'_, P> {
    /// Returns `(f, constraint values, max violation)`.
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>, f64), Stop> {
        if self.evals >= self.budget {
            return Err(Stop::Done(Termination::EvalBudget));
        }
        self.evals += 1;
        let f = self.problem.evaluate(x, &mut self.constraints);
        if !f.is_finite() || self.constraints.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
            return Err(Stop::Fail(OptError::NonFinite { point: x.to_vec() }));
        }
        let cons = self.constraints.clone();
        let viol = violation(&cons);
        if viol <= self.tol_c && self.best.as_ref().is_none_or(|b| f < b.f) {
            self.best = Some(Record {
                x: x.to_vec(),
                f,
                min_c: min_constraint(&cons),
                viol,
            });
        }
        Ok((f, cons, viol))
    }

    /// Final answer: the last pole when it is feasible and no worse than the
    /// start, else the best feasible point evaluated. Preferring the pole
    /// keeps the result from drifting along a curved constraint towards
    /// points that buy objective with violation just under `tol_c`.
    fn answer(self, f_start: f64) -> Record {
        match self.pole {
            Some(p) if p.viol <= self.tol_c && p.f <= f_start => p,
            _ => self.best.expect("start is feasible"),
        }
    }
}

/// Minimises `problem` from a start that is feasible to within `tol_c`.
///
/// The returned point is feasible to within `tol_c` and its objective never
/// exceeds the start's.
pub fn minimize_cobyla<P: Problem>(problem: &P, start: &[f64], config: &OptConfig) -> Result<OptResult, OptError> {
    let n = problem.dim();
    if start.len() != n {
        return Err(OptError::DimensionMismatch {
            expected: n,
            got: start.len(),
        });
    }
    config.validate(n)?;
    let m = problem.num_constraints();
    let mut tracker = Tracker {
        problem,
        budget: config.budget(n),
        evals: 0,
        tol_c: config.tol_c,
        best: None,
        pole: None,
        constraints: vec![0.0; m],
    };
    let (f0, c0, v0) = match tracker.eval(start) {
        Ok(r) => r,
        Err(Stop::Fail(e)) => return Err(e),
        Err(Stop::Done(_)) => unreachable!("budget is at least D + 2"),
    };
    if v0 > config.tol_c {
        return Err(OptError::InfeasibleStart {
            violation: v0,
            tol: config.tol_c,
        });
    }
    let termination = match cobyla_loop(&mut tracker, start, (f0, c0, v0), config) {
        Ok(t) | Err(Stop::Done(t)) => t,
        Err(Stop::Fail(e)) => return Err(e),
    };
    let evaluations = tracker.evals;
    let best = tracker.answer(f0);
    Ok(OptResult {
        point: best.x,
        objective: best.f,
        constraint: best.min_c,
        evaluations,
        termination,
    })
}

/// Simplex state. Column `n` of `sim` is the current best vertex; columns
/// `0..n` are displacements of the other vertices from it. `simi` is the
/// inverse of the displacement block. `datmat` holds, per vertex, the
/// constraint values, then `f`, then the maximum violation.
struct Simplex {
    n: usize,
    m: usize,
    sim: Matrix,
    simi: Matrix,
    datmat: Matrix,
}

impl Simplex {
    fn f_row(&self) -> usize {
        self.m
    }

    fn viol_row(&self) -> usize {
        self.m + 1
    }

    fn merit(&self, j: usize, parmu: f64) -> f64 {
        self.datmat[(self.f_row(), j)] + parmu * self.datmat[(self.viol_row(), j)]
    }

    fn store(&mut self, j: usize, f: f64, cons: &[f64], viol: f64) {
        for (k, &c) in cons.iter().enumerate() {
            self.datmat[(k, j)] = c;
        }
        let (fr, vr) = (self.f_row(), self.viol_row());
        self.datmat[(fr, j)] = f;
        self.datmat[(vr, j)] = viol;
    }

    /// Replaces vertex `jdrop` by `base + dx`, updating the inverse.
    fn replace_vertex(&mut self, jdrop: usize, dx: &[f64]) {
        let n = self.n;
        let mut temp = 0.0;
        for i in 0..n {
            self.sim[(i, jdrop)] = dx[i];
            temp += self.simi[(jdrop, i)] * dx[i];
        }
        for i in 0..n {
            self.simi[(jdrop, i)] /= temp;
        }
        for j in 0..n {
            if j != jdrop {
                let t: f64 = (0..n).map(|i| self.simi[(j, i)] * dx[i]).sum();
                for i in 0..n {
                    let v = self.simi[(jdrop, i)];
                    self.simi[(j, i)] -= t * v;
                }
            }
        }
    }
}

fn cobyla_loop<P: Problem>(
    tracker: &mut Tracker<'_, P>,
    start: &[f64],
    first: (f64, Vec<f64>, f64),
    config: &OptConfig,
) -> Result<Termination, Stop> {
    let n = start.len();
    let m = tracker.problem.num_constraints();
    let mp = m + 1;
    let rho_end = config.rho_end;
    let mut rho = config.rho_begin;
    let mut parmu = 0.0_f64;

    let mut s = Simplex {
        n,
        m,
        sim: Matrix::zeros(n, n + 1),
        simi: Matrix::zeros(n, n),
        datmat: Matrix::zeros(m + 2, n + 1),
    };
    for i in 0..n {
        s.sim[(i, n)] = start[i];
        s.sim[(i, i)] = rho;
        s.simi[(i, i)] = 1.0 / rho;
    }
    s.store(n, first.0, &first.1, first.2);

    // initial simplex: one coordinate step per vertex, keeping the lower f
    // as the pole
    let mut x = start.to_vec();
    for j in 0..n {
        x[j] += rho;
        let (f, cons, viol) = tracker.eval(&x)?;
        s.store(j, f, &cons, viol);
        if s.datmat[(s.f_row(), n)] <= f {
            x[j] = s.sim[(j, n)];
        } else {
            s.sim[(j, n)] = x[j];
            for k in 0..m + 2 {
                let t = s.datmat[(k, j)];
                s.datmat[(k, j)] = s.datmat[(k, n)];
                s.datmat[(k, n)] = t;
            }
            for k in 0..=j {
                s.sim[(j, k)] = -rho;
                let t: f64 = (k..=j).map(|i| -s.simi[(i, k)]).sum();
                s.simi[(j, k)] = t;
            }
        }
    }

    let mut ibrnch = true;
    let mut iflag = true;
    let mut a = Matrix::zeros(n, mp);
    let mut con = vec![0.0; mp];
    let mut vsig = vec![0.0; n];
    let mut veta = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut parsig = 0.0;
    let mut stall = StallWatch::new(10 * n);

    #[derive(Clone, Copy)]
    enum At {
        SelectVertex,
        TrustRegion,
        ReduceRadius,
    }
    let mut at = At::SelectVertex;

    loop {
        match at {
            At::SelectVertex => {
                // pole = vertex with least merit
                let mut phimin = s.merit(n, parmu);
                let mut nbest = n;
                for j in 0..n {
                    let t = s.merit(j, parmu);
                    if t < phimin {
                        nbest = j;
                        phimin = t;
                    } else if t == phimin
                        && parmu == 0.0
                        && s.datmat[(s.viol_row(), j)] < s.datmat[(s.viol_row(), nbest)]
                    {
                        nbest = j;
                    }
                }
                if nbest < n {
                    for i in 0..m + 2 {
                        let t = s.datmat[(i, n)];
                        s.datmat[(i, n)] = s.datmat[(i, nbest)];
                        s.datmat[(i, nbest)] = t;
                    }
                    for i in 0..n {
                        let t = s.sim[(i, nbest)];
                        s.sim[(i, nbest)] = 0.0;
                        s.sim[(i, n)] += t;
                        let mut tempa = 0.0;
                        for k in 0..n {
                            s.sim[(i, k)] -= t;
                            tempa -= s.simi[(k, i)];
                        }
                        s.simi[(nbest, i)] = tempa;
                    }
                }

                tracker.pole = Some(Record {
                    x: (0..n).map(|i| s.sim[(i, n)]).collect(),
                    f: s.datmat[(s.f_row(), n)],
                    min_c: min_constraint(&(0..m).map(|k| s.datmat[(k, n)]).collect::<Vec<_>>()),
                    viol: s.datmat[(s.viol_row(), n)],
                });

                let mut error = 0.0_f64;
                for i in 0..n {
                    for j in 0..n {
                        let mut t = if i == j { -1.0 } else { 0.0 };
                        for k in 0..n {
                            t += s.simi[(i, k)] * s.sim[(k, j)];
                        }
                        error = error.max(t.abs());
                    }
                }
                if !(error <= 0.1) {
                    return Ok(Termination::Stall);
                }

                // linear models; column m is minus the objective gradient
                for k in 0..mp {
                    con[k] = -s.datmat[(k, n)];
                    let w: Vec<f64> = (0..n).map(|j| s.datmat[(k, j)] + con[k]).collect();
                    for i in 0..n {
                        let mut t: f64 = (0..n).map(|j| w[j] * s.simi[(j, i)]).sum();
                        if k == m {
                            t = -t;
                        }
                        a[(i, k)] = t;
                    }
                }

                iflag = true;
                parsig = ALPHA * rho;
                let pareta = BETA * rho;
                for j in 0..n {
                    let wsig: f64 = (0..n).map(|i| s.simi[(j, i)] * s.simi[(j, i)]).sum();
                    let weta: f64 = (0..n).map(|i| s.sim[(i, j)] * s.sim[(i, j)]).sum();
                    vsig[j] = 1.0 / sqrt(wsig);
                    veta[j] = sqrt(weta);
                    if vsig[j] < parsig || veta[j] > pareta {
                        iflag = false;
                    }
                }

                if ibrnch || iflag {
                    at = At::TrustRegion;
                    continue;
                }

                // geometry step: replace the vertex that most spoils the simplex
                let mut jdrop = None;
                let mut temp = pareta;
                for j in 0..n {
                    if veta[j] > temp {
                        jdrop = Some(j);
                        temp = veta[j];
                    }
                }
                if jdrop.is_none() {
                    for j in 0..n {
                        if vsig[j] < temp {
                            jdrop = Some(j);
                            temp = vsig[j];
                        }
                    }
                }
                let jdrop = jdrop.expect("an unacceptable simplex has a vertex to drop");
                let scale = GAMMA * rho * vsig[jdrop];
                for i in 0..n {
                    dx[i] = scale * s.simi[(jdrop, i)];
                }
                let (mut cvmaxp, mut cvmaxm) = (0.0_f64, 0.0_f64);
                let mut sum = 0.0;
                for k in 0..mp {
                    sum = (0..n).map(|i| a[(i, k)] * dx[i]).sum();
                    if k < m {
                        let t = s.datmat[(k, n)];
                        cvmaxp = cvmaxp.max(-sum - t);
                        cvmaxm = cvmaxm.max(sum - t);
                    }
                }
                let dxsign = if parmu * (cvmaxp - cvmaxm) > sum + sum {
                    -1.0
                } else {
                    1.0
                };
                for v in dx.iter_mut() {
                    *v *= dxsign;
                }
                s.replace_vertex(jdrop, &dx);
                let x: Vec<f64> = (0..n).map(|i| s.sim[(i, n)] + dx[i]).collect();
                let (f, cons, viol) = tracker.eval(&x)?;
                s.store(jdrop, f, &cons, viol);
                stall.observe(rho <= rho_end, f + parmu * viol)?;
                ibrnch = true;
                at = At::SelectVertex;
            }

            At::TrustRegion => {
                let ifull = trust_region_lp(n, m, &a, &con, rho, &mut dx);
                if !ifull {
                    let len2: f64 = dx.iter().map(|v| v * v).sum();
                    if len2 < 0.25 * rho * rho {
                        ibrnch = true;
                        at = At::ReduceRadius;
                        continue;
                    }
                }

                // predicted change of f and of the maximum violation
                let mut resnew = 0.0_f64;
                con[m] = 0.0;
                let mut sum = 0.0;
                for k in 0..mp {
                    sum = con[k] - (0..n).map(|i| a[(i, k)] * dx[i]).sum::<f64>();
                    if k < m {
                        resnew = resnew.max(sum);
                    }
                }
                let prerec = s.datmat[(s.viol_row(), n)] - resnew;
                let barmu = if prerec > 0.0 { sum / prerec } else { 0.0 };
                if parmu < 1.5 * barmu {
                    parmu = 2.0 * barmu;
                    let phi = s.merit(n, parmu);
                    let pole_changes = (0..n).any(|j| {
                        let t = s.merit(j, parmu);
                        t < phi
                            || (t == phi
                                && parmu == 0.0
                                && s.datmat[(s.viol_row(), j)] < s.datmat[(s.viol_row(), n)])
                    });
                    if pole_changes {
                        at = At::SelectVertex;
                        continue;
                    }
                }
                let mut prerem = parmu * prerec - sum;

                let x: Vec<f64> = (0..n).map(|i| s.sim[(i, n)] + dx[i]).collect();
                ibrnch = true;
                let (f, cons, resmax) = tracker.eval(&x)?;
                stall.observe(rho <= rho_end, f + parmu * resmax)?;

                let vmold = s.merit(n, parmu);
                let vmnew = f + parmu * resmax;
                let mut trured = vmold - vmnew;
                if parmu == 0.0 && f == s.datmat[(s.f_row(), n)] {
                    prerem = prerec;
                    trured = s.datmat[(s.viol_row(), n)] - resmax;
                }

                // choose the vertex that x(*) replaces
                let mut ratio = if trured <= 0.0 { 1.0 } else { 0.0 };
                let mut jdrop = None;
                let mut sigbar = vec![0.0; n];
                for j in 0..n {
                    let t = (0..n).map(|i| s.simi[(j, i)] * dx[i]).sum::<f64>().abs();
                    if t > ratio {
                        jdrop = Some(j);
                        ratio = t;
                    }
                    sigbar[j] = t * vsig[j];
                }
                let mut edelta = DELTA * rho;
                for j in 0..n {
                    if sigbar[j] >= parsig || sigbar[j] >= vsig[j] {
                        let mut t = veta[j];
                        if trured > 0.0 {
                            t = sqrt((0..n).map(|i| { let d = dx[i] - s.sim[(i, j)]; d * d }).sum::<f64>());
                        }
                        if t > edelta {
                            jdrop = Some(j);
                            edelta = t;
                        }
                    }
                }
                let Some(jdrop) = jdrop else {
                    at = At::ReduceRadius;
                    continue;
                };
                s.replace_vertex(jdrop, &dx);
                s.store(jdrop, f, &cons, resmax);
                at = if trured > 0.0 && trured >= 0.1 * prerem {
                    At::SelectVertex
                } else {
                    At::ReduceRadius
                };
            }

            At::ReduceRadius => {
                if !iflag {
                    ibrnch = false;
                    at = At::SelectVertex;
                    continue;
                }
                if rho <= rho_end {
                    return Ok(Termination::RadiusConverged);
                }
                rho *= 0.5;
                if rho <= 1.5 * rho_end {
                    rho = rho_end;
                }
                if parmu > 0.0 {
                    let mut denom = 0.0_f64;
                    let (mut cmin, mut cmax) = (0.0, 0.0);
                    for k in 0..mp {
                        cmin = s.datmat[(k, n)];
                        cmax = cmin;
                        for i in 0..n {
                            cmin = f64::min(cmin, s.datmat[(k, i)]);
                            cmax = f64::max(cmax, s.datmat[(k, i)]);
                        }
                        if k < m && cmin < 0.5 * cmax {
                            let t = f64::max(cmax, 0.0) - cmin;
                            denom = if denom <= 0.0 { t } else { denom.min(t) };
                        }
                    }
                    if denom == 0.0 {
                        parmu = 0.0;
                    } else if cmax - cmin < parmu * denom {
                        parmu = (cmax - cmin) / denom;
                    }
                }
                at = At::SelectVertex;
            }
        }
    }
}

/// Counts evaluations at the final radius that fail to improve the merit.
struct StallWatch {
    limit: usize,
    best: f64,
    count: usize,
}

impl StallWatch {
    fn new(limit: usize) -> Self {
        Self {
            limit,
            best: f64::INFINITY,
            count: 0,
        }
    }

    fn observe(&mut self, at_min_radius: bool, merit: f64) -> Result<(), Stop> {
        if !at_min_radius {
            return Ok(());
        }
        if merit < self.best {
            self.best = merit;
            self.count = 0;
        } else {
            self.count += 1;
            if self.count >= self.limit {
                return Err(Stop::Done(Termination::Stall));
            }
        }
        Ok(())
    }
}

/// Rounding test: true when `value` is negligible next to `magnitude`.
#[inline]
fn is_rounding_noise(magnitude: f64, value: f64) -> bool {
    let acca = magnitude + 0.1 * value.abs();
    let accb = magnitude + 0.2 * value.abs();
    magnitude >= acca || acca >= accb
}

/// Trust-region step for the linearised problem.
///
/// Stage one finds the shortest `dx` (with `‖dx‖ ≤ rho`) that minimises the
/// greatest violation of `a_kᵀ dx ≥ b_k`, `k < m`. If the trust region
/// still leaves freedom, stage two treats column `m` of `a` (minus the
/// objective gradient) as an extra constraint and reduces the linear
/// objective without increasing any violation. Returns `false` when a
/// degeneracy stops `dx` short of the trust-region boundary.
fn trust_region_lp(n: usize, m: usize, a: &Matrix, b: &[f64], rho: f64, dx: &mut [f64]) -> bool {
    let mut z = Matrix::identity(n);
    let mut zdota = vec![0.0; n];
    let mut iact: Vec<usize> = (0..=m).collect();
    let mut vmultc = vec![0.0; m + 1];
    let mut vmultd = vec![0.0; m + 1];
    let mut sdirn = vec![0.0; n];
    let mut dxnew = vec![0.0; n];
    dx.iter_mut().for_each(|v| *v = 0.0);

    let mut mcon = m;
    let mut nact = 0usize;
    let mut resmax = 0.0_f64;
    let mut icon = 0usize;
    for k in 0..m {
        if b[k] > resmax {
            resmax = b[k];
            icon = k;
        }
    }
    for k in 0..m {
        vmultc[k] = resmax - b[k];
    }

    let col_dot = |z: &Matrix, col: usize, v: &[f64]| -> (f64, f64) {
        let mut sp = 0.0;
        let mut spabs = 0.0;
        for i in 0..n {
            let t = z[(i, col)] * v[i];
            sp += t;
            spabs += t.abs();
        }
        (sp, spabs)
    };

    // Givens rotation moving active constraint `k + 1` into slot `k`.
    let rotate_down = |z: &mut Matrix, zdota: &mut [f64], iact: &mut [usize], vmultc: &mut [f64], k: usize| {
        let kp = k + 1;
        let kw = iact[kp];
        let sp: f64 = (0..n).map(|i| z[(i, k)] * a[(i, kw)]).sum();
        let temp = sqrt(sp * sp + zdota[kp] * zdota[kp]);
        let alpha = zdota[kp] / temp;
        let beta = sp / temp;
        zdota[kp] = alpha * zdota[k];
        zdota[k] = temp;
        for i in 0..n {
            let t = alpha * z[(i, kp)] + beta * z[(i, k)];
            z[(i, kp)] = alpha * z[(i, k)] - beta * z[(i, kp)];
            z[(i, k)] = t;
        }
        iact[k] = kw;
        vmultc[k] = vmultc[kp];
    };

    // moves active slot `from` to the end of the active list
    let move_to_end = |z: &mut Matrix, zdota: &mut [f64], iact: &mut [usize], vmultc: &mut [f64], from: usize, nact: usize| {
        if from + 1 < nact {
            let isave = iact[from];
            let vsave = vmultc[from];
            let mut k = from;
            while k + 1 < nact {
                rotate_down(z, zdota, iact, vmultc, k);
                k += 1;
            }
            iact[k] = isave;
            vmultc[k] = vsave;
        }
    };

    enum Next {
        NewStage,
        Stuck,
        Full,
    }

    let mut next = if resmax == 0.0 { Next::NewStage } else { Next::Stuck };
    let mut first = true;

    loop {
        if !first || matches!(next, Next::NewStage) {
            match next {
                Next::Full => return true,
                Next::Stuck if mcon > m => return false,
                _ => {
                    // switch to stage two
                    mcon = m + 1;
                    icon = m;
                    iact[m] = m;
                    vmultc[m] = 0.0;
                }
            }
        }
        first = false;

        let mut optold = 0.0;
        let mut icount = 0u32;
        let mut nactx = 0usize;
        next = 'iter: loop {
            let optnew = if mcon == m {
                resmax
            } else {
                -(0..n).map(|i| dx[i] * a[(i, m)]).sum::<f64>()
            };
            if icount == 0 || optnew < optold {
                optold = optnew;
                nactx = nact;
                icount = 3;
            } else if nact > nactx {
                nactx = nact;
                icount = 3;
            } else {
                icount -= 1;
                if icount == 0 {
                    break 'iter Next::Stuck;
                }
            }

            if icon >= nact {
                // add constraint iact[icon] to the active set
                let kk = iact[icon];
                for i in 0..n {
                    dxnew[i] = a[(i, kk)];
                }
                let mut tot = 0.0;
                for k in (nact..n).rev() {
                    let (mut sp, spabs) = col_dot(&z, k, &dxnew);
                    if is_rounding_noise(spabs, sp) {
                        sp = 0.0;
                    }
                    if tot == 0.0 {
                        tot = sp;
                    } else {
                        let kp = k + 1;
                        let temp = sqrt(sp * sp + tot * tot);
                        let alpha = sp / temp;
                        let beta = tot / temp;
                        tot = temp;
                        for i in 0..n {
                            let t = alpha * z[(i, k)] + beta * z[(i, kp)];
                            z[(i, kp)] = alpha * z[(i, kp)] - beta * z[(i, k)];
                            z[(i, k)] = t;
                        }
                    }
                }

                if tot != 0.0 {
                    nact += 1;
                    zdota[nact - 1] = tot;
                    vmultc[icon] = vmultc[nact - 1];
                    vmultc[nact - 1] = 0.0;
                } else {
                    // the new gradient is a combination of active ones:
                    // drop the active constraint whose multiplier hits zero first
                    let mut ratio = -1.0;
                    let mut iout = 0usize;
                    for k in (0..nact).rev() {
                        let (zdotv, zdvabs) = col_dot(&z, k, &dxnew);
                        if !is_rounding_noise(zdvabs, zdotv) {
                            let temp = zdotv / zdota[k];
                            if temp > 0.0 && iact[k] < m {
                                let tempa = vmultc[k] / temp;
                                if ratio < 0.0 || tempa < ratio {
                                    ratio = tempa;
                                    iout = k;
                                }
                            }
                            if k >= 1 {
                                let kw = iact[k];
                                for i in 0..n {
                                    dxnew[i] -= temp * a[(i, kw)];
                                }
                            }
                            vmultd[k] = temp;
                        } else {
                            vmultd[k] = 0.0;
                        }
                    }
                    if ratio < 0.0 {
                        break 'iter Next::Stuck;
                    }
                    for k in 0..nact {
                        vmultc[k] = (vmultc[k] - ratio * vmultd[k]).max(0.0);
                    }
                    move_to_end(&mut z, &mut zdota, &mut iact, &mut vmultc, iout, nact);
                    let temp: f64 = (0..n).map(|i| z[(i, nact - 1)] * a[(i, kk)]).sum();
                    if temp == 0.0 {
                        break 'iter Next::Stuck;
                    }
                    zdota[nact - 1] = temp;
                    vmultc[icon] = 0.0;
                    vmultc[nact - 1] = ratio;
                }

                iact[icon] = iact[nact - 1];
                iact[nact - 1] = kk;
                if mcon > m && kk != m && nact >= 2 {
                    // keep the objective as the last active constraint
                    let k = nact - 2;
                    let last = nact - 1;
                    let sp: f64 = (0..n).map(|i| z[(i, k)] * a[(i, kk)]).sum();
                    let temp = sqrt(sp * sp + zdota[last] * zdota[last]);
                    let alpha = zdota[last] / temp;
                    let beta = sp / temp;
                    zdota[last] = alpha * zdota[k];
                    zdota[k] = temp;
                    for i in 0..n {
                        let t = alpha * z[(i, last)] + beta * z[(i, k)];
                        z[(i, last)] = alpha * z[(i, k)] - beta * z[(i, last)];
                        z[(i, k)] = t;
                    }
                    iact[last] = iact[k];
                    iact[k] = kk;
                    vmultc.swap(k, last);
                }

                if mcon == m {
                    let kk = iact[nact - 1];
                    let t: f64 = (0..n).map(|i| sdirn[i] * a[(i, kk)]).sum();
                    let t = (t - 1.0) / zdota[nact - 1];
                    for i in 0..n {
                        sdirn[i] -= t * z[(i, nact - 1)];
                    }
                }
            } else {
                // delete constraint iact[icon] from the active set
                move_to_end(&mut z, &mut zdota, &mut iact, &mut vmultc, icon, nact);
                nact -= 1;
                if mcon == m {
                    let t: f64 = (0..n).map(|i| sdirn[i] * z[(i, nact)]).sum();
                    for i in 0..n {
                        sdirn[i] -= t * z[(i, nact)];
                    }
                }
            }

            if mcon > m {
                let t = 1.0 / zdota[nact - 1];
                for i in 0..n {
                    sdirn[i] = t * z[(i, nact - 1)];
                }
            }

            // step to the trust-region boundary, or the step that zeroes resmax
            let mut dd = rho * rho;
            let mut sd = 0.0;
            let mut ss = 0.0;
            for i in 0..n {
                if dx[i].abs() >= 1e-6 * rho {
                    dd -= dx[i] * dx[i];
                }
                sd += dx[i] * sdirn[i];
                ss += sdirn[i] * sdirn[i];
            }
            if dd <= 0.0 {
                break 'iter Next::Stuck;
            }
            let mut temp = sqrt(ss * dd);
            if sd.abs() >= 1e-6 * temp {
                temp = sqrt(ss * dd + sd * sd);
            }
            let stpful = dd / (temp + sd);
            let mut step = stpful;
            if mcon == m {
                if is_rounding_noise(step, resmax) {
                    break 'iter Next::NewStage;
                }
                step = step.min(resmax);
            }

            for i in 0..n {
                dxnew[i] = dx[i] + step * sdirn[i];
            }
            let mut resold = 0.0;
            if mcon == m {
                resold = resmax;
                resmax = 0.0;
                for k in 0..nact {
                    let kk = iact[k];
                    let t = b[kk] - (0..n).map(|i| a[(i, kk)] * dxnew[i]).sum::<f64>();
                    resmax = resmax.max(t);
                }
            }

            // multipliers the active constraints would have at dxnew
            for k in (0..nact).rev() {
                let (mut zdotw, zdwabs) = col_dot(&z, k, &dxnew);
                if is_rounding_noise(zdwabs, zdotw) {
                    zdotw = 0.0;
                }
                vmultd[k] = zdotw / zdota[k];
                if k >= 1 {
                    let kk = iact[k];
                    for i in 0..n {
                        dxnew[i] -= vmultd[k] * a[(i, kk)];
                    }
                }
            }
            if mcon > m {
                vmultd[nact - 1] = vmultd[nact - 1].max(0.0);
            }

            // residuals of the inactive constraints at dxnew
            for i in 0..n {
                dxnew[i] = dx[i] + step * sdirn[i];
            }
            for k in nact..mcon {
                let kk = iact[k];
                let mut sum = resmax - b[kk];
                let mut sumabs = resmax + b[kk].abs();
                for i in 0..n {
                    let t = a[(i, kk)] * dxnew[i];
                    sum += t;
                    sumabs += t.abs();
                }
                if is_rounding_noise(sumabs, sum) {
                    sum = 0.0;
                }
                vmultd[k] = sum;
            }

            // fraction of the step that keeps every multiplier nonnegative
            let mut ratio = 1.0;
            let mut blocking = None;
            for k in 0..mcon {
                if vmultd[k] < 0.0 {
                    let t = vmultc[k] / (vmultc[k] - vmultd[k]);
                    if t < ratio {
                        ratio = t;
                        blocking = Some(k);
                    }
                }
            }
            let keep = 1.0 - ratio;
            for i in 0..n {
                dx[i] = keep * dx[i] + ratio * dxnew[i];
            }
            for k in 0..mcon {
                vmultc[k] = (keep * vmultc[k] + ratio * vmultd[k]).max(0.0);
            }
            if mcon == m {
                resmax = resold + ratio * (resmax - resold);
            }

            if let Some(k) = blocking {
                icon = k;
                continue 'iter;
            }
            if step == stpful {
                break 'iter Next::Full;
            }
            break 'iter Next::NewStage;
        };
    }
}

/// Maximises `score` subject to `density(g) ≥ eta` (within `tol_c`).
///
/// `eta = −∞` leaves the problem unconstrained. The result's `objective`
/// is the score at the returned point and `constraint` is
/// `density(point) − eta`.
pub fn maximize_constrained<S, D>(
    score: S,
    density: D,
    eta: f64,
    start: &[f64],
    config: &OptConfig,
) -> Result<OptResult, OptError>
where
    S: Fn(&[f64]) -> f64,
    D: Fn(&[f64]) -> f64,
{
    let problem = OptProblem {
        objective: |g: &[f64]| -score(g),
        constraint: (eta != f64::NEG_INFINITY).then_some(|g: &[f64]| density(g) - eta),
        dim: start.len(),
    };
    let mut result = minimize_cobyla(&problem, start, config)?;
    result.objective = -result.objective;
    Ok(result)
}
