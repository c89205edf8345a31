//! Finite-dimensional testbed for evolution problems with an inhomogeneous
//! side constraint, their constrained Runge-Kutta discretization, and the
//! convergence-rate instrumentation built on top of it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opcalc::{self, CqContext, StageSequence};
use crate::report::{ConvergenceReport, LevelError, ReferenceCheck};
use crate::tableau::{self, ButcherTableau};

pub type TimeFunction = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Relative tolerance for the structural invariants of the operator triple.
const OPERATOR_TOL: f64 = 1e-12;
/// Below this level an error is considered to sit on the roundoff floor.
pub const ERROR_FLOOR: f64 = 1e-11;
/// Reference runs use this method at an eighth of the finest step size.
pub const REFERENCE_METHOD: &str = "radau_iia_5";

/// The operator triple of a constrained evolution problem: an extended
/// generator that ignores the constraint, the constraint map, and a lifting
/// (right inverse of the constraint with range in the kernel of I - A).
///
/// The kernel of the constraint is described by a coordinate index set:
/// the constraint matrix must vanish on the free columns.
#[derive(Clone, Debug)]
pub struct ConstrainedOperator {
    pub dim: usize,
    pub a_star: DMatrix<f64>,
    pub constraint: DMatrix<f64>,
    pub lifting: DMatrix<f64>,
    pub free_indices: Vec<usize>,
    /// Weight for the discrete L2-like error norm (sqrt of the grid
    /// spacing on grid testbeds).
    pub norm_weight: f64,
}

impl ConstrainedOperator {
    pub fn new(
        a_star: DMatrix<f64>,
        constraint: DMatrix<f64>,
        lifting: DMatrix<f64>,
        free_indices: Vec<usize>,
    ) -> Result<Self> {
        let d = a_star.nrows();
        let dc = constraint.nrows();
        if a_star.ncols() != d
            || constraint.ncols() != d
            || lifting.nrows() != d
            || lifting.ncols() != dc
        {
            return Err(Error::InvalidConfig(
                "inconsistent operator dimensions".into(),
            ));
        }
        if free_indices.iter().any(|&i| i >= d) || free_indices.len() + dc != d {
            return Err(Error::InvalidConfig(
                "free index set must complement the constrained slots".into(),
            ));
        }
        let scale = a_star.amax().max(1.0);
        // constraint vanishes on the kernel coordinates
        for &j in &free_indices {
            for i in 0..dc {
                if constraint[(i, j)].abs() > 1e-14 * constraint.amax().max(1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "constraint row {i} acts on free coordinate {j}"
                    )));
                }
            }
        }
        if dc > 0 {
            // B E = identity on the constraint space
            let be = &constraint * &lifting;
            let defect = (&be - DMatrix::<f64>::identity(dc, dc)).amax();
            if defect > OPERATOR_TOL {
                return Err(Error::InvalidConfig(format!(
                    "lifting is not a right inverse of the constraint (defect {defect:.3e})"
                )));
            }
            // range of the lifting sits in ker(I - A)
            let defect = (&lifting - &a_star * &lifting).amax();
            if defect > OPERATOR_TOL * scale {
                return Err(Error::InvalidConfig(format!(
                    "lifting range leaves ker(I - A) (defect {defect:.3e})"
                )));
            }
        }
        Ok(Self {
            dim: d,
            a_star,
            constraint,
            lifting,
            free_indices,
            norm_weight: 1.0 / (d as f64).sqrt(),
        })
    }

    pub fn with_norm_weight(mut self, w: f64) -> Self {
        self.norm_weight = w;
        self
    }

    /// An operator without constraints (the plain ODE case).
    pub fn unconstrained(a: DMatrix<f64>) -> Self {
        let d = a.nrows();
        Self {
            dim: d,
            a_star: a,
            constraint: DMatrix::zeros(0, d),
            lifting: DMatrix::zeros(d, 0),
            free_indices: (0..d).collect(),
            norm_weight: 1.0 / (d as f64).sqrt(),
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.constraint.nrows()
    }

    /// The generator restricted to the kernel coordinates.
    pub fn restricted(&self) -> DMatrix<f64> {
        let f = &self.free_indices;
        DMatrix::from_fn(f.len(), f.len(), |i, j| self.a_star[(f[i], f[j])])
    }

    /// Largest eigenvalue of the symmetric part of the restricted
    /// generator; nonpositive values certify dissipativity.
    pub fn dissipativity_defect(&self) -> f64 {
        let a = self.restricted();
        let sym = 0.5 * (&a + a.transpose());
        let eig = nalgebra::SymmetricEigen::new(sym);
        eig.eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// An evolution problem `u' = A u + F(t)`, `B u = Xi(t)`, `u(0) = u0` on a
/// finite-dimensional state space.
#[derive(Clone)]
pub struct EvolutionProblem {
    pub op: ConstrainedOperator,
    pub volume_data: TimeFunction,
    pub constraint_data: TimeFunction,
    pub initial: DVector<f64>,
    pub t_final: f64,
}

impl EvolutionProblem {
    pub fn new(
        op: ConstrainedOperator,
        volume_data: TimeFunction,
        constraint_data: TimeFunction,
        initial: DVector<f64>,
        t_final: f64,
    ) -> Result<Self> {
        if initial.len() != op.dim {
            return Err(Error::InvalidConfig(
                "initial state dimension mismatch".into(),
            ));
        }
        if op.n_constraints() > 0 && initial.amax() > 0.0 {
            let violation = (&op.constraint * &initial).amax();
            if violation > OPERATOR_TOL * initial.amax().max(1.0) {
                return Err(Error::InvalidConfig(format!(
                    "nonzero initial state violates the constraint by {violation:.3e}"
                )));
            }
        }
        Ok(Self {
            op,
            volume_data,
            constraint_data,
            initial,
            t_final,
        })
    }
}

/// One constrained Runge-Kutta run: stage systems are solved on the free
/// coordinates after homogenizing the constraint with the lifting, so the
/// constrained rows of every stage hold the sampled constraint data
/// exactly. Steps are advanced by `u_{n+1} = r_inf u_n + b^T Q^-1 U_n`.
pub fn rk_step_constrained(
    prob: &EvolutionProblem,
    t: &ButcherTableau,
    k: f64,
    n_steps: usize,
) -> Result<StageSequence> {
    if !(k > 0.0) || n_steps == 0 {
        return Err(Error::InvalidConfig(
            "need k > 0 and at least one step".into(),
        ));
    }
    let op = &prob.op;
    let m = t.stages();
    let d = op.dim;
    let dc = op.n_constraints();
    let free = &op.free_indices;
    let df = free.len();

    // (I - k Q (x) A) on the free coordinates, factored once per run.
    let a_ff = op.restricted();
    let mut system = DMatrix::zeros(m * df, m * df);
    for s in 0..m {
        for j in 0..m {
            let block = -k * t.matrix()[(s, j)] * &a_ff;
            system.view_mut((s * df, j * df), (df, df)).copy_from(&block);
        }
    }
    for i in 0..m * df {
        system[(i, i)] += 1.0;
    }
    let lu = system.lu();
    if !lu.is_invertible() {
        return Err(Error::SingularStageSystem { k });
    }

    let mut u = prob.initial.clone();
    let mut stages = Vec::with_capacity(n_steps);
    let mut steps = Vec::with_capacity(n_steps + 1);
    steps.push(u.clone());
    let mut rhs = DVector::zeros(m * df);
    for n in 0..n_steps {
        let t_n = n as f64 * k;
        let mut lifted: Vec<DVector<f64>> = Vec::with_capacity(m);
        let mut volume: Vec<DVector<f64>> = Vec::with_capacity(m);
        for s in 0..m {
            let ts = t_n + k * t.nodes()[s];
            let y = if dc > 0 {
                &op.lifting * (prob.constraint_data)(ts)
            } else {
                DVector::zeros(d)
            };
            lifted.push(y);
            volume.push((prob.volume_data)(ts));
        }
        for s in 0..m {
            // full-state right-hand side 1 u - Y + k Q (Y + F), restricted
            let mut full = &u - &lifted[s];
            for j in 0..m {
                full += k * t.matrix()[(s, j)] * (&lifted[j] + &volume[j]);
            }
            for (r, &idx) in free.iter().enumerate() {
                rhs[s * df + r] = full[idx];
            }
        }
        let z = lu.solve(&rhs).ok_or(Error::SingularStageSystem { k })?;
        let mut stage = DMatrix::zeros(m, d);
        for s in 0..m {
            let mut us = lifted[s].clone();
            for (r, &idx) in free.iter().enumerate() {
                us[idx] += z[s * df + r];
            }
            stage.row_mut(s).copy_from(&us.transpose());
        }
        let mut next = t.r_infinity() * &u;
        for s in 0..m {
            next += t.weights_inv()[s] * stage.row(s).transpose();
        }
        stages.push(stage);
        u = next;
        steps.push(u.clone());
    }
    StageSequence::new(m, d, stages, steps)
}

/// Recompute the step sequence from the stages with the classic update
/// `u_{n+1} = u_n + k b^T (A U_n + F(t_n + k c))`. On coordinates where the
/// stage relation holds this coincides with the stepper's own update; on
/// constrained slots the two differ by the stage defect of the constraint
/// data.
pub fn classic_step_update(
    prob: &EvolutionProblem,
    t: &ButcherTableau,
    k: f64,
    seq: &StageSequence,
) -> Vec<DVector<f64>> {
    let m = t.stages();
    let mut out = Vec::with_capacity(seq.n_steps() + 1);
    let mut u = seq.step_value(0).clone();
    out.push(u.clone());
    for n in 0..seq.n_steps() {
        let t_n = n as f64 * k;
        let mut next = u.clone();
        for s in 0..m {
            let us = seq.stage(n).row(s).transpose();
            let fs = (prob.volume_data)(t_n + k * t.nodes()[s]);
            next += k * t.weights()[s] * (&prob.op.a_star * us + fs);
        }
        u = next;
        out.push(u.clone());
    }
    out
}

/// Finite-difference surrogate of heat conduction on [0, 1]: interior
/// nodes carry the 3-point Laplacian, two extra slots carry the boundary
/// values themselves (so the lifted states sit in ker(I - A)), the
/// constraint extracts the boundary slots, and the lifting solves
/// `(I - Lap_h) v = 0` with the given boundary values.
pub fn heat_fd_testbed(n_grid: usize) -> Result<ConstrainedOperator> {
    if n_grid < 3 {
        return Err(Error::InvalidConfig(
            "need at least 3 interior nodes".into(),
        ));
    }
    let d = n_grid + 2;
    let h = 1.0 / (n_grid as f64 + 1.0);
    let ih2 = 1.0 / (h * h);

    let mut a = DMatrix::zeros(d, d);
    a[(0, 0)] = 1.0;
    a[(d - 1, d - 1)] = 1.0;
    for i in 1..=n_grid {
        a[(i, i - 1)] = ih2;
        a[(i, i)] = -2.0 * ih2;
        a[(i, i + 1)] = ih2;
    }

    let mut b = DMatrix::zeros(2, d);
    b[(0, 0)] = 1.0;
    b[(1, d - 1)] = 1.0;

    // lifting: (1 + 2/h^2) v_i - (v_{i-1} + v_{i+1})/h^2 = 0 on the interior
    let mut tri = DMatrix::zeros(n_grid, n_grid);
    for i in 0..n_grid {
        tri[(i, i)] = 1.0 + 2.0 * ih2;
        if i > 0 {
            tri[(i, i - 1)] = -ih2;
        }
        if i + 1 < n_grid {
            tri[(i, i + 1)] = -ih2;
        }
    }
    let lu = tri.lu();
    let mut e = DMatrix::zeros(d, 2);
    e[(0, 0)] = 1.0;
    e[(d - 1, 1)] = 1.0;
    for col in 0..2 {
        let mut rhs = DVector::zeros(n_grid);
        if col == 0 {
            rhs[0] = ih2;
        } else {
            rhs[n_grid - 1] = ih2;
        }
        let v = lu.solve(&rhs).ok_or(Error::Singular { pivot: 0.0 })?;
        for i in 0..n_grid {
            e[(i + 1, col)] = v[i];
        }
    }

    let free = (1..=n_grid).collect();
    Ok(ConstrainedOperator::new(a, b, e, free)?.with_norm_weight(h.sqrt()))
}

/// Data profile with nine vanishing derivatives at zero.
pub fn ramp(t: f64) -> f64 {
    t.powi(9) * (-t).exp()
}

pub fn ramp_dot(t: f64) -> f64 {
    (9.0 * t.powi(8) - t.powi(9)) * (-t).exp()
}

/// Heat testbed with a manufactured solution
/// `u(x, t) = (sin(pi x) + x^2) eta(t)`, `eta(t) = t^9 exp(-t)`; the volume
/// and constraint data are derived from the discrete operator, so the grid
/// samples of `u` solve the surrogate problem exactly.
pub fn manufactured_heat_problem(n_grid: usize, t_final: f64) -> Result<EvolutionProblem> {
    let op = heat_fd_testbed(n_grid)?;
    let d = op.dim;
    let h = 1.0 / (n_grid as f64 + 1.0);
    // discrete eigenvalue: Lap_h sin(pi x) = -mu_h sin(pi x)
    let mu_h = 2.0 * (1.0 - (std::f64::consts::PI * h).cos()) / (h * h);
    let xs: Vec<f64> = (0..d).map(|i| i as f64 * h).collect();
    let volume = move |t: f64| {
        let (eta, eta_dot) = (ramp(t), ramp_dot(t));
        DVector::from_fn(d, |i, _| {
            if i == 0 {
                // u(0, t) = 0 identically
                0.0
            } else if i == d - 1 {
                eta_dot - eta
            } else {
                let s = (std::f64::consts::PI * xs[i]).sin();
                let x2 = xs[i] * xs[i];
                s * (eta_dot + mu_h * eta) + x2 * eta_dot - 2.0 * eta
            }
        })
    };
    let boundary = move |t: f64| DVector::from_vec(vec![0.0, ramp(t)]);
    EvolutionProblem::new(
        op,
        Arc::new(volume),
        Arc::new(boundary),
        DVector::zeros(d),
        t_final,
    )
}

/// Exact grid samples of the manufactured solution at time `t`.
pub fn manufactured_heat_solution(n_grid: usize, t: f64) -> DVector<f64> {
    let d = n_grid + 2;
    let h = 1.0 / (n_grid as f64 + 1.0);
    let eta = ramp(t);
    DVector::from_fn(d, |i, _| {
        let x = i as f64 * h;
        ((std::f64::consts::PI * x).sin() + x * x) * eta
    })
}

/// Heat testbed driven purely through the boundary (volume data zero).
pub fn boundary_driven_heat_problem(n_grid: usize, t_final: f64) -> Result<EvolutionProblem> {
    let op = heat_fd_testbed(n_grid)?;
    let d = op.dim;
    let boundary = |t: f64| DVector::from_vec(vec![ramp(t), t.powi(9) * (-2.0 * t).exp()]);
    EvolutionProblem::new(
        op,
        Arc::new(move |_| DVector::zeros(d)),
        Arc::new(boundary),
        DVector::zeros(d),
        t_final,
    )
}

/// Which sequence of a run a convergence study tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    /// The step values themselves.
    Step,
    /// Discrete antiderivative, reconstructed at the steps.
    Integrated,
    /// Discrete derivative, last stage of the previous step.
    Differentiated,
    /// The extended generator applied to the steps, recovered as the
    /// differentiated quantity minus the volume data.
    Strong,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [
        Quantity::Step,
        Quantity::Integrated,
        Quantity::Differentiated,
        Quantity::Strong,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Quantity::Step => "step",
            Quantity::Integrated => "integrated",
            Quantity::Differentiated => "differentiated",
            Quantity::Strong => "strong",
        }
    }

    pub fn needs_stiffly_accurate(&self) -> bool {
        matches!(self, Quantity::Differentiated | Quantity::Strong)
    }
}

impl std::str::FromStr for Quantity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(Quantity::Step),
            "integrated" => Ok(Quantity::Integrated),
            "differentiated" => Ok(Quantity::Differentiated),
            "strong" => Ok(Quantity::Strong),
            other => Err(Error::InvalidConfig(format!(
                "unknown quantity `{other}` (expected step, integrated, differentiated or strong)"
            ))),
        }
    }
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The tracked sequence of one run, indexed by step. Entry 0 is a zero
/// vector for the differentiated and strong quantities (they start at
/// n = 1, and index 0 is skipped in comparisons in either case since every
/// tracked quantity starts at zero).
fn tracked_sequence(
    prob: &EvolutionProblem,
    t: &ButcherTableau,
    k: f64,
    n_steps: usize,
    quantity: Quantity,
) -> Result<Vec<DVector<f64>>> {
    if quantity.needs_stiffly_accurate() && !t.is_stiffly_accurate(tableau::ALGEBRAIC_TOL) {
        return Err(Error::NotStifflyAccurate(t.name().to_string()));
    }
    let seq = rk_step_constrained(prob, t, k, n_steps)?;
    let d = prob.op.dim;
    let m = t.stages();
    match quantity {
        Quantity::Step => Ok(seq.steps().to_vec()),
        Quantity::Integrated => {
            let ctx = CqContext::new(t.clone(), k, n_steps)?;
            let x = opcalc::discrete_antiderivative(&ctx, &seq);
            Ok(x.steps().to_vec())
        }
        Quantity::Differentiated | Quantity::Strong => {
            let ctx = CqContext::new(t.clone(), k, n_steps)?;
            let v = opcalc::discrete_derivative(&ctx, &seq);
            let mut out = Vec::with_capacity(n_steps + 1);
            out.push(DVector::zeros(d));
            for n in 1..=n_steps {
                let mut vn = v.stage(n - 1).row(m - 1).transpose();
                if quantity == Quantity::Strong {
                    vn -= (prob.volume_data)(n as f64 * k);
                }
                out.push(vn);
            }
            Ok(out)
        }
    }
}

fn max_weighted_diff(
    weight: f64,
    coarse: &[DVector<f64>],
    fine: &[DVector<f64>],
    stride: usize,
) -> f64 {
    let mut err: f64 = 0.0;
    for (n, c) in coarse.iter().enumerate().skip(1) {
        let f = &fine[n * stride];
        err = err.max(weight * (c - f).norm());
    }
    err
}

/// Number of steps for a step size that divides the final time.
fn steps_for(t_final: f64, k: f64) -> Result<usize> {
    let n = (t_final / k).round();
    if n < 1.0 || ((n * k - t_final) / t_final).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "step size {k} does not divide the final time {t_final}"
        )));
    }
    Ok(n as usize)
}

/// Measure the empirical convergence order of a tracked quantity against a
/// fine reference run (the reference method at an eighth of the finest
/// step), including a consistency check of the reference itself.
pub fn measure_theorem_rates(
    prob: &EvolutionProblem,
    t: &ButcherTableau,
    ks: &[f64],
    quantity: Quantity,
) -> Result<ConvergenceReport> {
    if ks.len() < 2 {
        return Err(Error::InvalidConfig("need at least two step sizes".into()));
    }
    if ks.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig(
            "step sizes must decrease strictly".into(),
        ));
    }
    let t_final = prob.t_final;
    let weight = prob.op.norm_weight;
    let k_min = *ks.last().unwrap();
    let k_ref = k_min / 8.0;
    let n_ref = steps_for(t_final, k_ref)?;
    let reference_tableau = tableau::builtin_tableau(REFERENCE_METHOD)?;
    let q_ref = tracked_sequence(prob, &reference_tableau, k_ref, n_ref, quantity)?;
    let q_ref2 = tracked_sequence(prob, &reference_tableau, 2.0 * k_ref, n_ref / 2, quantity)?;

    let levels: Vec<LevelError> = ks
        .par_iter()
        .map(|&k| -> Result<LevelError> {
            let n = steps_for(t_final, k)?;
            let stride = (k / k_ref).round() as usize;
            if (stride as f64 * k_ref - k).abs() > 1e-9 * k {
                return Err(Error::InvalidConfig(format!(
                    "step size {k} is not a multiple of the reference step {k_ref}"
                )));
            }
            let q = tracked_sequence(prob, t, k, n, quantity)?;
            let error = max_weighted_diff(weight, &q, &q_ref, stride);
            Ok(LevelError {
                k,
                error,
                at_floor: error < ERROR_FLOOR,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ref_discrepancy = max_weighted_diff(weight, &q_ref2, &q_ref, 2);
    let finest = levels.last().unwrap().error;
    let reference = ReferenceCheck {
        k_ref,
        discrepancy: ref_discrepancy,
        required: finest / 100.0,
        pass: ref_discrepancy <= finest / 100.0,
    };
    let mut report = ConvergenceReport::new(t.name(), quantity.as_str(), t_final, levels);
    report.valid = reference.pass;
    report.reference = Some(reference);
    Ok(report)
}

/// Stiff-regime study: the grid is refined together with the step size
/// (`n_grid = ceil(1/k)`), so every level gets its own surrogate problem
/// and its own reference run at `k/8`.
pub fn measure_stiff_rates(
    t: &ButcherTableau,
    t_final: f64,
    levels: &[usize],
    quantity: Quantity,
) -> Result<ConvergenceReport> {
    if levels.len() < 2 || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "need at least two strictly increasing levels".into(),
        ));
    }
    let reference_tableau = tableau::builtin_tableau(REFERENCE_METHOD)?;
    let results: Vec<(LevelError, ReferenceCheck)> = levels
        .par_iter()
        .map(|&level| -> Result<(LevelError, ReferenceCheck)> {
            let k = t_final / level as f64;
            let n = level;
            let n_grid = (1.0 / k).ceil() as usize;
            let prob = manufactured_heat_problem(n_grid.max(3), t_final)?;
            let weight = prob.op.norm_weight;
            let q = tracked_sequence(&prob, t, k, n, quantity)?;
            let k_ref = k / 8.0;
            let q_ref = tracked_sequence(&prob, &reference_tableau, k_ref, 8 * n, quantity)?;
            let q_ref2 =
                tracked_sequence(&prob, &reference_tableau, 2.0 * k_ref, 4 * n, quantity)?;
            let error = max_weighted_diff(weight, &q, &q_ref, 8);
            let discrepancy = max_weighted_diff(weight, &q_ref2, &q_ref, 2);
            Ok((
                LevelError {
                    k,
                    error,
                    at_floor: error < ERROR_FLOOR,
                },
                ReferenceCheck {
                    k_ref,
                    discrepancy,
                    required: error / 100.0,
                    pass: discrepancy <= error / 100.0,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let (levels_out, checks): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut report = ConvergenceReport::new(t.name(), quantity.as_str(), t_final, levels_out);
    report.valid = checks.iter().all(|c| c.pass);
    // keep the check of the finest level
    report.reference = checks.into_iter().last();
    report
        .notes
        .push("grid coupled as n_grid = ceil(1/k)".into());
    Ok(report)
}

/// Convergence of the discrete antiderivative of stage samples toward a
/// known integral (the quadrature view of the stage recurrences).
pub fn quadrature_convergence(
    t: &ButcherTableau,
    f: impl Fn(f64) -> f64,
    integral: impl Fn(f64) -> f64,
    t_final: f64,
    levels: &[usize],
) -> Result<ConvergenceReport> {
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let k = t_final / level as f64;
        let ctx = CqContext::new(t.clone(), k, level)?;
        let samples = StageSequence::from_scalar_samples(t, k, level, &f);
        let x = opcalc::discrete_antiderivative(&ctx, &samples);
        let mut err: f64 = 0.0;
        for n in 0..=level {
            err = err.max((x.step_value(n)[0] - integral(n as f64 * k)).abs());
        }
        out.push(LevelError {
            k,
            error: err,
            at_floor: err < ERROR_FLOOR,
        });
    }
    Ok(ConvergenceReport::new(t.name(), "quadrature", t_final, out))
}

/// Stage defect `D(y; t0) = y(t0 + k c) - y(t0) 1 - k Q y'(t0 + k c)`.
pub fn stage_defect(
    t: &ButcherTableau,
    y: impl Fn(f64) -> DVector<f64>,
    y_dot: impl Fn(f64) -> DVector<f64>,
    t0: f64,
    k: f64,
) -> Vec<DVector<f64>> {
    let m = t.stages();
    let base = y(t0);
    let derivs: Vec<DVector<f64>> = (0..m).map(|s| y_dot(t0 + k * t.nodes()[s])).collect();
    (0..m)
        .map(|s| {
            let mut d = y(t0 + k * t.nodes()[s]) - &base;
            for j in 0..m {
                d -= k * t.matrix()[(s, j)] * &derivs[j];
            }
            d
        })
        .collect()
}

/// Empirical order of the stage defect under step halving.
pub fn stage_defect_convergence(
    t: &ButcherTableau,
    y: impl Fn(f64) -> DVector<f64>,
    y_dot: impl Fn(f64) -> DVector<f64>,
    t0: f64,
    ks: &[f64],
) -> ConvergenceReport {
    let levels = ks
        .iter()
        .map(|&k| {
            let defect = stage_defect(t, &y, &y_dot, t0, k);
            let err = defect.iter().map(|d| d.norm()).fold(0.0, f64::max);
            LevelError {
                k,
                error: err,
                at_floor: err < ERROR_FLOOR,
            }
        })
        .collect();
    ConvergenceReport::new(t.name(), "stage_defect", t0, levels)
}

/// `r(kA)` for a matrix argument, evaluated through one stage solve:
/// `r(kA) = I + (b^T (x) I)(I - k Q (x) A)^-1 (1 (x) kA)`.
pub fn stability_matrix(t: &ButcherTableau, a: &DMatrix<f64>, k: f64) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let m = t.stages();
    let mut system = DMatrix::zeros(m * d, m * d);
    for s in 0..m {
        for j in 0..m {
            let block = -k * t.matrix()[(s, j)] * a;
            system.view_mut((s * d, j * d), (d, d)).copy_from(&block);
        }
    }
    for i in 0..m * d {
        system[(i, i)] += 1.0;
    }
    let mut rhs = DMatrix::zeros(m * d, d);
    let ka = k * a;
    for s in 0..m {
        rhs.view_mut((s * d, 0), (d, d)).copy_from(&ka);
    }
    let lu = system.lu();
    let y = lu.solve(&rhs).ok_or(Error::SingularStageSystem { k })?;
    let mut r = DMatrix::identity(d, d);
    for s in 0..m {
        r += t.weights()[s] * y.view((s * d, 0), (d, d));
    }
    Ok(r)
}

/// Spectral norm via the symmetric eigenproblem of `M^T M`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let eig = nalgebra::SymmetricEigen::new(gram);
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

/// Random matrix with nonpositive symmetric part: a skew part plus a
/// negative-semidefinite part.
pub fn random_dissipative(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let skew = 0.5 * (&g - g.transpose());
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    skew - 0.5 * &m * m.transpose()
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionCase {
    pub dim: usize,
    pub k: f64,
    pub norm: f64,
    pub max_power_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub method: String,
    pub t_final: f64,
    pub cases: Vec<ContractionCase>,
    pub max_norm: f64,
    pub max_power_norm: f64,
}

/// Specification of the random dissipative sample used by the contraction
/// diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct DissipativeSpec {
    pub count: usize,
    pub max_dim: usize,
    pub seed: u64,
}

impl Default for DissipativeSpec {
    fn default() -> Self {
        Self {
            count: 100,
            max_dim: 10,
            seed: 2024,
        }
    }
}

/// Spectral norms of `r(kA)` and of its powers over an interval, for a
/// sample of random dissipative matrices. For A-stable methods all values
/// stay at or below one.
pub fn contraction_diagnostics(
    t: &ButcherTableau,
    spec: DissipativeSpec,
    ks: &[f64],
    t_final: f64,
) -> Result<ContractionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let matrices: Vec<DMatrix<f64>> = (0..spec.count)
        .map(|i| {
            let dim = 2 + i % (spec.max_dim - 1);
            random_dissipative(dim, &mut rng)
        })
        .collect();
    let cases: Vec<ContractionCase> = matrices
        .par_iter()
        .flat_map(|a| {
            ks.par_iter().map(move |&k| -> Result<ContractionCase> {
                let r = stability_matrix(t, a, k)?;
                let norm = spectral_norm(&r);
                let n_max = (t_final / k).floor() as usize;
                let mut max_power_norm = norm;
                let mut power = r.clone();
                for _ in 1..n_max {
                    power = &r * power;
                    max_power_norm = max_power_norm.max(spectral_norm(&power));
                }
                Ok(ContractionCase {
                    dim: a.nrows(),
                    k,
                    norm,
                    max_power_norm,
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_norm = cases.iter().map(|c| c.norm).fold(0.0, f64::max);
    let max_power_norm = cases.iter().map(|c| c.max_power_norm).fold(0.0, f64::max);
    Ok(ContractionReport {
        method: t.name().to_string(),
        t_final,
        cases,
        max_norm,
        max_power_norm,
    })
}
