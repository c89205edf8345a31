//! The discrete operational calculus of an implicit Runge-Kutta method:
//! the matrix symbol delta(z), the discrete derivative and antiderivative
//! recurrences, and FFT-contour application of a scalar transfer function
//! `F(s)` to a stage sequence.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tableau::ButcherTableau;
use crate::zlin::{self, ComplexMatrix, FftDirection};

/// Target aliasing error balanced against roundoff by the default contour
/// radius `lambda = eps_target^(1/(2N))`.
pub const CONTOUR_EPS_TARGET: f64 = 1e-14;
/// Above this eigenvector condition number the symbol is treated as
/// defective and the driver falls back to direct solves (resolvent only).
pub const DEFAULT_EIG_COND_LIMIT: f64 = 1e8;
/// Imaginary parts of results of real data must stay below this (relative
/// to the result scale) before they are discarded.
pub const REALITY_TOL: f64 = 1e-10;

/// Everything needed to apply `F` of the discrete time derivative to a
/// causal sequence: the method, step size, horizon and contour parameters.
#[derive(Clone, Debug)]
pub struct CqContext {
    tableau: ButcherTableau,
    step: f64,
    n_steps: usize,
    transform_len: usize,
    contour_radius: f64,
    eig_cond_limit: f64,
}

impl CqContext {
    /// Context with the default transform length (next power of two at or
    /// above `2 (n_steps + 1)`) and contour radius.
    pub fn new(tableau: ButcherTableau, step: f64, n_steps: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidConfig(format!("step size {step} must be positive")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidConfig("need at least one step".into()));
        }
        let transform_len = (2 * (n_steps + 1)).next_power_of_two();
        let contour_radius = CONTOUR_EPS_TARGET.powf(1.0 / (2.0 * transform_len as f64));
        Ok(Self {
            tableau,
            step,
            n_steps,
            transform_len,
            contour_radius,
            eig_cond_limit: DEFAULT_EIG_COND_LIMIT,
        })
    }

    pub fn with_transform_len(mut self, n: usize) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::FftLength(n));
        }
        if n < self.n_steps + 1 {
            return Err(Error::InvalidConfig(format!(
                "transform length {n} shorter than n_steps + 1 = {}",
                self.n_steps + 1
            )));
        }
        self.transform_len = n;
        self.contour_radius = CONTOUR_EPS_TARGET.powf(1.0 / (2.0 * n as f64));
        Ok(self)
    }

    pub fn with_contour_radius(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "contour radius {lambda} must lie in (0, 1)"
            )));
        }
        self.contour_radius = lambda;
        Ok(self)
    }

    /// Set the contour radius as `eps^(1/(2N))`. Smaller targets push the
    /// aliasing of the Z-series tail down at the cost of a larger roundoff
    /// amplification `lambda^-n`.
    pub fn with_eps_target(self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "aliasing target {eps} must lie in (0, 1)"
            )));
        }
        let lambda = eps.powf(1.0 / (2.0 * self.transform_len as f64));
        self.with_contour_radius(lambda)
    }

    pub fn with_eig_cond_limit(mut self, limit: f64) -> Self {
        self.eig_cond_limit = limit;
        self
    }

    pub fn tableau(&self) -> &ButcherTableau {
        &self.tableau
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn transform_len(&self) -> usize {
        self.transform_len
    }

    pub fn contour_radius(&self) -> f64 {
        self.contour_radius
    }
}

/// A finite sequence of Runge-Kutta stage vectors plus matching step
/// values. Stage entry `n` is an `m x d` matrix whose row `s` is the stage
/// vector at time `t_n + k c_s`; `steps` has length `n_steps + 1` with the
/// initial value prepended.
#[derive(Clone, Debug)]
pub struct StageSequence {
    m: usize,
    d: usize,
    stages: Vec<DMatrix<f64>>,
    steps: Vec<DVector<f64>>,
}

impl StageSequence {
    pub fn new(m: usize, d: usize, stages: Vec<DMatrix<f64>>, steps: Vec<DVector<f64>>) -> Result<Self> {
        if steps.len() != stages.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "step count {} must be stage count {} + 1",
                steps.len(),
                stages.len()
            )));
        }
        if stages.iter().any(|u| u.nrows() != m || u.ncols() != d)
            || steps.iter().any(|u| u.len() != d)
        {
            return Err(Error::InvalidConfig("inconsistent stage dimensions".into()));
        }
        Ok(Self { m, d, stages, steps })
    }

    pub fn zeros(m: usize, d: usize, n_steps: usize) -> Self {
        Self {
            m,
            d,
            stages: vec![DMatrix::zeros(m, d); n_steps],
            steps: vec![DVector::zeros(d); n_steps + 1],
        }
    }

    /// Stage and step samples of a vector-valued function of time.
    pub fn from_samples(
        tableau: &ButcherTableau,
        step: f64,
        n_steps: usize,
        f: impl Fn(f64) -> DVector<f64>,
    ) -> Self {
        let m = tableau.stages();
        let d = f(0.0).len();
        let mut stages = Vec::with_capacity(n_steps);
        let mut steps = Vec::with_capacity(n_steps + 1);
        for n in 0..=n_steps {
            let t_n = n as f64 * step;
            steps.push(f(t_n));
            if n < n_steps {
                let mut u = DMatrix::zeros(m, d);
                for s in 0..m {
                    u.row_mut(s).copy_from(&f(t_n + step * tableau.nodes()[s]).transpose());
                }
                stages.push(u);
            }
        }
        Self { m, d, stages, steps }
    }

    pub fn from_scalar_samples(
        tableau: &ButcherTableau,
        step: f64,
        n_steps: usize,
        f: impl Fn(f64) -> f64,
    ) -> Self {
        Self::from_samples(tableau, step, n_steps, |t| DVector::from_element(1, f(t)))
    }

    pub fn stage_count(&self) -> usize {
        self.m
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn n_steps(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[DMatrix<f64>] {
        &self.stages
    }

    pub fn steps(&self) -> &[DVector<f64>] {
        &self.steps
    }

    pub fn stage(&self, n: usize) -> &DMatrix<f64> {
        &self.stages[n]
    }

    pub fn step_value(&self, n: usize) -> &DVector<f64> {
        &self.steps[n]
    }

    /// Scalar step values (requires d = 1).
    pub fn scalar_steps(&self) -> Vec<f64> {
        assert_eq!(self.d, 1, "scalar access on vector-valued sequence");
        self.steps.iter().map(|v| v[0]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        let a = self
            .stages
            .iter()
            .map(|u| u.amax())
            .fold(0.0f64, f64::max);
        let b = self.steps.iter().map(|v| v.amax()).fold(0.0f64, f64::max);
        a.max(b)
    }
}

/// The matrix symbol of the discrete time derivative,
/// `delta(z) = Q^-1 - z/(1 - r_inf z) * Q^-1 1 b^T Q^-1`.
///
/// For backward Euler this reduces to `1 - z`, which a regression test
/// pins down.
pub fn delta(tableau: &ButcherTableau, z: Complex64) -> Result<ComplexMatrix> {
    let m = tableau.stages();
    let denom = Complex64::new(1.0, 0.0) - tableau.r_infinity() * z;
    if denom.norm() <= 1e-10 * (1.0 + z.norm()) {
        return Err(Error::DeltaPole { z });
    }
    let factor = z / denom;
    let v = tableau.inv_row_sums(); // Q^-1 1
    let w = tableau.weights_inv(); // b^T Q^-1
    let mut out = ComplexMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = Complex64::new(tableau.inv_matrix()[(i, j)], 0.0) - factor * v[i] * w[j];
        }
    }
    Ok(out)
}

/// Discrete antiderivative: stage recurrence `X_n = 1 x_n + k Q U_n`,
/// `x_{n+1} = x_n + k b^T U_n`, starting from `x_0 = 0`.
pub fn discrete_antiderivative(ctx: &CqContext, u: &StageSequence) -> StageSequence {
    let t = &ctx.tableau;
    let (m, d, k) = (u.m, u.d, ctx.step);
    let mut x = DVector::zeros(d);
    let mut stages = Vec::with_capacity(u.n_steps());
    let mut steps = Vec::with_capacity(u.n_steps() + 1);
    steps.push(x.clone());
    for un in &u.stages {
        let mut xn = DMatrix::zeros(m, d);
        for s in 0..m {
            let mut row = x.transpose();
            for j in 0..m {
                row += k * t.matrix()[(s, j)] * un.row(j);
            }
            xn.row_mut(s).copy_from(&row);
        }
        let mut xnext = x.clone();
        for j in 0..m {
            xnext += k * t.weights()[j] * un.row(j).transpose();
        }
        stages.push(xn);
        x = xnext;
        steps.push(x.clone());
    }
    StageSequence { m, d, stages, steps }
}

/// Discrete derivative: `V_n = k^-1 Q^-1 (U_n - 1 w_n)` with the step
/// reconstruction `w_{n+1} = r_inf w_n + b^T Q^-1 U_n`, `w_0 = 0`. The
/// output's own step values are rebuilt by the same reconstruction from
/// the output stages.
pub fn discrete_derivative(ctx: &CqContext, u: &StageSequence) -> StageSequence {
    let t = &ctx.tableau;
    let (m, d, k) = (u.m, u.d, ctx.step);
    let r_inf = t.r_infinity();
    let mut w = DVector::zeros(d);
    let mut stages = Vec::with_capacity(u.n_steps());
    for un in &u.stages {
        let mut vn = DMatrix::zeros(m, d);
        for s in 0..m {
            let mut row = DVector::zeros(d).transpose();
            for j in 0..m {
                row += t.inv_matrix()[(s, j)] * (un.row(j) - w.transpose());
            }
            vn.row_mut(s).copy_from(&(row / k));
        }
        let mut wnext = r_inf * &w;
        for j in 0..m {
            wnext += t.weights_inv()[j] * un.row(j).transpose();
        }
        stages.push(vn);
        w = wnext;
    }
    let steps = reconstruct_steps(t, &stages, d);
    StageSequence { m, d, stages, steps }
}

/// Step values from stages via `u_{n+1} = r_inf u_n + b^T Q^-1 U_n`,
/// starting at zero.
pub fn reconstruct_steps(
    tableau: &ButcherTableau,
    stages: &[DMatrix<f64>],
    d: usize,
) -> Vec<DVector<f64>> {
    let m = tableau.stages();
    let r_inf = tableau.r_infinity();
    let mut out = Vec::with_capacity(stages.len() + 1);
    let mut u = DVector::zeros(d);
    out.push(u.clone());
    for un in stages {
        let mut next = r_inf * &u;
        for j in 0..m {
            next += tableau.weights_inv()[j] * un.row(j).transpose();
        }
        u = next;
        out.push(u.clone());
    }
    out
}

/// Shortcut for the discrete derivative of stage samples of a function with
/// `f(0) = 0`, valid for stiffly accurate methods:
/// `G_n = k^-1 Q^-1 (f(t_n + k c) - 1 f(t_n))`.
pub fn stiffly_accurate_derivative(
    ctx: &CqContext,
    f: impl Fn(f64) -> DVector<f64>,
) -> Result<StageSequence> {
    let t = &ctx.tableau;
    if !t.is_stiffly_accurate(crate::tableau::ALGEBRAIC_TOL) {
        return Err(Error::NotStifflyAccurate(t.name().to_string()));
    }
    let m = t.stages();
    let d = f(0.0).len();
    let k = ctx.step;
    let mut stages = Vec::with_capacity(ctx.n_steps);
    for n in 0..ctx.n_steps {
        let t_n = n as f64 * k;
        let base = f(t_n);
        let mut gn = DMatrix::zeros(m, d);
        for s in 0..m {
            let mut row = DVector::zeros(d).transpose();
            for j in 0..m {
                let diff = f(t_n + k * t.nodes()[j]) - &base;
                row += t.inv_matrix()[(s, j)] * diff.transpose();
            }
            gn.row_mut(s).copy_from(&(row / k));
        }
        stages.push(gn);
    }
    let steps = reconstruct_steps(t, &stages, d);
    Ok(StageSequence { m, d, stages, steps })
}

/// A scalar transfer function, analytic for `Re s > 0`. When constructed as
/// a resolvent, the CQ driver can evaluate it by a direct linear solve when
/// `delta(z)` is too close to defective for diagonalization.
pub struct TransferFunction {
    eval: Box<dyn Fn(Complex64) -> Complex64 + Send + Sync>,
    resolvent_pole: Option<Complex64>,
}

impl TransferFunction {
    pub fn new(f: impl Fn(Complex64) -> Complex64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Box::new(f),
            resolvent_pole: None,
        }
    }

    /// `F(s) = (s - pole)^-1`.
    pub fn resolvent(pole: Complex64) -> Self {
        Self {
            eval: Box::new(move |s| (s - pole).inv()),
            resolvent_pole: Some(pole),
        }
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        (self.eval)(s)
    }

    pub fn resolvent_pole(&self) -> Option<Complex64> {
        self.resolvent_pole
    }
}

/// Apply `F(delta(z)/k)` to one frequency sample of the transformed data.
fn apply_symbol_at(
    ctx: &CqContext,
    f: &TransferFunction,
    freq: usize,
    z: Complex64,
    g: &[Complex64],
) -> Result<Vec<Complex64>> {
    let m = ctx.tableau.stages();
    let d = delta(&ctx.tableau, z)?;
    let mut dk = ComplexMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            dk[(i, j)] = d[(i, j)] / ctx.step;
        }
    }
    let diag = match zlin::eig(&dk) {
        Ok(e) if e.cond_estimate <= ctx.eig_cond_limit => Some(e),
        Ok(e) => {
            if f.resolvent_pole.is_none() {
                return Err(Error::DefectiveSymbol {
                    freq,
                    cond: e.cond_estimate,
                });
            }
            None
        }
        Err(Error::Defective { cond }) => {
            if f.resolvent_pole.is_none() {
                return Err(Error::DefectiveSymbol { freq, cond });
            }
            None
        }
        Err(Error::EigNonConvergence(n)) => {
            if f.resolvent_pole.is_none() {
                return Err(Error::EigNonConvergence(n));
            }
            None
        }
        Err(e) => return Err(e),
    };
    match diag {
        Some(e) => {
            let fvals: Vec<Complex64> = e
                .values
                .iter()
                .map(|w| f.eval(*w))
                .collect();
            if fvals.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::PoleOnContour { freq });
            }
            let mut y = zlin::solve_vec(&e.vectors, g)?;
            for (yi, fi) in y.iter_mut().zip(&fvals) {
                *yi *= fi;
            }
            e.vectors.mul_vec(&y)
        }
        None => {
            let a = f.resolvent_pole.expect("fallback requires a resolvent");
            for i in 0..m {
                dk[(i, i)] -= a;
            }
            zlin::solve_vec(&dk, g).map_err(|err| match err {
                Error::Singular { .. } => Error::PoleOnContour { freq },
                other => other,
            })
        }
    }
}

/// The general complex-data CQ driver. `stages[n]` holds the m stage values
/// of step `n`. Frequency points are processed independently (in parallel)
/// and reduced in index order, so the result is deterministic.
pub fn apply_transfer_function_complex(
    ctx: &CqContext,
    f: &TransferFunction,
    stages: &[Vec<Complex64>],
) -> Result<Vec<Vec<Complex64>>> {
    let m = ctx.tableau.stages();
    let n = ctx.n_steps;
    if stages.len() != n || stages.iter().any(|g| g.len() != m) {
        return Err(Error::InvalidConfig(format!(
            "expected {n} stage entries of {m} values"
        )));
    }
    let nt = ctx.transform_len;
    let lam = ctx.contour_radius;

    let lam_pow: Vec<f64> = (0..n).scan(1.0, |acc, _| {
        let v = *acc;
        *acc *= lam;
        Some(v)
    })
    .collect();

    // Z-transform samples on the contour, one FFT per stage slot.
    let mut ghat = vec![vec![Complex64::new(0.0, 0.0); m]; nt];
    for s in 0..m {
        let mut buf = vec![Complex64::new(0.0, 0.0); nt];
        for j in 0..n {
            buf[j] = stages[j][s] * lam_pow[j];
        }
        let spectrum = zlin::fft(&buf, FftDirection::Forward)?;
        for (l, v) in spectrum.into_iter().enumerate() {
            ghat[l][s] = v;
        }
    }

    // Multiply by F(delta(z_l)/k) at z_l = lambda * exp(-2 pi i l / nt).
    let yhat: Vec<Vec<Complex64>> = (0..nt)
        .into_par_iter()
        .map(|l| {
            let angle = -2.0 * std::f64::consts::PI * l as f64 / nt as f64;
            let z = Complex64::from_polar(lam, angle);
            apply_symbol_at(ctx, f, l, z, &ghat[l])
        })
        .collect::<Result<Vec<_>>>()?;

    // Inverse transforms and contour unscaling.
    let mut out = vec![vec![Complex64::new(0.0, 0.0); m]; n];
    for s in 0..m {
        let buf: Vec<Complex64> = (0..nt).map(|l| yhat[l][s]).collect();
        let seq = zlin::fft(&buf, FftDirection::Inverse)?;
        for j in 0..n {
            out[j][s] = seq[j] / lam_pow[j];
        }
    }
    Ok(out)
}

/// Apply a transfer function to real stage data, componentwise over the
/// state dimension. Results must come back real (up to the reality
/// tolerance); the step values are rebuilt by the standard reconstruction.
pub fn apply_transfer_function(
    ctx: &CqContext,
    f: &TransferFunction,
    g: &StageSequence,
) -> Result<StageSequence> {
    let m = ctx.tableau.stages();
    if g.m != m {
        return Err(Error::InvalidConfig(format!(
            "sequence has {} stages, method has {m}",
            g.m
        )));
    }
    if g.n_steps() != ctx.n_steps {
        return Err(Error::InvalidConfig(format!(
            "sequence length {} does not match context ({})",
            g.n_steps(),
            ctx.n_steps
        )));
    }
    let d = g.d;
    let n = ctx.n_steps;
    let mut stages = vec![DMatrix::zeros(m, d); n];
    let mut imag_max: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for col in 0..d {
        let data: Vec<Vec<Complex64>> = (0..n)
            .map(|j| {
                (0..m)
                    .map(|s| Complex64::new(g.stages[j][(s, col)], 0.0))
                    .collect()
            })
            .collect();
        let res = apply_transfer_function_complex(ctx, f, &data)?;
        for j in 0..n {
            for s in 0..m {
                let v = res[j][s];
                imag_max = imag_max.max(v.im.abs());
                scale = scale.max(v.re.abs());
                stages[j][(s, col)] = v.re;
            }
        }
    }
    if imag_max > REALITY_TOL * scale.max(1.0) {
        return Err(Error::RealityViolation { residue: imag_max });
    }
    let steps = reconstruct_steps(&ctx.tableau, &stages, d);
    StageSequence::new(m, d, stages, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::{builtin_tableau, builtin_tableaus};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ctx(name: &str, k: f64, n: usize) -> CqContext {
        CqContext::new(builtin_tableau(name).unwrap(), k, n).unwrap()
    }

    #[test]
    fn delta_at_zero_is_inverse_coefficient_matrix() {
        for t in builtin_tableaus() {
            let d = delta(&t, Complex64::new(0.0, 0.0)).unwrap();
            for i in 0..t.stages() {
                for j in 0..t.stages() {
                    let expect = t.inv_matrix()[(i, j)];
                    assert!((d[(i, j)] - Complex64::new(expect, 0.0)).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn delta_backward_euler_regression() {
        // The symbol of backward Euler is 1 - z; this pins the closed form
        // used in `delta` against the recurrence convention.
        let t = builtin_tableau("radau_iia_1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let d = delta(&t, z).unwrap();
            assert!((d[(0, 0)] - (Complex64::new(1.0, 0.0) - z)).norm() < 1e-14);
        }
        let d = delta(&t, Complex64::new(0.5, 0.0)).unwrap();
        assert!((d[(0, 0)] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn delta_pole_detected() {
        // gauss_1 has r(inf) = -1, so delta has a pole at z = -1.
        let t = builtin_tableau("gauss_1").unwrap();
        match delta(&t, Complex64::new(-1.0, 0.0)) {
            Err(Error::DeltaPole { .. }) => {}
            other => panic!("expected pole error, got {other:?}"),
        }
    }

    #[test]
    fn delta_spectrum_in_right_half_plane() {
        let t = builtin_tableau("radau_iia_2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let z = Complex64::from_polar(0.95 * rng.random::<f64>(), std::f64::consts::TAU * rng.random::<f64>());
            let d = delta(&t, z).unwrap();
            // 2x2 oracle: roots of the characteristic polynomial
            let tr = d[(0, 0)] + d[(1, 1)];
            let det = d[(0, 0)] * d[(1, 1)] - d[(0, 1)] * d[(1, 0)];
            let disc = (tr * tr - 4.0 * det).sqrt();
            let l1 = (tr + disc) / 2.0;
            let l2 = (tr - disc) / 2.0;
            assert!(l1.re > 0.0 && l2.re > 0.0, "z = {z}");
            // and the general eigensolver agrees
            let e = zlin::eig(&d).unwrap();
            let mut oracle = [l1, l2];
            oracle.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
            for (computed, expect) in e.values.iter().zip(oracle) {
                assert!((computed - expect).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn antiderivative_of_ones_backward_euler() {
        let c = ctx("radau_iia_1", 0.1, 20);
        let u = StageSequence::from_scalar_samples(c.tableau(), 0.1, 20, |_| 1.0);
        let x = discrete_antiderivative(&c, &u);
        for n in 0..20 {
            assert!((x.stage(n)[(0, 0)] - 0.1 * (n as f64 + 1.0)).abs() < 1e-13);
            assert!((x.step_value(n)[0] - 0.1 * n as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn antiderivative_quadrature_exact_for_linear() {
        let k = 0.1;
        let c = ctx("radau_iia_2", k, 30);
        let u = StageSequence::from_scalar_samples(c.tableau(), k, 30, |t| t);
        let x = discrete_antiderivative(&c, &u);
        for n in 0..=30 {
            let t_n = k * n as f64;
            assert!(
                (x.step_value(n)[0] - t_n * t_n / 2.0).abs() < 1e-13,
                "n = {n}"
            );
        }
    }

    #[test]
    fn antiderivative_of_zero_is_zero() {
        let c = ctx("radau_iia_3", 0.05, 10);
        let u = StageSequence::zeros(3, 2, 10);
        let x = discrete_antiderivative(&c, &u);
        assert_eq!(x.max_abs(), 0.0);
        let v = discrete_derivative(&c, &u);
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn derivative_inverts_antiderivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = 0.05;
        let c = ctx("radau_iia_3", k, 50);
        let stages: Vec<DMatrix<f64>> = (0..50)
            .map(|_| DMatrix::from_fn(3, 1, |_, _| rng.random::<f64>() - 0.5))
            .collect();
        let steps = vec![DVector::zeros(1); 51];
        let u = StageSequence::new(3, 1, stages, steps).unwrap();
        let x = discrete_antiderivative(&c, &u);
        let v = discrete_derivative(&c, &x);
        let mut err: f64 = 0.0;
        for n in 0..50 {
            err = err.max((v.stage(n) - u.stage(n)).amax());
        }
        assert!(err < 1e-12 * u.max_abs().max(1.0), "round trip error {err}");
    }

    #[test]
    fn derivative_exact_on_polynomials_up_to_stage_order() {
        // Degree <= q samples differentiate exactly.
        let t = builtin_tableau("radau_iia_2").unwrap();
        let k = 0.1;
        let n = 10;
        let c = CqContext::new(t.clone(), k, n).unwrap();
        let u = StageSequence::from_scalar_samples(&t, k, n, |x| x * x);
        let v = discrete_derivative(&c, &u);
        for j in 0..n {
            for s in 0..t.stages() {
                let ts = j as f64 * k + k * t.nodes()[s];
                assert!((v.stage(j)[(s, 0)] - 2.0 * ts).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_approximates_time_derivative() {
        // d/dt of sin t sampled at the stages, checked at stage points with
        // empirical order at least the stage order.
        let t = builtin_tableau("radau_iia_2").unwrap();
        let errs: Vec<f64> = [0.1f64, 0.05, 0.025]
            .iter()
            .map(|&k| {
                let n = (1.0 / k).round() as usize;
                let c = CqContext::new(t.clone(), k, n).unwrap();
                let u = StageSequence::from_scalar_samples(&t, k, n, |x| x.sin());
                let v = discrete_derivative(&c, &u);
                let mut err: f64 = 0.0;
                for j in 0..n {
                    for s in 0..t.stages() {
                        let ts = j as f64 * k + k * t.nodes()[s];
                        err = err.max((v.stage(j)[(s, 0)] - ts.cos()).abs());
                    }
                }
                err
            })
            .collect();
        let e1 = (errs[0] / errs[1]).log2();
        let e2 = (errs[1] / errs[2]).log2();
        assert!(e1 > 1.8 && e2 > 1.8, "orders {e1} {e2} from {errs:?}");
    }

    #[test]
    fn stiff_shortcut_linear_function_gives_ones() {
        let k = 0.1;
        let c = ctx("radau_iia_2", k, 10);
        let g = stiffly_accurate_derivative(&c, |t| DVector::from_element(1, t)).unwrap();
        for n in 0..10 {
            for s in 0..2 {
                assert!((g.stage(n)[(s, 0)] - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn stiff_shortcut_matches_recurrence() {
        for &k in &[0.1f64, 0.05, 0.025] {
            let n = (1.0 / k).round() as usize;
            let c = ctx("radau_iia_3", k, n);
            let f = |t: f64| DVector::from_element(1, t * t * t);
            let g = stiffly_accurate_derivative(&c, f).unwrap();
            let u = StageSequence::from_samples(c.tableau(), k, n, f);
            let v = discrete_derivative(&c, &u);
            let mut err: f64 = 0.0;
            for j in 0..n {
                err = err.max((g.stage(j) - v.stage(j)).amax());
            }
            assert!(err < 1e-12 * v.max_abs().max(1.0), "k = {k}, err = {err}");
        }
    }

    #[test]
    fn stiff_shortcut_zero_is_zero() {
        let c = ctx("radau_iia_2", 0.1, 5);
        let g = stiffly_accurate_derivative(&c, |_| DVector::zeros(2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn stiff_shortcut_rejects_gauss() {
        let c = ctx("gauss_2", 0.1, 5);
        match stiffly_accurate_derivative(&c, |t| DVector::from_element(1, t)) {
            Err(Error::NotStifflyAccurate(name)) => assert_eq!(name, "gauss_2"),
            other => panic!("expected stiff-accuracy error, got {other:?}"),
        }
    }

    #[test]
    fn transfer_identity_returns_input() {
        let c = ctx("radau_iia_2", 0.1, 40);
        let g = StageSequence::from_scalar_samples(c.tableau(), 0.1, 40, |t| (t * 1.3).sin());
        let f = TransferFunction::new(|_| Complex64::new(1.0, 0.0));
        let out = apply_transfer_function(&c, &f, &g).unwrap();
        let mut err: f64 = 0.0;
        for n in 0..40 {
            err = err.max((out.stage(n) - g.stage(n)).amax());
        }
        assert!(err < 1e-8, "identity symbol error {err}");
    }

    #[test]
    fn transfer_inverse_symbol_matches_antiderivative() {
        // The default contour targets 1e-14 aliasing relative to the
        // Z-series tail; the antiderivative of a constant has an O(1) tail,
        // so a tighter radius is needed for a 1e-8 comparison.
        let c = ctx("radau_iia_2", 0.1, 40).with_eps_target(1e-22).unwrap();
        let g = StageSequence::from_scalar_samples(c.tableau(), 0.1, 40, |_| 1.0);
        let f = TransferFunction::new(|s| s.inv());
        let out = apply_transfer_function(&c, &f, &g).unwrap();
        let oracle = discrete_antiderivative(&c, &g);
        let mut err: f64 = 0.0;
        for n in 0..40 {
            err = err.max((out.stage(n) - oracle.stage(n)).amax());
        }
        assert!(err < 1e-8, "inverse symbol error {err}");
    }

    #[test]
    fn z_domain_consistency_of_derivative() {
        // The Z-transform of the discrete derivative is k^-1 delta(z) times
        // the Z-transform of the input, checked on truncated series whose
        // geometric tails are negligible at |z| <= 0.9.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let k = 0.37;
        let support = 40;
        let total = 400;
        for t in builtin_tableaus() {
            let m = t.stages();
            let c = CqContext::new(t.clone(), k, total).unwrap();
            let stages: Vec<DMatrix<f64>> = (0..total)
                .map(|n| {
                    if n < support {
                        DMatrix::from_fn(m, 1, |_, _| rng.random::<f64>() - 0.5)
                    } else {
                        DMatrix::zeros(m, 1)
                    }
                })
                .collect();
            let u = StageSequence::new(m, 1, stages, vec![DVector::zeros(1); total + 1]).unwrap();
            let v = discrete_derivative(&c, &u);
            for _ in 0..8 {
                let z = Complex64::from_polar(
                    0.9 * rng.random::<f64>(),
                    std::f64::consts::TAU * rng.random::<f64>(),
                );
                let mut uhat = vec![Complex64::new(0.0, 0.0); m];
                let mut vhat = vec![Complex64::new(0.0, 0.0); m];
                let mut zn = Complex64::new(1.0, 0.0);
                for n in 0..total {
                    for s in 0..m {
                        uhat[s] += u.stage(n)[(s, 0)] * zn;
                        vhat[s] += v.stage(n)[(s, 0)] * zn;
                    }
                    zn *= z;
                }
                let d = delta(&t, z).unwrap();
                let expect = d.mul_vec(&uhat).unwrap();
                for s in 0..m {
                    let res = (vhat[s] - expect[s] / k).norm();
                    assert!(
                        res < 1e-10 * (1.0 + vhat[s].norm()),
                        "{} at z = {z}: residual {res}",
                        t.name()
                    );
                }
            }
        }
    }

    #[test]
    fn context_validation() {
        let t = builtin_tableau("radau_iia_1").unwrap();
        assert!(CqContext::new(t.clone(), 0.0, 10).is_err());
        assert!(CqContext::new(t.clone(), 0.1, 0).is_err());
        let c = CqContext::new(t.clone(), 0.1, 10).unwrap();
        assert!(c.transform_len() >= 22);
        assert!(c.transform_len().is_power_of_two());
        assert!(c.contour_radius() > 0.0 && c.contour_radius() < 1.0);
        assert!(c.clone().with_transform_len(8).is_err());
        assert!(c.clone().with_transform_len(100).is_err());
        assert!(c.with_transform_len(64).is_ok());
    }
}
