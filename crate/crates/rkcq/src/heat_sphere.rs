//! Heat-conduction boundary integral experiment on the unit sphere.
//!
//! Boundary data of the form `psi(t) Y_n^m(x)` diagonalizes the single
//! layer operator: on degree-n harmonics it acts as the scalar symbol
//! `mu_n(s) = -s j_n(is) h1_n(is)`. Solving the boundary integral equation
//! with convolution quadrature therefore reduces to applying
//! `1 / mu_n(sqrt(s))` of the discrete time derivative to samples of
//! `psi`, and the convergence study compares each run against a companion
//! at a quarter of the step size.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::opcalc::{self, CqContext, StageSequence, TransferFunction};
use crate::report::{ConvergenceReport, LevelError};
use crate::tableau::ButcherTableau;

/// Degrees handled by the closed forms at full accuracy.
pub const MAX_DEGREE: u32 = 10;
/// Aliasing target for the experiment's contour (tighter than the general
/// default because the density tail feeds straight into the measured
/// errors).
pub const HEAT_EPS_TARGET: f64 = 1e-24;
/// Levels whose errors stagnate below this are flagged and excluded from
/// the order statistic.
pub const HEAT_ERROR_FLOOR: f64 = 1e-11;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// `i^n` without trigonometry.
fn i_pow(n: u32) -> Complex64 {
    match n % 4 {
        0 => ONE,
        1 => I,
        2 => -ONE,
        _ => -I,
    }
}

/// Coefficients `(n+m)! / (m! (n-m)!)` of the terminating Hankel sums.
fn hankel_coefficients(n: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut a = 1.0;
    out.push(a);
    for m in 0..n {
        a *= ((n - m) * (n + m + 1)) as f64 / (m + 1) as f64;
        out.push(a);
    }
    out
}

/// Spherical Hankel function of the first kind,
/// `h1_n(z) = (-i)^(n+1) e^(iz)/z * sum_m a_nm (i/(2z))^m`.
pub fn spherical_hankel_h1(n: u32, z: Complex64) -> Result<Complex64> {
    if z == ZERO {
        return Err(Error::SpecialFunction(
            "spherical Hankel function has a pole at z = 0".into(),
        ));
    }
    let coeffs = hankel_coefficients(n);
    let w = I / (2.0 * z);
    let mut sum = ZERO;
    let mut wp = ONE;
    for a in coeffs {
        sum += a * wp;
        wp *= w;
    }
    Ok(i_pow(n + 1).conj() * (I * z).exp() / z * sum)
}

/// Spherical Hankel function of the second kind (mirror sum with e^(-iz)).
fn spherical_hankel_h2(n: u32, z: Complex64) -> Result<Complex64> {
    if z == ZERO {
        return Err(Error::SpecialFunction(
            "spherical Hankel function has a pole at z = 0".into(),
        ));
    }
    let coeffs = hankel_coefficients(n);
    let w = -I / (2.0 * z);
    let mut sum = ZERO;
    let mut wp = ONE;
    for a in coeffs {
        sum += a * wp;
        wp *= w;
    }
    Ok(i_pow(n + 1) * (-I * z).exp() / z * sum)
}

/// Spherical Bessel function of the first kind. Uses the ascending series
/// below `|z| ~ n` (where the Hankel average would cancel catastrophically,
/// since `|h_n| / |j_n|` grows like `((2n-1)!!)^2 / |z|^(2n+1)`) and the
/// average of the two Hankel functions beyond; relative accuracy degrades
/// only near the zeros of `j_n`.
pub fn spherical_bessel_j(n: u32, z: Complex64) -> Complex64 {
    if z == ZERO {
        return if n == 0 { ONE } else { ZERO };
    }
    if z.norm() < n as f64 + 0.5 {
        // j_n(z) = z^n / (2n+1)!! * sum_k term_k,
        // term_{k+1} = term_k * (-z^2/2) / ((k+1)(2n+2k+3))
        let mut term = ONE;
        for j in 0..n {
            term *= z / (2 * j + 3) as f64;
        }
        // now term = z^n / ((2n+1)!!/1!!) up to the leading 1/1: for n = 0
        // the product is empty and term = 1, matching j_0(0) = 1.
        let mut sum = term;
        let minus_half_z2 = -z * z / 2.0;
        for k in 0..60u32 {
            term *= minus_half_z2 / ((k + 1) as f64 * (2 * n + 2 * k + 3) as f64);
            sum += term;
            if term.norm() <= 1e-18 * sum.norm() {
                break;
            }
        }
        return sum;
    }
    let h1 = spherical_hankel_h1(n, z).expect("z != 0");
    let h2 = spherical_hankel_h2(n, z).expect("z != 0");
    (h1 + h2) / 2.0
}

/// Eigenvalue of the single layer operator on degree-n spherical
/// harmonics: `mu_n(s) = -s j_n(is) h1_n(is)`.
pub fn mu_n(n: u32, s: Complex64) -> Result<Complex64> {
    if s == ZERO {
        return Err(Error::SpecialFunction(
            "mu_n is evaluated away from s = 0 (limit 1/(2n+1))".into(),
        ));
    }
    let is = I * s;
    let j = spherical_bessel_j(n, is);
    let h = spherical_hankel_h1(n, is)?;
    Ok(-s * j * h)
}

/// Default temporal profile `t^12 exp(-2t)`: twelve vanishing derivatives
/// at zero cover the compatibility needs of every built-in method.
pub fn default_psi(t: f64) -> f64 {
    t.powi(12) * (-2.0 * t).exp()
}

/// Configuration of one convergence study for the sphere experiment.
#[derive(Clone)]
pub struct HeatExperimentConfig {
    pub degree: u32,
    pub psi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub t_final: f64,
    pub tableau: ButcherTableau,
    /// Strictly decreasing step sizes, each dividing the final time.
    pub steps: Vec<f64>,
}

impl HeatExperimentConfig {
    /// Build from level counts (`k = t_final / level`) and validate that
    /// the profile vanishes to sufficient order at t = 0.
    pub fn new(
        degree: u32,
        psi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        t_final: f64,
        tableau: ButcherTableau,
        levels: &[usize],
    ) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::SpecialFunction(format!(
                "harmonic degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "levels must be strictly increasing".into(),
            ));
        }
        if !(t_final > 0.0) {
            return Err(Error::InvalidConfig("final time must be positive".into()));
        }
        let steps = levels.iter().map(|&l| t_final / l as f64).collect();
        let cfg = Self {
            degree,
            psi,
            t_final,
            tableau,
            steps,
        };
        cfg.check_compatibility()?;
        Ok(cfg)
    }

    /// Certify that `psi^(j)(0)` vanishes for `j <= p + 2`.
    ///
    /// High-order finite differences of a profile like `t^12 e^(-2t)`
    /// cannot be pushed to the rounding level (the 11th derivative grows
    /// like 12! t right next to the origin), so vanishing is certified by
    /// halving the difference window: the estimates must decay
    /// geometrically, which rules out a nonzero limit.
    fn check_compatibility(&self) -> Result<()> {
        let p = self.tableau.order();
        let scale = (0..200)
            .map(|i| (self.psi)(self.t_final * i as f64 / 199.0).abs())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        for j in 1..=(p + 2) {
            let fd = |h: f64| -> f64 {
                let mut acc = 0.0;
                let mut binom = 1.0f64;
                for i in 0..=j {
                    let sign = if (j - i) % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * binom * (self.psi)(i as f64 * h);
                    binom *= (j - i) as f64 / (i + 1) as f64;
                }
                acc / h.powi(j as i32)
            };
            let h0 = 0.4 / j as f64;
            let e1 = fd(h0).abs();
            let e2 = fd(h0 / 2.0).abs();
            let vanished = e2 <= 1e-10 * scale || e2 <= 0.7 * e1;
            if !vanished {
                return Err(Error::InvalidConfig(format!(
                    "profile derivative {j} does not vanish at t = 0 \
                     (estimates {e1:.3e} -> {e2:.3e})"
                )));
            }
        }
        Ok(())
    }
}

/// Solve the boundary-integral equation for the density of one harmonic:
/// apply `F(s) = 1 / mu_n(sqrt(s))` of the discrete derivative to stage
/// samples of the temporal profile. The principal square root is safe
/// here because the contour spectrum stays in the right half plane.
pub fn solve_heat_density(cfg: &HeatExperimentConfig, k: f64) -> Result<StageSequence> {
    let n_steps = (cfg.t_final / k).round() as usize;
    if n_steps == 0 || ((n_steps as f64 * k - cfg.t_final) / cfg.t_final).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "step size {k} does not divide the final time {}",
            cfg.t_final
        )));
    }
    let ctx = CqContext::new(cfg.tableau.clone(), k, n_steps)?.with_eps_target(HEAT_EPS_TARGET)?;
    let psi = cfg.psi.clone();
    let g = StageSequence::from_scalar_samples(&cfg.tableau, k, n_steps, move |t| psi(t));
    let degree = cfg.degree;
    let f = TransferFunction::new(move |s| {
        let mu = mu_n(degree, s.sqrt()).unwrap_or(ZERO);
        if mu == ZERO {
            Complex64::new(f64::NAN, 0.0) // flagged as a pole by the driver
        } else {
            mu.inv()
        }
    });
    opcalc::apply_transfer_function(&ctx, &f, &g)
}

/// Apply the forward symbol `mu_n(sqrt(s))` (used by round-trip checks).
pub fn apply_forward_symbol(
    cfg: &HeatExperimentConfig,
    k: f64,
    density: &StageSequence,
) -> Result<StageSequence> {
    let n_steps = density.n_steps();
    let ctx = CqContext::new(cfg.tableau.clone(), k, n_steps)?.with_eps_target(HEAT_EPS_TARGET)?;
    let degree = cfg.degree;
    let f = TransferFunction::new(move |s| mu_n(degree, s.sqrt()).unwrap_or(ZERO));
    opcalc::apply_transfer_function(&ctx, &f, density)
}

/// Run the convergence study: for each level, compare the density at step
/// size `k` with the companion at `k/4` over the common step times.
pub fn run_heat_convergence(cfg: &HeatExperimentConfig) -> Result<ConvergenceReport> {
    // level list plus the k/4 companions, deduplicated
    let mut wanted: Vec<usize> = Vec::new();
    for &k in &cfg.steps {
        let n = (cfg.t_final / k).round() as usize;
        for v in [n, 4 * n] {
            if !wanted.contains(&v) {
                wanted.push(v);
            }
        }
    }
    let solutions: BTreeMap<usize, Vec<f64>> = wanted
        .par_iter()
        .map(|&n| -> Result<(usize, Vec<f64>)> {
            let k = cfg.t_final / n as f64;
            let seq = solve_heat_density(cfg, k)?;
            Ok((n, seq.scalar_steps()))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let mut levels = Vec::with_capacity(cfg.steps.len());
    for &k in &cfg.steps {
        let n = (cfg.t_final / k).round() as usize;
        let coarse = &solutions[&n];
        let fine = &solutions[&(4 * n)];
        let mut err: f64 = 0.0;
        for j in 0..=n {
            err = err.max((coarse[j] - fine[4 * j]).abs());
        }
        levels.push(LevelError {
            k,
            error: err,
            at_floor: err < HEAT_ERROR_FLOOR,
        });
    }
    let mut report = ConvergenceReport::new(cfg.tableau.name(), "density", cfg.t_final, levels);
    report.notes.push(format!("harmonic degree {}", cfg.degree));
    report.notes.push("error vs companion run at k/4".into());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::builtin_tableau;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Derivative via the recurrence f_n' = f_{n-1} - (n+1)/z f_n.
    fn h1_prime(n: u32, z: Complex64) -> Complex64 {
        if n == 0 {
            -spherical_hankel_h1(1, z).unwrap()
        } else {
            spherical_hankel_h1(n - 1, z).unwrap()
                - (n as f64 + 1.0) / z * spherical_hankel_h1(n, z).unwrap()
        }
    }

    fn j_prime(n: u32, z: Complex64) -> Complex64 {
        if n == 0 {
            -spherical_bessel_j(1, z)
        } else {
            spherical_bessel_j(n - 1, z) - (n as f64 + 1.0) / z * spherical_bessel_j(n, z)
        }
    }

    #[test]
    fn bessel_j0_closed_form() {
        let v = spherical_bessel_j(0, c(1.0, 0.0));
        assert!((v.re - 0.841470984807897).abs() < 1e-14);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn bessel_at_origin() {
        assert_eq!(spherical_bessel_j(0, ZERO), ONE);
        for n in 1..=6 {
            assert_eq!(spherical_bessel_j(n, ZERO), ZERO);
        }
    }

    #[test]
    fn bessel_j2_closed_form_at_i() {
        // j_2(z) = (3/z^3 - 1/z) sin z - (3/z^2) cos z at z = i
        let z = c(0.0, 1.0);
        let closed = (3.0 / (z * z * z) - z.inv()) * z.sin() - 3.0 / (z * z) * z.cos();
        let got = spherical_bessel_j(2, z);
        assert!((got - closed).norm() < 1e-14 * closed.norm(), "{got} vs {closed}");
    }

    #[test]
    fn bessel_three_term_recurrence() {
        // j_{n-1}(z) + j_{n+1}(z) = (2n+1)/z j_n(z) mixes orders whose
        // evaluation paths differ, so it exposes any series/Hankel
        // inconsistency.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let n = rng.random_range(1..=8u32);
            let z = c(
                12.0 * (rng.random::<f64>() - 0.5),
                12.0 * (rng.random::<f64>() - 0.5),
            );
            if z.norm() < 0.3 {
                continue;
            }
            let lhs = spherical_bessel_j(n - 1, z) + spherical_bessel_j(n + 1, z);
            let rhs = (2 * n + 1) as f64 / z * spherical_bessel_j(n, z);
            let scale = lhs.norm().max(rhs.norm()).max(1e-30);
            assert!(
                (lhs - rhs).norm() < 1e-9 * scale,
                "n = {n}, z = {z}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn hankel_h0_closed_form() {
        // h1_0(z) = -i e^(iz) / z at z = i gives -exp(-1)
        let v = spherical_hankel_h1(0, c(0.0, 1.0)).unwrap();
        assert!((v.re + (-1.0f64).exp()).abs() < 1e-15, "{v}");
        assert!(v.im.abs() < 1e-16);
    }

    #[test]
    fn hankel_pole_at_origin() {
        assert!(spherical_hankel_h1(3, ZERO).is_err());
    }

    #[test]
    fn hankel_large_imaginary_axis_decay() {
        for &y in &[5.0, 20.0, 100.0] {
            let v = spherical_hankel_h1(0, c(0.0, y)).unwrap();
            let expect = (-y).exp() / y;
            assert!((v.norm() - expect).abs() < 1e-10 * expect, "y = {y}");
        }
    }

    #[test]
    fn wronskian_identity() {
        // j_n h1_n' - j_n' h1_n = i / z^2
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.random_range(0..=6u32);
            let z = c(
                4.0 * (rng.random::<f64>() - 0.5),
                4.0 * (rng.random::<f64>() - 0.25),
            );
            if z.norm() < 0.2 {
                continue;
            }
            let lhs = spherical_bessel_j(n, z) * h1_prime(n, z)
                - j_prime(n, z) * spherical_hankel_h1(n, z).unwrap();
            let rhs = I / (z * z);
            assert!(
                (lhs - rhs).norm() < 1e-9 * rhs.norm(),
                "n = {n}, z = {z}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn mu_zero_real_axis_closed_form() {
        // mu_0(kappa) = (1 - exp(-2 kappa)) / (2 kappa) on the real axis
        for &kappa in &[0.3, 1.0, 4.0] {
            let v = mu_n(0, c(kappa, 0.0)).unwrap();
            let expect = (1.0 - (-2.0 * kappa).exp()) / (2.0 * kappa);
            assert!((v.re - expect).abs() < 1e-13 * expect, "kappa = {kappa}");
            assert!(v.im.abs() < 1e-14);
        }
        let v = mu_n(0, c(1.0, 0.0)).unwrap();
        assert!((v.re - 0.432332358).abs() < 1e-9);
    }

    #[test]
    fn mu_zero_small_argument_limit() {
        // kappa -> 0+ approaches the static single-layer eigenvalue 1
        let v = mu_n(0, c(1e-6, 0.0)).unwrap();
        assert!((v.re - 1.0).abs() < 1e-5, "{v}");
    }

    #[test]
    fn mu_two_right_half_plane() {
        let v = mu_n(2, c(1.0, 1.0)).unwrap();
        assert!(v.norm() > 0.0 && v.re > 0.0, "{v}");
        // coercivity smoke test over a sample of the right half plane
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let s = c(
                5.0 * rng.random::<f64>() + 1e-3,
                8.0 * (rng.random::<f64>() - 0.5),
            );
            let v = mu_n(2, s).unwrap();
            assert!(v.re > 0.0, "Re mu_2({s}) = {}", v.re);
        }
    }

    #[test]
    fn mu_conjugate_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let n = rng.random_range(0..=5u32);
            let s = c(
                4.0 * rng.random::<f64>() + 0.01,
                6.0 * (rng.random::<f64>() - 0.5),
            );
            let a = mu_n(n, s).unwrap();
            let b = mu_n(n, s.conj()).unwrap();
            assert!(
                (a.conj() - b).norm() < 1e-12 * a.norm().max(1e-3),
                "n = {n}, s = {s}"
            );
        }
    }

    #[test]
    fn density_zero_profile() {
        let cfg = HeatExperimentConfig::new(
            2,
            Arc::new(|_| 0.0),
            2.0,
            builtin_tableau("radau_iia_2").unwrap(),
            &[8, 16],
        )
        .unwrap();
        let seq = solve_heat_density(&cfg, 0.25).unwrap();
        assert_eq!(seq.max_abs(), 0.0);
    }

    #[test]
    fn density_symbol_round_trip() {
        let cfg = HeatExperimentConfig::new(
            2,
            Arc::new(default_psi),
            2.0,
            builtin_tableau("radau_iia_2").unwrap(),
            &[16],
        )
        .unwrap();
        let k = 2.0 / 16.0;
        let density = solve_heat_density(&cfg, k).unwrap();
        let recovered = apply_forward_symbol(&cfg, k, &density).unwrap();
        let psi_samples = StageSequence::from_scalar_samples(&cfg.tableau, k, 16, default_psi);
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for n in 0..16 {
            err = err.max((recovered.stage(n) - psi_samples.stage(n)).amax());
            scale = scale.max(psi_samples.stage(n).amax());
        }
        assert!(err < 1e-7 * scale.max(1.0), "round trip error {err}");
    }

    #[test]
    fn incompatible_profile_rejected() {
        // t^2 e^{-t} has a nonzero second derivative at zero
        let result = HeatExperimentConfig::new(
            2,
            Arc::new(|t: f64| t * t * (-t).exp()),
            2.0,
            builtin_tableau("radau_iia_3").unwrap(),
            &[8, 16],
        );
        assert!(result.is_err());
    }
}
