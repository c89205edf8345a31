//! Runge-Kutta methods as data: Butcher tableaus, their stability
//! function, order-condition validation and method classification.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::zlin::{self, ComplexMatrix};

/// Default tolerance for order-condition residuals.
pub const ORDER_CONDITION_TOL: f64 = 1e-10;
/// Default tolerance for algebraic identities (stiff accuracy, row sums).
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Condition-number cap for the coefficient matrix.
pub const CONDITION_CAP: f64 = 1e12;

pub const BUILTIN_NAMES: [&str; 7] = [
    "radau_iia_1",
    "radau_iia_2",
    "radau_iia_3",
    "radau_iia_5",
    "gauss_1",
    "gauss_2",
    "lobatto_iiic_2",
];

/// An implicit Runge-Kutta method with an invertible coefficient matrix.
///
/// `stage_order` is the largest l with `c^l = l Q c^(l-1)`; `order` is the
/// classical order encoded by `b^T Q^j c^l = l!/(j+l+1)!`.
#[derive(Clone, Debug)]
pub struct ButcherTableau {
    name: String,
    stages: usize,
    matrix: DMatrix<f64>,
    weights: DVector<f64>,
    nodes: DVector<f64>,
    stage_order: usize,
    order: usize,
    // cached derived quantities
    inv_matrix: DMatrix<f64>,
    weights_inv: DVector<f64>,  // b^T Q^-1 (as a column)
    inv_row_sums: DVector<f64>, // Q^-1 1
    r_inf: f64,
}

impl ButcherTableau {
    pub fn new(
        name: &str,
        matrix: DMatrix<f64>,
        weights: DVector<f64>,
        nodes: DVector<f64>,
        stage_order: usize,
        order: usize,
    ) -> Result<Self> {
        let t = Self::raw(name, matrix, weights, nodes, stage_order, order)?;
        let ones = DVector::from_element(t.stages, 1.0);
        let row_sum_defect = (&t.nodes - &t.matrix * ones).amax();
        if row_sum_defect > ALGEBRAIC_TOL {
            return Err(Error::InvalidTableau {
                name: t.name,
                reason: format!("row-sum consistency c = Q*1 violated by {row_sum_defect:.3e}"),
            });
        }
        let cond = t.matrix.lp_norm(1) * t.inv_matrix.lp_norm(1);
        if cond > CONDITION_CAP {
            return Err(Error::InvalidTableau {
                name: t.name,
                reason: format!("coefficient matrix condition {cond:.3e} exceeds cap"),
            });
        }
        let report = t.validate_order_conditions(ORDER_CONDITION_TOL);
        if !report.all_within() {
            return Err(Error::InvalidTableau {
                name: t.name,
                reason: format!(
                    "order conditions fail for declared orders ({}, {}): worst residual {:.3e}",
                    t.stage_order,
                    t.order,
                    report.max_residual()
                ),
            });
        }
        Ok(t)
    }

    /// Build without validating row sums or order conditions. Intended for
    /// experiments with deliberately perturbed coefficients.
    pub fn raw(
        name: &str,
        matrix: DMatrix<f64>,
        weights: DVector<f64>,
        nodes: DVector<f64>,
        stage_order: usize,
        order: usize,
    ) -> Result<Self> {
        let m = matrix.nrows();
        if m == 0 || matrix.ncols() != m || weights.len() != m || nodes.len() != m {
            return Err(Error::InvalidTableau {
                name: name.to_string(),
                reason: "inconsistent coefficient dimensions".to_string(),
            });
        }
        if stage_order == 0 || order == 0 {
            return Err(Error::InvalidTableau {
                name: name.to_string(),
                reason: "declared orders must be positive".to_string(),
            });
        }
        let inv_matrix = matrix.clone().try_inverse().ok_or(Error::InvalidTableau {
            name: name.to_string(),
            reason: "coefficient matrix is singular".to_string(),
        })?;
        let weights_inv = inv_matrix.transpose() * &weights;
        let inv_row_sums = &inv_matrix * DVector::from_element(m, 1.0);
        let r_inf = 1.0 - weights.dot(&inv_row_sums);
        Ok(Self {
            name: name.to_string(),
            stages: m,
            matrix,
            weights,
            nodes,
            stage_order,
            order,
            inv_matrix,
            weights_inv,
            inv_row_sums,
            r_inf,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// The coefficient matrix Q.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn nodes(&self) -> &DVector<f64> {
        &self.nodes
    }

    pub fn stage_order(&self) -> usize {
        self.stage_order
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn inv_matrix(&self) -> &DMatrix<f64> {
        &self.inv_matrix
    }

    /// The row vector `b^T Q^-1`, stored as a column.
    pub fn weights_inv(&self) -> &DVector<f64> {
        &self.weights_inv
    }

    /// The column `Q^-1 1`.
    pub fn inv_row_sums(&self) -> &DVector<f64> {
        &self.inv_row_sums
    }

    /// The limit of the stability function at infinity, `1 - b^T Q^-1 1`.
    pub fn r_infinity(&self) -> f64 {
        self.r_inf
    }

    pub fn is_stiffly_accurate(&self, tol: f64) -> bool {
        let m = self.stages;
        let mut defect: f64 = 0.0;
        for i in 0..m {
            let target = if i == m - 1 { 1.0 } else { 0.0 };
            defect = defect.max((self.weights_inv[i] - target).abs());
        }
        defect <= tol
    }

    /// Stability function `r(z) = 1 + z b^T (I - zQ)^-1 1`.
    pub fn stability_function(&self, z: Complex64) -> Result<Complex64> {
        if z == Complex64::new(0.0, 0.0) {
            return Ok(Complex64::new(1.0, 0.0));
        }
        let m = self.stages;
        let mut a = ComplexMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let mut v = -z * self.matrix[(i, j)];
                if i == j {
                    v += 1.0;
                }
                a[(i, j)] = v;
            }
        }
        let ones = vec![Complex64::new(1.0, 0.0); m];
        let y = zlin::solve_vec(&a, &ones)?;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..m {
            acc += self.weights[i] * y[i];
        }
        Ok(Complex64::new(1.0, 0.0) + z * acc)
    }

    /// Residuals of the stage-order and classical order conditions for the
    /// declared orders.
    pub fn validate_order_conditions(&self, tol: f64) -> OrderConditionReport {
        let mut residuals = Vec::new();
        // stage conditions: c^l = l Q c^(l-1), 1 <= l <= q
        for l in 1..=self.stage_order {
            let cl = self.nodes.map(|v| v.powi(l as i32));
            let clm1 = self.nodes.map(|v| v.powi(l as i32 - 1));
            let defect = (&cl - (l as f64) * (&self.matrix * clm1)).amax();
            residuals.push(ConditionResidual {
                kind: ConditionKind::Stage { l },
                residual: defect,
            });
        }
        // classical conditions: b^T Q^j c^l = l!/(j+l+1)!, 0 <= j+l <= p-1
        for j in 0..self.order {
            // v = Q^j c^l built incrementally over l for fixed j
            for l in 0..self.order - j {
                let mut v = self.nodes.map(|x| x.powi(l as i32));
                for _ in 0..j {
                    v = &self.matrix * v;
                }
                // l!/(j+l+1)! = 1/((l+1)(l+2)...(j+l+1))
                let mut target = 1.0;
                for f in l + 1..=j + l + 1 {
                    target /= f as f64;
                }
                residuals.push(ConditionResidual {
                    kind: ConditionKind::Classical { j, l },
                    residual: (self.weights.dot(&v) - target).abs(),
                });
            }
        }
        OrderConditionReport { residuals, tol }
    }

    /// Classify the method against a sampling of the imaginary axis plus an
    /// exact analysis of `|r(it)|^2 - 1` as a polynomial in `t^2`.
    pub fn classify(&self, grid: &StabilityGrid) -> MethodClassReport {
        let r_at_infinity = self.r_inf;
        let stiffly_accurate = self.is_stiffly_accurate(ALGEBRAIC_TOL);

        let mut max_axis_modulus: f64 = 1.0; // |r(0)| = 1
        for &t in grid.samples().iter() {
            match self.stability_function(Complex64::new(0.0, t)) {
                Ok(r) => max_axis_modulus = max_axis_modulus.max(r.norm()),
                Err(_) => max_axis_modulus = f64::INFINITY,
            }
        }
        let poles_in_rhp = match zlin::eig(&ComplexMatrix::from_real(&self.matrix)) {
            Ok(e) => e.values.iter().all(|l| l.re > 0.0),
            Err(_) => false,
        };
        let a_stable = poles_in_rhp && max_axis_modulus <= 1.0 + ALGEBRAIC_TOL;
        let strictly_a_stable =
            a_stable && r_at_infinity < 1.0 - ALGEBRAIC_TOL && self.axis_modulus_strictly_below_one();

        MethodClassReport {
            a_stable,
            strictly_a_stable,
            stiffly_accurate,
            r_at_infinity,
            max_axis_modulus,
        }
    }

    /// Decide whether `|r(it)| < 1` for all real `t != 0`.
    ///
    /// Writing `r = num/den` with `den(z) = det(I - zQ)` and
    /// `num(z) = det(I - z(Q - 1 b^T))`, the difference
    /// `|den(it)|^2 - |num(it)|^2` is a polynomial in `s = t^2`. Strict
    /// damping off the origin is equivalent to that polynomial being
    /// positive on (0, inf), which is decided from its coefficients and
    /// its roots (via a companion matrix).
    fn axis_modulus_strictly_below_one(&self) -> bool {
        let m = self.stages;
        let ones_bt = DVector::from_element(m, 1.0) * self.weights.transpose();
        let den = det_linear_pencil_coeffs(&self.matrix);
        let num = det_linear_pencil_coeffs(&(&self.matrix - ones_bt));
        let scale = den.iter().map(|v| v.abs()).sum::<f64>().powi(2)
            + num.iter().map(|v| v.abs()).sum::<f64>().powi(2);
        let mut p = vec![0.0; m + 1];
        for (j, pj) in p.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..=(2 * j).min(m) {
                let l = 2 * j - k;
                if l > m {
                    continue;
                }
                let sign = if (l + j) % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * (den[k] * den[l] - num[k] * num[l]);
            }
            *pj = acc;
        }
        let tol = 3e-13 * scale.max(1.0);
        let lowest = match p.iter().position(|v| v.abs() > tol) {
            Some(i) => i,
            None => return false, // |r(it)| identically 1
        };
        let highest = p.iter().rposition(|v| v.abs() > tol).unwrap();
        if p[lowest] <= 0.0 || p[highest] <= 0.0 {
            return false;
        }
        let reduced: Vec<f64> = p[lowest..=highest].to_vec();
        if reduced.len() == 1 {
            return true;
        }
        // companion matrix of the reduced polynomial
        let deg = reduced.len() - 1;
        let lead = reduced[deg];
        let mut comp = ComplexMatrix::zeros(deg, deg);
        for i in 1..deg {
            comp[(i, i - 1)] = Complex64::new(1.0, 0.0);
        }
        for i in 0..deg {
            comp[(i, deg - 1)] = Complex64::new(-reduced[i] / lead, 0.0);
        }
        match zlin::eig(&comp) {
            Ok(e) => e
                .values
                .iter()
                .all(|root| !(root.re > 1e-9 && root.im.abs() <= 1e-6 * (1.0 + root.re.abs()))),
            Err(_) => false,
        }
    }
}

/// Coefficients of `det(I - zM)` in powers of `z`, via sums of principal
/// minors. Intended for the small stage counts used here.
fn det_linear_pencil_coeffs(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[0] = 1.0;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = idx.len();
        let sub = DMatrix::from_fn(k, k, |r, c| m[(idx[r], idx[c])]);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        coeffs[k] += sign * sub.determinant();
    }
    coeffs
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConditionKind {
    Stage { l: usize },
    Classical { j: usize, l: usize },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConditionResidual {
    pub kind: ConditionKind,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderConditionReport {
    pub residuals: Vec<ConditionResidual>,
    pub tol: f64,
}

impl OrderConditionReport {
    pub fn failures(&self) -> Vec<&ConditionResidual> {
        self.residuals
            .iter()
            .filter(|r| r.residual > self.tol)
            .collect()
    }

    pub fn all_within(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.residual)
            .fold(0.0, f64::max)
    }
}

/// Sampling of the imaginary axis used for A-stability evidence:
/// log-spaced magnitudes, both signs (zero is implied, where r = 1).
#[derive(Clone, Copy, Debug)]
pub struct StabilityGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Default for StabilityGrid {
    fn default() -> Self {
        Self {
            t_min: 1e-3,
            t_max: 1e6,
            points: 400,
        }
    }
}

impl StabilityGrid {
    pub fn samples(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.points);
        let (lo, hi) = (self.t_min.ln(), self.t_max.ln());
        for i in 0..self.points {
            let f = if self.points == 1 {
                0.0
            } else {
                i as f64 / (self.points - 1) as f64
            };
            let t = (lo + f * (hi - lo)).exp();
            out.push(t);
            out.push(-t);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MethodClassReport {
    pub a_stable: bool,
    /// A-stable with `|r(it)| < 1` for all t != 0 and `r(inf) < 1`.
    pub strictly_a_stable: bool,
    pub stiffly_accurate: bool,
    pub r_at_infinity: f64,
    /// Evidence for A-stability: max |r(it)| over the sample grid.
    pub max_axis_modulus: f64,
}

/// Look up one of the built-in tableaus by name.
pub fn builtin_tableau(name: &str) -> Result<ButcherTableau> {
    match name {
        "radau_iia_1" => radau_iia_1(),
        "radau_iia_2" => radau_iia_2(),
        "radau_iia_3" => radau_iia_3(),
        "radau_iia_5" => radau_iia_5(),
        "gauss_1" => gauss_1(),
        "gauss_2" => gauss_2(),
        "lobatto_iiic_2" => lobatto_iiic_2(),
        other => Err(Error::UnknownMethod(
            other.to_string(),
            BUILTIN_NAMES.join(", "),
        )),
    }
}

/// All built-in tableaus.
pub fn builtin_tableaus() -> Vec<ButcherTableau> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin_tableau(n).expect("builtin"))
        .collect()
}

/// Backward Euler, the one-stage Radau IIA method.
pub fn radau_iia_1() -> Result<ButcherTableau> {
    ButcherTableau::new(
        "radau_iia_1",
        DMatrix::from_row_slice(1, 1, &[1.0]),
        DVector::from_row_slice(&[1.0]),
        DVector::from_row_slice(&[1.0]),
        1,
        1,
    )
}

/// Two-stage Radau IIA, orders (2, 3).
pub fn radau_iia_2() -> Result<ButcherTableau> {
    ButcherTableau::new(
        "radau_iia_2",
        DMatrix::from_row_slice(2, 2, &[5.0 / 12.0, -1.0 / 12.0, 3.0 / 4.0, 1.0 / 4.0]),
        DVector::from_row_slice(&[3.0 / 4.0, 1.0 / 4.0]),
        DVector::from_row_slice(&[1.0 / 3.0, 1.0]),
        2,
        3,
    )
}

// The three- and five-stage Radau IIA coefficients below were constructed
// from the right Radau nodes (roots of P_m(2x-1) - P_{m-1}(2x-1), last node
// 1) by solving the stage-order conditions sum_j Q_ij c_j^(l-1) = c_i^l / l
// for each row in 50-digit arithmetic, then rounding to f64; b is the last
// row. The `radau_construction_matches_literals` test repeats the
// construction in double precision.

/// Three-stage Radau IIA, orders (3, 5).
pub fn radau_iia_3() -> Result<ButcherTableau> {
    ButcherTableau::new(
        "radau_iia_3",
        DMatrix::from_row_slice(
            3,
            3,
            &[
                0.1968154772236604,
                -0.06553542585019839,
                0.02377097434822015,
                0.3944243147390873,
                0.2920734116652285,
                -0.04154875212599793,
                0.37640306270046725,
                0.5124858261884216,
                0.1111111111111111,
            ],
        ),
        DVector::from_row_slice(&[0.37640306270046725, 0.5124858261884216, 0.1111111111111111]),
        DVector::from_row_slice(&[0.1550510257216822, 0.6449489742783178, 1.0]),
        3,
        5,
    )
}

/// Five-stage Radau IIA, orders (5, 9).
pub fn radau_iia_5() -> Result<ButcherTableau> {
    ButcherTableau::new(
        "radau_iia_5",
        DMatrix::from_row_slice(
            5,
            5,
            &[
                0.07299886431790333,
                -0.02673533110794557,
                0.018676929763984353,
                -0.01287910609330644,
                0.005042839233882015,
                0.15377523147918246,
                0.14621486784749352,
                -0.03644456890512809,
                0.02123306311930472,
                -0.007935579902728777,
                0.14006304568480987,
                0.29896712949128346,
                0.16758507013524895,
                -0.03396910168661774,
                0.010944288744192253,
                0.14489430810953477,
                0.2765000687601592,
                0.32579792291042103,
                0.12875675325490976,
                -0.015708917378805327,
                0.14371356079122594,
                0.28135601514946207,
                0.31182652297574126,
                0.22310390108357075,
                0.04,
            ],
        ),
        DVector::from_row_slice(&[
            0.14371356079122594,
            0.28135601514946207,
            0.31182652297574126,
            0.22310390108357075,
            0.04,
        ]),
        DVector::from_row_slice(&[
            0.05710419611451768,
            0.2768430136381238,
            0.5835904323689168,
            0.8602401356562195,
            1.0,
        ]),
        5,
        9,
    )
}

/// Implicit midpoint rule, the one-stage Gauss method.
pub fn gauss_1() -> Result<ButcherTableau> {
    ButcherTableau::new(
        "gauss_1",
        DMatrix::from_row_slice(1, 1, &[0.5]),
        DVector::from_row_slice(&[1.0]),
        DVector::from_row_slice(&[0.5]),
        1,
        2,
    )
}

/// Two-stage Gauss method, orders (2, 4).
pub fn gauss_2() -> Result<ButcherTableau> {
    let s = 3f64.sqrt() / 6.0;
    ButcherTableau::new(
        "gauss_2",
        DMatrix::from_row_slice(2, 2, &[0.25, 0.25 - s, 0.25 + s, 0.25]),
        DVector::from_row_slice(&[0.5, 0.5]),
        DVector::from_row_slice(&[0.5 - s, 0.5 + s]),
        2,
        4,
    )
}

/// Two-stage Lobatto IIIC, orders (1, 2).
pub fn lobatto_iiic_2() -> Result<ButcherTableau> {
    ButcherTableau::new(
        "lobatto_iiic_2",
        DMatrix::from_row_slice(2, 2, &[0.5, -0.5, 0.5, 0.5]),
        DVector::from_row_slice(&[0.5, 0.5]),
        DVector::from_row_slice(&[0.0, 1.0]),
        1,
        2,
    )
}
