//! Saddle-point principles for exit-time functionals.
//!
//! The discrete minimax functional is F(f, g) = E_β(f−g, f+g), expanded as
//! fᵀBf − gᵀBg + fᵀ(B − Bᵀ)g with B = W(βI + Q). Over the affine slices
//! Σ w f ξ = δ, Σ w g ξ = 0 it has a unique saddle whose value is the
//! reciprocal of the weighted source pairing of the Poisson solution. Two
//! independent routes compute it here: the constructive one from a pair of
//! forward/adjoint solves, and a direct KKT solve of the stationarity
//! system. Their agreement is an end-to-end check on assembly, band
//! factorization, and the adjoint.

use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, BandLu, BandMatrix, Csr};
use crate::operator::{adjoint_of, bilinear_form, DiscreteOperator};
use crate::poisson::{solve_dirichlet, GridFunction};
use crate::rng::derive_stream;

/// Affine trial space: functions h with Σ_i w_i h_i ξ_i equal to the target
/// δ, optionally supported on a node mask.
#[derive(Debug, Clone)]
pub struct TrialSpaceSpec {
    pairing: Vec<f64>,
    delta: f64,
    mask: Option<Vec<bool>>,
}

impl TrialSpaceSpec {
    /// Pair ξ against the operator's cell weights. δ must be 0 or 1.
    pub fn new(op: &DiscreteOperator, xi: &GridFunction, delta: f64) -> Result<TrialSpaceSpec> {
        if !xi.grid().same_layout(op.grid()) {
            return Err(Error::GridMismatch);
        }
        if delta != 0.0 && delta != 1.0 {
            return Err(Error::Inconsistent {
                detail: format!("constraint target must be 0 or 1, got {delta}"),
            });
        }
        let pairing: Vec<f64> = xi
            .values()
            .iter()
            .zip(op.weights())
            .map(|(&x, &w)| w * x)
            .collect();
        if pairing.iter().all(|&c| c == 0.0) {
            return Err(Error::InfeasibleConstraint);
        }
        Ok(TrialSpaceSpec {
            pairing,
            delta,
            mask: None,
        })
    }

    /// Restrict the support to the masked nodes (the compactly supported
    /// subspaces of the exhaustion argument).
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<TrialSpaceSpec> {
        if mask.len() != self.pairing.len() {
            return Err(Error::MaskMismatch {
                mask_len: mask.len(),
                interior: self.pairing.len(),
            });
        }
        if self
            .pairing
            .iter()
            .zip(&mask)
            .all(|(&c, &m)| !m || c == 0.0)
        {
            return Err(Error::InfeasibleConstraint);
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn pairing(&self) -> &[f64] {
        &self.pairing
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    fn kept_indices(&self) -> Vec<usize> {
        match &self.mask {
            None => (0..self.pairing.len()).collect(),
            Some(m) => (0..self.pairing.len()).filter(|&i| m[i]).collect(),
        }
    }

    /// Pairing vector with entries off the support zeroed.
    fn masked_pairing(&self) -> Vec<f64> {
        match &self.mask {
            None => self.pairing.clone(),
            Some(m) => self
                .pairing
                .iter()
                .zip(m)
                .map(|(&c, &keep)| if keep { c } else { 0.0 })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaddleMethod {
    FromPoisson,
    DirectKkt,
}

impl std::fmt::Display for SaddleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SaddleMethod::FromPoisson => write!(f, "from-poisson"),
            SaddleMethod::DirectKkt => write!(f, "direct-kkt"),
        }
    }
}

/// A stationary point of the minimax functional on the affine slices.
#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub f: GridFunction,
    pub g: GridFunction,
    pub value: f64,
    pub lambda_f: f64,
    pub lambda_g: f64,
    pub method: SaddleMethod,
    /// |Σ w f ξ − δ| and |Σ w g ξ|.
    pub constraint_residual_f: f64,
    pub constraint_residual_g: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// F(f, g) = E_β(f − g, f + g).
pub fn evaluate_minimax_functional(
    f: &GridFunction,
    g: &GridFunction,
    op: &DiscreteOperator,
    beta: f64,
) -> Result<f64> {
    let diff = GridFunction::lin_comb(1.0, f, -1.0, g)?;
    let sum = GridFunction::lin_comb(1.0, f, 1.0, g)?;
    bilinear_form(&diff, &sum, op, beta)
}

fn check_constraints(
    pairing: &[f64],
    delta: f64,
    f: &GridFunction,
    g: &GridFunction,
) -> Result<(f64, f64)> {
    let rf = (dot(pairing, f.values()) - delta).abs();
    let rg = dot(pairing, g.values()).abs();
    let tol = 1e-10 * delta.abs().max(1.0);
    if rf > tol || rg > tol {
        return Err(Error::Inconsistent {
            detail: format!("saddle constraint residuals {rf:.3e}, {rg:.3e} exceed {tol:.3e}"),
        });
    }
    Ok((rf, rg))
}

/// Saddle point built from the forward and adjoint Poisson solutions.
///
/// With u, ũ the solutions for source ξ and N = Σ w u ξ (equal to Σ w ũ ξ
/// in exact arithmetic, since both express E_β(ũ, u)), the components are
/// f* = (u/N + ũ/Ñ)/2, g* = (u/N − ũ/Ñ)/2, and the value is 1/N.
pub fn saddle_from_poisson(
    op: &DiscreteOperator,
    beta: f64,
    xi: &GridFunction,
) -> Result<SaddleSolution> {
    if beta < 0.0 {
        return Err(Error::NegativeBeta);
    }
    if !xi.grid().same_layout(op.grid()) {
        return Err(Error::GridMismatch);
    }
    let u = solve_dirichlet(op, beta, xi)?;
    let u_tilde = if op.has_uniform_weights() {
        solve_dirichlet(&adjoint_of(op)?, beta, xi)?
    } else {
        // The weighted assembly is self-adjoint in its own weights, so the
        // adjoint solve would reproduce u exactly.
        u.clone()
    };

    let w = op.weights();
    let wnorm = |h: &GridFunction| {
        h.values()
            .iter()
            .zip(w)
            .map(|(&v, &wi)| wi * v * v)
            .sum::<f64>()
            .sqrt()
    };
    let norm_xi = wnorm(xi);
    let mut normalizers = [0.0; 2];
    for (slot, h) in normalizers.iter_mut().zip([&u, &u_tilde]) {
        let numer = h.weighted_dot(w, xi);
        let bound = 1e-12 * wnorm(h) * norm_xi;
        // Coercive assemblies make this pairing an energy, so the guard only
        // fires for a vanishing source or a genuinely indefinite matrix.
        if numer.abs() <= bound {
            return Err(Error::DegenerateSource {
                normalizer: numer,
                bound,
            });
        }
        *slot = numer;
    }
    let [n_fwd, n_adj] = normalizers;

    let f = GridFunction::lin_comb(0.5 / n_fwd, &u, 0.5 / n_adj, &u_tilde)?;
    let g = GridFunction::lin_comb(0.5 / n_fwd, &u, -0.5 / n_adj, &u_tilde)?;
    let value = 1.0 / n_fwd;

    let check = evaluate_minimax_functional(&f, &g, op, beta)?;
    if (check - value).abs() > 1e-10 * value.abs() {
        return Err(Error::Inconsistent {
            detail: format!(
                "minimax functional {check:.16e} disagrees with saddle value {value:.16e}"
            ),
        });
    }

    let pairing: Vec<f64> = xi
        .values()
        .iter()
        .zip(w)
        .map(|(&x, &wi)| wi * x)
        .collect();
    let (rf, rg) = check_constraints(&pairing, 1.0, &f, &g)?;

    Ok(SaddleSolution {
        f,
        g,
        value,
        lambda_f: 2.0 * value,
        lambda_g: 0.0,
        method: SaddleMethod::FromPoisson,
        constraint_residual_f: rf,
        constraint_residual_g: rg,
    })
}

/// Solve the KKT stationarity system of F on the constrained slices.
///
/// Unknowns are interleaved (f_i, g_i) so the block system
///   S f + K g = λ_f c,   −K f − S g = λ_g c,   cᵀf = δ,   cᵀg = 0
/// with S = B + Bᵀ, K = B − Bᵀ keeps the band profile of Q. The two
/// constraint borders are eliminated by a Schur complement on the factored
/// band. A support mask restricts the unknowns to the masked nodes.
pub fn saddle_direct(
    op: &DiscreteOperator,
    beta: f64,
    space: &TrialSpaceSpec,
) -> Result<SaddleSolution> {
    if beta < 0.0 {
        return Err(Error::NegativeBeta);
    }
    let n = op.grid().num_interior();
    if space.pairing.len() != n {
        return Err(Error::GridMismatch);
    }
    let keep = space.kept_indices();
    let m = keep.len();
    if m == 0 {
        return Err(Error::InfeasibleConstraint);
    }
    let c: Vec<f64> = keep.iter().map(|&i| space.pairing[i]).collect();
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::InfeasibleConstraint);
    }
    let w: Vec<f64> = keep.iter().map(|&i| op.weights()[i]).collect();

    let q_sub;
    let q: &Csr = if m == n {
        op.matrix()
    } else {
        q_sub = op.matrix().submatrix(&keep);
        &q_sub
    };

    let mut trips: Vec<(usize, usize, f64)> = Vec::with_capacity(8 * q.nnz() + 2 * m);
    for (i, j, v) in q.entries() {
        let b = w[i] * v;
        trips.push((2 * i, 2 * j, b));
        trips.push((2 * j, 2 * i, b));
        trips.push((2 * i, 2 * j + 1, b));
        trips.push((2 * j, 2 * i + 1, -b));
        trips.push((2 * i + 1, 2 * j, -b));
        trips.push((2 * j + 1, 2 * i, b));
        trips.push((2 * i + 1, 2 * j + 1, -b));
        trips.push((2 * j + 1, 2 * i + 1, -b));
    }
    for (i, &wi) in w.iter().enumerate() {
        trips.push((2 * i, 2 * i, 2.0 * beta * wi));
        trips.push((2 * i + 1, 2 * i + 1, -2.0 * beta * wi));
    }
    let kkt = Csr::from_triplets(2 * m, 2 * m, &trips);
    let lu = BandLu::factor(BandMatrix::from_csr(&kkt))?;

    let mut rhs_f = vec![0.0; 2 * m];
    let mut rhs_g = vec![0.0; 2 * m];
    for (i, &ci) in c.iter().enumerate() {
        rhs_f[2 * i] = ci;
        rhs_g[2 * i + 1] = ci;
    }
    let y_f = lu.solve(&rhs_f);
    let y_g = lu.solve(&rhs_g);

    // 2x2 Schur complement CᵀA⁻¹C of the constraint borders.
    let s = [
        [dot(&rhs_f, &y_f), dot(&rhs_f, &y_g)],
        [dot(&rhs_g, &y_f), dot(&rhs_g, &y_g)],
    ];
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let scale = s
        .iter()
        .flatten()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if det.abs() <= 1e-14 * scale * scale {
        return Err(Error::Singular {
            min_pivot: det.abs(),
            max_pivot: scale * scale,
        });
    }
    let lambda_f = space.delta * s[1][1] / det;
    let lambda_g = -space.delta * s[1][0] / det;

    let mut f_full = vec![0.0; n];
    let mut g_full = vec![0.0; n];
    for (i, &node) in keep.iter().enumerate() {
        f_full[node] = lambda_f * y_f[2 * i] + lambda_g * y_g[2 * i];
        g_full[node] = lambda_f * y_f[2 * i + 1] + lambda_g * y_g[2 * i + 1];
    }
    let f = GridFunction::from_values(op.grid(), f_full)?;
    let g = GridFunction::from_values(op.grid(), g_full)?;

    let value = evaluate_minimax_functional(&f, &g, op, beta)?;
    let (rf, rg) = check_constraints(&space.pairing, space.delta, &f, &g)?;

    Ok(SaddleSolution {
        f,
        g,
        value,
        lambda_f,
        lambda_g,
        method: SaddleMethod::DirectKkt,
        constraint_residual_f: rf,
        constraint_residual_g: rg,
    })
}

/// Margins from random admissible perturbations of a saddle point.
///
/// Each trial perturbs g by an admissible direction (and separately f);
/// the saddle property demands F(f*, g* + δg) ≤ value and
/// F(f* + δf, g*) ≥ value, up to the stated slack.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub trials: usize,
    /// min/max over trials of F(f* + δf, g*) − value; should be ≥ −slack.
    pub f_margin_min: f64,
    pub f_margin_max: f64,
    /// min/max over trials of value − F(f*, g* + δg); should be ≥ −slack.
    pub g_margin_min: f64,
    pub g_margin_max: f64,
    pub slack: f64,
    pub all_within: bool,
}

const AUDIT_SLACK: f64 = 1e-10;

fn admissible_direction(
    rng: &mut rand_chacha::ChaCha8Rng,
    masked_pairing: &[f64],
    mask: Option<&[bool]>,
    weights: &[f64],
) -> Vec<f64> {
    use rand::Rng;
    let n = masked_pairing.len();
    let mut d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    if let Some(m) = mask {
        for (di, &keep) in d.iter_mut().zip(m) {
            if !keep {
                *di = 0.0;
            }
        }
    }
    // Project onto the constraint null space, then normalize in the
    // weighted norm.
    let cc = dot(masked_pairing, masked_pairing);
    if cc > 0.0 {
        let coef = dot(masked_pairing, &d) / cc;
        for (di, &ci) in d.iter_mut().zip(masked_pairing) {
            *di -= coef * ci;
        }
    }
    let norm = d
        .iter()
        .zip(weights)
        .map(|(&v, &wi)| wi * v * v)
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        for di in &mut d {
            *di /= norm;
        }
    }
    d
}

pub fn perturbation_audit(
    s: &SaddleSolution,
    op: &DiscreteOperator,
    beta: f64,
    space: &TrialSpaceSpec,
    trials: usize,
    seed: u64,
) -> Result<AuditReport> {
    let n = op.grid().num_interior();
    if space.pairing.len() != n || s.f.len() != n {
        return Err(Error::GridMismatch);
    }
    let masked = space.masked_pairing();

    let margins: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let mut rng = derive_stream(seed, t as u64);
            let dg = admissible_direction(&mut rng, &masked, space.mask(), op.weights());
            let df = admissible_direction(&mut rng, &masked, space.mask(), op.weights());

            let g_pert = GridFunction::from_values(
                op.grid(),
                s.g.values().iter().zip(&dg).map(|(&a, &b)| a + b).collect(),
            )?;
            let f_pert = GridFunction::from_values(
                op.grid(),
                s.f.values().iter().zip(&df).map(|(&a, &b)| a + b).collect(),
            )?;
            let upper = evaluate_minimax_functional(&s.f, &g_pert, op, beta)?;
            let lower = evaluate_minimax_functional(&f_pert, &s.g, op, beta)?;
            Ok((lower - s.value, s.value - upper))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = AuditReport {
        trials,
        f_margin_min: f64::INFINITY,
        f_margin_max: f64::NEG_INFINITY,
        g_margin_min: f64::INFINITY,
        g_margin_max: f64::NEG_INFINITY,
        slack: AUDIT_SLACK,
        all_within: true,
    };
    for (mf, mg) in margins {
        report.f_margin_min = report.f_margin_min.min(mf);
        report.f_margin_max = report.f_margin_max.max(mf);
        report.g_margin_min = report.g_margin_min.min(mg);
        report.g_margin_max = report.g_margin_max.max(mg);
    }
    report.all_within = trials == 0
        || (report.f_margin_min >= -AUDIT_SLACK && report.g_margin_min >= -AUDIT_SLACK);
    Ok(report)
}

/// Minimum of fᵀW(Q − βI)f over the affine slice, clamped at zero.
///
/// The form must be symmetric (zero drift, or the weighted self-adjoint
/// assembly). When the shifted matrix is positive definite the constrained
/// minimum is δ²/(cᵀM⁻¹c) > 0; otherwise the infimum is nonpositive: any
/// direction of nonpositive curvature either lies in the constraint null
/// space (infimum −∞) or can be rescaled to satisfy the constraint with a
/// negative objective. The clamp then returns exactly 0.
pub fn exp_moment_variational(
    op: &DiscreteOperator,
    beta: f64,
    space: &TrialSpaceSpec,
) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::NegativeBeta);
    }
    let n = op.grid().num_interior();
    if space.pairing.len() != n {
        return Err(Error::GridMismatch);
    }
    let keep = space.kept_indices();
    let m = keep.len();
    if m == 0 {
        return Err(Error::InfeasibleConstraint);
    }
    let c: Vec<f64> = keep.iter().map(|&i| space.pairing[i]).collect();
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::InfeasibleConstraint);
    }
    let w: Vec<f64> = keep.iter().map(|&i| op.weights()[i]).collect();

    let q_sub;
    let q: &Csr = if m == n {
        op.matrix()
    } else {
        q_sub = op.matrix().submatrix(&keep);
        &q_sub
    };

    let mut trips: Vec<(usize, usize, f64)> = Vec::with_capacity(q.nnz() + m);
    for (i, j, v) in q.entries() {
        trips.push((i, j, w[i] * v));
    }
    for (i, &wi) in w.iter().enumerate() {
        trips.push((i, i, -beta * wi));
    }
    let shifted = Csr::from_triplets(m, m, &trips);

    let asym = shifted.asymmetry();
    if asym > 1e-12 * shifted.max_abs() {
        return Err(Error::NotSymmetrizable { asym });
    }

    let chol = match BandCholesky::try_from_csr(&shifted) {
        Some(chol) => chol,
        None => return Ok(0.0),
    };
    let y = chol.solve(&c);
    let denom = dot(&c, &y);
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::Inconsistent {
            detail: format!("positive-definite branch produced cᵀM⁻¹c = {denom:.3e}"),
        });
    }
    Ok(space.delta * space.delta / denom)
}
