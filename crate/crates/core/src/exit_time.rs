//! Exit-time functionals computed on the PDE side: the mean, the Laplace
//! transform, the exponential moment with its divergence dichotomy, and the
//! principal Dirichlet eigenvalue.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::build_grid;
use crate::linalg::{BandCholesky, BandLu, BandMatrix, Csr};
use crate::operator::{assemble_generator, DiscreteOperator};
use crate::poisson::{solve_dirichlet, GridFunction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    Mean,
    Laplace(f64),
    ExpMoment(f64),
}

/// Node values of one exit-time functional together with the weighted sum
/// that enters its reciprocal value identity: Σ w E_xτ for the mean,
/// Σ w (1 − E_x e^{−βτ}) for the Laplace transform, Σ w (E_x e^{βτ} − 1)
/// for the exponential moment.
#[derive(Debug, Clone)]
pub struct ExitFunctionalProfile {
    pub kind: ProfileKind,
    /// Absent exactly when the functional diverges.
    pub values: Option<GridFunction>,
    pub integral: f64,
    pub divergent: bool,
}

pub fn mean_exit_profile(op: &DiscreteOperator) -> Result<ExitFunctionalProfile> {
    let ones = GridFunction::constant(1.0, op.grid());
    let u = solve_dirichlet(op, 0.0, &ones)?;
    let integral = u.weighted_sum(op.weights());
    Ok(ExitFunctionalProfile {
        kind: ProfileKind::Mean,
        values: Some(u),
        integral,
        divergent: false,
    })
}

/// E_x e^{−βτ} = 1 − β u_β with (β − L) u_β = 1.
pub fn laplace_profile(op: &DiscreteOperator, beta: f64) -> Result<ExitFunctionalProfile> {
    if beta < 0.0 {
        return Err(Error::NegativeBeta);
    }
    let ones = GridFunction::constant(1.0, op.grid());
    let u = solve_dirichlet(op, beta, &ones)?;
    let integral = beta * u.weighted_sum(op.weights());
    let values = GridFunction::from_values(
        op.grid(),
        u.values().iter().map(|&ui| 1.0 - beta * ui).collect(),
    )?;
    Ok(ExitFunctionalProfile {
        kind: ProfileKind::Laplace(beta),
        values: Some(values),
        integral,
        divergent: false,
    })
}

/// W(Q − βI), the weighted downshifted matrix whose definiteness decides
/// whether E e^{βτ} is finite.
fn weighted_downshift(op: &DiscreteOperator, beta: f64) -> Csr {
    let q = op.matrix();
    let w = op.weights();
    let n = q.nrows();
    let mut trips: Vec<(usize, usize, f64)> = Vec::with_capacity(q.nnz() + n);
    for (i, j, v) in q.entries() {
        trips.push((i, j, w[i] * v));
    }
    for (i, &wi) in w.iter().enumerate() {
        trips.push((i, i, -beta * wi));
    }
    Csr::from_triplets(n, n, &trips)
}

/// E_x e^{βτ}, finite exactly when β stays below the spectral gap. The
/// inhomogeneous boundary value is removed by the substitution v = 1 + w,
/// which turns (L + β)v = 0, v|∂ = 1 into (Q − βI)w = β·1.
pub fn exp_moment_profile(op: &DiscreteOperator, beta: f64) -> Result<ExitFunctionalProfile> {
    if beta < 0.0 {
        return Err(Error::NegativeBeta);
    }
    let shifted = weighted_downshift(op, beta);
    let asym = shifted.asymmetry();
    if asym > 1e-12 * shifted.max_abs() {
        return Err(Error::NotSymmetrizable { asym });
    }

    let chol = match BandCholesky::try_from_csr(&shifted) {
        Some(chol) => chol,
        None => {
            return Ok(ExitFunctionalProfile {
                kind: ProfileKind::ExpMoment(beta),
                values: None,
                integral: f64::INFINITY,
                divergent: true,
            })
        }
    };
    let rhs: Vec<f64> = op.weights().iter().map(|&wi| beta * wi).collect();
    let w = chol.solve(&rhs);
    let integral = w
        .iter()
        .zip(op.weights())
        .map(|(&wi, &vol)| vol * wi)
        .sum();
    let values = GridFunction::from_values(op.grid(), w.iter().map(|&x| 1.0 + x).collect())?;
    Ok(ExitFunctionalProfile {
        kind: ProfileKind::ExpMoment(beta),
        values: Some(values),
        integral,
        divergent: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralMethod {
    DenseSchur,
    ShiftInvert,
}

impl std::fmt::Display for SpectralMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpectralMethod::DenseSchur => write!(f, "dense-schur"),
            SpectralMethod::ShiftInvert => write!(f, "shift-invert"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// Top of the spectrum of the generator (so λ₀ < 0 on a bounded domain).
    pub lambda0: f64,
    pub method: SpectralMethod,
    /// ‖Q h − μ h‖₂ with ‖h‖₂ = 1, μ = −λ₀.
    pub residual: f64,
    pub eigenvector: GridFunction,
}

const DENSE_CAP: usize = 2000;

/// Rough location of the bottom of the spectrum of Q, to be polished.
///
/// Whenever WQ is symmetric, Q is similar to the symmetric
/// W^{1/2} Q W^{-1/2} and the symmetric solver handles it; this also covers
/// the plain symmetric case and is immune to repeated eigenvalues, which
/// make the nonsymmetric QR iteration stagnate (the 2D Laplacian spectrum
/// is full of them). Otherwise a bounded Schur attempt runs first, and a
/// plain inverse-power pass at shift 0 covers a stagnating QR: for these
/// generators the eigenvalue nearest zero is the ground one.
fn smallest_real_eigenvalue(q: &Csr, w: &[f64]) -> Result<f64> {
    let n = q.nrows();
    let mut asym = 0.0f64;
    let mut scale = 0.0f64;
    for (i, j, v) in q.entries() {
        let a = w[i] * v;
        scale = scale.max(a.abs());
        if j > i {
            asym = asym.max((a - w[j] * q.get(j, i)).abs());
        }
    }
    if asym <= 1e-12 * scale {
        let mut s = nalgebra::DMatrix::zeros(n, n);
        for (i, j, v) in q.entries() {
            s[(i, j)] = v * (w[i] / w[j]).sqrt();
        }
        let s = (&s + s.transpose()) * 0.5;
        let mu = s
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, &x| acc.min(x));
        return Ok(mu);
    }

    if let Some(schur) = q.to_dense().try_schur(f64::EPSILON, 50 * n + 10_000) {
        let mu = schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min);
        if mu.is_finite() {
            return Ok(mu);
        }
    }
    inverse_power_seed(q)
}

fn inverse_power_seed(q: &Csr) -> Result<f64> {
    let n = q.nrows();
    let lu = BandLu::factor(BandMatrix::from_csr(q))?;
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut mu = f64::INFINITY;
    for _ in 0..500 {
        x = lu.solve(&x);
        let nx = norm2(&x);
        if nx == 0.0 || !nx.is_finite() {
            return Err(Error::EigenNoConverge {
                detail: "inverse power iteration collapsed".into(),
            });
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let qx = q.matvec(&x);
        let next: f64 = x.iter().zip(&qx).map(|(&a, &b)| a * b).sum();
        if (next - mu).abs() <= 1e-10 * next.abs() {
            return Ok(next);
        }
        mu = next;
    }
    Ok(mu)
}

/// Seed for grids past the dense cap: coarsen the same problem until a
/// dense solve is affordable. The transpose tag reassembles as itself, and
/// transposition leaves the spectrum unchanged anyway.
fn coarse_seed(op: &DiscreteOperator) -> Result<f64> {
    let mut spec = op.grid().spec().clone();
    loop {
        spec.resolution[0] = (spec.resolution[0] / 2 + 1).max(3);
        if spec.dimension == 2 {
            spec.resolution[1] = (spec.resolution[1] / 2 + 1).max(3);
        }
        let grid = Arc::new(build_grid(&spec)?);
        if grid.num_interior() <= DENSE_CAP {
            let coarse = assemble_generator(op.coefficients(), &grid, op.scheme())?;
            return smallest_real_eigenvalue(coarse.matrix(), coarse.weights());
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// λ₀ = −μ₀ where μ₀ is the smallest real part in the spectrum of Q.
///
/// Whatever produced the seed, the estimate is polished by two-sided
/// inverse iteration: right and left vectors from band solves against
/// Q − σI and its transpose, recombined through the two-sided Rayleigh
/// quotient. The polish drives the residual to machine level and makes the
/// eigenvalue of an operator and of its transpose agree far beyond what two
/// independent dense solves would give.
pub fn principal_eigenvalue(op: &DiscreteOperator) -> Result<SpectralResult> {
    let q = op.matrix();
    let n = q.nrows();
    let (seed, method) = if n <= DENSE_CAP {
        (
            smallest_real_eigenvalue(q, op.weights())?,
            SpectralMethod::DenseSchur,
        )
    } else {
        (coarse_seed(op)?, SpectralMethod::ShiftInvert)
    };

    let qt = q.transpose();
    let mut h = vec![1.0 / (n as f64).sqrt(); n];
    let mut ht = h.clone();
    let mut mu = seed;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;

    for _ in 0..40 {
        // Offset the shift so a converged σ does not hand the factorization
        // an exactly singular matrix.
        let mut lu_pair = None;
        for margin in [1e-11, 1e-8, 1e-5] {
            let sigma = mu - margin * mu.abs().max(1.0);
            let right = BandLu::factor(BandMatrix::from_csr(&q.plus_diagonal(-sigma)));
            let left = BandLu::factor(BandMatrix::from_csr(&qt.plus_diagonal(-sigma)));
            if let (Ok(r), Ok(l)) = (right, left) {
                lu_pair = Some((r, l));
                break;
            }
        }
        let Some((lu_r, lu_l)) = lu_pair else {
            return Err(Error::EigenNoConverge {
                detail: "shifted factorizations stayed singular near the estimate".into(),
            });
        };

        h = lu_r.solve(&h);
        let nh = norm2(&h);
        if nh == 0.0 || !nh.is_finite() {
            return Err(Error::EigenNoConverge {
                detail: "inverse iteration collapsed to zero".into(),
            });
        }
        h.iter_mut().for_each(|x| *x /= nh);
        ht = lu_l.solve(&ht);
        let nht = norm2(&ht);
        ht.iter_mut().for_each(|x| *x /= nht);

        let qh = q.matvec(&h);
        let cross: f64 = ht.iter().zip(&h).map(|(&a, &b)| a * b).sum();
        if cross.abs() < 1e-14 {
            return Err(Error::EigenNoConverge {
                detail: "left and right vectors became orthogonal".into(),
            });
        }
        mu = ht.iter().zip(&qh).map(|(&a, &b)| a * b).sum::<f64>() / cross;
        let residual = norm2(
            &qh.iter()
                .zip(&h)
                .map(|(&a, &b)| a - mu * b)
                .collect::<Vec<_>>(),
        );
        if best.as_ref().is_none_or(|(_, _, r)| residual < *r) {
            best = Some((mu, h.clone(), residual));
        }
        if residual <= 1e-13 * mu.abs().max(1.0) {
            break;
        }
    }

    let (mu, mut h, residual) = best.unwrap();
    if residual > 1e-8 {
        return Err(Error::EigenNoConverge {
            detail: format!("eigen-residual {residual:.3e} stayed above 1e-8"),
        });
    }

    // Ground-state normalization Σ w h = 1 when the mass is usable.
    let mass: f64 = h.iter().zip(op.weights()).map(|(&v, &w)| w * v).sum();
    if mass.abs() > 1e-12 {
        h.iter_mut().for_each(|x| *x /= mass);
    }
    let eigenvector = GridFunction::from_values(op.grid(), h)?;

    Ok(SpectralResult {
        lambda0: -mu,
        method,
        residual,
        eigenvector,
    })
}
