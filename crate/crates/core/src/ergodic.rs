//! Gibbs-weighted generators on a bounded subdomain of a computational box,
//! and the stationary-start exit identities they satisfy.
//!
//! The measure pi is proportional to e^{-V} on the box; the subdomain D is
//! whatever the domain mask keeps. Starts outside D have exit time zero, so
//! they contribute their pi mass to e^{-beta tau} = 1 and nothing to the
//! mean. The normalizer Z is necessarily truncated to the box, and the
//! report records the box it used.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exit_time::principal_eigenvalue;
use crate::fields::{CoefficientSet, ScalarField};
use crate::geometry::{build_grid, DomainSpec, StructuredGrid};
use crate::operator::{assemble_generator, DiscreteOperator, SchemeTag};
use crate::poisson::{solve_dirichlet, GridFunction};
use crate::variational::{exp_moment_variational, saddle_direct, TrialSpaceSpec};

/// Normalized Gibbs mass per box node.
#[derive(Debug, Clone)]
pub struct GibbsWeights {
    /// Row-major over the full box grid, boundary nodes included; sums to 1.
    pub node_weights: Vec<f64>,
    /// Truncated normalizer Z = sum e^{-V} h^d over the box.
    pub z: f64,
}

pub fn gibbs_weights(v: &ScalarField, grid: &StructuredGrid) -> Result<GibbsWeights> {
    let vol = grid.cell_volume();
    let [nx, ny] = grid.shape();
    let mut raw = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let p = grid.point_at([ix, iy]);
            let w = (-v.eval(p)).exp() * vol;
            if !w.is_finite() || w == 0.0 {
                return Err(Error::GibbsOverflow {
                    location: crate::error::loc(&p, grid.dimension()),
                });
            }
            raw.push(w);
        }
    }
    let z: f64 = raw.iter().sum();
    for w in raw.iter_mut() {
        *w /= z;
    }
    Ok(GibbsWeights {
        node_weights: raw,
        z,
    })
}

/// Two routes to the same scalar and their relative gap.
#[derive(Debug, Clone)]
pub struct IdentityRow {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct ExpMomentRow {
    pub beta: f64,
    pub value: f64,
    pub divergent: bool,
    /// Whether beta sits below |lambda0| of the weighted generator.
    pub below_gap: bool,
}

#[derive(Debug, Clone)]
pub struct ErgodicReport {
    /// Truncated normalizer and the box it was summed over.
    pub z: f64,
    pub box_extent: [[f64; 2]; 2],
    /// Gibbs mass of the subdomain interior.
    pub interior_mass: f64,
    /// E_pi tau: pi-weighted mean exit time, mass outside D contributing 0.
    pub mean_exit_pi: f64,
    pub lambda0: f64,
    /// Detailed balance holds (b = 0), enabling the minimum-only entries.
    pub pi_symmetric: bool,
    /// max |pi_i q_ij - pi_j q_ji| / max |pi_i q_ij|.
    pub detailed_balance_gap: f64,
    pub identities: Vec<IdentityRow>,
    pub exp_moments: Vec<ExpMomentRow>,
}

fn relative_gap(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300)
}

fn balance_gap(op: &DiscreteOperator) -> f64 {
    let q = op.matrix();
    let w = op.weights();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (i, j, v) in q.entries() {
        let s = w[i] * v;
        scale = scale.max(s.abs());
        worst = worst.max((s - w[j] * q.get(j, i)).abs());
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// Assemble the Gibbs-weighted generator on the masked subdomain and verify
/// the stationary-start identities: the reciprocal of E_pi tau against the
/// weighted constrained minimum, and for each beta the Laplace-transform
/// closure beta / (1 - E_pi e^{-beta tau}) against the weighted saddle
/// value. Exponential-moment entries and the minimum-only route need
/// detailed balance and are skipped (with the flag cleared) when the drift
/// breaks it.
pub fn ergodic_report(
    coeffs: &CoefficientSet,
    domain: &DomainSpec,
    betas: &[f64],
) -> Result<ErgodicReport> {
    if coeffs.potential.is_none() {
        return Err(Error::MissingPotential);
    }
    for &beta in betas {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::NegativeBeta);
        }
    }
    let grid = Arc::new(build_grid(domain)?);
    let op = assemble_generator(coeffs, &grid, SchemeTag::Ergodic)?;
    let gw = gibbs_weights(coeffs.potential.as_ref().unwrap(), &grid)?;
    let pi = op.weights();
    let interior_mass: f64 = pi.iter().sum();

    let ones = GridFunction::constant(1.0, &grid);
    let space = TrialSpaceSpec::new(&op, &ones, 1.0)?;

    let u = solve_dirichlet(&op, 0.0, &ones)?;
    let mean_exit_pi = u.weighted_sum(pi);

    let db_gap = balance_gap(&op);
    let pi_symmetric = db_gap <= 1e-12;

    let mut identities = Vec::new();
    if pi_symmetric {
        // Minimum of the weighted form over the pairing constraint, solved
        // by Cholesky; the left side comes from the Poisson route.
        let minimum = exp_moment_variational(&op, 0.0, &space)?;
        let lhs = 1.0 / mean_exit_pi;
        identities.push(IdentityRow {
            name: "mean-exit-reciprocal".into(),
            lhs,
            rhs: minimum,
            gap: relative_gap(lhs, minimum),
        });
    }

    for &beta in betas {
        let ub = solve_dirichlet(&op, beta, &ones)?;
        // Stationary Laplace transform: starts in D keep 1 - beta*u_beta,
        // the rest of the box exits instantly and contributes its mass.
        let mut inside = 0.0;
        for (w, v) in pi.iter().zip(ub.values()) {
            inside += w * (1.0 - beta * v);
        }
        let e_pi = inside + (1.0 - interior_mass);
        let lhs = beta / (1.0 - e_pi);
        let saddle = saddle_direct(&op, beta, &space)?;
        identities.push(IdentityRow {
            name: format!("laplace-saddle({beta})"),
            lhs,
            rhs: saddle.value,
            gap: relative_gap(lhs, saddle.value),
        });
    }

    let spectrum = principal_eigenvalue(&op)?;
    let lambda0 = spectrum.lambda0;

    let mut exp_moments = Vec::new();
    if pi_symmetric {
        for &beta in betas {
            let value = exp_moment_variational(&op, beta, &space)?;
            exp_moments.push(ExpMomentRow {
                beta,
                value,
                divergent: value == 0.0,
                below_gap: beta < lambda0.abs(),
            });
        }
    }

    Ok(ErgodicReport {
        z: gw.z,
        box_extent: grid.extent(),
        interior_mass,
        mean_exit_pi,
        lambda0,
        pi_symmetric,
        detailed_balance_gap: db_gap,
        identities,
        exp_moments,
    })
}
