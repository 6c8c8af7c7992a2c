//! Assembly of discrete generators and the bilinear exit-time form.
//!
//! All schemes build a sparse matrix Q over interior nodes realizing −L, so
//! the shifted operator (β − L) is βI + Q. The transpose of the flux-centered
//! assembly is the canonical discrete adjoint: duality identities then hold
//! to machine precision instead of discretization error. The direct
//! discretization of the analytic adjoint formula exists only as a
//! consistency cross-check against that transpose.
//!
//! Advection is centered, never upwinded; upwinding would break the exact
//! transpose pairing. Stability comes from the Péclet precondition enforced
//! during coefficient validation.

use std::fmt;
use std::sync::Arc;

use crate::error::{loc, Error, Result};
use crate::fields::{divergence, validate_coefficients, CoefficientSet};
use crate::geometry::StructuredGrid;
use crate::linalg::Csr;
use crate::poisson::GridFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeTag {
    FluxCentered,
    AdjointDirect,
    TransposeAdjoint,
    Ergodic,
}

impl fmt::Display for SchemeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeTag::FluxCentered => "flux-centered",
            SchemeTag::AdjointDirect => "adjoint-direct",
            SchemeTag::TransposeAdjoint => "transpose-adjoint",
            SchemeTag::Ergodic => "ergodic",
        })
    }
}

/// Sparse realization of −L on interior nodes with Dirichlet elimination,
/// plus the quadrature weights pairing functions with sources.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    q: Csr,
    grid: Arc<StructuredGrid>,
    coeffs: CoefficientSet,
    base_scheme: SchemeTag,
    transposed: bool,
    weights: Vec<f64>,
}

impl DiscreteOperator {
    pub fn matrix(&self) -> &Csr {
        &self.q
    }

    pub fn grid(&self) -> &Arc<StructuredGrid> {
        &self.grid
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coeffs
    }

    /// Assembly provenance; a transposed operator reports transpose-adjoint.
    pub fn scheme(&self) -> SchemeTag {
        if self.transposed {
            SchemeTag::TransposeAdjoint
        } else {
            self.base_scheme
        }
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    /// Quadrature weights per interior node: uniform cell volumes, or Gibbs
    /// weights for the ergodic scheme.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn has_uniform_weights(&self) -> bool {
        self.base_scheme != SchemeTag::Ergodic
    }

    /// y = (βI + Q) x.
    pub fn apply_shifted(&self, beta: f64, x: &[f64]) -> Vec<f64> {
        self.q.matvec_shifted(beta, x)
    }
}

/// Assemble Q for the requested scheme. Coefficients are validated first, so
/// ellipticity and Péclet violations surface here.
pub fn assemble_generator(
    coeffs: &CoefficientSet,
    grid: &Arc<StructuredGrid>,
    scheme: SchemeTag,
) -> Result<DiscreteOperator> {
    validate_coefficients(coeffs, grid)?;
    let uniform = vec![grid.weight(); grid.num_interior()];
    let op = match scheme {
        SchemeTag::FluxCentered => DiscreteOperator {
            q: assemble_flux(coeffs, grid, 1.0, false)?,
            grid: grid.clone(),
            coeffs: coeffs.clone(),
            base_scheme: SchemeTag::FluxCentered,
            transposed: false,
            weights: uniform,
        },
        SchemeTag::AdjointDirect => DiscreteOperator {
            q: assemble_flux(coeffs, grid, -1.0, true)?,
            grid: grid.clone(),
            coeffs: coeffs.clone(),
            base_scheme: SchemeTag::AdjointDirect,
            transposed: false,
            weights: uniform,
        },
        SchemeTag::TransposeAdjoint => DiscreteOperator {
            q: assemble_flux(coeffs, grid, 1.0, false)?.transpose(),
            grid: grid.clone(),
            coeffs: coeffs.clone(),
            base_scheme: SchemeTag::FluxCentered,
            transposed: true,
            weights: uniform,
        },
        SchemeTag::Ergodic => {
            let q = assemble_ergodic(coeffs, grid)?;
            let weights = gibbs_weights(coeffs, grid)?;
            DiscreteOperator {
                q,
                grid: grid.clone(),
                coeffs: coeffs.clone(),
                base_scheme: SchemeTag::Ergodic,
                transposed: false,
                weights,
            }
        }
    };
    Ok(op)
}

/// Shared face-flux assembly. `drift_sign` = 1 discretizes −∇·(a∇u) − b·∇u;
/// −1 flips the advection for the analytic adjoint, and `add_div_term` puts
/// the numeric div(b) on the diagonal.
fn assemble_flux(
    coeffs: &CoefficientSet,
    grid: &StructuredGrid,
    drift_sign: f64,
    add_div_term: bool,
) -> Result<Csr> {
    let dim = grid.dimension();
    let h = grid.spacing();
    if dim == 2 && !coeffs.a.off_diagonal_constant() {
        return Err(Error::Inconsistent {
            detail: "spatially varying off-diagonal entries of a are not supported".into(),
        });
    }

    let n = grid.num_interior();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (2 * dim + 1));
    for (k, c) in grid.interior_coords() {
        let p = grid.point_at(c);
        let a_p = coeffs.a.eval(p);
        let b_p = coeffs.b.eval(p);
        let mut diag = 0.0;

        for ax in 0..dim {
            for dir in [1isize, -1] {
                let mut nb = c;
                nb[ax] = (nb[ax] as isize + dir) as usize;
                let q_pt = grid.point_at(nb);
                let a_q = coeffs.a.eval(q_pt);
                let abar = 0.5 * (a_p[ax][ax] + a_q[ax][ax]);
                if abar <= 0.0 {
                    let mid = [0.5 * (p[0] + q_pt[0]), 0.5 * (p[1] + q_pt[1])];
                    return Err(Error::Ellipticity {
                        location: loc(&mid, dim),
                        lambda_min: abar,
                    });
                }
                diag += abar / (h[ax] * h[ax]);
                let off =
                    -abar / (h[ax] * h[ax]) - dir as f64 * drift_sign * b_p[ax] / (2.0 * h[ax]);
                if let Some(col) = grid.interior_index_at(nb) {
                    triplets.push((k, col, off));
                }
            }
        }

        if dim == 2 {
            let s = a_p[0][1] + a_p[1][0];
            if s != 0.0 {
                let cross = s / (4.0 * h[0] * h[1]);
                for (dx, dy, sgn) in [(1, 1, -1.0), (-1, -1, -1.0), (1, -1, 1.0), (-1, 1, 1.0)] {
                    let nb = [
                        (c[0] as isize + dx) as usize,
                        (c[1] as isize + dy) as usize,
                    ];
                    if let Some(col) = grid.interior_index_at(nb) {
                        triplets.push((k, col, sgn * cross));
                    }
                }
            }
        }

        if add_div_term {
            diag += divergence(&coeffs.b, p, h, dim);
        }
        triplets.push((k, k, diag));
    }
    Ok(Csr::from_triplets(n, n, &triplets))
}

/// −e^V ∇·(e^{−V} a ∇u) − b·∇u with face-averaged e^{−V} and row scaling
/// e^{V}. Gibbs-weighting diag(π)·Q is then exactly symmetric whenever b = 0,
/// which is the discrete detailed-balance identity.
fn assemble_ergodic(coeffs: &CoefficientSet, grid: &StructuredGrid) -> Result<Csr> {
    let dim = grid.dimension();
    let h = grid.spacing();
    if !coeffs.a.is_diagonal() {
        return Err(Error::Inconsistent {
            detail: "ergodic scheme supports diagonal diffusion matrices only".into(),
        });
    }

    let vv = |p: [f64; 2]| coeffs.potential.as_ref().map_or(0.0, |v| v.eval(p));
    let n = grid.num_interior();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(n * (2 * dim + 1));
    for (k, c) in grid.interior_coords() {
        let p = grid.point_at(c);
        let a_p = coeffs.a.eval(p);
        let b_p = coeffs.b.eval(p);
        let vp = vv(p);
        let scale = vp.exp();
        let mp = (-vp).exp();
        if !scale.is_finite() || !mp.is_finite() || mp == 0.0 || scale == 0.0 {
            return Err(Error::GibbsOverflow {
                location: loc(&p, dim),
            });
        }
        let mut diag = 0.0;
        for ax in 0..dim {
            for dir in [1isize, -1] {
                let mut nb = c;
                nb[ax] = (nb[ax] as isize + dir) as usize;
                let q_pt = grid.point_at(nb);
                let a_q = coeffs.a.eval(q_pt);
                let abar = 0.5 * (a_p[ax][ax] + a_q[ax][ax]);
                if abar <= 0.0 {
                    let mid = [0.5 * (p[0] + q_pt[0]), 0.5 * (p[1] + q_pt[1])];
                    return Err(Error::Ellipticity {
                        location: loc(&mid, dim),
                        lambda_min: abar,
                    });
                }
                let m_face = 0.5 * (mp + (-vv(q_pt)).exp());
                let g = scale * m_face * abar / (h[ax] * h[ax]);
                diag += g;
                let off = -g - dir as f64 * b_p[ax] / (2.0 * h[ax]);
                if let Some(col) = grid.interior_index_at(nb) {
                    triplets.push((k, col, off));
                }
            }
        }
        triplets.push((k, k, diag));
    }
    Ok(Csr::from_triplets(n, n, &triplets))
}

/// Gibbs weights π_i = e^{−V(x_i)} h^d / Z with Z summed over every box
/// node; the interior weights therefore sum to slightly less than one, the
/// deficit being the boundary layer's share of the Gibbs mass.
pub fn gibbs_weights(coeffs: &CoefficientSet, grid: &StructuredGrid) -> Result<Vec<f64>> {
    let vol = grid.cell_volume();
    let vv = |p: [f64; 2]| coeffs.potential.as_ref().map_or(0.0, |v| v.eval(p));
    let [nx, ny] = grid.shape();
    let mut z = 0.0;
    for iy in 0..ny {
        for ix in 0..nx {
            let p = grid.point_at([ix, iy]);
            let w = (-vv(p)).exp();
            if !w.is_finite() || w == 0.0 {
                return Err(Error::GibbsOverflow {
                    location: loc(&p, grid.dimension()),
                });
            }
            z += w * vol;
        }
    }
    Ok(grid
        .interior_nodes()
        .iter()
        .map(|&node| (-vv(grid.point_of(node))).exp() * vol / z)
        .collect())
}

/// The canonical discrete adjoint: transpose the matrix and flip the
/// provenance flag. Applying it twice restores the original operator
/// entrywise. Ergodic operators are refused because their Gibbs weights
/// change the pairing; the ergodic module handles its own weighted adjoint.
pub fn adjoint_of(op: &DiscreteOperator) -> Result<DiscreteOperator> {
    if !op.has_uniform_weights() {
        return Err(Error::NonUniformWeights);
    }
    Ok(DiscreteOperator {
        q: op.q.transpose(),
        grid: op.grid.clone(),
        coeffs: op.coeffs.clone(),
        base_scheme: op.base_scheme,
        transposed: !op.transposed,
        weights: op.weights.clone(),
    })
}

/// E_β(f, g) = Σ_i w_i f_i ((βI + Q) g)_i, the discrete bilinear form.
pub fn bilinear_form(
    f: &GridFunction,
    g: &GridFunction,
    op: &DiscreteOperator,
    beta: f64,
) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::NegativeBeta);
    }
    if !f.grid().same_layout(op.grid()) || !g.grid().same_layout(op.grid()) {
        return Err(Error::GridMismatch);
    }
    let qg = op.apply_shifted(beta, g.values());
    Ok(f
        .values()
        .iter()
        .zip(op.weights())
        .zip(&qg)
        .map(|((&fi, &wi), &qi)| wi * fi * qi)
        .sum())
}

/// Σ_i |w_i f_i ((βI + Q) g)_i| — the magnitude scale of the form before
/// cancellation. Machine-exactness statements about E_β are measured against
/// this, since the signed value itself can cancel to zero.
pub fn bilinear_form_scale(
    f: &GridFunction,
    g: &GridFunction,
    op: &DiscreteOperator,
    beta: f64,
) -> Result<f64> {
    if !f.grid().same_layout(op.grid()) || !g.grid().same_layout(op.grid()) {
        return Err(Error::GridMismatch);
    }
    let qg = op.apply_shifted(beta, g.values());
    Ok(f
        .values()
        .iter()
        .zip(op.weights())
        .zip(&qg)
        .map(|((&fi, &wi), &qi)| (wi * fi * qi).abs())
        .sum())
}
