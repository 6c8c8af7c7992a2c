//! Comparison experiments built on the operator and exit-time layers: the
//! odd-drift sweep (scaled divergence-free drift against a fixed diffusion)
//! and the diffusion-ordering monotonicity law with its scaling family.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{loc, Error, Result};
use crate::exit_time::{exp_moment_profile, laplace_profile, mean_exit_profile};
use crate::fields::{divergence, CoefficientSet, MatrixField, VectorField};
use crate::geometry::{build_grid, DomainSpec, StructuredGrid};
use crate::linalg::{BandCholesky, Csr};
use crate::operator::{assemble_generator, DiscreteOperator, SchemeTag};
use crate::rng::derive_stream;

/// Drift divergence above this is rejected; the sweep's symmetry identities
/// need a genuinely divergence-free field.
const DIV_FREE_TOL: f64 = 1e-10;

/// Slack on ordering margins; the discrete inequalities are exact up to
/// solver roundoff.
const ORDER_SLACK: f64 = 1e-10;

const CERT_SAMPLES: usize = 1000;
const CERT_SEED: u64 = 41;

/// Sweep of L = div(a grad) + gamma b . grad over drift strengths gamma.
#[derive(Debug, Clone)]
pub struct GammaSweep {
    pub a: MatrixField,
    pub b: VectorField,
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    pub domain: DomainSpec,
}

/// Integrals at one drift strength: Sum w E_x tau and, per beta,
/// Sum w (1 - E_x e^{-beta tau}).
#[derive(Debug, Clone)]
pub struct GammaRow {
    pub gamma: f64,
    pub mean_integral: f64,
    pub laplace_integrals: Vec<f64>,
}

/// |value(gamma) - value(-gamma)| for one positive gamma.
#[derive(Debug, Clone)]
pub struct SymmetryGap {
    pub gamma: f64,
    pub mean_gap: f64,
    pub laplace_gaps: Vec<f64>,
}

/// value(gamma_lo) - value(gamma_hi) for consecutive non-negative strengths;
/// non-negative margins mean the sweep decays with |gamma|.
#[derive(Debug, Clone)]
pub struct MonotoneMargin {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub mean_margin: f64,
    pub laplace_margins: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GammaTable {
    pub betas: Vec<f64>,
    /// One row per evaluated strength (requested values and their
    /// negatives), ascending.
    pub rows: Vec<GammaRow>,
    pub gaps: Vec<SymmetryGap>,
    pub margins: Vec<MonotoneMargin>,
}

impl GammaTable {
    pub fn row(&self, gamma: f64) -> Option<&GammaRow> {
        self.rows.iter().find(|r| r.gamma == gamma)
    }
}

fn check_betas(betas: &[f64]) -> Result<()> {
    for &beta in betas {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::NegativeBeta);
        }
    }
    Ok(())
}

/// The drift certificate behind the sweep's precondition: positive
/// definiteness of the symmetrized weighted generator forces every
/// eigenvalue of L into the open left half-plane.
fn spectrum_stays_negative(op: &DiscreteOperator) -> bool {
    let q = op.matrix();
    let w = op.weights();
    let n = q.nrows();
    let mut trips: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * q.nnz());
    for (i, j, v) in q.entries() {
        trips.push((i, j, 0.5 * w[i] * v));
        trips.push((j, i, 0.5 * w[i] * v));
    }
    let sym = Csr::from_triplets(n, n, &trips);
    BandCholesky::try_from_csr(&sym).is_some()
}

struct IntegralSet {
    mean: f64,
    laplace: Vec<f64>,
    exp: Vec<f64>,
    exp_divergent: Vec<bool>,
}

fn integral_set(op: &DiscreteOperator, betas: &[f64], with_exp: bool) -> Result<IntegralSet> {
    let mean = mean_exit_profile(op)?.integral;
    let mut laplace = Vec::with_capacity(betas.len());
    let mut exp = Vec::new();
    let mut exp_divergent = Vec::new();
    for &beta in betas {
        laplace.push(laplace_profile(op, beta)?.integral);
        if with_exp {
            let p = exp_moment_profile(op, beta)?;
            exp.push(p.integral);
            exp_divergent.push(p.divergent);
        }
    }
    Ok(IntegralSet {
        mean,
        laplace,
        exp,
        exp_divergent,
    })
}

fn flux_operator(
    a: &MatrixField,
    b: VectorField,
    grid: &Arc<StructuredGrid>,
) -> Result<DiscreteOperator> {
    let coeffs = CoefficientSet::new(a.clone(), b);
    assemble_generator(&coeffs, grid, SchemeTag::FluxCentered)
}

/// Evaluate the sweep at every requested strength and its negative, then
/// report the even-symmetry gaps and the decay margins over gamma >= 0.
pub fn run_gamma_sweep(sweep: &GammaSweep) -> Result<GammaTable> {
    check_betas(&sweep.betas)?;
    for &g in &sweep.gammas {
        if !g.is_finite() {
            return Err(Error::Inconsistent {
                detail: format!("drift strength {g} is not finite"),
            });
        }
    }
    let grid = Arc::new(build_grid(&sweep.domain)?);

    let dim = grid.dimension();
    let h = grid.spacing();
    let mut worst_div = 0.0f64;
    let mut worst_at = [0.0f64; 2];
    for (_, c) in grid.interior_coords() {
        let p = grid.point_at(c);
        let d = divergence(&sweep.b, p, h, dim).abs();
        if d > worst_div {
            worst_div = d;
            worst_at = p;
        }
    }
    if worst_div > DIV_FREE_TOL {
        return Err(Error::NotDivergenceFree {
            location: loc(&worst_at, dim),
            value: worst_div,
        });
    }

    let mut evals: Vec<f64> = Vec::with_capacity(2 * sweep.gammas.len());
    for &g in &sweep.gammas {
        let g = if g == 0.0 { 0.0 } else { g };
        evals.push(g);
        evals.push(-g);
    }
    evals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    evals.dedup();

    let rows = evals
        .into_par_iter()
        .map(|gamma| {
            let op = flux_operator(&sweep.a, sweep.b.scaled(gamma), &grid)?;
            if !spectrum_stays_negative(&op) {
                return Err(Error::DriftDominated { gamma });
            }
            let set = integral_set(&op, &sweep.betas, false)?;
            Ok(GammaRow {
                gamma,
                mean_integral: set.mean,
                laplace_integrals: set.laplace,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut gaps = Vec::new();
    for row in rows.iter().filter(|r| r.gamma > 0.0) {
        let mirror = rows
            .iter()
            .find(|r| r.gamma == -row.gamma)
            .expect("negated strength is always evaluated");
        gaps.push(SymmetryGap {
            gamma: row.gamma,
            mean_gap: (row.mean_integral - mirror.mean_integral).abs(),
            laplace_gaps: row
                .laplace_integrals
                .iter()
                .zip(&mirror.laplace_integrals)
                .map(|(x, y)| (x - y).abs())
                .collect(),
        });
    }

    let nonneg: Vec<&GammaRow> = rows.iter().filter(|r| r.gamma >= 0.0).collect();
    let mut margins = Vec::new();
    for pair in nonneg.windows(2) {
        margins.push(MonotoneMargin {
            gamma_lo: pair[0].gamma,
            gamma_hi: pair[1].gamma,
            mean_margin: pair[0].mean_integral - pair[1].mean_integral,
            laplace_margins: pair[0]
                .laplace_integrals
                .iter()
                .zip(&pair[1].laplace_integrals)
                .map(|(x, y)| x - y)
                .collect(),
        });
    }

    Ok(GammaTable {
        betas: sweep.betas.clone(),
        rows,
        gaps,
        margins,
    })
}

/// Ordered pair of diffusions a_lower <= a_upper (as quadratic forms), an
/// optional drift on the upper operator, and the scaling family built from
/// a_lower.
#[derive(Debug, Clone)]
pub struct MonotonicityCase {
    pub a_lower: MatrixField,
    pub a_upper: MatrixField,
    pub b_upper: Option<VectorField>,
    pub domain: DomainSpec,
    pub betas: Vec<f64>,
    pub epsilons: Vec<f64>,
}

/// One verified ordering: the larger diffusion must not increase the
/// integral, so margin = lower_value - upper_value should be non-negative.
#[derive(Debug, Clone)]
pub struct OrderingRow {
    pub quantity: String,
    pub lower_value: f64,
    pub upper_value: f64,
    pub margin: f64,
    pub ordered: bool,
}

/// Integrals for one member of the scaling family eps * a_lower, plus the
/// defect of the exact rescaling identity eps * mean(eps) = mean(1).
#[derive(Debug, Clone)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub mean_integral: f64,
    pub laplace_integrals: Vec<f64>,
    pub exp_integrals: Vec<f64>,
    pub exp_divergent: Vec<bool>,
    pub scaling_gap: f64,
}

#[derive(Debug, Clone)]
pub struct MonotonicityReport {
    pub betas: Vec<f64>,
    pub orderings: Vec<OrderingRow>,
    /// Ascending in epsilon; each integral column is non-increasing down
    /// the rows (divergent entries are +inf and sit at the top).
    pub epsilon_rows: Vec<EpsilonRow>,
}

fn ordering_row(quantity: String, lower: f64, upper: f64) -> OrderingRow {
    let margin = if lower.is_infinite() && upper.is_infinite() {
        0.0
    } else {
        lower - upper
    };
    OrderingRow {
        quantity,
        lower_value: lower,
        upper_value: upper,
        margin,
        ordered: margin >= -ORDER_SLACK,
    }
}

/// Sampled quadratic-form comparison v . a_lower v <= v . a_upper v over
/// random interior nodes and directions.
fn certify_ordering(
    a_lower: &MatrixField,
    a_upper: &MatrixField,
    grid: &StructuredGrid,
) -> Result<()> {
    let dim = grid.dimension();
    let points: Vec<[f64; 2]> = grid
        .interior_coords()
        .map(|(_, c)| grid.point_at(c))
        .collect();
    let mut rng = derive_stream(CERT_SEED, 0);
    let mut worst_defect = f64::NEG_INFINITY;
    let mut worst_at = [0.0f64; 2];
    for _ in 0..CERT_SAMPLES {
        let p = points[rng.gen_range(0..points.len())];
        let v = if dim == 1 {
            [1.0, 0.0]
        } else {
            loop {
                let v0: f64 = rng.sample(StandardNormal);
                let v1: f64 = rng.sample(StandardNormal);
                let norm = (v0 * v0 + v1 * v1).sqrt();
                if norm > 1e-8 {
                    break [v0 / norm, v1 / norm];
                }
            }
        };
        let quad = |m: [[f64; 2]; 2]| {
            let mut s = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    s += v[i] * m[i][j] * v[j];
                }
            }
            s
        };
        let q_lower = quad(a_lower.eval(p));
        let q_upper = quad(a_upper.eval(p));
        let slack = 1e-12 * q_lower.abs().max(q_upper.abs()).max(1.0);
        let defect = q_lower - q_upper;
        if defect > slack && defect > worst_defect {
            worst_defect = defect;
            worst_at = p;
        }
    }
    if worst_defect > f64::NEG_INFINITY {
        return Err(Error::CertificationFailed {
            location: loc(&worst_at, dim),
            defect: worst_defect,
        });
    }
    Ok(())
}

/// Certify the pair, verify the exit-functional orderings between the two
/// operators, and tabulate the scaling family.
pub fn run_monotonicity(case: &MonotonicityCase) -> Result<MonotonicityReport> {
    check_betas(&case.betas)?;
    for &eps in &case.epsilons {
        if !eps.is_finite() || eps <= 0.0 {
            return Err(Error::Inconsistent {
                detail: format!("scaling factor {eps} must be positive and finite"),
            });
        }
    }
    let grid = Arc::new(build_grid(&case.domain)?);
    certify_ordering(&case.a_lower, &case.a_upper, &grid)?;

    let dim = grid.dimension();
    let zero = VectorField::zero(dim);
    let with_exp = case.b_upper.is_none();
    let lower_op = flux_operator(&case.a_lower, zero.clone(), &grid)?;
    let upper_b = case.b_upper.clone().unwrap_or_else(|| zero.clone());
    let upper_op = flux_operator(&case.a_upper, upper_b, &grid)?;
    let lower = integral_set(&lower_op, &case.betas, with_exp)?;
    let upper = integral_set(&upper_op, &case.betas, with_exp)?;

    let mut orderings = Vec::new();
    orderings.push(ordering_row("mean-exit".into(), lower.mean, upper.mean));
    for (k, &beta) in case.betas.iter().enumerate() {
        orderings.push(ordering_row(
            format!("laplace({beta})"),
            lower.laplace[k],
            upper.laplace[k],
        ));
    }
    if with_exp {
        for (k, &beta) in case.betas.iter().enumerate() {
            orderings.push(ordering_row(
                format!("exp-moment({beta})"),
                lower.exp[k],
                upper.exp[k],
            ));
        }
    }

    let mut eps_sorted = case.epsilons.clone();
    eps_sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let epsilon_rows = eps_sorted
        .into_par_iter()
        .map(|epsilon| {
            let op = flux_operator(&case.a_lower.scaled(epsilon), zero.clone(), &grid)?;
            let set = integral_set(&op, &case.betas, true)?;
            Ok(EpsilonRow {
                epsilon,
                mean_integral: set.mean,
                laplace_integrals: set.laplace,
                exp_integrals: set.exp,
                exp_divergent: set.exp_divergent,
                scaling_gap: (epsilon * set.mean - lower.mean).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MonotonicityReport {
        betas: case.betas.clone(),
        orderings,
        epsilon_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exit_time::mean_exit_profile;
    use proptest::prelude::*;

    fn unit_interval(n: usize) -> DomainSpec {
        DomainSpec::interval(0.0, 1.0, n)
    }

    #[test]
    fn zero_strength_matches_the_driftless_baseline() {
        let sweep = GammaSweep {
            a: MatrixField::identity(1),
            b: VectorField::constant([1.0, 0.0], 1),
            gammas: vec![0.0],
            betas: vec![1.0],
            domain: unit_interval(129),
        };
        let table = run_gamma_sweep(&sweep).unwrap();
        assert_eq!(table.rows.len(), 1);

        let grid = Arc::new(build_grid(&sweep.domain).unwrap());
        let base_op = flux_operator(&sweep.a, VectorField::zero(1), &grid).unwrap();
        let base = mean_exit_profile(&base_op).unwrap().integral;
        assert!((table.rows[0].mean_integral - base).abs() < 1e-14);
    }

    #[test]
    fn constant_drift_sweep_is_even_and_decaying() {
        let sweep = GammaSweep {
            a: MatrixField::identity(1),
            b: VectorField::constant([1.0, 0.0], 1),
            gammas: vec![0.5, 1.0, 2.0, 4.0],
            betas: vec![1.0],
            domain: unit_interval(1025),
        };
        let table = run_gamma_sweep(&sweep).unwrap();
        assert_eq!(table.rows.len(), 8);
        assert_eq!(table.gaps.len(), 4);
        assert_eq!(table.margins.len(), 3);

        for gap in &table.gaps {
            assert!(gap.mean_gap <= 1e-12, "mean gap {} at {}", gap.mean_gap, gap.gamma);
            assert!(gap.laplace_gaps[0] <= 1e-12);
        }
        for m in &table.margins {
            assert!(m.mean_margin >= -1e-12);
            assert!(m.laplace_margins[0] >= -1e-12);
        }

        // Frozen quadrature values of the closed-form mean integral
        // int (1/g)((1 - e^{-gx})/(1 - e^{-g}) - x) dx at each strength.
        let oracle = [
            (0.5, 1.0 / 12.0499109615590115),
            (1.0, 1.0 / 12.1985871132153795),
            (2.0, 1.0 / 12.7781121978613005),
            (4.0, 1.0 / 14.8888532016536662),
        ];
        for (gamma, mean) in oracle {
            let row = table.row(gamma).unwrap();
            assert!(
                (row.mean_integral - mean).abs() < 1e-5,
                "mean at {gamma}: {} vs {mean}",
                row.mean_integral
            );
        }
    }

    #[test]
    fn rotation_sweep_is_even_in_two_dimensions() {
        let sweep = GammaSweep {
            a: MatrixField::identity(2),
            b: VectorField::parse("rotation", 2).unwrap(),
            gammas: vec![1.0, 3.0],
            betas: vec![0.5],
            domain: DomainSpec::rectangle([0.0, 1.0], [0.0, 1.0], [33, 33]),
        };
        let table = run_gamma_sweep(&sweep).unwrap();
        for gap in &table.gaps {
            assert!(gap.mean_gap <= 1e-12, "mean gap {}", gap.mean_gap);
            assert!(gap.laplace_gaps[0] <= 1e-12);
        }
        for m in &table.margins {
            assert!(m.mean_margin >= -1e-12);
        }
    }

    #[test]
    fn compressing_drift_fails_the_divergence_check() {
        let sweep = GammaSweep {
            a: MatrixField::identity(1),
            b: VectorField::parse("x", 1).unwrap(),
            gammas: vec![1.0],
            betas: vec![],
            domain: unit_interval(65),
        };
        match run_gamma_sweep(&sweep) {
            Err(Error::NotDivergenceFree { value, .. }) => {
                assert!((value - 1.0).abs() < 1e-10)
            }
            other => panic!("expected divergence rejection, got {other:?}"),
        }
    }

    #[test]
    fn doubling_the_diffusion_shrinks_every_integral() {
        let case = MonotonicityCase {
            a_lower: MatrixField::identity(1),
            a_upper: MatrixField::scaled_identity(2.0, 1),
            b_upper: None,
            domain: unit_interval(257),
            betas: vec![1.0],
            epsilons: vec![],
        };
        let report = run_monotonicity(&case).unwrap();
        assert_eq!(report.orderings.len(), 3);
        for row in &report.orderings {
            assert!(row.ordered, "{} margin {}", row.quantity, row.margin);
            assert!(row.margin > 1e-4, "{} margin {}", row.quantity, row.margin);
        }
        // Exact rescaling tau -> tau/2 halves the mean integral.
        let mean = &report.orderings[0];
        assert!((mean.lower_value - 2.0 * mean.upper_value).abs() < 1e-14);
    }

    #[test]
    fn exponential_moment_ordering_matches_the_cosine_solutions() {
        let beta = std::f64::consts::PI.powi(2) / 8.0;
        let case = MonotonicityCase {
            a_lower: MatrixField::identity(1),
            a_upper: MatrixField::scaled_identity(1.5, 1),
            b_upper: None,
            domain: unit_interval(513),
            betas: vec![beta],
            epsilons: vec![],
        };
        let report = run_monotonicity(&case).unwrap();
        let exp_row = report
            .orderings
            .iter()
            .find(|r| r.quantity.starts_with("exp-moment"))
            .unwrap();
        // int_0^1 (E_x e^{beta tau} - 1) dx = (2/k) tan(k/2) - 1 with
        // k = sqrt(beta/alpha).
        assert!((exp_row.lower_value - 0.1173014105141579413).abs() < 1e-4);
        assert!((exp_row.upper_value - 0.074687816240951741146).abs() < 1e-4);
        assert!(exp_row.ordered && exp_row.margin > 0.04);
    }

    #[test]
    fn scaling_family_obeys_the_exact_rescaling() {
        let case = MonotonicityCase {
            a_lower: MatrixField::identity(1),
            a_upper: MatrixField::identity(1),
            b_upper: None,
            domain: unit_interval(257),
            betas: vec![1.0],
            epsilons: vec![2.0, 0.5, 1.0, 3.0, 4.0],
        };
        let report = run_monotonicity(&case).unwrap();
        let eps: Vec<f64> = report.epsilon_rows.iter().map(|r| r.epsilon).collect();
        assert_eq!(eps, vec![0.5, 1.0, 2.0, 3.0, 4.0]);
        for row in &report.epsilon_rows {
            assert!(row.scaling_gap <= 1e-12, "gap {} at {}", row.scaling_gap, row.epsilon);
            assert!(!row.exp_divergent[0]);
        }
        for pair in report.epsilon_rows.windows(2) {
            assert!(pair[0].mean_integral >= pair[1].mean_integral - 1e-12);
            assert!(pair[0].laplace_integrals[0] >= pair[1].laplace_integrals[0] - 1e-12);
            assert!(pair[0].exp_integrals[0] >= pair[1].exp_integrals[0] - 1e-12);
        }
    }

    #[test]
    fn small_scaling_factors_push_the_moment_past_divergence() {
        let case = MonotonicityCase {
            a_lower: MatrixField::identity(1),
            a_upper: MatrixField::identity(1),
            b_upper: None,
            domain: unit_interval(129),
            betas: vec![5.0],
            epsilons: vec![0.25, 4.0],
        };
        let report = run_monotonicity(&case).unwrap();
        // beta = 5 sits below the gap pi^2 at eps = 4 (gap 4 pi^2) but far
        // above it at eps = 1/4 (gap pi^2/4 ~ 2.47).
        assert!(report.epsilon_rows[0].exp_divergent[0]);
        assert!(report.epsilon_rows[0].exp_integrals[0].is_infinite());
        assert!(!report.epsilon_rows[1].exp_divergent[0]);
        assert!(report.epsilon_rows[0].exp_integrals[0] >= report.epsilon_rows[1].exp_integrals[0]);
    }

    #[test]
    fn reversed_pair_is_refused() {
        let case = MonotonicityCase {
            a_lower: MatrixField::scaled_identity(2.0, 1),
            a_upper: MatrixField::identity(1),
            b_upper: None,
            domain: unit_interval(65),
            betas: vec![],
            epsilons: vec![],
        };
        match run_monotonicity(&case) {
            Err(Error::CertificationFailed { defect, .. }) => {
                assert!((defect - 1.0).abs() < 1e-12)
            }
            other => panic!("expected certification failure, got {other:?}"),
        }
    }

    #[test]
    fn drift_on_the_upper_operator_keeps_the_orderings() {
        let case = MonotonicityCase {
            a_lower: MatrixField::identity(2),
            a_upper: MatrixField::scaled_identity(1.5, 2),
            b_upper: Some(VectorField::parse("rotation", 2).unwrap()),
            domain: DomainSpec::rectangle([0.0, 1.0], [0.0, 1.0], [33, 33]),
            betas: vec![1.0],
            epsilons: vec![],
        };
        let report = run_monotonicity(&case).unwrap();
        // Drift present: exponential-moment rows are skipped.
        assert_eq!(report.orderings.len(), 2);
        for row in &report.orderings {
            assert!(row.ordered, "{} margin {}", row.quantity, row.margin);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Random constant diagonal pairs a_upper = a_lower + psd bump keep
        // all three orderings.
        #[test]
        fn random_diagonal_pairs_stay_ordered(
            d0 in 0.3f64..2.0,
            d1 in 0.3f64..2.0,
            bump0 in 0.0f64..1.5,
            bump1 in 0.0f64..1.5,
            beta in 0.1f64..2.0,
        ) {
            let a_lower = MatrixField::from_exprs(
                &[d0.to_string(), "0".into(), "0".into(), d1.to_string()],
                2,
            ).unwrap();
            let a_upper = MatrixField::from_exprs(
                &[
                    (d0 + bump0).to_string(),
                    "0".into(),
                    "0".into(),
                    (d1 + bump1).to_string(),
                ],
                2,
            ).unwrap();
            let case = MonotonicityCase {
                a_lower,
                a_upper,
                b_upper: None,
                domain: DomainSpec::rectangle([0.0, 1.0], [0.0, 1.0], [17, 17]),
                betas: vec![beta],
                epsilons: vec![],
            };
            let report = run_monotonicity(&case).unwrap();
            for row in &report.orderings {
                prop_assert!(row.ordered, "{} margin {}", row.quantity, row.margin);
            }
        }
    }
}
