//! Dispatch from a resolved plan to the library and back to report rows.
//!
//! Each experiment pins the tolerances of its internal consistency checks
//! here; the principal quantity is judged against the config's expected /
//! tolerance pair when one is given and reported as `n/a` otherwise.

use std::sync::Arc;

use exitlab::applications::{run_gamma_sweep, run_monotonicity, GammaSweep, MonotonicityCase};
use exitlab::ergodic::ergodic_report;
use exitlab::exit_time::{exp_moment_profile, laplace_profile, principal_eigenvalue};
use exitlab::geometry::{build_grid, make_domain_sequence, MaskSpec, SequenceRule, StructuredGrid};
use exitlab::montecarlo::{estimate_functionals, simulate_exit_times, SimulationPlan};
use exitlab::operator::{adjoint_of, assemble_generator, DiscreteOperator, SchemeTag};
use exitlab::poisson::{solve_dirichlet, GridFunction};
use exitlab::variational::{exp_moment_variational, saddle_direct, saddle_from_poisson, TrialSpaceSpec};

use crate::config::{ExperimentKind, ResolvedPlan};
use crate::error::Result;
use crate::report::{Provenance, Report, ReportRow};

/// Relative agreement between saddle and resolvent routes.
const ROUTE_TOL: f64 = 1e-9;
/// Eigenvalue gap between an operator and its transpose.
const TRANSPOSE_TOL: f64 = 1e-10;
/// Reversal symmetry gaps in the drift-strength sweep.
const SYMMETRY_TOL: f64 = 1e-10;
/// Slack below zero allowed for ordering margins and their violations.
const MARGIN_SLACK: f64 = 1e-10;
/// Relative defect of the diffusion-scaling identity.
const SCALING_TOL: f64 = 1e-10;
/// Detailed-balance gap of the Gibbs-weighted generator.
const BALANCE_TOL: f64 = 1e-13;
/// Stationary-start identity gaps.
const IDENTITY_TOL: f64 = 1e-9;
/// Allowed increase between successive restricted values, which shrink as
/// the subdomains grow.
const EXHAUSTION_SLACK: f64 = 1e-9;

fn rel_gap(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(1e-300)
}

pub fn run(plan: &ResolvedPlan) -> Result<Report> {
    let grid = Arc::new(build_grid(&plan.domain)?);
    let dim = plan.domain.dimension;
    let id = plan.kind.to_string();

    let (rows, schemes) = match plan.kind {
        ExperimentKind::Solve => (solve_rows(plan, &grid, &id)?, flux_scheme()),
        ExperimentKind::Saddle => (saddle_rows(plan, &grid, &id)?, flux_scheme()),
        ExperimentKind::Eig => (
            eig_rows(plan, &grid, &id)?,
            vec![
                SchemeTag::FluxCentered.to_string(),
                SchemeTag::TransposeAdjoint.to_string(),
            ],
        ),
        ExperimentKind::Laplace => (laplace_rows(plan, &grid, &id)?, flux_scheme()),
        ExperimentKind::Expmoment => (expmoment_rows(plan, &grid, &id)?, flux_scheme()),
        ExperimentKind::Mc => (mc_rows(plan, &id)?, vec!["euler-maruyama".into()]),
        ExperimentKind::GammaSweep => (gamma_rows(plan, &id)?, flux_scheme()),
        ExperimentKind::Monotonicity => (monotonicity_rows(plan, &id)?, flux_scheme()),
        ExperimentKind::Exhaustion => (exhaustion_rows(plan, &grid, &id)?, flux_scheme()),
        ExperimentKind::Ergodic => (
            ergodic_rows(plan, &id)?,
            vec![SchemeTag::Ergodic.to_string()],
        ),
    };

    Ok(Report {
        experiment: id,
        provenance: Provenance {
            dimension: dim,
            resolution: plan.domain.resolution[..dim].to_vec(),
            grid_spacing: grid.spacing()[..dim].to_vec(),
            schemes,
            seed: plan.seed,
        },
        rows,
    })
}

fn flux_scheme() -> Vec<String> {
    vec![SchemeTag::FluxCentered.to_string()]
}

fn flux_op(plan: &ResolvedPlan, grid: &Arc<StructuredGrid>) -> Result<DiscreteOperator> {
    Ok(assemble_generator(&plan.coeffs, grid, SchemeTag::FluxCentered)?)
}

fn source_fn(plan: &ResolvedPlan, grid: &Arc<StructuredGrid>) -> GridFunction {
    let f = plan.source.clone();
    GridFunction::from_fn(grid, move |p| f.eval(p))
}

fn judged_if_principal(row: ReportRow, plan: &ResolvedPlan) -> ReportRow {
    match plan.expected {
        Some((e, t)) => row.judged(e, t),
        None => row,
    }
}

fn first_beta(plan: &ResolvedPlan) -> f64 {
    plan.betas.first().copied().unwrap_or(0.0)
}

fn solve_rows(plan: &ResolvedPlan, grid: &Arc<StructuredGrid>, id: &str) -> Result<Vec<ReportRow>> {
    let op = flux_op(plan, grid)?;
    let xi = source_fn(plan, grid);
    let u = solve_dirichlet(&op, first_beta(plan), &xi)?;
    Ok(vec![
        judged_if_principal(
            ReportRow::new(id, "solution-integral", u.weighted_sum(op.weights())),
            plan,
        ),
        ReportRow::new(id, "solution-max", u.max_abs()),
    ])
}

fn saddle_rows(plan: &ResolvedPlan, grid: &Arc<StructuredGrid>, id: &str) -> Result<Vec<ReportRow>> {
    let op = flux_op(plan, grid)?;
    let xi = source_fn(plan, grid);
    let beta = first_beta(plan);
    let space = TrialSpaceSpec::new(&op, &xi, 1.0)?;
    let direct = saddle_direct(&op, beta, &space)?;
    let via = saddle_from_poisson(&op, beta, &xi)?;
    Ok(vec![
        judged_if_principal(ReportRow::new(id, "saddle-value", direct.value), plan),
        ReportRow::new(id, "route-gap", rel_gap(direct.value, via.value)).bounded(ROUTE_TOL),
        ReportRow::new(
            id,
            "constraint-residual",
            direct
                .constraint_residual_f
                .max(direct.constraint_residual_g),
        ),
    ])
}

fn eig_rows(plan: &ResolvedPlan, grid: &Arc<StructuredGrid>, id: &str) -> Result<Vec<ReportRow>> {
    let op = flux_op(plan, grid)?;
    let fwd = principal_eigenvalue(&op)?;
    let bwd = principal_eigenvalue(&adjoint_of(&op)?)?;
    Ok(vec![
        judged_if_principal(ReportRow::new(id, "lambda0", fwd.lambda0), plan),
        ReportRow::new(id, "transpose-gap", (fwd.lambda0 - bwd.lambda0).abs())
            .bounded(TRANSPOSE_TOL),
        ReportRow::new(id, "residual", fwd.residual),
    ])
}

fn laplace_rows(plan: &ResolvedPlan, grid: &Arc<StructuredGrid>, id: &str) -> Result<Vec<ReportRow>> {
    let op = flux_op(plan, grid)?;
    let ones = GridFunction::constant(1.0, grid);
    let single = plan.betas.len() == 1;
    let mut rows = Vec::new();
    for &beta in &plan.betas {
        let prof = laplace_profile(&op, beta)?;
        let saddle = saddle_from_poisson(&op, beta, &ones)?;
        let mut row = ReportRow::new(id, format!("laplace-integral({beta})"), prof.integral);
        if single {
            row = judged_if_principal(row, plan);
        }
        rows.push(row);
        rows.push(
            ReportRow::new(
                id,
                format!("saddle-closure({beta})"),
                rel_gap(saddle.value, beta / prof.integral),
            )
            .bounded(ROUTE_TOL),
        );
    }
    Ok(rows)
}

fn expmoment_rows(
    plan: &ResolvedPlan,
    grid: &Arc<StructuredGrid>,
    id: &str,
) -> Result<Vec<ReportRow>> {
    let op = flux_op(plan, grid)?;
    let ones = GridFunction::constant(1.0, grid);
    let space = TrialSpaceSpec::new(&op, &ones, 1.0)?;
    let single = plan.betas.len() == 1;
    let mut rows = Vec::new();
    for &beta in &plan.betas {
        let value = exp_moment_variational(&op, beta, &space)?;
        let prof = exp_moment_profile(&op, beta)?;
        if prof.divergent {
            rows.push(ReportRow::new(id, format!("exp-moment-divergent({beta})"), 1.0));
            let consistent = if value == 0.0 { 1.0 } else { 0.0 };
            rows.push(
                ReportRow::new(id, format!("divergence-consistency({beta})"), consistent)
                    .judged(1.0, 0.0),
            );
        } else {
            let mut row = ReportRow::new(id, format!("exp-moment-value({beta})"), value);
            if single {
                row = judged_if_principal(row, plan);
            }
            rows.push(row);
            rows.push(ReportRow::new(id, format!("exp-moment-divergent({beta})"), 0.0));
            rows.push(
                ReportRow::new(
                    id,
                    format!("route-closure({beta})"),
                    rel_gap(value, beta / prof.integral),
                )
                .bounded(ROUTE_TOL),
            );
        }
    }
    Ok(rows)
}

fn mc_rows(plan: &ResolvedPlan, id: &str) -> Result<Vec<ReportRow>> {
    let mc = plan.mc.as_ref().expect("resolve enforces the mc section");
    let sim = SimulationPlan {
        dt: mc.dt,
        paths: mc.paths,
        start: mc.start,
        seed: plan.seed,
        t_max: mc.t_max,
        betas: plan.betas.clone(),
    };
    let samples = simulate_exit_times(&sim, &plan.coeffs, &plan.domain)?;
    let estimates = estimate_functionals(&samples, &plan.betas, mc.t_max, mc.allow_heavy_tails)?;
    let mut rows = Vec::new();
    for est in &estimates {
        let tag = est.tag.to_string();
        let mut row = ReportRow::new(id, &*tag, est.estimate).with_stderr(est.stderr);
        if tag == "mean-exit" {
            row = judged_if_principal(row, plan);
        }
        rows.push(row);
        if est.unreliable {
            rows.push(ReportRow::new(id, format!("{tag}-unreliable"), 1.0));
        }
    }
    rows.push(ReportRow::new(id, "capped-fraction", samples.capped_fraction()));
    Ok(rows)
}

fn gamma_rows(plan: &ResolvedPlan, id: &str) -> Result<Vec<ReportRow>> {
    let sweep = GammaSweep {
        a: plan.coeffs.a.clone(),
        b: plan.coeffs.b.clone(),
        gammas: plan.gammas.clone(),
        betas: plan.betas.clone(),
        domain: plan.domain.clone(),
    };
    let table = run_gamma_sweep(&sweep)?;
    let mut rows = Vec::new();
    for row in &table.rows {
        let g = row.gamma;
        rows.push(ReportRow::new(
            id,
            format!("mean-integral[gamma={g}]"),
            row.mean_integral,
        ));
        for (&beta, &integral) in table.betas.iter().zip(&row.laplace_integrals) {
            rows.push(ReportRow::new(
                id,
                format!("laplace-integral[beta={beta}; gamma={g}]"),
                integral,
            ));
        }
    }
    let worst_gap = table
        .gaps
        .iter()
        .flat_map(|g| std::iter::once(g.mean_gap).chain(g.laplace_gaps.iter().copied()))
        .fold(0.0f64, f64::max);
    rows.push(ReportRow::new(id, "worst-symmetry-gap", worst_gap).bounded(SYMMETRY_TOL));
    let worst_violation = table
        .margins
        .iter()
        .flat_map(|m| std::iter::once(m.mean_margin).chain(m.laplace_margins.iter().copied()))
        .fold(0.0f64, |w, margin| w.max(-margin))
        .max(0.0);
    rows.push(ReportRow::new(id, "worst-monotone-violation", worst_violation).bounded(MARGIN_SLACK));
    Ok(rows)
}

fn monotonicity_rows(plan: &ResolvedPlan, id: &str) -> Result<Vec<ReportRow>> {
    let case = MonotonicityCase {
        a_lower: plan.coeffs.a.clone(),
        a_upper: plan
            .a_upper
            .clone()
            .expect("resolve enforces the dominating diffusion"),
        b_upper: plan.upper_drift.clone(),
        domain: plan.domain.clone(),
        betas: plan.betas.clone(),
        epsilons: plan.epsilons.clone(),
    };
    let rep = run_monotonicity(&case)?;
    let mut rows = Vec::new();
    for row in &rep.orderings {
        let flag = if row.ordered { 1.0 } else { 0.0 };
        rows.push(ReportRow::new(id, format!("ordered({})", row.quantity), flag).judged(1.0, 0.0));
        if row.margin.is_finite() {
            rows.push(ReportRow::new(id, format!("margin({})", row.quantity), row.margin));
        }
    }
    let base = rep
        .orderings
        .iter()
        .find(|r| r.quantity == "mean-exit")
        .map(|r| r.lower_value)
        .unwrap_or(1.0);
    for e in &rep.epsilon_rows {
        let eps = e.epsilon;
        rows.push(ReportRow::new(
            id,
            format!("mean-integral[eps={eps}]"),
            e.mean_integral,
        ));
        rows.push(
            ReportRow::new(id, format!("scaling-defect[eps={eps}]"), e.scaling_gap / base)
                .bounded(SCALING_TOL),
        );
    }
    Ok(rows)
}

fn exhaustion_rows(
    plan: &ResolvedPlan,
    grid: &Arc<StructuredGrid>,
    id: &str,
) -> Result<Vec<ReportRow>> {
    let op = flux_op(plan, grid)?;
    let xi = source_fn(plan, grid);
    let beta = first_beta(plan);
    let space = TrialSpaceSpec::new(&op, &xi, 1.0)?;
    let full = saddle_direct(&op, beta, &space)?.value;
    let seq = make_domain_sequence(&plan.domain, SequenceRule::ShrinkMargin, plan.levels)?;
    let masks = seq.support_masks(grid);

    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (k, (member, mask)) in seq.specs.iter().zip(&masks).enumerate() {
        let restricted = space.clone().with_mask(mask.clone())?;
        let value = saddle_direct(&op, beta, &restricted)?.value;
        if let MaskSpec::Margin(w) = member.mask {
            rows.push(ReportRow::new(id, format!("restriction-margin[{k}]"), w));
        }
        rows.push(ReportRow::new(id, format!("restricted-value[{k}]"), value));
        values.push(value);
    }
    let worst_increase = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max)
        .max(0.0);
    rows.push(ReportRow::new(id, "monotone-violation", worst_increase).bounded(EXHAUSTION_SLACK));
    rows.push(judged_if_principal(
        ReportRow::new(id, "full-domain-value", full),
        plan,
    ));
    if let Some(&last) = values.last() {
        rows.push(ReportRow::new(id, "exhaustion-defect", last - full));
    }
    Ok(rows)
}

fn ergodic_rows(plan: &ResolvedPlan, id: &str) -> Result<Vec<ReportRow>> {
    let rep = ergodic_report(&plan.coeffs, &plan.domain, &plan.betas)?;
    let mut rows = vec![
        judged_if_principal(ReportRow::new(id, "gibbs-normalizer", rep.z), plan),
        ReportRow::new(id, "interior-mass", rep.interior_mass),
        ReportRow::new(id, "mean-exit-pi", rep.mean_exit_pi),
        ReportRow::new(id, "lambda0", rep.lambda0),
    ];
    let balance = ReportRow::new(id, "detailed-balance-gap", rep.detailed_balance_gap);
    rows.push(if rep.pi_symmetric {
        balance.bounded(BALANCE_TOL)
    } else {
        balance
    });
    for identity in &rep.identities {
        rows.push(
            ReportRow::new(id, format!("identity-gap({})", identity.name), identity.gap)
                .bounded(IDENTITY_TOL),
        );
    }
    for em in &rep.exp_moments {
        let beta = em.beta;
        if em.divergent {
            rows.push(ReportRow::new(id, format!("exp-moment-divergent({beta})"), 1.0));
        } else {
            rows.push(ReportRow::new(id, format!("exp-moment({beta})"), em.value));
        }
        let consistent = if em.divergent != em.below_gap { 1.0 } else { 0.0 };
        rows.push(
            ReportRow::new(id, format!("regime-consistency({beta})"), consistent).judged(1.0, 0.0),
        );
    }
    Ok(rows)
}
