//! Euler–Maruyama exit-time sampling for the diffusion with generator
//! div(a grad) + b . grad, plus estimators for the exit functionals.
//!
//! Paths use counter-based random streams keyed by (seed, path index), so a
//! run is reproducible bit for bit regardless of how many worker threads
//! execute it. The scheme records the first step that lands outside the
//! domain; there is no boundary-crossing correction within a step, which
//! leaves the well-known O(sqrt(dt)) positive bias on exit times.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{loc, Error, Result};
use crate::fields::{CoefficientSet, ScalarField};
use crate::geometry::DomainSpec;
use crate::rng::derive_stream;

/// Start rule for the path ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartRule {
    /// Every path starts at the same point.
    Point([f64; 2]),
    /// Rejection-sampled uniform draw over the domain.
    UniformOnDomain,
    /// Rejection-sampled draw from the Gibbs density e^{-V} on the domain.
    /// Requires a potential in the coefficient set.
    GibbsPi,
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub dt: f64,
    pub paths: usize,
    pub start: StartRule,
    pub seed: u64,
    /// Paths still inside at this time are recorded as capped.
    pub t_max: f64,
    /// Rates for the Laplace-transform and exponential-moment estimates.
    pub betas: Vec<f64>,
}

impl SimulationPlan {
    pub fn from_point(x0: [f64; 2], dt: f64, paths: usize, t_max: f64, seed: u64) -> Self {
        SimulationPlan {
            dt,
            paths,
            start: StartRule::Point(x0),
            seed,
            t_max,
            betas: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::BadPlan {
                detail: format!("time step {} must be positive and finite", self.dt),
            });
        }
        if self.paths == 0 {
            return Err(Error::BadPlan {
                detail: "path count must be at least 1".into(),
            });
        }
        if !(self.t_max >= self.dt) || !self.t_max.is_finite() {
            return Err(Error::BadPlan {
                detail: format!(
                    "time horizon {} must cover at least one step of {}",
                    self.t_max, self.dt
                ),
            });
        }
        if self.betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::BadPlan {
                detail: "transform rates must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Drift and diffusion factor of the SDE realizing the generator: the Ito
/// process dX = (b + div a) dt + sigma dW with sigma sigma^T = 2a has
/// generator div(a grad) + b . grad for symmetric a. The divergence is taken
/// row-wise and computed by centered differences.
pub struct SdeCoefficients {
    coeffs: CoefficientSet,
    dimension: usize,
    h_fd: f64,
    cached_drift: Option<[f64; 2]>,
    cached_sigma: Option<[[f64; 2]; 2]>,
}

pub fn sde_from_generator(c: &CoefficientSet, domain: &DomainSpec) -> Result<SdeCoefficients> {
    let dimension = domain.dimension;
    let mut width = f64::INFINITY;
    for ax in 0..dimension {
        width = width.min(domain.extent[ax][1] - domain.extent[ax][0]);
    }
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::BadPlan {
            detail: "domain has no positive width".into(),
        });
    }
    let mut sde = SdeCoefficients {
        coeffs: c.clone(),
        dimension,
        h_fd: 1e-5 * width,
        cached_drift: None,
        cached_sigma: None,
    };
    // Constant fields are factored once up front; this also rejects a
    // degenerate constant diffusion before any path starts.
    if c.a.is_constant() {
        let mid = domain_center(domain);
        sde.cached_sigma = Some(sqrt_of_twice(c.a.eval(mid), dimension, mid)?);
        if c.b.is_constant() {
            sde.cached_drift = Some(c.b.eval(mid));
        }
    }
    Ok(sde)
}

fn domain_center(domain: &DomainSpec) -> [f64; 2] {
    let mut mid = [0.0; 2];
    for ax in 0..domain.dimension {
        mid[ax] = 0.5 * (domain.extent[ax][0] + domain.extent[ax][1]);
    }
    mid
}

impl SdeCoefficients {
    pub fn drift(&self, x: [f64; 2]) -> [f64; 2] {
        if let Some(d) = self.cached_drift {
            return d;
        }
        let mut out = self.coeffs.b.eval(x);
        if self.cached_sigma.is_none() {
            let h = self.h_fd;
            for j in 0..self.dimension {
                let mut div = 0.0;
                for i in 0..self.dimension {
                    let mut fwd = x;
                    fwd[i] += h;
                    let mut bwd = x;
                    bwd[i] -= h;
                    div += (self.coeffs.a.eval(fwd)[i][j] - self.coeffs.a.eval(bwd)[i][j])
                        / (2.0 * h);
                }
                out[j] += div;
            }
        }
        out
    }

    pub fn sigma(&self, x: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        if let Some(s) = self.cached_sigma {
            return Ok(s);
        }
        sqrt_of_twice(self.coeffs.a.eval(x), self.dimension, x)
    }
}

/// Principal square root of a + a^T. For a 2x2 SPD matrix m the root is
/// (m + sqrt(det m) I) / sqrt(tr m + 2 sqrt(det m)) by Cayley-Hamilton.
fn sqrt_of_twice(a: [[f64; 2]; 2], dimension: usize, x: [f64; 2]) -> Result<[[f64; 2]; 2]> {
    let m00 = 2.0 * a[0][0];
    if dimension == 1 {
        if !(m00 > 0.0) || !m00.is_finite() {
            return Err(Error::NotSpd {
                location: loc(&x, 1),
            });
        }
        return Ok([[m00.sqrt(), 0.0], [0.0, 0.0]]);
    }
    let m01 = a[0][1] + a[1][0];
    let m11 = 2.0 * a[1][1];
    let det = m00 * m11 - m01 * m01;
    let tr = m00 + m11;
    if !(det > 0.0 && tr > 0.0) || !det.is_finite() {
        return Err(Error::NotSpd {
            location: loc(&x, 2),
        });
    }
    let s = det.sqrt();
    let t = (tr + 2.0 * s).sqrt();
    Ok([[(m00 + s) / t, m01 / t], [m01 / t, (m11 + s) / t]])
}

/// Exit-time draws; a capped entry records t_max instead of an exit time.
#[derive(Debug, Clone)]
pub struct ExitTimeSamples {
    pub times: Vec<f64>,
    pub capped: Vec<bool>,
}

impl ExitTimeSamples {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn capped_fraction(&self) -> f64 {
        if self.times.is_empty() {
            return 0.0;
        }
        self.capped.iter().filter(|&&c| c).count() as f64 / self.times.len() as f64
    }
}

enum StartSampler<'a> {
    Point([f64; 2]),
    Uniform,
    Gibbs { v: &'a ScalarField, v_min: f64 },
}

const REJECTION_CAP: usize = 100_000;

impl<'a> StartSampler<'a> {
    fn build(
        rule: StartRule,
        coeffs: &'a CoefficientSet,
        domain: &DomainSpec,
    ) -> Result<StartSampler<'a>> {
        match rule {
            StartRule::Point(p) => {
                if !domain.contains_point(p) {
                    return Err(Error::StartOutsideDomain {
                        location: loc(&p, domain.dimension),
                    });
                }
                Ok(StartSampler::Point(p))
            }
            StartRule::UniformOnDomain => Ok(StartSampler::Uniform),
            StartRule::GibbsPi => {
                let v = coeffs.potential.as_ref().ok_or(Error::MissingPotential)?;
                // Envelope for rejection sampling: the potential minimum over
                // a fine scan of the domain. The scan resolution bounds the
                // clipping error near the mode well below sampling noise.
                let per_axis = if domain.dimension == 1 { 4097 } else { 257 };
                let mut v_min = f64::INFINITY;
                let mut probe = [0.0; 2];
                for i in 0..per_axis {
                    let fi = i as f64 / (per_axis - 1) as f64;
                    probe[0] = domain.extent[0][0]
                        + fi * (domain.extent[0][1] - domain.extent[0][0]);
                    if domain.dimension == 1 {
                        if domain.contains_point(probe) {
                            v_min = v_min.min(v.eval(probe));
                        }
                        continue;
                    }
                    for j in 0..per_axis {
                        let fj = j as f64 / (per_axis - 1) as f64;
                        probe[1] = domain.extent[1][0]
                            + fj * (domain.extent[1][1] - domain.extent[1][0]);
                        if domain.contains_point(probe) {
                            v_min = v_min.min(v.eval(probe));
                        }
                    }
                }
                if !v_min.is_finite() {
                    return Err(Error::BadPlan {
                        detail: "no usable Gibbs start region inside the domain".into(),
                    });
                }
                Ok(StartSampler::Gibbs { v, v_min })
            }
        }
    }

    fn draw(&self, rng: &mut impl Rng, domain: &DomainSpec) -> Result<[f64; 2]> {
        match self {
            StartSampler::Point(p) => Ok(*p),
            StartSampler::Uniform => {
                for _ in 0..REJECTION_CAP {
                    let x = uniform_in_box(rng, domain);
                    if domain.contains_point(x) {
                        return Ok(x);
                    }
                }
                Err(Error::BadPlan {
                    detail: "uniform start sampling found no interior point".into(),
                })
            }
            StartSampler::Gibbs { v, v_min } => {
                for _ in 0..REJECTION_CAP {
                    let x = uniform_in_box(rng, domain);
                    if !domain.contains_point(x) {
                        continue;
                    }
                    let u: f64 = rng.gen();
                    if u < (-(v.eval(x) - v_min)).exp() {
                        return Ok(x);
                    }
                }
                Err(Error::BadPlan {
                    detail: "Gibbs start sampling stalled; potential may be too steep".into(),
                })
            }
        }
    }
}

fn uniform_in_box(rng: &mut impl Rng, domain: &DomainSpec) -> [f64; 2] {
    let mut x = [0.0; 2];
    for ax in 0..domain.dimension {
        x[ax] = rng.gen_range(domain.extent[ax][0]..domain.extent[ax][1]);
    }
    x
}

/// Run the Euler scheme for every path in the plan. An exit during step k
/// (zero-based) is recorded at time (k+1) dt; paths that never leave before
/// the horizon are capped at t_max. Path i draws from the stream keyed by
/// (seed, i), so results do not depend on the worker count.
pub fn simulate_exit_times(
    plan: &SimulationPlan,
    coeffs: &CoefficientSet,
    domain: &DomainSpec,
) -> Result<ExitTimeSamples> {
    plan.validate()?;
    let sde = sde_from_generator(coeffs, domain)?;
    let sampler = StartSampler::build(plan.start, coeffs, domain)?;
    let dim = domain.dimension;
    let max_steps = (plan.t_max / plan.dt * (1.0 + 1e-12)).floor() as usize;
    let sqrt_dt = plan.dt.sqrt();

    let rows = (0..plan.paths)
        .into_par_iter()
        .map(|path| -> Result<(f64, bool)> {
            let mut rng = derive_stream(plan.seed, path as u64);
            let mut x = sampler.draw(&mut rng, domain)?;
            for k in 0..max_steps {
                let drift = sde.drift(x);
                let sigma = sde.sigma(x)?;
                let mut next = x;
                let mut z = [0.0; 2];
                for zk in z.iter_mut().take(dim) {
                    *zk = rng.sample(StandardNormal);
                }
                for i in 0..dim {
                    let mut noise = 0.0;
                    for j in 0..dim {
                        noise += sigma[i][j] * z[j];
                    }
                    next[i] = x[i] + drift[i] * plan.dt + sqrt_dt * noise;
                }
                if !next[..dim].iter().all(|c| c.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "path state".into(),
                        location: loc(&x, dim),
                    });
                }
                if !domain.contains_point(next) {
                    return Ok(((k + 1) as f64 * plan.dt, false));
                }
                x = next;
            }
            Ok((plan.t_max, true))
        })
        .collect::<Result<Vec<_>>>()?;

    let (times, capped) = rows.into_iter().unzip();
    Ok(ExitTimeSamples { times, capped })
}

/// Which functional an estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalTag {
    MeanExit,
    /// E e^{-beta tau}.
    Laplace(f64),
    /// E e^{+beta tau}.
    ExpMoment(f64),
    /// Log-slope of the empirical survival curve; estimates the principal
    /// eigenvalue (a negative rate).
    SurvivalRate,
}

impl fmt::Display for FunctionalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalTag::MeanExit => write!(f, "mean-exit"),
            FunctionalTag::Laplace(b) => write!(f, "laplace({b})"),
            FunctionalTag::ExpMoment(b) => write!(f, "exp-moment({b})"),
            FunctionalTag::SurvivalRate => write!(f, "survival-rate"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct McEstimate {
    pub tag: FunctionalTag,
    pub estimate: f64,
    pub stderr: f64,
    pub paths: usize,
    pub capped_fraction: f64,
    /// Set on exponential moments when capping or spectral proximity makes
    /// the tail contribution untrustworthy.
    pub unreliable: bool,
}

/// Point estimates with standard errors for the exit functionals: mean exit
/// time, the survival-curve rate (when the sample supports a fit), and per
/// rate in `betas` a Laplace transform and an exponential moment.
///
/// Exponential moments at beta within 20% of the estimated survival rate are
/// refused unless `allow_heavy_tails` is set, and are flagged unreliable when
/// forced or when any path was capped: the missing tail then carries an
/// unbounded contribution the sample cannot see.
pub fn estimate_functionals(
    samples: &ExitTimeSamples,
    betas: &[f64],
    t_max: f64,
    allow_heavy_tails: bool,
) -> Result<Vec<McEstimate>> {
    let n = samples.times.len();
    if n == 0 || samples.capped.len() != n {
        return Err(Error::BadPlan {
            detail: "samples are empty or flags do not match times".into(),
        });
    }
    if samples.times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            what: "exit-time sample".into(),
            location: "sample vector".into(),
        });
    }
    let capped_fraction = samples.capped_fraction();
    if capped_fraction == 1.0 {
        return Err(Error::BadPlan {
            detail: "every path hit the time cap; raise t_max or shrink the domain".into(),
        });
    }

    let base = |tag: FunctionalTag, est: f64, se: f64| McEstimate {
        tag,
        estimate: est,
        stderr: se,
        paths: n,
        capped_fraction,
        unreliable: false,
    };

    let mut out = Vec::with_capacity(2 + 2 * betas.len());
    let (mean, se) = mean_and_stderr(&samples.times);
    out.push(base(FunctionalTag::MeanExit, mean, se));

    let rate = survival_rate(samples, t_max);
    if let Some((lambda, lambda_se)) = rate {
        out.push(base(FunctionalTag::SurvivalRate, lambda, lambda_se));
    }

    let mut scratch = vec![0.0; n];
    for &beta in betas {
        if !beta.is_finite() {
            return Err(Error::BadPlan {
                detail: "transform rates must be finite".into(),
            });
        }
        for (s, t) in scratch.iter_mut().zip(&samples.times) {
            *s = (-beta * t).exp();
        }
        let (m, se) = mean_and_stderr(&scratch);
        out.push(base(FunctionalTag::Laplace(beta), m, se));

        // Without a rate estimate a positive beta cannot be vetted; the
        // moment is still computed but flagged.
        let (near_gap, shaky) = match rate {
            Some((lambda, _)) => {
                let near = beta >= 0.8 * lambda.abs();
                (near, near)
            }
            None => (false, beta > 0.0),
        };
        if near_gap && !allow_heavy_tails {
            return Err(Error::BadPlan {
                detail: format!(
                    "exponential moment at beta = {beta} sits within 20% of the estimated \
                     survival rate; the sample mean is not trustworthy there (set \
                     allow_heavy_tails to force it)"
                ),
            });
        }
        for (s, t) in scratch.iter_mut().zip(&samples.times) {
            *s = (beta * t).exp();
        }
        let (m, se) = mean_and_stderr(&scratch);
        let mut e = base(FunctionalTag::ExpMoment(beta), m, se);
        e.unreliable = capped_fraction > 0.0 || shaky;
        out.push(e);
    }
    Ok(out)
}

fn mean_and_stderr(vals: &[f64]) -> (f64, f64) {
    if vals.windows(2).all(|w| w[0] == w[1]) {
        return (vals[0], 0.0);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let ss = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n * (n - 1.0))).sqrt())
}

/// Least-squares slope of log P(tau > t) over the upper part of the sample,
/// between the median and the 95th percentile of the observed exits. Capped
/// paths count as surviving at every fitted time. Returns None when the
/// sample is too small or too degenerate to support a fit.
fn survival_rate(samples: &ExitTimeSamples, t_max: f64) -> Option<(f64, f64)> {
    let mut exited: Vec<f64> = samples
        .times
        .iter()
        .zip(&samples.capped)
        .filter(|&(_, &c)| !c)
        .map(|(&t, _)| t)
        .collect();
    if exited.len() < 32 {
        return None;
    }
    exited.sort_unstable_by(f64::total_cmp);
    let quantile = |p: f64| exited[((exited.len() - 1) as f64 * p) as usize];
    let t_lo = quantile(0.5);
    let t_hi = quantile(0.95).min(t_max * 0.999);
    if !(t_hi > t_lo) {
        return None;
    }

    let mut all = samples.times.clone();
    all.sort_unstable_by(f64::total_cmp);
    let n = all.len() as f64;
    const POINTS: usize = 16;
    let mut ts = Vec::with_capacity(POINTS);
    let mut logs = Vec::with_capacity(POINTS);
    for k in 0..POINTS {
        let t = t_lo + (t_hi - t_lo) * k as f64 / (POINTS - 1) as f64;
        let surviving = all.len() - all.partition_point(|&v| v <= t);
        if surviving == 0 {
            break;
        }
        ts.push(t);
        logs.push((surviving as f64 / n).ln());
    }
    if ts.len() < 3 {
        return None;
    }

    let k = ts.len() as f64;
    let t_bar = ts.iter().sum::<f64>() / k;
    let y_bar = logs.iter().sum::<f64>() / k;
    let sxx = ts.iter().map(|t| (t - t_bar) * (t - t_bar)).sum::<f64>();
    let sxy = ts
        .iter()
        .zip(&logs)
        .map(|(t, y)| (t - t_bar) * (y - y_bar))
        .sum::<f64>();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let resid = ts
        .iter()
        .zip(&logs)
        .map(|(t, y)| {
            let fit = y_bar + slope * (t - t_bar);
            (y - fit) * (y - fit)
        })
        .sum::<f64>();
    let se = (resid / (k - 2.0) / sxx).sqrt();
    Some((slope, se))
}
