//! TOML experiment configs and their resolution into library inputs.
//!
//! A config names exactly one experiment kind plus the domain, coefficients,
//! numerics, and output destination it runs with. `resolve` turns the parsed
//! sections into validated library types; everything it rejects is a config
//! error (exit 2), while failures inside the solvers surface later as
//! numerical errors (exit 3).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use exitlab::fields::{CoefficientSet, MatrixField, ScalarField, VectorField};
use exitlab::geometry::{DomainSpec, MaskSpec};
use exitlab::montecarlo::StartRule;

use crate::error::{CliError, Result};
use crate::report::OutputFormat;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub domain: DomainSection,
    pub coefficients: CoefficientsSection,
    pub numerics: NumericsSection,
    pub mc: Option<McSection>,
    pub output: OutputSection,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    Saddle,
    Eig,
    Laplace,
    Expmoment,
    Mc,
    GammaSweep,
    Monotonicity,
    Exhaustion,
    Ergodic,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub dimension: usize,
    /// Per-axis [lo, hi].
    pub extent: Vec<[f64; 2]>,
    /// `margin(w)`, `ball(cx[, cy], r)`, or an indicator expression kept
    /// where positive. Absent means the whole box.
    pub mask: Option<String>,
}

fn default_a() -> String {
    "identity".into()
}

fn default_b() -> String {
    "zero".into()
}

fn default_source() -> String {
    "1".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSection {
    /// Diffusion matrix preset or scalar expression; `a_entries` gives the
    /// full row-major entry list instead.
    #[serde(default = "default_a")]
    pub a: String,
    #[serde(default)]
    pub a_entries: Option<Vec<String>>,
    /// Drift preset or expression; `b_components` gives one expression per
    /// axis instead.
    #[serde(default = "default_b")]
    pub b: String,
    #[serde(default)]
    pub b_components: Option<Vec<String>>,
    #[serde(default)]
    pub potential: Option<String>,
    /// Second diffusion matrix for ordering experiments; must dominate `a`.
    #[serde(default)]
    pub a_upper: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    /// Nodes per axis, boundary included (at least 3).
    pub resolution: Vec<usize>,
    #[serde(default)]
    pub betas: Vec<f64>,
    /// Drift strengths for `gamma-sweep`.
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// Diffusion scalings for `monotonicity`.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Number of shrink-margin members for `exhaustion`.
    #[serde(default)]
    pub levels: Option<usize>,
    /// Source term for `solve`, `saddle`, and `exhaustion`.
    #[serde(default = "default_source")]
    pub source: String,
    /// Expected value and tolerance for the experiment's principal quantity.
    #[serde(default)]
    pub expected: Option<f64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub paths: usize,
    pub dt: f64,
    pub t_max: f64,
    /// A start point (`[0.5]`), `"uniform"`, or `"gibbs"`.
    pub start: StartSpec,
    #[serde(default)]
    pub allow_heavy_tails: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Named(String),
    Point(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub format: OutputFormat,
    pub path: String,
}

/// Command-line overrides applied during resolution.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ResolvedMc {
    pub paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub start: StartRule,
    pub allow_heavy_tails: bool,
}

/// A validated experiment ready to run.
#[derive(Debug)]
pub struct ResolvedPlan {
    pub kind: ExperimentKind,
    pub domain: DomainSpec,
    pub coeffs: CoefficientSet,
    pub a_upper: Option<MatrixField>,
    /// Drift for the dominating operator in ordering runs; `None` when the
    /// config drift is the zero preset, which unlocks the exponential rows.
    pub upper_drift: Option<VectorField>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub levels: usize,
    pub source: ScalarField,
    pub expected: Option<(f64, f64)>,
    pub mc: Option<ResolvedMc>,
    pub seed: u64,
    pub format: OutputFormat,
    pub destination: PathBuf,
    pub summary: Vec<String>,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Saddle => "saddle",
            ExperimentKind::Eig => "eig",
            ExperimentKind::Laplace => "laplace",
            ExperimentKind::Expmoment => "expmoment",
            ExperimentKind::Mc => "mc",
            ExperimentKind::GammaSweep => "gamma-sweep",
            ExperimentKind::Monotonicity => "monotonicity",
            ExperimentKind::Exhaustion => "exhaustion",
            ExperimentKind::Ergodic => "ergodic",
        };
        write!(f, "{s}")
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// `margin(w)`, `ball(cx[, cy], r)`, or an indicator expression.
fn parse_mask(text: &str, dimension: usize) -> Result<MaskSpec> {
    let t = text.trim();
    if t.is_empty() || t == "all" {
        return Ok(MaskSpec::All);
    }
    if let Some(inner) = t.strip_prefix("margin(").and_then(|s| s.strip_suffix(')')) {
        let w: f64 = inner
            .trim()
            .parse()
            .map_err(|_| config_err(format!("bad margin width {inner:?}")))?;
        return Ok(MaskSpec::Margin(w));
    }
    if let Some(inner) = t.strip_prefix("ball(").and_then(|s| s.strip_suffix(')')) {
        let parts: Vec<f64> = inner
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| config_err(format!("bad ball spec {inner:?}")))?;
        return match (dimension, parts.as_slice()) {
            (1, [c, r]) => Ok(MaskSpec::Ball {
                center: [*c, 0.0],
                radius: *r,
            }),
            (2, [cx, cy, r]) => Ok(MaskSpec::Ball {
                center: [*cx, *cy],
                radius: *r,
            }),
            _ => Err(config_err(format!(
                "ball mask takes center then radius: {} numbers given for {dimension}D",
                parts.len()
            ))),
        };
    }
    Ok(MaskSpec::indicator(t, dimension)?)
}

fn resolve_domain(section: &DomainSection) -> Result<DomainSpec> {
    let dim = section.dimension;
    if dim != 1 && dim != 2 {
        return Err(config_err(format!("dimension must be 1 or 2, got {dim}")));
    }
    if section.extent.len() != dim {
        return Err(config_err(format!(
            "extent needs one [lo, hi] pair per axis: got {} for {dim}D",
            section.extent.len()
        )));
    }
    Ok(DomainSpec {
        dimension: dim,
        extent: [
            section.extent[0],
            if dim == 2 { section.extent[1] } else { [0.0, 0.0] },
        ],
        resolution: [0, 0],
        mask: match &section.mask {
            Some(text) => parse_mask(text, dim)?,
            None => MaskSpec::All,
        },
    })
}

fn describe_mask(mask: &MaskSpec) -> String {
    match mask {
        MaskSpec::All => "all".into(),
        MaskSpec::Margin(w) => format!("margin({w})"),
        MaskSpec::Ball { center, radius } => {
            format!("ball(({}, {}), {radius})", center[0], center[1])
        }
        MaskSpec::Indicator(_) => "indicator".into(),
    }
}

fn list(vals: &[f64]) -> String {
    let parts: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

pub fn resolve(config: &ExperimentConfig, overrides: &Overrides) -> Result<ResolvedPlan> {
    let kind = config.experiment.kind;
    let mut domain = resolve_domain(&config.domain)?;
    let dim = domain.dimension;

    let res = &config.numerics.resolution;
    if res.len() != dim {
        return Err(config_err(format!(
            "resolution needs one entry per axis: got {} for {dim}D",
            res.len()
        )));
    }
    domain.resolution = [res[0], if dim == 2 { res[1] } else { 1 }];

    let cs = &config.coefficients;
    let a = match &cs.a_entries {
        Some(entries) => MatrixField::from_exprs(entries, dim)?,
        None => MatrixField::parse(&cs.a, dim)?,
    };
    let b = match &cs.b_components {
        Some(comps) => VectorField::from_exprs(comps, dim)?,
        None => VectorField::parse(&cs.b, dim)?,
    };
    let drift_is_zero = cs.b_components.is_none() && cs.b.trim() == "zero";
    let upper_drift = (!drift_is_zero).then(|| b.clone());
    let mut coeffs = CoefficientSet::new(a, b);
    if let Some(v) = &cs.potential {
        coeffs.potential = Some(ScalarField::parse(v, dim)?);
    }
    let a_upper = match &cs.a_upper {
        Some(text) => Some(MatrixField::parse(text, dim)?),
        None => None,
    };

    let num = &config.numerics;
    for &beta in &num.betas {
        if !beta.is_finite() || beta < 0.0 {
            return Err(config_err(format!(
                "betas must be finite and nonnegative, got {beta}"
            )));
        }
    }
    match (num.expected, num.tolerance) {
        (Some(_), None) | (None, Some(_)) => {
            return Err(config_err(
                "expected and tolerance must be given together",
            ));
        }
        (Some(_), Some(t)) if !(t >= 0.0) => {
            return Err(config_err(format!("tolerance must be nonnegative, got {t}")));
        }
        _ => {}
    }
    let expected = num.expected.zip(num.tolerance);

    match kind {
        ExperimentKind::Laplace | ExperimentKind::Expmoment | ExperimentKind::Ergodic => {
            if num.betas.is_empty() {
                return Err(config_err(format!("{kind} needs a nonempty betas list")));
            }
            if num.betas.iter().any(|&b| b <= 0.0) {
                return Err(config_err(format!("{kind} needs strictly positive betas")));
            }
        }
        ExperimentKind::GammaSweep => {
            if num.gammas.is_empty() {
                return Err(config_err("gamma-sweep needs a nonempty gammas list"));
            }
        }
        ExperimentKind::Monotonicity => {
            if a_upper.is_none() {
                return Err(config_err(
                    "monotonicity needs coefficients.a_upper, the dominating diffusion",
                ));
            }
        }
        ExperimentKind::Exhaustion => {
            if config.domain.mask.is_some() {
                return Err(config_err(
                    "exhaustion shrinks the whole box; drop the domain mask",
                ));
            }
        }
        _ => {}
    }
    if kind == ExperimentKind::Ergodic && coeffs.potential.is_none() {
        return Err(config_err("ergodic needs coefficients.potential"));
    }
    if expected.is_some()
        && matches!(
            kind,
            ExperimentKind::GammaSweep | ExperimentKind::Monotonicity
        )
    {
        return Err(config_err(format!(
            "{kind} has no principal scalar; drop expected / tolerance"
        )));
    }
    if expected.is_some()
        && matches!(kind, ExperimentKind::Laplace | ExperimentKind::Expmoment)
        && num.betas.len() != 1
    {
        return Err(config_err(
            "expected / tolerance needs a single beta to refer to",
        ));
    }

    let mc = match (kind, &config.mc) {
        (ExperimentKind::Mc, None) => {
            return Err(config_err("mc experiment needs an [mc] section"));
        }
        (ExperimentKind::Mc, Some(section)) => {
            let start = match &section.start {
                StartSpec::Named(name) => match name.as_str() {
                    "uniform" => StartRule::UniformOnDomain,
                    "gibbs" => StartRule::GibbsPi,
                    other => {
                        return Err(config_err(format!(
                            "start must be \"uniform\", \"gibbs\", or a point, got {other:?}"
                        )));
                    }
                },
                StartSpec::Point(p) => {
                    if p.len() != dim {
                        return Err(config_err(format!(
                            "start point needs {dim} coordinates, got {}",
                            p.len()
                        )));
                    }
                    StartRule::Point([p[0], if dim == 2 { p[1] } else { 0.0 }])
                }
            };
            Some(ResolvedMc {
                paths: section.paths,
                dt: section.dt,
                t_max: section.t_max,
                start,
                allow_heavy_tails: section.allow_heavy_tails,
            })
        }
        (_, Some(_)) => {
            return Err(config_err(format!("[mc] section is not used by {kind}")));
        }
        (_, None) => None,
    };

    let source = ScalarField::parse(&num.source, dim)?;
    let seed = overrides.seed.or(config.seed).unwrap_or(0);

    let configured = Path::new(&config.output.path);
    let destination = match &overrides.output_dir {
        Some(dir) => {
            let name = configured
                .file_name()
                .ok_or_else(|| config_err(format!("output path {configured:?} has no file name")))?;
            dir.join(name)
        }
        None => configured.to_path_buf(),
    };

    let mut summary = vec![
        format!("experiment: {kind}"),
        format!(
            "domain: {dim}D extent {} resolution {:?} mask {}",
            (0..dim)
                .map(|ax| format!("[{}, {}]", domain.extent[ax][0], domain.extent[ax][1]))
                .collect::<Vec<_>>()
                .join(" x "),
            &res[..],
            describe_mask(&domain.mask)
        ),
        format!(
            "coefficients: a = {}, b = {}{}",
            cs.a_entries
                .as_ref()
                .map(|e| format!("entries {e:?}"))
                .unwrap_or_else(|| cs.a.clone()),
            cs.b_components
                .as_ref()
                .map(|e| format!("components {e:?}"))
                .unwrap_or_else(|| cs.b.clone()),
            cs.potential
                .as_ref()
                .map(|v| format!(", V = {v}"))
                .unwrap_or_default()
        ),
    ];
    if let Some(up) = &cs.a_upper {
        summary.push(format!("dominating diffusion: {up}"));
    }
    if !num.betas.is_empty() {
        summary.push(format!("betas: {}", list(&num.betas)));
    }
    if !num.gammas.is_empty() {
        summary.push(format!("gammas: {}", list(&num.gammas)));
    }
    if !num.epsilons.is_empty() {
        summary.push(format!("epsilons: {}", list(&num.epsilons)));
    }
    if num.source != "1" {
        summary.push(format!("source: {}", num.source));
    }
    if let Some((e, t)) = expected {
        summary.push(format!("expected: {e} within {t}"));
    }
    if let Some(m) = &mc {
        summary.push(format!(
            "mc: {} paths, dt = {}, horizon {}",
            m.paths, m.dt, m.t_max
        ));
    }
    summary.push(format!("seed: {seed}"));
    summary.push(format!(
        "output: {} -> {}",
        config.output.format,
        destination.display()
    ));

    Ok(ResolvedPlan {
        kind,
        domain,
        coeffs,
        a_upper,
        upper_drift,
        betas: num.betas.clone(),
        gammas: num.gammas.clone(),
        epsilons: num.epsilons.clone(),
        levels: num.levels.unwrap_or(6),
        source,
        expected,
        mc,
        seed,
        format: config.output.format,
        destination,
        summary,
    })
}
