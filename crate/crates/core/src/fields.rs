//! Coefficient fields a, b, V and sources, as presets or parsed expressions,
//! plus sampled validation of the standing assumptions (ellipticity, bounded
//! drift, grid Péclet, potential tail decay).

use crate::error::{loc, Error, Result};
use crate::expr::{parse_expression, Expr};
use crate::geometry::StructuredGrid;

#[derive(Debug, Clone)]
enum Rule {
    Constant(f64),
    Formula(Expr),
}

impl Rule {
    fn eval(&self, p: &[f64]) -> f64 {
        match self {
            Rule::Constant(v) => *v,
            Rule::Formula(e) => e.eval(p),
        }
    }

    fn scaled(&self, factor: f64) -> Rule {
        match self {
            Rule::Constant(v) => Rule::Constant(factor * v),
            Rule::Formula(e) => Rule::Formula(Expr::Mul(
                Box::new(Expr::Num(factor)),
                Box::new(e.clone()),
            )),
        }
    }
}

/// Scalar coefficient or source term.
#[derive(Debug, Clone)]
pub struct ScalarField {
    rule: Rule,
    dimension: usize,
}

impl ScalarField {
    pub fn constant(v: f64, dimension: usize) -> Self {
        ScalarField {
            rule: Rule::Constant(v),
            dimension,
        }
    }

    /// Parse a preset name or an arithmetic expression. The only scalar
    /// preset is `quadratic-potential`, V(x) = |x|^2 / 2.
    pub fn parse(text: &str, dimension: usize) -> Result<Self> {
        let text = text.trim();
        if text == "quadratic-potential" {
            let e = match dimension {
                1 => parse_expression("x^2/2", 1)?,
                _ => parse_expression("(x^2 + y^2)/2", 2)?,
            };
            return Ok(ScalarField {
                rule: Rule::Formula(e),
                dimension,
            });
        }
        Ok(ScalarField {
            rule: Rule::Formula(parse_expression(text, dimension)?),
            dimension,
        })
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.rule.eval(&p[..self.dimension])
    }
}

/// Drift field with one component per axis.
#[derive(Debug, Clone)]
pub struct VectorField {
    comps: Vec<Rule>,
    dimension: usize,
}

impl VectorField {
    pub fn zero(dimension: usize) -> Self {
        VectorField {
            comps: vec![Rule::Constant(0.0); dimension],
            dimension,
        }
    }

    pub fn constant(c: [f64; 2], dimension: usize) -> Self {
        VectorField {
            comps: (0..dimension).map(|ax| Rule::Constant(c[ax])).collect(),
            dimension,
        }
    }

    /// Presets: `zero`, `rotation` (2D, b = (-y, x)), `constant-drift(c, …)`.
    pub fn parse(text: &str, dimension: usize) -> Result<Self> {
        let text = text.trim();
        match text {
            "zero" => return Ok(VectorField::zero(dimension)),
            "rotation" => {
                if dimension != 2 {
                    return Err(Error::Parse {
                        offset: 0,
                        message: "preset 'rotation' needs a 2-dimensional domain".into(),
                    });
                }
                return Ok(VectorField {
                    comps: vec![
                        Rule::Formula(parse_expression("-y", 2)?),
                        Rule::Formula(parse_expression("x", 2)?),
                    ],
                    dimension,
                });
            }
            _ => {}
        }
        if let Some(args) = preset_args(text, "constant-drift") {
            let args = args?;
            if args.len() != dimension {
                return Err(Error::DimensionMismatch {
                    field_dim: args.len(),
                    grid_dim: dimension,
                });
            }
            let comps = args
                .iter()
                .map(|s| parse_number(s).map(Rule::Constant))
                .collect::<Result<Vec<_>>>()?;
            return Ok(VectorField { comps, dimension });
        }
        if dimension == 1 {
            return Ok(VectorField {
                comps: vec![Rule::Formula(parse_expression(text, 1)?)],
                dimension,
            });
        }
        Err(Error::Parse {
            offset: 0,
            message: format!("'{text}' is not a vector preset; give one expression per component"),
        })
    }

    /// One expression per component.
    pub fn from_exprs(entries: &[String], dimension: usize) -> Result<Self> {
        if entries.len() != dimension {
            return Err(Error::DimensionMismatch {
                field_dim: entries.len(),
                grid_dim: dimension,
            });
        }
        let comps = entries
            .iter()
            .map(|s| parse_expression(s, dimension).map(Rule::Formula))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField { comps, dimension })
    }

    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (ax, c) in self.comps.iter().enumerate() {
            out[ax] = c.eval(&p[..self.dimension]);
        }
        out
    }

    /// No component depends on the coordinates.
    pub fn is_constant(&self) -> bool {
        self.comps.iter().all(rule_is_coordinate_free)
    }

    /// The field `factor * b`.
    pub fn scaled(&self, factor: f64) -> Self {
        VectorField {
            comps: self.comps.iter().map(|r| r.scaled(factor)).collect(),
            dimension: self.dimension,
        }
    }
}

fn rule_is_coordinate_free(r: &Rule) -> bool {
    match r {
        Rule::Constant(_) => true,
        Rule::Formula(e) => e.is_constant(),
    }
}

/// Diffusion matrix field; entries beyond the dimension are unused.
#[derive(Debug, Clone)]
pub struct MatrixField {
    /// Row-major d*d entry rules.
    entries: Vec<Rule>,
    dimension: usize,
    /// True when the entry trees are symmetric by construction.
    symmetric: bool,
}

impl MatrixField {
    pub fn identity(dimension: usize) -> Self {
        MatrixField::scaled_identity(1.0, dimension)
    }

    pub fn scaled_identity(eps: f64, dimension: usize) -> Self {
        let mut entries = vec![Rule::Constant(0.0); dimension * dimension];
        for i in 0..dimension {
            entries[i * dimension + i] = Rule::Constant(eps);
        }
        MatrixField {
            entries,
            dimension,
            symmetric: true,
        }
    }

    /// Presets: `identity`, `scaled-identity(eps)`, `diag(expr, …)`. Any
    /// other text parses as a scalar expression yielding an isotropic matrix.
    pub fn parse(text: &str, dimension: usize) -> Result<Self> {
        let text = text.trim();
        if text == "identity" {
            return Ok(MatrixField::identity(dimension));
        }
        if let Some(args) = preset_args(text, "scaled-identity") {
            let args = args?;
            if args.len() != 1 {
                return Err(Error::Parse {
                    offset: 0,
                    message: "scaled-identity takes exactly one number".into(),
                });
            }
            return Ok(MatrixField::scaled_identity(parse_number(&args[0])?, dimension));
        }
        if let Some(args) = preset_args(text, "diag") {
            let args = args?;
            if args.len() != dimension {
                return Err(Error::DimensionMismatch {
                    field_dim: args.len(),
                    grid_dim: dimension,
                });
            }
            let mut entries = vec![Rule::Constant(0.0); dimension * dimension];
            for (i, s) in args.iter().enumerate() {
                entries[i * dimension + i] = Rule::Formula(parse_expression(s, dimension)?);
            }
            return Ok(MatrixField {
                entries,
                dimension,
                symmetric: true,
            });
        }
        let e = parse_expression(text, dimension)?;
        let mut entries = vec![Rule::Constant(0.0); dimension * dimension];
        for i in 0..dimension {
            entries[i * dimension + i] = Rule::Formula(e.clone());
        }
        Ok(MatrixField {
            entries,
            dimension,
            symmetric: true,
        })
    }

    /// Row-major d*d entry expressions.
    pub fn from_exprs(entries: &[String], dimension: usize) -> Result<Self> {
        if entries.len() != dimension * dimension {
            return Err(Error::DimensionMismatch {
                field_dim: entries.len(),
                grid_dim: dimension,
            });
        }
        let parsed = entries
            .iter()
            .map(|s| parse_expression(s, dimension))
            .collect::<Result<Vec<_>>>()?;
        let symmetric = (0..dimension).all(|i| {
            (0..dimension).all(|j| parsed[i * dimension + j] == parsed[j * dimension + i])
        });
        Ok(MatrixField {
            entries: parsed.into_iter().map(Rule::Formula).collect(),
            dimension,
            symmetric,
        })
    }

    /// Symmetric by construction (presets, diagonal rules, or mirrored
    /// expression trees).
    pub fn structurally_symmetric(&self) -> bool {
        self.symmetric
    }

    fn rule_is_zero(r: &Rule) -> bool {
        match r {
            Rule::Constant(v) => *v == 0.0,
            Rule::Formula(e) => e.is_constant() && e.eval(&[]) == 0.0,
        }
    }

    /// All off-diagonal entries identically zero.
    pub fn is_diagonal(&self) -> bool {
        let d = self.dimension;
        (0..d).all(|i| {
            (0..d).all(|j| i == j || Self::rule_is_zero(&self.entries[i * d + j]))
        })
    }

    /// No entry depends on the coordinates.
    pub fn is_constant(&self) -> bool {
        let d = self.dimension;
        self.entries[..d * d].iter().all(rule_is_coordinate_free)
    }

    /// The field `factor * a`. Scaling preserves symmetry.
    pub fn scaled(&self, factor: f64) -> Self {
        MatrixField {
            entries: self.entries.iter().map(|r| r.scaled(factor)).collect(),
            dimension: self.dimension,
            symmetric: self.symmetric,
        }
    }

    /// All off-diagonal entries free of coordinate variables.
    pub fn off_diagonal_constant(&self) -> bool {
        let d = self.dimension;
        (0..d).all(|i| {
            (0..d).all(|j| {
                i == j
                    || match &self.entries[i * d + j] {
                        Rule::Constant(_) => true,
                        Rule::Formula(e) => e.is_constant(),
                    }
            })
        })
    }

    pub fn eval(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        let d = self.dimension;
        let mut out = [[0.0; 2]; 2];
        for i in 0..d {
            for j in 0..d {
                out[i][j] = self.entries[i * d + j].eval(&p[..d]);
            }
        }
        out
    }
}

/// If `text` looks like `name(arg, …)`, split the arguments at top-level
/// commas.
fn preset_args<'a>(text: &'a str, name: &str) -> Option<Result<Vec<&'a str>>> {
    let rest = text.strip_prefix(name)?.trim_start();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    let mut args = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (k, ch) in inner.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                if depth == 0 {
                    return Some(Err(Error::Parse {
                        offset: name.len() + 1 + k,
                        message: "unbalanced ')'".into(),
                    }));
                }
                depth -= 1;
            }
            ',' if depth == 0 => {
                args.push(inner[start..k].trim());
                start = k + 1;
            }
            _ => {}
        }
    }
    args.push(inner[start..].trim());
    Some(Ok(args))
}

fn parse_number(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        offset: 0,
        message: format!("expected a number, got '{s}'"),
    })
}

/// The data of a generator: diffusion a, drift b, optional potential V.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub a: MatrixField,
    pub b: VectorField,
    pub potential: Option<ScalarField>,
    /// Declared symmetry of a; verified against samples during validation.
    pub a_symmetric: bool,
}

impl CoefficientSet {
    pub fn new(a: MatrixField, b: VectorField) -> Self {
        let a_symmetric = a.structurally_symmetric();
        CoefficientSet {
            a,
            b,
            potential: None,
            a_symmetric,
        }
    }

    pub fn with_potential(mut self, v: ScalarField) -> Self {
        self.potential = Some(v);
        self
    }
}

/// Best tail bound found for the potential: the ergodic generator applied to
/// V stays below `-rate` outside `radius`.
#[derive(Debug, Clone, Copy)]
pub struct TailBound {
    pub radius: f64,
    pub rate: f64,
}

/// Sampled standing-assumption report over a grid.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Min over nodes of the smallest eigenvalue of the symmetric part of a.
    pub ellipticity_min: f64,
    /// Max over nodes of |a_ij|.
    pub sup_a: f64,
    /// Max over nodes of the Euclidean norm of b.
    pub sup_b: f64,
    /// Max over interior nodes of the centered-difference divergence of b.
    pub max_div_b: f64,
    /// Max over nodes of h ‖b‖ / (2 λ_min(a_sym)).
    pub peclet: f64,
    /// Tail estimate for V when a potential is present and decaying.
    pub potential_tail: Option<TailBound>,
}

fn sym_lambda_min(a: [[f64; 2]; 2], dim: usize) -> f64 {
    if dim == 1 {
        return a[0][0];
    }
    let s01 = 0.5 * (a[0][1] + a[1][0]);
    let tr = 0.5 * (a[0][0] + a[1][1]);
    let gap = 0.5 * (a[0][0] - a[1][1]);
    tr - (gap * gap + s01 * s01).sqrt()
}

/// Check ellipticity, drift bounds, grid Péclet, numeric div(b), declared
/// symmetry, and (when V is present) the tail decay of the ergodic generator
/// applied to V. Errors on nonpositive ellipticity or Péclet at or above 1,
/// which would make the centered advection stencil unstable.
pub fn validate_coefficients(
    coeffs: &CoefficientSet,
    grid: &StructuredGrid,
) -> Result<ValidationReport> {
    let dim = grid.dimension();
    let h = grid.spacing();
    let hmax = h[..dim].iter().fold(0.0f64, |m, &v| m.max(v));

    let mut ellipticity_min = f64::INFINITY;
    let mut sup_a: f64 = 0.0;
    let mut sup_b: f64 = 0.0;
    let mut peclet: f64 = 0.0;

    let [nx, ny] = grid.shape();
    for iy in 0..ny {
        for ix in 0..nx {
            let p = grid.point_at([ix, iy]);
            let a = coeffs.a.eval(p);
            let b = coeffs.b.eval(p);
            for i in 0..dim {
                for j in 0..dim {
                    if !a[i][j].is_finite() {
                        return Err(Error::NonFinite {
                            what: "a".into(),
                            location: loc(&p, dim),
                        });
                    }
                    sup_a = sup_a.max(a[i][j].abs());
                }
                if !b[i].is_finite() {
                    return Err(Error::NonFinite {
                        what: "b".into(),
                        location: loc(&p, dim),
                    });
                }
            }
            if coeffs.a_symmetric && dim == 2 {
                let scale = sup_a.max(1.0);
                if (a[0][1] - a[1][0]).abs() > 1e-12 * scale {
                    return Err(Error::Inconsistent {
                        detail: format!(
                            "a declared symmetric but a01 - a10 = {:e} at {}",
                            a[0][1] - a[1][0],
                            loc(&p, dim)
                        ),
                    });
                }
            }
            let lmin = sym_lambda_min(a, dim);
            if lmin <= 0.0 {
                return Err(Error::Ellipticity {
                    location: loc(&p, dim),
                    lambda_min: lmin,
                });
            }
            ellipticity_min = ellipticity_min.min(lmin);
            let bnorm = (b[0] * b[0] + b[1] * b[1]).sqrt();
            sup_b = sup_b.max(bnorm);
            let pe = hmax * bnorm / (2.0 * lmin);
            if pe >= 1.0 {
                return Err(Error::Peclet {
                    location: loc(&p, dim),
                    value: pe,
                });
            }
            peclet = peclet.max(pe);
        }
    }

    let mut max_div_b: f64 = 0.0;
    for (_, c) in grid.interior_coords() {
        let p = grid.point_at(c);
        max_div_b = max_div_b.max(divergence(&coeffs.b, p, h, dim).abs());
    }

    let potential_tail = coeffs
        .potential
        .as_ref()
        .map(|v| potential_tail(coeffs, v, grid))
        .transpose()?
        .flatten();

    Ok(ValidationReport {
        ellipticity_min,
        sup_a,
        sup_b,
        max_div_b,
        peclet,
        potential_tail,
    })
}

/// Centered-difference divergence of b at p with the grid's own spacing.
pub fn divergence(b: &VectorField, p: [f64; 2], h: [f64; 2], dim: usize) -> f64 {
    let mut div = 0.0;
    for ax in 0..dim {
        let mut plus = p;
        let mut minus = p;
        plus[ax] += h[ax];
        minus[ax] -= h[ax];
        div += (b.eval(plus)[ax] - b.eval(minus)[ax]) / (2.0 * h[ax]);
    }
    div
}

/// Scan interior nodes, computing the ergodic generator applied to V by
/// finite differences, and look for the smallest radius past which it stays
/// strictly negative.
fn potential_tail(
    coeffs: &CoefficientSet,
    v: &ScalarField,
    grid: &StructuredGrid,
) -> Result<Option<TailBound>> {
    let dim = grid.dimension();
    let h = grid.spacing();

    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(grid.num_interior());
    for (_, c) in grid.interior_coords() {
        let p = grid.point_at(c);
        let val = ergodic_apply_to_potential(coeffs, v, p, h, dim);
        if !val.is_finite() {
            return Err(Error::NonFinite {
                what: "generator applied to V".into(),
                location: loc(&p, dim),
            });
        }
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        samples.push((r, val));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));

    // suffix maximum of the generator values over radii >= r
    let mut best: Option<TailBound> = None;
    let mut suffix_max = f64::NEG_INFINITY;
    for &(r, val) in samples.iter().rev() {
        suffix_max = suffix_max.max(val);
        if suffix_max < 0.0 {
            best = Some(TailBound {
                radius: r,
                rate: -suffix_max,
            });
        }
    }
    Ok(best)
}

/// e^V ∇·(e^{-V} a ∇V) = ∇·(a ∇V) − (a∇V)·∇V, by centered differences.
fn ergodic_apply_to_potential(
    coeffs: &CoefficientSet,
    v: &ScalarField,
    p: [f64; 2],
    h: [f64; 2],
    dim: usize,
) -> f64 {
    let flux = |q: [f64; 2], ax: usize| -> f64 {
        let a = coeffs.a.eval(q);
        let mut grad = [0.0; 2];
        for j in 0..dim {
            let mut plus = q;
            let mut minus = q;
            plus[j] += h[j];
            minus[j] -= h[j];
            grad[j] = (v.eval(plus) - v.eval(minus)) / (2.0 * h[j]);
        }
        a[ax][0] * grad[0] + a[ax][1] * grad[1]
    };
    let mut div_flux = 0.0;
    let mut grad_v = [0.0; 2];
    for ax in 0..dim {
        let mut plus = p;
        let mut minus = p;
        plus[ax] += h[ax];
        minus[ax] -= h[ax];
        div_flux += (flux(plus, ax) - flux(minus, ax)) / (2.0 * h[ax]);
        grad_v[ax] = (v.eval(plus) - v.eval(minus)) / (2.0 * h[ax]);
    }
    let a = coeffs.a.eval(p);
    let mut transport = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            transport += grad_v[i] * a[i][j] * grad_v[j];
        }
    }
    div_flux - transport
}
