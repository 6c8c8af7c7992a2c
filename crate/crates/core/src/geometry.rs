//! Bounded computational domains, structured grids, and exhaustion sequences.
//!
//! Domains are axis-aligned boxes in 1D/2D, optionally cut down by an
//! indicator mask. A node of the box lattice is an interior unknown when it
//! lies strictly inside the box and the mask contains it; every other node is
//! Dirichlet boundary. Exhaustion sequences reuse the box lattice and only
//! vary the mask, so nestedness is a node-by-node subset relation.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::expr::{parse_expression, Expr};

/// Indicator deciding which box nodes belong to the domain.
#[derive(Debug, Clone)]
pub enum MaskSpec {
    /// The whole box.
    All,
    /// Keep points further than `margin` from every box face.
    Margin(f64),
    /// Keep points strictly inside the ball.
    Ball { center: [f64; 2], radius: f64 },
    /// Keep points where the expression is positive.
    Indicator(Expr),
}

impl MaskSpec {
    pub fn indicator(text: &str, dimension: usize) -> Result<Self> {
        Ok(MaskSpec::Indicator(parse_expression(text, dimension)?))
    }

    /// Membership test; cut surfaces themselves count as outside, so lattice
    /// nodes sitting exactly on a cut become Dirichlet boundary.
    pub fn contains(&self, p: [f64; 2], spec: &DomainSpec) -> bool {
        match self {
            MaskSpec::All => true,
            MaskSpec::Margin(m) => {
                for ax in 0..spec.dimension {
                    let [lo, hi] = spec.extent[ax];
                    let tol = 1e-12 * (hi - lo);
                    if p[ax] - (lo + m) <= tol || (hi - m) - p[ax] <= tol {
                        return false;
                    }
                }
                true
            }
            MaskSpec::Ball { center, radius } => {
                let mut d2 = 0.0;
                for ax in 0..spec.dimension {
                    d2 += (p[ax] - center[ax]).powi(2);
                }
                radius - d2.sqrt() > 1e-12 * radius.max(1.0)
            }
            MaskSpec::Indicator(e) => e.eval(&p[..spec.dimension]) > 0.0,
        }
    }
}

/// A bounded domain: box extents, lattice resolution, and a mask.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub dimension: usize,
    /// Per-axis `[lo, hi]`; the second axis is ignored in 1D.
    pub extent: [[f64; 2]; 2],
    /// Nodes per axis, boundary nodes included; the second axis is 1 in 1D.
    pub resolution: [usize; 2],
    pub mask: MaskSpec,
}

impl DomainSpec {
    pub fn interval(lo: f64, hi: f64, n: usize) -> Self {
        DomainSpec {
            dimension: 1,
            extent: [[lo, hi], [0.0, 0.0]],
            resolution: [n, 1],
            mask: MaskSpec::All,
        }
    }

    pub fn rectangle(xext: [f64; 2], yext: [f64; 2], n: [usize; 2]) -> Self {
        DomainSpec {
            dimension: 2,
            extent: [xext, yext],
            resolution: n,
            mask: MaskSpec::All,
        }
    }

    pub fn with_mask(mut self, mask: MaskSpec) -> Self {
        self.mask = mask;
        self
    }

    fn min_width(&self) -> f64 {
        (0..self.dimension)
            .map(|ax| self.extent[ax][1] - self.extent[ax][0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Continuum membership: strictly inside the box and in the mask.
    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        for ax in 0..self.dimension {
            let [lo, hi] = self.extent[ax];
            if p[ax] <= lo || p[ax] >= hi {
                return false;
            }
        }
        self.mask.contains(p, self)
    }
}

/// Uniform lattice over a `DomainSpec` box with the interior/boundary split
/// already resolved. Immutable after construction.
#[derive(Debug, Clone)]
pub struct StructuredGrid {
    spec: DomainSpec,
    h: [f64; 2],
    /// Flat node ids (`ix + nx * iy`) of interior unknowns, ascending.
    interior: Vec<usize>,
    /// Flat node id -> interior index.
    interior_of: Vec<Option<usize>>,
    cell_volume: f64,
}

impl StructuredGrid {
    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn shape(&self) -> [usize; 2] {
        self.spec.resolution
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.h
    }

    pub fn extent(&self) -> [[f64; 2]; 2] {
        self.spec.extent
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn num_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    #[inline]
    pub fn node_id(&self, c: [usize; 2]) -> usize {
        c[0] + self.spec.resolution[0] * c[1]
    }

    #[inline]
    pub fn coords_of(&self, node: usize) -> [usize; 2] {
        let nx = self.spec.resolution[0];
        [node % nx, node / nx]
    }

    #[inline]
    pub fn point_of(&self, node: usize) -> [f64; 2] {
        let c = self.coords_of(node);
        self.point_at(c)
    }

    #[inline]
    pub fn point_at(&self, c: [usize; 2]) -> [f64; 2] {
        [
            self.spec.extent[0][0] + c[0] as f64 * self.h[0],
            self.spec.extent[1][0] + c[1] as f64 * self.h[1],
        ]
    }

    /// Interior index of a flat node id, if the node is an unknown.
    #[inline]
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_of[node]
    }

    #[inline]
    pub fn interior_index_at(&self, c: [usize; 2]) -> Option<usize> {
        self.interior_of[self.node_id(c)]
    }

    /// Iterate interior unknowns as (interior index, lattice coordinates).
    pub fn interior_coords(&self) -> impl Iterator<Item = (usize, [usize; 2])> + '_ {
        self.interior
            .iter()
            .enumerate()
            .map(|(k, &node)| (k, self.coords_of(node)))
    }

    /// Quadrature weight of each interior node.
    pub fn weight(&self) -> f64 {
        self.cell_volume
    }

    /// Sum of interior quadrature weights; approximates vol(D) to a
    /// one-cell-layer surface term.
    pub fn interior_volume(&self) -> f64 {
        self.cell_volume * self.interior.len() as f64
    }

    /// Same box, resolution, and interior node set; functions and operators
    /// built on layout-equal grids may be mixed.
    pub fn same_layout(&self, other: &StructuredGrid) -> bool {
        self.spec.dimension == other.spec.dimension
            && self.spec.resolution == other.spec.resolution
            && self.spec.extent == other.spec.extent
            && self.interior == other.interior
    }
}

/// Construct the grid, resolve interior nodes, and check connectivity.
pub fn build_grid(spec: &DomainSpec) -> Result<StructuredGrid> {
    if spec.dimension != 1 && spec.dimension != 2 {
        return Err(Error::Inconsistent {
            detail: format!("dimension {} not supported", spec.dimension),
        });
    }
    for ax in 0..spec.dimension {
        let [lo, hi] = spec.extent[ax];
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::BadExtent { axis: ax, lo, hi });
        }
        if spec.resolution[ax] < 3 {
            return Err(Error::BadResolution {
                n: spec.resolution[ax],
            });
        }
    }
    if spec.dimension == 1 && spec.resolution[1] != 1 {
        return Err(Error::Inconsistent {
            detail: "1D spec must have resolution 1 on the unused axis".into(),
        });
    }

    let mut h = [0.0; 2];
    for ax in 0..spec.dimension {
        h[ax] = (spec.extent[ax][1] - spec.extent[ax][0]) / (spec.resolution[ax] - 1) as f64;
    }
    let cell_volume: f64 = h[..spec.dimension].iter().product();

    let [nx, ny] = spec.resolution;
    let total = nx * ny;
    let mut interior = Vec::new();
    let mut interior_of = vec![None; total];
    let grid_point = |c: [usize; 2]| {
        [
            spec.extent[0][0] + c[0] as f64 * h[0],
            spec.extent[1][0] + c[1] as f64 * h[1],
        ]
    };
    for iy in 0..ny {
        for ix in 0..nx {
            let mut inside = ix >= 1 && ix + 2 <= nx;
            if spec.dimension == 2 {
                inside &= iy >= 1 && iy + 2 <= ny;
            }
            if inside && spec.mask.contains(grid_point([ix, iy]), spec) {
                let node = ix + nx * iy;
                interior_of[node] = Some(interior.len());
                interior.push(node);
            }
        }
    }
    if interior.is_empty() {
        return Err(Error::EmptyInterior);
    }

    // flood fill over lattice-adjacent interior nodes
    let mut seen = vec![false; interior.len()];
    let mut components = 0usize;
    for start in 0..interior.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(k) = queue.pop_front() {
            let node = interior[k];
            let (ix, iy) = (node % nx, node / nx);
            let mut neighbors = [None; 4];
            if ix > 0 {
                neighbors[0] = Some(node - 1);
            }
            if ix + 1 < nx {
                neighbors[1] = Some(node + 1);
            }
            if spec.dimension == 2 {
                if iy > 0 {
                    neighbors[2] = Some(node - nx);
                }
                if iy + 1 < ny {
                    neighbors[3] = Some(node + nx);
                }
            }
            for nb in neighbors.into_iter().flatten() {
                if let Some(j) = interior_of[nb] {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    if components > 1 {
        return Err(Error::DisconnectedInterior { components });
    }

    Ok(StructuredGrid {
        spec: spec.clone(),
        h,
        interior,
        interior_of,
        cell_volume,
    })
}

/// How successive domains of an exhaustion grow toward the target.
#[derive(Debug, Clone)]
pub enum SequenceRule {
    /// D_k keeps points further than width/(k+1) from every box face.
    ShrinkMargin,
    /// D_k intersects the box with the ball of radius k·radius_step.
    BallIntersection {
        center: [f64; 2],
        radius_step: f64,
    },
}

/// Increasing domains D_1 ⊆ D_2 ⊆ … sharing the target's box lattice.
#[derive(Debug, Clone)]
pub struct DomainSequence {
    pub specs: Vec<DomainSpec>,
    pub rule: SequenceRule,
}

impl DomainSequence {
    /// For each member, flag which interior nodes of the target grid belong
    /// to it. Useful for restricting trial spaces to a subdomain's support.
    pub fn support_masks(&self, grid: &StructuredGrid) -> Vec<Vec<bool>> {
        self.specs
            .iter()
            .map(|spec| {
                grid.interior_nodes()
                    .iter()
                    .map(|&node| spec.mask.contains(grid.point_of(node), spec))
                    .collect()
            })
            .collect()
    }
}

/// Build an exhaustion of `spec` with `count` candidate stages. Stages whose
/// interiors are empty at this resolution are dropped; if every stage is
/// empty the rule keeps probing toward the full box and returns the first
/// nonempty domain alone, so `count = 1` yields the smallest resolvable
/// member.
pub fn make_domain_sequence(
    spec: &DomainSpec,
    rule: SequenceRule,
    count: usize,
) -> Result<DomainSequence> {
    if count == 0 {
        return Err(Error::Inconsistent {
            detail: "exhaustion needs count >= 1".into(),
        });
    }
    if !matches!(spec.mask, MaskSpec::All) {
        return Err(Error::Inconsistent {
            detail: "exhaustion of a masked domain is not supported".into(),
        });
    }

    let candidate = |k: usize| -> DomainSpec {
        let mask = match &rule {
            SequenceRule::ShrinkMargin => MaskSpec::Margin(spec.min_width() / (k + 1) as f64),
            SequenceRule::BallIntersection {
                center,
                radius_step,
            } => MaskSpec::Ball {
                center: *center,
                radius: k as f64 * radius_step,
            },
        };
        spec.clone().with_mask(mask)
    };
    let nonempty = |s: &DomainSpec| match build_grid(s) {
        Ok(_) => true,
        Err(Error::EmptyInterior) => false,
        // margin and ball cuts of a box cannot disconnect it
        Err(_) => false,
    };

    let mut specs: Vec<DomainSpec> = (1..=count).map(candidate).filter(nonempty).collect();
    if specs.is_empty() {
        // probe until the cut falls inside the first cell layer of the box,
        // past which a nonempty box grid always yields a nonempty member
        let g = build_grid(spec)?;
        let hmax = g.spacing()[..spec.dimension]
            .iter()
            .fold(0.0f64, |m, &v| m.max(v));
        let limit = match &rule {
            SequenceRule::ShrinkMargin => (spec.min_width() / hmax).ceil() as usize + 2,
            SequenceRule::BallIntersection { radius_step, .. } => {
                let mut far: f64 = 0.0;
                if let SequenceRule::BallIntersection { center, .. } = &rule {
                    for ax in 0..spec.dimension {
                        let [lo, hi] = spec.extent[ax];
                        far += (center[ax] - lo).abs().max((center[ax] - hi).abs()).powi(2);
                    }
                }
                (far.sqrt() / radius_step).ceil() as usize + 2
            }
        };
        for k in count + 1..=count + limit {
            let s = candidate(k);
            if nonempty(&s) {
                specs.push(s);
                break;
            }
        }
    }
    if specs.is_empty() {
        return Err(match rule {
            SequenceRule::ShrinkMargin => Error::MarginTooLarge,
            SequenceRule::BallIntersection { .. } => Error::EmptyInterior,
        });
    }

    Ok(DomainSequence { specs, rule })
}
