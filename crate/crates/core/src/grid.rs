//! Discretized elements of the state space: uniform grids on a line, a
//! plane or the half-line, plus plain coefficient vectors.

use crate::error::{Error, Result};

/// Uniform axis with `count` nodes from `lower` to `upper` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::domain(format!("axis needs at least 2 nodes, got {count}")));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::domain(format!("axis bounds [{lower}, {upper}] are not increasing")));
        }
        Ok(Axis { lower, upper, count })
    }

    /// Half-line axis `h, 2h, ..., upper` with `h = upper / count`; the
    /// boundary point 0 is left out.
    pub fn half_line(upper: f64, count: usize) -> Result<Self> {
        if !(upper > 0.0) {
            return Err(Error::domain("half-line axis needs a positive upper bound"));
        }
        Axis::new(upper / count as f64, upper, count)
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    /// True when the nodes are the positive multiples `h, 2h, ...` of the spacing.
    pub fn is_half_line(&self) -> bool {
        let h = self.spacing();
        (self.lower - h).abs() <= 1e-12 * h.max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    /// Coefficient vectors in R^n with the Euclidean inner product.
    FiniteDim(usize),
    Line(Axis),
    /// Row-major: index `i * ny + j` holds the node `(x_i, y_j)`.
    Plane(Axis, Axis),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::FiniteDim(n) => *n,
            Grid::Line(a) => a.count,
            Grid::Plane(a, b) => a.count * b.count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial dimension; 0 for coefficient vectors.
    pub fn dim(&self) -> usize {
        match self {
            Grid::FiniteDim(_) => 0,
            Grid::Line(_) => 1,
            Grid::Plane(..) => 2,
        }
    }

    /// The factor `h^d` of the Riemann-sum inner product.
    pub fn cell_volume(&self) -> f64 {
        match self {
            Grid::FiniteDim(_) => 1.0,
            Grid::Line(a) => a.spacing(),
            Grid::Plane(a, b) => a.spacing() * b.spacing(),
        }
    }

    /// Coordinates of node `idx` (empty for coefficient vectors).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        match self {
            Grid::FiniteDim(_) => Vec::new(),
            Grid::Line(a) => vec![a.node(idx)],
            Grid::Plane(a, b) => vec![a.node(idx / b.count), b.node(idx % b.count)],
        }
    }

    /// Largest spacing over the axes; 0 for coefficient vectors.
    pub fn max_spacing(&self) -> f64 {
        match self {
            Grid::FiniteDim(_) => 0.0,
            Grid::Line(a) => a.spacing(),
            Grid::Plane(a, b) => a.spacing().max(b.spacing()),
        }
    }

    fn same_as(&self, other: &Grid) -> bool {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
        let axis_eq = |a: &Axis, b: &Axis| a.count == b.count && close(a.lower, b.lower) && close(a.upper, b.upper);
        match (self, other) {
            (Grid::FiniteDim(n), Grid::FiniteDim(m)) => n == m,
            (Grid::Line(a), Grid::Line(b)) => axis_eq(a, b),
            (Grid::Plane(a1, b1), Grid::Plane(a2, b2)) => axis_eq(a1, a2) && axis_eq(b1, b2),
            _ => false,
        }
    }
}

/// Weight function of the inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Weight {
    Lebesgue,
    /// `gamma(dy) = (1 - exp(-y^2)) dy` on the half-line.
    Gamma,
}

impl Weight {
    pub fn density(&self, y: f64) -> f64 {
        match self {
            Weight::Lebesgue => 1.0,
            Weight::Gamma => -(-y * y).exp_m1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub values: Vec<f64>,
    pub grid: Grid,
    pub weight: Weight,
}

impl GridFunction {
    pub fn new(grid: Grid, weight: Weight, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        check_weight(&grid, weight)?;
        Ok(GridFunction { values, grid, weight })
    }

    pub fn zeros(grid: Grid, weight: Weight) -> Self {
        GridFunction { values: vec![0.0; grid.len()], grid, weight }
    }

    /// Coefficient vector with the Euclidean inner product.
    pub fn vector(values: Vec<f64>) -> Self {
        GridFunction { grid: Grid::FiniteDim(values.len()), values, weight: Weight::Lebesgue }
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: Grid, weight: Weight, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if grid.dim() == 0 {
            return Err(Error::shape("from_fn needs a spatial grid"));
        }
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        GridFunction::new(grid, weight, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Quadrature weights `w_j h^d` of the inner product.
    pub fn node_weights(&self) -> Vec<f64> {
        node_weights(&self.grid, self.weight)
    }

    pub fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if !self.grid.same_as(&other.grid) || self.weight != other.weight {
            return Err(Error::shape("grid functions live on different grids or weights"));
        }
        Ok(())
    }

    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(weighted_dot(&self.values, &other.values, &self.node_weights()))
    }

    pub fn norm(&self) -> f64 {
        weighted_dot(&self.values, &self.values, &self.node_weights()).sqrt()
    }

    pub fn with_values(&self, values: Vec<f64>) -> GridFunction {
        debug_assert_eq!(values.len(), self.values.len());
        GridFunction { values, grid: self.grid, weight: self.weight }
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        self.with_values(self.values.iter().map(|v| c * v).collect())
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &GridFunction) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn node_weights(grid: &Grid, weight: Weight) -> Vec<f64> {
    let vol = grid.cell_volume();
    match weight {
        Weight::Lebesgue => vec![vol; grid.len()],
        Weight::Gamma => (0..grid.len())
            .map(|i| vol * weight.density(grid.point(i)[0]))
            .collect(),
    }
}

pub(crate) fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w).sum()
}

fn check_weight(grid: &Grid, weight: Weight) -> Result<()> {
    if weight == Weight::Gamma {
        match grid {
            Grid::Line(a) if a.lower > 0.0 => {}
            _ => return Err(Error::domain("the gamma weight needs a half-line grid with positive nodes")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_line_axis_starts_at_spacing() {
        let a = Axis::half_line(10.0, 100).unwrap();
        assert!((a.lower - 0.1).abs() < 1e-15);
        assert!((a.spacing() - 0.1).abs() < 1e-15);
        assert!(a.is_half_line());
        assert!((a.node(99) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn inner_product_is_weighted_riemann_sum() {
        let g = Grid::Line(Axis::new(-1.0, 1.0, 3).unwrap());
        let f = GridFunction::new(g, Weight::Lebesgue, vec![1.0, 2.0, 3.0]).unwrap();
        assert!((f.inner(&f).unwrap() - 14.0).abs() < 1e-14);
        assert!(GridFunction::new(g, Weight::Gamma, vec![0.0; 3]).is_err());
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = GridFunction::vector(vec![1.0, 2.0]);
        let b = GridFunction::vector(vec![1.0, 2.0, 3.0]);
        assert!(matches!(a.inner(&b), Err(Error::Shape(_))));
        assert!(Axis::new(0.0, 1.0, 1).is_err());
    }
}
