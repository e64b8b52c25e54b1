//! Strongly continuous semigroups on discretized spaces: matrix exponentials,
//! the heat semigroup on a line or plane, and Brownian motion absorbed at 0.
//!
//! Heat-type kinds act by convolution with the Gaussian kernel sampled on the
//! grid (Riemann sum, values outside the grid treated as zero). Below
//! `LATTICE_THRESHOLD * h^2` the sampled Gaussian no longer resolves and the
//! kernel switches to the band-limited heat kernel, whose grid symbol is
//! `e^{-t omega^2 / 2}` on the whole band and which tends to the identity as
//! `t -> 0`. Above the threshold the two agree on smooth data to `1e-19`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{node_weights, weighted_dot, Axis, Grid, GridFunction, Weight};
use crate::kernels::{g_r2, k_raw, p_raw};
use crate::quadrature::{geometric_nodes, interval_nodes};

/// In units of `h^2`; above it the sampled Gaussian has mass `1 +- 1e-19`.
pub const LATTICE_THRESHOLD: f64 = 2.25;

/// Distinct narrow-time kernels kept before the cache is reset.
const KERNEL_CACHE_LIMIT: usize = 4096;

/// Sampling window for matrix growth constants.
const GROWTH_WINDOW: f64 = 10.0;
const GROWTH_SAFETY: f64 = 1.1;
const POWER_ITERATIONS: usize = 50;
const RESOLVENT_NORM_SAFETY: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub enum SemigroupKind {
    Matrix(DMatrix<f64>),
    HeatLine,
    HeatPlane,
    AbsorbingHalfline,
}

/// Constants with `||T_t|| <= c0 e^{b0 t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Growth {
    pub c0: f64,
    pub b0: f64,
}

impl Growth {
    pub fn bound(&self, t: f64) -> f64 {
        self.c0 * (self.b0 * t).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupSpec {
    pub kind: SemigroupKind,
    pub grid: Grid,
    pub weight: Weight,
    pub growth: Growth,
    /// Accuracy expected of semigroup-law and duality identities on smooth data.
    pub tolerance: f64,
}

impl SemigroupSpec {
    /// `T_t = exp(tA)` on R^n; growth constants derived from `A`.
    pub fn matrix(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::shape(format!("generator must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("generator has non-finite entries"));
        }
        let growth = matrix_growth(&a);
        Ok(SemigroupSpec {
            grid: Grid::FiniteDim(a.nrows()),
            kind: SemigroupKind::Matrix(a),
            weight: Weight::Lebesgue,
            growth,
            tolerance: 1e-10,
        })
    }

    pub fn heat_line(axis: Axis) -> Self {
        SemigroupSpec {
            kind: SemigroupKind::HeatLine,
            grid: Grid::Line(axis),
            weight: Weight::Lebesgue,
            growth: Growth { c0: 1.0, b0: 0.0 },
            tolerance: 1e-8,
        }
    }

    pub fn heat_plane(x: Axis, y: Axis) -> Self {
        SemigroupSpec {
            kind: SemigroupKind::HeatPlane,
            grid: Grid::Plane(x, y),
            weight: Weight::Lebesgue,
            growth: Growth { c0: 1.0, b0: 0.0 },
            tolerance: 1e-8,
        }
    }

    /// Absorbed Brownian motion on `(0, upper]` with the gamma weight.
    pub fn absorbing_halfline(upper: f64, count: usize) -> Result<Self> {
        let axis = Axis::half_line(upper, count)?;
        let mut spec = SemigroupSpec {
            kind: SemigroupKind::AbsorbingHalfline,
            grid: Grid::Line(axis),
            weight: Weight::Gamma,
            growth: Growth { c0: 1.0, b0: 0.0 },
            tolerance: 1e-8,
        };
        spec.growth = sampled_growth(&spec);
        Ok(spec)
    }

    pub fn with_growth(mut self, growth: Growth) -> Result<Self> {
        if !(growth.c0 >= 0.0 && growth.b0 >= 0.0) {
            return Err(Error::domain("growth constants must be non-negative"));
        }
        self.growth = growth;
        Ok(self)
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self.kind, SemigroupKind::Matrix(_))
    }

    /// Spatial dimension of the heat kernel (1 for the half-line, 0 for matrices).
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn zeros(&self) -> GridFunction {
        GridFunction::zeros(self.grid, self.weight)
    }

    /// Samples `f` on the spec's grid.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Result<GridFunction> {
        GridFunction::from_fn(self.grid, self.weight, f)
    }

    pub fn function(&self, values: Vec<f64>) -> Result<GridFunction> {
        GridFunction::new(self.grid, self.weight, values)
    }

    pub fn check(&self, f: &GridFunction) -> Result<()> {
        f.check_compatible(&self.zeros())
    }

    /// Accuracy of finite-difference generator identities on smooth data.
    pub fn generator_tolerance(&self) -> f64 {
        match self.kind {
            SemigroupKind::Matrix(_) => 1e-9,
            _ => 0.5 * self.grid.max_spacing().powi(2),
        }
    }

    /// Below this time the sampled Gaussian kernel is not resolved by the grid.
    pub fn lattice_time(&self) -> f64 {
        LATTICE_THRESHOLD * self.grid.max_spacing().powi(2)
    }

    pub(crate) fn node_weights(&self) -> Vec<f64> {
        node_weights(&self.grid, self.weight)
    }

    pub fn apply(&self, t: f64, f: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        check_time(t)?;
        if t == 0.0 {
            return Ok(f.clone());
        }
        Ok(f.with_values(self.apply_raw(t, &f.values)))
    }

    pub fn adjoint_apply(&self, t: f64, a: &GridFunction) -> Result<GridFunction> {
        self.check(a)?;
        check_time(t)?;
        if t == 0.0 {
            return Ok(a.clone());
        }
        Ok(a.with_values(self.adjoint_raw(t, &a.values)))
    }

    pub(crate) fn apply_raw(&self, t: f64, f: &[f64]) -> Vec<f64> {
        if t == 0.0 {
            return f.to_vec();
        }
        match &self.kind {
            SemigroupKind::Matrix(a) => {
                let e = (a * t).exp();
                (e * DVector::from_column_slice(f)).as_slice().to_vec()
            }
            SemigroupKind::HeatLine => {
                let axis = line_axis(&self.grid);
                toeplitz_apply(&line_kernel(axis, t, axis.count), f)
            }
            SemigroupKind::AbsorbingHalfline => {
                let axis = line_axis(&self.grid);
                absorbing_apply(&line_kernel(axis, t, 2 * axis.count + 1), f)
            }
            SemigroupKind::HeatPlane => {
                let (ax, ay) = plane_axes(&self.grid);
                plane_apply(
                    &line_kernel(ax, t, ax.count),
                    &line_kernel(ay, t, ay.count),
                    ax.count,
                    ay.count,
                    f,
                )
            }
        }
    }

    pub(crate) fn adjoint_raw(&self, t: f64, a: &[f64]) -> Vec<f64> {
        match &self.kind {
            SemigroupKind::Matrix(m) => {
                let e = (m * t).exp().transpose();
                (e * DVector::from_column_slice(a)).as_slice().to_vec()
            }
            _ => self.reweighted(a, |v| self.apply_raw(t, v)),
        }
    }

    /// `W^{-1} K (W a)` for the symmetric kernel matrices of the grid kinds.
    fn reweighted(&self, a: &[f64], op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        if self.weight == Weight::Lebesgue {
            return op(a);
        }
        let w = self.node_weights();
        let wa: Vec<f64> = a.iter().zip(&w).map(|(x, w)| x * w).collect();
        op(&wa).iter().zip(&w).map(|(x, w)| x / w).collect()
    }

    pub fn generator_apply(&self, f: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        Ok(f.with_values(self.generator_raw(&f.values)))
    }

    pub(crate) fn generator_raw(&self, f: &[f64]) -> Vec<f64> {
        match &self.kind {
            SemigroupKind::Matrix(a) => (a * DVector::from_column_slice(f)).as_slice().to_vec(),
            SemigroupKind::HeatLine | SemigroupKind::AbsorbingHalfline => {
                let h = line_axis(&self.grid).spacing();
                half_laplacian_1d(f, h)
            }
            SemigroupKind::HeatPlane => {
                let (ax, ay) = plane_axes(&self.grid);
                let (nx, ny) = (ax.count, ay.count);
                let mut out = vec![0.0; f.len()];
                let (hx2, hy2) = (ax.spacing().powi(2), ay.spacing().powi(2));
                for i in 0..nx {
                    for j in 0..ny {
                        let c = f[i * ny + j];
                        let l = if i > 0 { f[(i - 1) * ny + j] } else { 0.0 };
                        let r = if i + 1 < nx { f[(i + 1) * ny + j] } else { 0.0 };
                        let d = if j > 0 { f[i * ny + j - 1] } else { 0.0 };
                        let u = if j + 1 < ny { f[i * ny + j + 1] } else { 0.0 };
                        out[i * ny + j] = 0.5 * ((l - 2.0 * c + r) / hx2 + (d - 2.0 * c + u) / hy2);
                    }
                }
                out
            }
        }
    }

    /// `U_alpha f = int_0^inf e^{-alpha t} T_t f dt`.
    pub fn resolvent(&self, alpha: f64, f: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        let r = self.resolvent_operator(alpha)?;
        Ok(f.with_values(r.apply_raw(&f.values)))
    }

    /// Precomputed resolvent quadrature for repeated application.
    pub fn resolvent_operator(&self, alpha: f64) -> Result<Resolvent> {
        Resolvent::new(self, alpha)
    }

    /// Power-iteration estimate of `||T_t||` in the weighted norm.
    pub fn operator_norm(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(1.0);
        }
        if let SemigroupKind::Matrix(a) = &self.kind {
            return Ok((a * t).exp().singular_values().max());
        }
        Ok(power_norm(self, |v| self.apply_raw(t, v), |v| self.adjoint_raw(t, v), POWER_ITERATIONS))
    }

    /// `(T_t f)(z)` at an arbitrary point `z` of the domain.
    pub fn point_eval(&self, t: f64, f: &GridFunction, z: &[f64]) -> Result<f64> {
        self.check(f)?;
        check_time(t)?;
        self.point_eval_raw(t, &f.values, z)
    }

    pub(crate) fn point_eval_raw(&self, t: f64, f: &[f64], z: &[f64]) -> Result<f64> {
        match &self.kind {
            SemigroupKind::Matrix(_) => Err(Error::domain("point evaluation needs a spatial grid")),
            SemigroupKind::HeatLine => {
                let axis = line_axis(&self.grid);
                let h = axis.spacing();
                if t >= LATTICE_THRESHOLD * h * h {
                    Ok(f.iter().enumerate().map(|(j, v)| h * v * g_r2(1, t, (z[0] - axis.node(j)).powi(2))).sum())
                } else {
                    Ok(interpolate_line(axis, &self.apply_raw(t, f), z[0], false))
                }
            }
            SemigroupKind::AbsorbingHalfline => {
                let axis = line_axis(&self.grid);
                let h = axis.spacing();
                if z[0] <= 0.0 {
                    return Ok(0.0);
                }
                if t >= LATTICE_THRESHOLD * h * h {
                    Ok(f.iter().enumerate().map(|(j, v)| h * v * p_raw(t, z[0], axis.node(j))).sum())
                } else {
                    Ok(interpolate_line(axis, &self.apply_raw(t, f), z[0], true))
                }
            }
            SemigroupKind::HeatPlane => {
                let (ax, ay) = plane_axes(&self.grid);
                let (hx, hy) = (ax.spacing(), ay.spacing());
                if t >= LATTICE_THRESHOLD * hx.max(hy).powi(2) {
                    let gx: Vec<f64> = (0..ax.count).map(|i| hx * g_r2(1, t, (z[0] - ax.node(i)).powi(2))).collect();
                    let gy: Vec<f64> = (0..ay.count).map(|j| hy * g_r2(1, t, (z[1] - ay.node(j)).powi(2))).collect();
                    let mut s = 0.0;
                    for (i, gxi) in gx.iter().enumerate() {
                        let row = &f[i * ay.count..(i + 1) * ay.count];
                        s += gxi * row.iter().zip(&gy).map(|(v, g)| v * g).sum::<f64>();
                    }
                    Ok(s)
                } else {
                    Ok(interpolate_plane(ax, ay, &self.apply_raw(t, f), z))
                }
            }
        }
    }

    /// Coefficients `q` with `point_eval_raw(t, f, z) = sum_j q_j f_j`.
    pub(crate) fn point_eval_functional(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.len();
        match &self.kind {
            SemigroupKind::Matrix(_) => Err(Error::domain("point evaluation needs a spatial grid")),
            SemigroupKind::HeatLine | SemigroupKind::AbsorbingHalfline => {
                let axis = line_axis(&self.grid);
                let h = axis.spacing();
                let absorbing = self.kind == SemigroupKind::AbsorbingHalfline;
                if absorbing && z[0] <= 0.0 {
                    return Ok(vec![0.0; n]);
                }
                if t >= LATTICE_THRESHOLD * h * h {
                    return Ok((0..n)
                        .map(|j| {
                            let y = axis.node(j);
                            h * if absorbing { p_raw(t, z[0], y) } else { g_r2(1, t, (z[0] - y).powi(2)) }
                        })
                        .collect());
                }
                let mut c = vec![0.0; n];
                for (i, w) in line_stencil(axis, z[0], absorbing) {
                    c[i] += w;
                }
                // The raw lattice matrices are symmetric.
                Ok(self.apply_raw(t, &c))
            }
            SemigroupKind::HeatPlane => {
                let (ax, ay) = plane_axes(&self.grid);
                let (hx, hy) = (ax.spacing(), ay.spacing());
                if t >= LATTICE_THRESHOLD * hx.max(hy).powi(2) {
                    let mut q = vec![0.0; n];
                    for i in 0..ax.count {
                        let gx = hx * g_r2(1, t, (z[0] - ax.node(i)).powi(2));
                        for j in 0..ay.count {
                            q[i * ay.count + j] = gx * hy * g_r2(1, t, (z[1] - ay.node(j)).powi(2));
                        }
                    }
                    return Ok(q);
                }
                let mut c = vec![0.0; n];
                for (i, w) in plane_stencil(ax, ay, z) {
                    c[i] += w;
                }
                Ok(self.apply_raw(t, &c))
            }
        }
    }

    /// Coefficients `q` with `flux_pairing_raw(t, f) = sum_j q_j f_j`.
    pub(crate) fn flux_functional(&self, t: f64) -> Result<Vec<f64>> {
        if self.kind != SemigroupKind::AbsorbingHalfline {
            return Err(Error::domain("flux pairing needs the absorbing half-line"));
        }
        let axis = line_axis(&self.grid);
        let h = axis.spacing();
        if t >= LATTICE_THRESHOLD * h * h {
            return Ok((0..axis.count).map(|j| h * k_raw(t, axis.node(j))).collect());
        }
        let mut c = vec![0.0; axis.count];
        c[0] = 0.5 / h;
        Ok(self.apply_raw(t, &c))
    }

    /// Lebesgue pairing `int f(y) k_t(y) dy` with the boundary flux density.
    pub(crate) fn flux_pairing_raw(&self, t: f64, f: &[f64]) -> Result<f64> {
        if self.kind != SemigroupKind::AbsorbingHalfline {
            return Err(Error::domain("flux pairing needs the absorbing half-line"));
        }
        let axis = line_axis(&self.grid);
        let h = axis.spacing();
        if t >= LATTICE_THRESHOLD * h * h {
            Ok(f.iter().enumerate().map(|(j, v)| h * v * k_raw(t, axis.node(j))).sum())
        } else {
            // Half the one-sided derivative at the absorbing boundary.
            Ok(0.5 * self.apply_raw(t, f)[0] / h)
        }
    }

    /// `||U_alpha||` by power iteration, inflated by a safety factor.
    pub fn resolvent_norm(&self, alpha: f64) -> Result<f64> {
        let r = self.resolvent_operator(alpha)?;
        if let Some(m) = &r.matrix {
            return Ok(RESOLVENT_NORM_SAFETY * m.singular_values().max());
        }
        let est = power_norm(self, |v| r.apply_raw(v), |v| r.adjoint_raw(v), POWER_ITERATIONS);
        Ok(RESOLVENT_NORM_SAFETY * est)
    }

    /// Sampled check of the growth bound; returns the worst ratio
    /// `||T_t f|| / (c0 e^{b0 t} ||f||)` over the probes.
    pub fn growth_violation(&self, probes: &[(f64, GridFunction)]) -> Result<f64> {
        let mut worst = 0.0f64;
        for (t, f) in probes {
            let n = f.norm();
            if n == 0.0 {
                continue;
            }
            worst = worst.max(self.apply(*t, f)?.norm() / (self.growth.bound(*t) * n));
        }
        Ok(worst)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

pub(crate) fn line_axis(grid: &Grid) -> Axis {
    match grid {
        Grid::Line(a) => *a,
        _ => unreachable!("line kinds always carry a line grid"),
    }
}

fn plane_axes(grid: &Grid) -> (Axis, Axis) {
    match grid {
        Grid::Plane(a, b) => (*a, *b),
        _ => unreachable!("plane kind always carries a plane grid"),
    }
}

/// Derive `(c0, b0)`: `b0` from the spectrum, `c0` by sampling
/// `||e^{tA}|| e^{-b0 t}` on `[0, GROWTH_WINDOW]`. Defective spectra make the
/// sampled ratio still grow at the window's end; `b0` is then raised until the
/// maximum is attained inside the window.
fn matrix_growth(a: &DMatrix<f64>) -> Growth {
    let spectral = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |m, z| m.max(z.re));
    let mut b0 = spectral.max(0.0);
    let samples = 201;
    for _ in 0..40 {
        let ratios: Vec<f64> = (0..samples)
            .map(|i| {
                let t = GROWTH_WINDOW * i as f64 / (samples - 1) as f64;
                (a * t).exp().singular_values().max() * (-b0 * t).exp()
            })
            .collect();
        let (argmax, max) = ratios
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(ia, m), (i, &r)| if r > m { (i, r) } else { (ia, m) });
        if argmax < samples * 9 / 10 {
            return Growth { c0: GROWTH_SAFETY * max.max(1.0), b0 };
        }
        b0 += 0.05 + 0.05 * b0;
    }
    Growth { c0: GROWTH_SAFETY, b0 }
}

/// The gamma-weighted norm is not exactly contracted by the discretized
/// absorbing kernel (functions concentrated near the boundary gain a little
/// weight), so `c0` is calibrated from sampled operator norms.
fn sampled_growth(spec: &SemigroupSpec) -> Growth {
    let h = spec.grid.max_spacing();
    let mut worst = 1.0f64;
    let mut t = h * h;
    while t < GROWTH_WINDOW {
        let n = power_norm(spec, |v| spec.apply_raw(t, v), |v| spec.adjoint_raw(t, v), 30);
        worst = worst.max(n);
        t *= 1.6;
    }
    Growth { c0: GROWTH_SAFETY * worst, b0: 0.0 }
}

/// Kernel coefficients `c_k(t)`, `k = 0..len`, of the line semigroup.
pub(crate) fn line_kernel(axis: Axis, t: f64, len: usize) -> Vec<f64> {
    let h = axis.spacing();
    let tau = t / (h * h);
    if tau >= LATTICE_THRESHOLD {
        (0..len).map(|k| h * g_r2(1, t, (k as f64 * h).powi(2))).collect()
    } else {
        band_limited_kernel(tau, len)
    }
}

/// Band-limited heat kernel `(1/pi) int_0^pi e^{-tau theta^2 / 2} cos(k theta) dtheta`.
/// Its symbol is exactly `e^{-t omega^2 / 2}` for `|omega| < pi / h`, so it
/// composes with the sampled Gaussian up to aliasing of order `e^{-2 pi^2 tau}`.
fn band_limited_kernel(tau: f64, len: usize) -> Vec<f64> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), Vec<f64>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().unwrap().get(&(tau.to_bits(), len)) {
        return c.clone();
    }
    // At most two periods of cos(k theta) per 16-point panel.
    let mut out = vec![0.0; len];
    for (x, w) in interval_nodes(0.0, std::f64::consts::PI, (len / 4).max(8), 16) {
        let w = w * (-0.5 * tau * x * x).exp() / std::f64::consts::PI;
        let two_cos = 2.0 * x.cos();
        let (mut prev, mut cur) = (x.cos(), 1.0);
        for slot in out.iter_mut() {
            *slot += w * cur;
            (prev, cur) = (cur, two_cos * cur - prev);
        }
    }
    let mut guard = cache.lock().unwrap();
    if guard.len() >= KERNEL_CACHE_LIMIT {
        guard.clear();
    }
    guard.insert((tau.to_bits(), len), out.clone());
    out
}

fn toeplitz_apply(c: &[f64], f: &[f64]) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for (j, fj) in f.iter().enumerate() {
                s += c[i.abs_diff(j)] * fj;
            }
            s
        })
        .collect()
}

/// Toeplitz minus Hankel: nodes `y_i = (i+1)h`, images at `-(j+1)h`.
fn absorbing_apply(c: &[f64], f: &[f64]) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for (j, fj) in f.iter().enumerate() {
                s += (c[i.abs_diff(j)] - c[i + j + 2]) * fj;
            }
            s
        })
        .collect()
}

fn plane_apply(cx: &[f64], cy: &[f64], nx: usize, ny: usize, f: &[f64]) -> Vec<f64> {
    let mut tmp = vec![0.0; f.len()];
    for i in 0..nx {
        let row = toeplitz_apply(cy, &f[i * ny..(i + 1) * ny]);
        tmp[i * ny..(i + 1) * ny].copy_from_slice(&row);
    }
    let mut out = vec![0.0; f.len()];
    let mut col = vec![0.0; nx];
    for j in 0..ny {
        for i in 0..nx {
            col[i] = tmp[i * ny + j];
        }
        let r = toeplitz_apply(cx, &col);
        for i in 0..nx {
            out[i * ny + j] = r[i];
        }
    }
    out
}

fn half_laplacian_1d(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            let l = if i > 0 { f[i - 1] } else { 0.0 };
            let r = if i + 1 < n { f[i + 1] } else { 0.0 };
            0.5 * (l - 2.0 * f[i] + r) / (h * h)
        })
        .collect()
}

fn interpolate_line(axis: Axis, v: &[f64], z: f64, absorbing: bool) -> f64 {
    line_stencil(axis, z, absorbing).into_iter().map(|(i, c)| c * v[i]).sum()
}

/// Linear interpolation weights at `z`; nodes outside the grid hold 0.
fn line_stencil(axis: Axis, z: f64, absorbing: bool) -> Vec<(usize, f64)> {
    let h = axis.spacing();
    let x = (z - axis.lower) / h;
    if absorbing && x < 0.0 {
        // Between the boundary (value 0) and the first node.
        return vec![(0, (z / axis.lower).max(0.0))];
    }
    if x < -1.0 || x > axis.count as f64 {
        return Vec::new();
    }
    let i = x.floor();
    let frac = x - i;
    [(i, 1.0 - frac), (i + 1.0, frac)]
        .into_iter()
        .filter(|(k, _)| *k >= 0.0 && *k < axis.count as f64)
        .map(|(k, c)| (k as usize, c))
        .collect()
}

fn interpolate_plane(ax: Axis, ay: Axis, v: &[f64], z: &[f64]) -> f64 {
    plane_stencil(ax, ay, z).into_iter().map(|(i, c)| c * v[i]).sum()
}

fn plane_stencil(ax: Axis, ay: Axis, z: &[f64]) -> Vec<(usize, f64)> {
    let ny = ay.count;
    let x = (z[0] - ax.lower) / ax.spacing();
    let y = (z[1] - ay.lower) / ay.spacing();
    let (i, j) = (x.floor(), y.floor());
    let (fx, fy) = (x - i, y - j);
    [
        (i, j, (1.0 - fx) * (1.0 - fy)),
        (i + 1.0, j, fx * (1.0 - fy)),
        (i, j + 1.0, (1.0 - fx) * fy),
        (i + 1.0, j + 1.0, fx * fy),
    ]
    .into_iter()
    .filter(|(a, b, _)| *a >= 0.0 && *b >= 0.0 && *a < ax.count as f64 && *b < ny as f64)
    .map(|(a, b, c)| (a as usize * ny + b as usize, c))
    .collect()
}

/// Largest singular value of `op` in the spec's weighted norm.
fn power_norm(
    spec: &SemigroupSpec,
    op: impl Fn(&[f64]) -> Vec<f64>,
    adjoint: impl Fn(&[f64]) -> Vec<f64>,
    iterations: usize,
) -> f64 {
    let w = spec.node_weights();
    let n = w.len();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i as f64) * 0.37).sin()).collect();
    let norm = |x: &[f64]| weighted_dot(x, x, &w).sqrt();
    let mut est = 0.0;
    for _ in 0..iterations {
        let nv = norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let u = op(&v);
        est = norm(&u);
        v = adjoint(&u);
    }
    est
}

/// Resolvent quadrature `sum_q w_q e^{-alpha t_q} T_{t_q}` over a head panel
/// `[0, t_min]` and geometric panels up to `t_max`, where the remaining mass
/// `e^{-(alpha - b0) t_max}` is below double precision.
#[derive(Debug, Clone)]
pub struct Resolvent {
    spec: SemigroupSpec,
    pub alpha: f64,
    /// Bound on the truncated tail relative to `||f||`.
    pub tail_bound: f64,
    matrix: Option<DMatrix<f64>>,
    row: Option<Vec<f64>>,
    nodes: Vec<(f64, f64)>,
}

const RESOLVENT_DECAY: f64 = 36.0;

impl Resolvent {
    fn new(spec: &SemigroupSpec, alpha: f64) -> Result<Self> {
        let b0 = spec.growth.b0;
        if !(alpha > b0) {
            return Err(Error::domain(format!("resolvent needs alpha > b0 = {b0}, got {alpha}")));
        }
        let gap = alpha - b0;
        let t_max = RESOLVENT_DECAY / gap;
        let t_min = 1e-3 / gap;
        let mut nodes = interval_nodes(0.0, t_min, 1, 12);
        nodes.extend(geometric_nodes(t_min, t_max, 2.0, 12));
        for n in nodes.iter_mut() {
            n.1 *= (-alpha * n.0).exp();
        }
        let tail_bound = (-gap * t_max).exp() * spec.growth.c0 / gap;
        let mut r = Resolvent { spec: spec.clone(), alpha, tail_bound, matrix: None, row: None, nodes };
        match &spec.kind {
            SemigroupKind::Matrix(a) => {
                let n = a.nrows();
                let mut m = DMatrix::zeros(n, n);
                for &(t, w) in &r.nodes {
                    m += (a * t).exp() * w;
                }
                r.matrix = Some(m);
            }
            SemigroupKind::HeatLine | SemigroupKind::AbsorbingHalfline => {
                let axis = line_axis(&spec.grid);
                let len = if spec.kind == SemigroupKind::HeatLine { axis.count } else { 2 * axis.count + 1 };
                let mut row = vec![0.0; len];
                for &(t, w) in &r.nodes {
                    for (acc, c) in row.iter_mut().zip(line_kernel(axis, t, len)) {
                        *acc += w * c;
                    }
                }
                r.row = Some(row);
            }
            SemigroupKind::HeatPlane => {}
        }
        Ok(r)
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        self.spec.check(f)?;
        Ok(f.with_values(self.apply_raw(&f.values)))
    }

    pub(crate) fn apply_raw(&self, f: &[f64]) -> Vec<f64> {
        if let Some(m) = &self.matrix {
            return (m * DVector::from_column_slice(f)).as_slice().to_vec();
        }
        if let Some(row) = &self.row {
            return match self.spec.kind {
                SemigroupKind::HeatLine => toeplitz_apply(row, f),
                _ => absorbing_apply(row, f),
            };
        }
        let mut out = vec![0.0; f.len()];
        for &(t, w) in &self.nodes {
            for (o, v) in out.iter_mut().zip(self.spec.apply_raw(t, f)) {
                *o += w * v;
            }
        }
        out
    }

    pub(crate) fn adjoint_raw(&self, a: &[f64]) -> Vec<f64> {
        if let Some(m) = &self.matrix {
            return (m.transpose() * DVector::from_column_slice(a)).as_slice().to_vec();
        }
        self.spec.reweighted(a, |v| self.apply_raw(v))
    }
}
