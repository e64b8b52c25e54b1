//! The entrance inner product `int_0^inf e^{-2bs} <x(s), y(s)> ds`, local
//! square integrals, and the resolvent-smoothed inner product
//! `int_0^inf e^{-2bs} <U_a x(s), U_a y(s)> ds`.
//!
//! Heat-atom pairs are integrated per group in closed form in space; every
//! other contribution is one time integrand on the geometric grid with an
//! extrapolated head.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::grid::weighted_dot;
use crate::quadrature::{Finiteness, HeadTreatment, TimeQuadrature};
use crate::semigroup::{Resolvent, SemigroupSpec};

use super::section::{
    grid_part, heat_pair_integral, is_absorbing, kernel_pair, kernel_terms, only_heat_atoms,
    resolved_kernel, section_inner, GroupIntegral, TimeWeight,
};
use super::{same_spec, EntrancePath};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntranceNormParams {
    pub b: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub rho: f64,
}

impl EntranceNormParams {
    /// `b = b0 + 1`, `s_min = 1e-4`, `s_max = 20 / (2 (b - b0))`, `rho = 1.1`.
    pub fn for_spec(spec: &SemigroupSpec) -> Self {
        let b = spec.growth.b0 + 1.0;
        EntranceNormParams { b, s_min: 1e-4, s_max: 20.0 / (2.0 * (b - spec.growth.b0)), rho: 1.1 }
    }

    /// Defaults with a given `b`; `s_max` follows `b`.
    pub fn with_b(spec: &SemigroupSpec, b: f64) -> Result<Self> {
        let b0 = spec.growth.b0;
        let p = EntranceNormParams { b, s_min: 1e-4, s_max: 20.0 / (2.0 * (b - b0)).max(1e-300), rho: 1.1 };
        p.validate(spec)?;
        Ok(p)
    }

    pub fn validate(&self, spec: &SemigroupSpec) -> Result<()> {
        let b0 = spec.growth.b0;
        if !(self.b > b0) {
            return Err(Error::domain(format!("b = {} must exceed b0 = {b0}", self.b)));
        }
        if !(self.s_min > 0.0 && self.s_max > self.s_min) {
            return Err(Error::domain("need 0 < s_min < s_max"));
        }
        if !(self.rho > 1.0) {
            return Err(Error::domain("grid ratio rho must exceed 1"));
        }
        Ok(())
    }

    fn quadrature(&self) -> TimeQuadrature {
        TimeQuadrature { s_min: self.s_min, rho: self.rho, order: crate::quadrature::PANEL_ORDER }
    }
}

/// A time integral with its error budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerReport {
    pub value: f64,
    pub finiteness: Finiteness,
    /// Head contribution below `s_min` of the extrapolated part.
    pub head: f64,
    /// Fitted power of the integrand near 0, when a head was fitted or known.
    pub head_exponent: Option<f64>,
    /// Disagreement between two head models; an error estimate of `head`.
    pub head_spread: f64,
    /// Bound on the neglected integral beyond `s_max`.
    pub tail_bound: f64,
}

impl InnerReport {
    pub fn is_finite(&self) -> bool {
        self.finiteness != Finiteness::Divergent
    }
}

fn combine(heat: GroupIntegral, rest: Option<crate::quadrature::TimeIntegral>, tail_bound: f64) -> InnerReport {
    let mut finiteness = heat.finiteness;
    let mut head_exponent = heat.exponent;
    let (mut head, mut spread, mut value) = (0.0, 0.0, heat.value);
    if let Some(r) = rest {
        value += r.value;
        head = r.head.value;
        spread = r.head.spread;
        if let Some(e) = r.head.exponent {
            head_exponent = Some(head_exponent.map_or(e, |h| h.min(e)));
        }
        finiteness = match (finiteness, r.head.finiteness) {
            (Finiteness::Divergent, _) | (_, Finiteness::Divergent) => Finiteness::Divergent,
            (Finiteness::Unknown, _) | (_, Finiteness::Unknown) => Finiteness::Unknown,
            _ => Finiteness::Finite,
        };
    }
    if finiteness == Finiteness::Divergent {
        value = f64::INFINITY;
    }
    InnerReport { value, finiteness, head, head_exponent, head_spread: spread, tail_bound }
}

fn head_for(x: &EntrancePath, y: &EntrancePath) -> HeadTreatment {
    if x.has_kernel_terms() || y.has_kernel_terms() || has_sampled(x) || has_sampled(y) {
        HeadTreatment::Extrapolate
    } else {
        HeadTreatment::Smooth
    }
}

fn has_sampled(x: &EntrancePath) -> bool {
    x.terms.iter().any(|t| matches!(t.element, super::Element::Sampled(_)))
}

/// Runs `f` inside a quadrature and surfaces its first error.
fn guarded<F>(f: F) -> (impl FnMut(f64) -> f64, std::rc::Rc<RefCell<Option<Error>>>)
where
    F: Fn(f64) -> Result<f64>,
{
    let err = std::rc::Rc::new(RefCell::new(None));
    let slot = err.clone();
    let g = move |s: f64| match f(s) {
        Ok(v) => v,
        Err(e) => {
            slot.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    (g, err)
}

fn take_error(err: &RefCell<Option<Error>>) -> Result<()> {
    match err.borrow_mut().take() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// `<x, y>_~ = int_0^inf e^{-2bs} <x(s), y(s)> ds`.
pub fn entrance_inner(x: &EntrancePath, y: &EntrancePath, params: &EntranceNormParams) -> Result<InnerReport> {
    same_spec(x, y)?;
    let spec = &*x.spec;
    params.validate(spec)?;
    let b = params.b;
    let heat = heat_pair_integral(x, y, TimeWeight::Exponential { b }, 2.0 * params.s_max, params.rho);
    let rest = if only_heat_atoms(x, y) {
        None
    } else {
        let (f, err) = guarded(|s| Ok((-2.0 * b * s).exp() * section_inner(x, s, y, s, false)?));
        let r = params.quadrature().integrate(params.s_max, head_for(x, y), f);
        take_error(&err)?;
        Some(r)
    };
    let tail = tail_bound(x, y, params, 1.0)?;
    Ok(combine(heat, rest, tail))
}

pub fn entrance_norm(x: &EntrancePath, params: &EntranceNormParams) -> Result<f64> {
    let r = entrance_inner(x, x, params)?;
    if !r.is_finite() {
        return Err(Error::Divergent { exponent: r.head_exponent.unwrap_or(f64::NEG_INFINITY) });
    }
    Ok(r.value.max(0.0).sqrt())
}

/// `c0^2 ||x(s_max)|| ||y(s_max)|| e^{-2b s_max} / (2(b - b0))`, times `scale`.
fn tail_bound(x: &EntrancePath, y: &EntrancePath, params: &EntranceNormParams, scale: f64) -> Result<f64> {
    let g = x.spec.growth;
    let s = params.s_max;
    let nx = section_inner(x, s, x, s, true)?.max(0.0).sqrt();
    let ny = section_inner(y, s, y, s, true)?.max(0.0).sqrt();
    Ok(scale * g.c0 * g.c0 * nx * ny * (-2.0 * params.b * s).exp() / (2.0 * (params.b - g.b0)))
}

/// Outcome of `int_0^l ||x(s)||^2 ds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalL2 {
    pub finiteness: Finiteness,
    pub value: f64,
    pub head: f64,
    pub head_exponent: Option<f64>,
    pub head_spread: f64,
}

impl LocalL2 {
    pub fn is_finite(&self) -> bool {
        self.finiteness == Finiteness::Finite
    }
}

/// Local square integrability `int_0^l ||x(s)||^2 ds`.
pub fn local_l2_check(x: &EntrancePath, l: f64) -> Result<LocalL2> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::domain(format!("local window must be positive, got {l}")));
    }
    let heat = heat_pair_integral(x, x, TimeWeight::Flat, 2.0 * l, 1.1);
    let rest = if only_heat_atoms(x, x) {
        None
    } else {
        let (f, err) = guarded(|s| section_inner(x, s, x, s, false));
        let r = TimeQuadrature::default().integrate(l, head_for(x, x), f);
        take_error(&err)?;
        Some(r)
    };
    let r = combine(heat, rest, 0.0);
    Ok(LocalL2 {
        finiteness: r.finiteness,
        value: r.value,
        head: r.head,
        head_exponent: r.head_exponent,
        head_spread: r.head_spread,
    })
}

/// Pieces of `U_a x(s)` that are cheap to reuse across `s`.
struct Smoothed<'a> {
    path: &'a EntrancePath,
    resolvent: &'a Resolvent,
}

impl Smoothed<'_> {
    fn grid(&self, s: f64) -> Result<Option<Vec<f64>>> {
        Ok(grid_part(self.path, s)?.map(|g| self.resolvent.apply_raw(&g)))
    }
}

/// `<x, y>_- = int_0^inf e^{-2bs} <U_a x(s), U_a y(s)> ds`.
pub fn minus_inner(x: &EntrancePath, y: &EntrancePath, alpha: f64, params: &EntranceNormParams) -> Result<InnerReport> {
    same_spec(x, y)?;
    let spec = &*x.spec;
    params.validate(spec)?;
    let b = params.b;
    let resolvent = spec.resolvent_operator(alpha)?;
    let heat = heat_pair_integral(x, y, TimeWeight::Resolvent { b, alpha }, 40.0 / b.min(alpha), params.rho);
    let rest = if only_heat_atoms(x, y) {
        None
    } else {
        let sx = Smoothed { path: x, resolvent: &resolvent };
        let sy = Smoothed { path: y, resolvent: &resolvent };
        let w = spec.node_weights();
        let (f, err) = guarded(|s| {
            let ux = sx.grid(s)?;
            let uy = sy.grid(s)?;
            let mut total = 0.0;
            if let (Some(a), Some(c)) = (&ux, &uy) {
                total += weighted_dot(a, c, &w);
            }
            // <U g, U k> = <U* U g, k> for kernel terms k.
            if let Some(a) = &ux {
                let back = resolvent.adjoint_raw(a);
                for t in kernel_terms(y) {
                    total += t.weight * kernel_pair(spec, t, s + t.shift, &back)?;
                }
            }
            if let Some(c) = &uy {
                let back = resolvent.adjoint_raw(c);
                for t in kernel_terms(x) {
                    total += t.weight * kernel_pair(spec, t, s + t.shift, &back)?;
                }
            }
            if is_absorbing(spec) {
                let rx: Vec<(f64, Vec<f64>)> = kernel_terms(x)
                    .map(|t| (t.weight, resolved_kernel(spec, t, s + t.shift, alpha)))
                    .collect();
                let ry: Vec<(f64, Vec<f64>)> = kernel_terms(y)
                    .map(|t| (t.weight, resolved_kernel(spec, t, s + t.shift, alpha)))
                    .collect();
                for (wx, vx) in &rx {
                    for (wy, vy) in &ry {
                        total += wx * wy * weighted_dot(vx, vy, &w);
                    }
                }
            }
            Ok((-2.0 * b * s).exp() * total)
        });
        let r = params.quadrature().integrate(params.s_max, head_for(x, y), f);
        take_error(&err)?;
        Some(r)
    };
    let gap = alpha - spec.growth.b0;
    let u_bound = spec.growth.c0 / gap;
    let tail = tail_bound(x, y, params, u_bound * u_bound)?;
    Ok(combine(heat, rest, tail))
}

pub fn minus_norm(x: &EntrancePath, alpha: f64, params: &EntranceNormParams) -> Result<f64> {
    let r = minus_inner(x, x, alpha, params)?;
    if !r.is_finite() {
        return Err(Error::Divergent { exponent: r.head_exponent.unwrap_or(f64::NEG_INFINITY) });
    }
    Ok(r.value.max(0.0).sqrt())
}

/// `||x(s1) - y(s2)||^2` without cancellation-prone sampling of narrow kernels.
pub(crate) fn section_distance2(x: &EntrancePath, s1: f64, y: &EntrancePath, s2: f64) -> Result<f64> {
    let xx = section_inner(x, s1, x, s1, true)?;
    let yy = section_inner(y, s2, y, s2, true)?;
    let xy = section_inner(x, s1, y, s2, true)?;
    Ok((xx + yy - 2.0 * xy).max(0.0))
}
