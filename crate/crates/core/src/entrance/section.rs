//! Inner products between path sections `x(s1)`, `y(s2)` and pairings with
//! grid vectors.
//!
//! Grid-valued terms (embedded and sampled) are summed into one vector per
//! section. Kernel terms are never sampled when they are too narrow for the
//! grid: heat-atom pairs use `<g(s1, . - z1), g(s2, . - z2)> = g(s1 + s2, z1 - z2)`,
//! absorbing kernels are integrated in `y` on panels adapted to their width,
//! and a kernel paired with a grid vector `a` becomes `(T_s a)(z)` by symmetry.

use crate::error::Result;
use crate::grid::weighted_dot;
use crate::kernels::{dg_r2, dk_raw, dp_raw};
use crate::quadrature::{geometric_nodes, interval_nodes, Finiteness, HeadTreatment, TimeQuadrature};
use crate::semigroup::{line_axis, SemigroupKind, SemigroupSpec};

use super::{Element, EntrancePath, Term};

/// Sum of the grid-valued terms at time `s`, or `None` if there are none.
pub(crate) fn grid_part(x: &EntrancePath, s: f64) -> Result<Option<Vec<f64>>> {
    let mut out: Option<Vec<f64>> = None;
    for t in x.terms.iter().filter(|t| !t.element.is_kernel() && t.weight != 0.0) {
        let v = x.term_section(t, s + t.shift)?;
        let acc = out.get_or_insert_with(|| vec![0.0; v.len()]);
        for (a, b) in acc.iter_mut().zip(v) {
            *a += t.weight * b;
        }
    }
    Ok(out)
}

pub(crate) fn kernel_terms(x: &EntrancePath) -> impl Iterator<Item = &Term> {
    x.terms.iter().filter(|t| t.element.is_kernel() && t.weight != 0.0)
}

/// `(d/ds)^order` of a kernel element at time `sigma` and point `y`.
pub(crate) fn kernel_value(element: &Element, order: u32, sigma: f64, y: &[f64]) -> f64 {
    match element {
        Element::HeatAtom(z) => {
            let r2: f64 = y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            dg_r2(z.len(), order, sigma, r2)
        }
        Element::AbsorbingAtom(z) => dp_raw(order, sigma, *z, y[0]),
        Element::BoundaryFlux => dk_raw(order, sigma, y[0]),
        _ => unreachable!("kernel_value is only called on kernel elements"),
    }
}

/// `<(d/ds)^order kernel(sigma), a>` in the weighted space.
pub(crate) fn kernel_pair(spec: &SemigroupSpec, t: &Term, sigma: f64, a: &[f64]) -> Result<f64> {
    let w = spec.node_weights();
    if sigma >= spec.lattice_time() {
        let grid = spec.grid;
        return Ok((0..a.len())
            .map(|j| w[j] * a[j] * kernel_value(&t.element, t.order, sigma, &grid.point(j)))
            .sum());
    }
    // Narrow kernel: move the semigroup onto the density of the pairing.
    let h = spec.grid.cell_volume();
    let mut b: Vec<f64> = a.iter().zip(&w).map(|(x, w)| x * w / h).collect();
    for _ in 0..t.order {
        b = spec.generator_raw(&b);
    }
    match &t.element {
        Element::HeatAtom(z) => spec.point_eval_raw(sigma, &b, z),
        Element::AbsorbingAtom(z) => spec.point_eval_raw(sigma, &b, &[*z]),
        Element::BoundaryFlux => spec.flux_pairing_raw(sigma, &b),
        _ => unreachable!("kernel_pair is only called on kernel elements"),
    }
}

/// `<x(s), a>` for a grid vector `a`.
pub(crate) fn pair_with_vector(x: &EntrancePath, s: f64, a: &[f64]) -> Result<f64> {
    let spec = &*x.spec;
    let mut total = match grid_part(x, s)? {
        Some(g) => weighted_dot(&g, a, &spec.node_weights()),
        None => 0.0,
    };
    for t in kernel_terms(x) {
        total += t.weight * kernel_pair(spec, t, s + t.shift, a)?;
    }
    Ok(total)
}

/// Coefficients `q` with `pair_with_vector(x, s, a) = sum_j q_j a_j`.
pub(crate) fn pairing_representer(x: &EntrancePath, s: f64) -> Result<Vec<f64>> {
    let spec = &*x.spec;
    let w = spec.node_weights();
    let mut q = match grid_part(x, s)? {
        Some(g) => g.iter().zip(&w).map(|(g, w)| g * w).collect(),
        None => vec![0.0; w.len()],
    };
    let h = spec.grid.cell_volume();
    for t in kernel_terms(x) {
        let sigma = s + t.shift;
        if sigma >= spec.lattice_time() {
            for (j, qj) in q.iter_mut().enumerate() {
                *qj += t.weight * w[j] * kernel_value(&t.element, t.order, sigma, &spec.grid.point(j));
            }
            continue;
        }
        let mut l = match &t.element {
            Element::HeatAtom(z) => spec.point_eval_functional(sigma, z)?,
            Element::AbsorbingAtom(z) => spec.point_eval_functional(sigma, &[*z])?,
            Element::BoundaryFlux => spec.flux_functional(sigma)?,
            _ => unreachable!("kernel terms are kernel elements"),
        };
        // The raw generator is a symmetric second difference.
        for _ in 0..t.order {
            l = spec.generator_raw(&l);
        }
        for (j, qj) in q.iter_mut().enumerate() {
            *qj += t.weight * w[j] / h * l[j];
        }
    }
    Ok(q)
}

/// Inner product of two kernel terms at times `s1`, `s2` (weights excluded).
pub(crate) fn kernel_kernel(spec: &SemigroupSpec, t1: &Term, s1: f64, t2: &Term, s2: f64) -> f64 {
    match (&t1.element, &t2.element) {
        (Element::HeatAtom(z1), Element::HeatAtom(z2)) => {
            let r2: f64 = z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum();
            dg_r2(z1.len(), t1.order + t2.order, s1 + s2, r2)
        }
        _ => absorbing_pair(spec, t1, s1, t2, s2),
    }
}

/// Gauss-Legendre order of the `y`-panels for absorbing kernels.
const Y_ORDER: usize = 8;
/// Fine panels extend this many half standard deviations around each kernel.
const Y_FINE_STEPS: i32 = 24;
const Y_COARSE: f64 = 0.5;

fn absorbing_pair(spec: &SemigroupSpec, t1: &Term, s1: f64, t2: &Term, s2: f64) -> f64 {
    let upper = line_axis(&spec.grid).upper;
    let mut breaks = Vec::new();
    for (t, s) in [(t1, s1), (t2, s2)] {
        let c = match t.element {
            Element::AbsorbingAtom(z) => z,
            _ => 0.0,
        };
        let step = 0.5 * s.sqrt();
        for k in -Y_FINE_STEPS..=Y_FINE_STEPS {
            breaks.push(c + k as f64 * step);
        }
    }
    let coarse = (upper / Y_COARSE).ceil() as usize;
    breaks.extend((0..=coarse).map(|k| k as f64 * Y_COARSE));
    breaks.push(upper);
    breaks.retain(|b| *b >= 0.0 && *b <= upper);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let mut total = 0.0;
    for w in breaks.windows(2) {
        for (y, wq) in interval_nodes(w[0], w[1], 1, Y_ORDER) {
            let g = spec.weight.density(y);
            total += wq * g * kernel_value(&t1.element, t1.order, s1, &[y]) * kernel_value(&t2.element, t2.order, s2, &[y]);
        }
    }
    total
}

/// `<x(s1), y(s2)>`. Heat-atom pairs are skipped when `with_heat_pairs` is
/// false; callers then integrate them separately in closed form.
pub(crate) fn section_inner(x: &EntrancePath, s1: f64, y: &EntrancePath, s2: f64, with_heat_pairs: bool) -> Result<f64> {
    let spec = &*x.spec;
    let gx = grid_part(x, s1)?;
    let gy = grid_part(y, s2)?;
    let mut total = 0.0;
    if let (Some(a), Some(b)) = (&gx, &gy) {
        total += weighted_dot(a, b, &spec.node_weights());
    }
    if let Some(a) = &gx {
        for t in kernel_terms(y) {
            total += t.weight * kernel_pair(spec, t, s2 + t.shift, a)?;
        }
    }
    if let Some(b) = &gy {
        for t in kernel_terms(x) {
            total += t.weight * kernel_pair(spec, t, s1 + t.shift, b)?;
        }
    }
    for tx in kernel_terms(x) {
        for ty in kernel_terms(y) {
            let heat = matches!(tx.element, Element::HeatAtom(_));
            if heat && !with_heat_pairs {
                continue;
            }
            total += tx.weight * ty.weight * kernel_kernel(spec, tx, s1 + tx.shift, ty, s2 + ty.shift);
        }
    }
    Ok(total)
}

/// Whether `section_inner(.., false)` is identically zero, i.e. both paths
/// consist of heat atoms only.
pub(crate) fn only_heat_atoms(x: &EntrancePath, y: &EntrancePath) -> bool {
    x.terms.iter().chain(&y.terms).all(|t| t.weight == 0.0 || matches!(t.element, Element::HeatAtom(_)))
}

/// Time weight multiplying `G(sigma + tau)` in the heat-pair integrals
/// `int_0^upper W(sigma) G(sigma + tau) d sigma`, with `sigma = s1 + s2`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TimeWeight {
    /// `e^{-b sigma} / 2`: the entrance inner product.
    Exponential { b: f64 },
    /// `1 / 2`: local square integrals.
    Flat,
    /// `e^{-b sigma} / 2 int_0^sigma v e^{-(alpha - b) v} dv`: the resolvent-smoothed norm.
    Resolvent { b: f64, alpha: f64 },
}

impl TimeWeight {
    fn eval(&self, sigma: f64) -> f64 {
        match *self {
            TimeWeight::Exponential { b } => 0.5 * (-b * sigma).exp(),
            TimeWeight::Flat => 0.5,
            TimeWeight::Resolvent { b, alpha } => 0.5 * (-b * sigma).exp() * ramp_integral(alpha - b, sigma),
        }
    }

    /// Power of `sigma` in `W` near 0.
    fn head_power(&self) -> f64 {
        match self {
            TimeWeight::Resolvent { .. } => 2.0,
            _ => 0.0,
        }
    }
}

/// `int_0^x v e^{-c v} dv`.
fn ramp_integral(c: f64, x: f64) -> f64 {
    let cx = c * x;
    if cx.abs() < 1e-2 {
        // sum_k (-c)^k x^{k+2} / (k! (k+2))
        let mut term = x * x;
        let mut sum = 0.0;
        for k in 0..20 {
            sum += term / (k + 2) as f64;
            term *= -cx / (k + 1) as f64;
        }
        sum
    } else {
        (1.0 - (-cx).exp() * (1.0 + cx)) / (c * c)
    }
}

#[derive(Debug, Clone, Copy)]
struct HeatPair {
    coef: f64,
    delta2: f64,
}

#[derive(Debug, Clone)]
struct HeatGroup {
    tau: f64,
    order: u32,
    pairs: Vec<HeatPair>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GroupIntegral {
    pub value: f64,
    pub finiteness: Finiteness,
    /// Most singular head exponent among the groups, if any group has one.
    pub exponent: Option<f64>,
}

/// Heat-atom pairs of `x` and `y`, grouped by total shift and total order.
fn heat_groups(x: &EntrancePath, y: &EntrancePath) -> Vec<HeatGroup> {
    let mut groups: Vec<HeatGroup> = Vec::new();
    for tx in kernel_terms(x) {
        let Element::HeatAtom(zx) = &tx.element else { continue };
        for ty in kernel_terms(y) {
            let Element::HeatAtom(zy) = &ty.element else { continue };
            let tau = tx.shift + ty.shift;
            let order = tx.order + ty.order;
            let delta2: f64 = zx.iter().zip(zy).map(|(a, b)| (a - b) * (a - b)).sum();
            let coef = tx.weight * ty.weight;
            let g = match groups
                .iter_mut()
                .find(|g| g.order == order && (g.tau - tau).abs() <= super::MERGE_SHIFT_TOLERANCE)
            {
                Some(g) => g,
                None => {
                    groups.push(HeatGroup { tau, order, pairs: Vec::new() });
                    groups.last_mut().unwrap()
                }
            };
            match g.pairs.iter_mut().find(|p| p.delta2 == delta2) {
                Some(p) => p.coef += coef,
                None => g.pairs.push(HeatPair { coef, delta2 }),
            }
        }
    }
    groups
}

/// `int_0^upper W(sigma) sum_pairs c d^j g_d(sigma + tau, delta) d sigma`
/// summed over all heat-atom pairs of `x` and `y`.
pub(crate) fn heat_pair_integral(
    x: &EntrancePath,
    y: &EntrancePath,
    weight: TimeWeight,
    upper: f64,
    rho: f64,
) -> GroupIntegral {
    let d = x.spec.dim();
    let mut out = GroupIntegral { value: 0.0, finiteness: Finiteness::Finite, exponent: None };
    for g in heat_groups(x, y) {
        let f = |sigma: f64| {
            let w = weight.eval(sigma);
            if w == 0.0 {
                return 0.0;
            }
            w * g.pairs.iter().map(|p| p.coef * dg_r2(d, g.order, sigma + g.tau, p.delta2)).sum::<f64>()
        };
        let (s_lo, head) = if g.tau > 0.0 {
            ((1e-4f64).min(g.tau / 20.0), HeadTreatment::Smooth)
        } else {
            let diag: f64 = g.pairs.iter().filter(|p| p.delta2 == 0.0).map(|p| p.coef).sum();
            let diag_scale: f64 = g.pairs.iter().filter(|p| p.delta2 == 0.0).map(|p| p.coef.abs()).sum();
            let min_off = g
                .pairs
                .iter()
                .filter(|p| p.delta2 > 0.0)
                .map(|p| p.delta2)
                .fold(f64::INFINITY, f64::min);
            let s_lo = (1e-10f64).min(min_off / 500.0);
            if diag.abs() <= 1e-13 * diag_scale || diag_scale == 0.0 {
                (s_lo, HeadTreatment::Negligible)
            } else {
                let exponent = -(d as f64) / 2.0 - g.order as f64 + weight.head_power();
                out.exponent = Some(out.exponent.map_or(exponent, |e: f64| e.min(exponent)));
                (s_lo, HeadTreatment::PowerLaw { exponent })
            }
        };
        let q = TimeQuadrature { s_min: s_lo, rho, order: crate::quadrature::PANEL_ORDER };
        let r = q.integrate(upper, head, f);
        if r.head.finiteness == Finiteness::Divergent {
            out.finiteness = Finiteness::Divergent;
        }
        out.value += r.value;
    }
    if out.finiteness == Finiteness::Divergent {
        out.value = f64::INFINITY;
    }
    out
}

/// `U_alpha` of a kernel term at time `sigma`, sampled at the grid nodes:
/// `int_0^inf e^{-alpha u} kernel(sigma + u, y) du`, with time derivatives
/// handled by `U A^m = alpha^m U - sum_{i<m} alpha^{m-1-i} A^i`.
pub(crate) fn resolved_kernel(spec: &SemigroupSpec, t: &Term, sigma: f64, alpha: f64) -> Vec<f64> {
    let grid = spec.grid;
    let mut nodes = if sigma > 0.0 { interval_nodes(0.0, sigma, 1, 8) } else { Vec::new() };
    let start = sigma.max(1e-12);
    nodes.extend(geometric_nodes(start, sigma + RESOLVED_DECAY / alpha, 1.5, 8));
    (0..grid.len())
        .map(|j| {
            let y = grid.point(j);
            let base: f64 = nodes
                .iter()
                .map(|&(u, w)| w * (-alpha * u).exp() * kernel_value(&t.element, 0, sigma + u, &y))
                .sum();
            let mut v = alpha.powi(t.order as i32) * base;
            for i in 0..t.order {
                v -= alpha.powi((t.order - 1 - i) as i32) * kernel_value(&t.element, i, sigma, &y);
            }
            v
        })
        .collect()
}

const RESOLVED_DECAY: f64 = 40.0;

/// Kinds whose kernel pairs are integrated in `y` rather than in closed form.
pub(crate) fn is_absorbing(spec: &SemigroupSpec) -> bool {
    spec.kind == SemigroupKind::AbsorbingHalfline
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entrance::{EntrancePath, SignedMeasureAtoms};
    use crate::grid::Axis;
    use crate::kernels::p_raw;
    use std::sync::Arc;

    #[test]
    fn ramp_integral_branches_agree() {
        for &c in &[-0.7, 0.0, 1e-5, 0.3, 2.0] {
            for &x in &[1e-3, 0.5, 4.0] {
                // Trapezoid oracle on a fine grid.
                let n = 20000;
                let h = x / n as f64;
                let mut s = 0.0;
                for i in 0..=n {
                    let v = i as f64 * h;
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    s += w * v * (-c * v).exp();
                }
                s *= h;
                assert!((ramp_integral(c, x) - s).abs() <= 1e-7 * s.abs().max(1e-12), "c={c} x={x}");
            }
        }
    }

    #[test]
    fn narrow_pairing_matches_wide_pairing_at_the_switch() {
        let spec = Arc::new(SemigroupSpec::heat_line(Axis::new(-8.0, 8.0, 321).unwrap()));
        let x = EntrancePath::heat_measure(spec.clone(), &SignedMeasureAtoms::single(vec![0.3], 1.0)).unwrap();
        let a = spec.sample(|y| (-(y[0] - 0.5).powi(2)).exp()).unwrap();
        let tl = spec.lattice_time();
        let wide = pair_with_vector(&x, tl, &a.values).unwrap();
        let narrow = pair_with_vector(&x, tl * (1.0 - 1e-9), &a.values).unwrap();
        assert!((wide - narrow).abs() < 1e-4, "{wide} vs {narrow}");
        // Limit at s = 0 is a(z).
        let at0 = pair_with_vector(&x, 0.0, &a.values).unwrap();
        assert!((at0 - (-(0.2f64).powi(2)).exp()).abs() < 1e-3);
    }

    #[test]
    fn pairing_representer_reproduces_pairings() {
        let heat = Arc::new(SemigroupSpec::heat_line(Axis::new(-8.0, 8.0, 161).unwrap()));
        let abs = Arc::new(SemigroupSpec::absorbing_halfline(8.0, 160).unwrap());
        let bump = heat.sample(|y| (-(y[0] - 0.5).powi(2)).exp()).unwrap();
        let hx = EntrancePath::from_terms(
            heat.clone(),
            vec![
                Term::new(1.0, Element::HeatAtom(vec![0.3])),
                Term { weight: -0.4, element: Element::HeatAtom(vec![-1.0]), shift: 0.002, order: 1 },
                Term::new(0.7, Element::Embedded(Arc::new(bump))),
            ],
        )
        .unwrap();
        let ax = EntrancePath::from_terms(
            abs.clone(),
            vec![Term::new(1.0, Element::AbsorbingAtom(1.2)), Term { weight: 0.5, element: Element::BoundaryFlux, shift: 0.0, order: 1 }],
        )
        .unwrap();
        for x in [&hx, &ax] {
            let spec = x.spec();
            let a = spec.sample(|y| (y[0] * 0.8).sin() * (-(y[0] * y[0]) / 9.0).exp()).unwrap();
            for s in [1e-4, 0.5 * spec.lattice_time(), 2.0 * spec.lattice_time(), 0.7] {
                let q = pairing_representer(x, s).unwrap();
                let via: f64 = q.iter().zip(&a.values).map(|(q, a)| q * a).sum();
                let direct = pair_with_vector(x, s, &a.values).unwrap();
                assert!((via - direct).abs() <= 1e-11 * direct.abs().max(1.0), "s = {s}: {via} vs {direct}");
            }
        }
    }

    #[test]
    fn absorbing_pair_matches_fine_riemann_sum() {
        let spec = SemigroupSpec::absorbing_halfline(10.0, 100).unwrap();
        let t1 = Term::new(1.0, Element::AbsorbingAtom(1.0));
        let t2 = Term::new(1.0, Element::BoundaryFlux);
        for &(s1, s2) in &[(0.05, 0.2), (1.0, 0.5)] {
            let got = absorbing_pair(&spec, &t1, s1, &t2, s2);
            let n = 200_000;
            let h = 10.0 / n as f64;
            let oracle: f64 = (1..=n)
                .map(|i| {
                    let y = i as f64 * h;
                    h * (1.0 - (-y * y).exp()) * p_raw(s1, 1.0, y) * dk_raw(0, s2, y)
                })
                .sum();
            assert!((got - oracle).abs() < 1e-8 * oracle.abs().max(1.0), "{got} vs {oracle}");
        }
    }

    #[test]
    fn resolved_kernel_of_heat_atom_is_exponential() {
        // int_0^inf e^{-alpha u} g_1(u, y) du = e^{-sqrt(2 alpha)|y|} / sqrt(2 alpha)
        let spec = SemigroupSpec::heat_line(Axis::new(-4.0, 4.0, 81).unwrap());
        let t = Term::new(1.0, Element::HeatAtom(vec![0.0]));
        let alpha = 1.3;
        let v = resolved_kernel(&spec, &t, 1e-10, alpha);
        let k = (2.0 * alpha).sqrt();
        for (j, val) in v.iter().enumerate() {
            let y = spec.grid.point(j)[0];
            if y.abs() > 0.05 {
                assert!((val - (-k * y.abs()).exp() / k).abs() < 1e-6, "y={y}");
            }
        }
        // The order-1 identity: U (d/ds) g(s) = alpha U g(s) - g(s).
        let s = 0.4;
        let d1 = resolved_kernel(&spec, &Term { order: 1, ..t.clone() }, s, alpha);
        let ds = 1e-5;
        let up = resolved_kernel(&spec, &t, s + ds, alpha);
        let dn = resolved_kernel(&spec, &t, s - ds, alpha);
        for j in 0..v.len() {
            let fd = (up[j] - dn[j]) / (2.0 * ds);
            assert!((d1[j] - fd).abs() < 1e-6, "{} vs {fd}", d1[j]);
        }
    }
}
