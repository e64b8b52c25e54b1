//! Time quadrature on geometric grids.
//!
//! Integrands in time typically carry a power-law singularity at s = 0 and
//! decay exponentially at infinity. The body `[s_min, upper]` is split into
//! geometric panels `s_min * rho^j`, each integrated by Gauss-Legendre; the
//! head `[0, s_min]` is either integrated directly (smooth integrands) or
//! extrapolated from a fitted model `C s^beta e^{kappa s}`, whose exponent
//! decides whether the head is integrable.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

/// Gauss-Legendre order used on every panel.
pub const PANEL_ORDER: usize = 4;

/// Head exponents above this are declared integrable.
const FINITE_EXPONENT: f64 = -0.9;
/// Head exponents below this are declared divergent.
const DIVERGENT_EXPONENT: f64 = -0.99;

fn reference_rule(order: usize) -> &'static [(f64, f64)] {
    static RULES: OnceLock<Vec<Vec<(f64, f64)>>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        (1..=24)
            .map(|n| {
                GaussLegendre::new(NonZeroUsize::new(n).unwrap())
                    .as_node_weight_pairs()
                    .to_vec()
            })
            .collect()
    });
    &rules[order.clamp(1, 24) - 1]
}

/// Gauss-Legendre nodes and weights for `[a, b]` at the given order.
pub fn interval_nodes(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(panels * order);
    let width = (b - a) / panels as f64;
    for p in 0..panels {
        push_panel(&mut out, a + p as f64 * width, a + (p + 1) as f64 * width, order);
    }
    out
}

/// Nodes of geometric panels `a, a rho, a rho^2, ...` clipped at `b`.
pub fn geometric_nodes(a: f64, b: f64, rho: f64, order: usize) -> Vec<(f64, f64)> {
    assert!(a > 0.0 && rho > 1.0, "geometric panels need a > 0 and rho > 1");
    let mut out = Vec::new();
    let mut lo = a;
    while lo < b {
        let mut hi = lo * rho;
        // Avoid a sliver panel at the end.
        if hi * rho.sqrt() >= b {
            hi = b;
        }
        push_panel(&mut out, lo, hi, order);
        lo = hi;
    }
    out
}

fn push_panel(out: &mut Vec<(f64, f64)>, lo: f64, hi: f64, order: usize) {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    for &(x, w) in reference_rule(order) {
        out.push((mid + half * x, half * w));
    }
}

/// Whether an integral converges at its lower end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finiteness {
    Finite,
    Divergent,
    Unknown,
}

/// How to treat `[0, s_min]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadTreatment {
    /// The integrand is bounded and may be evaluated down to 0.
    Smooth,
    /// Fit `C s^beta e^{kappa s}` at three nodes above `s_min`.
    Extrapolate,
    /// The head is known to be negligible (e.g. `exp(-q/s)` behavior).
    Negligible,
    /// Pure power law `C s^beta` below `s_min` with known exponent.
    PowerLaw { exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadEstimate {
    pub value: f64,
    pub exponent: Option<f64>,
    pub finiteness: Finiteness,
    /// Disagreement between the fitted model and a two-point power law.
    pub spread: f64,
}

/// Outcome of a time integral with its error diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeIntegral {
    pub value: f64,
    pub body: f64,
    pub head: HeadEstimate,
    /// Bound on the neglected part above the upper limit, when known.
    pub tail_bound: f64,
}

impl TimeIntegral {
    pub fn is_finite(&self) -> bool {
        self.head.finiteness != Finiteness::Divergent
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeQuadrature {
    pub s_min: f64,
    pub rho: f64,
    pub order: usize,
}

impl Default for TimeQuadrature {
    fn default() -> Self {
        TimeQuadrature { s_min: 1e-4, rho: 1.1, order: PANEL_ORDER }
    }
}

impl TimeQuadrature {
    /// Integrate `f` over `[0, upper]`.
    pub fn integrate(&self, upper: f64, head: HeadTreatment, mut f: impl FnMut(f64) -> f64) -> TimeIntegral {
        if upper <= 0.0 {
            return TimeIntegral {
                value: 0.0,
                body: 0.0,
                head: HeadEstimate { value: 0.0, exponent: None, finiteness: Finiteness::Finite, spread: 0.0 },
                tail_bound: 0.0,
            };
        }
        let s_min = self.s_min.min(upper / 4.0);
        let body: f64 = geometric_nodes(s_min, upper, self.rho, self.order)
            .into_iter()
            .map(|(s, w)| w * f(s))
            .sum();
        let head = match head {
            HeadTreatment::Smooth => HeadEstimate {
                value: interval_nodes(0.0, s_min, 1, 8).into_iter().map(|(s, w)| w * f(s)).sum(),
                exponent: Some(0.0),
                finiteness: Finiteness::Finite,
                spread: 0.0,
            },
            HeadTreatment::Negligible => HeadEstimate {
                value: 0.0,
                exponent: None,
                finiteness: Finiteness::Finite,
                spread: 0.0,
            },
            HeadTreatment::PowerLaw { exponent } => power_law_head(s_min, exponent, f(s_min)),
            HeadTreatment::Extrapolate => extrapolate_head(s_min, self.rho, &mut f),
        };
        let value = if head.finiteness == Finiteness::Divergent { f64::INFINITY } else { body + head.value };
        TimeIntegral { value, body, head, tail_bound: 0.0 }
    }
}

fn power_law_head(s_min: f64, exponent: f64, f_min: f64) -> HeadEstimate {
    if exponent <= -1.0 {
        return HeadEstimate { value: f64::INFINITY, exponent: Some(exponent), finiteness: Finiteness::Divergent, spread: 0.0 };
    }
    HeadEstimate {
        value: f_min * s_min / (exponent + 1.0),
        exponent: Some(exponent),
        finiteness: Finiteness::Finite,
        spread: 0.0,
    }
}

/// `int_0^S s^beta e^{kappa s} ds` for `beta > -1` and moderate `kappa S`.
fn power_exp_integral(beta: f64, kappa: f64, big_s: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for m in 0..60 {
        let contrib = term / (beta + 1.0 + m as f64);
        sum += contrib;
        if contrib.abs() < 1e-17 * sum.abs() {
            break;
        }
        term *= kappa * big_s / (m + 1) as f64;
    }
    big_s.powf(beta + 1.0) * sum
}

fn extrapolate_head(s_min: f64, rho: f64, f: &mut impl FnMut(f64) -> f64) -> HeadEstimate {
    let s = [s_min, s_min * rho.powi(4), s_min * rho.powi(8)];
    let v = [f(s[0]), f(s[1]), f(s[2])];
    let tiny = 1e-300;
    if v.iter().all(|x| x.abs() < tiny) {
        return HeadEstimate { value: 0.0, exponent: None, finiteness: Finiteness::Finite, spread: 0.0 };
    }
    let same_sign = v.iter().all(|x| *x > tiny) || v.iter().all(|x| *x < -tiny);
    if !same_sign {
        let growing = v[0].abs() > 2.0 * v[2].abs().max(tiny);
        return HeadEstimate {
            value: v[0] * s_min,
            exponent: None,
            finiteness: if growing { Finiteness::Unknown } else { Finiteness::Finite },
            spread: v[0].abs() * s_min,
        };
    }
    let sign = v[0].signum();
    let l: Vec<f64> = v.iter().map(|x| x.abs().ln()).collect();
    let ls: Vec<f64> = s.iter().map(|x| x.ln()).collect();

    // Two-point power law from the lowest pair.
    let beta2 = (l[1] - l[0]) / (ls[1] - ls[0]);

    // Three-point fit of ln|f| = c + beta ln s + kappa s.
    let m = nalgebra::Matrix3::new(1.0, ls[0], s[0], 1.0, ls[1], s[1], 1.0, ls[2], s[2]);
    let rhs = nalgebra::Vector3::new(l[0], l[1], l[2]);
    let (beta, kappa, c) = match m.lu().solve(&rhs) {
        Some(x) if (x[2] * s_min).abs() <= 1.0 => (x[1], x[2], x[0]),
        _ => (beta2, 0.0, l[0] - beta2 * ls[0]),
    };

    let finiteness = if beta >= FINITE_EXPONENT && beta2 >= FINITE_EXPONENT {
        Finiteness::Finite
    } else if beta <= DIVERGENT_EXPONENT {
        Finiteness::Divergent
    } else {
        Finiteness::Unknown
    };
    if finiteness == Finiteness::Divergent {
        return HeadEstimate { value: f64::INFINITY, exponent: Some(beta), finiteness, spread: f64::INFINITY };
    }
    let fitted = if beta > -1.0 { sign * c.exp() * power_exp_integral(beta, kappa, s_min) } else { f64::INFINITY };
    let two_point = if beta2 > -1.0 { v[0] * s_min / (beta2 + 1.0) } else { f64::INFINITY };
    HeadEstimate { value: fitted, exponent: Some(beta), finiteness, spread: (fitted - two_point).abs() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn geometric_panels_cover_the_interval() {
        let nodes = geometric_nodes(1e-3, 7.0, 1.1, 4);
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(total, 7.0 - 1e-3, max_relative = 1e-13);
        assert!(nodes.iter().all(|(s, _)| *s > 1e-3 && *s < 7.0));
    }

    #[test]
    fn inverse_square_root_head_is_extrapolated() {
        // int_0^inf e^{-2s} / (2 sqrt(pi s)) ds = sqrt(pi / 2) / (2 sqrt(pi))
        let q = TimeQuadrature::default();
        let r = q.integrate(12.0, HeadTreatment::Extrapolate, |s| (-2.0 * s).exp() / (2.0 * (PI * s).sqrt()));
        let exact = (PI / 2.0).sqrt() / (2.0 * PI.sqrt());
        assert_eq!(r.head.finiteness, Finiteness::Finite);
        assert_relative_eq!(r.head.exponent.unwrap(), -0.5, max_relative = 1e-6);
        assert_relative_eq!(r.value, exact, max_relative = 1e-8);
    }

    #[test]
    fn reciprocal_head_is_divergent() {
        let q = TimeQuadrature::default();
        let r = q.integrate(1.0, HeadTreatment::Extrapolate, |s| 1.0 / s);
        assert_eq!(r.head.finiteness, Finiteness::Divergent);
        assert!(!r.is_finite());
    }

    #[test]
    fn smooth_integrals_are_accurate() {
        let q = TimeQuadrature::default();
        let r = q.integrate(3.0, HeadTreatment::Smooth, |s| (-s).exp() * s.cos());
        // int_0^3 e^{-s} cos s ds
        let exact = 0.5 * (1.0 + (-3.0f64).exp() * (3.0f64.sin() - 3.0f64.cos()));
        assert_relative_eq!(r.value, exact, max_relative = 1e-12);
    }

    #[test]
    fn power_law_head_matches_closed_form() {
        let q = TimeQuadrature { s_min: 1e-12, ..Default::default() };
        let r = q.integrate(1.0, HeadTreatment::PowerLaw { exponent: -0.5 }, |s| s.powf(-0.5));
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-10);
    }
}
