//! Centered infinitely divisible laws with finite-rank Gaussian part and a
//! finite jump catalog, and the skew convolution semigroups they drive.
//!
//! Exponents are assembled term by term, so `log mu_t(a)` is the continuous
//! branch through 0 by construction and no complex logarithm is ever taken.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::entrance::{embed_j, entrance_inner, local_l2_check, EntranceNormParams, EntrancePath};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::quadrature::{Finiteness, HeadTreatment, TimeQuadrature, PANEL_ORDER};
use crate::semigroup::SemigroupSpec;

/// Relative tolerance for pairwise orthogonality of Gaussian directions.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Carrier {
    /// The state space `H` with its grid inner product.
    H,
    /// The entrance space with `<., .>_~`.
    Entrance,
}

#[derive(Debug, Clone)]
pub enum LawElement {
    Vector(GridFunction),
    Path(EntrancePath),
}

impl LawElement {
    fn carrier(&self) -> Carrier {
        match self {
            LawElement::Vector(_) => Carrier::H,
            LawElement::Path(_) => Carrier::Entrance,
        }
    }

    pub fn as_path(&self) -> Option<&EntrancePath> {
        match self {
            LawElement::Path(p) => Some(p),
            LawElement::Vector(_) => None,
        }
    }

    pub fn as_vector(&self) -> Option<&GridFunction> {
        match self {
            LawElement::Vector(v) => Some(v),
            LawElement::Path(_) => None,
        }
    }
}

/// Gaussian covariance `sum_i sigma_i^2 e_i (x) e_i` with pairwise orthogonal
/// `e_i`, and Levy measure `sum_k lambda_k delta_{v_k}`, compensated.
#[derive(Debug, Clone)]
pub struct IDLaw {
    spec: Arc<SemigroupSpec>,
    carrier: Carrier,
    params: EntranceNormParams,
    gaussian: Vec<(f64, LawElement)>,
    jumps: Vec<(f64, LawElement)>,
}

impl IDLaw {
    /// A law on `H`.
    pub fn on_h(spec: Arc<SemigroupSpec>, gaussian: Vec<(f64, GridFunction)>, jumps: Vec<(f64, GridFunction)>) -> Result<Self> {
        for (_, v) in gaussian.iter().chain(&jumps) {
            spec.check(v)?;
        }
        let params = EntranceNormParams::for_spec(&spec);
        let law = IDLaw {
            spec,
            carrier: Carrier::H,
            params,
            gaussian: gaussian.into_iter().map(|(s, v)| (s, LawElement::Vector(v))).collect(),
            jumps: jumps.into_iter().map(|(r, v)| (r, LawElement::Vector(v))).collect(),
        };
        law.validate()?;
        Ok(law)
    }

    /// A law on the entrance space. Every element must be locally square
    /// integrable.
    pub fn on_entrance(
        spec: Arc<SemigroupSpec>,
        params: EntranceNormParams,
        gaussian: Vec<(f64, EntrancePath)>,
        jumps: Vec<(f64, EntrancePath)>,
    ) -> Result<Self> {
        params.validate(&spec)?;
        for (_, p) in gaussian.iter().chain(&jumps) {
            if **p.spec() != *spec {
                return Err(Error::domain("law element lives on a different semigroup"));
            }
            let l2 = local_l2_check(p, 1.0)?;
            if l2.finiteness == Finiteness::Divergent || !l2.value.is_finite() {
                return Err(Error::Divergent { exponent: l2.head_exponent.unwrap_or(f64::NAN) });
            }
        }
        let law = IDLaw {
            spec,
            carrier: Carrier::Entrance,
            params,
            gaussian: gaussian.into_iter().map(|(s, v)| (s, LawElement::Path(v))).collect(),
            jumps: jumps.into_iter().map(|(r, v)| (r, LawElement::Path(v))).collect(),
        };
        law.validate()?;
        Ok(law)
    }

    fn validate(&self) -> Result<()> {
        for (s, _) in &self.gaussian {
            if !(*s >= 0.0 && s.is_finite()) {
                return Err(Error::domain(format!("Gaussian scale must be >= 0, got {s}")));
            }
        }
        for (r, _) in &self.jumps {
            if !(*r >= 0.0 && r.is_finite()) {
                return Err(Error::domain(format!("jump rate must be >= 0, got {r}")));
            }
        }
        let norms: Vec<f64> = self
            .gaussian
            .iter()
            .map(|(_, e)| self.inner(e, e).map(|v| v.max(0.0).sqrt()))
            .collect::<Result<_>>()?;
        for i in 0..self.gaussian.len() {
            for j in 0..i {
                let ip = self.inner(&self.gaussian[i].1, &self.gaussian[j].1)?;
                if ip.abs() > ORTHOGONALITY_TOLERANCE * norms[i] * norms[j] {
                    return Err(Error::domain(format!(
                        "Gaussian directions {j} and {i} are not orthogonal (inner product {ip:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &Arc<SemigroupSpec> {
        &self.spec
    }

    pub fn carrier(&self) -> Carrier {
        self.carrier
    }

    pub fn params(&self) -> &EntranceNormParams {
        &self.params
    }

    pub fn gaussian(&self) -> &[(f64, LawElement)] {
        &self.gaussian
    }

    pub fn jumps(&self) -> &[(f64, LawElement)] {
        &self.jumps
    }

    /// The carrier's inner product.
    pub fn inner(&self, x: &LawElement, y: &LawElement) -> Result<f64> {
        match (x, y) {
            (LawElement::Vector(u), LawElement::Vector(v)) => u.inner(v),
            (LawElement::Path(u), LawElement::Path(v)) => {
                let r = entrance_inner(u, v, &self.params)?;
                if !r.is_finite() {
                    return Err(Error::Divergent { exponent: r.head_exponent.unwrap_or(f64::NAN) });
                }
                Ok(r.value)
            }
            _ => Err(Error::domain("carrier mismatch between law element and test functional")),
        }
    }

    /// `int ||x||^2 lambda(dx) = sum_i sigma_i^2 ||e_i||^2 + sum_k lambda_k ||v_k||^2`.
    pub fn second_moment(&self) -> Result<f64> {
        let mut m = 0.0;
        for (s, e) in &self.gaussian {
            m += s * s * self.inner(e, e)?;
        }
        for (r, v) in &self.jumps {
            m += r * self.inner(v, v)?;
        }
        Ok(m)
    }

    /// The same law pushed through `J`, as a law on the entrance space.
    pub fn embedded(&self) -> Result<IDLaw> {
        let lift = |items: &[(f64, LawElement)]| -> Result<Vec<(f64, EntrancePath)>> {
            items
                .iter()
                .map(|(c, e)| match e {
                    LawElement::Vector(v) => Ok((*c, embed_j(self.spec.clone(), v.clone())?)),
                    LawElement::Path(p) => Ok((*c, p.clone())),
                })
                .collect()
        };
        IDLaw::on_entrance(self.spec.clone(), self.params, lift(&self.gaussian)?, lift(&self.jumps)?)
    }
}

/// `psi` from the pairings of the test functional with each Gaussian
/// direction and each jump element.
pub(crate) fn exponent_from_pairings(gaussian: &[(f64, f64)], jumps: &[(f64, f64)]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for &(sigma, p) in gaussian {
        re += 0.5 * sigma * sigma * p * p;
    }
    for &(rate, q) in jumps {
        // -(e^{iq} - 1 - iq) = 2 sin^2(q/2) - i (sin q - q), cancellation-free.
        let h = (0.5 * q).sin();
        re += rate * 2.0 * h * h;
        im -= rate * (q.sin() - q);
    }
    Complex64::new(re, im)
}

/// `psi(a)` with `e^{-psi(a)}` the characteristic functional of the law.
pub fn id_exponent(law: &IDLaw, a: &LawElement) -> Result<Complex64> {
    if a.carrier() != law.carrier {
        return Err(Error::domain("carrier mismatch between law and test functional"));
    }
    let g: Vec<(f64, f64)> = law.gaussian.iter().map(|(s, e)| Ok((*s, law.inner(e, a)?))).collect::<Result<_>>()?;
    let j: Vec<(f64, f64)> = law.jumps.iter().map(|(r, v)| Ok((*r, law.inner(v, a)?))).collect::<Result<_>>()?;
    Ok(exponent_from_pairings(&g, &j))
}

#[derive(Debug, Clone)]
pub enum ScMode {
    /// `Psi_t(a) = int_0^t psi_s(a) ds`, `psi_s` from the sections `x(s)` of a
    /// law on the entrance space.
    EntranceDriven(IDLaw),
    /// `Psi_t(a) = int_0^t psi_0(T_s^* a) ds` for a law on `H`.
    Differentiable(IDLaw),
}

#[derive(Debug, Clone)]
pub struct SCSemigroupSpec {
    pub mode: ScMode,
    pub spec: Arc<SemigroupSpec>,
    pub quadrature: EntranceNormParams,
}

/// Pairings of every Gaussian direction and jump element with one functional.
type Pairings = (Vec<f64>, Vec<f64>);

impl SCSemigroupSpec {
    pub fn entrance_driven(law: IDLaw) -> Result<Self> {
        if law.carrier != Carrier::Entrance {
            return Err(Error::domain("entrance-driven semigroups need a law on the entrance space"));
        }
        Ok(SCSemigroupSpec { spec: law.spec.clone(), quadrature: law.params, mode: ScMode::EntranceDriven(law) })
    }

    pub fn differentiable(law: IDLaw) -> Result<Self> {
        if law.carrier != Carrier::H {
            return Err(Error::domain("differentiable semigroups need a law on H"));
        }
        Ok(SCSemigroupSpec { spec: law.spec.clone(), quadrature: law.params, mode: ScMode::Differentiable(law) })
    }

    pub fn law(&self) -> &IDLaw {
        match &self.mode {
            ScMode::EntranceDriven(l) | ScMode::Differentiable(l) => l,
        }
    }

    pub fn is_differentiable(&self) -> bool {
        matches!(self.mode, ScMode::Differentiable(_))
    }

    /// Accuracy expected of identities between exponents, relative to their size.
    pub fn tolerance(&self) -> f64 {
        self.spec.tolerance
    }

    fn time_quadrature(&self) -> TimeQuadrature {
        TimeQuadrature { s_min: self.quadrature.s_min, rho: self.quadrature.rho, order: PANEL_ORDER }
    }

    fn head(&self) -> HeadTreatment {
        if self.is_differentiable() {
            HeadTreatment::Smooth
        } else {
            HeadTreatment::Extrapolate
        }
    }

    /// `<x(s), a>` for every element of the law; `x(s) = T_s v` in the
    /// differentiable mode, computed there as `<v, T_s^* a>`.
    fn pairings(&self, s: f64, a: &GridFunction) -> Result<Pairings> {
        let law = self.law();
        match &self.mode {
            ScMode::Differentiable(_) => {
                let b = self.spec.adjoint_apply(s, a)?;
                let pair = |items: &[(f64, LawElement)]| -> Result<Vec<f64>> {
                    items.iter().map(|(_, e)| e.as_vector().unwrap().inner(&b)).collect()
                };
                Ok((pair(&law.gaussian)?, pair(&law.jumps)?))
            }
            ScMode::EntranceDriven(_) => {
                let pair = |items: &[(f64, LawElement)]| -> Result<Vec<f64>> {
                    items.iter().map(|(_, e)| e.as_path().unwrap().pair(s, a)).collect()
                };
                Ok((pair(&law.gaussian)?, pair(&law.jumps)?))
            }
        }
    }

    fn exponent_at(&self, p: &Pairings, scale: f64) -> Complex64 {
        let law = self.law();
        let g: Vec<(f64, f64)> = law.gaussian.iter().zip(&p.0).map(|((s, _), v)| (*s, scale * v)).collect();
        let j: Vec<(f64, f64)> = law.jumps.iter().zip(&p.1).map(|((r, _), v)| (*r, scale * v)).collect();
        exponent_from_pairings(&g, &j)
    }

    /// `psi_s(a)`, the exponent of `nu_s`.
    pub fn section_exponent(&self, s: f64, a: &GridFunction) -> Result<Complex64> {
        self.spec.check(a)?;
        Ok(self.exponent_at(&self.pairings(s, a)?, 1.0))
    }

    /// Integrates a complex integrand on `[0, t]`, evaluating it once per node.
    fn integrate_complex(&self, t: f64, f: impl Fn(f64) -> Result<Complex64>) -> Result<Complex64> {
        let cache: RefCell<HashMap<u64, Complex64>> = RefCell::new(HashMap::new());
        let error: RefCell<Option<Error>> = RefCell::new(None);
        let eval = |s: f64| -> Complex64 {
            if let Some(v) = cache.borrow().get(&s.to_bits()) {
                return *v;
            }
            let v = match f(s) {
                Ok(v) => v,
                Err(e) => {
                    error.borrow_mut().get_or_insert(e);
                    Complex64::new(0.0, 0.0)
                }
            };
            cache.borrow_mut().insert(s.to_bits(), v);
            v
        };
        let q = self.time_quadrature();
        let re = q.integrate(t, self.head(), |s| eval(s).re);
        let im = q.integrate(t, self.head(), |s| eval(s).im);
        if let Some(e) = error.into_inner() {
            return Err(e);
        }
        for r in [&re, &im] {
            if r.head.finiteness == Finiteness::Divergent {
                return Err(Error::Divergent { exponent: r.head.exponent.unwrap_or(f64::NAN) });
            }
        }
        Ok(Complex64::new(re.value, im.value))
    }
}

/// `Psi_t(a)` with `mu_t(a)^ = e^{-Psi_t(a)}`.
pub fn sc_exponent(sc: &SCSemigroupSpec, t: f64, a: &GridFunction) -> Result<Complex64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("time must be >= 0, got {t}")));
    }
    sc.spec.check(a)?;
    if t == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    sc.integrate_complex(t, |s| Ok(sc.exponent_at(&sc.pairings(s, a)?, 1.0)))
}

/// `mu_t(a)^`.
pub fn characteristic(sc: &SCSemigroupSpec, t: f64, a: &GridFunction) -> Result<Complex64> {
    Ok((-sc_exponent(sc, t, a)?).exp())
}

/// `|Psi_{r+t}(a) - Psi_r(T_t^* a) - Psi_t(a)|`.
pub fn verify_sc_identity(sc: &SCSemigroupSpec, r: f64, t: f64, a: &GridFunction) -> Result<f64> {
    if !(r >= 0.0 && t >= 0.0) {
        return Err(Error::domain("times must be >= 0"));
    }
    if r == 0.0 || t == 0.0 {
        return Ok(0.0);
    }
    let lhs = sc_exponent(sc, r + t, a)?;
    let moved = sc.spec.adjoint_apply(t, a)?;
    let rhs = sc_exponent(sc, r, &moved)? + sc_exponent(sc, t, a)?;
    Ok((lhs - rhs).norm())
}

/// `i <T_t x, a> - Psi_t(a)`: the exponent of `Q_t` applied to `y -> e^{i<y, a>}`.
pub fn mehler_exponent(sc: &SCSemigroupSpec, t: f64, x: &GridFunction, a: &GridFunction) -> Result<Complex64> {
    sc.spec.check(x)?;
    let flow = sc.spec.apply(t, x)?.inner(a)?;
    Ok(Complex64::new(0.0, flow) - sc_exponent(sc, t, a)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    /// `sum_i sigma_i^2 int_0^t ||e_i(s)||^2 ds + sum_k lambda_k int_0^t ||v_k(s)||^2 ds`.
    pub direct: f64,
    /// `int_0^t ds sum_n int <x, e_n>^2 nu_s(dx)` over an orthonormal basis, each
    /// second moment read off the exponent of `nu_s`.
    pub via_sections: f64,
    pub residual: f64,
}

/// Step of the symmetric second difference, relative to the largest pairing.
const MOMENT_STEP: f64 = 1e-4;

/// `int ||x||^2 mu_t(dx)` computed from the law's parameters and from the
/// section laws `nu_s`.
pub fn second_moment(sc: &SCSemigroupSpec, t: f64) -> Result<MomentReport> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(MomentReport { direct: 0.0, via_sections: 0.0, residual: 0.0 });
    }
    let law = sc.law();
    let local = |e: &LawElement| -> Result<f64> {
        let path = match e {
            LawElement::Vector(v) => embed_j(sc.spec.clone(), v.clone())?,
            LawElement::Path(p) => p.clone(),
        };
        let r = local_l2_check(&path, t)?;
        if !r.is_finite() {
            return Err(Error::Divergent { exponent: r.head_exponent.unwrap_or(f64::NAN) });
        }
        Ok(r.value)
    };
    let mut direct = 0.0;
    for (s, e) in &law.gaussian {
        if *s != 0.0 {
            direct += s * s * local(e)?;
        }
    }
    for (r, v) in &law.jumps {
        if *r != 0.0 {
            direct += r * local(v)?;
        }
    }

    // Orthonormal basis e_n = delta_n / sqrt(w_n) of the discrete state space;
    // <x(s), e_n> = q_n / sqrt(w_n) with q the representer of <x(s), .>.
    let weights = sc.spec.node_weights();
    let representers = |s: f64, items: &[(f64, LawElement)]| -> Result<Vec<Vec<f64>>> {
        items
            .iter()
            .map(|(_, e)| match e {
                LawElement::Vector(v) => {
                    let moved = sc.spec.apply(s, v)?;
                    Ok(moved.values.iter().zip(&weights).map(|(x, w)| x * w).collect())
                }
                LawElement::Path(p) => p.pairing_representer(s),
            })
            .collect()
    };
    let moment_at = |s: f64| -> Result<Complex64> {
        let g = representers(s, &law.gaussian)?;
        let j = representers(s, &law.jumps)?;
        let mut total = 0.0;
        for (n, w) in weights.iter().enumerate() {
            let root = w.sqrt();
            let p: Pairings = (g.iter().map(|q| q[n] / root).collect(), j.iter().map(|q| q[n] / root).collect());
            let largest = p.0.iter().chain(&p.1).fold(0.0f64, |m, v| m.max(v.abs()));
            if largest == 0.0 {
                continue;
            }
            let eps = MOMENT_STEP / largest.max(1.0);
            // psi_s(0) = 0 and Re psi_s is even.
            total += 2.0 * sc.exponent_at(&p, eps).re / (eps * eps);
        }
        Ok(Complex64::new(total, 0.0))
    };
    let via_sections = sc.integrate_complex(t, moment_at)?.re;
    Ok(MomentReport { direct, via_sections, residual: (direct - via_sections).abs() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientTrace {
    pub h: Vec<f64>,
    /// `Re Psi_h(a_h) / h` with `a_h` the unit section of the first law element at `h`.
    pub quotients: Vec<f64>,
}

impl QuotientTrace {
    pub fn ratios(&self) -> Vec<f64> {
        self.quotients.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Difference quotients `Re Psi_h(a)/h` along `hs`, each tested against the
/// normalized section `x(h) / ||x(h)||` of the first Gaussian direction (or
/// jump element when there is no Gaussian part).
pub fn quotient_trace(sc: &SCSemigroupSpec, hs: &[f64]) -> Result<QuotientTrace> {
    let law = sc.law();
    let first = law
        .gaussian
        .first()
        .or_else(|| law.jumps.first())
        .map(|(_, e)| e.clone())
        .ok_or_else(|| Error::domain("law has no elements"))?;
    let mut quotients = Vec::with_capacity(hs.len());
    for &h in hs {
        if !(h > 0.0) {
            return Err(Error::domain("quotient times must be positive"));
        }
        let section = match &first {
            LawElement::Vector(v) => sc.spec.apply(h, v)?,
            LawElement::Path(p) => p.eval(h)?,
        };
        let norm = section.norm();
        if norm == 0.0 {
            return Err(Error::domain("law element has a vanishing section"));
        }
        let a = section.scaled(1.0 / norm);
        quotients.push(sc_exponent(sc, h, &a)?.re / h);
    }
    Ok(QuotientTrace { h: hs.to_vec(), quotients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn jump_exponent_matches_complex_arithmetic() {
        let psi = exponent_from_pairings(&[], &[(1.0, std::f64::consts::PI)]);
        let q = Complex64::new(0.0, std::f64::consts::PI);
        let direct = -(q.exp() - 1.0 - q);
        assert_relative_eq!(psi.re, direct.re, epsilon = 1e-14);
        assert_relative_eq!(psi.im, direct.im, epsilon = 1e-14);
    }

    #[test]
    fn small_jump_pairings_keep_relative_accuracy() {
        let q = 1e-6;
        let psi = exponent_from_pairings(&[], &[(1.0, q)]);
        assert_relative_eq!(psi.re, 0.5 * q * q, max_relative = 1e-10);
        assert_relative_eq!(psi.im, q * q * q / 6.0, max_relative = 1e-8);
    }

    #[test]
    fn mismatched_carriers_are_rejected() {
        let spec = Arc::new(SemigroupSpec::matrix(DMatrix::from_element(1, 1, -1.0)).unwrap());
        let law = IDLaw::on_h(spec.clone(), vec![(1.0, GridFunction::vector(vec![1.0]))], vec![]).unwrap();
        let path = embed_j(spec, GridFunction::vector(vec![1.0])).unwrap();
        assert!(id_exponent(&law, &LawElement::Path(path)).is_err());
    }
}
