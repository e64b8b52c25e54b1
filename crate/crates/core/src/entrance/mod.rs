//! Entrance paths `s -> x(s)` with `x(r + t) = T_t x(r)`, the weighted
//! space they form, its shift semigroup, the resolvent-smoothed weak norm,
//! closability probing and the kernel representations by signed measures.
//!
//! A path is a finite linear combination of terms. Each term is a base
//! element (an embedded state, a heat atom, an absorbing atom, the boundary
//! flux, or a sampled path), shifted in time and differentiated `order` times
//! in `s`. Shifts and time derivatives act exactly on this representation.

mod closability;
mod measure;
mod norms;
mod section;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kernels::{dg_r2, dk_raw, dp_raw};
use crate::semigroup::{SemigroupKind, SemigroupSpec};

pub use closability::{closability_probe, default_probes, ProbeTrace, Verdict};
pub use measure::{
    from_measure_absorbing, from_measure_heat, local_pair_integral, nonrepresentable_example, pair_exponential_sum,
    Atom, NonRepresentable, SignedMeasureAtoms,
};
pub use norms::{
    entrance_inner, entrance_norm, local_l2_check, minus_inner, minus_norm, EntranceNormParams, InnerReport, LocalL2,
};

/// Values of a path recorded at increasing times; later times are reached by
/// applying the semigroup.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub times: Vec<f64>,
    pub values: Vec<GridFunction>,
}

#[derive(Debug, Clone)]
pub enum Element {
    /// `s -> T_s x0`.
    Embedded(Arc<GridFunction>),
    /// `s -> g_d(s, . - z)` for the heat semigroups.
    HeatAtom(Vec<f64>),
    /// `s -> p_s(z, .)` for the absorbing half-line.
    AbsorbingAtom(f64),
    /// `s -> k_s(.)` for the absorbing half-line.
    BoundaryFlux,
    Sampled(Arc<SampledPath>),
}

impl Element {
    pub fn is_kernel(&self) -> bool {
        matches!(self, Element::HeatAtom(_) | Element::AbsorbingAtom(_) | Element::BoundaryFlux)
    }

    fn same(&self, other: &Element) -> bool {
        match (self, other) {
            (Element::Embedded(a), Element::Embedded(b)) => Arc::ptr_eq(a, b) || a.values == b.values,
            (Element::HeatAtom(a), Element::HeatAtom(b)) => a == b,
            (Element::AbsorbingAtom(a), Element::AbsorbingAtom(b)) => a == b,
            (Element::BoundaryFlux, Element::BoundaryFlux) => true,
            (Element::Sampled(a), Element::Sampled(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

/// `weight * (d/ds)^order element(s + shift)`.
#[derive(Debug, Clone)]
pub struct Term {
    pub weight: f64,
    pub element: Element,
    pub shift: f64,
    pub order: u32,
}

impl Term {
    pub fn new(weight: f64, element: Element) -> Self {
        Term { weight, element, shift: 0.0, order: 0 }
    }
}

/// Which closed form (if any) describes a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Embedded,
    HeatMeasure,
    AbsorbingMeasure,
    Sampled,
    Combination,
}

/// Terms whose shifts agree this closely are merged.
pub const MERGE_SHIFT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EntrancePath {
    spec: Arc<SemigroupSpec>,
    terms: Vec<Term>,
}

impl EntrancePath {
    pub fn from_terms(spec: Arc<SemigroupSpec>, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            validate_term(&spec, t)?;
        }
        Ok(EntrancePath { spec, terms })
    }

    pub fn zero(spec: Arc<SemigroupSpec>) -> Self {
        EntrancePath { spec, terms: Vec::new() }
    }

    pub fn spec(&self) -> &Arc<SemigroupSpec> {
        &self.spec
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.weight == 0.0)
    }

    /// Path with values recorded at increasing positive times.
    pub fn sampled(spec: Arc<SemigroupSpec>, times: Vec<f64>, values: Vec<GridFunction>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::shape("sampled path needs one value per time"));
        }
        if times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("sample times must be positive and increasing"));
        }
        for v in &values {
            spec.check(v)?;
        }
        let element = Element::Sampled(Arc::new(SampledPath { times, values }));
        Ok(EntrancePath { spec, terms: vec![Term::new(1.0, element)] })
    }

    /// Heat path `sum_k w_k g_d(s, . - z_k)` without validation.
    pub fn heat_measure(spec: Arc<SemigroupSpec>, atoms: &SignedMeasureAtoms) -> Result<Self> {
        let terms = atoms
            .atoms
            .iter()
            .map(|a| Term::new(a.weight, Element::HeatAtom(a.location.clone())))
            .collect();
        EntrancePath::from_terms(spec, terms)
    }

    /// Absorbing path `a k_s + sum_k w_k p_s(z_k, .)` without validation.
    pub fn absorbing_measure(spec: Arc<SemigroupSpec>, a: f64, atoms: &SignedMeasureAtoms) -> Result<Self> {
        let mut terms = Vec::with_capacity(atoms.len() + 1);
        if a != 0.0 {
            terms.push(Term::new(a, Element::BoundaryFlux));
        }
        for atom in &atoms.atoms {
            if atom.location.len() != 1 {
                return Err(Error::shape("absorbing atoms are points of the half-line"));
            }
            terms.push(Term::new(atom.weight, Element::AbsorbingAtom(atom.location[0])));
        }
        EntrancePath::from_terms(spec, terms)
    }

    pub fn representation(&self) -> Representation {
        let all = |f: fn(&Element) -> bool| self.terms.iter().all(|t| f(&t.element));
        if all(|e| matches!(e, Element::Embedded(_))) {
            Representation::Embedded
        } else if all(|e| matches!(e, Element::HeatAtom(_))) {
            Representation::HeatMeasure
        } else if all(|e| matches!(e, Element::AbsorbingAtom(_) | Element::BoundaryFlux)) {
            Representation::AbsorbingMeasure
        } else if all(|e| matches!(e, Element::Sampled(_))) {
            Representation::Sampled
        } else {
            Representation::Combination
        }
    }

    pub fn has_kernel_terms(&self) -> bool {
        self.terms.iter().any(|t| t.element.is_kernel() && t.weight != 0.0)
    }

    /// Whether the representation alone guarantees a limit in H as `s -> 0`:
    /// every kernel term is strictly shifted, or the space is finite-dimensional.
    pub fn structurally_closable(&self) -> bool {
        self.spec.is_matrix()
            || self
                .terms
                .iter()
                .all(|t| t.weight == 0.0 || !t.element.is_kernel() || t.shift > 0.0)
    }

    /// The section `x(s)` on the grid.
    pub fn eval(&self, s: f64) -> Result<GridFunction> {
        if !(s > 0.0) {
            return Err(Error::domain(format!("paths are evaluated at s > 0, got {s}")));
        }
        self.section(s)
    }

    /// Section at `s >= 0`; `s = 0` is allowed when every term is shifted
    /// or embedded.
    pub(crate) fn section(&self, s: f64) -> Result<GridFunction> {
        let mut out = vec![0.0; self.spec.grid.len()];
        for t in &self.terms {
            if t.weight == 0.0 {
                continue;
            }
            let v = self.term_section(t, s + t.shift)?;
            for (o, x) in out.iter_mut().zip(v) {
                *o += t.weight * x;
            }
        }
        self.spec.function(out)
    }

    /// `(d/ds)^order element(sigma)` on the grid, without the weight.
    pub(crate) fn term_section(&self, t: &Term, sigma: f64) -> Result<Vec<f64>> {
        let spec = &*self.spec;
        let grid = spec.grid;
        let n = grid.len();
        match &t.element {
            Element::Embedded(x0) => {
                let mut v = x0.values.clone();
                for _ in 0..t.order {
                    v = spec.generator_raw(&v);
                }
                Ok(spec.apply_raw(sigma, &v))
            }
            Element::HeatAtom(z) => {
                positive_time(sigma)?;
                let d = spec.dim();
                Ok((0..n)
                    .map(|i| {
                        let y = grid.point(i);
                        let r2: f64 = y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                        dg_r2(d, t.order, sigma, r2)
                    })
                    .collect())
            }
            Element::AbsorbingAtom(z) => {
                positive_time(sigma)?;
                Ok((0..n).map(|i| dp_raw(t.order, sigma, *z, grid.point(i)[0])).collect())
            }
            Element::BoundaryFlux => {
                positive_time(sigma)?;
                Ok((0..n).map(|i| dk_raw(t.order, sigma, grid.point(i)[0])).collect())
            }
            Element::Sampled(p) => sampled_section(spec, p, t.order, sigma, |v| v.to_vec()),
        }
    }

    /// `x(s + t)`.
    pub fn shift_apply(&self, t: f64) -> Result<EntrancePath> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("shift must be finite and >= 0, got {t}")));
        }
        let terms = self
            .terms
            .iter()
            .map(|term| Term { shift: term.shift + t, ..term.clone() })
            .collect();
        Ok(EntrancePath { spec: self.spec.clone(), terms })
    }

    /// `s -> (d/ds) x(s)`, which equals `A x(s)`. Sampled terms are
    /// differentiated by finite differences and flagged in the warning.
    pub fn generator_path(&self) -> (EntrancePath, Option<String>) {
        let terms: Vec<Term> = self
            .terms
            .iter()
            .map(|term| Term { order: term.order + 1, ..term.clone() })
            .collect();
        let warning = self
            .terms
            .iter()
            .any(|t| matches!(t.element, Element::Sampled(_)))
            .then(|| "sampled terms are differentiated by finite differences; expect O(delta) error".to_string());
        (EntrancePath { spec: self.spec.clone(), terms }, warning)
    }

    pub fn scaled(&self, c: f64) -> EntrancePath {
        let terms = self.terms.iter().map(|t| Term { weight: c * t.weight, ..t.clone() }).collect();
        EntrancePath { spec: self.spec.clone(), terms }
    }

    pub fn add(&self, other: &EntrancePath) -> Result<EntrancePath> {
        self.combine(1.0, other)
    }

    pub fn sub(&self, other: &EntrancePath) -> Result<EntrancePath> {
        self.combine(-1.0, other)
    }

    /// `self + c * other`, compacted.
    pub fn combine(&self, c: f64, other: &EntrancePath) -> Result<EntrancePath> {
        same_spec(self, other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|t| Term { weight: c * t.weight, ..t.clone() }));
        let mut out = EntrancePath { spec: self.spec.clone(), terms };
        out.compact();
        Ok(out)
    }

    /// Merge terms with the same element, order and shift; drop zero weights.
    pub fn compact(&mut self) {
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            if let Some(m) = merged.iter_mut().find(|m| {
                m.order == t.order && (m.shift - t.shift).abs() <= MERGE_SHIFT_TOLERANCE && m.element.same(&t.element)
            }) {
                m.weight += t.weight;
            } else {
                merged.push(t);
            }
        }
        merged.retain(|t| t.weight != 0.0);
        self.terms = merged;
    }

    /// Largest `||x(r + t) - T_t x(r)||` over the given pairs, relative to `||x(r + t)||`.
    pub fn entrance_residual(&self, pairs: &[(f64, f64)]) -> Result<f64> {
        let mut worst = 0.0f64;
        for &(r, t) in pairs {
            let lhs = self.eval(r + t)?;
            let rhs = self.spec.apply(t, &self.eval(r)?)?;
            let scale = lhs.norm().max(f64::MIN_POSITIVE);
            worst = worst.max(lhs.sub(&rhs)?.norm() / scale);
        }
        Ok(worst)
    }

    /// `<x(s), a>` in H.
    pub fn pair(&self, s: f64, a: &GridFunction) -> Result<f64> {
        self.spec.check(a)?;
        section::pair_with_vector(self, s, &a.values)
    }

    /// Coefficients `q` with `<x(s), a> = sum_j q_j a_j` for every grid vector `a`.
    pub(crate) fn pairing_representer(&self, s: f64) -> Result<Vec<f64>> {
        section::pairing_representer(self, s)
    }

    /// `lim_{s -> 0} <x(s), a>`, finite for smooth `a` even when the path is
    /// not closable.
    pub fn weak_pair(&self, a: &GridFunction) -> Result<f64> {
        self.pair(0.0, a)
    }
}

/// `J x`: the path `s -> T_s x`.
pub fn embed_j(spec: Arc<SemigroupSpec>, x: GridFunction) -> Result<EntrancePath> {
    spec.check(&x)?;
    Ok(EntrancePath { spec, terms: vec![Term::new(1.0, Element::Embedded(Arc::new(x)))] })
}

pub fn path_eval(x: &EntrancePath, s: f64) -> Result<GridFunction> {
    x.eval(s)
}

pub fn shift_apply(t: f64, x: &EntrancePath) -> Result<EntrancePath> {
    x.shift_apply(t)
}

pub fn generator_path(x: &EntrancePath) -> (EntrancePath, Option<String>) {
    x.generator_path()
}

fn positive_time(sigma: f64) -> Result<()> {
    if sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("kernel sections need a positive time, got {sigma}")))
    }
}

pub(crate) fn same_spec(a: &EntrancePath, b: &EntrancePath) -> Result<()> {
    if Arc::ptr_eq(&a.spec, &b.spec) || *a.spec == *b.spec {
        Ok(())
    } else {
        Err(Error::shape("paths belong to different semigroups"))
    }
}

fn validate_term(spec: &SemigroupSpec, t: &Term) -> Result<()> {
    if !(t.weight.is_finite() && t.shift >= 0.0 && t.shift.is_finite()) {
        return Err(Error::domain("term weights must be finite and shifts non-negative"));
    }
    match (&t.element, &spec.kind) {
        (Element::Embedded(x), _) => spec.check(x),
        (Element::Sampled(p), _) => p.values.iter().try_for_each(|v| spec.check(v)),
        (Element::HeatAtom(z), SemigroupKind::HeatLine | SemigroupKind::HeatPlane) => {
            if z.len() == spec.dim() && z.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::shape(format!("heat atom of dimension {} on a {}-d grid", z.len(), spec.dim())))
            }
        }
        (Element::AbsorbingAtom(z), SemigroupKind::AbsorbingHalfline) => {
            if *z > 0.0 && z.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!("absorbing atoms need a location > 0, got {z}")))
            }
        }
        (Element::BoundaryFlux, SemigroupKind::AbsorbingHalfline) => Ok(()),
        _ => Err(Error::domain("kernel element does not belong to this semigroup kind")),
    }
}

/// Base section of a sampled path, with `prepare` applied to the recorded
/// value before propagation. Matrix semigroups are invertible, so times before
/// the first sample are reached by running the exponential backwards.
pub(crate) fn sampled_section(
    spec: &SemigroupSpec,
    p: &SampledPath,
    order: u32,
    sigma: f64,
    prepare: impl Fn(&[f64]) -> Vec<f64> + Copy,
) -> Result<Vec<f64>> {
    if order > 0 {
        // Forward differences of the requested order.
        let delta = 1e-4 * sigma.max(1e-2);
        let mut acc = vec![0.0; spec.grid.len()];
        let mut binom = 1.0;
        for k in 0..=order {
            let v = sampled_section(spec, p, 0, sigma + k as f64 * delta, prepare)?;
            let sign = if (order - k) % 2 == 0 { 1.0 } else { -1.0 };
            for (a, x) in acc.iter_mut().zip(v) {
                *a += sign * binom * x;
            }
            binom = binom * (order - k) as f64 / (k + 1) as f64;
        }
        let scale = delta.powi(order as i32);
        return Ok(acc.into_iter().map(|v| v / scale).collect());
    }
    let first = p.times[0];
    if sigma < first {
        return match &spec.kind {
            SemigroupKind::Matrix(a) => {
                let back = (a * (sigma - first)).exp();
                let v = nalgebra::DVector::from_vec(prepare(&p.values[0].values));
                Ok((back * v).as_slice().to_vec())
            }
            _ => Err(Error::UnsupportedEvaluation { s: sigma, first }),
        };
    }
    let idx = p.times.partition_point(|t| *t <= sigma) - 1;
    Ok(spec.apply_raw(sigma - p.times[idx], &prepare(&p.values[idx].values)))
}
