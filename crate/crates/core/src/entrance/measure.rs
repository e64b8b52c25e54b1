//! Entrance paths given by finite signed measures: heat paths
//! `sum_k w_k g_d(s, . - z_k)`, absorbing paths `a k_s + sum_k w_k p_s(z_k, .)`,
//! and a Cauchy sequence of heat paths whose limit has no such measure.

use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::Finiteness;
use crate::semigroup::{SemigroupKind, SemigroupSpec};

use super::norms::{entrance_norm, local_l2_check, EntranceNormParams};
use super::section::{heat_pair_integral, TimeWeight};
use super::{Element, EntrancePath, Term};

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub location: Vec<f64>,
    pub weight: f64,
}

/// A finite signed measure as a list of weighted point masses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignedMeasureAtoms {
    pub atoms: Vec<Atom>,
}

impl SignedMeasureAtoms {
    /// Validates finiteness, non-zero weights, a common dimension and
    /// pairwise distinct locations.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if let Some(first) = atoms.first() {
            let d = first.location.len();
            if d == 0 {
                return Err(Error::shape("atom locations need at least one coordinate"));
            }
            for a in &atoms {
                if a.location.len() != d {
                    return Err(Error::shape("atoms have locations of different dimensions"));
                }
                if !(a.weight.is_finite() && a.weight != 0.0) || a.location.iter().any(|v| !v.is_finite()) {
                    return Err(Error::domain("atom weights must be finite and non-zero, locations finite"));
                }
            }
            for (i, a) in atoms.iter().enumerate() {
                if atoms[..i].iter().any(|b| b.location == a.location) {
                    return Err(Error::domain(format!("repeated atom location {:?}", a.location)));
                }
            }
        }
        Ok(SignedMeasureAtoms { atoms })
    }

    pub fn single(location: Vec<f64>, weight: f64) -> Self {
        SignedMeasureAtoms { atoms: vec![Atom { location, weight }] }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.atoms.first().map(|a| a.location.len())
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.abs()).sum()
    }

    /// The total variation measure `|mu|`.
    pub fn abs(&self) -> SignedMeasureAtoms {
        SignedMeasureAtoms {
            atoms: self.atoms.iter().map(|a| Atom { location: a.location.clone(), weight: a.weight.abs() }).collect(),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.atoms.iter().all(|a| a.weight >= 0.0)
    }
}

/// One atom per line: coordinates followed by the weight. Blank lines and
/// lines starting with `#` are skipped.
impl FromStr for SignedMeasureAtoms {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let nums: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| Error::domain(format!("atom line {}: {e}", n + 1)))?;
            if nums.len() < 2 {
                return Err(Error::domain(format!("atom line {}: need a location and a weight", n + 1)));
            }
            let (loc, w) = nums.split_at(nums.len() - 1);
            atoms.push(Atom { location: loc.to_vec(), weight: w[0] });
        }
        SignedMeasureAtoms::new(atoms)
    }
}

/// `int_0^l ds sum_{i,j} |w_i| |w_j| g_d(2s, z_i - z_j)`; infinite when
/// point masses make it diverge (any atom for `d = 2`).
pub fn local_pair_integral(spec: Arc<SemigroupSpec>, mu: &SignedMeasureAtoms, l: f64) -> Result<f64> {
    let path = EntrancePath::heat_measure(spec, &mu.abs())?;
    let r = heat_pair_integral(&path, &path, TimeWeight::Flat, 2.0 * l, 1.1);
    Ok(if r.finiteness == Finiteness::Divergent { f64::INFINITY } else { r.value })
}

/// `sum_{i,j} |w_i| |w_j| exp(-(z_i - z_j)^2 / 4)` for atoms on the line.
pub fn pair_exponential_sum(mu: &SignedMeasureAtoms) -> f64 {
    let mut total = 0.0;
    for a in &mu.atoms {
        for b in &mu.atoms {
            let d2: f64 = a.location.iter().zip(&b.location).map(|(x, y)| (x - y) * (x - y)).sum();
            total += a.weight.abs() * b.weight.abs() * (-d2 / 4.0).exp();
        }
    }
    total
}

/// Heat path of `mu`, accepted when its local square integral over `(0, 1]`
/// is finite. On the line the pair-exponential criterion is evaluated too
/// and the two verdicts must agree.
pub fn from_measure_heat(spec: Arc<SemigroupSpec>, mu: &SignedMeasureAtoms) -> Result<EntrancePath> {
    let d = match spec.kind {
        SemigroupKind::HeatLine => 1,
        SemigroupKind::HeatPlane => 2,
        _ => return Err(Error::domain("heat measures need a heat semigroup")),
    };
    if mu.is_empty() {
        return Err(Error::domain("measure has no atoms"));
    }
    if mu.dim() != Some(d) {
        return Err(Error::shape(format!("atoms of dimension {:?} for a {d}-d heat semigroup", mu.dim())));
    }
    let local = local_pair_integral(spec.clone(), mu, 1.0)?;
    let pair_sum = (d == 1).then(|| pair_exponential_sum(mu));
    let local_ok = local.is_finite();
    if let Some(p) = pair_sum {
        if local_ok != p.is_finite() {
            return Err(Error::RejectedMeasure {
                reason: "local integral and pair-exponential criterion disagree".into(),
                local_integral: Some(local),
                pair_sum,
            });
        }
    }
    if !local_ok {
        return Err(Error::RejectedMeasure {
            reason: "local square integral of the heat path diverges".into(),
            local_integral: Some(local),
            pair_sum,
        });
    }
    EntrancePath::heat_measure(spec, mu)
}

/// Absorbing path `a k_s + sum_k w_k p_s(z_k, .)`, accepted when
/// `int_0^1 ds int (sum_k |w_k| p_s(z_k, y))^2 gamma(dy)` is finite.
pub fn from_measure_absorbing(spec: Arc<SemigroupSpec>, a: f64, mu: &SignedMeasureAtoms) -> Result<EntrancePath> {
    if spec.kind != SemigroupKind::AbsorbingHalfline {
        return Err(Error::domain("absorbing measures need the absorbing half-line"));
    }
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::domain(format!("boundary weight must be >= 0, got {a}")));
    }
    if mu.atoms.iter().any(|at| at.location.len() != 1 || !(at.location[0] > 0.0)) {
        return Err(Error::domain("absorbing atoms must sit at points > 0"));
    }
    if !mu.is_empty() {
        let abs = EntrancePath::absorbing_measure(spec.clone(), 0.0, &mu.abs())?;
        let r = local_l2_check(&abs, 1.0)?;
        if r.finiteness == Finiteness::Divergent || !r.value.is_finite() {
            return Err(Error::RejectedMeasure {
                reason: "local square integral of the absorbing path diverges".into(),
                local_integral: Some(r.value),
                pair_sum: None,
            });
        }
    }
    EntrancePath::absorbing_measure(spec, a, mu)
}

/// Partial sums of `sum_k a_k [g_1(s, . - z_k) - g_1(s, . - x_k)]` with
/// `x_k = 1/k`, `z_k = 1/k + eps_k`.
#[derive(Debug, Clone)]
pub struct NonRepresentable {
    pub path: EntrancePath,
    pub epsilons: Vec<f64>,
    /// `||x_k - x_{k-1}||_~^2` by quadrature, `k = 1..=n`.
    pub increments: Vec<f64>,
    /// `sum_{k > n} 2^{-k}`.
    pub tail_bound: f64,
    /// Pair-exponential sums of the atom measures of the partial sums.
    pub pair_sums: Vec<f64>,
}

const BISECTION_STEPS: usize = 60;
const TARGET_SLACK: f64 = 0.9;

/// Builds the first `n` partial sums, choosing each `eps_k` in `(0, k^{-2})`
/// by bisection so that `a_k^2 ||g(., . - eps_k) - g(., .)||_~^2 <= 0.9 * 2^{-k}`.
pub fn nonrepresentable_example(
    spec: Arc<SemigroupSpec>,
    a_seq: &[f64],
    n: usize,
    params: &EntranceNormParams,
) -> Result<NonRepresentable> {
    if spec.kind != SemigroupKind::HeatLine {
        return Err(Error::domain("the construction lives on the heat line"));
    }
    if n == 0 || a_seq.len() < n {
        return Err(Error::domain(format!("need n >= 1 and {n} coefficients, got {}", a_seq.len())));
    }
    params.validate(&spec)?;
    let mut terms = Vec::new();
    let mut epsilons = Vec::with_capacity(n);
    let mut increments = Vec::with_capacity(n);
    let mut pair_sums = Vec::with_capacity(n);
    let mut atoms = Vec::new();
    for k in 1..=n {
        let a = a_seq[k - 1];
        let target = TARGET_SLACK * 0.5f64.powi(k as i32);
        let q = |eps: f64| -> Result<f64> {
            let p = EntrancePath::from_terms(
                spec.clone(),
                vec![Term::new(a, Element::HeatAtom(vec![eps])), Term::new(-a, Element::HeatAtom(vec![0.0]))],
            )?;
            Ok(entrance_norm(&p, params)?.powi(2))
        };
        let hi0 = 1.0 / (k * k) as f64;
        let eps = if a == 0.0 {
            0.5 * hi0
        } else {
            let q_hi = q(hi0)?;
            if q_hi <= target {
                // Any point of the interval works; keep it interior.
                0.5 * hi0
            } else {
                let (mut lo, mut hi) = (0.0, hi0);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if q(mid)? <= target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if lo == 0.0 {
                    return Err(Error::Construction(format!(
                        "no eps in (0, {hi0:.3e}) meets {target:.3e} for k = {k} (a_k = {a})"
                    )));
                }
                lo
            }
        };
        let x_k = 1.0 / k as f64;
        let z_k = x_k + eps;
        epsilons.push(eps);
        let inc = EntrancePath::from_terms(
            spec.clone(),
            vec![Term::new(a, Element::HeatAtom(vec![z_k])), Term::new(-a, Element::HeatAtom(vec![x_k]))],
        )?;
        increments.push(entrance_norm(&inc, params)?.powi(2));
        terms.extend(inc.terms);
        atoms.push(super::Atom { location: vec![z_k], weight: a });
        atoms.push(super::Atom { location: vec![x_k], weight: -a });
        pair_sums.push(pair_exponential_sum(&SignedMeasureAtoms { atoms: atoms.clone() }));
    }
    let path = EntrancePath::from_terms(spec, terms)?;
    Ok(NonRepresentable { path, epsilons, increments, tail_bound: 0.5f64.powi(n as i32), pair_sums })
}
