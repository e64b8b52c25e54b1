//! Numerical test for the existence of `lim_{s -> 0} x(s)` in the state space.

use crate::error::{Error, Result};
use crate::grid::GridFunction;

use super::norms::section_distance2;
use super::section::section_inner;
use super::EntrancePath;

/// Relative Cauchy tolerance on the last probe step.
const CAUCHY_TOLERANCE: f64 = 1e-6;
/// Squared-norm ratio per probe step that counts as growth.
const BLOWUP_RATIO: f64 = 1.5;
/// Consecutive growing steps, ending at the finest probe, needed for a blowup.
const BLOWUP_RUN: usize = 4;

/// `4^{-j}` for `j = 0..=20`.
pub fn default_probes() -> Vec<f64> {
    (0..=20).map(|j| 4f64.powi(-j)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    pub probes: Vec<f64>,
    /// `||x(s_j)||^2`.
    pub squared_norms: Vec<f64>,
    /// `||x(s_{j+1}) - x(s_j)||`.
    pub differences: Vec<f64>,
}

impl ProbeTrace {
    /// `||x(s_{j+1})||^2 / ||x(s_j)||^2`.
    pub fn ratios(&self) -> Vec<f64> {
        self.squared_norms
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::INFINITY })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// The limit `x0` with the largest certification residual `||x(s_j) - T_{s_j} x0||`.
    Closable { x0: GridFunction, residual: f64, trace: ProbeTrace },
    Blowup { trace: ProbeTrace },
    Inconclusive { trace: ProbeTrace, reason: String },
}

impl Verdict {
    pub fn is_closable(&self) -> bool {
        matches!(self, Verdict::Closable { .. })
    }

    pub fn is_blowup(&self) -> bool {
        matches!(self, Verdict::Blowup { .. })
    }

    pub fn trace(&self) -> &ProbeTrace {
        match self {
            Verdict::Closable { trace, .. } | Verdict::Blowup { trace } | Verdict::Inconclusive { trace, .. } => trace,
        }
    }
}

/// Probe `x(s)` along decreasing times for a limit in the state space.
pub fn closability_probe(x: &EntrancePath, probes: &[f64]) -> Result<Verdict> {
    if probes.len() < 4 {
        return Err(Error::domain("closability probe needs at least 4 times"));
    }
    if probes.iter().any(|s| !(*s > 0.0)) || probes.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::domain("probe times must be positive and decreasing"));
    }
    // Narrow kernels are compared through closed-form inner products; sampling
    // them on the grid would lose them.
    let resolved = x.spec.lattice_time();
    let kernels = x.terms().iter().any(|t| t.element.is_kernel() && t.weight != 0.0 && t.shift < resolved);
    let mut squared_norms = Vec::with_capacity(probes.len());
    let mut differences = Vec::with_capacity(probes.len() - 1);
    let mut sections = Vec::new();
    for (j, &s) in probes.iter().enumerate() {
        squared_norms.push(section_inner(x, s, x, s, true)?.max(0.0));
        if kernels {
            if j > 0 {
                differences.push(section_distance2(x, probes[j - 1], x, s)?.sqrt());
            }
        } else {
            let v = x.section(s)?;
            if let Some(prev) = sections.last() {
                differences.push(v.sub(prev)?.norm());
            }
            sections.push(v);
        }
    }
    let trace = ProbeTrace { probes: probes.to_vec(), squared_norms, differences };

    let ratios = trace.ratios();
    let run = ratios.iter().rev().take_while(|r| **r >= BLOWUP_RATIO).count();
    if run >= BLOWUP_RUN {
        return Ok(Verdict::Blowup { trace });
    }

    let last_norm = trace.squared_norms.last().unwrap().sqrt();
    let d = &trace.differences;
    let tail = &d[d.len().saturating_sub(3)..];
    let cauchy = *d.last().unwrap() <= CAUCHY_TOLERANCE * last_norm.max(f64::MIN_POSITIVE)
        && tail.windows(2).all(|w| w[1] <= w[0] + 1e-9 * last_norm)
        || last_norm == 0.0;
    if !cauchy {
        return Ok(Verdict::Inconclusive { trace, reason: "differences are not Cauchy-decreasing".into() });
    }

    let s_last = *probes.last().unwrap();
    let x0 = match sections.pop() {
        Some(v) => v,
        None => x.section(s_last)?,
    };
    let spec = &x.spec;
    let scale = x0.norm();
    let mut allowed = CAUCHY_TOLERANCE * scale + 10.0 * spec.tolerance;
    if x.has_kernel_terms() {
        // Closed-form kernels against the lattice semigroup below the lattice
        // time: they differ by the generator's discretization error over that time.
        allowed += spec.lattice_time() * spec.generator_tolerance() * scale;
    }
    let mut residual = 0.0f64;
    for &s in probes {
        let lhs = x.section(s)?;
        residual = residual.max(lhs.sub(&spec.apply(s, &x0)?)?.norm());
    }
    if residual > allowed {
        return Ok(Verdict::Inconclusive {
            trace,
            reason: format!("certification residual {residual:.3e} exceeds {allowed:.3e}"),
        });
    }
    Ok(Verdict::Closable { x0, residual, trace })
}
