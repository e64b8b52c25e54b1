//! The Levy driver on the entrance space, the Ornstein-Uhlenbeck process
//! `X_t = T_t x0 + Y_t + int_0^t T_{t-s} A Y_s ds` built by a left-endpoint
//! Riemann sum, its projection back to `H`, and statistical checks against
//! the transition law.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::entrance::{closability_probe, default_probes, embed_j, Element, EntrancePath, Representation, Term, Verdict};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::sclaw::{characteristic, sc_exponent, IDLaw, LawElement, SCSemigroupSpec};
use crate::semigroup::{SemigroupKind, SemigroupSpec};

/// Symbolic states with more terms than this are partly flattened.
pub const DEFAULT_TERM_CAP: usize = 10_000;
/// Fewest samples accepted by the empirical estimators.
pub const MIN_SAMPLES: usize = 100;

/// Per-path seeding: the master seed picks the key, the path index the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedRecord {
    pub master: u64,
    pub path_index: u64,
}

impl SeedRecord {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.path_index);
        rng
    }
}

/// The law's Gaussian directions followed by its jump elements, as entrance
/// paths (laws on `H` are pushed through `J`).
pub fn law_elements(law: &IDLaw) -> Result<Vec<EntrancePath>> {
    law.gaussian()
        .iter()
        .chain(law.jumps())
        .map(|(_, e)| match e {
            LawElement::Path(p) => Ok(p.clone()),
            LawElement::Vector(v) => embed_j(law.spec().clone(), v.clone()),
        })
        .collect()
}

fn validate_grid(times: &[f64]) -> Result<()> {
    if times.len() < 2 || times[0] != 0.0 {
        return Err(Error::domain("time grids start at 0 and have at least two points"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::domain("time grids must be strictly increasing"));
    }
    Ok(())
}

/// Increment sampler for one law: Gaussian scales and jump rates.
#[derive(Debug, Clone)]
struct IncrementLaw {
    sigmas: Vec<f64>,
    rates: Vec<f64>,
}

impl IncrementLaw {
    fn new(law: &IDLaw) -> Self {
        IncrementLaw {
            sigmas: law.gaussian().iter().map(|(s, _)| *s).collect(),
            rates: law.jumps().iter().map(|(r, _)| *r).collect(),
        }
    }

    fn len(&self) -> usize {
        self.sigmas.len() + self.rates.len()
    }

    /// Adds one increment of length `dt` to the coefficients; returns jump counts.
    fn draw(&self, rng: &mut ChaCha8Rng, dt: f64, coeffs: &mut [f64], counts: &mut [u64]) -> Result<()> {
        let root = dt.sqrt();
        for (c, s) in coeffs.iter_mut().zip(&self.sigmas) {
            if *s != 0.0 {
                let xi: f64 = StandardNormal.sample(rng);
                *c += root * s * xi;
            }
        }
        let offset = self.sigmas.len();
        for (k, r) in self.rates.iter().enumerate() {
            let mean = r * dt;
            if mean == 0.0 {
                counts[k] = 0;
                continue;
            }
            let n = Poisson::new(mean).map_err(|e| Error::domain(format!("Poisson mean {mean}: {e}")))?.sample(rng);
            counts[k] = n as u64;
            coeffs[offset + k] += n - mean;
        }
        Ok(())
    }
}

/// A driver path `Y_t = sum_e c_e(t) e` on a time grid.
#[derive(Debug, Clone)]
pub struct DriverPath {
    pub times: Vec<f64>,
    /// `coefficients[j][e]`: the coefficient of element `e` at `times[j]`.
    pub coefficients: Vec<Vec<f64>>,
    /// `jump_counts[j][k]`: jumps of catalog entry `k` in `(times[j], times[j+1]]`.
    pub jump_counts: Vec<Vec<u64>>,
    pub seed: Option<SeedRecord>,
    elements: Arc<Vec<EntrancePath>>,
}

impl DriverPath {
    /// A driver with prescribed coefficients, e.g. a single deterministic jump.
    pub fn deterministic(law: &IDLaw, times: Vec<f64>, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        validate_grid(&times)?;
        let elements = law_elements(law)?;
        if coefficients.len() != times.len() || coefficients.iter().any(|c| c.len() != elements.len()) {
            return Err(Error::shape("need one coefficient per element at every time"));
        }
        if coefficients[0].iter().any(|c| *c != 0.0) {
            return Err(Error::domain("drivers start at 0"));
        }
        let steps = times.len() - 1;
        Ok(DriverPath {
            times,
            coefficients,
            jump_counts: vec![vec![0; law.jumps().len()]; steps],
            seed: None,
            elements: Arc::new(elements),
        })
    }

    pub fn elements(&self) -> &[EntrancePath] {
        &self.elements
    }

    pub fn spec(&self) -> Result<&Arc<SemigroupSpec>> {
        self.elements.first().map(|e| e.spec()).ok_or_else(|| Error::domain("driver has no elements"))
    }

    /// `Y_{t_j}` as an entrance path.
    pub fn state(&self, j: usize) -> Result<EntrancePath> {
        let spec = self.spec()?.clone();
        let mut out = EntrancePath::zero(spec);
        for (c, e) in self.coefficients[j].iter().zip(self.elements.iter()) {
            if *c != 0.0 {
                out = out.combine(*c, e)?;
            }
        }
        Ok(out)
    }
}

/// Samples the driver on `times`, reproducibly from `seed`.
pub fn simulate_driver(law: &IDLaw, times: &[f64], seed: SeedRecord) -> Result<DriverPath> {
    validate_grid(times)?;
    let inc = IncrementLaw::new(law);
    let mut rng = seed.rng();
    let mut c = vec![0.0; inc.len()];
    let mut coefficients = vec![c.clone()];
    let mut jump_counts = Vec::with_capacity(times.len() - 1);
    for w in times.windows(2) {
        let mut counts = vec![0; inc.rates.len()];
        inc.draw(&mut rng, w[1] - w[0], &mut c, &mut counts)?;
        coefficients.push(c.clone());
        jump_counts.push(counts);
    }
    Ok(DriverPath {
        times: times.to_vec(),
        coefficients,
        jump_counts,
        seed: Some(seed),
        elements: Arc::new(law_elements(law)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    /// Grid vectors; used when the initial state and every element are embedded.
    Vector,
    /// Linear combinations of shifted and differentiated elements.
    Symbolic,
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub value: Option<GridFunction>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct OUPathRecord {
    pub times: Vec<f64>,
    pub states: Vec<EntrancePath>,
    pub n_sub: usize,
    pub engine: Engine,
    /// Relative section error of each flattened state, `None` when symbolic.
    pub flattening: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

impl OUPathRecord {
    pub fn project(&self, j: usize) -> Result<Projection> {
        project_to_h(&self.states[j])
    }

    /// `lim_{s -> 0} <X_{t_j}(s), a>`.
    pub fn pair(&self, j: usize, a: &GridFunction) -> Result<f64> {
        self.states[j].weak_pair(a)
    }
}

/// `J^{-1}` where it exists: the limit of the state's sections at 0.
pub fn project_to_h(state: &EntrancePath) -> Result<Projection> {
    let verdict = closability_probe(state, &default_probes())?;
    let value = match &verdict {
        Verdict::Closable { x0, .. } => Some(x0.clone()),
        _ => None,
    };
    Ok(Projection { value, verdict })
}

/// The section at 0 of a path made only of embedded terms.
fn embedded_vector(p: &EntrancePath) -> Result<Option<GridFunction>> {
    if p.representation() != Representation::Embedded {
        return Ok(None);
    }
    Ok(Some(p.section(0.0)?))
}

/// Left-endpoint Riemann construction with `n_sub` substeps per driver step.
pub fn construct_ou(x0: &EntrancePath, driver: &DriverPath, sc: &SCSemigroupSpec, n_sub: usize) -> Result<OUPathRecord> {
    construct_ou_with_cap(x0, driver, sc, n_sub, DEFAULT_TERM_CAP)
}

pub fn construct_ou_with_cap(
    x0: &EntrancePath,
    driver: &DriverPath,
    sc: &SCSemigroupSpec,
    n_sub: usize,
    term_cap: usize,
) -> Result<OUPathRecord> {
    if n_sub == 0 {
        return Err(Error::domain("need at least one substep"));
    }
    let spec = &sc.spec;
    if **x0.spec() != **spec || driver.elements.iter().any(|e| **e.spec() != **spec) {
        return Err(Error::domain("initial state, driver and semigroup disagree"));
    }
    let vectors: Option<Vec<GridFunction>> = driver
        .elements
        .iter()
        .map(embedded_vector)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();
    if let (Some(v0), Some(elems)) = (embedded_vector(x0)?, vectors) {
        return vector_record(spec, &v0, &elems, driver, n_sub);
    }
    symbolic_record(x0, driver, n_sub, term_cap)
}

fn vector_record(
    spec: &Arc<SemigroupSpec>,
    x0: &GridFunction,
    elements: &[GridFunction],
    driver: &DriverPath,
    n_sub: usize,
) -> Result<OUPathRecord> {
    let mut scheme = VectorScheme::new(spec.clone(), elements, n_sub);
    let mut state = scheme.start(&x0.values);
    let mut states = vec![embed_j(spec.clone(), x0.clone())?];
    for (j, w) in driver.times.windows(2).enumerate() {
        scheme.advance(&mut state, w[1] - w[0], &driver.coefficients[j]);
        let x = scheme.value(&state, &driver.coefficients[j + 1]);
        states.push(embed_j(spec.clone(), spec.function(x)?)?);
    }
    let n = states.len();
    Ok(OUPathRecord {
        times: driver.times.clone(),
        states,
        n_sub,
        engine: Engine::Vector,
        flattening: vec![None; n],
        warnings: Vec::new(),
    })
}

fn symbolic_record(x0: &EntrancePath, driver: &DriverPath, n_sub: usize, term_cap: usize) -> Result<OUPathRecord> {
    let mut warnings = Vec::new();
    let generated: Vec<EntrancePath> = driver
        .elements
        .iter()
        .map(|e| {
            let (g, w) = e.generator_path();
            if let Some(w) = w {
                warnings.push(w);
            }
            g
        })
        .collect();
    let times = &driver.times;
    let mut states = Vec::with_capacity(times.len());
    let mut flattening = Vec::with_capacity(times.len());
    for (m, &t) in times.iter().enumerate() {
        let mut terms: Vec<Term> = x0.shift_apply(t)?.terms().to_vec();
        for (c, e) in driver.coefficients[m].iter().zip(driver.elements.iter()) {
            if *c != 0.0 {
                terms.extend(e.terms().iter().map(|tm| Term { weight: c * tm.weight, ..tm.clone() }));
            }
        }
        for i in 0..m {
            let delta = (times[i + 1] - times[i]) / n_sub as f64;
            for k in 0..n_sub {
                let lag = t - (times[i] + k as f64 * delta);
                for (c, g) in driver.coefficients[i].iter().zip(&generated) {
                    if *c == 0.0 {
                        continue;
                    }
                    terms.extend(g.terms().iter().map(|tm| Term {
                        weight: delta * c * tm.weight,
                        shift: tm.shift + lag,
                        ..tm.clone()
                    }));
                }
            }
        }
        let mut state = EntrancePath::from_terms(x0.spec().clone(), terms)?;
        state.compact();
        if state.terms().len() > term_cap {
            let (flat, err) = flatten(&state)?;
            states.push(flat);
            flattening.push(Some(err));
        } else {
            states.push(state);
            flattening.push(None);
        }
    }
    Ok(OUPathRecord { times: times.clone(), states, n_sub, engine: Engine::Symbolic, flattening, warnings })
}

/// Folds every term whose section at 0 exists into one embedded vector and
/// reports the largest relative section change at a few probe times.
fn flatten(state: &EntrancePath) -> Result<(EntrancePath, f64)> {
    let spec = state.spec().clone();
    let resolved = spec.lattice_time();
    let mut folded = vec![0.0; spec.grid.len()];
    let mut kept = Vec::new();
    for t in state.terms() {
        let foldable = !t.element.is_kernel() || t.shift >= resolved;
        match foldable.then(|| state.term_section(t, t.shift)).transpose() {
            Ok(Some(v)) => {
                for (f, x) in folded.iter_mut().zip(v) {
                    *f += t.weight * x;
                }
            }
            Ok(None) | Err(Error::UnsupportedEvaluation { .. }) => kept.push(t.clone()),
            Err(e) => return Err(e),
        }
    }
    kept.push(Term::new(1.0, Element::Embedded(Arc::new(spec.function(folded)?))));
    let flat = EntrancePath::from_terms(spec, kept)?;
    let mut worst = 0.0f64;
    for s in [resolved, 0.1, 1.0] {
        let a = state.eval(s)?;
        let b = flat.eval(s)?;
        worst = worst.max(a.sub(&b)?.norm() / a.norm().max(f64::MIN_POSITIVE));
    }
    Ok((flat, worst))
}

/// Cached one-step operators of the vector engine.
struct VectorScheme {
    spec: Arc<SemigroupSpec>,
    elements: Vec<Vec<f64>>,
    generated: Vec<Vec<f64>>,
    n_sub: usize,
    /// For matrices: `(T_dt, dt/n sum_{j=1}^{n} T_{j dt/n} A)` per step length.
    matrices: HashMap<u64, (DMatrix<f64>, DMatrix<f64>)>,
}

/// Flow `T_t x0` and convolution part of the scheme.
struct VectorState {
    flow: Vec<f64>,
    conv: Vec<f64>,
    scratch: Vec<f64>,
}

impl VectorScheme {
    fn new(spec: Arc<SemigroupSpec>, elements: &[GridFunction], n_sub: usize) -> Self {
        let elements: Vec<Vec<f64>> = elements.iter().map(|e| e.values.clone()).collect();
        let generated = elements.iter().map(|e| spec.generator_raw(e)).collect();
        VectorScheme { spec, elements, generated, n_sub, matrices: HashMap::new() }
    }

    fn start(&self, x0: &[f64]) -> VectorState {
        VectorState { flow: x0.to_vec(), conv: vec![0.0; x0.len()], scratch: vec![0.0; x0.len()] }
    }

    fn combination(&self, of: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.spec.grid.len()];
        for (c, e) in coeffs.iter().zip(of) {
            if *c != 0.0 {
                for (a, b) in y.iter_mut().zip(e) {
                    *a += c * b;
                }
            }
        }
        y
    }

    fn matrix_ops(&mut self, dt: f64) {
        let SemigroupKind::Matrix(a) = &self.spec.kind else { unreachable!() };
        if self.matrices.contains_key(&dt.to_bits()) {
            return;
        }
        let n_sub = self.n_sub;
        self.matrices.entry(dt.to_bits()).or_insert_with(|| {
            let delta = dt / n_sub as f64;
            let e = (a * delta).exp();
            let mut p = e.clone();
            let mut sum = DMatrix::zeros(a.nrows(), a.ncols());
            for _ in 0..n_sub {
                sum += &p;
                p = &p * &e;
            }
            let full = (a * dt).exp();
            (full, sum * a * delta)
        });
    }

    /// One driver step of length `dt` with the driver frozen at `coeffs`.
    fn advance(&mut self, st: &mut VectorState, dt: f64, coeffs: &[f64]) {
        let mut y = self.combination(&self.elements, coeffs);
        if self.spec.is_matrix() {
            self.matrix_ops(dt);
            let (t, b) = &self.matrices[&dt.to_bits()];
            let n = st.flow.len();
            let VectorState { flow, conv, scratch } = st;
            for i in 0..n {
                let (mut f, mut c) = (0.0, 0.0);
                for k in 0..n {
                    f += t[(i, k)] * flow[k];
                    c += t[(i, k)] * conv[k] + b[(i, k)] * y[k];
                }
                scratch[i] = f;
                y[i] = c;
            }
            std::mem::swap(flow, scratch);
            std::mem::swap(conv, &mut y);
            return;
        }
        let delta = dt / self.n_sub as f64;
        let mut w = self.combination(&self.generated, coeffs);
        let mut sum = vec![0.0; w.len()];
        for _ in 0..self.n_sub {
            w = self.spec.apply_raw(delta, &w);
            for (s, x) in sum.iter_mut().zip(&w) {
                *s += delta * x;
            }
        }
        st.flow = self.spec.apply_raw(dt, &st.flow);
        st.conv = self.spec.apply_raw(dt, &st.conv);
        for (c, s) in st.conv.iter_mut().zip(sum) {
            *c += s;
        }
    }

    /// `X = T_t x0 + Y_t + conv`.
    fn value(&self, st: &VectorState, coeffs: &[f64]) -> Vec<f64> {
        let y = self.combination(&self.elements, coeffs);
        st.flow.iter().zip(&st.conv).zip(y).map(|((f, c), y)| f + c + y).collect()
    }
}

/// What an ensemble run records.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    /// Driver grid, starting at 0.
    pub times: Vec<f64>,
    pub n_sub: usize,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Indices into `times` at which pairings are kept.
    pub record: Vec<usize>,
    pub functionals: Vec<GridFunction>,
}

/// Pairings `<X_t, a>` of every path at the recorded times.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub functionals: Vec<GridFunction>,
    pub n_paths: usize,
    pub engine: Engine,
    /// `[path][record][functional]`, flattened.
    pairings: Vec<f64>,
}

impl Ensemble {
    /// `<X_{times[rec]}, functionals[func]>` across paths.
    pub fn samples(&self, rec: usize, func: usize) -> Vec<f64> {
        let stride = self.times.len() * self.functionals.len();
        (0..self.n_paths).map(|p| self.pairings[p * stride + rec * self.functionals.len() + func]).collect()
    }
}

/// Runs `n_paths` independent paths; path `i` uses stream `i` of the master
/// seed, so the output does not depend on scheduling.
pub fn simulate_ensemble(sc: &SCSemigroupSpec, x0: &EntrancePath, es: &EnsembleSpec) -> Result<Ensemble> {
    validate_grid(&es.times)?;
    if es.n_paths == 0 || es.n_sub == 0 {
        return Err(Error::domain("need at least one path and one substep"));
    }
    if es.record.iter().any(|r| *r >= es.times.len()) {
        return Err(Error::domain("recorded index outside the time grid"));
    }
    for a in &es.functionals {
        sc.spec.check(a)?;
    }
    let law = sc.law();
    let elements = law_elements(law)?;
    let vectors: Option<Vec<GridFunction>> =
        elements.iter().map(embedded_vector).collect::<Result<Vec<_>>>()?.into_iter().collect();
    let per_path = es.record.len() * es.functionals.len();
    let (engine, chunks): (Engine, Vec<Vec<f64>>) = match (embedded_vector(x0)?, vectors) {
        (Some(v0), Some(elems)) => {
            let chunks = (0..es.n_paths as u64)
                .into_par_iter()
                .map_init(
                    || VectorScheme::new(sc.spec.clone(), &elems, es.n_sub),
                    |scheme, i| vector_path(scheme, law, &v0, es, SeedRecord { master: es.master_seed, path_index: i }),
                )
                .collect::<Result<_>>()?;
            (Engine::Vector, chunks)
        }
        _ => {
            let chunks = (0..es.n_paths as u64)
                .into_par_iter()
                .map(|i| {
                    let driver = simulate_driver(law, &es.times, SeedRecord { master: es.master_seed, path_index: i })?;
                    let rec = construct_ou(x0, &driver, sc, es.n_sub)?;
                    let mut out = Vec::with_capacity(per_path);
                    for &r in &es.record {
                        for a in &es.functionals {
                            out.push(rec.pair(r, a)?);
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            (Engine::Symbolic, chunks)
        }
    };
    Ok(Ensemble {
        times: es.record.iter().map(|r| es.times[*r]).collect(),
        functionals: es.functionals.clone(),
        n_paths: es.n_paths,
        engine,
        pairings: chunks.concat(),
    })
}

fn vector_path(scheme: &mut VectorScheme, law: &IDLaw, x0: &GridFunction, es: &EnsembleSpec, seed: SeedRecord) -> Result<Vec<f64>> {
    let inc = IncrementLaw::new(law);
    let mut rng = seed.rng();
    let mut coeffs = vec![0.0; inc.len()];
    let mut counts = vec![0; inc.rates.len()];
    let mut state = scheme.start(&x0.values);
    let w = scheme.spec.node_weights();
    let mut values: Vec<Option<Vec<f64>>> = vec![None; es.times.len()];
    let wanted = |j: usize| es.record.contains(&j);
    if wanted(0) {
        values[0] = Some(x0.values.clone());
    }
    for j in 0..es.times.len() - 1 {
        let dt = es.times[j + 1] - es.times[j];
        let before = coeffs.clone();
        inc.draw(&mut rng, dt, &mut coeffs, &mut counts)?;
        scheme.advance(&mut state, dt, &before);
        if wanted(j + 1) {
            values[j + 1] = Some(scheme.value(&state, &coeffs));
        }
    }
    let mut out = Vec::with_capacity(es.record.len() * es.functionals.len());
    for &r in &es.record {
        let x = values[r].as_ref().unwrap();
        for a in &es.functionals {
            out.push(x.iter().zip(&a.values).zip(&w).map(|((x, a), w)| x * a * w).sum());
        }
    }
    Ok(out)
}

/// A sample mean of `e^{i p}` with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharEstimate {
    pub estimate: Complex64,
    pub se: f64,
    pub n: usize,
}

/// Mean of `e^{i p_k}` over the samples.
pub fn charfn_of_samples(samples: &[f64]) -> Result<CharEstimate> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::Statistics(format!("{n} samples; at least {MIN_SAMPLES} are needed")));
    }
    let z: Vec<Complex64> = samples.iter().map(|p| Complex64::new(0.0, *p).exp()).collect();
    let total: Complex64 = z.iter().sum();
    let nf = n as f64;
    let estimate = total / nf;
    // Leave-one-out means and their spread.
    let var: f64 = z.iter().map(|zi| ((total - zi) / (nf - 1.0) - estimate).norm_sqr()).sum::<f64>() * (nf - 1.0) / nf;
    Ok(CharEstimate { estimate, se: var.sqrt(), n })
}

/// Empirical characteristic functional at a recorded time and functional.
pub fn empirical_charfn(ensemble: &Ensemble, rec: usize, func: usize) -> Result<CharEstimate> {
    charfn_of_samples(&ensemble.samples(rec, func))
}

/// `exp{i <T_t x0, a> - Psi_t(a)}`, with the pairing taken as the weak limit
/// of the sections when `x0` is not embedded.
pub fn analytic_charfn(sc: &SCSemigroupSpec, x0: &EntrancePath, t: f64, a: &GridFunction) -> Result<Complex64> {
    let flow = x0.shift_apply(t)?.weak_pair(a)?;
    Ok((Complex64::new(0.0, flow) - sc_exponent(sc, t, a)?).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovCheck {
    pub estimate: Complex64,
    pub expected: Complex64,
    pub se: f64,
    /// `|estimate - expected| / se`.
    pub residual: f64,
}

/// Mean of `exp{i <X_{r+t}, a> - i <X_r, T_t^* a>}` against `e^{-Psi_t(a)}`.
/// `moved` must index `T_t^* a` among the ensemble's functionals.
pub fn markov_increment_check(
    ensemble: &Ensemble,
    sc: &SCSemigroupSpec,
    r_rec: usize,
    rt_rec: usize,
    a: usize,
    moved: usize,
) -> Result<MarkovCheck> {
    let t = ensemble.times[rt_rec] - ensemble.times[r_rec];
    if !(t >= 0.0) {
        return Err(Error::domain("the later record must not precede the earlier one"));
    }
    let late = ensemble.samples(rt_rec, a);
    let early = ensemble.samples(r_rec, moved);
    let diff: Vec<f64> = late.iter().zip(&early).map(|(x, y)| x - y).collect();
    let est = charfn_of_samples(&diff)?;
    let expected = characteristic(sc, t, &ensemble.functionals[a])?;
    let gap = (est.estimate - expected).norm();
    let residual = if est.se > 0.0 {
        gap / est.se
    } else if gap <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MarkovCheck { estimate: est.estimate, expected, se: est.se, residual })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Statistics("empty sample".into()));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_tail(lambda) })
}

/// `Q(lambda) = 2 sum_{k >= 1} (-1)^{k-1} e^{-2 k^2 lambda^2}`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Smallest KS p-value between `<increment, a>` samples of the first window
/// and each later window of the same length.
pub fn increment_stationarity(
    law: &IDLaw,
    a: &GridFunction,
    window: f64,
    windows: usize,
    samples: usize,
    master_seed: u64,
) -> Result<f64> {
    if windows < 2 || !(window > 0.0) {
        return Err(Error::domain("need at least two windows of positive length"));
    }
    let elements = law_elements(law)?;
    let pairs: Vec<f64> = elements.iter().map(|e| e.weak_pair(a)).collect::<Result<_>>()?;
    let times: Vec<f64> = (0..=windows).map(|k| k as f64 * window).collect();
    let per: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let d = simulate_driver(law, &times, SeedRecord { master: master_seed, path_index: i })?;
            Ok(d.coefficients
                .windows(2)
                .map(|w| w[1].iter().zip(&w[0]).zip(&pairs).map(|((c1, c0), p)| (c1 - c0) * p).sum())
                .collect())
        })
        .collect::<Result<_>>()?;
    let column = |k: usize| -> Vec<f64> { per.iter().map(|v| v[k]).collect() };
    let first = column(0);
    let mut worst = 1.0f64;
    for k in 1..windows {
        worst = worst.min(ks_two_sample(&first, &column(k))?.p_value);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_matches_tabulated_values() {
        // Critical values of the Kolmogorov distribution.
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_tail(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn jackknife_error_of_a_constant_is_zero() {
        let est = charfn_of_samples(&vec![0.3; 200]).unwrap();
        assert!(est.se < 1e-12);
        assert!((est.estimate - Complex64::new(0.0, 0.3).exp()).norm() < 1e-14);
        assert!(matches!(charfn_of_samples(&[0.0; 10]), Err(Error::Statistics(_))));
    }
}
