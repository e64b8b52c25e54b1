//! Flat `section.key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown and repeated keys
//! are rejected. Element lists separate entries with `|`, and each entry is a
//! scale followed by an element, e.g. `law.jumps = 0.5 vec 0.7 | 0.2 atoms 1:1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::entrance::{EntranceNormParams, EntrancePath, SignedMeasureAtoms};
use crate::error::{Error, Result};
use crate::grid::{Axis, GridFunction};
use crate::sclaw::{IDLaw, SCSemigroupSpec};
use crate::semigroup::{Growth, SemigroupSpec};

const KEYS: &[&str] = &[
    "semigroup.kind",
    "semigroup.matrix",
    "semigroup.lower",
    "semigroup.upper",
    "semigroup.points",
    "semigroup.growth.c0",
    "semigroup.growth.b0",
    "entrance.b",
    "entrance.alpha",
    "entrance.s_min",
    "entrance.s_max",
    "entrance.rho",
    "law.mode",
    "law.gaussian",
    "law.jumps",
    "simulation.t_end",
    "simulation.steps",
    "simulation.n_sub",
    "simulation.paths",
    "simulation.seed",
    "simulation.x0",
    "simulation.record",
    "simulation.functionals",
    "verify.driver_paths",
    "verify.projection_paths",
    "verify.random_cases",
    "outputs.dir",
    "outputs.export_paths",
];

#[derive(Debug, Clone, PartialEq)]
pub enum KindConfig {
    /// Row-major generator.
    Matrix(Vec<Vec<f64>>),
    HeatLine { lower: f64, upper: f64, points: usize },
    HeatPlane { lower: f64, upper: f64, points: usize },
    AbsorbingHalfline { upper: f64, points: usize },
}

/// A state-space element or entrance path written in the config.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementSpec {
    Zero,
    /// Grid values in node order.
    Vector(Vec<f64>),
    /// `height * exp(-|y - center|^2 / (2 var))` sampled on the grid.
    Bump { center: Vec<f64>, var: f64, height: f64 },
    /// Heat (or absorbing, with boundary weight) path of point masses.
    Atoms { boundary: Option<f64>, atoms: Vec<(Vec<f64>, f64)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawMode {
    Differentiable,
    Entrance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: KindConfig,
    pub growth: Option<Growth>,
    pub b: Option<f64>,
    pub alpha: Option<f64>,
    pub s_min: f64,
    pub s_max: Option<f64>,
    pub rho: f64,
    pub mode: LawMode,
    pub gaussian: Vec<(f64, ElementSpec)>,
    pub jumps: Vec<(f64, ElementSpec)>,
    pub t_end: f64,
    pub steps: usize,
    pub n_sub: usize,
    pub paths: usize,
    pub seed: u64,
    pub x0: ElementSpec,
    /// Output times; each must be a node of the driver grid.
    pub record: Vec<f64>,
    pub functionals: Vec<ElementSpec>,
    pub driver_paths: usize,
    pub projection_paths: usize,
    pub random_cases: usize,
    pub out_dir: PathBuf,
    pub export_paths: usize,
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.trim().parse().map_err(|_| Error::config(key, format!("`{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(Error::config(key, "must be finite"));
    }
    Ok(x)
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| Error::config(key, format!("`{v}` is not a non-negative integer")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split([',', ' ']).filter(|s| !s.is_empty()).map(|s| parse_f64(key, s)).collect()
}

fn parse_element(key: &str, v: &str) -> Result<ElementSpec> {
    let mut words = v.split_whitespace();
    let head = words.next().ok_or_else(|| Error::config(key, "empty element"))?;
    let rest: Vec<&str> = words.collect();
    let nums = |ws: &[&str]| -> Result<Vec<f64>> { ws.iter().map(|w| parse_f64(key, w)).collect() };
    let atoms = |ws: &[&str]| -> Result<Vec<(Vec<f64>, f64)>> {
        ws.iter()
            .map(|w| {
                let (loc, weight) = w.split_once(':').ok_or_else(|| Error::config(key, format!("atom `{w}` is not `location:weight`")))?;
                Ok((parse_list(key, loc)?, parse_f64(key, weight)?))
            })
            .collect()
    };
    match head {
        "zero" if rest.is_empty() => Ok(ElementSpec::Zero),
        "vec" if !rest.is_empty() => Ok(ElementSpec::Vector(nums(&rest)?)),
        "bump" if rest.len() >= 2 => {
            let center = parse_list(key, rest[0])?;
            match nums(&rest[1..])?[..] {
                [var] => Ok(ElementSpec::Bump { center, var, height: 1.0 }),
                [var, height] => Ok(ElementSpec::Bump { center, var, height }),
                _ => Err(Error::config(key, "bump takes `center var [height]`")),
            }
        }
        "atoms" if !rest.is_empty() => Ok(ElementSpec::Atoms { boundary: None, atoms: atoms(&rest)? }),
        "absorbing" if rest.len() >= 2 => {
            Ok(ElementSpec::Atoms { boundary: Some(parse_f64(key, rest[0])?), atoms: atoms(&rest[1..])? })
        }
        "atoms-file" if rest.len() == 1 => {
            let text = std::fs::read_to_string(rest[0]).map_err(|e| Error::config(key, format!("{}: {e}", rest[0])))?;
            Ok(ElementSpec::Atoms { boundary: None, atoms: parse_atom_list(key, &text)? })
        }
        _ => Err(Error::config(key, format!("cannot read element `{v}`"))),
    }
}

/// `location... weight` per line.
pub fn parse_atom_list(key: &str, text: &str) -> Result<Vec<(Vec<f64>, f64)>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap().trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            let n = parse_list(key, l)?;
            let (w, loc) = n.split_last().ok_or_else(|| Error::config(key, "empty atom line"))?;
            if loc.is_empty() {
                return Err(Error::config(key, format!("atom line `{l}` has no location")));
            }
            Ok((loc.to_vec(), *w))
        })
        .collect()
}

fn parse_weighted(key: &str, v: &str) -> Result<Vec<(f64, ElementSpec)>> {
    if v.trim().is_empty() || v.trim() == "none" {
        return Ok(Vec::new());
    }
    v.split('|')
        .map(|entry| {
            let entry = entry.trim();
            let (scale, element) = entry.split_once(' ').ok_or_else(|| Error::config(key, format!("entry `{entry}` needs a scale and an element")))?;
            Ok((parse_f64(key, scale)?, parse_element(key, element)?))
        })
        .collect()
}

fn fmt_list(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(sep)
}

impl std::fmt::Display for ElementSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let atoms = |a: &[(Vec<f64>, f64)]| a.iter().map(|(l, w)| format!("{}:{w:?}", fmt_list(l, ","))).collect::<Vec<_>>().join(" ");
        match self {
            ElementSpec::Zero => write!(f, "zero"),
            ElementSpec::Vector(v) => write!(f, "vec {}", fmt_list(v, " ")),
            ElementSpec::Bump { center, var, height } => write!(f, "bump {} {var:?} {height:?}", fmt_list(center, ",")),
            ElementSpec::Atoms { boundary: None, atoms: a } => write!(f, "atoms {}", atoms(a)),
            ElementSpec::Atoms { boundary: Some(b), atoms: a } => write!(f, "absorbing {b:?} {}", atoms(a)),
        }
    }
}

fn fmt_weighted(v: &[(f64, ElementSpec)]) -> String {
    if v.is_empty() {
        return "none".into();
    }
    v.iter().map(|(s, e)| format!("{s:?} {e}")).collect::<Vec<_>>().join(" | ")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw: BTreeMap<&str, &str> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::config(k, "unknown key"));
            }
            if raw.insert(k, v.trim()).is_some() {
                return Err(Error::config(k, "repeated key"));
            }
        }
        let get = |k: &str| raw.get(k).copied();
        let f = |k: &str, d: f64| get(k).map_or(Ok(d), |v| parse_f64(k, v));
        let u = |k: &str, d: usize| get(k).map_or(Ok(d), |v| parse_usize(k, v));
        let opt = |k: &str| get(k).map(|v| parse_f64(k, v)).transpose();

        let kind = match get("semigroup.kind") {
            Some("matrix") => {
                let m = get("semigroup.matrix").ok_or_else(|| Error::config("semigroup.matrix", "required for matrix semigroups"))?;
                let rows: Vec<Vec<f64>> = m.split(';').map(|r| parse_list("semigroup.matrix", r)).collect::<Result<_>>()?;
                KindConfig::Matrix(rows)
            }
            Some("heat_line") => KindConfig::HeatLine {
                lower: f("semigroup.lower", -10.0)?,
                upper: f("semigroup.upper", 10.0)?,
                points: u("semigroup.points", 401)?,
            },
            Some("heat_plane") => KindConfig::HeatPlane {
                lower: f("semigroup.lower", -5.0)?,
                upper: f("semigroup.upper", 5.0)?,
                points: u("semigroup.points", 41)?,
            },
            Some("absorbing_halfline") => {
                KindConfig::AbsorbingHalfline { upper: f("semigroup.upper", 12.0)?, points: u("semigroup.points", 240)? }
            }
            Some(other) => return Err(Error::config("semigroup.kind", format!("unknown kind `{other}`"))),
            None => return Err(Error::config("semigroup.kind", "required")),
        };
        let growth = match (opt("semigroup.growth.c0")?, opt("semigroup.growth.b0")?) {
            (None, None) => None,
            (Some(c0), Some(b0)) => Some(Growth { c0, b0 }),
            _ => return Err(Error::config("semigroup.growth", "give both c0 and b0")),
        };
        let mode = match get("law.mode").unwrap_or("differentiable") {
            "differentiable" => LawMode::Differentiable,
            "entrance" => LawMode::Entrance,
            other => return Err(Error::config("law.mode", format!("unknown mode `{other}`"))),
        };
        let functionals = match get("simulation.functionals") {
            Some(v) => v.split('|').map(|e| parse_element("simulation.functionals", e.trim())).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let t_end = f("simulation.t_end", 1.0)?;
        let cfg = ExperimentConfig {
            kind,
            growth,
            b: opt("entrance.b")?,
            alpha: opt("entrance.alpha")?,
            s_min: f("entrance.s_min", 1e-4)?,
            s_max: opt("entrance.s_max")?,
            rho: f("entrance.rho", 1.1)?,
            mode,
            gaussian: parse_weighted("law.gaussian", get("law.gaussian").unwrap_or(""))?,
            jumps: parse_weighted("law.jumps", get("law.jumps").unwrap_or(""))?,
            t_end,
            steps: u("simulation.steps", 100)?,
            n_sub: u("simulation.n_sub", 1)?,
            paths: u("simulation.paths", 1000)?,
            seed: get("simulation.seed").map_or(Ok(0), |v| v.parse().map_err(|_| Error::config("simulation.seed", "not an unsigned integer")))?,
            x0: get("simulation.x0").map_or(Ok(ElementSpec::Zero), |v| parse_element("simulation.x0", v))?,
            record: match get("simulation.record") {
                Some(v) => parse_list("simulation.record", v)?,
                None => vec![t_end],
            },
            functionals,
            driver_paths: u("verify.driver_paths", 2000)?,
            projection_paths: u("verify.projection_paths", 3)?,
            random_cases: u("verify.random_cases", 20)?,
            out_dir: PathBuf::from(get("outputs.dir").unwrap_or("out")),
            export_paths: u("outputs.export_paths", 10)?,
        };
        cfg.build()?;
        Ok(cfg)
    }

    /// Every key with its effective value, sorted by key.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        match &self.kind {
            KindConfig::Matrix(rows) => {
                m.insert("semigroup.kind", "matrix".into());
                m.insert("semigroup.matrix", rows.iter().map(|r| fmt_list(r, " ")).collect::<Vec<_>>().join("; "));
            }
            KindConfig::HeatLine { lower, upper, points } | KindConfig::HeatPlane { lower, upper, points } => {
                let name = if matches!(self.kind, KindConfig::HeatLine { .. }) { "heat_line" } else { "heat_plane" };
                m.insert("semigroup.kind", name.into());
                m.insert("semigroup.lower", format!("{lower:?}"));
                m.insert("semigroup.upper", format!("{upper:?}"));
                m.insert("semigroup.points", points.to_string());
            }
            KindConfig::AbsorbingHalfline { upper, points } => {
                m.insert("semigroup.kind", "absorbing_halfline".into());
                m.insert("semigroup.upper", format!("{upper:?}"));
                m.insert("semigroup.points", points.to_string());
            }
        }
        if let Some(g) = self.growth {
            m.insert("semigroup.growth.c0", format!("{:?}", g.c0));
            m.insert("semigroup.growth.b0", format!("{:?}", g.b0));
        }
        // Derived defaults are written out so the canonical form is explicit.
        let built = self.build().expect("validated at load");
        m.insert("entrance.b", format!("{:?}", built.params.b));
        m.insert("entrance.alpha", format!("{:?}", built.alpha));
        m.insert("entrance.s_min", format!("{:?}", built.params.s_min));
        m.insert("entrance.s_max", format!("{:?}", built.params.s_max));
        m.insert("entrance.rho", format!("{:?}", built.params.rho));
        m.insert("law.mode", if self.mode == LawMode::Differentiable { "differentiable" } else { "entrance" }.into());
        m.insert("law.gaussian", fmt_weighted(&self.gaussian));
        m.insert("law.jumps", fmt_weighted(&self.jumps));
        m.insert("simulation.t_end", format!("{:?}", self.t_end));
        m.insert("simulation.steps", self.steps.to_string());
        m.insert("simulation.n_sub", self.n_sub.to_string());
        m.insert("simulation.paths", self.paths.to_string());
        m.insert("simulation.seed", self.seed.to_string());
        m.insert("simulation.x0", self.x0.to_string());
        m.insert("simulation.record", fmt_list(&self.record, ", "));
        m.insert("simulation.functionals", self.functionals.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" | "));
        m.insert("verify.driver_paths", self.driver_paths.to_string());
        m.insert("verify.projection_paths", self.projection_paths.to_string());
        m.insert("verify.random_cases", self.random_cases.to_string());
        m.insert("outputs.dir", self.out_dir.display().to_string());
        m.insert("outputs.export_paths", self.export_paths.to_string());
        let mut out = String::new();
        for (k, v) in m {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// Constructs and validates every object the config describes.
    pub fn build(&self) -> Result<Experiment> {
        let spec = match &self.kind {
            KindConfig::Matrix(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::config("semigroup.matrix", "generator must be square"));
                }
                let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
                SemigroupSpec::matrix(a).map_err(|e| Error::config("semigroup.matrix", e.to_string()))?
            }
            KindConfig::HeatLine { lower, upper, points } => {
                SemigroupSpec::heat_line(Axis::new(*lower, *upper, *points).map_err(|e| Error::config("semigroup.points", e.to_string()))?)
            }
            KindConfig::HeatPlane { lower, upper, points } => {
                let axis = Axis::new(*lower, *upper, *points).map_err(|e| Error::config("semigroup.points", e.to_string()))?;
                SemigroupSpec::heat_plane(axis.clone(), axis)
            }
            KindConfig::AbsorbingHalfline { upper, points } => {
                SemigroupSpec::absorbing_halfline(*upper, *points).map_err(|e| Error::config("semigroup.points", e.to_string()))?
            }
        };
        let spec = match self.growth {
            Some(g) => spec.with_growth(g).map_err(|e| Error::config("semigroup.growth", e.to_string()))?,
            None => spec,
        };
        let spec = Arc::new(spec);
        let b0 = spec.growth.b0;

        let mut params = EntranceNormParams::for_spec(&spec);
        if let Some(b) = self.b {
            params = EntranceNormParams::with_b(&spec, b).map_err(|e| Error::config("entrance.b", e.to_string()))?;
        }
        params.s_min = self.s_min;
        params.rho = self.rho;
        if let Some(s_max) = self.s_max {
            params.s_max = s_max;
        }
        params.validate(&spec).map_err(|e| Error::config("entrance", e.to_string()))?;
        let alpha = self.alpha.unwrap_or(b0 + 1.0);
        if !(alpha > b0) {
            return Err(Error::config("entrance.alpha", format!("alpha = {alpha} must exceed b0 = {b0}")));
        }

        let vectors = |key: &str, list: &[(f64, ElementSpec)]| -> Result<Vec<(f64, GridFunction)>> {
            list.iter().map(|(s, e)| Ok((*s, vector(&spec, key, e)?))).collect()
        };
        let paths = |key: &str, list: &[(f64, ElementSpec)]| -> Result<Vec<(f64, EntrancePath)>> {
            list.iter().map(|(s, e)| Ok((*s, path(&spec, key, e)?))).collect()
        };
        let law_err = |e: Error| Error::config("law", e.to_string());
        let sc = match self.mode {
            LawMode::Differentiable => {
                let (g, j) = (vectors("law.gaussian", &self.gaussian)?, vectors("law.jumps", &self.jumps)?);
                SCSemigroupSpec::differentiable(IDLaw::on_h(spec.clone(), g, j).map_err(law_err)?).map_err(law_err)?
            }
            LawMode::Entrance => {
                let (g, j) = (paths("law.gaussian", &self.gaussian)?, paths("law.jumps", &self.jumps)?);
                let law = IDLaw::on_entrance(spec.clone(), params, g, j).map_err(law_err)?;
                SCSemigroupSpec::entrance_driven(law).map_err(law_err)?
            }
        };

        if !(self.t_end > 0.0) || self.steps == 0 {
            return Err(Error::config("simulation.t_end", "need t_end > 0 and steps >= 1"));
        }
        if self.n_sub == 0 {
            return Err(Error::config("simulation.n_sub", "must be at least 1"));
        }
        if self.paths == 0 {
            return Err(Error::config("simulation.paths", "must be at least 1"));
        }
        let times: Vec<f64> = (0..=self.steps).map(|k| self.t_end * k as f64 / self.steps as f64).collect();
        let record = self
            .record
            .iter()
            .map(|t| {
                let k = (t / self.t_end * self.steps as f64).round();
                if !(0.0..=self.steps as f64).contains(&k) || (k * self.t_end / self.steps as f64 - t).abs() > 1e-9 * self.t_end {
                    return Err(Error::config("simulation.record", format!("{t} is not a node of the driver grid")));
                }
                Ok(k as usize)
            })
            .collect::<Result<Vec<_>>>()?;
        if record.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("simulation.record", "times must increase"));
        }
        let x0 = path(&spec, "simulation.x0", &self.x0)?;
        let functionals =
            self.functionals.iter().map(|e| vector(&spec, "simulation.functionals", e)).collect::<Result<Vec<_>>>()?;
        Ok(Experiment { spec, params, alpha, sc, times, record, x0, functionals })
    }
}

/// The objects a config describes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: Arc<SemigroupSpec>,
    pub params: EntranceNormParams,
    pub alpha: f64,
    pub sc: SCSemigroupSpec,
    pub times: Vec<f64>,
    /// Indices into `times`.
    pub record: Vec<usize>,
    pub x0: EntrancePath,
    pub functionals: Vec<GridFunction>,
}

fn vector(spec: &Arc<SemigroupSpec>, key: &str, e: &ElementSpec) -> Result<GridFunction> {
    let err = |e: Error| Error::config(key, e.to_string());
    match e {
        ElementSpec::Zero => Ok(spec.zeros()),
        ElementSpec::Vector(v) => spec.function(v.clone()).map_err(err),
        ElementSpec::Bump { center, var, height } => {
            if center.len() != spec.dim() || spec.is_matrix() || !(*var > 0.0) {
                return Err(Error::config(key, "bumps need a grid semigroup, a center per axis and var > 0"));
            }
            spec.sample(|y| height * (-y.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * var)).exp())
                .map_err(err)
        }
        ElementSpec::Atoms { .. } => Err(Error::config(key, "point masses are entrance paths, not state vectors")),
    }
}

fn path(spec: &Arc<SemigroupSpec>, key: &str, e: &ElementSpec) -> Result<EntrancePath> {
    let err = |e: Error| Error::config(key, e.to_string());
    match e {
        ElementSpec::Atoms { boundary, atoms } => {
            let mu = SignedMeasureAtoms::new(
                atoms.iter().map(|(l, w)| crate::entrance::Atom { location: l.clone(), weight: *w }).collect(),
            )
            .map_err(err)?;
            match boundary {
                None => EntrancePath::heat_measure(spec.clone(), &mu).map_err(err),
                Some(a) => EntrancePath::absorbing_measure(spec.clone(), *a, &mu).map_err(err),
            }
        }
        other => crate::entrance::embed_j(spec.clone(), vector(spec, key, other)?).map_err(err),
    }
}
