//! Run configuration: a flat `key = value` text format with dotted keys,
//! plus built-in Weibel presets.
//!
//! ```text
//! # comment
//! preset = weibel-cartesian-kz-B2
//! time.integrator = disgrade
//! particles.count = 8000
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::integrators::{Composition, Scheme, StepConfig};
use crate::linsolve::PrecondMode;
use crate::mapping::{MapFamily, Mapping};
use crate::particles::{BoundaryMode, FieldInit, Scenario, WeibelSetup};

/// Every accepted key, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "start from a built-in preset"),
    ("grid.cells", "cells per direction, three integers"),
    ("grid.degree", "spline degree p of the 0-forms"),
    ("grid.pec", "perfect-conductor fields, true or false"),
    ("map.family", "cartesian, distorted, cylindrical or elliptical"),
    ("map.lengths", "box lengths (cartesian, distorted)"),
    ("map.lp", "distortion wave number (distorted)"),
    ("map.eps", "distortion amplitude (distorted)"),
    ("map.r0", "inner radius parameter (cylindrical, elliptical)"),
    ("map.lr", "radial extent (cylindrical, elliptical)"),
    ("map.lz", "axial length (cylindrical, elliptical)"),
    ("weibel.scenario", "kx, ky or kz"),
    ("weibel.field", "seeded magnetic component B1, B2 or B3"),
    ("weibel.beta", "seed amplitude"),
    ("weibel.k", "wave number"),
    ("weibel.v_thermal", "thermal speed along k"),
    ("particles.count", "number of particles"),
    ("particles.seed", "sampler seed"),
    ("particles.boundary", "reflect or periodic"),
    ("time.integrator", "hs, cef or disgrade"),
    ("time.composition", "strang or lie"),
    ("time.dt", "time step"),
    ("time.end", "final time"),
    ("solver.preconditioner", "lumped, jacobi or none"),
    ("solver.mass_tol", "relative tolerance of the mass-matrix solves"),
    ("solver.schur_tol", "relative tolerance of the Schur solves"),
    ("solver.poisson_tol", "relative tolerance of the initial Poisson solve"),
    ("solver.picard_tol", "increment bound of the particle fixed point"),
    ("solver.picard_max", "iteration cap of the particle fixed point"),
    ("solver.max_iterations", "iteration cap of the Krylov solves"),
    ("output.dir", "output directory"),
    ("output.fields_every", "field dump interval in steps, 0 for none"),
    ("output.particles_every", "particle snapshot interval in steps, 0 for none"),
];

const MAP_KEYS: &[(&str, &[MapFamily])] = &[
    ("map.lengths", &[MapFamily::Cartesian, MapFamily::Distorted]),
    ("map.lp", &[MapFamily::Distorted]),
    ("map.eps", &[MapFamily::Distorted]),
    ("map.r0", &[MapFamily::Cylindrical, MapFamily::Elliptical]),
    ("map.lr", &[MapFamily::Cylindrical, MapFamily::Elliptical]),
    ("map.lz", &[MapFamily::Cylindrical, MapFamily::Elliptical]),
];

/// A fully validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub cells: [usize; 3],
    pub degree: usize,
    pub pec: bool,
    pub map: Mapping,
    pub weibel: WeibelSetup,
    pub step: StepConfig,
    pub t_end: f64,
    pub precond: PrecondMode,
    pub poisson_tol: f64,
    pub out_dir: PathBuf,
    pub fields_every: usize,
    pub particles_every: usize,
}

impl RunConfig {
    /// `⌊T/Δt⌋`, robust to the last step landing a rounding error short.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.step.dt * (1.0 + 1e-12)).floor() as usize
    }
}

/// Raw `key -> (line, value)` pairs.
pub type Pairs = BTreeMap<String, (usize, String)>;

pub fn parse_pairs(text: &str) -> Result<Pairs> {
    let mut out = Pairs::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::ConfigParse {
            line,
            message: format!("expected `key = value`, got `{body}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::ConfigParse {
                line,
                message: "empty key or value".into(),
            });
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::ConfigParse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        if out.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(Error::ConfigParse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

const FAMILIES: [MapFamily; 4] = [
    MapFamily::Cartesian,
    MapFamily::Distorted,
    MapFamily::Cylindrical,
    MapFamily::Elliptical,
];

const SEEDS: [(Scenario, FieldInit); 6] = [
    (Scenario::Kx, FieldInit::B2),
    (Scenario::Kx, FieldInit::B3),
    (Scenario::Ky, FieldInit::B1),
    (Scenario::Ky, FieldInit::B3),
    (Scenario::Kz, FieldInit::B1),
    (Scenario::Kz, FieldInit::B2),
];

/// Desk-scale end time of the presets.
pub const PRESET_T_END: f64 = 50.0;

pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for f in FAMILIES {
        for (s, b) in SEEDS {
            out.push(format!("weibel-{}-{}-{}", f.name(), s.name(), b.name()));
        }
    }
    out
}

/// Key/value pairs of a built-in preset.
pub fn preset(name: &str) -> Option<Vec<(&'static str, String)>> {
    let mut parts = name.strip_prefix("weibel-")?.split('-');
    let family = MapFamily::parse(parts.next()?)?;
    let scenario = Scenario::parse(parts.next()?)?;
    let field = FieldInit::parse(parts.next()?)?;
    if parts.next().is_some() || !SEEDS.contains(&(scenario, field)) {
        return None;
    }
    let radial = matches!(family, MapFamily::Cylindrical | MapFamily::Elliptical);
    let cells = if radial { "16 16 8" } else { "8 8 8" };
    let dt = if radial { "0.01" } else { "0.1" };
    Some(vec![
        ("grid.cells", cells.into()),
        ("grid.degree", "3".into()),
        ("grid.pec", "true".into()),
        ("map.family", family.name().into()),
        ("weibel.scenario", scenario.name().into()),
        ("weibel.field", field.name().into()),
        ("particles.count", "64000".into()),
        ("particles.seed", "1".into()),
        ("particles.boundary", "reflect".into()),
        ("time.integrator", "hs".into()),
        ("time.dt", dt.into()),
        ("time.end", format!("{PRESET_T_END}")),
    ])
}

fn value_err(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigValue {
        key: key.to_string(),
        message: message.into(),
    }
}

struct Reader<'a> {
    pairs: &'a Pairs,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(|(_, v)| v.as_str())
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| value_err(key, "missing required key"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| value_err(key, format!("cannot parse `{v}`")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            Some(v) => self.parse(key, v),
            None => Ok(default),
        }
    }

    fn positive(&self, key: &str, default: Option<f64>) -> Result<f64> {
        let v = match (self.raw(key), default) {
            (Some(v), _) => self.parse::<f64>(key, v)?,
            (None, Some(d)) => d,
            (None, None) => return Err(value_err(key, "missing required key")),
        };
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(value_err(key, format!("must be positive, got {v}")))
        }
    }

    fn triple<T: std::str::FromStr + Copy>(&self, key: &str, default: [T; 3]) -> Result<[T; 3]> {
        let Some(v) = self.raw(key) else {
            return Ok(default);
        };
        let items: Vec<T> = v
            .split_whitespace()
            .map(|s| self.parse(key, s))
            .collect::<Result<_>>()?;
        match items.as_slice() {
            [a] => Ok([*a; 3]),
            [a, b, c] => Ok([*a, *b, *c]),
            _ => Err(value_err(key, "expected one or three values")),
        }
    }

    fn choice<T>(&self, key: &str, default: Option<T>, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
        match self.raw(key) {
            Some(v) => parse(v).ok_or_else(|| value_err(key, format!("unknown value `{v}`"))),
            None => default.ok_or_else(|| value_err(key, "missing required key")),
        }
    }
}

/// Validates pairs (already merged with any preset) into a [`RunConfig`].
pub fn from_pairs(pairs: &Pairs) -> Result<RunConfig> {
    let r = Reader { pairs };
    let cells = r.triple("grid.cells", [8usize; 3])?;
    if cells.iter().any(|&n| n == 0) {
        return Err(value_err("grid.cells", "cell counts must be positive"));
    }
    let degree: usize = r.get("grid.degree", 3)?;
    let pec: bool = r.get("grid.pec", true)?;

    let family = r.choice("map.family", None, MapFamily::parse)?;
    for (key, fams) in MAP_KEYS {
        if r.raw(key).is_some() && !fams.contains(&family) {
            return Err(value_err(key, format!("not used by the {} map", family.name())));
        }
    }
    let default = Mapping::default_for(family)?;
    let map = match default {
        Mapping::Cartesian { lengths } => {
            let l = r.triple("map.lengths", lengths)?;
            Mapping::cartesian(l).map_err(|e| value_err("map.lengths", e.to_string()))?
        }
        Mapping::Distorted { lengths, lp, eps } => {
            let l = r.triple("map.lengths", lengths)?;
            let lp = r.get("map.lp", lp)?;
            let eps = r.get("map.eps", eps)?;
            Mapping::distorted(l, lp, eps).map_err(|e| value_err("map.eps", e.to_string()))?
        }
        Mapping::Cylindrical { r0, lr, lz } | Mapping::Elliptical { r0, lr, lz } => {
            let r0v: f64 = r.get("map.r0", r0)?;
            if !(r0v > 0.0) {
                return Err(value_err("map.r0", "must be positive to exclude the pole"));
            }
            let lr = r.get("map.lr", lr)?;
            let lz = r.get("map.lz", lz)?;
            let built = if family == MapFamily::Cylindrical {
                Mapping::cylindrical(r0v, lr, lz)
            } else {
                Mapping::elliptical(r0v, lr, lz)
            };
            built.map_err(|e| value_err("map.lr", e.to_string()))?
        }
    };
    map.validate().map_err(|e| value_err("map.family", e.to_string()))?;

    let scenario = r.choice("weibel.scenario", Some(Scenario::Kz), Scenario::parse)?;
    let field = r.choice("weibel.field", Some(FieldInit::B2), FieldInit::parse)?;
    let n_particles: usize = r.get("particles.count", 64_000)?;
    let mut weibel = WeibelSetup::new(scenario, field, n_particles, r.get("particles.seed", 1)?);
    weibel.beta = r.get("weibel.beta", weibel.beta)?;
    weibel.k = r.positive("weibel.k", Some(weibel.k))?;
    weibel.v_thermal = r.positive("weibel.v_thermal", Some(weibel.v_thermal))?;
    if let Err(e) = weibel.vector_potential() {
        return Err(value_err("weibel.field", e.to_string()));
    }

    let scheme = r.choice("time.integrator", None, Scheme::parse)?;
    let dt = r.positive("time.dt", None)?;
    let mut step = StepConfig::new(dt, scheme);
    step.composition = r.choice("time.composition", Some(Composition::Strang), Composition::parse)?;
    step.boundary = r.choice("particles.boundary", Some(BoundaryMode::Reflect), BoundaryMode::parse)?;
    step.mass_tol = r.positive("solver.mass_tol", Some(step.mass_tol))?;
    step.schur_tol = r.positive("solver.schur_tol", Some(step.schur_tol))?;
    step.picard_tol = r.positive("solver.picard_tol", Some(step.picard_tol))?;
    step.picard_max = r.get("solver.picard_max", step.picard_max)?;
    step.max_solver_iterations = r.get("solver.max_iterations", step.max_solver_iterations)?;
    step.validate().map_err(|e| value_err("solver", e.to_string()))?;
    if scheme == Scheme::DisGradE && !pec {
        return Err(value_err("time.integrator", "disgrade requires grid.pec = true"));
    }

    let t_end: f64 = r.parse("time.end", r.required("time.end")?)?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(value_err("time.end", format!("must be non-negative, got {t_end}")));
    }

    let config = RunConfig {
        preset: r.raw("preset").map(str::to_string),
        cells,
        degree,
        pec,
        map,
        weibel,
        step,
        t_end,
        precond: r.choice("solver.preconditioner", Some(PrecondMode::Lumped), PrecondMode::parse)?,
        poisson_tol: r.positive("solver.poisson_tol", Some(1e-14))?,
        out_dir: PathBuf::from(r.get("output.dir", "out".to_string())?),
        fields_every: r.get("output.fields_every", 0)?,
        particles_every: r.get("output.particles_every", 0)?,
    };
    if n_particles == 0 {
        return Err(value_err("particles.count", "at least one particle is required"));
    }
    crate::derham::DeRham::new(degree, cells, pec).map_err(|e| value_err("grid.degree", e.to_string()))?;
    Ok(config)
}

/// Merges `preset` (if any, from the argument or the `preset` key) under the
/// file pairs and validates.
pub fn resolve(mut pairs: Pairs, preset_override: Option<&str>) -> Result<RunConfig> {
    let name = match preset_override {
        Some(p) => Some(p.to_string()),
        None => pairs.get("preset").map(|(_, v)| v.clone()),
    };
    if let Some(name) = name {
        let base = preset(&name).ok_or_else(|| value_err("preset", format!("unknown preset `{name}`")))?;
        for (k, v) in base {
            pairs.entry(k.to_string()).or_insert((0, v));
        }
        pairs.insert("preset".into(), (0, name));
    }
    from_pairs(&pairs)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    resolve(parse_pairs(text)?, None)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Text form of `cfg` that parses back to the same configuration.
pub fn render(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    let c = cfg.cells;
    put("grid.cells", format!("{} {} {}", c[0], c[1], c[2]));
    put("grid.degree", cfg.degree.to_string());
    put("grid.pec", cfg.pec.to_string());
    put("map.family", cfg.map.family().name().into());
    match cfg.map {
        Mapping::Cartesian { lengths: l } => put("map.lengths", format!("{:?} {:?} {:?}", l[0], l[1], l[2])),
        Mapping::Distorted { lengths: l, lp, eps } => {
            put("map.lengths", format!("{:?} {:?} {:?}", l[0], l[1], l[2]));
            put("map.lp", format!("{lp:?}"));
            put("map.eps", format!("{eps:?}"));
        }
        Mapping::Cylindrical { r0, lr, lz } | Mapping::Elliptical { r0, lr, lz } => {
            put("map.r0", format!("{r0:?}"));
            put("map.lr", format!("{lr:?}"));
            put("map.lz", format!("{lz:?}"));
        }
    }
    let w = &cfg.weibel;
    put("weibel.scenario", w.scenario.name().into());
    put("weibel.field", w.field.name().into());
    put("weibel.beta", format!("{:?}", w.beta));
    put("weibel.k", format!("{:?}", w.k));
    put("weibel.v_thermal", format!("{:?}", w.v_thermal));
    put("particles.count", w.n_particles.to_string());
    put("particles.seed", w.seed.to_string());
    let s = &cfg.step;
    put("particles.boundary", s.boundary.name().into());
    put("time.integrator", s.scheme.name().into());
    put("time.composition", s.composition.name().into());
    put("time.dt", format!("{:?}", s.dt));
    put("time.end", format!("{:?}", cfg.t_end));
    put("solver.preconditioner", cfg.precond.name().into());
    put("solver.mass_tol", format!("{:?}", s.mass_tol));
    put("solver.schur_tol", format!("{:?}", s.schur_tol));
    put("solver.poisson_tol", format!("{:?}", cfg.poisson_tol));
    put("solver.picard_tol", format!("{:?}", s.picard_tol));
    put("solver.picard_max", s.picard_max.to_string());
    put("solver.max_iterations", s.max_solver_iterations.to_string());
    put("output.dir", cfg.out_dir.display().to_string());
    put("output.fields_every", cfg.fields_every.to_string());
    put("output.particles_every", cfg.particles_every.to_string());
    out
}
