//! Time stepping: Hamiltonian splitting (HS), its pseudo-Poisson variant
//! (CEF) and the energy-conserving discrete gradient splitting (DisGradE).

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::assembly::{assemble_boundary, assemble_mass, MassMatrix};
use crate::derham::DeRham;
use crate::error::{check_len, Error, Result};
use crate::linsolve::{pcg, schur_solve_maxwell, schur_solve_particle, FftPreconditioner, PrecondMode, SolveReport};
use crate::mapping::Mapping;
use crate::particles::{
    b_hat, background_density, deposit_current, eval_vector, normalize, resolve_path, total_charge, BoundaryMode,
    FrozenParticles, ParticleGroup, Path,
};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Hs,
    Cef,
    DisGradE,
}

impl Scheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hs" => Some(Scheme::Hs),
            "cef" => Some(Scheme::Cef),
            "disgrade" => Some(Scheme::DisGradE),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Hs => "hs",
            Scheme::Cef => "cef",
            Scheme::DisGradE => "disgrade",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Composition {
    Lie,
    #[default]
    Strang,
}

impl Composition {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lie" => Some(Composition::Lie),
            "strang" => Some(Composition::Strang),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Composition::Lie => "lie",
            Composition::Strang => "strang",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub composition: Composition,
    pub boundary: BoundaryMode,
    /// Bound on the `∞`-norm of the position/velocity increment.
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Relative tolerance of the `M₁` solves.
    pub mass_tol: f64,
    /// Relative tolerance of the Schur-complement solves.
    pub schur_tol: f64,
    pub max_solver_iterations: usize,
}

impl StepConfig {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        Self {
            dt,
            scheme,
            composition: Composition::Strang,
            boundary: BoundaryMode::Reflect,
            picard_tol: 1e-12,
            picard_max: 50,
            mass_tol: 1e-14,
            schur_tol: 1e-13,
            max_solver_iterations: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive, got {v}")))
            }
        };
        pos("time step", self.dt)?;
        pos("particle iteration tolerance", self.picard_tol)?;
        pos("mass solver tolerance", self.mass_tol)?;
        pos("Schur solver tolerance", self.schur_tol)?;
        if self.picard_max == 0 || self.max_solver_iterations == 0 {
            return Err(Error::Parameter("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

/// Assembled operators shared by all steps.
#[derive(Debug, Clone)]
pub struct Operators {
    pub seq: DeRham,
    pub map: Mapping,
    pub m1: MassMatrix,
    pub m2: MassMatrix,
    pub precond: FftPreconditioner,
    pub mb0: CsrMatrix,
    pub mb1: CsrMatrix,
}

impl Operators {
    /// Assembles with `p + 1` Gauss points per direction and cell.
    pub fn new(seq: DeRham, map: Mapping, mode: PrecondMode) -> Result<Self> {
        map.validate()?;
        let q = seq.degree() + 1;
        let m1 = assemble_mass(&seq, &map, 1, q)?;
        let m2 = assemble_mass(&seq, &map, 2, q)?;
        let precond = FftPreconditioner::new(&m1, &seq, mode, None)?;
        let (mb0, mb1) = assemble_boundary(&seq, &map, q)?;
        Ok(Self {
            seq,
            map,
            m1,
            m2,
            precond,
            mb0,
            mb1,
        })
    }

    /// `M₁ x = rhs` to the configured tolerance.
    pub fn solve_m1(&self, rhs: &[f64], cfg: &StepConfig) -> Result<(Vec<f64>, SolveReport)> {
        let (x, rep) = pcg(&self.m1, rhs, &self.precond, None, cfg.mass_tol, cfg.max_solver_iterations)?;
        converged("mass matrix solve", rep)?;
        Ok((x, rep))
    }
}

fn converged(what: &'static str, rep: SolveReport) -> Result<()> {
    if rep.converged {
        Ok(())
    } else {
        Err(Error::NoConvergence {
            what,
            iterations: rep.iterations,
            residual: rep.residual,
        })
    }
}

/// Solver effort of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub mass_iterations: usize,
    pub schur_iterations: usize,
    pub picard_iterations: usize,
    pub crossings: usize,
}

impl StepStats {
    pub fn merge(&mut self, o: StepStats) {
        self.mass_iterations = self.mass_iterations.max(o.mass_iterations);
        self.schur_iterations = self.schur_iterations.max(o.schur_iterations);
        self.picard_iterations = self.picard_iterations.max(o.picard_iterations);
        self.crossings += o.crossings;
    }
}

/// The unknowns `(Ξ, V, ẽ, b̃)` with their operators.
#[derive(Debug, Clone)]
pub struct SimState {
    pub ops: Operators,
    pub species: Vec<ParticleGroup>,
    pub e: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
    /// Neutralizing background charge, fixed at construction.
    pub background: Vec<f64>,
}

impl SimState {
    pub fn new(ops: Operators, species: Vec<ParticleGroup>, e: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_len(ops.seq.dim(1), e.len())?;
        check_len(ops.seq.dim(2), b.len())?;
        let volume = ops.map.volume();
        let unit = background_density(&ops.seq, &ops.map);
        let net: f64 = species.iter().map(|g| g.q * g.w.iter().sum::<f64>()).sum();
        let background = unit.iter().map(|v| -net / volume * v).collect();
        Ok(Self {
            ops,
            species,
            e,
            b,
            t: 0.0,
            background,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.species.iter().map(|g| g.len()).sum()
    }

    /// `ρ̃` including the background.
    pub fn charge(&self) -> Vec<f64> {
        let mut rho = total_charge(&self.ops.seq, &self.species, &vec![0.0; self.background.len()], 1.0);
        for (r, b) in rho.iter_mut().zip(&self.background) {
            *r += b;
        }
        rho
    }

    /// `H = ½VᵀW_mV + ½ẽᵀM₁ẽ + ½b̃ᵀM₂b̃`.
    pub fn energy(&self) -> f64 {
        self.species.iter().map(|g| g.kinetic_energy()).sum::<f64>() + self.ops.m1.energy(&self.e) + self.ops.m2.energy(&self.b)
    }
}

/// `(I - h/2 A) v' = (I + h/2 A) v` for antisymmetric `A`.
#[inline]
pub fn cayley(a: &Matrix3<f64>, h: f64, v: [f64; 3]) -> [f64; 3] {
    let id = Matrix3::identity();
    let rhs = (id + a * (0.5 * h)) * Vector3::from(v);
    let out = (id - a * (0.5 * h)).lu().solve(&rhs).expect("I - A is regular for antisymmetric A");
    [out[0], out[1], out[2]]
}

/// `(q/m) N B̂ Nᵀ` at `xi`.
#[inline]
fn rotation(ops: &Operators, b: &[f64], qm: f64, xi: [f64; 3]) -> (Matrix3<f64>, Matrix3<f64>) {
    let xi = normalize(xi);
    let n = ops.map.inv_transpose(xi);
    let pb = ops.seq.point_basis(xi);
    let bt = eval_vector(&ops.seq, 2, &pb, b);
    (qm * n * b_hat(&bt) * n.transpose(), n)
}

#[inline]
fn add_scaled(x: [f64; 3], h: f64, w: Vector3<f64>) -> [f64; 3] {
    [x[0] + h * w[0], x[1] + h * w[1], x[2] + h * w[2]]
}

#[inline]
fn max_diff(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).fold(0.0f64, |m, i| m.max((a[i] - b[i]).abs()))
}

#[inline]
fn midpoint(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
}

fn picard_failure(index: usize, iterations: usize, residual: f64) -> Error {
    let _ = index;
    Error::NoConvergence {
        what: "particle fixed-point iteration",
        iterations,
        residual,
    }
}

/// `H_E`: `V += h (q/m) N Λ¹ ẽ`, `b̃ -= h C ẽ`.
pub fn h_e(state: &mut SimState, h: f64) -> Result<()> {
    let ops = &state.ops;
    let e = &state.e;
    for g in &mut state.species {
        let qm = g.charge_over_mass();
        g.v.par_iter_mut().zip(&g.xi).for_each(|(v, &xi)| {
            let xi = normalize(xi);
            let pb = ops.seq.point_basis(xi);
            let ef = ops.map.inv_transpose(xi) * eval_vector(&ops.seq, 1, &pb, e);
            *v = add_scaled(*v, h * qm, ef);
        });
    }
    let ce = ops.seq.curl(&state.e)?;
    for (b, c) in state.b.iter_mut().zip(&ce) {
        *b -= h * c;
    }
    Ok(())
}

/// Field part of `H_B`: `M₁ ẽ' = M₁ ẽ + h (Cᵀ M₂ + M_b¹) b̃`.
fn h_b_fields(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    let ops = &state.ops;
    let mut rhs = ops.seq.curl_t(&ops.m2.apply(&state.b))?;
    if !ops.seq.pec() {
        for (r, v) in rhs.iter_mut().zip(ops.mb1.matvec(&state.b)) {
            *r += v;
        }
    }
    rhs.iter_mut().for_each(|r| *r *= h);
    let (delta, rep) = ops.solve_m1(&rhs, cfg)?;
    for (e, d) in state.e.iter_mut().zip(&delta) {
        *e += d;
    }
    Ok(StepStats {
        mass_iterations: rep.iterations,
        ..Default::default()
    })
}

/// `H_B` of the Hamiltonian splitting: fields only.
pub fn h_b(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    h_b_fields(state, h, cfg)
}

/// Per-particle Cayley rotation `V' = cay(h (q/m) N B̂ Nᵀ) V` at fixed
/// positions.
pub fn rotate_velocities(state: &mut SimState, h: f64) {
    let ops = &state.ops;
    let b = &state.b;
    for g in &mut state.species {
        let qm = g.charge_over_mass();
        g.v.par_iter_mut().zip(&g.xi).for_each(|(v, &xi)| {
            let (a, _) = rotation(ops, b, qm, xi);
            *v = cayley(&a, h, *v);
        });
    }
}

/// `H_B` of CEF: velocity rotation with `(Ξⁿ, b̃ⁿ)` plus the field update.
pub fn h_b_cef(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    rotate_velocities(state, h);
    h_b_fields(state, h, cfg)
}

/// Discrete Maxwell step `H_E(h/2) H_B(h) H_E(h/2)`.
pub fn maxwell_substeps(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    h_e(state, 0.5 * h)?;
    let s = h_b(state, h, cfg)?;
    h_e(state, 0.5 * h)?;
    Ok(s)
}

struct Pushed {
    xi: [f64; 3],
    v: [f64; 3],
    path: Path,
    iterations: usize,
    crossed: bool,
}

/// Applies boundary conditions to the pushed trajectories of every species,
/// deposits the current along the split paths and updates `ẽ` with
/// `M₁ δ = -Σ ω q ∫ Λ¹ᵀ dΞ`.
fn finish_push<F>(state: &mut SimState, cfg: &StepConfig, push: F) -> Result<StepStats>
where
    F: Fn(&Operators, &[f64], f64, usize, [f64; 3], [f64; 3]) -> Result<([f64; 3], [f64; 3], usize)> + Sync,
{
    let mut stats = StepStats::default();
    let mut j = vec![0.0; state.e.len()];
    let ops = &state.ops;
    let b = &state.b;
    for g in &mut state.species {
        let qm = g.charge_over_mass();
        let pushed: Vec<Pushed> = (0..g.len())
            .into_par_iter()
            .map(|p| {
                let x0 = g.xi[p];
                let (x1, mut v1, iterations) = push(ops, b, qm, p, x0, g.v[p])?;
                let (xi, path, c) = resolve_path(&ops.map, cfg.boundary, p, x0, x1, &mut v1)?;
                Ok(Pushed {
                    xi,
                    v: v1,
                    path,
                    iterations,
                    crossed: c.is_some(),
                })
            })
            .collect::<Result<_>>()?;
        let paths: Vec<Path> = pushed.iter().map(|r| r.path).collect();
        for (p, r) in pushed.iter().enumerate() {
            g.xi[p] = r.xi;
            g.v[p] = r.v;
            stats.picard_iterations = stats.picard_iterations.max(r.iterations);
            stats.crossings += r.crossed as usize;
        }
        for (a, d) in j.iter_mut().zip(deposit_current(&ops.seq, &paths, &g.charges())?) {
            *a += d;
        }
    }
    if j.iter().any(|v| *v != 0.0) {
        j.iter_mut().for_each(|v| *v = -*v);
        let (delta, rep) = state.ops.solve_m1(&j, cfg)?;
        for (e, d) in state.e.iter_mut().zip(&delta) {
            *e += d;
        }
        stats.mass_iterations = rep.iterations;
    }
    Ok(stats)
}

/// `H_p` of HS: midpoint fixed point for `(Ξ, V)`. For a given midpoint the
/// velocity equation is linear and solved exactly by a Cayley step, so the
/// iteration runs on the position only.
pub fn h_p_hs(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    let (tol, max) = (cfg.picard_tol, cfg.picard_max);
    finish_push(state, cfg, |ops, b, qm, p, x0, v0| {
        let n0 = ops.map.inv_transpose(normalize(x0));
        let mut x1 = add_scaled(x0, h, n0.transpose() * Vector3::from(v0));
        let mut v1 = v0;
        let mut diff = f64::INFINITY;
        for it in 1..=max {
            let (a, n) = rotation(ops, b, qm, midpoint(x0, x1));
            let vn = cayley(&a, h, v0);
            let vbar = Vector3::from(midpoint(v0, vn));
            let xn = add_scaled(x0, h, n.transpose() * vbar);
            diff = max_diff(xn, x1).max(max_diff(vn, v1));
            x1 = xn;
            v1 = vn;
            if diff <= tol {
                return Ok((x1, v1, it));
            }
        }
        Err(picard_failure(p, max, diff))
    })
}

/// `H_p` of CEF: `Ξⁿ⁺¹ = Ξⁿ + h Nᵀ(Ξ̄) Vⁿ` by fixed point.
pub fn h_p_cef(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    let (tol, max) = (cfg.picard_tol, cfg.picard_max);
    finish_push(state, cfg, |ops, _b, _qm, p, x0, v0| {
        let v = Vector3::from(v0);
        let mut x1 = add_scaled(x0, h, ops.map.inv_transpose(normalize(x0)).transpose() * v);
        let mut diff = f64::INFINITY;
        for it in 1..=max {
            let n = ops.map.inv_transpose(normalize(midpoint(x0, x1)));
            let xn = add_scaled(x0, h, n.transpose() * v);
            diff = max_diff(xn, x1);
            x1 = xn;
            if diff <= tol {
                return Ok((x1, v0, it));
            }
        }
        Err(picard_failure(p, max, diff))
    })
}

/// System 1 of DisGradE: `Ξⁿ⁺¹ = Ξⁿ + h (Nᵀ(Ξⁿ⁺¹) + Nᵀ(Ξⁿ))/2 Vⁿ`, no
/// current.
pub fn system_1(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    let (tol, max) = (cfg.picard_tol, cfg.picard_max);
    let mut stats = StepStats::default();
    let map = &state.ops.map;
    for g in &mut state.species {
        let out: Vec<([f64; 3], [f64; 3], usize, bool)> = (0..g.len())
            .into_par_iter()
            .map(|p| {
                let (x0, v0) = (g.xi[p], Vector3::from(g.v[p]));
                let w0 = map.inv_transpose(normalize(x0)).transpose() * v0;
                let mut x1 = add_scaled(x0, h, w0);
                let mut diff = f64::INFINITY;
                let mut its = max + 1;
                for it in 1..=max {
                    let w1 = map.inv_transpose(normalize(x1)).transpose() * v0;
                    let xn = add_scaled(x0, 0.5 * h, w0 + w1);
                    diff = max_diff(xn, x1);
                    x1 = xn;
                    if diff <= tol {
                        its = it;
                        break;
                    }
                }
                if its > max {
                    return Err(picard_failure(p, max, diff));
                }
                let mut v = g.v[p];
                let (xi, _, c) = resolve_path(map, cfg.boundary, p, x0, x1, &mut v)?;
                Ok((xi, v, its, c.is_some()))
            })
            .collect::<Result<_>>()?;
        for (p, (xi, v, its, crossed)) in out.into_iter().enumerate() {
            g.xi[p] = xi;
            g.v[p] = v;
            stats.picard_iterations = stats.picard_iterations.max(its);
            stats.crossings += crossed as usize;
        }
    }
    Ok(stats)
}

/// System 3 of DisGradE: trapezoidal Maxwell step via the Schur complement.
pub fn system_3(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    let ops = &state.ops;
    let rep = schur_solve_maxwell(
        &ops.seq,
        &ops.m1,
        &ops.m2,
        &ops.precond,
        h,
        &mut state.e,
        &mut state.b,
        cfg.schur_tol,
        cfg.max_solver_iterations,
    )?;
    converged("Maxwell Schur solve", rep)?;
    Ok(StepStats {
        schur_iterations: rep.iterations,
        ..Default::default()
    })
}

/// System 4 of DisGradE: trapezoidal field-particle exchange.
pub fn system_4(state: &mut SimState, h: f64, cfg: &StepConfig) -> Result<StepStats> {
    let ops = &state.ops;
    let frozen = FrozenParticles::new(&ops.seq, &ops.map, &state.species);
    let mut v: Vec<[f64; 3]> = state.species.iter().flat_map(|g| g.v.iter().copied()).collect();
    let rep = schur_solve_particle(
        &ops.m1,
        &frozen,
        &ops.precond,
        h,
        &mut state.e,
        &mut v,
        cfg.schur_tol,
        cfg.max_solver_iterations,
    )?;
    converged("particle Schur solve", rep)?;
    let mut it = v.into_iter();
    for g in &mut state.species {
        for slot in g.v.iter_mut() {
            *slot = it.next().expect("velocity count");
        }
    }
    Ok(StepStats {
        schur_iterations: rep.iterations,
        ..Default::default()
    })
}

pub fn hs_step(state: &mut SimState, cfg: &StepConfig) -> Result<StepStats> {
    let h = cfg.dt;
    let mut s = StepStats::default();
    match cfg.composition {
        Composition::Lie => {
            h_e(state, h)?;
            s.merge(h_b(state, h, cfg)?);
            s.merge(h_p_hs(state, h, cfg)?);
        }
        Composition::Strang => {
            h_e(state, 0.5 * h)?;
            s.merge(h_b(state, 0.5 * h, cfg)?);
            s.merge(h_p_hs(state, h, cfg)?);
            s.merge(h_b(state, 0.5 * h, cfg)?);
            h_e(state, 0.5 * h)?;
        }
    }
    state.t += h;
    Ok(s)
}

pub fn cef_step(state: &mut SimState, cfg: &StepConfig) -> Result<StepStats> {
    let h = cfg.dt;
    let mut s = StepStats::default();
    match cfg.composition {
        Composition::Lie => {
            h_e(state, h)?;
            s.merge(h_b_cef(state, h, cfg)?);
            s.merge(h_p_cef(state, h, cfg)?);
        }
        Composition::Strang => {
            h_e(state, 0.5 * h)?;
            s.merge(h_b_cef(state, 0.5 * h, cfg)?);
            s.merge(h_p_cef(state, h, cfg)?);
            s.merge(h_b_cef(state, 0.5 * h, cfg)?);
            h_e(state, 0.5 * h)?;
        }
    }
    state.t += h;
    Ok(s)
}

pub fn disgrade_step(state: &mut SimState, cfg: &StepConfig) -> Result<StepStats> {
    if !state.ops.seq.pec() {
        return Err(Error::Parameter(
            "the discrete gradient scheme needs perfect-conductor fields".into(),
        ));
    }
    let h = cfg.dt;
    let mut s = StepStats::default();
    match cfg.composition {
        Composition::Lie => {
            s.merge(system_1(state, h, cfg)?);
            rotate_velocities(state, h);
            s.merge(system_3(state, h, cfg)?);
            s.merge(system_4(state, h, cfg)?);
        }
        Composition::Strang => {
            let half = 0.5 * h;
            s.merge(system_1(state, half, cfg)?);
            rotate_velocities(state, half);
            s.merge(system_3(state, half, cfg)?);
            s.merge(system_4(state, h, cfg)?);
            s.merge(system_3(state, half, cfg)?);
            rotate_velocities(state, half);
            s.merge(system_1(state, half, cfg)?);
        }
    }
    state.t += h;
    Ok(s)
}

/// One step of `cfg.scheme`.
pub fn step(state: &mut SimState, cfg: &StepConfig) -> Result<StepStats> {
    match cfg.scheme {
        Scheme::Hs => hs_step(state, cfg),
        Scheme::Cef => cef_step(state, cfg),
        Scheme::DisGradE => disgrade_step(state, cfg),
    }
}
