//! Particles: storage, Weibel sampling, boundary handling and deposition.

use std::f64::consts::PI;
use std::io::{self, BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::MassMatrix;
use crate::derham::{eval_component, for_each_basis, DeRham, PointBasis};
use crate::error::{check_len, Error, Result};
use crate::linsolve::{cg, pcg, LinearOperator, ParticleCoupling, SolveReport};
use crate::mapping::{Mapping, WEIBEL_LENGTH};
use crate::quadrature::GaussLegendre;

/// Particles per deposition buffer. Fixed so that the reduction order, and
/// hence the result, does not depend on the number of workers.
const CHUNK: usize = 1024;

/// One species: logical positions, physical velocities and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleGroup {
    pub xi: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub w: Vec<f64>,
    pub q: f64,
    pub m: f64,
}

impl ParticleGroup {
    pub fn new(q: f64, m: f64) -> Self {
        Self {
            xi: Vec::new(),
            v: Vec::new(),
            w: Vec::new(),
            q,
            m,
        }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn push(&mut self, xi: [f64; 3], v: [f64; 3], w: f64) {
        self.xi.push(xi);
        self.v.push(v);
        self.w.push(w);
    }

    pub fn charge_over_mass(&self) -> f64 {
        self.q / self.m
    }

    /// `½ Vᵀ W_m V`.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.m
            * self
                .v
                .iter()
                .zip(&self.w)
                .map(|(v, w)| w * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
                .sum::<f64>()
    }

    /// `ω_p q` per particle.
    pub fn charges(&self) -> Vec<f64> {
        self.w.iter().map(|w| w * self.q).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryMode {
    Reflect,
    Periodic,
}

impl BoundaryMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reflect" => Some(BoundaryMode::Reflect),
            "periodic" => Some(BoundaryMode::Periodic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryMode::Reflect => "reflect",
            BoundaryMode::Periodic => "periodic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    /// `ξ1 = 0`.
    Inner,
    /// `ξ1 = 1`.
    Outer,
}

impl Face {
    fn value(self) -> f64 {
        match self {
            Face::Inner => 0.0,
            Face::Outer => 1.0,
        }
    }
}

/// Where a particle left the logical domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub particle: usize,
    pub face: Face,
    /// Intersection point, `ξ2`, `ξ3` unwrapped.
    pub point: [f64; 3],
    /// Fraction of the path travelled before the intersection.
    pub fraction: f64,
}

/// A logical trajectory as one or two straight segments. Coordinates along
/// `ξ2`, `ξ3` are unwrapped so that each segment is a straight line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub segments: [[[f64; 3]; 2]; 2],
    pub len: usize,
}

impl Path {
    pub fn straight(a: [f64; 3], b: [f64; 3]) -> Self {
        Path {
            segments: [[a, b], [b, b]],
            len: 1,
        }
    }

    pub fn segments(&self) -> &[[[f64; 3]; 2]] {
        &self.segments[..self.len]
    }
}

/// Maps into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// `ξ1` clamped, `ξ2`, `ξ3` wrapped.
#[inline]
pub fn normalize(xi: [f64; 3]) -> [f64; 3] {
    [xi[0].clamp(0.0, 1.0), wrap(xi[1]), wrap(xi[2])]
}

/// Specular reflection of `v` at a surface with normal `n`. The result is
/// rescaled to the incoming speed, which removes the rounding drift of the
/// Householder update.
#[inline]
pub fn reflect(n: &Vector3<f64>, v: [f64; 3]) -> [f64; 3] {
    let u = n / n.norm();
    let v = Vector3::from(v);
    let mut r = v - 2.0 * u.dot(&v) * u;
    let s = r.norm();
    if s > 0.0 {
        r *= v.norm() / s;
    }
    [r[0], r[1], r[2]]
}

/// `n₁ = N ê₁`, the physical normal of the `ξ1 = const` surfaces.
#[inline]
pub fn normal_1(map: &Mapping, xi: [f64; 3]) -> Vector3<f64> {
    map.inv_transpose(normalize(xi)).column(0).into()
}

/// Boundary handling for the trajectory `start → end` of particle `index`.
/// Returns the new position (`ξ1` inside, `ξ2`, `ξ3` wrapped), the split
/// path for deposition and the crossing, if any. Reflection updates `v`
/// with the normal at the intersection point.
pub fn resolve_path(
    map: &Mapping,
    mode: BoundaryMode,
    index: usize,
    start: [f64; 3],
    end: [f64; 3],
    v: &mut [f64; 3],
) -> Result<([f64; 3], Path, Option<Crossing>)> {
    let e1 = end[0];
    let face = if e1 < 0.0 {
        Face::Inner
    } else if e1 > 1.0 {
        Face::Outer
    } else {
        return Ok((normalize(end), Path::straight(start, end), None));
    };
    let excursion = if e1 < 0.0 { -e1 } else { e1 - 1.0 };
    if excursion >= 1.0 || !excursion.is_finite() {
        return Err(Error::StepTooLarge { index, excursion });
    }
    let f = face.value();
    let s = ((f - start[0]) / (e1 - start[0])).clamp(0.0, 1.0);
    let mut point = [f, 0.0, 0.0];
    for d in 1..3 {
        point[d] = start[d] + s * (end[d] - start[d]);
    }
    let (restart, stop) = match mode {
        BoundaryMode::Reflect => {
            *v = reflect(&normal_1(map, point), *v);
            (point, [2.0 * f - e1, end[1], end[2]])
        }
        BoundaryMode::Periodic => {
            let shift = 1.0 - 2.0 * f;
            ([f + shift, point[1], point[2]], [e1 + shift, end[1], end[2]])
        }
    };
    let path = Path {
        segments: [[start, point], [restart, stop]],
        len: 2,
    };
    let crossing = Crossing {
        particle: index,
        face,
        point,
        fraction: s,
    };
    Ok((normalize(stop), path, Some(crossing)))
}

/// Imposes the particle boundary on positions that left `[0,1]` in `ξ1`,
/// using the exit point `(face, ξ2, ξ3)`; wraps `ξ2`, `ξ3`.
pub fn apply_boundary(group: &mut ParticleGroup, map: &Mapping, mode: BoundaryMode) -> Result<Vec<Crossing>> {
    let mut out = Vec::new();
    for p in 0..group.len() {
        let end = group.xi[p];
        let start = [end[0].clamp(0.0, 1.0), end[1], end[2]];
        let (xi, _, c) = resolve_path(map, mode, p, start, end, &mut group.v[p])?;
        group.xi[p] = xi;
        out.extend(c);
    }
    Ok(out)
}

/// Sums per-chunk buffers of length `len` in chunk order.
pub(crate) fn chunked_sum<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut buf = vec![0.0; len];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(p, &mut buf);
            }
            buf
        })
        .collect();
    let mut out = vec![0.0; len];
    for buf in chunks {
        for (o, b) in out.iter_mut().zip(&buf) {
            *o += b;
        }
    }
    out
}

/// `ρ̃ = W_q Λ⁰(Ξ)ᵀ 1`.
pub fn deposit_charge(group: &ParticleGroup, seq: &DeRham) -> Vec<f64> {
    let space = &seq.space(0).comps[0];
    let wq = group.q;
    chunked_sum(group.len(), seq.dim(0), |p, buf| {
        let pb = seq.point_basis(group.xi[p]);
        let c = wq * group.w[p];
        for_each_basis(space, &pb, |i, v| buf[i] += c * v);
    })
}

/// Splits `a → b` at every cell face and returns the breakpoints in `[0, 1]`.
fn breakpoints(seq: &DeRham, a: [f64; 3], b: [f64; 3]) -> Vec<f64> {
    let mut s = vec![0.0, 1.0];
    let cells = seq.cells();
    for d in 0..3 {
        let n = cells[d] as f64;
        let (lo, hi) = (a[d].min(b[d]) * n, a[d].max(b[d]) * n);
        if hi - lo <= 0.0 {
            continue;
        }
        let mut m = lo.floor() + 1.0;
        while m < hi {
            s.push((m / n - a[d]) / (b[d] - a[d]));
            m += 1.0;
        }
    }
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

/// Number of Gauss points per piece: the integrand along a segment inside one
/// cell is a polynomial of degree `3p - 1`.
pub fn line_points(degree: usize) -> usize {
    (3 * degree).div_ceil(2)
}

/// `∫ Λ¹(ξ(s))ᵀ dξ` along one segment, scaled by `c`, added into `out`.
pub fn deposit_segment(seq: &DeRham, rule: &GaussLegendre, a: [f64; 3], b: [f64; 3], c: f64, out: &mut [f64]) {
    let delta = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    if delta == [0.0; 3] {
        return;
    }
    let sp = seq.space(1);
    let s = breakpoints(seq, a, b);
    for w in s.windows(2) {
        let h = w[1] - w[0];
        if h <= 0.0 {
            continue;
        }
        for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
            let t = w[0] + h * x;
            let xi = [a[0] + t * delta[0], a[1] + t * delta[1], a[2] + t * delta[2]];
            let pb = seq.point_basis(xi);
            for (k, comp) in sp.comps.iter().enumerate() {
                let f = c * h * wt * delta[k];
                if f == 0.0 {
                    continue;
                }
                let o = &mut out[sp.offsets[k]..];
                for_each_basis(comp, &pb, |i, v| o[i] += f * v);
            }
        }
    }
}

/// Time-integrated current `Σ_p ω_p q_p ∫ Λ¹(Ξ_p(τ))ᵀ dΞ_p` along the given
/// paths. Equal to `Δt ∫Λ¹ᵀdτ W_q Nᵀ V̄` when the paths satisfy the
/// position update.
pub fn deposit_current(seq: &DeRham, paths: &[Path], charges: &[f64]) -> Result<Vec<f64>> {
    check_len(paths.len(), charges.len())?;
    let rule = GaussLegendre::new(line_points(seq.degree()));
    Ok(chunked_sum(paths.len(), seq.dim(1), |p, buf| {
        for seg in paths[p].segments() {
            deposit_segment(seq, &rule, seg[0], seg[1], charges[p], buf);
        }
    }))
}

/// Logical vector of a 1- or 2-form at one point.
#[inline]
pub fn eval_vector(seq: &DeRham, k: usize, pb: &PointBasis, x: &[f64]) -> Vector3<f64> {
    let sp = seq.space(k);
    Vector3::new(
        eval_component(&sp.comps[0], pb, &x[sp.range(0)]),
        eval_component(&sp.comps[1], pb, &x[sp.range(1)]),
        eval_component(&sp.comps[2], pb, &x[sp.range(2)]),
    )
}

/// `B̂ w = w × B̃`.
#[inline]
pub fn b_hat(b: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, b[2], -b[1], -b[2], 0.0, b[0], b[1], -b[0], 0.0)
}

/// Per-particle basis values and `N` at frozen positions of one or more
/// species, concatenated; implements the field-particle coupling of the
/// energy-conserving scheme.
pub struct FrozenParticles<'a> {
    seq: &'a DeRham,
    pb: Vec<PointBasis>,
    n: Vec<Matrix3<f64>>,
    charges: Vec<f64>,
    qm: Vec<f64>,
}

impl<'a> FrozenParticles<'a> {
    pub fn new(seq: &'a DeRham, map: &Mapping, groups: &[ParticleGroup]) -> Self {
        let mut out = Self {
            seq,
            pb: Vec::new(),
            n: Vec::new(),
            charges: Vec::new(),
            qm: Vec::new(),
        };
        for g in groups {
            let (pb, n): (Vec<_>, Vec<_>) = g
                .xi
                .par_iter()
                .map(|&xi| (seq.point_basis(xi), map.inv_transpose(normalize(xi))))
                .unzip();
            out.pb.extend(pb);
            out.n.extend(n);
            out.charges.extend(g.charges());
            out.qm.extend(std::iter::repeat_n(g.charge_over_mass(), g.len()));
        }
        out
    }

    pub fn basis(&self, p: usize) -> &PointBasis {
        &self.pb[p]
    }

    pub fn inv_transpose(&self, p: usize) -> &Matrix3<f64> {
        &self.n[p]
    }
}

impl ParticleCoupling for FrozenParticles<'_> {
    fn n_particles(&self) -> usize {
        self.pb.len()
    }

    fn interpolate(&self, e: &[f64], out: &mut [[f64; 3]]) {
        out.par_iter_mut().enumerate().for_each(|(p, o)| {
            let u = self.n[p] * eval_vector(self.seq, 1, &self.pb[p], e);
            *o = [u[0], u[1], u[2]];
        });
    }

    fn deposit(&self, u: &[[f64; 3]], out: &mut [f64]) {
        let sp = self.seq.space(1);
        let acc = chunked_sum(self.pb.len(), out.len(), |p, buf| {
            let w = self.charges[p] * (self.n[p].transpose() * Vector3::from(u[p]));
            for (k, comp) in sp.comps.iter().enumerate() {
                let o = &mut buf[sp.offsets[k]..];
                for_each_basis(comp, &self.pb[p], |i, v| o[i] += w[k] * v);
            }
        });
        out.copy_from_slice(&acc);
    }

    fn charge_over_mass(&self, p: usize) -> f64 {
        self.qm[p]
    }
}

/// Direction of the Weibel wave vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Kx,
    Ky,
    Kz,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kx" => Some(Scenario::Kx),
            "ky" => Some(Scenario::Ky),
            "kz" => Some(Scenario::Kz),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Kx => "kx",
            Scenario::Ky => "ky",
            Scenario::Kz => "kz",
        }
    }

    pub fn direction(self) -> usize {
        self as usize
    }
}

/// Which magnetic component carries the seed perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldInit {
    B1,
    B2,
    B3,
}

impl FieldInit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "B1" | "b1" => Some(FieldInit::B1),
            "B2" | "b2" => Some(FieldInit::B2),
            "B3" | "b3" => Some(FieldInit::B3),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldInit::B1 => "B1",
            FieldInit::B2 => "B2",
            FieldInit::B3 => "B3",
        }
    }
}

/// Parameters of the anisotropic-Maxwellian Weibel setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibelSetup {
    pub scenario: Scenario,
    pub field: FieldInit,
    pub n_particles: usize,
    pub seed: u64,
    /// Seed amplitude `β`.
    pub beta: f64,
    /// Wave number `k`.
    pub k: f64,
    /// Thermal speed along `k`; the two others are `√12` times larger.
    pub v_thermal: f64,
}

impl WeibelSetup {
    pub fn new(scenario: Scenario, field: FieldInit, n_particles: usize, seed: u64) -> Self {
        Self {
            scenario,
            field,
            n_particles,
            seed,
            beta: 1e-3,
            k: 1.25,
            v_thermal: 0.02 / 2f64.sqrt(),
        }
    }

    pub fn thermal_speeds(&self) -> [f64; 3] {
        let mut vt = [self.v_thermal * 12f64.sqrt(); 3];
        vt[self.scenario.direction()] = self.v_thermal;
        vt
    }

    /// Vector potential whose curl is the seed field. Components that would
    /// violate the wall condition carry a `sin(πx/L)` envelope.
    pub fn vector_potential(&self) -> Result<impl Fn([f64; 3]) -> [f64; 3]> {
        let (b, k) = (self.beta, self.k);
        let l = WEIBEL_LENGTH;
        let a = b / k;
        let f: Box<dyn Fn([f64; 3]) -> [f64; 3]> = match (self.scenario, self.field) {
            (Scenario::Kx, FieldInit::B2) => Box::new(move |x| [0.0, 0.0, -a * (k * x[0]).sin()]),
            (Scenario::Kx, FieldInit::B3) => Box::new(move |x| [0.0, a * (k * x[0]).sin(), 0.0]),
            (Scenario::Ky, FieldInit::B1) => {
                Box::new(move |x| [0.0, 0.0, a * (k * x[1]).sin() * (PI * x[0] / l).sin()])
            }
            (Scenario::Ky, FieldInit::B3) => Box::new(move |x| [-a * (k * x[1]).sin(), 0.0, 0.0]),
            (Scenario::Kz, FieldInit::B1) => {
                Box::new(move |x| [0.0, -a * (k * x[2]).sin() * (PI * x[0] / l).sin(), 0.0])
            }
            (Scenario::Kz, FieldInit::B2) => Box::new(move |x| [a * (k * x[2]).sin(), 0.0, 0.0]),
            (s, f) => {
                return Err(Error::Parameter(format!(
                    "field {} cannot seed the {} scenario",
                    f.name(),
                    s.name()
                )))
            }
        };
        Ok(f)
    }
}

/// Largest `|J_F|` on a sample grid, padded by 10%.
fn max_abs_det(map: &Mapping) -> f64 {
    let n = 32;
    let mut m = 0.0f64;
    for i in 0..=n {
        for j in 0..=n {
            let xi = [i as f64 / n as f64, j as f64 / n as f64, 0.5];
            m = m.max(map.jacobian(xi).determinant().abs());
        }
    }
    1.1 * m
}

fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (r * c, r * s)
}

/// Electrons (`q = -1`, `m = 1`) uniform in physical space with an
/// anisotropic Maxwellian; unit density, so `ω = volume / N_p`. Particle `p`
/// draws from its own stream of a seeded ChaCha generator.
pub fn sample_weibel_particles(map: &Mapping, setup: &WeibelSetup) -> Result<ParticleGroup> {
    if setup.n_particles == 0 {
        return Err(Error::Parameter("at least one particle is required".into()));
    }
    let _ = setup.vector_potential()?;
    let jmax = max_abs_det(map);
    let w = map.volume() / setup.n_particles as f64;
    let vt = setup.thermal_speeds();
    let draws: Vec<([f64; 3], [f64; 3])> = (0..setup.n_particles)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
            rng.set_stream(p as u64);
            let xi = loop {
                let xi: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                if rng.random::<f64>() * jmax <= map.jacobian(xi).determinant().abs() {
                    break xi;
                }
            };
            let (a, b) = normal_pair(&mut rng);
            let (c, _) = normal_pair(&mut rng);
            (xi, [vt[0] * a, vt[1] * b, vt[2] * c])
        })
        .collect();
    let mut g = ParticleGroup::new(-1.0, 1.0);
    for (xi, v) in draws {
        g.push(xi, v, w);
    }
    Ok(g)
}

/// Gauss points and weights over all cells of the logical cube, with `q`
/// points per direction and cell.
pub(crate) fn volume_quadrature(seq: &DeRham, q: usize, mut f: impl FnMut([f64; 3], f64)) {
    let rule = GaussLegendre::new(q);
    let cells = seq.cells();
    let h = cells.map(|n| 1.0 / n as f64);
    for i in 0..cells[0] {
        for j in 0..cells[1] {
            for k in 0..cells[2] {
                for (a, wa) in rule.nodes.iter().zip(&rule.weights) {
                    for (b, wb) in rule.nodes.iter().zip(&rule.weights) {
                        for (c, wc) in rule.nodes.iter().zip(&rule.weights) {
                            let xi = [(i as f64 + a) * h[0], (j as f64 + b) * h[1], (k as f64 + c) * h[2]];
                            f(xi, wa * wb * wc * h[0] * h[1] * h[2]);
                        }
                    }
                }
            }
        }
    }
}

/// `∫ Λ⁰_i |J_F| dξ`, the charge vector of a unit-density background.
pub fn background_density(seq: &DeRham, map: &Mapping) -> Vec<f64> {
    let space = &seq.space(0).comps[0];
    let mut out = vec![0.0; seq.dim(0)];
    volume_quadrature(seq, seq.degree() + 2, |xi, w| {
        let c = w * map.jacobian(xi).determinant().abs();
        let pb = seq.point_basis(xi);
        for_each_basis(space, &pb, |i, v| out[i] += c * v);
    });
    out
}

/// `∫ (N Λ¹_i)·A |J_F| dξ` for a physical vector field `A`.
pub fn one_form_load(seq: &DeRham, map: &Mapping, a: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<f64> {
    let sp = seq.space(1);
    let mut out = vec![0.0; seq.dim(1)];
    volume_quadrature(seq, seq.degree() + 2, |xi, w| {
        let md = map.metric_unchecked(xi);
        let av = a(map.eval(xi));
        let proj = md.n.transpose() * Vector3::from(av) * (w * md.abs_det());
        let pb = seq.point_basis(xi);
        for (k, comp) in sp.comps.iter().enumerate() {
            let o = &mut out[sp.offsets[k]..];
            for_each_basis(comp, &pb, |i, v| o[i] += proj[k] * v);
        }
    });
    out
}

/// `GᵀM₁G`.
struct Laplacian<'a> {
    seq: &'a DeRham,
    m1: &'a MassMatrix,
}

impl LinearOperator for Laplacian<'_> {
    fn dim(&self) -> usize {
        self.seq.dim(0)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.seq.grad(x).expect("0-form length");
        let r = self.seq.grad_t(&self.m1.apply(&g)).expect("1-form length");
        y.copy_from_slice(&r);
    }
}

/// `ẽ = -Gφ` with `GᵀM₁Gφ = ρ̃`, so that `GᵀM₁ẽ + ρ̃ = 0`.
pub fn poisson_electric(seq: &DeRham, m1: &MassMatrix, rho: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)> {
    check_len(seq.dim(0), rho.len())?;
    let lap = Laplacian { seq, m1 };
    let mut rhs = rho.to_vec();
    if !seq.pec() {
        // constants span the kernel of GᵀM₁G; drop the rounding left along them
        let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
        rhs.iter_mut().for_each(|v| *v -= mean);
    }
    let (phi, rep) = cg(&lap, &rhs, None, tol, 20 * seq.dim(0) + 100)?;
    let mut e = seq.grad(&phi)?;
    e.iter_mut().for_each(|v| *v = -*v);
    Ok((e, rep))
}

/// `b̃₀ = C ã₀` with `ã₀` the L² projection of the seed vector potential, so
/// that `D b̃₀ = 0` exactly.
pub fn initial_magnetic(
    seq: &DeRham,
    map: &Mapping,
    m1: &MassMatrix,
    precond: &dyn LinearOperator,
    setup: &WeibelSetup,
    tol: f64,
) -> Result<Vec<f64>> {
    let a = setup.vector_potential()?;
    let rhs = one_form_load(seq, map, a);
    let (a0, rep) = pcg(m1, &rhs, precond, None, tol, 10_000)?;
    if !rep.converged {
        return Err(Error::NoConvergence {
            what: "vector potential projection",
            iterations: rep.iterations,
            residual: rep.residual,
        });
    }
    seq.curl(&a0)
}

/// Total charge vector: particles plus the neutralizing background.
pub fn total_charge(seq: &DeRham, groups: &[ParticleGroup], background: &[f64], volume: f64) -> Vec<f64> {
    let mut rho = vec![0.0; seq.dim(0)];
    let mut net = 0.0;
    for g in groups {
        for (r, d) in rho.iter_mut().zip(deposit_charge(g, seq)) {
            *r += d;
        }
        net += g.q * g.w.iter().sum::<f64>();
    }
    let scale = -net / volume;
    for (r, b) in rho.iter_mut().zip(background) {
        *r += scale * b;
    }
    rho
}

const SNAPSHOT_MAGIC: &str = "gempic-particles 1";

/// Writes a text header followed by `count` little-endian records
/// `ξ1 ξ2 ξ3 v1 v2 v3 ω` of `f64`.
pub fn write_snapshot<W: Write>(mut w: W, group: &ParticleGroup, seed: u64, time: f64) -> io::Result<()> {
    writeln!(w, "{SNAPSHOT_MAGIC}")?;
    writeln!(w, "count {}", group.len())?;
    writeln!(w, "seed {seed}")?;
    writeln!(w, "time {time:.17e}")?;
    writeln!(w, "charge {:.17e}", group.q)?;
    writeln!(w, "mass {:.17e}", group.m)?;
    writeln!(w, "layout f64le xi1 xi2 xi3 v1 v2 v3 w")?;
    writeln!(w, "end")?;
    for p in 0..group.len() {
        for x in group.xi[p].iter().chain(&group.v[p]).chain(std::iter::once(&group.w[p])) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub group: ParticleGroup,
    pub seed: u64,
    pub time: f64,
}

pub fn read_snapshot<R: BufRead>(mut r: R) -> io::Result<Snapshot> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != SNAPSHOT_MAGIC {
        return Err(bad("not a particle snapshot"));
    }
    let (mut count, mut seed, mut time, mut q, mut m) = (None, 0, 0.0, -1.0, 1.0);
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("truncated header"));
        }
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or("");
        let val = it.next().unwrap_or("");
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad("bad header value"));
        match key {
            "end" => break,
            "count" => count = Some(val.parse::<usize>().map_err(|_| bad("bad count"))?),
            "seed" => seed = val.parse().map_err(|_| bad("bad seed"))?,
            "time" => time = num(val)?,
            "charge" => q = num(val)?,
            "mass" => m = num(val)?,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| bad("missing count"))?;
    let mut group = ParticleGroup::new(q, m);
    let mut rec = [0u8; 56];
    for _ in 0..count {
        r.read_exact(&mut rec)?;
        let f = |i: usize| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().unwrap());
        group.push([f(0), f(1), f(2)], [f(3), f(4), f(5)], f(6));
    }
    Ok(Snapshot { group, seed, time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_mass;
    use crate::mapping::MapFamily;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_group(n: usize, seed: u64) -> ParticleGroup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = ParticleGroup::new(-1.0, 1.0);
        for _ in 0..n {
            g.push(
                [rng.random(), rng.random(), rng.random()],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                rng.random_range(0.5..1.5),
            );
        }
        g
    }

    #[test]
    fn reflect_and_periodic_examples() {
        let map = Mapping::cartesian([2.0, 3.0, 4.0]).unwrap();
        let mut g = ParticleGroup::new(-1.0, 1.0);
        g.push([-0.1, 0.3, 0.4], [1.0, 2.0, 3.0], 1.0);
        let c = apply_boundary(&mut g, &map, BoundaryMode::Reflect).unwrap();
        assert!((g.xi[0][0] - 0.1).abs() < 1e-15);
        assert_eq!(g.v[0], [-1.0, 2.0, 3.0]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].face, Face::Inner);

        let mut g = ParticleGroup::new(-1.0, 1.0);
        g.push([1.05, 1.2, -0.25], [1.0, 2.0, 3.0], 1.0);
        apply_boundary(&mut g, &map, BoundaryMode::Periodic).unwrap();
        assert!((g.xi[0][0] - 0.05).abs() < 1e-15);
        assert!((g.xi[0][1] - 0.2).abs() < 1e-15 && (g.xi[0][2] - 0.75).abs() < 1e-15);
        assert_eq!(g.v[0], [1.0, 2.0, 3.0]);

        let mut g = ParticleGroup::new(-1.0, 1.0);
        g.push([2.0, 0.5, 0.5], [1.0, 0.0, 0.0], 1.0);
        assert!(matches!(
            apply_boundary(&mut g, &map, BoundaryMode::Reflect),
            Err(Error::StepTooLarge { index: 0, .. })
        ));
    }

    #[test]
    fn curved_reflection_uses_intersection_normal() {
        let map = Mapping::cylindrical(0.5, 1.0, 1.0).unwrap();
        let mut v = [0.3, -0.2, 0.1];
        let (xi, path, c) =
            resolve_path(&map, BoundaryMode::Reflect, 7, [0.9, 0.1, 0.2], [1.1, 0.3, 0.2], &mut v).unwrap();
        let c = c.unwrap();
        assert_eq!(c.point[0], 1.0);
        assert!((c.point[1] - 0.2).abs() < 1e-15 && (c.point[2] - 0.2).abs() < 1e-15);
        assert!((c.fraction - 0.5).abs() < 1e-14);
        assert!((xi[0] - 0.9).abs() < 1e-14 && (xi[1] - 0.3).abs() < 1e-15);
        // outward normal at ξ2 = 0.2 is radial
        let ang = 2.0 * PI * c.point[1];
        let vin = Vector3::new(0.3, -0.2, 0.1);
        let radial = Vector3::new(ang.cos(), ang.sin(), 0.0);
        let vr = Vector3::from(v);
        assert!((vr.dot(&radial) + vin.dot(&radial)).abs() < 1e-15);
        assert!((vr - vr.dot(&radial) * radial - (vin - vin.dot(&radial) * radial)).norm() < 1e-15);
        assert_eq!(path.len, 2);
        assert_eq!(path.segments[0][1], path.segments[1][0]);
    }

    #[test]
    fn charge_deposit_matches_oracle() {
        let seq = DeRham::new(2, [4, 5, 3], true).unwrap();
        let g = random_group(10, 1);
        let rho = deposit_charge(&g, &seq);
        let b = seq.basis(0);
        let bs = [b, seq.basis(1), seq.basis(2)];
        let n = [bs[0].n_basis(), bs[1].n_basis(), bs[2].n_basis()];
        let mut oracle = vec![0.0; seq.dim(0)];
        for p in 0..g.len() {
            let dense: Vec<Vec<f64>> = (0..3).map(|d| bs[d].eval(g.xi[p][d]).unwrap().to_dense(n[d])).collect();
            // constrained space drops the two boundary slots along ξ1
            for i in 1..n[0] - 1 {
                for j in 0..n[1] {
                    for k in 0..n[2] {
                        oracle[((i - 1) * n[1] + j) * n[2] + k] +=
                            g.q * g.w[p] * dense[0][i] * dense[1][j] * dense[2][k];
                    }
                }
            }
        }
        for (a, o) in rho.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-14);
        }
        assert!(deposit_charge(&ParticleGroup::new(-1.0, 1.0), &seq).iter().all(|v| *v == 0.0));
        let free = DeRham::new(3, [4, 4, 4], false).unwrap();
        let one = random_group(1, 2);
        let total: f64 = deposit_charge(&one, &free).iter().sum();
        assert!((total - one.q * one.w[0]).abs() < 1e-14);
    }

    fn continuity_defect(seq: &DeRham, a: [f64; 3], b: [f64; 3]) -> f64 {
        let j = deposit_current(seq, &[Path::straight(a, b)], &[1.0]).unwrap();
        let gtj = seq.grad_t(&j).unwrap();
        let mut ga = ParticleGroup::new(1.0, 1.0);
        ga.push(normalize(a), [0.0; 3], 1.0);
        let mut gb = ParticleGroup::new(1.0, 1.0);
        gb.push(normalize(b), [0.0; 3], 1.0);
        let (ra, rb) = (deposit_charge(&ga, seq), deposit_charge(&gb, seq));
        gtj.iter()
            .zip(ra.iter().zip(&rb))
            .map(|(g, (x, y))| (g - (y - x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn current_satisfies_discrete_continuity() {
        for p in 1..=3 {
            for pec in [false, true] {
                let seq = DeRham::new(p, [4, 5, 6], pec).unwrap();
                // within one cell, across many faces and across the periodic seam
                assert!(continuity_defect(&seq, [0.3, 0.3, 0.3], [0.32, 0.35, 0.31]) < 1e-14);
                assert!(continuity_defect(&seq, [0.05, 0.1, 0.9], [0.95, 0.8, 1.4]) < 1e-14);
                assert!(continuity_defect(&seq, [0.6, 0.95, 0.02], [0.2, 1.05, -0.3]) < 1e-14);
            }
        }
        let seq = DeRham::new(2, [4, 4, 4], true).unwrap();
        let j = deposit_current(&seq, &[Path::straight([0.3; 3], [0.3; 3])], &[1.0]).unwrap();
        assert!(j.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn split_path_is_segment_additive() {
        let seq = DeRham::new(3, [5, 4, 4], true).unwrap();
        let map = Mapping::default_for(MapFamily::Cylindrical).unwrap();
        let mut v = [0.5, 0.1, 0.0];
        let (_, path, c) =
            resolve_path(&map, BoundaryMode::Reflect, 0, [0.95, 0.2, 0.3], [1.15, 0.3, 0.35], &mut v).unwrap();
        assert!(c.is_some());
        let whole = deposit_current(&seq, &[path], &[0.7]).unwrap();
        let s = path.segments;
        let parts = deposit_current(&seq, &[Path::straight(s[0][0], s[0][1]), Path::straight(s[1][0], s[1][1])], &[0.7, 0.7])
            .unwrap();
        for (a, b) in whole.iter().zip(&parts) {
            assert!((a - b).abs() < 1e-15);
        }
        // charge is conserved through the wall: constrained Λ⁰ vanishes there
        let gtj = seq.grad_t(&whole).unwrap();
        let mut ga = ParticleGroup::new(1.0, 1.0);
        ga.push(s[0][0], [0.0; 3], 0.7);
        let mut gb = ParticleGroup::new(1.0, 1.0);
        gb.push(normalize(s[1][1]), [0.0; 3], 0.7);
        let (ra, rb) = (deposit_charge(&ga, &seq), deposit_charge(&gb, &seq));
        for (g, (x, y)) in gtj.iter().zip(ra.iter().zip(&rb)) {
            assert!((g - (y - x)).abs() < 1e-14);
        }
    }

    #[test]
    fn frozen_coupling_is_adjoint() {
        let seq = DeRham::new(2, [4, 4, 4], true).unwrap();
        let map = Mapping::default_for(MapFamily::Distorted).unwrap();
        let g = random_group(50, 3);
        let fp = FrozenParticles::new(&seq, &map, std::slice::from_ref(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e: Vec<f64> = (0..seq.dim(1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<[f64; 3]> = (0..g.len()).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let mut ie = vec![[0.0; 3]; g.len()];
        fp.interpolate(&e, &mut ie);
        let mut du = vec![0.0; e.len()];
        fp.deposit(&u, &mut du);
        let lhs: f64 = (0..g.len())
            .map(|p| g.q * g.w[p] * (0..3).map(|c| ie[p][c] * u[p][c]).sum::<f64>())
            .sum();
        let rhs: f64 = du.iter().zip(&e).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn sampler_moments_and_reproducibility() {
        let map = Mapping::default_for(MapFamily::Cartesian).unwrap();
        let setup = WeibelSetup::new(Scenario::Kx, FieldInit::B2, 100_000, 11);
        let g = sample_weibel_particles(&map, &setup).unwrap();
        let var = |d: usize| g.v.iter().map(|v| v[d] * v[d]).sum::<f64>() / g.len() as f64;
        let ratio = var(0) / var(1);
        assert!((ratio * 12.0 - 1.0).abs() < 0.05, "{ratio}");
        assert!((var(1) / (0.02f64.powi(2) / 2.0 * 12.0) - 1.0).abs() < 0.05);
        assert!((g.w.iter().sum::<f64>() - WEIBEL_LENGTH.powi(3)).abs() < 1e-9);
        let again = sample_weibel_particles(&map, &setup).unwrap();
        assert_eq!(g, again);
        let bad = WeibelSetup::new(Scenario::Kx, FieldInit::B1, 10, 1);
        assert!(matches!(sample_weibel_particles(&map, &bad), Err(Error::Parameter(_))));
    }

    #[test]
    fn uniform_density_matches_background() {
        let map = Mapping::default_for(MapFamily::Cylindrical).unwrap();
        let seq = DeRham::new(2, [4, 4, 4], true).unwrap();
        let setup = WeibelSetup::new(Scenario::Kz, FieldInit::B2, 200_000, 5);
        let g = sample_weibel_particles(&map, &setup).unwrap();
        let bg = background_density(&seq, &map);
        let rho = total_charge(&seq, std::slice::from_ref(&g), &bg, map.volume());
        let scale = bg.iter().fold(0.0f64, |m, v| m.max(*v));
        let noise = rho.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
        // O(1/√(particles per basis function))
        assert!(noise < 0.1, "{noise}");
    }

    #[test]
    fn initial_fields() {
        let map = Mapping::default_for(MapFamily::Cartesian).unwrap();
        let seq = DeRham::new(3, [8, 8, 8], true).unwrap();
        let m1 = assemble_mass(&seq, &map, 1, 4).unwrap();
        let m2 = assemble_mass(&seq, &map, 2, 4).unwrap();
        let pre = crate::linsolve::FftPreconditioner::new(&m1, &seq, Default::default(), None).unwrap();
        let setup = WeibelSetup::new(Scenario::Kz, FieldInit::B2, 2000, 5);
        let b = initial_magnetic(&seq, &map, &m1, &pre, &setup, 1e-14).unwrap();
        let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(seq.div(&b).unwrap().iter().all(|v| v.abs() <= 1e-13 * bmax));
        // B₂(z) = β cos(kz) evaluated through the contravariant Piola map
        for xi in [[0.3, 0.4, 0.1], [0.7, 0.2, 0.55], [0.5, 0.5, 0.9]] {
            let bt = seq.eval_form(2, &b, xi).unwrap();
            let md = map.metric(xi).unwrap();
            let bp = md.piola_contravariant(&Vector3::new(bt[0], bt[1], bt[2]));
            let z = map.eval(xi)[2];
            assert!((bp[1] - 1e-3 * (1.25 * z).cos()).abs() < 5e-6, "{bp:?}");
            assert!(bp[0].abs() < 5e-6 && bp[2].abs() < 5e-6);
        }
        let energy = m2.energy(&b);
        let exact = 0.5 * 1e-6 * WEIBEL_LENGTH.powi(3) / 2.0;
        assert!((energy / exact - 1.0).abs() < 1e-3);

        let g = sample_weibel_particles(&map, &setup).unwrap();
        let bg = background_density(&seq, &map);
        let rho = total_charge(&seq, std::slice::from_ref(&g), &bg, map.volume());
        let (e, rep) = poisson_electric(&seq, &m1, &rho, 1e-14).unwrap();
        assert!(rep.converged);
        let gauss = seq.grad_t(&m1.apply(&e)).unwrap();
        let res = gauss.iter().zip(&rho).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
        assert!(res < 1e-13, "{res}");
    }

    #[test]
    fn snapshot_round_trip() {
        let g = random_group(5, 9);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &g, 42, 1.5).unwrap();
        let s = read_snapshot(io::Cursor::new(buf)).unwrap();
        assert_eq!(s.group, g);
        assert_eq!((s.seed, s.time), (42, 1.5));
        assert!(read_snapshot(io::Cursor::new(b"nope\n".to_vec())).is_err());
    }

    proptest! {
        #[test]
        fn reflection_is_isometry(a in 0.0f64..1.0, b in 0.0f64..1.0, vx in -1.0f64..1.0, vy in -1.0f64..1.0, vz in -1.0f64..1.0) {
            for fam in [MapFamily::Distorted, MapFamily::Cylindrical, MapFamily::Elliptical] {
                let map = Mapping::default_for(fam).unwrap();
                let v = [vx, vy, vz];
                let r = reflect(&normal_1(&map, [a, b, 0.5]), v);
                let (n0, n1) = (Vector3::from(v).norm(), Vector3::from(r).norm());
                prop_assert!((n0 - n1).abs() <= 1e-15 * n0.max(1e-300));
            }
        }

        #[test]
        fn boundary_keeps_particles_inside(e1 in -0.99f64..1.99, e2 in -3.0f64..3.0, s1 in 0.0f64..1.0) {
            let map = Mapping::default_for(MapFamily::Elliptical).unwrap();
            for mode in [BoundaryMode::Reflect, BoundaryMode::Periodic] {
                let mut v = [0.1, 0.2, 0.3];
                let speed = Vector3::from(v).norm();
                let (xi, path, _) = resolve_path(&map, mode, 0, [s1, 0.5, 0.5], [e1, e2, 0.7], &mut v).unwrap();
                prop_assert!(xi.iter().all(|x| (0.0..=1.0).contains(x)));
                prop_assert!(xi[1] < 1.0 && xi[2] < 1.0);
                prop_assert!((Vector3::from(v).norm() - speed).abs() < 1e-15);
                for seg in path.segments() {
                    prop_assert!(seg.iter().all(|p| (-1e-15..=1.0 + 1e-15).contains(&p[0])));
                }
            }
        }
    }
}
