//! Conjugate gradients, the circulant-FFT mass preconditioner and the two
//! Schur-complement solves of the energy-conserving scheme.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::assembly::{dot, lumped_diagonal, MassMatrix};
use crate::derham::{DeRham, Kind};
use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;
use crate::splines::cardinal_mass_stencil;

/// A linear map `y = A x` on `R^dim`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y)
    }
}

impl LinearOperator for MassMatrix {
    fn dim(&self) -> usize {
        self.matrix.nrows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec_into(x, y)
    }
}

/// The identity, used as "no preconditioner".
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖b - A x‖ / ‖b‖` of the returned iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Unpreconditioned conjugate gradients from `x0` (zero if `None`).
pub fn cg(
    a: &dyn LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    maxit: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    pcg(a, b, &Identity(b.len()), x0, tol, maxit)
}

/// Preconditioned conjugate gradients. Stops when `‖r‖ ≤ tol ‖b‖`; after
/// `maxit` iterations the best iterate seen is returned unconverged.
pub fn pcg(
    a: &dyn LinearOperator,
    b: &[f64],
    p: &dyn LinearOperator,
    x0: Option<&[f64]>,
    tol: f64,
    maxit: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.dim();
    check_len(n, b.len())?;
    let bnorm = norm(b);
    if !bnorm.is_finite() {
        return Err(Error::NonFinite("right-hand side"));
    }
    let mut x = match x0 {
        Some(x0) => {
            check_len(n, x0.len())?;
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        ));
    }
    let mut r = vec![0.0; n];
    a.apply(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    p.apply(&r, &mut z);
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut ad = vec![0.0; n];
    let mut rel = norm(&r) / bnorm;
    let mut best = (rel, x.clone());
    let mut it = 0;
    while rel > tol && it < maxit {
        a.apply(&d, &mut ad);
        let dad = dot(&d, &ad);
        if !dad.is_finite() || !rz.is_finite() {
            return Err(Error::NonFinite("conjugate gradient iteration"));
        }
        if dad <= 0.0 {
            break;
        }
        let alpha = rz / dad;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * ad[i];
        }
        it += 1;
        rel = norm(&r) / bnorm;
        if rel < best.0 {
            best.0 = rel;
            best.1.copy_from_slice(&x);
        }
        if rel <= tol {
            break;
        }
        p.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    if !rel.is_finite() {
        return Err(Error::NonFinite("conjugate gradient residual"));
    }
    let converged = rel <= tol;
    let (residual, x) = if converged { (rel, x) } else { best };
    Ok((
        x,
        SolveReport {
            iterations: it,
            residual,
            converged,
        },
    ))
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Diagonal scaling around the circulant solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PrecondMode {
    /// Circulant solve only.
    None,
    /// `D^{-1} P_fft D^{-1}` with `D² = diag(M)`.
    Jacobi,
    /// `L^{-1} P_fft L^{-1}` with `L² =` lumped row sums.
    #[default]
    Lumped,
}

impl PrecondMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(PrecondMode::None),
            "jacobi" => Some(PrecondMode::Jacobi),
            "lumped" => Some(PrecondMode::Lumped),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecondMode::None => "none",
            PrecondMode::Jacobi => "jacobi",
            PrecondMode::Lumped => "lumped",
        }
    }
}

/// Real eigenvalues of the symmetric circulant with half-stencil `s` on `n`
/// points: `λ_k = s_0 + 2 Σ_m s_m cos(2π k m / n)`.
pub fn circulant_eigenvalues(stencil: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let mut l = stencil[0];
            for (m, s) in stencil.iter().enumerate().skip(1) {
                l += 2.0 * s * (2.0 * std::f64::consts::PI * (k * m) as f64 / n as f64).cos();
            }
            l
        })
        .collect()
}

#[derive(Clone)]
struct Axis {
    n: usize,
    inv_eig: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

#[derive(Clone)]
struct Component {
    offset: usize,
    dims: [usize; 3],
    axes: [Axis; 3],
}

/// `P = S P_fft S` with a separable circulant inverse `P_fft` per component
/// and a diagonal `S`.
#[derive(Clone)]
pub struct FftPreconditioner {
    mode: PrecondMode,
    comps: Vec<Component>,
    scale: Vec<f64>,
}

impl std::fmt::Debug for FftPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPreconditioner")
            .field("mode", &self.mode)
            .field("dim", &self.scale.len())
            .finish()
    }
}

impl FftPreconditioner {
    /// Builds the preconditioner for `mass`. The clamped direction is
    /// treated as periodic on its active length. `floor` bounds the lumped
    /// row sums from below.
    pub fn new(mass: &MassMatrix, seq: &DeRham, mode: PrecondMode, floor: Option<f64>) -> Result<Self> {
        let space = seq.space(mass.k);
        check_len(space.dim(), mass.dim())?;
        let mut planner = FftPlanner::new();
        let p = seq.degree();
        let comps = space
            .comps
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let dims = s.dims();
                let axes = [0, 1, 2].map(|d| {
                    let deg = if s.kinds[d] == Kind::Full { p } else { p - 1 };
                    let raw = cardinal_mass_stencil(deg);
                    let stencil: Vec<f64> = match mode {
                        PrecondMode::None => {
                            // lower functions carry a factor 1/h each
                            let n = seq.cells()[d] as f64;
                            let h = if s.kinds[d] == Kind::Full { 1.0 / n } else { n };
                            raw.iter().map(|v| v * h).collect()
                        }
                        PrecondMode::Jacobi => raw.iter().map(|v| v / raw[0]).collect(),
                        PrecondMode::Lumped => raw,
                    };
                    let n = dims[d];
                    Axis {
                        n,
                        inv_eig: circulant_eigenvalues(&stencil, n).iter().map(|l| 1.0 / l).collect(),
                        forward: planner.plan_fft_forward(n),
                        inverse: planner.plan_fft_inverse(n),
                    }
                });
                Component {
                    offset: space.offsets[c],
                    dims,
                    axes,
                }
            })
            .collect();
        let scale = match mode {
            PrecondMode::None => vec![1.0; mass.dim()],
            PrecondMode::Jacobi => mass.matrix.diagonal().iter().map(|d| 1.0 / d.sqrt()).collect(),
            PrecondMode::Lumped => lumped_diagonal(&mass.matrix, floor)
                .iter()
                .map(|d| 1.0 / d.sqrt())
                .collect(),
        };
        if scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::NonFinite("preconditioner diagonal"));
        }
        Ok(Self { mode, comps, scale })
    }

    pub fn mode(&self) -> PrecondMode {
        self.mode
    }

    /// Eigenvalues `λ_k` of the circulant along direction `d` of component `c`.
    pub fn eigenvalues(&self, c: usize, d: usize) -> Vec<f64> {
        self.comps[c].axes[d].inv_eig.iter().map(|v| 1.0 / v).collect()
    }

    fn circulant_solve(&self, comp: &Component, x: &mut [f64]) {
        let [n1, n2, n3] = comp.dims;
        let mut data: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let strides = [n2 * n3, n3, 1];
        for d in 0..3 {
            let ax = &comp.axes[d];
            if ax.n == 1 {
                for v in data.iter_mut() {
                    *v *= ax.inv_eig[0];
                }
                continue;
            }
            let mut line = vec![Complex64::new(0.0, 0.0); ax.n];
            let starts: Vec<usize> = match d {
                0 => (0..n2 * n3).collect(),
                1 => (0..n1).flat_map(|i| (0..n3).map(move |k| i * n2 * n3 + k)).collect(),
                _ => (0..n1 * n2).map(|ij| ij * n3).collect(),
            };
            let inv_n = 1.0 / ax.n as f64;
            for s in starts {
                for (m, l) in line.iter_mut().enumerate() {
                    *l = data[s + m * strides[d]];
                }
                ax.forward.process(&mut line);
                for (l, ie) in line.iter_mut().zip(&ax.inv_eig) {
                    *l *= ie * inv_n;
                }
                ax.inverse.process(&mut line);
                for (m, l) in line.iter().enumerate() {
                    data[s + m * strides[d]] = *l;
                }
            }
        }
        for (xi, v) in x.iter_mut().zip(&data) {
            *xi = v.re;
        }
    }
}

impl LinearOperator for FftPreconditioner {
    fn dim(&self) -> usize {
        self.scale.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..x.len() {
            y[i] = self.scale[i] * x[i];
        }
        for comp in &self.comps {
            let len = comp.dims.iter().product::<usize>();
            self.circulant_solve(comp, &mut y[comp.offset..comp.offset + len]);
        }
        for (yi, s) in y.iter_mut().zip(&self.scale) {
            *yi *= s;
        }
    }
}

/// `S = M1 + Δt²/4 Cᵀ M2 C`.
pub struct MaxwellSchur<'a> {
    pub m1: &'a MassMatrix,
    pub m2: &'a MassMatrix,
    pub seq: &'a DeRham,
    pub dt: f64,
}

impl LinearOperator for MaxwellSchur<'_> {
    fn dim(&self) -> usize {
        self.m1.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.m1.apply_into(x, y);
        let cx = self.seq.curl(x).expect("1-form length");
        let ccx = self.seq.curl_t(&self.m2.apply(&cx)).expect("2-form length");
        let f = 0.25 * self.dt * self.dt;
        for (yi, v) in y.iter_mut().zip(&ccx) {
            *yi += f * v;
        }
    }
}

/// Trapezoidal update of `ḃ = -C e, M1 ė = Cᵀ M2 b` over `dt`, solved in
/// increment form `S δ = Δt Cᵀ M2 (b - Δt/2 C e)`.
#[allow(clippy::too_many_arguments)]
pub fn schur_solve_maxwell(
    seq: &DeRham,
    m1: &MassMatrix,
    m2: &MassMatrix,
    precond: &dyn LinearOperator,
    dt: f64,
    e: &mut [f64],
    b: &mut [f64],
    tol: f64,
    maxit: usize,
) -> Result<SolveReport> {
    check_len(seq.dim(1), e.len())?;
    check_len(seq.dim(2), b.len())?;
    let ce = seq.curl(e)?;
    let rhs_b: Vec<f64> = b.iter().zip(&ce).map(|(bi, ci)| bi - 0.5 * dt * ci).collect();
    let mut rhs = seq.curl_t(&m2.apply(&rhs_b))?;
    rhs.iter_mut().for_each(|v| *v *= dt);
    let s = MaxwellSchur { m1, m2, seq, dt };
    let (delta, report) = pcg(&s, &rhs, precond, None, tol, maxit)?;
    let mid: Vec<f64> = e.iter().zip(&delta).map(|(ei, di)| 2.0 * ei + di).collect();
    let cmid = seq.curl(&mid)?;
    for (bi, ci) in b.iter_mut().zip(&cmid) {
        *bi -= 0.5 * dt * ci;
    }
    for (ei, di) in e.iter_mut().zip(&delta) {
        *ei += di;
    }
    Ok(report)
}

/// Particle side of the field-particle coupling: evaluation of the physical
/// field `N Λ¹ e` at every particle and its adjoint deposit.
pub trait ParticleCoupling {
    fn n_particles(&self) -> usize;
    /// `u_p = N(ξ_p) Λ¹(ξ_p) e`.
    fn interpolate(&self, e: &[f64], out: &mut [[f64; 3]]);
    /// `Σ_p ω_p q_p Λ¹(ξ_p)ᵀ N(ξ_p)ᵀ u_p`.
    fn deposit(&self, u: &[[f64; 3]], out: &mut [f64]);
    /// Charge-to-mass ratio of particle `p`.
    fn charge_over_mass(&self, p: usize) -> f64;
}

/// `S = M1 + Δt²/4 Σ_p ω_p q_p (q_p/m_p) Λᵀ Nᵀ N Λ`.
pub struct ParticleSchur<'a> {
    pub m1: &'a MassMatrix,
    pub coupling: &'a dyn ParticleCoupling,
    pub dt: f64,
}

impl LinearOperator for ParticleSchur<'_> {
    fn dim(&self) -> usize {
        self.m1.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.m1.apply_into(x, y);
        let np = self.coupling.n_particles();
        if np == 0 {
            return;
        }
        let mut u = vec![[0.0; 3]; np];
        self.coupling.interpolate(x, &mut u);
        for (p, up) in u.iter_mut().enumerate() {
            let qm = self.coupling.charge_over_mass(p);
            up.iter_mut().for_each(|v| *v *= qm);
        }
        let mut dep = vec![0.0; x.len()];
        self.coupling.deposit(&u, &mut dep);
        let f = 0.25 * self.dt * self.dt;
        for (yi, v) in y.iter_mut().zip(&dep) {
            *yi += f * v;
        }
    }
}

/// Trapezoidal update of `V̇ = (q/m) N Λ e, M1 ė = -Λᵀ Nᵀ W_q V` over `dt`,
/// solved in increment form
/// `S δ = -Δt Λᵀ Nᵀ W_q (V + Δt/2 (q/m) N Λ e)`.
#[allow(clippy::too_many_arguments)]
pub fn schur_solve_particle(
    m1: &MassMatrix,
    coupling: &dyn ParticleCoupling,
    precond: &dyn LinearOperator,
    dt: f64,
    e: &mut [f64],
    v: &mut [[f64; 3]],
    tol: f64,
    maxit: usize,
) -> Result<SolveReport> {
    check_len(m1.dim(), e.len())?;
    let np = coupling.n_particles();
    check_len(np, v.len())?;
    if np == 0 || dt == 0.0 {
        return Ok(SolveReport {
            converged: true,
            ..Default::default()
        });
    }
    let mut field = vec![[0.0; 3]; np];
    coupling.interpolate(e, &mut field);
    let mut u = vec![[0.0; 3]; np];
    for p in 0..np {
        let qm = coupling.charge_over_mass(p);
        for c in 0..3 {
            u[p][c] = v[p][c] + 0.5 * dt * qm * field[p][c];
        }
    }
    let mut rhs = vec![0.0; e.len()];
    coupling.deposit(&u, &mut rhs);
    rhs.iter_mut().for_each(|r| *r *= -dt);
    let s = ParticleSchur { m1, coupling, dt };
    let (delta, report) = pcg(&s, &rhs, precond, None, tol, maxit)?;
    let mid: Vec<f64> = e.iter().zip(&delta).map(|(ei, di)| 2.0 * ei + di).collect();
    coupling.interpolate(&mid, &mut field);
    for p in 0..np {
        let qm = coupling.charge_over_mass(p);
        for c in 0..3 {
            v[p][c] += 0.5 * dt * qm * field[p][c];
        }
    }
    for (ei, di) in e.iter_mut().zip(&delta) {
        *ei += di;
    }
    Ok(report)
}
