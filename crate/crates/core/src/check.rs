//! The invariant self-test behind `gempic check`: de Rham identities,
//! commuting evaluation, mass matrices against brute-force quadrature,
//! positivity, conducting-wall boundary terms, preconditioned solves and
//! specular reflection.

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_boundary, assemble_mass, form_weight};
use crate::derham::{for_each_basis, DeRham};
use crate::error::Result;
use crate::linsolve::{cg, pcg, FftPreconditioner, PrecondMode};
use crate::mapping::{MapFamily, Mapping};
use crate::particles::reflect;
use crate::quadrature::GaussLegendre;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Small maps of every family with non-trivial metrics.
pub fn sample_maps() -> Vec<Mapping> {
    let mut out: Vec<Mapping> = [MapFamily::Cartesian, MapFamily::Distorted, MapFamily::Elliptical]
        .into_iter()
        .map(|f| Mapping::default_for(f).expect("preset maps are valid"))
        .collect();
    out.insert(2, Mapping::cylindrical(0.5, 1.0, 1.0).expect("valid cylinder"));
    out
}

/// Largest `‖C G x‖∞` and `‖D C y‖∞` over `samples` random vectors.
pub fn exactness_residual(seq: &DeRham, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = random(&mut rng, seq.dim(0));
        worst = worst.max(max_abs(&seq.curl(&seq.grad(&x)?)?));
        let y = random(&mut rng, seq.dim(1));
        worst = worst.max(max_abs(&seq.div(&seq.curl(&y)?)?));
    }
    Ok(worst)
}

/// Largest relative mismatch between physical `∇`, `curl`, `div` of pushed
/// forward forms (chain rule on the logical derivatives) and the pushed
/// forward `G x`, `C a`, `D b` at `points` random points.
pub fn commuting_error(seq: &DeRham, map: &Mapping, points: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = random(&mut rng, seq.dim(0));
    let a = random(&mut rng, seq.dim(1));
    let b = random(&mut rng, seq.dim(2));
    let (gphi, ca, db) = (seq.grad(&phi)?, seq.curl(&a)?, seq.div(&b)?);
    let mut worst = 0.0f64;
    let mut cmp = |x: Vector3<f64>, y: Vector3<f64>| {
        worst = worst.max((x - y).amax() / (1.0 + y.amax()));
    };
    for _ in 0..points {
        let xi = [rng.random(), rng.random(), rng.random()];
        let md = map.metric(xi)?;
        let d = |k, c, x: &[f64], dir| seq.eval_component_derivative(k, c, x, xi, dir);

        let grad_hat = Vector3::new(d(0, 0, &phi, 0)?, d(0, 0, &phi, 1)?, d(0, 0, &phi, 2)?);
        let g = Vector3::from_column_slice(&seq.eval_form(1, &gphi, xi)?);
        cmp(md.piola_covariant(&g), md.n * grad_hat);

        let curl_hat = Vector3::new(
            d(1, 2, &a, 1)? - d(1, 1, &a, 2)?,
            d(1, 0, &a, 2)? - d(1, 2, &a, 0)?,
            d(1, 1, &a, 0)? - d(1, 0, &a, 1)?,
        );
        let c = Vector3::from_column_slice(&seq.eval_form(2, &ca, xi)?);
        cmp(md.piola_contravariant(&c), md.df * curl_hat / md.det);

        let div_hat = d(2, 0, &b, 0)? + d(2, 1, &b, 1)? + d(2, 2, &b, 2)?;
        let dv = seq.eval_form(3, &db, xi)?[0];
        cmp(Vector3::new(dv / md.det, 0.0, 0.0), Vector3::new(div_hat / md.det, 0.0, 0.0));
    }
    Ok(worst)
}

/// Dense `k`-form mass matrix by brute-force quadrature: `q` Gauss points
/// per direction and cell, every basis pair at every point.
pub fn dense_mass(seq: &DeRham, map: &Mapping, k: usize, q: usize) -> Result<DMatrix<f64>> {
    let rule = GaussLegendre::new(q);
    let space = seq.space(k);
    let n = space.dim();
    let mut m = DMatrix::zeros(n, n);
    let cells = seq.cells();
    let pts: Vec<Vec<(f64, f64)>> = (0..3)
        .map(|d| {
            let nc = cells[d] as f64;
            (0..cells[d])
                .flat_map(|c| rule.on_interval(c as f64 / nc, (c + 1) as f64 / nc).collect::<Vec<_>>())
                .collect()
        })
        .collect();
    let mut vals: Vec<Vec<(usize, f64)>> = vec![Vec::new(); space.n_components()];
    for &(x1, w1) in &pts[0] {
        for &(x2, w2) in &pts[1] {
            for &(x3, w3) in &pts[2] {
                let xi = [x1, x2, x3];
                let md = map.metric(xi)?;
                let pb = seq.point_basis(xi);
                for (c, v) in vals.iter_mut().enumerate() {
                    v.clear();
                    for_each_basis(&space.comps[c], &pb, |i, val| v.push((space.offsets[c] + i, val)));
                }
                for (ca, va) in vals.iter().enumerate() {
                    for (cb, vb) in vals.iter().enumerate() {
                        let f = w1 * w2 * w3 * form_weight(k, &md, ca, cb);
                        for &(i, vi) in va {
                            for &(j, vj) in vb {
                                m[(i, j)] += f * vi * vj;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Relative max-entry mismatch of assembled against dense quadrature, and
/// whether the dense matrix admits a Cholesky factorization.
pub fn mass_oracle(seq: &DeRham, map: &Mapping, k: usize) -> Result<(f64, bool)> {
    let q = seq.degree() + 1;
    let m = assemble_mass(seq, map, k, q)?;
    let dense = dense_mass(seq, map, k, q)?;
    let scale = dense.amax();
    let mut worst = 0.0f64;
    for (i, row) in m.matrix.to_dense().iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - dense[(i, j)]).abs() / scale);
        }
    }
    let spd = dense.clone().cholesky().is_some();
    Ok((worst, spd))
}

/// Max iterations of PCG (preconditioned with `mode`) and plain CG over
/// the mass matrices `k = 0..3` and three random right-hand sides each.
pub fn solver_iterations(seq: &DeRham, map: &Mapping, mode: PrecondMode, tol: f64, seed: u64) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_p, mut worst_c) = (0, 0);
    for k in 0..4 {
        let m = assemble_mass(seq, map, k, seq.degree() + 1)?;
        let pre = FftPreconditioner::new(&m, seq, mode, None)?;
        for _ in 0..3 {
            let rhs = random(&mut rng, m.dim());
            worst_p = worst_p.max(pcg(&m, &rhs, &pre, None, tol, 10 * m.dim())?.1.iterations);
            worst_c = worst_c.max(cg(&m, &rhs, None, tol, 10 * m.dim())?.1.iterations);
        }
    }
    Ok((worst_p, worst_c))
}

/// Largest relative speed change over `n` reflections of random velocities
/// at random wall points of `map`.
pub fn reflection_speed_error(map: &Mapping, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let xi = [rng.random_range(0..2) as f64, rng.random(), rng.random()];
        let normal = crate::particles::normal_1(map, xi);
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let s0 = Vector3::from(v).norm();
        let s1 = Vector3::from(reflect(&normal, v)).norm();
        worst = worst.max((s1 - s0).abs() / s0);
    }
    worst
}

fn outcome(name: impl Into<String>, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
    }
}

/// Runs the whole suite on small grids.
pub fn run_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for p in 1..=3 {
        for pec in [false, true] {
            worst = worst.max(exactness_residual(&DeRham::new(p, [4, 5, 6], pec)?, 5, p as u64)?);
        }
    }
    out.push(outcome("complex exactness", worst <= 1e-13, format!("max |CGx|, |DCy| = {worst:.2e}")));

    for map in sample_maps() {
        let seq = DeRham::new(3, [4, 4, 4], true)?;
        let err = commuting_error(&seq, &map, 20, 7)?;
        out.push(outcome(
            format!("commuting evaluation ({})", map.family().name()),
            err <= 1e-12,
            format!("max relative mismatch {err:.2e}"),
        ));
    }

    for map in sample_maps() {
        let seq = DeRham::new(2, [4, 4, 4], true)?;
        let (mut err, mut spd) = (0.0f64, true);
        for k in 0..4 {
            let (e, s) = mass_oracle(&seq, &map, k)?;
            err = err.max(e);
            spd &= s;
        }
        out.push(outcome(
            format!("mass matrices vs quadrature ({})", map.family().name()),
            err <= 1e-10 && spd,
            format!("max relative mismatch {err:.2e}, positive definite: {spd}"),
        ));
    }

    let mut boundary = 0.0f64;
    for map in sample_maps() {
        let (b0, b1) = assemble_boundary(&DeRham::new(2, [4, 4, 4], true)?, &map, 3)?;
        boundary = boundary.max(b0.max_abs()).max(b1.max_abs());
    }
    out.push(outcome("conducting-wall boundary matrices", boundary == 0.0, format!("max entry {boundary:e}")));

    let seq = DeRham::new(2, [8, 8, 8], true)?;
    let map = Mapping::default_for(MapFamily::Cylindrical)?;
    let (ip, ic) = solver_iterations(&seq, &map, PrecondMode::Lumped, 1e-13, 3)?;
    out.push(outcome(
        "preconditioned mass solves (cylindrical)",
        ip * 20 <= ic,
        format!("PCG {ip} vs CG {ic} iterations"),
    ));

    let err = reflection_speed_error(&Mapping::default_for(MapFamily::Elliptical)?, 100_000, 11);
    out.push(outcome("specular reflection", err <= 1e-15, format!("max relative speed change {err:.2e}")));
    Ok(out)
}
