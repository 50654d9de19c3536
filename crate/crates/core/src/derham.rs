//! Tensor-product spline spaces for 0-, 1-, 2- and 3-forms and the discrete
//! gradient, curl and divergence between them.
//!
//! Direction 1 is clamped, directions 2 and 3 are periodic. Every scalar
//! component is a tensor product of degree-`p` ("full") and degree-`p - 1`
//! ("reduced") factors:
//!
//! ```text
//! 0-form            (p,   p,   p  )
//! 1-form  c1 c2 c3  (p-1, p,   p  ) (p,   p-1, p  ) (p,   p,   p-1)
//! 2-form  c1 c2 c3  (p,   p-1, p-1) (p-1, p,   p-1) (p-1, p-1, p  )
//! 3-form            (p-1, p-1, p-1)
//! ```
//!
//! Coefficients are stored per component in row-major order (`ξ1` slowest)
//! over the *active* slots. In the clamped direction the zero slot of a
//! reduced factor is never active; with a perfect conductor the two
//! boundary-interpolating functions of a full factor are removed as well.
//! The operators act on the full index set internally and the constrained
//! versions are `restrict ∘ op ∘ embed`.

use std::ops::Range;

use crate::error::{check_len, Error, Result};
use crate::splines::{BasisValues, Boundary, DerivativeMatrix1D, SplineBasis1D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    /// Degree `p`.
    Full,
    /// Degree `p - 1`.
    Reduced,
}

/// Per-direction factor kinds of component `c` of a `k`-form.
pub fn component_kinds(k: usize, c: usize) -> [Kind; 3] {
    use Kind::{Full as F, Reduced as R};
    match (k, c) {
        (0, 0) => [F, F, F],
        (1, 0) => [R, F, F],
        (1, 1) => [F, R, F],
        (1, 2) => [F, F, R],
        (2, 0) => [F, R, R],
        (2, 1) => [R, F, R],
        (2, 2) => [R, R, F],
        (3, 0) => [R, R, R],
        _ => panic!("no component {c} for a {k}-form"),
    }
}

pub fn n_components(k: usize) -> usize {
    match k {
        0 | 3 => 1,
        1 | 2 => 3,
        _ => panic!("form degree {k} out of range"),
    }
}

/// One scalar tensor-product component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalarSpace {
    pub kinds: [Kind; 3],
    /// Full per-direction sizes (identical for both kinds).
    pub full: [usize; 3],
    /// Active slots of the clamped direction.
    pub active1: Range<usize>,
}

impl ScalarSpace {
    pub fn dims(&self) -> [usize; 3] {
        [self.active1.len(), self.full[1], self.full[2]]
    }

    pub fn dim(&self) -> usize {
        self.active1.len() * self.full[1] * self.full[2]
    }

    pub fn full_dim(&self) -> usize {
        self.full.iter().product()
    }

    /// Active index of full slot `(i, j, k)`, if active.
    #[inline]
    pub fn active_index(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        if self.active1.contains(&i) {
            Some(((i - self.active1.start) * self.full[1] + j) * self.full[2] + k)
        } else {
            None
        }
    }

    #[inline]
    pub fn full_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.full[1] + j) * self.full[2] + k
    }

    pub fn embed_into(&self, x: &[f64], full: &mut [f64]) {
        full.fill(0.0);
        let plane = self.full[1] * self.full[2];
        for (a, i) in self.active1.clone().enumerate() {
            full[i * plane..(i + 1) * plane].copy_from_slice(&x[a * plane..(a + 1) * plane]);
        }
    }

    pub fn restrict_into(&self, full: &[f64], x: &mut [f64]) {
        let plane = self.full[1] * self.full[2];
        for (a, i) in self.active1.clone().enumerate() {
            x[a * plane..(a + 1) * plane].copy_from_slice(&full[i * plane..(i + 1) * plane]);
        }
    }
}

/// The coefficient space of a `k`-form: one or three scalar components
/// concatenated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormSpace {
    pub k: usize,
    pub comps: Vec<ScalarSpace>,
    pub offsets: Vec<usize>,
}

impl FormSpace {
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, c: usize) -> Range<usize> {
        self.offsets[c]..self.offsets[c + 1]
    }

    pub fn n_components(&self) -> usize {
        self.comps.len()
    }
}

/// Nonzero 1D values at one point, full and reduced, per direction.
#[derive(Debug, Clone, Copy)]
pub struct PointBasis {
    pub full: [BasisValues; 3],
    pub reduced: [BasisValues; 3],
}

impl PointBasis {
    #[inline]
    pub fn factor(&self, kind: Kind, d: usize) -> &BasisValues {
        match kind {
            Kind::Full => &self.full[d],
            Kind::Reduced => &self.reduced[d],
        }
    }
}

/// Visits every active basis function of `space` nonzero at the point,
/// passing its index within the component and its value.
#[inline]
pub fn for_each_basis(space: &ScalarSpace, pb: &PointBasis, mut f: impl FnMut(usize, f64)) {
    let b1 = pb.factor(space.kinds[0], 0);
    let b2 = pb.factor(space.kinds[1], 1);
    let b3 = pb.factor(space.kinds[2], 2);
    let (n2, n3) = (space.full[1], space.full[2]);
    for r1 in 0..b1.len {
        let i = b1.index(r1);
        if !space.active1.contains(&i) {
            continue;
        }
        let base1 = (i - space.active1.start) * n2;
        let v1 = b1.values[r1];
        for r2 in 0..b2.len {
            let base2 = (base1 + b2.index(r2)) * n3;
            let v12 = v1 * b2.values[r2];
            for r3 in 0..b3.len {
                f(base2 + b3.index(r3), v12 * b3.values[r3]);
            }
        }
    }
}

/// `Σ_i x_i Λ_i(ξ)` for one component.
#[inline]
pub fn eval_component(space: &ScalarSpace, pb: &PointBasis, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for_each_basis(space, pb, |i, v| acc += x[i] * v);
    acc
}

/// The discrete de Rham complex on `[0,1]³`.
#[derive(Debug, Clone)]
pub struct DeRham {
    degree: usize,
    cells: [usize; 3],
    pec: bool,
    bases: [SplineBasis1D; 3],
    ders: [DerivativeMatrix1D; 3],
    spaces: [FormSpace; 4],
}

impl DeRham {
    pub fn new(degree: usize, cells: [usize; 3], pec: bool) -> Result<Self> {
        let bases = [
            SplineBasis1D::new(degree, cells[0], Boundary::Clamped)?,
            SplineBasis1D::new(degree, cells[1], Boundary::Periodic)?,
            SplineBasis1D::new(degree, cells[2], Boundary::Periodic)?,
        ];
        let ders = [
            bases[0].derivative_matrix(),
            bases[1].derivative_matrix(),
            bases[2].derivative_matrix(),
        ];
        let full = [bases[0].n_basis(), bases[1].n_basis(), bases[2].n_basis()];
        let n1 = full[0];
        let spaces = [0, 1, 2, 3].map(|k| {
            let comps: Vec<ScalarSpace> = (0..n_components(k))
                .map(|c| {
                    let kinds = component_kinds(k, c);
                    let active1 = match kinds[0] {
                        Kind::Reduced => 1..n1,
                        Kind::Full if pec => 1..n1 - 1,
                        Kind::Full => 0..n1,
                    };
                    ScalarSpace {
                        kinds,
                        full,
                        active1,
                    }
                })
                .collect();
            let mut offsets = vec![0];
            for s in &comps {
                offsets.push(offsets.last().unwrap() + s.dim());
            }
            FormSpace { k, comps, offsets }
        });
        Ok(Self {
            degree,
            cells,
            pec,
            bases,
            ders,
            spaces,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn pec(&self) -> bool {
        self.pec
    }

    pub fn basis(&self, d: usize) -> &SplineBasis1D {
        &self.bases[d]
    }

    pub fn derivative(&self, d: usize) -> &DerivativeMatrix1D {
        &self.ders[d]
    }

    pub fn space(&self, k: usize) -> &FormSpace {
        &self.spaces[k]
    }

    /// Number of coefficients of a `k`-form (all components).
    pub fn dim(&self, k: usize) -> usize {
        self.spaces[k].dim()
    }

    /// Size of the full per-component index set.
    pub fn full_component_dim(&self) -> usize {
        self.spaces[0].comps[0].full_dim()
    }

    /// Unconstrained layout: every component on its full index set.
    pub fn full_dim(&self, k: usize) -> usize {
        n_components(k) * self.full_component_dim()
    }

    pub fn embed(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(k), x.len())?;
        let nf = self.full_component_dim();
        let sp = &self.spaces[k];
        let mut out = vec![0.0; sp.n_components() * nf];
        for (c, s) in sp.comps.iter().enumerate() {
            s.embed_into(&x[sp.range(c)], &mut out[c * nf..(c + 1) * nf]);
        }
        Ok(out)
    }

    pub fn restrict(&self, k: usize, full: &[f64]) -> Result<Vec<f64>> {
        check_len(self.full_dim(k), full.len())?;
        let nf = self.full_component_dim();
        let sp = &self.spaces[k];
        let mut out = vec![0.0; sp.dim()];
        for (c, s) in sp.comps.iter().enumerate() {
            s.restrict_into(&full[c * nf..(c + 1) * nf], &mut out[sp.range(c)]);
        }
        Ok(out)
    }

    /// `y = D_d x` (or `D_dᵀ x`) along direction `d` of a full component.
    fn apply_dir(&self, d: usize, x: &[f64], y: &mut [f64], transpose: bool) {
        let [n1, n2, n3] = self.spaces[0].comps[0].full;
        let dm = &self.ders[d];
        let mut run = |offset: usize, stride: usize| {
            if transpose {
                dm.apply_transpose_strided(x, y, offset, stride);
            } else {
                dm.apply_strided(x, y, offset, stride);
            }
        };
        match d {
            0 => {
                for jk in 0..n2 * n3 {
                    run(jk, n2 * n3);
                }
            }
            1 => {
                for i in 0..n1 {
                    for k in 0..n3 {
                        run(i * n2 * n3 + k, n3);
                    }
                }
            }
            _ => {
                for ij in 0..n1 * n2 {
                    run(ij * n3, 1);
                }
            }
        }
    }

    fn dir(&self, d: usize, x: &[f64], transpose: bool) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply_dir(d, x, &mut y, transpose);
        y
    }

    /// Discrete gradient `G`: 0-form → 1-form.
    pub fn grad(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let f = self.embed(0, phi)?;
        let nf = f.len();
        let mut out = vec![0.0; 3 * nf];
        for d in 0..3 {
            self.apply_dir(d, &f, &mut out[d * nf..(d + 1) * nf], false);
        }
        self.restrict(1, &out)
    }

    /// `Gᵀ`: 1-form → 0-form.
    pub fn grad_t(&self, e: &[f64]) -> Result<Vec<f64>> {
        let f = self.embed(1, e)?;
        let nf = self.full_component_dim();
        let mut out = vec![0.0; nf];
        for d in 0..3 {
            let t = self.dir(d, &f[d * nf..(d + 1) * nf], true);
            add(&mut out, &t, 1.0);
        }
        self.restrict(0, &out)
    }

    /// Discrete curl `C`: 1-form → 2-form.
    pub fn curl(&self, a: &[f64]) -> Result<Vec<f64>> {
        let f = self.embed(1, a)?;
        let nf = self.full_component_dim();
        let comp = |c: usize| &f[c * nf..(c + 1) * nf];
        let mut out = vec![0.0; 3 * nf];
        for (c, (i, j)) in [(1usize, 2usize), (2, 0), (0, 1)].into_iter().enumerate() {
            // b_c = D_i a_j - D_j a_i
            let plus = self.dir(i, comp(j), false);
            let minus = self.dir(j, comp(i), false);
            for ((o, p), m) in out[c * nf..(c + 1) * nf].iter_mut().zip(&plus).zip(&minus) {
                *o = p - m;
            }
        }
        self.restrict(2, &out)
    }

    /// `Cᵀ`: 2-form → 1-form.
    pub fn curl_t(&self, b: &[f64]) -> Result<Vec<f64>> {
        let f = self.embed(2, b)?;
        let nf = self.full_component_dim();
        let comp = |c: usize| &f[c * nf..(c + 1) * nf];
        let mut out = vec![0.0; 3 * nf];
        for (c, (i, j)) in [(1usize, 2usize), (2, 0), (0, 1)].into_iter().enumerate() {
            // b_c = D_i a_j - D_j a_i, so a_j += D_iᵀ b_c and a_i -= D_jᵀ b_c
            let to_j = self.dir(i, comp(c), true);
            let to_i = self.dir(j, comp(c), true);
            add(&mut out[j * nf..(j + 1) * nf], &to_j, 1.0);
            add(&mut out[i * nf..(i + 1) * nf], &to_i, -1.0);
        }
        self.restrict(1, &out)
    }

    /// Discrete divergence `D`: 2-form → 3-form.
    pub fn div(&self, b: &[f64]) -> Result<Vec<f64>> {
        let f = self.embed(2, b)?;
        let nf = self.full_component_dim();
        let mut out = vec![0.0; nf];
        for d in 0..3 {
            let t = self.dir(d, &f[d * nf..(d + 1) * nf], false);
            add(&mut out, &t, 1.0);
        }
        self.restrict(3, &out)
    }

    /// `Dᵀ`: 3-form → 2-form.
    pub fn div_t(&self, r: &[f64]) -> Result<Vec<f64>> {
        let f = self.embed(3, r)?;
        let nf = f.len();
        let mut out = vec![0.0; 3 * nf];
        for d in 0..3 {
            self.apply_dir(d, &f, &mut out[d * nf..(d + 1) * nf], true);
        }
        self.restrict(2, &out)
    }

    /// 1D values at `xi`, clamping `ξ1` into `[0, 1]` and wrapping `ξ2`, `ξ3`.
    #[inline]
    pub fn point_basis(&self, xi: [f64; 3]) -> PointBasis {
        let mut full = [self.bases[0].eval_unchecked(0.0); 3];
        let mut reduced = full;
        for d in 0..3 {
            let (cell, x) = self.bases[d].locate(xi[d]);
            let (f, r) = self.bases[d].eval_pair_in_cell(cell, x);
            full[d] = f;
            reduced[d] = r;
        }
        PointBasis { full, reduced }
    }

    fn check_point(xi: [f64; 3]) -> Result<()> {
        for v in xi {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain {
                    value: v,
                    domain: "[0, 1]",
                });
            }
        }
        Ok(())
    }

    /// Values of the logical `k`-form with coefficients `x` at `xi`: one
    /// entry for 0- and 3-forms, three for 1- and 2-forms.
    pub fn eval_form(&self, k: usize, x: &[f64], xi: [f64; 3]) -> Result<Vec<f64>> {
        check_len(self.dim(k), x.len())?;
        Self::check_point(xi)?;
        let pb = self.point_basis(xi);
        let sp = &self.spaces[k];
        Ok(sp
            .comps
            .iter()
            .enumerate()
            .map(|(c, s)| eval_component(s, &pb, &x[sp.range(c)]))
            .collect())
    }

    /// `∂/∂ξ_d` of component `c` of the `k`-form at `xi`. The factor in
    /// direction `d` must be of full degree.
    pub fn eval_component_derivative(
        &self,
        k: usize,
        c: usize,
        x: &[f64],
        xi: [f64; 3],
        d: usize,
    ) -> Result<f64> {
        check_len(self.dim(k), x.len())?;
        Self::check_point(xi)?;
        let sp = &self.spaces[k];
        let space = &sp.comps[c];
        if space.kinds[d] != Kind::Full {
            return Err(Error::Parameter(format!(
                "component {c} of a {k}-form has reduced degree along direction {}",
                d + 1
            )));
        }
        let mut pb = self.point_basis(xi);
        pb.full[d] = self.bases[d].derivative_values(&pb.full[d], &pb.reduced[d]);
        Ok(eval_component(space, &pb, &x[sp.range(c)]))
    }
}

fn add(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_abs(x: &[f64]) -> f64 {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn sequences() -> Vec<DeRham> {
        let mut out = Vec::new();
        for p in 1..=3 {
            for cells in [[4, 4, 4], [5, 4, 6]] {
                for pec in [false, true] {
                    out.push(DeRham::new(p, cells, pec).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn dimensions() {
        let s = DeRham::new(3, [8, 8, 8], false).unwrap();
        assert_eq!(s.dim(0), 11 * 64);
        assert_eq!(s.dim(3), 10 * 64);
        assert_eq!(s.dim(1), 10 * 64 + 2 * 11 * 64);
        let s = DeRham::new(3, [8, 8, 8], true).unwrap();
        assert_eq!(s.dim(0), 9 * 64);
        assert_eq!(s.space(1).comps[1].dims(), [9, 8, 8]);
        assert_eq!(s.space(2).comps[0].dims(), [9, 8, 8]);
        assert_eq!(s.space(2).comps[1].dims(), [10, 8, 8]);
        assert!(DeRham::new(3, [3, 8, 8], false).is_err());
    }

    #[test]
    fn complex_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in sequences() {
            for _ in 0..5 {
                let x = random(&mut rng, s.dim(0));
                let cg = s.curl(&s.grad(&x).unwrap()).unwrap();
                assert!(max_abs(&cg) <= 1e-13, "{}", max_abs(&cg));
                let y = random(&mut rng, s.dim(1));
                let dc = s.div(&s.curl(&y).unwrap()).unwrap();
                assert!(max_abs(&dc) <= 1e-13);
            }
        }
    }

    #[test]
    fn transposes_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in sequences() {
            let x0 = random(&mut rng, s.dim(0));
            let x1 = random(&mut rng, s.dim(1));
            let x2 = random(&mut rng, s.dim(2));
            let x3 = random(&mut rng, s.dim(3));
            let tol = 1e-11;
            assert!((dot(&s.grad(&x0).unwrap(), &x1) - dot(&x0, &s.grad_t(&x1).unwrap())).abs() < tol);
            assert!((dot(&s.curl(&x1).unwrap(), &x2) - dot(&x1, &s.curl_t(&x2).unwrap())).abs() < tol);
            assert!((dot(&s.div(&x2).unwrap(), &x3) - dot(&x2, &s.div_t(&x3).unwrap())).abs() < tol);
        }
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let s = DeRham::new(2, [4, 5, 6], false).unwrap();
        let g = s.grad(&vec![1.0; s.dim(0)]).unwrap();
        assert!(max_abs(&g) == 0.0);
        let v = s.eval_form(0, &vec![1.0; s.dim(0)], [0.3, 0.7, 0.1]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let s = DeRham::new(2, [4, 4, 4], true).unwrap();
        assert!(matches!(s.grad(&[1.0; 3]), Err(Error::Shape { .. })));
        assert!(s.eval_form(1, &vec![0.0; s.dim(1)], [1.2, 0.0, 0.0]).is_err());
    }

    #[test]
    fn embed_restrict_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in sequences() {
            for k in 0..4 {
                let x = random(&mut rng, s.dim(k));
                assert_eq!(s.restrict(k, &s.embed(k, &x).unwrap()).unwrap(), x);
                let z = s.embed(k, &vec![0.0; s.dim(k)]).unwrap();
                assert!(z.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn pec_tangential_and_normal_traces_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in 1..=3 {
            let s = DeRham::new(p, [5, 4, 4], true).unwrap();
            for _ in 0..10 {
                let e = random(&mut rng, s.dim(1));
                let a = random(&mut rng, s.dim(1));
                let b = s.curl(&a).unwrap();
                let bb = random(&mut rng, s.dim(2));
                for xi1 in [0.0, 1.0] {
                    let xi = [xi1, rng.random(), rng.random()];
                    let ev = s.eval_form(1, &e, xi).unwrap();
                    assert_eq!((ev[1], ev[2]), (0.0, 0.0));
                    assert_eq!(s.eval_form(2, &bb, xi).unwrap()[0], 0.0);
                    assert_eq!(s.eval_form(2, &b, xi).unwrap()[0], 0.0);
                    assert_eq!(s.eval_form(0, &random(&mut rng, s.dim(0)), xi).unwrap()[0], 0.0);
                }
            }
        }
    }

    #[test]
    fn commuting_diagram() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in sequences() {
            let phi = random(&mut rng, s.dim(0));
            let a = random(&mut rng, s.dim(1));
            let b = random(&mut rng, s.dim(2));
            let (gphi, ca, db) = (s.grad(&phi).unwrap(), s.curl(&a).unwrap(), s.div(&b).unwrap());
            for n in 0..20 {
                let mut xi = [rng.random(), rng.random(), rng.random()];
                if n < 2 {
                    xi[0] = n as f64;
                }
                let g = s.eval_form(1, &gphi, xi).unwrap();
                for d in 0..3 {
                    let exact = s.eval_component_derivative(0, 0, &phi, xi, d).unwrap();
                    assert!((g[d] - exact).abs() < 1e-12 * (1.0 + exact.abs()));
                }
                let c = s.eval_form(2, &ca, xi).unwrap();
                for (comp, (i, j)) in [(1usize, 2usize), (2, 0), (0, 1)].into_iter().enumerate() {
                    let exact = s.eval_component_derivative(1, j, &a, xi, i).unwrap()
                        - s.eval_component_derivative(1, i, &a, xi, j).unwrap();
                    assert!((c[comp] - exact).abs() < 1e-12 * (1.0 + exact.abs()));
                }
                let dv = s.eval_form(3, &db, xi).unwrap()[0];
                let exact: f64 =
                    (0..3).map(|d| s.eval_component_derivative(2, d, &b, xi, d).unwrap()).sum();
                assert!((dv - exact).abs() < 1e-12 * (1.0 + exact.abs()));
            }
        }
    }
}
