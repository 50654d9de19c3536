//! Quadrature assembly of the metric-weighted mass matrices and of the
//! boundary matrices on the `ξ1 ∈ {0, 1}` faces.
//!
//! The integrand weights are `|J|` (0-forms), `G^{-1} |J|` (1-forms),
//! `G / |J|` (2-forms) and `1 / |J|` (3-forms), with `G = DFᵀ DF`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::derham::{for_each_basis, DeRham, Kind, ScalarSpace};
use crate::error::{Error, Result};
use crate::mapping::{Mapping, MetricData, SINGULAR_DET};
use crate::quadrature::GaussLegendre;
use crate::sparse::CsrMatrix;
use crate::splines::{BasisValues, MAX_SUPPORT};

/// A symmetric positive definite mass matrix of one form degree.
#[derive(Debug, Clone)]
pub struct MassMatrix {
    pub k: usize,
    pub quad_points: usize,
    pub matrix: CsrMatrix,
    /// Component offsets in the coefficient vector.
    pub offsets: Vec<usize>,
}

impl MassMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec_into(x, y)
    }

    /// `½ xᵀ M x`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.apply(x))
    }

    /// `½ x_cᵀ M_cc x_c`, the energy of component `c` alone.
    pub fn component_energy(&self, c: usize, x: &[f64]) -> f64 {
        let (lo, hi) = (self.offsets[c], self.offsets[c + 1]);
        let mut acc = 0.0;
        for r in lo..hi {
            let mut row = 0.0;
            for (col, v) in self.matrix.row(r) {
                if (lo..hi).contains(&col) {
                    row += v * x[col];
                }
            }
            acc += x[r] * row;
        }
        0.5 * acc
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row sums of `m`, clamped below by `floor` (default `1e-10 ×` the largest
/// row sum).
pub fn lumped_diagonal(m: &CsrMatrix, floor: Option<f64>) -> Vec<f64> {
    let sums = m.row_sums();
    let floor = floor.unwrap_or_else(|| 1e-10 * sums.iter().fold(0.0f64, |a, &b| a.max(b)));
    sums.into_iter().map(|s| if s > floor { s } else { floor }).collect()
}

/// Metric weight of block `(a, b)` for a `k`-form at one point.
#[inline]
pub fn form_weight(k: usize, md: &MetricData, a: usize, b: usize) -> f64 {
    let j = md.det.abs();
    match k {
        0 => j,
        1 => md.g_inv[(a, b)] * j,
        2 => md.g[(a, b)] / j,
        _ => 1.0 / j,
    }
}

/// Quadrature points and 1D basis values, per direction and cell.
struct Tables {
    q: usize,
    /// `[d][cell * q + iq]`
    weights: [Vec<f64>; 3],
    points: [Vec<f64>; 3],
    full: [Vec<BasisValues>; 3],
    reduced: [Vec<BasisValues>; 3],
}

impl Tables {
    fn new(seq: &DeRham, q: usize) -> Self {
        let rule = GaussLegendre::new(q);
        let mut weights: [Vec<f64>; 3] = Default::default();
        let mut points: [Vec<f64>; 3] = Default::default();
        let mut full: [Vec<BasisValues>; 3] = Default::default();
        let mut reduced: [Vec<BasisValues>; 3] = Default::default();
        for d in 0..3 {
            let basis = seq.basis(d);
            let n = basis.n_cells();
            for cell in 0..n {
                let a = cell as f64 / n as f64;
                for (x, w) in rule.on_interval(a, a + 1.0 / n as f64) {
                    let (f, r) = basis.eval_pair_in_cell(cell, x);
                    weights[d].push(w);
                    points[d].push(x);
                    full[d].push(f);
                    reduced[d].push(r);
                }
            }
        }
        Self {
            q,
            weights,
            points,
            full,
            reduced,
        }
    }

    fn values(&self, kind: Kind, d: usize, cell: usize, iq: usize) -> &BasisValues {
        let i = cell * self.q + iq;
        match kind {
            Kind::Full => &self.full[d][i],
            Kind::Reduced => &self.reduced[d][i],
        }
    }
}

/// Sorted 1D coupling lists: `lists[i]` holds the trial indices `j` whose
/// support overlaps test index `i`; `pos[i * n + j]` is `j`'s position there.
struct Coupling {
    n: usize,
    lists: Vec<Vec<usize>>,
    pos: Vec<u32>,
}

impl Coupling {
    fn new(seq: &DeRham, d: usize, ka: Kind, kb: Kind, active: &std::ops::Range<usize>, active_b: &std::ops::Range<usize>) -> Self {
        let basis = seq.basis(d);
        let n = basis.n_basis();
        let p = basis.degree();
        let mut sets = vec![Vec::new(); n];
        for cell in 0..basis.n_cells() {
            let x = (cell as f64 + 0.5) / basis.n_cells() as f64;
            let deg = |k: Kind| if k == Kind::Full { p } else { p - 1 };
            let a = basis.values_in_cell(cell, x, deg(ka));
            let b = basis.values_in_cell(cell, x, deg(kb));
            for r in 0..a.len {
                let i = a.index(r);
                if !active.contains(&i) {
                    continue;
                }
                for s in 0..b.len {
                    let j = b.index(s);
                    if active_b.contains(&j) {
                        sets[i].push(j);
                    }
                }
            }
        }
        let mut pos = vec![u32::MAX; n * n];
        for (i, s) in sets.iter_mut().enumerate() {
            s.sort_unstable();
            s.dedup();
            for (k, &j) in s.iter().enumerate() {
                pos[i * n + j] = k as u32;
            }
        }
        Self { n, lists: sets, pos }
    }

    #[inline]
    fn position(&self, i: usize, j: usize) -> usize {
        self.pos[i * self.n + j] as usize
    }
}

/// Assembles the `k`-form mass matrix with `q` Gauss points per direction
/// and cell.
pub fn assemble_mass(seq: &DeRham, map: &Mapping, k: usize, q: usize) -> Result<MassMatrix> {
    if k > 3 {
        return Err(Error::Parameter(format!("form degree {k} out of range")));
    }
    if q < seq.degree() + 1 {
        return Err(Error::Parameter(format!(
            "quadrature order {q} below p + 1 = {}",
            seq.degree() + 1
        )));
    }
    let tables = Tables::new(seq, q);
    let cells = seq.cells();
    let n_cells = cells.iter().product::<usize>();
    let q3 = q * q * q;
    let space = seq.space(k);
    let nc = space.n_components();

    // metric weights per cell and quadrature point, including quadrature weights
    let nblocks = nc * nc;
    let mut weights = vec![0.0; n_cells * q3 * nblocks];
    for cell in 0..n_cells {
        let c = unflatten(cell, cells);
        for iq in 0..q3 {
            let (q1, q2, q3i) = (iq / (q * q), (iq / q) % q, iq % q);
            let xi = [
                tables.points[0][c[0] * q + q1],
                tables.points[1][c[1] * q + q2],
                tables.points[2][c[2] * q + q3i],
            ];
            let md = map.metric_unchecked(xi);
            if !md.det.is_finite() || md.det.abs() < SINGULAR_DET {
                return Err(Error::Assembly(format!(
                    "|J_F| = {:e} below {SINGULAR_DET:e} at quadrature point {xi:?}",
                    md.det
                )));
            }
            let w = tables.weights[0][c[0] * q + q1]
                * tables.weights[1][c[1] * q + q2]
                * tables.weights[2][c[2] * q + q3i];
            for a in 0..nc {
                for b in 0..nc {
                    weights[(cell * q3 + iq) * nblocks + a * nc + b] = w * form_weight(k, &md, a, b);
                }
            }
        }
    }
    let nonzero: Vec<bool> = (0..nblocks)
        .map(|ab| (0..n_cells * q3).any(|i| weights[i * nblocks + ab] != 0.0))
        .collect();

    // 1D coupling lists per block and direction
    let couplings: Vec<[Coupling; 3]> = (0..nblocks)
        .map(|ab| {
            let (sa, sb) = (&space.comps[ab / nc], &space.comps[ab % nc]);
            [0, 1, 2].map(|d| {
                let full_range = 0..sa.full[d];
                let (ra, rb) = if d == 0 {
                    (sa.active1.clone(), sb.active1.clone())
                } else {
                    (full_range.clone(), full_range)
                };
                Coupling::new(seq, d, sa.kinds[d], sb.kinds[d], &ra, &rb)
            })
        })
        .collect();

    // sparsity pattern
    let dim = space.dim();
    let mut indptr = vec![0usize; dim + 1];
    let mut block_start = vec![0usize; dim * nc];
    for a in 0..nc {
        let sa = &space.comps[a];
        let [_, n2, n3] = sa.full;
        for i1 in sa.active1.clone() {
            for i2 in 0..n2 {
                for i3 in 0..n3 {
                    let row = space.offsets[a] + sa.active_index(i1, i2, i3).unwrap();
                    let mut len = 0;
                    for b in 0..nc {
                        block_start[row * nc + b] = len;
                        if nonzero[a * nc + b] {
                            let cp = &couplings[a * nc + b];
                            len += cp[0].lists[i1].len() * cp[1].lists[i2].len() * cp[2].lists[i3].len();
                        }
                    }
                    indptr[row + 1] = len;
                }
            }
        }
    }
    for r in 0..dim {
        indptr[r + 1] += indptr[r];
    }
    let nnz = indptr[dim];
    let mut indices = vec![0usize; nnz];
    for a in 0..nc {
        let sa = &space.comps[a];
        let [_, n2, n3] = sa.full;
        for i1 in sa.active1.clone() {
            for i2 in 0..n2 {
                for i3 in 0..n3 {
                    let row = space.offsets[a] + sa.active_index(i1, i2, i3).unwrap();
                    for b in 0..nc {
                        if !nonzero[a * nc + b] {
                            continue;
                        }
                        let cp = &couplings[a * nc + b];
                        let sb = &space.comps[b];
                        let mut at = indptr[row] + block_start[row * nc + b];
                        for &j1 in &cp[0].lists[i1] {
                            for &j2 in &cp[1].lists[i2] {
                                for &j3 in &cp[2].lists[i3] {
                                    indices[at] = space.offsets[b] + sb.active_index(j1, j2, j3).unwrap();
                                    at += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut values = vec![0.0; nnz];

    // element matrices by sum factorisation, computed in parallel chunks and
    // scattered in cell order
    let s = MAX_SUPPORT;
    let per_block = s.pow(6);
    let chunk = (1usize << 20) / (per_block * nblocks).max(1);
    let chunk = chunk.max(1);
    let cell_ids: Vec<usize> = (0..n_cells).collect();
    for group in cell_ids.chunks(chunk) {
        let elements: Vec<Vec<f64>> = group
            .par_iter()
            .map(|&cell| {
                let c = unflatten(cell, cells);
                let mut out = vec![0.0; per_block * nblocks];
                for a in 0..nc {
                    for b in 0..nc {
                        if !nonzero[a * nc + b] {
                            continue;
                        }
                        let w = |iq: usize| weights[(cell * q3 + iq) * nblocks + a * nc + b];
                        element_block(
                            &tables,
                            &space.comps[a],
                            &space.comps[b],
                            c,
                            &w,
                            &mut out[(a * nc + b) * per_block..(a * nc + b + 1) * per_block],
                        );
                    }
                }
                out
            })
            .collect();
        for (&cell, elem) in group.iter().zip(&elements) {
            let c = unflatten(cell, cells);
            for a in 0..nc {
                for b in 0..nc {
                    if !nonzero[a * nc + b] {
                        continue;
                    }
                    let e = &elem[(a * nc + b) * per_block..(a * nc + b + 1) * per_block];
                    scatter(
                        &tables,
                        &space.comps[a],
                        &space.comps[b],
                        space.offsets[a],
                        c,
                        &couplings[a * nc + b],
                        nc,
                        b,
                        &block_start,
                        &indptr,
                        e,
                        &mut values,
                    );
                }
            }
        }
    }

    Ok(MassMatrix {
        k,
        quad_points: q,
        matrix: CsrMatrix {
            nrows: dim,
            ncols: dim,
            indptr,
            indices,
            values,
        },
        offsets: space.offsets.clone(),
    })
}

fn unflatten(cell: usize, cells: [usize; 3]) -> [usize; 3] {
    [cell / (cells[1] * cells[2]), (cell / cells[2]) % cells[1], cell % cells[2]]
}

/// `E[r1 s1 r2 s2 r3 s3] = Σ_q W(q) Π_d A_d(q_d)[r_d] B_d(q_d)[s_d]`, stored
/// with stride `MAX_SUPPORT` per index.
fn element_block(
    t: &Tables,
    sa: &ScalarSpace,
    sb: &ScalarSpace,
    c: [usize; 3],
    w: &dyn Fn(usize) -> f64,
    out: &mut [f64],
) {
    let q = t.q;
    let s = MAX_SUPPORT;
    let la: [usize; 3] = [0, 1, 2].map(|d| t.values(sa.kinds[d], d, c[d], 0).len);
    let lb: [usize; 3] = [0, 1, 2].map(|d| t.values(sb.kinds[d], d, c[d], 0).len);
    let va = |d: usize, iq: usize| &t.values(sa.kinds[d], d, c[d], iq).values;
    let vb = |d: usize, iq: usize| &t.values(sb.kinds[d], d, c[d], iq).values;

    // contract direction 3: T3[q1 q2][r3 s3]
    let mut t3 = vec![0.0; q * q * s * s];
    for q12 in 0..q * q {
        let dst = &mut t3[q12 * s * s..(q12 + 1) * s * s];
        for q3 in 0..q {
            let wq = w(q12 * q + q3);
            let (a3, b3) = (va(2, q3), vb(2, q3));
            for r3 in 0..la[2] {
                let f = wq * a3[r3];
                for s3 in 0..lb[2] {
                    dst[r3 * s + s3] += f * b3[s3];
                }
            }
        }
    }
    // contract direction 2: T2[q1][r2 s2][r3 s3]
    let ss = s * s;
    let mut t2 = vec![0.0; q * ss * ss];
    for q1 in 0..q {
        for q2 in 0..q {
            let src = &t3[(q1 * q + q2) * ss..(q1 * q + q2 + 1) * ss];
            let (a2, b2) = (va(1, q2), vb(1, q2));
            for r2 in 0..la[1] {
                for s2 in 0..lb[1] {
                    let f = a2[r2] * b2[s2];
                    let dst = &mut t2[(q1 * ss + r2 * s + s2) * ss..(q1 * ss + r2 * s + s2 + 1) * ss];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += f * v;
                    }
                }
            }
        }
    }
    // contract direction 1: E[r1 s1][r2 s2][r3 s3]
    for q1 in 0..q {
        let src = &t2[q1 * ss * ss..(q1 + 1) * ss * ss];
        let (a1, b1) = (va(0, q1), vb(0, q1));
        for r1 in 0..la[0] {
            for s1 in 0..lb[0] {
                let f = a1[r1] * b1[s1];
                let dst = &mut out[(r1 * s + s1) * ss * ss..(r1 * s + s1 + 1) * ss * ss];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += f * v;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn scatter(
    t: &Tables,
    sa: &ScalarSpace,
    sb: &ScalarSpace,
    row_offset: usize,
    c: [usize; 3],
    cp: &[Coupling; 3],
    nc: usize,
    b: usize,
    block_start: &[usize],
    indptr: &[usize],
    e: &[f64],
    values: &mut [f64],
) {
    let s = MAX_SUPPORT;
    let ss = s * s;
    let fa: [&BasisValues; 3] = [0, 1, 2].map(|d| t.values(sa.kinds[d], d, c[d], 0));
    let fb: [&BasisValues; 3] = [0, 1, 2].map(|d| t.values(sb.kinds[d], d, c[d], 0));
    for r1 in 0..fa[0].len {
        let i1 = fa[0].index(r1);
        if !sa.active1.contains(&i1) {
            continue;
        }
        for s1 in 0..fb[0].len {
            let j1 = fb[0].index(s1);
            if !sb.active1.contains(&j1) {
                continue;
            }
            let p1 = cp[0].position(i1, j1);
            for r2 in 0..fa[1].len {
                let i2 = fa[1].index(r2);
                for s2 in 0..fb[1].len {
                    let j2 = fb[1].index(s2);
                    let p2 = cp[1].position(i2, j2);
                    for r3 in 0..fa[2].len {
                        let i3 = fa[2].index(r3);
                        let row = row_offset + sa.active_index(i1, i2, i3).unwrap();
                        let (l2, l3) = (cp[1].lists[i2].len(), cp[2].lists[i3].len());
                        let base = indptr[row] + block_start[row * nc + b] + (p1 * l2 + p2) * l3;
                        let src = ((r1 * s + s1) * ss + r2 * s + s2) * ss + r3 * s;
                        for s3 in 0..fb[2].len {
                            let j3 = fb[2].index(s3);
                            values[base + cp[2].position(i3, j3)] += e[src + s3];
                        }
                    }
                }
            }
        }
    }
}

/// The 0-form boundary matrix (0-forms × 1-forms) and the 1-form boundary
/// matrix (1-forms × 2-forms), integrated as `[·]_{ξ1=0}^{1}` over the
/// `(ξ2, ξ3)` faces with `q` points per cell and direction.
pub fn assemble_boundary(seq: &DeRham, map: &Mapping, q: usize) -> Result<(CsrMatrix, CsrMatrix)> {
    let rule = GaussLegendre::new(q);
    let [_, n2, n3] = seq.cells();
    let (s0, s1, s2) = (seq.space(0), seq.space(1), seq.space(2));
    let mut mb0 = BTreeMap::new();
    let mut mb1 = BTreeMap::new();
    for (face, sign) in [(0.0, -1.0), (1.0, 1.0)] {
        for c2 in 0..n2 {
            let a2 = c2 as f64 / n2 as f64;
            for (x2, w2) in rule.on_interval(a2, a2 + 1.0 / n2 as f64) {
                for c3 in 0..n3 {
                    let a3 = c3 as f64 / n3 as f64;
                    for (x3, w3) in rule.on_interval(a3, a3 + 1.0 / n3 as f64) {
                        let xi = [face, x2, x3];
                        let md = map.metric(xi)?;
                        let pb = seq.point_basis(xi);
                        let w = sign * w2 * w3;
                        let collect = |space: &crate::derham::FormSpace, c: usize| {
                            let mut v = Vec::new();
                            for_each_basis(&space.comps[c], &pb, |i, val| {
                                if val != 0.0 {
                                    v.push((space.offsets[c] + i, val))
                                }
                            });
                            v
                        };
                        let zero = collect(s0, 0);
                        let ones: Vec<_> = (0..3).map(|c| collect(s1, c)).collect();
                        let twos: Vec<_> = (0..3).map(|c| collect(s2, c)).collect();
                        let n = |i: usize| md.n.column(i).into_owned();
                        let t = |i: usize| md.df.column(i).into_owned();
                        for c in 0..3 {
                            let f = w * n(0).dot(&n(c)) * md.det.abs();
                            for &(i, vi) in &zero {
                                for &(j, vj) in &ones[c] {
                                    *mb0.entry((i, j)).or_insert(0.0) += f * vi * vj;
                                }
                            }
                        }
                        // rows: 1-form components 2 and 3 against t3 and t2
                        for (row_c, (tv, sgn)) in [(1usize, (2usize, -1.0)), (2, (1, 1.0))] {
                            for c in 0..3 {
                                let f = w * sgn * t(tv).dot(&t(c)) / md.det;
                                for &(i, vi) in &ones[row_c] {
                                    for &(j, vj) in &twos[c] {
                                        *mb1.entry((i, j)).or_insert(0.0) += f * vi * vj;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        CsrMatrix::from_map(s0.dim(), s1.dim(), &mb0),
        CsrMatrix::from_map(s1.dim(), s2.dim(), &mb1),
    ))
}
