//! Coordinate transformations `F: [0,1]³ → Ω` and their metric data.
//!
//! `ξ1` is the bounded (radial) direction, `ξ2` and `ξ3` are periodic.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Side length of the Weibel test box, `2π / 1.25`.
pub const WEIBEL_LENGTH: f64 = 2.0 * PI / 1.25;

/// Determinants smaller than this in magnitude count as singular.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapFamily {
    Cartesian,
    Distorted,
    Cylindrical,
    Elliptical,
}

impl MapFamily {
    pub fn name(self) -> &'static str {
        match self {
            MapFamily::Cartesian => "cartesian",
            MapFamily::Distorted => "distorted",
            MapFamily::Cylindrical => "cylindrical",
            MapFamily::Elliptical => "elliptical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cartesian" => Some(MapFamily::Cartesian),
            "distorted" => Some(MapFamily::Distorted),
            "cylindrical" => Some(MapFamily::Cylindrical),
            "elliptical" => Some(MapFamily::Elliptical),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mapping {
    /// `x = diag(L) ξ`.
    Cartesian { lengths: [f64; 3] },
    /// Sinusoidal distortion of the box in the `(x, y)` plane.
    Distorted { lengths: [f64; 3], lp: f64, eps: f64 },
    /// `((r0 + Lr ξ1) cos 2πξ2, (r0 + Lr ξ1) sin 2πξ2, Lz ξ3)`.
    Cylindrical { r0: f64, lr: f64, lz: f64 },
    /// `(Lr cosh(ξ1 + r0) cos 2πξ2, Lr sinh(ξ1 + r0) sin 2πξ2, Lz ξ3)`.
    Elliptical { r0: f64, lr: f64, lz: f64 },
}

/// Metric quantities at one logical point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricData {
    /// `DF`, columns are the covariant basis vectors `t_i`.
    pub df: Matrix3<f64>,
    /// `J_F = det DF`.
    pub det: f64,
    /// `N = DF^{-T}`, columns are the contravariant vectors `n_i`.
    pub n: Matrix3<f64>,
    /// `G = DFᵀ DF`.
    pub g: Matrix3<f64>,
    /// `G^{-1} = Nᵀ N`.
    pub g_inv: Matrix3<f64>,
}

impl MetricData {
    pub fn from_jacobian(df: Matrix3<f64>) -> Self {
        let det = df.determinant();
        // N = cof(DF) / det
        let m = |i: usize, j: usize| df[(i, j)];
        let cof = Matrix3::new(
            m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1),
            m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2),
            m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0),
            m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2),
            m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0),
            m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1),
            m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1),
            m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2),
            m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
        );
        let n = cof / det;
        Self {
            df,
            det,
            n,
            g: df.transpose() * df,
            g_inv: n.transpose() * n,
        }
    }

    pub fn abs_det(&self) -> f64 {
        self.det.abs()
    }

    /// Physical 1-form proxy `N Ẽ`.
    pub fn piola_covariant(&self, e: &Vector3<f64>) -> Vector3<f64> {
        self.n * e
    }

    /// Physical 2-form proxy `DF B̃ / J_F`.
    pub fn piola_contravariant(&self, b: &Vector3<f64>) -> Vector3<f64> {
        self.df * b / self.det
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl Mapping {
    pub fn cartesian(lengths: [f64; 3]) -> Result<Self> {
        for (i, l) in lengths.iter().enumerate() {
            positive(&format!("length {}", i + 1), *l)?;
        }
        Ok(Mapping::Cartesian { lengths })
    }

    pub fn distorted(lengths: [f64; 3], lp: f64, eps: f64) -> Result<Self> {
        for (i, l) in lengths.iter().enumerate() {
            positive(&format!("length {}", i + 1), *l)?;
        }
        if !lp.is_finite() || !eps.is_finite() {
            return Err(Error::Parameter("distortion parameters must be finite".into()));
        }
        let map = Mapping::Distorted { lengths, lp, eps };
        map.validate()?;
        Ok(map)
    }

    pub fn cylindrical(r0: f64, lr: f64, lz: f64) -> Result<Self> {
        Self::radial_params(r0, lr, lz)?;
        let map = Mapping::Cylindrical { r0, lr, lz };
        map.validate()?;
        Ok(map)
    }

    pub fn elliptical(r0: f64, lr: f64, lz: f64) -> Result<Self> {
        Self::radial_params(r0, lr, lz)?;
        let map = Mapping::Elliptical { r0, lr, lz };
        map.validate()?;
        Ok(map)
    }

    fn radial_params(r0: f64, lr: f64, lz: f64) -> Result<()> {
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(Error::Parameter(format!(
                "r0 must be positive to keep the pole out of the domain, got {r0}"
            )));
        }
        positive("Lr", lr)?;
        positive("Lz", lz)
    }

    /// Family defaults used by the Weibel presets.
    pub fn default_for(family: MapFamily) -> Result<Self> {
        let l = WEIBEL_LENGTH;
        match family {
            MapFamily::Cartesian => Self::cartesian([l; 3]),
            MapFamily::Distorted => Self::distorted([l; 3], PI / 2.0, 0.05),
            MapFamily::Cylindrical => Self::cylindrical(0.01, l - 0.01, l),
            MapFamily::Elliptical => Self::elliptical(0.01, l - 0.01, l),
        }
    }

    pub fn family(&self) -> MapFamily {
        match self {
            Mapping::Cartesian { .. } => MapFamily::Cartesian,
            Mapping::Distorted { .. } => MapFamily::Distorted,
            Mapping::Cylindrical { .. } => MapFamily::Cylindrical,
            Mapping::Elliptical { .. } => MapFamily::Elliptical,
        }
    }

    /// Checks that `J_F` keeps one sign and stays away from zero on a
    /// sample grid of `[0,1]³`.
    pub fn validate(&self) -> Result<()> {
        let n = 16;
        let mut sign = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=2 {
                    let xi = [i as f64 / n as f64, j as f64 / n as f64, k as f64 / 2.0];
                    let det = self.jacobian(xi).determinant();
                    if !det.is_finite() || det.abs() < SINGULAR_DET || det * sign < 0.0 {
                        return Err(Error::Singular { xi, det });
                    }
                    sign = det.signum();
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, xi: [f64; 3]) -> [f64; 3] {
        let [a, b, c] = xi;
        match *self {
            Mapping::Cartesian { lengths: l } => [l[0] * a, l[1] * b, l[2] * c],
            Mapping::Distorted { lengths: l, lp, eps } => {
                let d = eps * (lp * a).sin() * (2.0 * PI * b).sin();
                [l[0] * (a + d), l[1] * (b + d), l[2] * c]
            }
            Mapping::Cylindrical { r0, lr, lz } => {
                let r = r0 + lr * a;
                let (s, co) = (2.0 * PI * b).sin_cos();
                [r * co, r * s, lz * c]
            }
            Mapping::Elliptical { r0, lr, lz } => {
                let (s, co) = (2.0 * PI * b).sin_cos();
                [lr * (a + r0).cosh() * co, lr * (a + r0).sinh() * s, lz * c]
            }
        }
    }

    pub fn jacobian(&self, xi: [f64; 3]) -> Matrix3<f64> {
        let [a, b, _] = xi;
        let tp = 2.0 * PI;
        match *self {
            Mapping::Cartesian { lengths: l } => {
                Matrix3::new(l[0], 0.0, 0.0, 0.0, l[1], 0.0, 0.0, 0.0, l[2])
            }
            Mapping::Distorted { lengths: l, lp, eps } => {
                let (s1, c1) = (lp * a).sin_cos();
                let (s2, c2) = (tp * b).sin_cos();
                // `+ 0.0` turns a possible -0.0 into +0.0 so that ε = 0
                // reproduces the Cartesian map bit for bit
                let d1 = eps * lp * c1 * s2 + 0.0;
                let d2 = eps * s1 * tp * c2 + 0.0;
                Matrix3::new(
                    l[0] * (1.0 + d1),
                    l[0] * d2,
                    0.0,
                    l[1] * d1,
                    l[1] * (1.0 + d2),
                    0.0,
                    0.0,
                    0.0,
                    l[2],
                )
            }
            Mapping::Cylindrical { r0, lr, lz } => {
                let r = r0 + lr * a;
                let (s, c) = (tp * b).sin_cos();
                Matrix3::new(lr * c, -tp * r * s, 0.0, lr * s, tp * r * c, 0.0, 0.0, 0.0, lz)
            }
            Mapping::Elliptical { r0, lr, lz } => {
                let (sh, ch) = ((a + r0).sinh(), (a + r0).cosh());
                let (s, c) = (tp * b).sin_cos();
                Matrix3::new(
                    lr * sh * c,
                    -tp * lr * ch * s,
                    0.0,
                    lr * ch * s,
                    tp * lr * sh * c,
                    0.0,
                    0.0,
                    0.0,
                    lz,
                )
            }
        }
    }

    /// Metric data at `xi`; fails if `DF` is singular there.
    pub fn metric(&self, xi: [f64; 3]) -> Result<MetricData> {
        let md = self.metric_unchecked(xi);
        if !md.det.is_finite() || md.det.abs() < SINGULAR_DET {
            return Err(Error::Singular { xi, det: md.det });
        }
        Ok(md)
    }

    #[inline]
    pub fn metric_unchecked(&self, xi: [f64; 3]) -> MetricData {
        MetricData::from_jacobian(self.jacobian(xi))
    }

    /// `N(ξ)` alone.
    #[inline]
    pub fn inv_transpose(&self, xi: [f64; 3]) -> Matrix3<f64> {
        self.metric_unchecked(xi).n
    }

    /// Physical volume `∫ |J_F| dξ`, by Gauss quadrature on a fine grid.
    pub fn volume(&self) -> f64 {
        let rule = crate::quadrature::GaussLegendre::new(6);
        let n = 16;
        let mut vol = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
                for (x, wx) in rule.on_interval(a, a + 1.0 / n as f64) {
                    for (y, wy) in rule.on_interval(b, b + 1.0 / n as f64) {
                        vol += wx * wy * self.jacobian([x, y, 0.5]).determinant().abs();
                    }
                }
            }
        }
        vol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn families() -> Vec<Mapping> {
        let l = WEIBEL_LENGTH;
        vec![
            Mapping::cartesian([l, 1.5, 2.5]).unwrap(),
            Mapping::distorted([l, l, l], 2.0 * PI, 0.05).unwrap(),
            Mapping::distorted([3.0, 2.0, 1.0], PI / 2.0, 0.1).unwrap(),
            Mapping::cylindrical(0.5, 1.0, 1.0).unwrap(),
            Mapping::cylindrical(0.01, l - 0.01, l).unwrap(),
            Mapping::elliptical(0.05, 1.0, 2.0).unwrap(),
        ]
    }

    fn random_xi(rng: &mut ChaCha8Rng) -> [f64; 3] {
        [rng.random(), rng.random(), rng.random()]
    }

    #[test]
    fn cartesian_metric() {
        let l = WEIBEL_LENGTH;
        let m = Mapping::cartesian([l; 3]).unwrap();
        let md = m.metric([0.3, 0.2, 0.9]).unwrap();
        assert_eq!(md.df, Matrix3::from_diagonal_element(l));
        assert!((md.det - l * l * l).abs() < 1e-12);
        assert!((md.n - Matrix3::from_diagonal_element(1.0 / l)).abs().max() < 1e-15);
    }

    #[test]
    fn cylindrical_determinant_and_point() {
        let m = Mapping::cylindrical(0.5, 1.0, 1.0).unwrap();
        let md = m.metric([0.5, 0.0, 0.0]).unwrap();
        assert!((md.det - 2.0 * PI).abs() < 1e-12);
        let x = m.eval([1.0, 0.25, 0.0]);
        assert!(x[0].abs() < 1e-15 && (x[1] - 1.5).abs() < 1e-15 && x[2] == 0.0);
        // analytic determinant 2π Lr Lz (r0 + Lr ξ1)
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let xi = random_xi(&mut rng);
            let det = m.jacobian(xi).determinant();
            assert!((det - 2.0 * PI * (0.5 + xi[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn elliptical_determinant_and_ellipse() {
        let (r0, lr, lz) = (0.05, 1.3, 2.0);
        let m = Mapping::elliptical(r0, lr, lz).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let xi = random_xi(&mut rng);
            let det = m.jacobian(xi).determinant();
            let a = xi[0] + r0;
            let exact = 2.0 * PI * lr * lr * lz
                * (a.sinh().powi(2) + (2.0 * PI * xi[1]).sin().powi(2));
            assert!((det - exact).abs() < 1e-11 * exact.abs());
            let x = m.eval(xi);
            let (ax, ay) = (lr * a.cosh(), lr * a.sinh());
            assert!(((x[0] / ax).powi(2) + (x[1] / ay).powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distorted_boundary_undistorted() {
        let m = Mapping::distorted([2.0, 3.0, 4.0], 2.0 * PI, 0.05).unwrap();
        let x = m.eval([0.0, 0.37, 0.5]);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 3.0 * 0.37).abs() < 1e-15);
    }

    #[test]
    fn distorted_eps_zero_is_cartesian_bitwise() {
        let l = [WEIBEL_LENGTH, 1.7, 2.3];
        let c = Mapping::cartesian(l).unwrap();
        let d = Mapping::distorted(l, PI / 2.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let xi = random_xi(&mut rng);
            assert_eq!(c.eval(xi), d.eval(xi));
            assert_eq!(c.metric(xi).unwrap(), d.metric(xi).unwrap());
        }
    }

    #[test]
    fn radial_maps_reject_nonpositive_r0() {
        assert!(Mapping::cylindrical(0.0, 1.0, 1.0).is_err());
        assert!(Mapping::elliptical(-0.1, 1.0, 1.0).is_err());
        assert!(Mapping::cartesian([1.0, 0.0, 1.0]).is_err());
        // strong distortion folds the grid
        assert!(matches!(
            Mapping::distorted([1.0; 3], 2.0 * PI, 0.5),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for m in families() {
            for _ in 0..50 {
                let xi = [
                    rng.random_range(h..1.0 - h),
                    rng.random_range(h..1.0 - h),
                    rng.random_range(h..1.0 - h),
                ];
                let df = m.jacobian(xi);
                for j in 0..3 {
                    let mut p = xi;
                    let mut q = xi;
                    p[j] += h;
                    q[j] -= h;
                    let (fp, fq) = (m.eval(p), m.eval(q));
                    for i in 0..3 {
                        let fd = (fp[i] - fq[i]) / (2.0 * h);
                        assert!((fd - df[(i, j)]).abs() < 1e-6 * (1.0 + df[(i, j)].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn covariant_contravariant_relations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in families() {
            for _ in 0..50 {
                let md = m.metric(random_xi(&mut rng)).unwrap();
                let t: Vec<Vector3<f64>> = (0..3).map(|i| md.df.column(i).into()).collect();
                let n: Vec<Vector3<f64>> = (0..3).map(|i| md.n.column(i).into()).collect();
                let j = md.det;
                for i in 0..3 {
                    let (a, b) = ((i + 1) % 3, (i + 2) % 3);
                    // n_i = (t_a × t_b) / J and t_i = J (n_a × n_b)
                    assert!((n[i] - t[a].cross(&t[b]) / j).norm() <= 1e-12 * n[i].norm());
                    assert!((t[i] - n[a].cross(&n[b]) * j).norm() <= 1e-12 * t[i].norm());
                    for k in 0..3 {
                        let dot = t[i].dot(&n[k]);
                        let expect = if i == k { 1.0 } else { 0.0 };
                        assert!((dot - expect).abs() < 1e-12);
                    }
                }
                let g_inv = md.g.try_inverse().unwrap();
                assert!((md.g_inv - g_inv).abs().max() < 1e-12 * g_inv.abs().max());
            }
        }
    }

    #[test]
    fn piola_transforms() {
        let id = Mapping::cartesian([1.0; 3]).unwrap().metric([0.5; 3]).unwrap();
        let e = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(id.piola_covariant(&e), e);
        assert_eq!(id.piola_contravariant(&Vector3::new(0.0, 1.0, 0.0)), Vector3::new(0.0, 1.0, 0.0));
        let l = [2.0, 3.0, 5.0];
        let md = Mapping::cartesian(l).unwrap().metric([0.1; 3]).unwrap();
        let pe = md.piola_covariant(&e);
        for i in 0..3 {
            assert!((pe[i] - e[i] / l[i]).abs() < 1e-15);
        }
        let pb = md.piola_contravariant(&Vector3::new(1.0, 0.0, 0.0));
        assert!((pb[0] - 2.0 / 30.0).abs() < 1e-15 && pb[1] == 0.0 && pb[2] == 0.0);
    }

    #[test]
    fn volume_of_cylinder_shell() {
        let m = Mapping::cylindrical(0.5, 1.0, 2.0).unwrap();
        let exact = PI * (1.5f64.powi(2) - 0.25) * 2.0;
        assert!((m.volume() - exact).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn covariant_round_trip(a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64,
                                e in prop::array::uniform3(-10.0..10.0f64), which in 0usize..6) {
            let md = families()[which].metric([a, b, c]).unwrap();
            let e = Vector3::from(e);
            let back = md.df.transpose() * md.piola_covariant(&e);
            prop_assert!((back - e).norm() <= 1e-12 * (1.0 + e.norm()));
        }

        #[test]
        fn triple_product_permutes(u in prop::array::uniform3(-1.0..1.0f64),
                                   v in prop::array::uniform3(-1.0..1.0f64),
                                   w in prop::array::uniform3(-1.0..1.0f64)) {
            let (u, v, w) = (Vector3::from(u), Vector3::from(v), Vector3::from(w));
            let a = u.dot(&v.cross(&w));
            prop_assert!((a - v.dot(&w.cross(&u))).abs() < 1e-14);
            prop_assert!((a - w.dot(&u.cross(&v))).abs() < 1e-14);
            prop_assert!((a + u.dot(&w.cross(&v))).abs() < 1e-14);
        }
    }
}
