//! Geometric edge bases in f64: the sine radial basis over distance, the
//! spherical (distance, angle) basis built from spherical Bessel roots, and
//! the Gaussian radial alternative used by the rbf ablation.

use std::f64::consts::PI;

use crate::config::BasisConfig;
use crate::{Error, Result};

/// Spherical Bessel function of the first kind, j_l(x), for x >= 0.
///
/// Upward recurrence is stable once x exceeds l; below that the downward
/// Miller recurrence is run from a padded start order and normalized
/// against j_0.
pub fn sph_bessel(l: usize, x: f64) -> f64 {
    if x < 1e-8 {
        // Leading series term; the next term is O(x^2) relative.
        let mut df = 1.0;
        for k in 0..l {
            df *= x / (2 * k + 3) as f64;
        }
        return df * (1.0 - x * x / (2.0 * (2.0 * l as f64 + 3.0)));
    }
    let j0 = x.sin() / x;
    if l == 0 {
        return j0;
    }
    let j1 = j0 / x - x.cos() / x;
    if l == 1 {
        return j1;
    }
    if x > l as f64 {
        let (mut prev, mut cur) = (j0, j1);
        for k in 1..l {
            let next = (2 * k + 1) as f64 / x * cur - prev;
            prev = cur;
            cur = next;
        }
        cur
    } else {
        let start = l + 16 + x as usize;
        let mut above = 0.0_f64;
        let mut cur = 1e-280_f64;
        let mut saved = 0.0_f64;
        for k in (0..start).rev() {
            let below = (2 * k + 3) as f64 / x * cur - above;
            above = cur;
            cur = below;
            if k == l {
                saved = cur;
            }
            if cur.abs() > 1e280 {
                cur *= 1e-280;
                above *= 1e-280;
                saved *= 1e-280;
            }
        }
        saved * (j0 / cur)
    }
}

/// Legendre polynomial P_l(x) by the three-term recurrence.
fn legendre(l: usize, x: f64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for k in 1..l {
        let next = ((2 * k + 1) as f64 * x * cur - k as f64 * prev) / (k + 1) as f64;
        prev = cur;
        cur = next;
    }
    cur
}

/// Zonal spherical harmonic Y_l^0 with `theta` as the polar angle.
pub fn y_l0(l: usize, theta: f64) -> f64 {
    ((2 * l + 1) as f64 / (4.0 * PI)).sqrt() * legendre(l, theta.cos())
}

fn bisect_root(l: usize, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = sph_bessel(l, lo);
    debug_assert!(f_lo * sph_bessel(l, hi) < 0.0, "bracket must straddle a root");
    for _ in 0..90 {
        let mid = 0.5 * (lo + hi);
        let f_mid = sph_bessel(l, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Positive roots z_ln of j_l, l = 0..=l_max, at least `n_per_l` per level.
/// Level l+1 roots interlace level l's, so each level brackets the next.
fn root_table(l_max: usize, n_per_l: usize) -> Vec<Vec<f64>> {
    let depth = n_per_l + l_max + 1;
    let mut table: Vec<Vec<f64>> = vec![(1..=depth).map(|n| n as f64 * PI).collect()];
    for l in 1..=l_max {
        let prev = &table[l - 1];
        let level =
            (0..prev.len() - 1).map(|i| bisect_root(l, prev[i], prev[i + 1])).collect();
        table.push(level);
    }
    table
}

/// Precomputed roots and normalization constants for one BasisConfig.
#[derive(Debug, Clone)]
pub struct Basis {
    cfg: BasisConfig,
    /// roots[l][n-1] = z_ln
    roots: Vec<Vec<f64>>,
    /// norms[l][n-1] = sqrt(2 / (c^3 j_{l+1}(z_ln)^2))
    norms: Vec<Vec<f64>>,
}

impl Basis {
    pub fn new(cfg: &BasisConfig) -> Self {
        let roots = root_table(cfg.l_sbf_max, cfg.n_sbf_radial);
        let c3 = cfg.cutoff.powi(3);
        let norms = roots
            .iter()
            .enumerate()
            .map(|(l, level)| {
                level
                    .iter()
                    .map(|&z| {
                        let j_next = sph_bessel(l + 1, z);
                        (2.0 / (c3 * j_next * j_next)).sqrt()
                    })
                    .collect()
            })
            .collect();
        Self { cfg: cfg.clone(), roots, norms }
    }

    pub fn config(&self) -> &BasisConfig {
        &self.cfg
    }

    pub fn root(&self, l: usize, n: usize) -> f64 {
        self.roots[l][n - 1]
    }

    fn check_domain(&self, r: f64) -> Result<()> {
        if r <= 0.0 || r > self.cfg.cutoff || !r.is_finite() {
            return Err(Error::BasisDomain { r, cutoff: self.cfg.cutoff });
        }
        Ok(())
    }

    /// Sine radial basis: component n = sqrt(2/c)·sin(nπr/c)/r, n = 1..n_bbf.
    pub fn bbf(&self, r: f64) -> Result<Vec<f64>> {
        self.check_domain(r)?;
        let c = self.cfg.cutoff;
        let norm = (2.0 / c).sqrt();
        Ok((1..=self.cfg.n_bbf)
            .map(|n| {
                let k = n as f64 * PI / c;
                if r < 1e-6 {
                    // sin(kr)/r via series: k·(1 − (kr)²/6 + (kr)⁴/120).
                    let x2 = (k * r) * (k * r);
                    norm * k * (1.0 - x2 / 6.0 + x2 * x2 / 120.0)
                } else {
                    norm * (k * r).sin() / r
                }
            })
            .collect())
    }

    /// Spherical basis, flat l-major: component (l, n) at index
    /// l·n_sbf_radial + (n−1) is norm_ln · j_l(z_ln·r/c) · Y_l^0(theta).
    pub fn sbf(&self, r: f64, theta: f64) -> Result<Vec<f64>> {
        self.check_domain(r)?;
        let c = self.cfg.cutoff;
        let mut out = Vec::with_capacity(self.cfg.sbf_len());
        for l in 0..=self.cfg.l_sbf_max {
            let y = y_l0(l, theta);
            for n in 1..=self.cfg.n_sbf_radial {
                let z = self.roots[l][n - 1];
                out.push(self.norms[l][n - 1] * sph_bessel(l, z * r / c) * y);
            }
        }
        Ok(out)
    }

    /// Gaussian radial basis: exp(−(r−μ_k)²/(2Δ²)) with n_bbf centers μ_k
    /// evenly spaced on (0, c] at spacing Δ = c/n_bbf.
    pub fn rbf(&self, r: f64) -> Result<Vec<f64>> {
        self.check_domain(r)?;
        let n = self.cfg.n_bbf;
        let spacing = self.cfg.cutoff / n as f64;
        let gamma = 1.0 / (2.0 * spacing * spacing);
        Ok((1..=n)
            .map(|k| {
                let mu = k as f64 * spacing;
                (-gamma * (r - mu) * (r - mu)).exp()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::BasisOracle;

    #[test]
    fn bessel_matches_closed_forms() {
        for &x in &[0.3f64, 0.7, 3.0, 12.0] {
            let j0 = x.sin() / x;
            let j1 = x.sin() / (x * x) - x.cos() / x;
            let j2 = (3.0 / (x * x * x) - 1.0 / x) * x.sin() - 3.0 / (x * x) * x.cos();
            assert!((sph_bessel(0, x) - j0).abs() < 1e-15, "j0({x})");
            assert!((sph_bessel(1, x) - j1).abs() < 1e-15, "j1({x})");
            assert!((sph_bessel(2, x) - j2).abs() < 1e-14, "j2({x})");
        }
    }

    #[test]
    fn bessel_matches_high_precision_oracle_in_miller_regime() {
        // x < l forces the downward recurrence.
        use crate::oracle::{dd_sph_bessel, Dd};
        for &(l, x) in &[(6usize, 2.0), (4, 3.5), (10, 1.0), (3, 0.05), (5, 4.9)] {
            let want = dd_sph_bessel(l, Dd::from(x)).to_f64();
            let got = sph_bessel(l, x);
            assert!(
                (got - want).abs() <= 1e-13 * want.abs().max(1e-3),
                "j_{l}({x}): got {got}, want {want}"
            );
        }
    }

    #[test]
    fn tiny_argument_series_branch() {
        use crate::oracle::{dd_sph_bessel, Dd};
        for &(l, x) in &[(0usize, 5e-9), (1, 5e-9), (3, 1e-9)] {
            let want = dd_sph_bessel(l, Dd::from(x)).to_f64();
            let got = sph_bessel(l, x);
            let denom = want.abs().max(f64::MIN_POSITIVE);
            assert!((got - want).abs() / denom < 1e-12, "j_{l}({x})");
        }
    }

    #[test]
    fn roots_match_oracle_values() {
        let basis = Basis::new(&BasisConfig::default());
        assert!((basis.root(0, 3) - 3.0 * PI).abs() < 1e-12);
        assert!((basis.root(1, 1) - 4.493409457909064).abs() < 1e-12);
        assert!((basis.root(3, 2) - 10.417118547379365).abs() < 1e-12);
        assert!((basis.root(6, 6) - 27.50786836490425).abs() < 1e-12);
    }

    #[test]
    fn bbf_reference_value_and_cutoff_zero() {
        let basis = Basis::new(&BasisConfig::default());
        let v = basis.bbf(2.5).unwrap();
        assert_eq!(v.len(), 8);
        assert!((v[0] - 0.25298221281347033).abs() < 1e-12);
        for (n, &z) in basis.bbf(5.0).unwrap().iter().enumerate() {
            assert!(z.abs() < 1e-12, "bbf(c)[{n}] = {z}");
        }
    }

    #[test]
    fn bbf_small_r_limit_and_continuity() {
        let basis = Basis::new(&BasisConfig::default());
        let c: f64 = 5.0;
        let v = basis.bbf(1e-9).unwrap();
        for (i, &got) in v.iter().enumerate() {
            let n = (i + 1) as f64;
            let limit = (2.0 / c).sqrt() * n * PI / c;
            assert!((got - limit).abs() / limit < 1e-9, "limit n={n}");
        }
        // The series branch hands over smoothly at the 1e-6 switch.
        let below = basis.bbf(1e-6 * (1.0 - 1e-12)).unwrap();
        let above = basis.bbf(1e-6 * (1.0 + 1e-12)).unwrap();
        for (a, b) in below.iter().zip(&above) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn domain_errors() {
        let basis = Basis::new(&BasisConfig::default());
        for bad in [0.0, -1.0, 5.0 + 1e-9, f64::NAN] {
            assert!(matches!(basis.bbf(bad), Err(Error::BasisDomain { .. })), "bbf({bad})");
            assert!(matches!(basis.sbf(bad, 0.3), Err(Error::BasisDomain { .. })));
            assert!(matches!(basis.rbf(bad), Err(Error::BasisDomain { .. })));
        }
        assert!(basis.bbf(5.0).is_ok(), "cutoff itself is inside the domain");
    }

    #[test]
    fn sbf_reference_value_and_l0_properties() {
        let basis = Basis::new(&BasisConfig::default());
        let v = basis.sbf(2.5, 1.234).unwrap();
        assert_eq!(v.len(), 42);
        assert!((v[0] - 0.07136496464611085).abs() < 1e-12, "component (n=1, l=0): {}", v[0]);

        // l = 0 components ignore theta.
        let a = basis.sbf(1.7, 0.2).unwrap();
        let b = basis.sbf(1.7, 2.9).unwrap();
        for n in 0..6 {
            assert_eq!(a[n], b[n], "l=0 theta dependence at n={n}");
        }
        // l = 0 at the cutoff hits j_0 roots.
        let edge = basis.sbf(5.0, 0.7).unwrap();
        for n in 0..6 {
            assert!(edge[n].abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_and_y_l0_match_oracle() {
        assert!((legendre(6, -0.85) - -0.40299566503906253).abs() < 1e-14);
        assert!((y_l0(4, 2.1) - -0.25098043249830154).abs() < 1e-14);
        assert!((y_l0(0, 1.9) - 0.5 / PI.sqrt()).abs() < 1e-16);
    }

    #[test]
    fn basis_matches_oracle_on_grid() {
        let cfg = BasisConfig::default();
        let basis = Basis::new(&cfg);
        let oracle = BasisOracle::new(cfg.cutoff, cfg.n_bbf, cfg.n_sbf_radial, cfg.l_sbf_max);
        for i in 0..10 {
            let r = cfg.cutoff * (i as f64 + 0.5) / 10.0;
            let bbf = basis.bbf(r).unwrap();
            let bbf_o = oracle.bbf(r);
            for (a, b) in bbf.iter().zip(&bbf_o) {
                assert!((a - b).abs() < 1e-9, "bbf r={r}");
            }
            for j in 0..5 {
                let theta = PI * j as f64 / 4.0;
                let sbf = basis.sbf(r, theta).unwrap();
                let sbf_o = oracle.sbf(r, theta);
                for (k, (a, b)) in sbf.iter().zip(&sbf_o).enumerate() {
                    assert!((a - b).abs() < 1e-9, "sbf r={r} theta={theta} [{k}]");
                }
            }
        }
    }

    #[test]
    fn rbf_peaks_at_centers() {
        let basis = Basis::new(&BasisConfig::default());
        let spacing = 5.0 / 8.0;
        for k in 1..=8usize {
            let v = basis.rbf(k as f64 * spacing).unwrap();
            assert_eq!(v.len(), 8);
            assert_eq!(v[k - 1], 1.0, "unit response at own center");
            for (j, &x) in v.iter().enumerate() {
                if j != k - 1 {
                    assert!(x < 1.0);
                }
            }
        }
    }
}
