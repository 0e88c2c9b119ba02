//! Numerical integration: globally adaptive Gauss–Kronrod (7/15) on finite
//! intervals with caller-supplied breakpoints, and Gauss–Laguerre rules for
//! exponentially weighted half-line integrals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Tolerances for the conditional expected-error integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Multiplier k of the upper truncation ρ²γ̂ + k(2√(ρ²γ̂·γ̄(1−ρ²)) + γ̄(1−ρ²)).
    pub tail_cutoff_sigma: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-7,
            abs_tol: 1e-12,
            max_subdivisions: 2000,
            tail_cutoff_sigma: 40.0,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1e-10..=1e-3).contains(&self.rel_tol) {
            return Err(Error::config(format!(
                "rel_tol must lie in [1e-10, 1e-3], got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol < 1e-3) {
            return Err(Error::config(format!(
                "abs_tol must lie in (0, 1e-3), got {}",
                self.abs_tol
            )));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::config("max_subdivisions must be positive"));
        }
        if !(self.tail_cutoff_sigma > 0.0) {
            return Err(Error::config("tail_cutoff_sigma must be positive"));
        }
        Ok(())
    }
}

/// Result of an adaptive integration. Component 0 drives error control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<const N: usize> {
    pub value: [f64; N],
    pub abs_err: f64,
    pub subdivisions: usize,
}

// Kronrod nodes (descending, last is the centre) and weights; Gauss 7-point
// nodes are the odd-indexed Kronrod nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gauss_kronrod_15<const N: usize, F>(f: &mut F, a: f64, b: f64) -> ([f64; N], f64)
where
    F: FnMut(f64) -> [f64; N],
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = [0.0; N];
    let mut gauss = [0.0; N];

    let fc = f(centre);
    for c in 0..N {
        kronrod[c] = WGK[7] * fc[c];
        gauss[c] = WG[3] * fc[c];
    }
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        for c in 0..N {
            let s = f1[c] + f2[c];
            kronrod[c] += wk * s;
            if j % 2 == 1 {
                gauss[c] += WG[j / 2] * s;
            }
        }
    }
    for c in 0..N {
        kronrod[c] *= half;
        gauss[c] *= half;
    }
    let err = (kronrod[0] - gauss[0]).abs();
    (kronrod, err)
}

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    err: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Integrates `f` over the sorted `points` (at least two), bisecting the
/// segment with the largest error estimate until the summed estimate drops
/// below max(abs_tol, rel_tol·|I|).
pub fn integrate<const N: usize, F>(
    mut f: F,
    points: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<Integral<N>>
where
    F: FnMut(f64) -> [f64; N],
{
    if points.len() < 2 {
        return Err(Error::domain("integration needs at least two points"));
    }
    let mut heap = BinaryHeap::with_capacity(points.len() + 2 * max_subdivisions.min(4096));
    let mut total = [0.0; N];
    let mut total_err = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let (value, err) = gauss_kronrod_15(&mut f, a, b);
        for c in 0..N {
            total[c] += value[c];
        }
        total_err += err;
        heap.push(Segment { a, b, value, err });
    }

    let mut subdivisions = 0;
    loop {
        let target = abs_tol.max(rel_tol * total[0].abs());
        if total_err <= target {
            break;
        }
        if subdivisions >= max_subdivisions {
            return Err(Error::Accuracy {
                context: "adaptive quadrature",
                achieved: total_err,
                target,
            });
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // Interval exhausted at machine resolution; nothing left to refine.
            return Err(Error::Accuracy {
                context: "adaptive quadrature (interval underflow)",
                achieved: total_err,
                target,
            });
        }
        let (left, el) = gauss_kronrod_15(&mut f, worst.a, mid);
        let (right, er) = gauss_kronrod_15(&mut f, mid, worst.b);
        for c in 0..N {
            total[c] += left[c] + right[c] - worst.value[c];
        }
        total_err += el + er - worst.err;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: left,
            err: el,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: right,
            err: er,
        });
        subdivisions += 1;
    }

    // Re-sum to shed drift from the incremental updates.
    let mut value = [0.0; N];
    let mut abs_err = 0.0;
    for s in heap.iter() {
        for c in 0..N {
            value[c] += s.value[c];
        }
        abs_err += s.err;
    }
    Ok(Integral {
        value,
        abs_err,
        subdivisions,
    })
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(
    mut f: F,
    points: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate(|x| [f(x)], points, rel_tol, abs_tol, max_subdivisions)?;
    Ok((r.value[0], r.abs_err))
}

/// Gauss–Laguerre rule: ∫₀^∞ e^{-x} g(x) dx ≈ Σ wᵢ g(xᵢ).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLaguerre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLaguerre {
    /// Nodes by Newton iteration on the three-term recurrence of Lₙ.
    pub fn new(order: usize) -> Result<Self> {
        if !(2..=120).contains(&order) {
            return Err(Error::domain(format!(
                "Gauss-Laguerre order must be in [2, 120], got {order}"
            )));
        }
        let n = order;
        let nf = n as f64;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut z = 0.0_f64;
        for i in 0..n {
            z = match i {
                0 => 3.0 / (1.0 + 2.4 * nf),
                1 => z + 15.0 / (1.0 + 2.5 * nf),
                _ => {
                    let ai = (i - 1) as f64;
                    z + ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - nodes[i - 2])
                }
            };
            let mut derivative = 0.0;
            let mut previous = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf + 1.0 - z) * p2 - jf * p3) / (jf + 1.0);
                }
                derivative = (nf * p1 - nf * p2) / z;
                previous = p2;
                let step = p1 / derivative;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes.push(z);
            weights.push(-1.0 / (derivative * nf * previous));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Accuracy {
                context: "Gauss-Laguerre node construction",
                achieved: f64::NAN,
                target: 0.0,
            });
        }
        Ok(GaussLaguerre { nodes, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_weights_sum_to_interval_length() {
        let k: f64 = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
        let g: f64 = 2.0 * WG[..3].iter().sum::<f64>() + WG[3];
        assert!((k - 2.0).abs() < 1e-15);
        assert!((g - 2.0).abs() < 1e-15);
    }

    #[test]
    fn exact_for_polynomials() {
        // Kronrod 15 is exact through degree 22 (odd degree 23 by symmetry).
        for deg in 0..=22 {
            let (v, _) = gauss_kronrod_15(&mut |x: f64| [x.powi(deg)], 0.0, 1.0);
            let want = 1.0 / (deg as f64 + 1.0);
            assert!((v[0] - want).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn adaptive_handles_sharp_features() {
        let (v, err) =
            integrate_scalar(|x| 1.0 / (1e-4 + x * x), &[-1.0, 1.0], 1e-10, 1e-14, 500).unwrap();
        let want = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((v - want).abs() < 1e-8 * want, "{v} vs {want}, err {err}");

        let (v, _) = integrate_scalar(|x| x.sqrt(), &[0.0, 1.0], 1e-10, 1e-14, 500).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn breakpoints_and_vector_components() {
        let r = integrate(|x| [x.exp(), x], &[0.0, 0.5, 2.0], 1e-12, 1e-15, 100).unwrap();
        assert!((r.value[0] - (2f64.exp() - 1.0)).abs() < 1e-12);
        assert!((r.value[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reports_accuracy_failure() {
        let out = integrate_scalar(|x| (1.0 / x).sin(), &[1e-9, 1.0], 1e-12, 1e-15, 3);
        assert!(matches!(out, Err(Error::Accuracy { .. })));
    }

    #[test]
    fn laguerre_rule_integrates_moments() {
        let rule = GaussLaguerre::new(24).unwrap();
        let mut fact = 1.0;
        for k in 0..20 {
            if k > 0 {
                fact *= k as f64;
            }
            let s: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.powi(k))
                .sum();
            assert!((s / fact - 1.0).abs() < 1e-11, "moment {k}: {s} vs {fact}");
        }
        let s: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * (-x).exp())
            .sum();
        assert!((s - 0.5).abs() < 1e-8);
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec::default().validate().is_ok());
        let bad = QuadratureSpec {
            rel_tol: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
