//! One-dimensional search helpers shared by the schedulers.

use crate::error::Result;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Best point found by [`golden_section_max`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineOptimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Golden-section search for the maximum of a unimodal `f` on [lo, hi].
///
/// Both endpoints are also evaluated, so optima on the boundary are found
/// exactly rather than approached within `tol`.
pub fn golden_section_max<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LineOptimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut best = LineOptimum {
        x: hi,
        value: f(hi)?,
        evaluations: 1,
    };
    let consider = |x: f64, v: f64, best: &mut LineOptimum| {
        best.evaluations += 1;
        if v > best.value {
            best.x = x;
            best.value = v;
        }
    };
    let v_lo = f(lo)?;
    consider(lo, v_lo, &mut best);
    if !(hi > lo) {
        return Ok(best);
    }

    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    consider(c, fc, &mut best);
    let mut fd = f(d)?;
    consider(d, fd, &mut best);
    for _ in 0..max_iters {
        if b - a <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            consider(d, fd, &mut best);
        }
    }
    Ok(best)
}

/// Largest x in [lo, hi] with `feasible(x)`, assuming feasibility is
/// monotone (true up to a threshold) and `feasible(lo)` holds. The returned
/// point is always a feasible one, within `tol` of the threshold.
pub fn largest_feasible<F>(
    mut feasible: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iters: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    if feasible(hi)? {
        return Ok(hi);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..max_iters {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if feasible(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(a)
}

/// Largest x in [lo, hi] with g(x) ≤ 0 for increasing g, given g(lo) ≤ 0 and
/// the value/derivative pair `at_hi` = (g(hi), g'(hi)) with g(hi) > 0.
///
/// Safeguarded Newton: steps that leave the bracket are replaced by
/// bisection, and steps that would stall near a bracket end are pushed half
/// a tolerance inside so that the bracket closes. `rel_tol` is relative to
/// the upper bracket end.
pub fn increasing_root<F>(
    mut g: F,
    lo: f64,
    hi: f64,
    at_hi: (f64, f64),
    rel_tol: f64,
    max_iters: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (mut a, mut b) = (lo, hi);
    let (mut x, (mut gx, mut dgx)) = (hi, at_hi);
    for _ in 0..max_iters {
        let tol = rel_tol * b;
        if b - a <= tol {
            break;
        }
        let mut next = if dgx > 0.0 { x - gx / dgx } else { f64::NAN };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if next - a < 0.5 * tol {
            next = a + 0.5 * tol;
        } else if b - next < 0.5 * tol {
            next = b - 0.5 * tol;
        }
        x = next;
        (gx, dgx) = g(x)?;
        if gx <= 0.0 {
            a = x;
        } else {
            b = x;
        }
    }
    Ok(a)
}

/// Root of a decreasing `g` on [lo, hi] with g(lo) > 0 > g(hi), by the
/// Illinois variant of regula falsi, to a bracket width of `rel_tol` times
/// the upper end. Returns whichever final bracket end has the smaller |g|.
pub fn decreasing_root<F>(
    mut g: F,
    lo: f64,
    g_lo: f64,
    hi: f64,
    g_hi: f64,
    rel_tol: f64,
    max_iters: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut ga, mut b, mut gb) = (lo, g_lo, hi, g_hi);
    // Unscaled values at the bracket ends.
    let (mut true_a, mut true_b) = (g_lo, g_hi);
    // Side that was retained last time: +1 for a, −1 for b.
    let mut side = 0i8;
    for _ in 0..max_iters {
        let tol = rel_tol * b;
        if b - a <= tol {
            break;
        }
        let mut x = (a * gb - b * ga) / (gb - ga);
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        if x - a < 0.5 * tol {
            x = a + 0.5 * tol;
        } else if b - x < 0.5 * tol {
            x = b - 0.5 * tol;
        }
        let gx = g(x)?;
        if gx == 0.0 {
            return Ok(x);
        }
        if gx > 0.0 {
            a = x;
            ga = gx;
            true_a = gx;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = x;
            gb = gx;
            true_b = gx;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    Ok(if true_a.abs() <= true_b.abs() { a } else { b })
}

/// Largest x in [lo, hi] with g(x) ≤ 0 for increasing g, given
/// g(lo) ≤ 0 < g(hi), by Illinois regula falsi to an absolute bracket width
/// `tol`. The returned point always satisfies g ≤ 0.
pub fn increasing_boundary<F>(
    mut g: F,
    lo: f64,
    g_lo: f64,
    hi: f64,
    g_hi: f64,
    tol: f64,
    max_iters: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut ga, mut b, mut gb) = (lo, g_lo, hi, g_hi);
    let mut side = 0i8;
    for _ in 0..max_iters {
        if b - a <= tol {
            break;
        }
        let mut x = (a * gb - b * ga) / (gb - ga);
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        x = x.clamp(a + 0.5 * tol, b - 0.5 * tol);
        let gx = g(x)?;
        if gx <= 0.0 {
            a = x;
            ga = gx;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = x;
            gb = gx;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_interior_and_boundary_maxima() {
        let r = golden_section_max(|x| Ok(-(x - 0.3f64).powi(2)), 0.0, 1.0, 1e-9, 200).unwrap();
        assert!((r.x - 0.3).abs() < 1e-8);
        let r = golden_section_max(|x| Ok(x), 0.0, 2.0, 1e-9, 200).unwrap();
        assert_eq!(r.x, 2.0);
        let r = golden_section_max(|x| Ok(-x), 0.0, 2.0, 1e-9, 200).unwrap();
        assert_eq!(r.x, 0.0);
    }

    #[test]
    fn golden_handles_plateau() {
        let r = golden_section_max(|x| Ok(x.min(0.4)), 0.0, 1.0, 1e-9, 200).unwrap();
        assert_eq!(r.value, 0.4);
    }

    #[test]
    fn feasible_boundary() {
        let x = largest_feasible(|x| Ok(x * x <= 2.0), 0.0, 4.0, 1e-12, 200).unwrap();
        assert!(x * x <= 2.0 && (x - 2f64.sqrt()).abs() < 1e-11);
        assert_eq!(
            largest_feasible(|_| Ok(true), 0.0, 4.0, 1e-12, 200).unwrap(),
            4.0
        );
    }

    #[test]
    fn newton_root_returns_feasible_side() {
        let g = |x: f64| Ok((x.exp() - 3.0, x.exp()));
        let x = increasing_root(g, 0.0, 5.0, g(5.0).unwrap(), 1e-10, 200).unwrap();
        assert!(x.exp() <= 3.0);
        assert!((x - 3f64.ln()).abs() < 1e-9);
        // Derivative-free fallback still converges.
        let h = |x: f64| Ok((x - 1.0, 0.0));
        let x = increasing_root(h, 0.0, 3.0, (2.0, 0.0), 1e-10, 200).unwrap();
        assert!(x <= 1.0 && 1.0 - x < 1e-10);
    }

    #[test]
    fn boundary_is_feasible_side() {
        let g = |x: f64| Ok(x.powi(3) - 2.0);
        let x = increasing_boundary(g, 0.0, -2.0, 2.0, 6.0, 1e-10, 200).unwrap();
        assert!(x.powi(3) <= 2.0 && (x - 2f64.cbrt()).abs() < 1e-10);
        // A step function still closes by bisection.
        let step = |x: f64| Ok(if x <= 0.3 { -1.0 } else { 1.0 });
        let x = increasing_boundary(step, 0.0, -1.0, 1.0, 1.0, 1e-9, 200).unwrap();
        assert!(x <= 0.3 && 0.3 - x < 1e-9);
    }

    #[test]
    fn illinois_root() {
        let g = |x: f64| Ok(1.0 - x.powi(3));
        let x = decreasing_root(g, 0.0, 1.0, 4.0, -63.0, 1e-12, 200).unwrap();
        assert!((x - 1.0).abs() < 1e-11);
    }
}
