//! Real roots of low-degree polynomials in closed form.

use std::f64::consts::PI;

/// Roots whose imaginary part is below this (relative to the coefficient scale) count as real.
const IMAG_TOL: f64 = 1e-9;

/// Real roots of `a x + b`.
fn linear(a: f64, b: f64) -> Vec<f64> {
    if a == 0.0 {
        Vec::new()
    } else {
        vec![-b / a]
    }
}

/// Real roots of `a x^2 + b x + c`, ascending.
pub fn quadratic(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return linear(b, c);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // near-double root
        if -disc <= 1e-12 * (b * b + (4.0 * a * c).abs()) {
            return vec![-b / (2.0 * a)];
        }
        return Vec::new();
    }
    // stable form, avoids cancellation
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = if q == 0.0 { vec![0.0, 0.0] } else { vec![q / a, c / q] };
    r.sort_by(|x, y| x.total_cmp(y));
    r
}

/// Real roots of `a x^3 + b x^2 + c x + d`, ascending.
///
/// Uses the depressed cubic: three real roots via the trigonometric form, one via Cardano.
/// Each root gets two Newton polishing steps on the original polynomial.
pub fn cubic(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return quadratic(b, c, d);
    }
    let (b, c, d) = (b / a, c / a, d / a);
    // x = t - b/3, t^3 + p t + q = 0
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);

    let mut roots: Vec<f64> = if p.abs() < 1e-300 && q.abs() < 1e-300 {
        vec![-shift]
    } else if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        let mut r = vec![u + v - shift];
        // the complex pair is -(u+v)/2 +- i sqrt(3)/2 (u-v); keep it when nearly real
        let imag = 3f64.sqrt() / 2.0 * (u - v).abs();
        if imag <= IMAG_TOL * (1.0 + shift.abs()) {
            r.push(-(u + v) / 2.0 - shift);
        }
        r
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = if m == 0.0 { 0.0 } else { (3.0 * q / (p * m)).clamp(-1.0, 1.0) };
        let theta = arg.acos() / 3.0;
        (0..3).map(|k| m * (theta - 2.0 * PI * k as f64 / 3.0).cos() - shift).collect()
    };

    for r in roots.iter_mut() {
        for _ in 0..2 {
            let f = ((*r + b) * *r + c) * *r + d;
            let df = (3.0 * *r + 2.0 * b) * *r + c;
            if df != 0.0 {
                let step = f / df;
                if step.is_finite() {
                    *r -= step;
                }
            }
        }
    }
    roots.sort_by(|x, y| x.total_cmp(y));
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + x.abs()));
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn three_distinct_roots() {
        // (x-1)(x-2)(x-3)
        let r = cubic(1.0, -6.0, 11.0, -6.0);
        assert!(close(&r, &[1.0, 2.0, 3.0], 1e-12), "{r:?}");
    }

    #[test]
    fn single_real_root() {
        // (x-2)(x^2+1)
        let r = cubic(1.0, -2.0, 1.0, -2.0);
        assert!(close(&r, &[2.0], 1e-12), "{r:?}");
    }

    #[test]
    fn repeated_roots() {
        // (x-1)^2 (x+2)
        let r = cubic(1.0, 0.0, -3.0, 2.0);
        assert!(r.iter().any(|x| (x - 1.0).abs() < 1e-6), "{r:?}");
        assert!(r.iter().any(|x| (x + 2.0).abs() < 1e-12), "{r:?}");
        let r = cubic(2.0, -6.0, 6.0, -2.0);
        assert!(close(&r, &[1.0], 1e-5), "{r:?}");
    }

    #[test]
    fn degenerate_leading_terms() {
        assert!(close(&cubic(0.0, 1.0, -3.0, 2.0), &[1.0, 2.0], 1e-12));
        assert!(close(&cubic(0.0, 0.0, 2.0, -1.0), &[0.5], 1e-15));
        assert!(cubic(0.0, 0.0, 0.0, 1.0).is_empty());
        assert!(quadratic(1.0, 0.0, 1.0).is_empty());
    }

    proptest! {
        #[test]
        fn recovers_constructed_roots(r1 in -5.0f64..5.0, r2 in -5.0f64..5.0, r3 in -5.0f64..5.0, a in 0.1f64..10.0) {
            prop_assume!((r1 - r2).abs() > 1e-3 && (r2 - r3).abs() > 1e-3 && (r1 - r3).abs() > 1e-3);
            let b = -a * (r1 + r2 + r3);
            let c = a * (r1 * r2 + r1 * r3 + r2 * r3);
            let d = -a * r1 * r2 * r3;
            let mut want = vec![r1, r2, r3];
            want.sort_by(|x, y| x.total_cmp(y));
            let got = cubic(a, b, c, d);
            prop_assert!(close(&got, &want, 1e-7), "{:?} vs {:?}", got, want);
        }

        #[test]
        fn every_root_is_a_zero(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0, d in -10.0f64..10.0) {
            prop_assume!(a.abs() > 1e-3);
            for r in cubic(a, b, c, d) {
                let f = ((a * r + b) * r + c) * r + d;
                let s = a.abs() * r.abs().powi(3) + b.abs() * r * r + c.abs() * r.abs() + d.abs();
                prop_assert!(f.abs() <= 1e-9 * s.max(1.0), "f({r}) = {f}");
            }
        }
    }
}
