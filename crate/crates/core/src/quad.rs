//! Adaptive quadrature.

use crate::Real;

/// Adaptive Simpson rule with Richardson correction. `tol` is an absolute
/// error target for the whole interval.
pub fn adaptive_simpson<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, tol: T) -> T {
    if a == b {
        return T::zero();
    }
    let two = T::one() + T::one();
    let m = (a + b) / two;
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    let six = T::from(6.0).unwrap();
    let four = T::from(4.0).unwrap();
    (b - a) / six * (fa + four * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: u32) -> T {
    let two = T::one() + T::one();
    let fifteen = T::from(15.0).unwrap();
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= fifteen * tol || (m - a).abs() <= T::epsilon() * m.abs() {
        return left + right + delta / fifteen;
    }
    recurse(f, a, m, fa, flm, fm, left, tol / two, depth - 1) + recurse(f, m, b, fm, frm, fb, right, tol / two, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_exponential() {
        let v = adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 3.0, 1e-12);
        assert!((v - (1.0 - (-3.0f64).exp())).abs() < 1e-11);
    }

    #[test]
    fn works_in_f32() {
        let v = adaptive_simpson(&|x: f32| x * x, 0.0, 1.0, 1e-6);
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn reversed_interval_is_negative() {
        let v = adaptive_simpson(&|x: f64| x, 1.0, 0.0, 1e-12);
        assert!((v + 0.5).abs() < 1e-14);
    }
}
