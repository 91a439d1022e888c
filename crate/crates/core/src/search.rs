//! Derivative-free one-dimensional and coordinate-wise minimization for
//! convex objectives that may take the value `+inf` on infeasible points.
//!
//! Callers wrap their objective in a closure that records every probe, so
//! the final answer is always the best point actually evaluated; the
//! routines here only decide where to probe next.

/// Inverse golden ratio, `(sqrt(5) - 1) / 2`.
const INV_GOLDEN: f64 = 0.618_033_988_749_894_8;

const GOLDEN_MAX_ITERS: u32 = 240;

/// Minimize a convex `f` along the line, starting from a point where `f`
/// is finite. Returns the final probe `(x, f(x))`.
///
/// The bracket grows geometrically downhill from `anchor` (at most
/// `max_expand` doublings), infinite-valued ends are pulled back to the
/// feasible region by bisection against the anchor, and the interior is
/// then shrunk by golden section until it is narrower than `tol`.
pub(crate) fn golden_min_1d<F: FnMut(f64) -> f64>(
    f: &mut F,
    anchor: f64,
    scale: f64,
    tol: f64,
    max_expand: u32,
) -> (f64, f64) {
    let f0 = f(anchor);
    if !f0.is_finite() {
        return (anchor, f0);
    }
    let step = scale.abs().max(tol.abs() * 8.0).max(1e-12);

    let mut feasible = anchor; // some point with finite value inside the bracket
    let f_r = f(anchor + step);
    let f_l = f(anchor - step);
    let (lo, hi) = if f_r < f0 || f_l < f0 {
        let dir = if f_r < f_l { 1.0 } else { -1.0 };
        let mut prev = anchor;
        let mut cur = anchor + dir * step;
        let mut f_cur = if dir > 0.0 { f_r } else { f_l };
        let mut st = step;
        let mut next = cur;
        for _ in 0..max_expand {
            st *= 2.0;
            next = cur + dir * st;
            if !next.is_finite() {
                break;
            }
            let f_next = f(next);
            if f_next >= f_cur {
                break;
            }
            prev = cur;
            cur = next;
            f_cur = f_next;
        }
        feasible = cur;
        (prev.min(next), prev.max(next))
    } else {
        (anchor - step, anchor + step)
    };

    let lo = pull_to_feasible(f, lo, feasible);
    let hi = pull_to_feasible(f, hi, feasible);
    golden_section(f, lo, hi, tol)
}

/// Minimize a convex `f` on `[lo, hi]` given a feasible `anchor` inside.
pub(crate) fn golden_min_bounded<F: FnMut(f64) -> f64>(
    f: &mut F,
    lo: f64,
    hi: f64,
    anchor: f64,
    tol: f64,
) -> (f64, f64) {
    let lo = pull_to_feasible(f, lo, anchor);
    let hi = pull_to_feasible(f, hi, anchor);
    golden_section(f, lo, hi, tol)
}

/// If `f(end)` is infinite, bisect between `end` and the feasible `anchor`
/// until the end sits just inside the feasible region. The feasible set of
/// a convex extended-real function is an interval, so this is sound.
fn pull_to_feasible<F: FnMut(f64) -> f64>(f: &mut F, end: f64, anchor: f64) -> f64 {
    if f(end).is_finite() {
        return end;
    }
    let mut bad = end;
    let mut good = anchor;
    for _ in 0..80 {
        let mid = 0.5 * (bad + good);
        if mid == bad || mid == good {
            break;
        }
        if f(mid).is_finite() {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

fn golden_section<F: FnMut(f64) -> f64>(f: &mut F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut b = hi - INV_GOLDEN * (hi - lo);
    let mut c = lo + INV_GOLDEN * (hi - lo);
    let mut fb = f(b);
    let mut fc = f(c);
    let mut iters = 0;
    while hi - lo > tol && iters < GOLDEN_MAX_ITERS {
        if fb <= fc {
            hi = c;
            c = b;
            fc = fb;
            b = hi - INV_GOLDEN * (hi - lo);
            fb = f(b);
        } else {
            lo = b;
            b = c;
            fb = fc;
            c = lo + INV_GOLDEN * (hi - lo);
            fc = f(c);
        }
        iters += 1;
    }
    let mid = 0.5 * (lo + hi);
    (mid, f(mid))
}

/// Cyclic coordinate descent: golden-section one coordinate at a time until
/// a full sweep moves less than `tol` or the sweep cap is hit. The cap is a
/// hard stop; for non-smooth objectives coordinate descent can stall, so
/// callers should combine this with pattern probes of their own.
pub(crate) fn coordinate_min<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    start: &[f64],
    scale: f64,
    tol: f64,
    max_sweeps: u32,
    max_expand: u32,
) -> Vec<f64> {
    let dim = start.len();
    let mut z = start.to_vec();
    let mut buf = z.clone();
    for _ in 0..max_sweeps {
        let mut moved = 0.0f64;
        for i in 0..dim {
            buf.copy_from_slice(&z);
            let (xi, _) = golden_min_1d(&mut |x| {
                buf[i] = x;
                f(&buf)
            }, z[i], scale, tol, max_expand);
            moved = moved.max((xi - z[i]).abs());
            z[i] = xi;
        }
        if moved < tol {
            break;
        }
    }
    z
}
