use crate::expr::{Expr, Tape, MAX_NPARAMS};

/// `n` evenly spaced points on `[lo, hi]`, both ends exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Per-axis point counts whose product is exactly `total`, as close to equal
/// as possible (smallest max/min ratio), largest count first.
pub fn square_factorization(total: usize, axes: usize) -> Vec<usize> {
    assert!(total >= 1 && axes >= 1);
    let mut best: Option<Vec<usize>> = None;
    let mut current = Vec::with_capacity(axes);
    search(total, axes, total, &mut current, &mut best);
    best.expect("1 x ... x total always works")
}

// Non-increasing factor sequences only, so each multiset is visited once.
fn search(rest: usize, axes_left: usize, cap: usize, current: &mut Vec<usize>, best: &mut Option<Vec<usize>>) {
    if axes_left == 1 {
        if rest <= cap {
            current.push(rest);
            let better = match best {
                None => true,
                Some(b) => ratio(current) < ratio(b),
            };
            if better {
                *best = Some(current.clone());
            }
            current.pop();
        }
        return;
    }
    for f in (1..=cap.min(rest)).rev() {
        if rest % f == 0 {
            current.push(f);
            search(rest / f, axes_left - 1, f, current, best);
            current.pop();
        }
    }
}

fn ratio(v: &[usize]) -> f64 {
    let max = *v.iter().max().unwrap() as f64;
    let min = *v.iter().min().unwrap() as f64;
    max / min
}

/// Evaluate `expr` (no free parameters) on the cartesian grid of the given
/// axes; the last axis varies fastest. Rows are `[y, x_0, x_1, ...]`.
pub fn sample_static_grid(expr: &Expr, ranges: &[(f64, f64)], points_per_axis: &[usize]) -> Vec<Vec<f64>> {
    assert_eq!(ranges.len(), points_per_axis.len());
    let axes: Vec<Vec<f64>> = ranges
        .iter()
        .zip(points_per_axis)
        .map(|(&(lo, hi), &n)| linspace(lo, hi, n))
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let tape = Tape::compile(expr);
    let params = [0.0; MAX_NPARAMS];
    let mut idx = vec![0usize; axes.len()];
    let mut rows = Vec::with_capacity(total);
    let mut x = vec![0.0; axes.len()];
    for _ in 0..total {
        for (k, axis) in axes.iter().enumerate() {
            x[k] = axis[idx[k]];
        }
        let mut row = Vec::with_capacity(axes.len() + 1);
        row.push(tape.eval(&x, &params));
        row.extend_from_slice(&x);
        rows.push(row);
        for k in (0..axes.len()).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(273.0, 573.0, 100)[99], 573.0);
        assert_eq!(linspace(2.0, 5.0, 1), vec![2.0]);
    }

    #[test]
    fn factorizations() {
        assert_eq!(square_factorization(5000, 1), vec![5000]);
        assert_eq!(square_factorization(5000, 2), vec![100, 50]);
        assert_eq!(square_factorization(5000, 3), vec![25, 20, 10]);
        assert_eq!(square_factorization(7, 2), vec![7, 1]);
        assert_eq!(square_factorization(36, 2), vec![6, 6]);
    }

    #[test]
    fn grid_order_and_values() {
        let v: Vec<String> = vec!["a".into(), "b".into()];
        let e = crate::expr::parse("a + 10*b", &v).unwrap();
        let rows = sample_static_grid(&e, &[(0.0, 1.0), (0.0, 2.0)], &[2, 3]);
        let ys: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        assert_eq!(ys, vec![0.0, 10.0, 20.0, 1.0, 11.0, 21.0]);
    }
}
