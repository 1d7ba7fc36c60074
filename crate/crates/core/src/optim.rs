//! Derivative-free minimization.

/// Result of a Nelder-Mead run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Nelder-Mead simplex search with the standard coefficients (reflection 1,
/// expansion 2, contraction 0.5, shrink 0.5). Stops when the spread of
/// simplex values drops below `ftol` or after `max_iter` iterations.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, ftol: f64, max_iter: usize) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
    };
    let mut iterations = 0;
    while iterations < max_iter {
        order(&mut simplex);
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= ftol || (best.is_infinite() && worst.is_infinite()) {
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let towards = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = towards(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = towards(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let x = towards(-0.5);
            let v = f(&x);
            (x, v)
        } else {
            let x = towards(0.5);
            let v = f(&x);
            (x, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&x_best) {
                *xi = bi + 0.5 * (*xi - bi);
            }
            *v = f(x);
        }
    }
    order(&mut simplex);
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let m = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            0.1,
            1e-14,
            1_000,
        );
        assert!((m.x[0] - 1.0).abs() < 1e-5);
        assert!((m.x[1] + 0.5).abs() < 1e-5);
    }

    #[test]
    fn rosenbrock() {
        let m = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            0.5,
            1e-16,
            5_000,
        );
        assert!((m.x[0] - 1.0).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| (x[0] * 3.0).sin() + x[1].abs();
        let m = nelder_mead(f, &[0.3, 0.2], 0.05, 1e-12, 200);
        assert!(m.value <= f(&[0.3, 0.2]));
    }
}
