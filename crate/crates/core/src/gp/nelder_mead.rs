//! Bounded Nelder-Mead simplex minimiser used for kernel MLE.

pub(crate) struct Options {
    pub max_evals: usize,
    pub f_tol: f64,
    pub initial_step: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_evals: 1500,
            f_tol: 1e-9,
            initial_step: 0.7,
        }
    }
}

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    pub evals: usize,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Minimises `f` over the box `[lo, hi]`. Points leaving the box are clamped
/// back onto it before evaluation. Non-finite objective values are treated
/// as `+inf`. The returned minimum is never worse than `f(start)`.
pub(crate) fn minimize<F>(mut f: F, start: &[f64], lo: &[f64], hi: &[f64], opts: &Options) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut x0 = start.to_vec();
    clamp_into(&mut x0, lo, hi);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), f0));
    for j in 0..dim {
        let mut x = x0.clone();
        let step = opts.initial_step.min(hi[j] - lo[j]);
        // step away from the nearer bound so the vertex is distinct
        x[j] = if x[j] + step <= hi[j] { x[j] + step } else { x[j] - step };
        clamp_into(&mut x, lo, hi);
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut centroid = vec![0.0; dim];
    let point = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        let mut p: Vec<f64> = c.iter().zip(w).map(|(ci, wi)| ci + t * (wi - ci)).collect();
        clamp_into(&mut p, lo, hi);
        p
    };

    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if worst.is_finite() && (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }

        let xr = point(&centroid, &simplex[dim].0, -alpha);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = point(&centroid, &simplex[dim].0, -gamma);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[dim].1 {
            let xc = point(&centroid, &xr, rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = point(&centroid, &simplex[dim].0, rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let xs = point(&best_x, &vertex.0, sigma);
            let fs = eval(&xs, &mut evals);
            *vertex = (xs, fs);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum { x, f, evals }
}
