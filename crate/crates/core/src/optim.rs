//! Bounded Nelder-Mead simplex minimizer with multi-start, for the 1-3
//! parameter least-squares fits in this crate.

#[derive(Debug, Clone)]
pub struct NmOptions {
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions { max_iter: 2000, f_tol: 1e-12, x_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fval: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(lo, hi);
    }
}

/// Minimizes `f` starting from `x0`, keeping iterates inside `bounds`.
/// `scale` sets the initial simplex edge per coordinate.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: &[f64],
    bounds: &[(f64, f64)],
    opts: &NmOptions,
) -> NmResult {
    let dim = x0.len();
    assert_eq!(scale.len(), dim);
    assert_eq!(bounds.len(), dim);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    let mut start = x0.to_vec();
    clamp_into(&mut start, bounds);
    simplex.push(start.clone());
    for i in 0..dim {
        let mut v = start.clone();
        let step = if scale[i] != 0.0 { scale[i] } else { 0.1 * (1.0 + v[i].abs()) };
        v[i] += step;
        clamp_into(&mut v, bounds);
        if v == simplex[0] {
            v[i] -= 2.0 * step;
            clamp_into(&mut v, bounds);
        }
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap());
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim.saturating_sub(1).min(dim - 1)];

        let spread = (fvals[worst] - fvals[best]).abs();
        let size: f64 = (0..dim)
            .map(|i| {
                simplex.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max)
                    - simplex.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        if spread < opts.f_tol * (1.0 + fvals[best].abs()) && size < opts.x_tol {
            converged = true;
            break;
        }

        // centroid of all but the worst
        let mut centroid = vec![0.0; dim];
        for (k, v) in simplex.iter().enumerate() {
            if k == worst {
                continue;
            }
            for i in 0..dim {
                centroid[i] += v[i] / dim as f64;
            }
        }

        let mut reflected: Vec<f64> = (0..dim)
            .map(|i| centroid[i] + alpha * (centroid[i] - simplex[worst][i]))
            .collect();
        clamp_into(&mut reflected, bounds);
        let f_ref = f(&reflected);

        if f_ref < fvals[best] {
            let mut expanded: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + gamma * (reflected[i] - centroid[i]))
                .collect();
            clamp_into(&mut expanded, bounds);
            let f_exp = f(&expanded);
            if f_exp < f_ref {
                simplex[worst] = expanded;
                fvals[worst] = f_exp;
            } else {
                simplex[worst] = reflected;
                fvals[worst] = f_ref;
            }
        } else if f_ref < fvals[second_worst] {
            simplex[worst] = reflected;
            fvals[worst] = f_ref;
        } else {
            let mut contracted: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + rho * (simplex[worst][i] - centroid[i]))
                .collect();
            clamp_into(&mut contracted, bounds);
            let f_con = f(&contracted);
            if f_con < fvals[worst] {
                simplex[worst] = contracted;
                fvals[worst] = f_con;
            } else {
                // shrink toward the best vertex
                let best_point = simplex[best].clone();
                for k in 0..=dim {
                    if k == best {
                        continue;
                    }
                    for i in 0..dim {
                        simplex[k][i] = best_point[i] + sigma * (simplex[k][i] - best_point[i]);
                    }
                    clamp_into(&mut simplex[k], bounds);
                    fvals[k] = f(&simplex[k]);
                }
            }
        }
    }

    let best = (0..=dim)
        .min_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap())
        .unwrap();
    NmResult { x: simplex[best].clone(), fval: fvals[best], iterations, converged }
}

/// Runs Nelder-Mead from several starts and keeps the best minimum.
pub fn multi_start_nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    starts: &[Vec<f64>],
    scale: &[f64],
    bounds: &[(f64, f64)],
    opts: &NmOptions,
) -> NmResult {
    assert!(!starts.is_empty());
    let mut best: Option<NmResult> = None;
    for s in starts {
        let r = nelder_mead(&mut f, s, scale, bounds, opts);
        if best.as_ref().map_or(true, |b| r.fval < b.fval) {
            best = Some(r);
        }
    }
    best.unwrap()
}
