//! Derivative-free minimization by the Nelder–Mead simplex method.
//!
//! Infeasible points are expressed by returning `+∞` (or NaN, treated the
//! same) from the objective.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Simplex diameter, per coordinate, below which the search stops.
    pub xtol: f64,
    /// Spread of objective values below which the search stops.
    pub ftol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 400,
            xtol: 1e-4,
            ftol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration; never increases.
    pub best_trace: Vec<f64>,
}

/// Minimizes `f` from `x0` with an initial simplex `x0 + steps[i]·e_i`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(steps.len(), dim);
    let mut evaluations = 0;
    let mut eval = |x: &[f64], evaluations: &mut usize| -> f64 {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(x0, &mut evaluations);
    simplex.push((x0.to_vec(), v0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x, &mut evaluations);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut best_trace = Vec::new();
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        best_trace.push(simplex[0].1);
        let best = &simplex[0];
        let xspread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let fspread = simplex[1..]
            .iter()
            .map(|(_, v)| (v - best.1).abs())
            .fold(0.0, f64::max);
        if best.1.is_finite() && xspread <= opts.xtol && fspread <= opts.ftol {
            converged = true;
            break;
        }
        if evaluations >= opts.max_evaluations {
            break;
        }
        iterations += 1;

        let worst = simplex[dim].clone();
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evaluations);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evaluations);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let contracted = if fr < worst.1 {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evaluations);
            (fc <= fr).then_some((xc, fc))
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evaluations);
            (fc < worst.1).then_some((xc, fc))
        };
        match contracted {
            Some(p) => simplex[dim] = p,
            None => {
                let anchor = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = anchor
                        .iter()
                        .zip(&p.0)
                        .map(|(a, b)| a + 0.5 * (b - a))
                        .collect();
                    let v = eval(&x, &mut evaluations);
                    *p = (x, v);
                }
            }
        }
    }

    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        evaluations,
        iterations,
        converged,
        best_trace,
    }
}
