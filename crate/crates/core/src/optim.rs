//! Nelder–Mead simplex minimisation.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop when the spread of function values over the simplex falls below this.
    pub f_tol: f64,
    /// ...and the largest vertex distance from the best vertex falls below this.
    pub x_tol: f64,
    pub max_evals: usize,
    /// Edge length of the initial simplex.
    pub step: f64,
    /// Restarts from the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-10,
            x_tol: 1e-8,
            max_evals: 2000,
            step: 0.5,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimises `f` from `x0`. Non-finite values are treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best = Minimum {
        x: x0.to_vec(),
        f: eval(x0),
        evals: 1,
        converged: false,
    };
    let mut step = opts.step;
    for _ in 0..=opts.restarts {
        let budget = opts.max_evals.saturating_sub(best.evals);
        if budget == 0 {
            break;
        }
        let run = simplex_search(&mut eval, &best.x, best.f, step, budget, opts);
        let improved = run.f < best.f - opts.f_tol;
        best.evals += run.evals;
        if run.f <= best.f {
            best.x = run.x;
            best.f = run.f;
        }
        best.converged = run.converged;
        if !improved && run.converged {
            break;
        }
        step *= 0.5;
    }
    best
}

fn simplex_search<F>(
    eval: &mut F,
    x0: &[f64],
    f0: f64,
    step: f64,
    budget: usize,
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = eval(&x);
        evals += 1;
        simplex.push((x, fx));
    }

    let mut converged = false;
    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= opts.f_tol && size <= opts.x_tol {
            converged = true;
            break;
        }
        if size <= opts.x_tol * 1e-3 {
            // Collapsed simplex with infinite values around it; nothing more to learn.
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (w - c)).collect()
        };
        let worst = simplex[n].0.clone();
        let reflected = along(-1.0, &worst);
        let fr = eval(&reflected);
        evals += 1;

        if fr < simplex[0].1 {
            let expanded = along(-2.0, &worst);
            let fe = eval(&expanded);
            evals += 1;
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = along(-0.5, &worst);
                let fc = eval(&c);
                (c, fc)
            } else {
                let c = along(0.5, &worst);
                let fc = eval(&c);
                (c, fc)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let fx = eval(&x);
                    *vertex = (x, fx);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum {
        x,
        f,
        evals,
        converged,
    }
}
