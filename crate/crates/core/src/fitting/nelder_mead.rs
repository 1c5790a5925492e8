//! Nelder-Mead simplex search on the unit box `[0, 1]^d`.
//!
//! Trial points that leave the box are projected back onto it, so every
//! evaluated point is feasible.

/// Reflection, expansion, contraction and shrink coefficients.
const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

/// Edge length of the initial simplex in unit coordinates.
const INITIAL_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Largest vertex distance from the best vertex, per coordinate.
    pub xtol: f64,
    /// Objective spread relative to the best value.
    pub ftol: f64,
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub best_history: Vec<f64>,
}

fn project(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Restarts from the best point after convergence; a collapsed simplex
/// (common when it is pressed against a face of the box) gets a fresh
/// full-size one.
const MAX_RESTARTS: usize = 4;

pub fn minimize<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut obj = Counted { f, evals: 0 };
    let mut history = Vec::new();
    let mut start = x0.to_vec();
    project(&mut start);
    let (mut x, mut fx, mut converged) = run_simplex(&mut obj, &start, opts, &mut history);
    for _ in 0..MAX_RESTARTS {
        if !converged || obj.evals + x.len() + 1 >= opts.max_evals {
            break;
        }
        let (x2, f2, c2) = run_simplex(&mut obj, &x, opts, &mut history);
        let improved = f2 < fx - opts.ftol * fx.abs().max(1e-12);
        if f2 < fx {
            x = x2;
            fx = f2;
        }
        converged = c2;
        if !improved {
            break;
        }
    }
    if history.last().is_none_or(|h| fx < *h) {
        history.push(fx);
    }
    NelderMeadResult { x, f: fx, evals: obj.evals, converged, best_history: history }
}

fn run_simplex<F>(obj: &mut Counted<F>, start: &[f64], opts: &NelderMeadOptions, history: &mut Vec<f64>) -> (Vec<f64>, f64, bool)
where
    F: FnMut(&[f64]) -> f64,
{
    let d = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(start.to_vec());
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] = if v[i] + INITIAL_STEP <= 1.0 { v[i] + INITIAL_STEP } else { v[i] - INITIAL_STEP };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| obj.eval(v)).collect();

    let mut converged = false;
    let mut centroid = vec![0.0; d];
    let mut trial = vec![0.0; d];

    while obj.evals < opts.max_evals {
        // Stable sort keeps vertex order deterministic on ties.
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        history.push(values[0]);

        let f_spread = values[d] - values[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if values[0].is_finite()
            && f_spread <= opts.ftol * values[0].abs().max(1e-12)
            && x_spread <= opts.xtol
        {
            converged = true;
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / d as f64;
            }
        }

        let worst = simplex[d].clone();
        let along = |coef: f64, from: &[f64], trial: &mut Vec<f64>| {
            for k in 0..d {
                trial[k] = centroid[k] + coef * (from[k] - centroid[k]);
            }
            project(trial);
        };

        along(-ALPHA, &worst, &mut trial);
        let reflected = trial.clone();
        let f_r = obj.eval(&reflected);

        if f_r < values[0] {
            along(GAMMA, &reflected, &mut trial);
            let f_e = obj.eval(&trial);
            if f_e < f_r {
                simplex[d] = trial.clone();
                values[d] = f_e;
            } else {
                simplex[d] = reflected;
                values[d] = f_r;
            }
            continue;
        }
        if f_r < values[d - 1] {
            simplex[d] = reflected;
            values[d] = f_r;
            continue;
        }

        let (contracted, f_c, accept) = if f_r < values[d] {
            along(RHO, &reflected, &mut trial);
            let f_c = obj.eval(&trial);
            (trial.clone(), f_c, f_c <= f_r)
        } else {
            along(RHO, &worst, &mut trial);
            let f_c = obj.eval(&trial);
            (trial.clone(), f_c, f_c < values[d])
        };
        if accept {
            simplex[d] = contracted;
            values[d] = f_c;
            continue;
        }

        for i in 1..=d {
            if obj.evals >= opts.max_evals {
                break;
            }
            for k in 0..d {
                simplex[i][k] = simplex[0][k] + SIGMA * (simplex[i][k] - simplex[0][k]);
            }
            values[i] = obj.eval(&simplex[i]);
        }
    }

    let best = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    (simplex[best].clone(), values[best], converged)
}
