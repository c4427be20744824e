//! Local optimizers used by the outer (θ) problem.

/// Result of one local run.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOptions {
    /// Gradient sup-norm (BFGS) or simplex diameter (Nelder–Mead).
    pub tol: f64,
    pub max_iter: usize,
    /// Length of the first trial step.
    pub initial_step: f64,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quasi-Newton ascent with an inverse-Hessian BFGS update and Armijo
/// backtracking.
///
/// `value` returns `None` where the objective is undefined; `gradient` is only
/// queried at points whose value has been accepted.
pub fn bfgs_maximize<V, G>(
    mut value: V,
    mut gradient: G,
    x0: &[f64],
    opts: &LocalOptions,
) -> Option<LocalOutcome>
where
    V: FnMut(&[f64]) -> Option<f64>,
    G: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut fx = value(&x)?;
    let mut gx = gradient(&x)?;
    // Inverse Hessian of −f; starts as a scaled identity.
    let mut h = vec![0.0; d * d];
    let mut fresh = true;
    let reset = |h: &mut Vec<f64>, g: &[f64]| {
        let scale = opts.initial_step / sup_norm(g).max(f64::MIN_POSITIVE);
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            h[i * d + i] = scale;
        }
    };
    reset(&mut h, &gx);

    for iter in 0..opts.max_iter {
        if sup_norm(&gx) <= opts.tol {
            return Some(LocalOutcome { x, value: fx, converged: true, iterations: iter });
        }
        // ascent direction p = H ∇f
        let mut p: Vec<f64> = (0..d).map(|i| dot(&h[i * d..(i + 1) * d], &gx)).collect();
        let mut slope = dot(&gx, &p);
        if slope <= 0.0 || !slope.is_finite() {
            reset(&mut h, &gx);
            fresh = true;
            p = (0..d).map(|i| h[i * d + i] * gx[i]).collect();
            slope = dot(&gx, &p);
        }

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            if let Some(ft) = value(&trial) {
                if ft >= fx + ARMIJO_C * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if !fresh {
                reset(&mut h, &gx);
                fresh = true;
                continue;
            }
            return Some(LocalOutcome { x, value: fx, converged: false, iterations: iter });
        };
        let Some(gn) = gradient(&xn) else {
            return Some(LocalOutcome { x, value: fx, converged: false, iterations: iter });
        };

        // update for −f: s = Δx, y = −Δ∇f
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gx.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy.is_finite() {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d {
                    h[i * d + i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        x = xn;
        fx = fnew;
        gx = gn;
    }
    let converged = sup_norm(&gx) <= opts.tol;
    Some(LocalOutcome { x, value: fx, converged, iterations: opts.max_iter })
}

/// `H ← (I − ρ s y') H (I − ρ y s') + ρ s s'` with `ρ = 1/(s'y)`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..d).map(|i| dot(&h[i * d..(i + 1) * d], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Nelder–Mead simplex descent. Infeasible points should evaluate to `+∞`.
///
/// Returns `None` when the starting point itself is infeasible.
pub fn nelder_mead_minimize<F>(mut f: F, x0: &[f64], opts: &LocalOptions) -> Option<LocalOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let f0 = f(x0);
    if !f0.is_finite() {
        return None;
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for j in 0..d {
        let mut v = x0.to_vec();
        v[j] += opts.initial_step;
        let fv = f(&v);
        simplex.push((v, fv));
    }

    let diameter = |s: &[(Vec<f64>, f64)]| {
        let best = &s[0].0;
        s[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(best).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0f64, f64::max)
    };
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.total_cmp(&b.1));
    };

    for iter in 0..opts.max_iter {
        order(&mut simplex);
        let scale = sup_norm(&simplex[0].0).max(1.0);
        if diameter(&simplex) <= opts.tol * scale {
            let (x, value) = simplex.swap_remove(0);
            return Some(LocalOutcome { x, value, converged: true, iterations: iter });
        }
        let worst = simplex[d].clone();
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|(v, _)| v[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(0.5);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = f(&xc);
            (xc, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let v: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
            let fv = f(&v);
            *vertex = (v, fv);
        }
    }
    order(&mut simplex);
    let (x, value) = simplex.swap_remove(0);
    Some(LocalOutcome { x, value, converged: false, iterations: opts.max_iter })
}
