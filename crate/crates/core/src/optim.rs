//! Solvers for objectives of the form `Σ_t loss_t(x) + R(x) + Σ_k λ_k |x_k|`.
//!
//! The smooth part is supplied through [`Objective`]; per-coordinate L1
//! weights are passed separately. The batch solver is OWL-QN (orthant-wise
//! L-BFGS); coordinates that would cross zero are clipped to exactly zero.
//! The mini-batch solver uses the cumulative L1 penalty with clipping.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{OptimizerSettings, Solver};
use crate::error::{Error, Result};
use crate::math::dot;

/// Terms per parallel work unit. Fixed so reductions do not depend on the thread count.
const CHUNK: usize = 2048;
/// Window for the relative-improvement stopping test.
const PAST: usize = 5;

/// A separable smooth objective.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn num_terms(&self) -> usize;

    /// Total observation weight behind the terms (views, events). Scales mini-batch steps.
    fn total_weight(&self) -> f64;

    /// Adds the gradient of data term `t` to `grad`, returns its loss.
    fn term(&self, x: &[f64], t: usize, grad: &mut [f64]) -> f64;

    /// Smooth regularizer; adds `scale * ∇R` to `grad` and returns `scale * R`.
    fn penalty(&self, _x: &[f64], _grad: &mut [f64], _scale: f64) -> f64 {
        0.0
    }

    /// Full smooth value and gradient (overwrites `grad`).
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.num_terms();
        let dim = self.dim();
        let partials: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = vec![0.0; dim];
                let mut loss = 0.0;
                for t in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    loss += self.term(x, t, &mut g);
                }
                (loss, g)
            })
            .collect();
        grad.fill(0.0);
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
        loss + self.penalty(x, grad, 1.0)
    }
}

/// Result of a minimization.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    /// Objective value including the L1 term.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn l1_term(x: &[f64], l1: &[f64]) -> f64 {
    x.iter().zip(l1).map(|(v, l)| l * v.abs()).sum()
}

/// Full objective value (smooth part plus L1).
pub fn objective_value<O: Objective>(obj: &O, x: &[f64], l1: &[f64]) -> f64 {
    let mut g = vec![0.0; obj.dim()];
    obj.value_grad(x, &mut g) + l1_term(x, l1)
}

/// Dispatches on `settings.solver`.
pub fn minimize<O: Objective>(
    obj: &O,
    x0: Vec<f64>,
    l1: &[f64],
    settings: &OptimizerSettings,
) -> Result<Minimum> {
    assert_eq!(x0.len(), obj.dim());
    assert_eq!(l1.len(), obj.dim());
    match settings.solver {
        Solver::Batch => owlqn(obj, x0, l1, settings),
        Solver::MiniBatch => minibatch(obj, x0, l1, settings),
    }
}

fn pseudo_gradient(x: &[f64], g: &[f64], l1: &[f64], out: &mut [f64]) {
    for k in 0..x.len() {
        let lam = l1[k];
        out[k] = if lam == 0.0 {
            g[k]
        } else if x[k] > 0.0 {
            g[k] + lam
        } else if x[k] < 0.0 {
            g[k] - lam
        } else if g[k] + lam < 0.0 {
            g[k] + lam
        } else if g[k] - lam > 0.0 {
            g[k] - lam
        } else {
            0.0
        };
    }
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns `-H q`.
fn lbfgs_direction(q: &[f64], hist: &VecDeque<Pair>) -> Vec<f64> {
    let mut r = q.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for p in hist.iter().rev() {
        let a = p.rho * dot(&p.s, &r);
        for (ri, yi) in r.iter_mut().zip(&p.y) {
            *ri -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = hist.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        r.iter_mut().for_each(|v| *v *= gamma);
    }
    for (p, a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &r);
        for (ri, si) in r.iter_mut().zip(&p.s) {
            *ri += (a - b) * si;
        }
    }
    r.iter_mut().for_each(|v| *v = -*v);
    r
}

fn owlqn<O: Objective>(
    obj: &O,
    mut x: Vec<f64>,
    l1: &[f64],
    settings: &OptimizerSettings,
) -> Result<Minimum> {
    let n = x.len();
    let has_l1 = l1.iter().any(|&l| l > 0.0);
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g) + l1_term(&x, l1);
    if !f.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective at the starting point is {f}"
        )));
    }
    let mut pg = vec![0.0; n];
    let mut hist: VecDeque<Pair> = VecDeque::with_capacity(settings.memory);
    let mut past: VecDeque<f64> = VecDeque::from([f]);
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iter {
        pseudo_gradient(&x, &g, l1, &mut pg);
        let pg_norm = dot(&pg, &pg).sqrt();
        if pg_norm == 0.0 {
            converged = true;
            break;
        }
        let mut d = lbfgs_direction(&pg, &hist);
        if has_l1 {
            for k in 0..n {
                if l1[k] > 0.0 && d[k] * pg[k] >= 0.0 {
                    d[k] = 0.0;
                }
            }
        }
        if dot(&d, &pg) >= 0.0 {
            hist.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let orthant: Vec<f64> = if has_l1 {
            x.iter()
                .zip(&pg)
                .map(|(&xi, &p)| if xi != 0.0 { xi.signum() } else { -p.signum() })
                .collect()
        } else {
            Vec::new()
        };

        let mut step = if hist.is_empty() {
            (1.0 / pg_norm).min(1.0)
        } else {
            1.0
        };
        let mut fnew = f64::NAN;
        let mut accepted = false;
        for _ in 0..60 {
            for k in 0..n {
                let mut v = x[k] + step * d[k];
                if has_l1 && l1[k] > 0.0 && v * orthant[k] <= 0.0 {
                    v = 0.0;
                }
                xn[k] = v;
            }
            fnew = obj.value_grad(&xn, &mut gn) + l1_term(&xn, l1);
            let decrease: f64 = pg
                .iter()
                .zip(xn.iter().zip(&x))
                .map(|(p, (a, b))| p * (a - b))
                .sum();
            if fnew.is_finite() && fnew <= f + 1e-4 * decrease {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if hist.is_empty() {
                // no descent possible along the steepest direction
                converged = true;
                break;
            }
            hist.clear();
            continue;
        }

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if hist.len() == settings.memory {
                hist.pop_front();
            }
            hist.push_back(Pair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = fnew;

        if past.len() == PAST {
            let old = past.pop_front().unwrap();
            if (old - f) / f.abs().max(1.0) < settings.tolerance {
                past.push_back(f);
                converged = true;
                break;
            }
        }
        past.push_back(f);
    }
    Ok(Minimum {
        x,
        value: f,
        iterations,
        converged,
    })
}

fn minibatch<O: Objective>(
    obj: &O,
    mut x: Vec<f64>,
    l1: &[f64],
    settings: &OptimizerSettings,
) -> Result<Minimum> {
    let n = x.len();
    let terms = obj.num_terms();
    let weight = obj.total_weight().max(1.0);
    let mut best_f = objective_value(obj, &x, l1);
    if !best_f.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective at the starting point is {best_f}"
        )));
    }
    let mut best_x = x.clone();
    let mut prev_f = best_f;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..terms).collect();
    let mut grad = vec![0.0; n];
    // accumulated L1 penalty per unit λ, and what each coordinate has actually received
    let mut total_penalty = 0.0;
    let mut applied = vec![0.0; n];
    let mut converged = false;
    let mut epochs = 0;

    while epochs < settings.max_iter {
        order.shuffle(&mut rng);
        let eta = settings.step_size / (1.0 + settings.step_decay * epochs as f64);
        for batch in order.chunks(settings.batch_size) {
            grad.fill(0.0);
            for &t in batch {
                obj.term(&x, t, &mut grad);
            }
            let scale = terms as f64 / batch.len() as f64 / weight;
            grad.iter_mut().for_each(|v| *v *= scale);
            obj.penalty(&x, &mut grad, 1.0 / weight);
            for k in 0..n {
                x[k] -= eta * grad[k];
            }
            total_penalty += eta / weight;
            for k in 0..n {
                let lam = l1[k];
                if lam == 0.0 {
                    continue;
                }
                let z = x[k];
                let u = total_penalty * lam;
                if z > 0.0 {
                    x[k] = (z - (u + applied[k])).max(0.0);
                } else if z < 0.0 {
                    x[k] = (z + (u - applied[k])).min(0.0);
                }
                applied[k] += x[k] - z;
            }
        }
        epochs += 1;
        let f = objective_value(obj, &x, l1);
        if !f.is_finite() {
            return Err(Error::Diverged { epochs });
        }
        if f < best_f {
            best_f = f;
            best_x.copy_from_slice(&x);
        }
        if ((prev_f - f) / f.abs().max(1.0)).abs() < settings.tolerance {
            converged = true;
            break;
        }
        prev_f = f;
    }
    Ok(Minimum {
        x: best_x,
        value: best_f,
        iterations: epochs,
        converged,
    })
}
