//! Central finite-difference checker used to validate backward rules.

use super::{Graph, Tensor, Var};
use crate::Result;

/// Outcome of comparing analytic against numeric gradients.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub checked: usize,
    pub passed: usize,
    pub worst_abs: f32,
    pub worst_rel: f32,
    /// Failed entries whose one-sided slopes disagree beyond the tolerance:
    /// the step crosses a kink (ReLU, max) or strong curvature, so the
    /// central difference is no derivative estimate there.
    pub nonsmooth: usize,
}

impl GradReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    /// Failures at entries where the loss is smooth within the step.
    pub fn smooth_failures(&self) -> usize {
        self.checked - self.passed - self.nonsmooth
    }
}

/// Builds the loss once per evaluation. `leaves` are the graph handles of
/// `params`, in order.
pub trait LossFn: FnMut(&mut Graph, &[Var]) -> Result<Var> {}
impl<F: FnMut(&mut Graph, &[Var]) -> Result<Var>> LossFn for F {}

/// Analytic gradients of `loss` w.r.t. each tensor in `params`.
pub fn analytic<F: LossFn>(params: &[Tensor], loss: &mut F) -> Result<Vec<Vec<f32>>> {
    let mut g = Graph::new();
    let leaves: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = loss(&mut g, &leaves)?;
    g.backward(out)?;
    Ok(leaves
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect())
}

fn evaluate<F: LossFn>(params: &[Tensor], loss: &mut F) -> Result<f64> {
    let mut g = Graph::new();
    let leaves: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = loss(&mut g, &leaves)?;
    Ok(g.value(out).item() as f64)
}

/// Central, right and left differences for every entry.
fn differences<F: LossFn>(params: &[Tensor], loss: &mut F, h: f32) -> Result<Vec<Vec<[f32; 3]>>> {
    let mut work = params.to_vec();
    let base = evaluate(&work, loss)?;
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grads = Vec::with_capacity(params[p].numel());
        for e in 0..params[p].numel() {
            let orig = work[p].data()[e];
            work[p].data_mut()[e] = orig + h;
            let up = evaluate(&work, loss)?;
            work[p].data_mut()[e] = orig - h;
            let down = evaluate(&work, loss)?;
            work[p].data_mut()[e] = orig;
            let h = h as f64;
            grads.push([((up - down) / (2.0 * h)) as f32, ((up - base) / h) as f32, ((base - down) / h) as f32]);
        }
        out.push(grads);
    }
    Ok(out)
}

/// Central differences with step `h` for every entry of every parameter.
pub fn numeric<F: LossFn>(params: &[Tensor], loss: &mut F, h: f32) -> Result<Vec<Vec<f32>>> {
    Ok(differences(params, loss, h)?.into_iter().map(|p| p.into_iter().map(|d| d[0]).collect()).collect())
}

fn within(x: f32, y: f32, abs_tol: f32, rel_tol: f32) -> bool {
    let err = (x - y).abs();
    err <= abs_tol || err <= rel_tol * x.abs().max(y.abs())
}

/// Compares the two routes entry by entry; an entry passes when its error is
/// within `abs_tol` or within `rel_tol` of the larger magnitude.
pub fn compare(analytic: &[Vec<f32>], numeric: &[Vec<f32>], abs_tol: f32, rel_tol: f32) -> GradReport {
    let mut report = GradReport { checked: 0, passed: 0, worst_abs: 0.0, worst_rel: 0.0, nonsmooth: 0 };
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.iter().zip(n) {
            let err = (x - y).abs();
            let rel = err / x.abs().max(y.abs()).max(f32::MIN_POSITIVE);
            report.checked += 1;
            if within(x, y, abs_tol, rel_tol) {
                report.passed += 1;
            } else {
                report.worst_rel = report.worst_rel.max(rel);
            }
            report.worst_abs = report.worst_abs.max(err);
        }
    }
    report
}

/// Full check at the default tolerance `max(1e-3 abs, 1e-2 rel)`, step 1e-3.
pub fn check<F: LossFn>(params: &[Tensor], mut loss: F) -> Result<GradReport> {
    let (abs_tol, rel_tol) = (1e-3, 1e-2);
    let a = analytic(params, &mut loss)?;
    let d = differences(params, &mut loss, 1e-3)?;
    let central: Vec<Vec<f32>> = d.iter().map(|p| p.iter().map(|x| x[0]).collect()).collect();
    let mut report = compare(&a, &central, abs_tol, rel_tol);
    for (a, d) in a.iter().flatten().zip(d.iter().flatten()) {
        let [c, right, left] = *d;
        if !within(*a, c, abs_tol, rel_tol) && !within(right, left, abs_tol, rel_tol) {
            report.nonsmooth += 1;
        }
    }
    Ok(report)
}
