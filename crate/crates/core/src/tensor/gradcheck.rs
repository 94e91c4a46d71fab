//! Central finite-difference verification of recorded gradients (f64 only).

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor for the relative error, so gradients that are
    /// zero up to round-off are compared absolutely.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (evenly strided).
    pub max_coords_per_param: Option<usize>,
    /// Use the fourth-order five-point stencil instead of the two-point
    /// central difference.
    pub five_point: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            tol: 1e-5,
            floor: 1e-6,
            max_coords_per_param: None,
            five_point: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose stencil crossed a kink (ReLU sign change or loss
    /// clamp), where finite differences do not estimate the derivative.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare the tape gradient of the scalar built by `f` against central
/// differences for every parameter in `store`: either `(f(θ+h) − f(θ−h)) / 2h`
/// or the five-point `(−f(θ+2h) + 8f(θ+h) − 8f(θ−h) + f(θ−2h)) / 12h`.
pub fn grad_check<F>(store: &ParamStore<f64>, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut tape = Tape::with_params(s);
        let loss = f(&mut tape)?;
        let v = tape.value(loss).data()[0];
        if v.is_finite() {
            Ok((v, tape.kink_signature()))
        } else {
            Err(Error::Numeric("non-finite loss in gradient check".into()))
        }
    };

    let (analytic, base) = {
        let mut tape = Tape::with_params(store);
        let loss = f(&mut tape)?;
        let (_, base) = eval(store)?;
        (tape.backward(loss)?.into_param_grads(), base)
    };

    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    let mut overall: f64 = 0.0;
    for id in store.ids() {
        let n = store.get(id).len();
        let coords = coordinates(n, opts.max_coords_per_param);
        let grad = analytic.get(id);
        let mut worst: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut skipped = 0;
        for &i in &coords {
            let Some(numeric) = central_difference(&mut work, id, i, opts.h, opts.five_point, base, &eval)? else {
                skipped += 1;
                continue;
            };
            let a = grad.map_or(0.0, |g| g[i]);
            max_abs = max_abs.max(a.abs());
            worst = worst.max(relative_error(a, numeric, opts.floor));
        }
        overall = overall.max(worst);
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            checked: coords.len() - skipped,
            skipped,
            max_rel_err: worst,
            max_abs_grad: max_abs,
        });
    }
    Ok(GradCheckReport {
        params,
        max_rel_err: overall,
        tol: opts.tol,
    })
}

fn coordinates(n: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < n => {
            // evenly strided, always including the last coordinate
            (0..k).map(|j| j * (n - 1) / (k - 1).max(1)).collect()
        }
        _ => (0..n).collect(),
    }
}

fn central_difference(
    work: &mut ParamStore<f64>,
    id: ParamId,
    i: usize,
    h: f64,
    five_point: bool,
    base: u64,
    eval: &impl Fn(&ParamStore<f64>) -> Result<(f64, u64)>,
) -> Result<Option<f64>> {
    let orig = work.get(id).data()[i];
    let offsets: &[(f64, f64)] = if five_point {
        &[(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)]
    } else {
        &[(1.0, 1.0), (-1.0, -1.0)]
    };
    let denom = if five_point { 12.0 * h } else { 2.0 * h };
    let mut acc = 0.0;
    let mut smooth = true;
    for &(k, w) in offsets {
        work.get_mut(id).data_mut()[i] = orig + k * h;
        let r = eval(work);
        work.get_mut(id).data_mut()[i] = orig;
        let (v, sig) = r?;
        smooth &= sig == base;
        acc += w * v;
    }
    Ok(smooth.then_some(acc / denom))
}
