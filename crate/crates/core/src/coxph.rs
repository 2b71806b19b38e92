//! Ridge-penalized Cox proportional-hazards regression.
//!
//! The objective is the Breslow partial log-likelihood minus `(alpha / 2) |beta|^2`
//! (no scaling by `n`). Fitting is Newton-Raphson from `beta = 0` with step
//! halving. The baseline cumulative hazard is the Breslow estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::survmetrics::StepFunction;

pub const DEFAULT_ALPHA: f64 = 0.1;

/// Relative tolerance under which two log-likelihood values are equal.
pub const LOGLIK_RESOLUTION: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop once the largest coefficient change falls below this.
    pub tol: f64,
    pub step_halving_max: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-9,
            step_halving_max: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    pub alpha: f64,
    /// Breslow `H0(t)`; zero before the first event time.
    pub baseline_cumhaz: StepFunction,
    pub n_iter: usize,
    pub converged: bool,
    /// Penalized log partial likelihood at `beta`.
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialLikelihood {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    /// Includes the `-alpha * I` penalty term.
    pub hessian: DMatrix<f64>,
}

/// Sample indices grouped by distinct time, latest time first.
fn groups_descending(outcomes: &[SurvivalOutcome]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| {
        outcomes[b]
            .duration_days
            .cmp(&outcomes[a].duration_days)
            .then(a.cmp(&b))
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if outcomes[g[0]].duration_days == outcomes[i].duration_days => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn check_inputs(x: &DMatrix<f64>, outcomes: &[SurvivalOutcome], beta: &[f64]) -> Result<()> {
    if x.nrows() != outcomes.len() {
        return Err(Error::DimensionMismatch {
            expected: outcomes.len(),
            found: x.nrows(),
        });
    }
    if beta.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: beta.len(),
        });
    }
    if !outcomes.iter().any(|o| o.event) {
        return Err(Error::NoEvents);
    }
    if x.iter().chain(beta).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cox input".into()));
    }
    Ok(())
}

/// Linear predictors `x_i . beta`, computed row by row in a fixed order.
fn linear_predictor(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).fold(0.0, |acc, j| acc + x[(i, j)] * beta[j]))
        .collect()
}

/// Penalized Breslow partial log-likelihood with its exact gradient and
/// Hessian.
pub fn partial_loglik(
    x: &DMatrix<f64>,
    outcomes: &[SurvivalOutcome],
    beta: &[f64],
    alpha: f64,
) -> Result<PartialLikelihood> {
    check_inputs(x, outcomes, beta)?;
    let d = x.ncols();
    let eta = linear_predictor(x, beta);
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Columns of the transpose are contiguous patient rows.
    let xt = x.transpose();

    let mut s0 = 0.0;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d * d];
    let mut loglik = 0.0;
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut mean = vec![0.0; d];

    for group in groups_descending(outcomes) {
        for &i in &group {
            let w = (eta[i] - shift).exp();
            let row = xt.column(i);
            s0 += w;
            for a in 0..d {
                let wa = w * row[a];
                s1[a] += wa;
                for b in a..d {
                    s2[a * d + b] += wa * row[b];
                }
            }
        }
        let events: Vec<usize> = group.into_iter().filter(|&i| outcomes[i].event).collect();
        if events.is_empty() {
            continue;
        }
        let n_events = events.len() as f64;
        let log_s0 = s0.ln() + shift;
        for &i in &events {
            loglik += eta[i] - log_s0;
            let row = xt.column(i);
            for a in 0..d {
                grad[a] += row[a];
            }
        }
        for a in 0..d {
            mean[a] = s1[a] / s0;
            grad[a] -= n_events * mean[a];
        }
        for a in 0..d {
            for b in a..d {
                hess[a * d + b] -= n_events * (s2[a * d + b] / s0 - mean[a] * mean[b]);
            }
        }
    }

    let penalty: f64 = beta.iter().map(|b| b * b).sum::<f64>();
    loglik -= 0.5 * alpha * penalty;
    let gradient = DVector::from_iterator(d, (0..d).map(|a| grad[a] - alpha * beta[a]));
    let hessian = DMatrix::from_fn(d, d, |a, b| {
        let v = if a <= b {
            hess[a * d + b]
        } else {
            hess[b * d + a]
        };
        if a == b {
            v - alpha
        } else {
            v
        }
    });
    Ok(PartialLikelihood {
        loglik,
        gradient,
        hessian,
    })
}

/// Newton-Raphson fit from `beta = 0` with step halving.
pub fn cox_fit(
    x: &DMatrix<f64>,
    outcomes: &[SurvivalOutcome],
    alpha: f64,
    config: &FitConfig,
) -> Result<CoxModel> {
    fit_traced(x, outcomes, alpha, config, &mut Vec::new())
}

/// As [`cox_fit`], recording the penalized log-likelihood after the start
/// and after every accepted step.
pub(crate) fn fit_traced(
    x: &DMatrix<f64>,
    outcomes: &[SurvivalOutcome],
    alpha: f64,
    config: &FitConfig,
    trace: &mut Vec<f64>,
) -> Result<CoxModel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    if config.max_iter == 0
        || config.step_halving_max == 0
        || config.tol.is_nan()
        || config.tol <= 0.0
    {
        return Err(Error::InvalidArgument(
            "fit config values must be positive".into(),
        ));
    }
    let d = x.ncols();
    let mut beta = vec![0.0; d];
    let mut current = partial_loglik(x, outcomes, &beta, alpha)?;
    trace.push(current.loglik);
    let mut converged = false;
    let mut n_iter = 0;

    while n_iter < config.max_iter {
        n_iter += 1;
        let neg_hessian = -current.hessian.clone();
        let step = match neg_hessian.clone().cholesky() {
            Some(chol) => chol.solve(&current.gradient),
            None => neg_hessian
                .lu()
                .solve(&current.gradient)
                .ok_or(Error::SingularSystem)?,
        };
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        let full_step_small = step.amax() < config.tol;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=config.step_halving_max {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let eval = partial_loglik(x, outcomes, &candidate, alpha)?;
            // Near the optimum the gain of a Newton step is below the
            // resolution of the log-likelihood itself.
            let slack = LOGLIK_RESOLUTION * current.loglik.abs().max(1.0);
            if eval.loglik.is_finite() && eval.loglik >= current.loglik - slack {
                accepted = Some((candidate, eval));
                break;
            }
            scale *= 0.5;
        }

        match accepted {
            Some((candidate, eval)) => {
                let change = beta
                    .iter()
                    .zip(&candidate)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                beta = candidate;
                current = eval;
                trace.push(current.loglik);
                if change < config.tol {
                    converged = true;
                    break;
                }
            }
            None => {
                // No ascent possible along the Newton direction.
                converged = full_step_small;
                if !converged {
                    log::warn!("cox fit: step halving exhausted at iteration {n_iter}");
                }
                break;
            }
        }
    }

    let baseline_cumhaz = breslow_baseline(x, outcomes, &beta)?;
    Ok(CoxModel {
        beta,
        alpha,
        baseline_cumhaz,
        n_iter,
        converged,
        loglik: current.loglik,
    })
}

/// Breslow estimate of the baseline cumulative hazard:
/// `H0(t) = sum over event times t_i <= t of d_i / sum_{j at risk} exp(x_j . beta)`.
pub fn breslow_baseline(
    x: &DMatrix<f64>,
    outcomes: &[SurvivalOutcome],
    beta: &[f64],
) -> Result<StepFunction> {
    check_inputs(x, outcomes, beta)?;
    let eta = linear_predictor(x, beta);
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut jumps = Vec::new();
    let mut s0 = 0.0;
    for group in groups_descending(outcomes) {
        for &i in &group {
            s0 += (eta[i] - shift).exp();
        }
        let n_events = group.iter().filter(|&&i| outcomes[i].event).count();
        if n_events > 0 {
            let hazard = n_events as f64 * (-shift).exp() / s0;
            jumps.push((outcomes[group[0]].time(), hazard));
        }
    }
    jumps.reverse();
    let mut cumulative = 0.0;
    let (times, values) = jumps
        .into_iter()
        .map(|(t, h)| {
            cumulative += h;
            (t, cumulative)
        })
        .unzip();
    StepFunction::new(times, values, 0.0)
}

pub fn cox_risk(model: &CoxModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: model.beta.len(),
            found: x.ncols(),
        });
    }
    Ok(linear_predictor(x, &model.beta))
}

/// `S(t | x) = exp(-H0(t) * exp(x . beta))` at each of `times`.
pub fn cox_survival(model: &CoxModel, x: &[f64], times: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: model.beta.len(),
            found: x.len(),
        });
    }
    let eta = x
        .iter()
        .zip(&model.beta)
        .fold(0.0, |acc, (a, b)| acc + a * b);
    Ok(survival_from_risk(model, eta, times))
}

fn survival_from_risk(model: &CoxModel, eta: f64, times: &[f64]) -> Vec<f64> {
    let relative = eta.exp();
    times
        .iter()
        .map(|&t| (-model.baseline_cumhaz.eval(t) * relative).exp())
        .collect()
}

/// Predicted survival for every row of `x`: an `n x |times|` matrix.
pub fn survival_matrix(model: &CoxModel, x: &DMatrix<f64>, times: &[f64]) -> Result<DMatrix<f64>> {
    let risks = cox_risk(model, x)?;
    let mut out = DMatrix::zeros(x.nrows(), times.len());
    for (i, eta) in risks.into_iter().enumerate() {
        for (j, s) in survival_from_risk(model, eta, times)
            .into_iter()
            .enumerate()
        {
            out[(i, j)] = s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDump {
    pub time: Vec<f64>,
    pub value: Vec<f64>,
}

/// JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub baseline: BaselineDump,
    pub n_iter: usize,
    pub converged: bool,
}

impl CoxModel {
    pub fn dump(&self) -> ModelDump {
        ModelDump {
            beta: self.beta.clone(),
            alpha: self.alpha,
            baseline: BaselineDump {
                time: self.baseline_cumhaz.times.clone(),
                value: self.baseline_cumhaz.values.clone(),
            },
            n_iter: self.n_iter,
            converged: self.converged,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.dump())?)
    }

    pub fn from_dump(dump: ModelDump) -> Result<Self> {
        Ok(Self {
            baseline_cumhaz: StepFunction::new(dump.baseline.time, dump.baseline.value, 0.0)?,
            beta: dump.beta,
            alpha: dump.alpha,
            n_iter: dump.n_iter,
            converged: dump.converged,
            loglik: f64::NAN,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn outcomes(times: &[u32], events: &[bool]) -> Vec<SurvivalOutcome> {
        times
            .iter()
            .zip(events)
            .map(|(&t, &e)| SurvivalOutcome::new(t, e))
            .collect()
    }

    fn random_instance(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, Vec<SurvivalOutcome>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.5..1.5));
        let mut outs: Vec<SurvivalOutcome> = (0..n)
            .map(|_| SurvivalOutcome::new(rng.random_range(1..15), rng.random_bool(0.6)))
            .collect();
        outs[0].event = true;
        (x, outs)
    }

    #[test]
    fn zero_beta_loglik_is_minus_log_risk_set_sizes() {
        let outs = outcomes(&[1, 2, 2, 3, 5], &[true, true, false, true, false]);
        let x = DMatrix::from_fn(5, 2, |i, j| (i + j) as f64 * 0.3);
        let pl = partial_loglik(&x, &outs, &[0.0, 0.0], 0.1).unwrap();
        // Risk sets: t=1 -> 5, t=2 -> 4, t=3 -> 2.
        let expected = -(5f64.ln() + 4f64.ln() + 2f64.ln());
        assert_abs_diff_eq!(pl.loglik, expected, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_gradient_is_penalty_only() {
        let (mut x, outs) = random_instance(3, 15, 3);
        x.column_mut(1).fill(2.5);
        let beta = [0.3, -0.7, 0.2];
        let pl = partial_loglik(&x, &outs, &beta, 0.1).unwrap();
        assert_abs_diff_eq!(pl.gradient[1], -0.1 * -0.7, epsilon = 1e-10);
    }

    #[test]
    fn no_events_is_error() {
        let outs = outcomes(&[1, 2], &[false, false]);
        let x = DMatrix::zeros(2, 1);
        assert!(matches!(
            partial_loglik(&x, &outs, &[0.0], 0.1),
            Err(Error::NoEvents)
        ));
        assert!(matches!(
            cox_fit(&x, &outs, 0.1, &FitConfig::default()),
            Err(Error::NoEvents)
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, outs) = random_instance(17, 20, 3);
        let beta = [0.4, -0.2, 0.9];
        let pl = partial_loglik(&x, &outs, &beta, 0.1).unwrap();
        let h = 1e-5;
        for a in 0..3 {
            let mut up = beta;
            let mut down = beta;
            up[a] += h;
            down[a] -= h;
            let fd = (partial_loglik(&x, &outs, &up, 0.1).unwrap().loglik
                - partial_loglik(&x, &outs, &down, 0.1).unwrap().loglik)
                / (2.0 * h);
            assert!((fd - pl.gradient[a]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn constant_covariate_fits_zero() {
        let (mut x, outs) = random_instance(4, 12, 1);
        x.fill(3.0);
        let m = cox_fit(&x, &outs, 0.1, &FitConfig::default()).unwrap();
        assert!(m.beta[0].abs() < 1e-8);
        assert!(m.converged);
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let (x, outs) = random_instance(9, 30, 4);
        let g0 = partial_loglik(&x, &outs, &[0.0; 4], 0.0).unwrap().gradient;
        let alpha = 1e6;
        let m = cox_fit(&x, &outs, alpha, &FitConfig::default()).unwrap();
        let bound = g0.norm() / alpha;
        let max = m.beta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(max < 1e-3);
        assert!(max <= bound + 1e-12);
    }

    #[test]
    fn risk_is_linear_predictor() {
        let model = CoxModel {
            beta: vec![1.0, -1.0],
            alpha: 0.1,
            baseline_cumhaz: StepFunction::new(vec![], vec![], 0.0).unwrap(),
            n_iter: 0,
            converged: true,
            loglik: 0.0,
        };
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        assert_eq!(cox_risk(&model, &x).unwrap(), vec![1.0, -2.5]);
        let doubled = cox_risk(&model, &(&x * 2.0)).unwrap();
        assert_eq!(doubled, vec![2.0, -5.0]);
        let zero = CoxModel {
            beta: vec![0.0, 0.0],
            ..model.clone()
        };
        assert_eq!(cox_risk(&zero, &x).unwrap(), vec![0.0, 0.0]);
        assert!(cox_risk(&model, &DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn breslow_two_events() {
        let outs = outcomes(&[1, 2], &[true, true]);
        let x = DMatrix::zeros(2, 1);
        let h = breslow_baseline(&x, &outs, &[0.0]).unwrap();
        assert_eq!(h.times, vec![1.0, 2.0]);
        assert_abs_diff_eq!(h.eval(1.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h.eval(2.0), 1.5, epsilon = 1e-12);
        assert_eq!(h.eval(0.5), 0.0);
        assert_abs_diff_eq!(h.eval(100.0), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn breslow_identical_rows_scale_by_exp_minus_eta() {
        let outs = outcomes(&[2, 3, 3, 7, 9], &[true, false, true, true, false]);
        let x0 = DMatrix::zeros(5, 2);
        let base = breslow_baseline(&x0, &outs, &[0.0, 0.0]).unwrap();
        let x = DMatrix::from_fn(5, 2, |_, j| if j == 0 { 1.5 } else { -0.5 });
        let beta = [0.8, 0.4];
        let eta: f64 = 1.5 * 0.8 - 0.5 * 0.4;
        let scaled = breslow_baseline(&x, &outs, &beta).unwrap();
        for (a, b) in base.values.iter().zip(&scaled.values) {
            assert_abs_diff_eq!(*b, a * (-eta).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn survival_examples() {
        let outs = outcomes(&[1, 2, 4], &[true, true, false]);
        let x = DMatrix::from_column_slice(3, 1, &[0.2, -0.4, 0.1]);
        let m = cox_fit(&x, &outs, 0.1, &FitConfig::default()).unwrap();
        let times = [0.0, 1.0, 2.0, 3.0];
        let zero_eta = vec![0.0];
        let s = cox_survival(&m, &zero_eta, &times).unwrap();
        for (t, v) in times.iter().zip(&s) {
            assert_abs_diff_eq!(*v, (-m.baseline_cumhaz.eval(*t)).exp(), epsilon = 1e-15);
        }
        assert_eq!(s[0], 1.0);
        // Larger linear predictor -> strictly smaller survival wherever H0 > 0.
        let hi = cox_survival(&m, &[10.0 * m.beta[0].signum()], &times).unwrap();
        let lo = cox_survival(&m, &[-10.0 * m.beta[0].signum()], &times).unwrap();
        for j in 1..times.len() {
            assert!(hi[j] < lo[j]);
        }
        for w in s.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn dump_round_trip() {
        let (x, outs) = random_instance(1, 10, 2);
        let m = cox_fit(&x, &outs, 0.1, &FitConfig::default()).unwrap();
        let json = m.to_json().unwrap();
        assert!(json.contains("\"baseline\""));
        let back = CoxModel::from_dump(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.beta, m.beta);
        assert_eq!(back.baseline_cumhaz, m.baseline_cumhaz);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn translation_invariance(seed in any::<u64>(), shift in -3.0f64..3.0) {
            let (x, outs) = random_instance(seed, 25, 3);
            let shifted = x.map(|v| v + shift);
            let cfg = FitConfig::default();
            let a = cox_fit(&x, &outs, 0.1, &cfg).unwrap();
            let b = cox_fit(&shifted, &outs, 0.1, &cfg).unwrap();
            for (p, q) in a.beta.iter().zip(&b.beta) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }

        #[test]
        fn time_shift_invariance(seed in any::<u64>(), offset in 1u32..500) {
            let (x, outs) = random_instance(seed, 20, 2);
            let later: Vec<_> = outs
                .iter()
                .map(|o| SurvivalOutcome::new(o.duration_days + offset, o.event))
                .collect();
            let cfg = FitConfig::default();
            let a = cox_fit(&x, &outs, 0.1, &cfg).unwrap();
            let b = cox_fit(&x, &later, 0.1, &cfg).unwrap();
            prop_assert_eq!(a.beta, b.beta);
        }

        #[test]
        fn monotone_ascent(seed in any::<u64>()) {
            let (x, outs) = random_instance(seed, 30, 4);
            let mut trace = Vec::new();
            let m = fit_traced(&x, &outs, 0.1, &FitConfig::default(), &mut trace).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] >= w[0] - LOGLIK_RESOLUTION * w[0].abs().max(1.0));
            }
            prop_assert_eq!(*trace.last().unwrap(), m.loglik);
            prop_assert!(m.converged);
            let g = partial_loglik(&x, &outs, &m.beta, 0.1).unwrap().gradient;
            prop_assert!(g.amax() < 1e-6);
        }
    }
}
