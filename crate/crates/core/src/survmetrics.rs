//! Censoring-aware evaluation metrics.
//!
//! Conventions:
//! - A pair `(i, j)` is comparable when `T_i < T_j` and `i` had an event.
//!   Pairs with equal times are never comparable. Tied risks count one half.
//! - IPCW weights use the Kaplan-Meier estimate of the censoring
//!   distribution fitted on the *training* outcomes.
//! - Step functions are right-continuous.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};

/// Right-continuous step function: `initial` before `times[0]`, then
/// `values[i]` on `[times[i], times[i + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub initial: f64,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>, initial: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: values.len(),
            });
        }
        if times
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less))
        {
            return Err(Error::InvalidArgument(
                "step function times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            values,
            initial,
        })
    }

    /// A survival curve that stays at 1.
    pub fn constant_one() -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
            initial: 1.0,
        }
    }

    /// Value at `t` (right-continuous).
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }

    /// Left limit at `t`: the value just before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x < t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub c_index: f64,
    pub n_concordant: u64,
    pub n_discordant: u64,
    pub n_tied_risk: u64,
    pub n_comparable: u64,
}

/// Fenwick tree over risk ranks.
struct RankCounter {
    tree: Vec<u64>,
    total: u64,
}

impl RankCounter {
    fn new(size: usize) -> Self {
        Self {
            tree: vec![0; size + 1],
            total: 0,
        }
    }

    fn insert(&mut self, rank: usize) {
        self.total += 1;
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks strictly below `rank`.
    fn count_below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut sum = 0;
        while i > 0 {
            sum += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        sum
    }
}

fn check_lengths(outcomes: &[SurvivalOutcome], risks: &[f64]) -> Result<()> {
    if outcomes.len() != risks.len() {
        return Err(Error::DimensionMismatch {
            expected: outcomes.len(),
            found: risks.len(),
        });
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("risk scores".into()));
    }
    Ok(())
}

/// Harrell's C-index. Runs in `O(n log n)` by sweeping times from latest to
/// earliest and counting already-seen risks with a Fenwick tree.
pub fn concordance_index(outcomes: &[SurvivalOutcome], risks: &[f64]) -> Result<Concordance> {
    check_lengths(outcomes, risks)?;
    let n = outcomes.len();
    let mut distinct: Vec<f64> = risks.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let rank = |r: f64| distinct.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| outcomes[b].duration_days.cmp(&outcomes[a].duration_days));

    let mut seen = RankCounter::new(distinct.len());
    let (mut concordant, mut discordant, mut tied) = (0u64, 0u64, 0u64);
    let mut start = 0;
    while start < n {
        let time = outcomes[order[start]].duration_days;
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| outcomes[i].duration_days == time)
                .count();
        for &i in &order[start..end] {
            if outcomes[i].event {
                let r = rank(risks[i]);
                let below = seen.count_below(r);
                let not_above = seen.count_below(r + 1);
                concordant += below;
                tied += not_above - below;
                discordant += seen.total - not_above;
            }
        }
        for &i in &order[start..end] {
            seen.insert(rank(risks[i]));
        }
        start = end;
    }

    let comparable = concordant + discordant + tied;
    if comparable == 0 {
        return Err(Error::NotComputable("no comparable pairs"));
    }
    Ok(Concordance {
        c_index: (concordant as f64 + 0.5 * tied as f64) / comparable as f64,
        n_concordant: concordant,
        n_discordant: discordant,
        n_tied_risk: tied,
        n_comparable: comparable,
    })
}

fn product_limit(points: impl Iterator<Item = (u32, bool)>) -> Result<StepFunction> {
    let mut points: Vec<(u32, bool)> = points.collect();
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "survival curve of an empty sample".into(),
        ));
    }
    points.sort_by_key(|p| p.0);
    let mut at_risk = points.len();
    let mut surv = 1.0;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut start = 0;
    while start < points.len() {
        let t = points[start].0;
        let group = points[start..].iter().take_while(|p| p.0 == t);
        let (size, deaths) = group.fold((0, 0), |(s, d), p| (s + 1, d + usize::from(p.1)));
        if deaths > 0 {
            surv *= 1.0 - deaths as f64 / at_risk as f64;
            times.push(f64::from(t));
            values.push(surv);
        }
        at_risk -= size;
        start += size;
    }
    StepFunction::new(times, values, 1.0)
}

/// Kaplan-Meier estimate of the survival function.
pub fn kaplan_meier(outcomes: &[SurvivalOutcome]) -> Result<StepFunction> {
    product_limit(outcomes.iter().map(|o| (o.duration_days, o.event)))
}

/// Kaplan-Meier estimate of the censoring distribution `G(t)`: censorings
/// are the events.
pub fn censoring_km(outcomes: &[SurvivalOutcome]) -> Result<StepFunction> {
    product_limit(outcomes.iter().map(|o| (o.duration_days, !o.event)))
}

/// How the mean of a cumulative/dynamic AUC curve is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMean {
    /// `integral AUC(t) dS(t) / (S(t_first) - S(t_last))`, `S` the test-set KM.
    #[default]
    SurvivalWeighted,
    /// Trapezoidal time average.
    Trapezoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucCurve {
    pub times: Vec<f64>,
    /// `NaN` where the time had no cases or no controls.
    pub auc: Vec<f64>,
    pub mean_auc: f64,
}

fn follow_up_range(outcomes: &[SurvivalOutcome]) -> Result<(f64, f64)> {
    let min = outcomes
        .iter()
        .map(|o| o.time())
        .fold(f64::INFINITY, f64::min);
    let max = outcomes
        .iter()
        .map(|o| o.time())
        .fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    Ok((min, max))
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("no evaluation times".into()));
    }
    if times.iter().any(|t| !t.is_finite())
        || times
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less))
    {
        return Err(Error::InvalidArgument(
            "evaluation times must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn inverse_weight(g: f64) -> Result<f64> {
    if g > 0.0 {
        Ok(1.0 / g)
    } else {
        Err(Error::NotComputable("censoring survival is zero"))
    }
}

/// Cumulative/dynamic AUC at each time: cases have an event by `t`,
/// controls are still under observation after `t`, and each case is
/// weighted by `1 / G(T_i-)`.
pub fn cumulative_dynamic_auc(
    train_outcomes: &[SurvivalOutcome],
    test_outcomes: &[SurvivalOutcome],
    risks: &[f64],
    times: &[f64],
) -> Result<AucCurve> {
    cumulative_dynamic_auc_with(
        train_outcomes,
        test_outcomes,
        risks,
        times,
        AucMean::default(),
    )
}

pub fn cumulative_dynamic_auc_with(
    train_outcomes: &[SurvivalOutcome],
    test_outcomes: &[SurvivalOutcome],
    risks: &[f64],
    times: &[f64],
    mean: AucMean,
) -> Result<AucCurve> {
    check_lengths(test_outcomes, risks)?;
    check_times(times)?;
    let (min, max) = follow_up_range(test_outcomes)?;
    for &t in times {
        if !(t > min && t < max) {
            return Err(Error::TimeOutOfRange { time: t, min, max });
        }
    }
    let censoring = censoring_km(train_outcomes)?;
    let weights: Vec<f64> = test_outcomes
        .iter()
        .map(|o| {
            if o.event {
                inverse_weight(censoring.eval_left(o.time()))
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<_>>()?;

    let mut auc = Vec::with_capacity(times.len());
    let mut control_risks = Vec::with_capacity(risks.len());
    for &t in times {
        control_risks.clear();
        control_risks.extend(
            test_outcomes
                .iter()
                .zip(risks)
                .filter(|(o, _)| o.time() > t)
                .map(|(_, &r)| r),
        );
        control_risks.sort_by(f64::total_cmp);
        let n_controls = control_risks.len() as f64;

        let mut numerator = 0.0;
        let mut case_weight = 0.0;
        for (i, o) in test_outcomes.iter().enumerate() {
            if !(o.event && o.time() <= t) {
                continue;
            }
            let below = control_risks.partition_point(|&r| r < risks[i]);
            let not_above = control_risks.partition_point(|&r| r <= risks[i]);
            let score = below as f64 + 0.5 * (not_above - below) as f64;
            numerator += weights[i] * score;
            case_weight += weights[i];
        }
        if case_weight > 0.0 && n_controls > 0.0 {
            auc.push(numerator / (case_weight * n_controls));
        } else {
            auc.push(f64::NAN);
        }
    }

    let valid: Vec<(f64, f64)> = times
        .iter()
        .zip(&auc)
        .filter(|(_, a)| a.is_finite())
        .map(|(&t, &a)| (t, a))
        .collect();
    if valid.is_empty() {
        return Err(Error::NotComputable(
            "no time point has both cases and controls",
        ));
    }
    let mean_auc = match mean {
        AucMean::SurvivalWeighted => {
            let surv = kaplan_meier(test_outcomes)?;
            let s: Vec<f64> = valid.iter().map(|(t, _)| surv.eval(*t)).collect();
            let mass = s[0] - s[s.len() - 1];
            if mass > 0.0 {
                let integral: f64 = (1..valid.len())
                    .map(|k| valid[k].1 * (s[k - 1] - s[k]))
                    .sum();
                integral / mass
            } else {
                valid.iter().map(|(_, a)| a).sum::<f64>() / valid.len() as f64
            }
        }
        AucMean::Trapezoidal => trapezoid_mean(&valid),
    };
    Ok(AucCurve {
        times: times.to_vec(),
        auc,
        mean_auc,
    })
}

/// Trapezoidal time average; a single point averages to itself.
fn trapezoid_mean(points: &[(f64, f64)]) -> f64 {
    if points.len() == 1 {
        return points[0].1;
    }
    let span = points[points.len() - 1].0 - points[0].0;
    let area: f64 = points
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    area / span
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrierCurve {
    pub times: Vec<f64>,
    pub scores: Vec<f64>,
    pub ibs: f64,
}

/// IPCW Brier score at each time and its trapezoidal integral normalized by
/// the time span. `surv` holds `S(t_j | x_i)` with one row per test subject.
/// Times must lie in `[min T, max T)` of the test outcomes.
pub fn brier_curve(
    train_outcomes: &[SurvivalOutcome],
    test_outcomes: &[SurvivalOutcome],
    surv: &DMatrix<f64>,
    times: &[f64],
) -> Result<BrierCurve> {
    check_times(times)?;
    if surv.nrows() != test_outcomes.len() {
        return Err(Error::DimensionMismatch {
            expected: test_outcomes.len(),
            found: surv.nrows(),
        });
    }
    if surv.ncols() != times.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: surv.ncols(),
        });
    }
    let (min, max) = follow_up_range(test_outcomes)?;
    for &t in times {
        if !(t >= min && t < max) {
            return Err(Error::TimeOutOfRange { time: t, min, max });
        }
    }
    let censoring = censoring_km(train_outcomes)?;
    let n = test_outcomes.len() as f64;
    let mut scores = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        let g_t = censoring.eval(t);
        let mut total = 0.0;
        for (i, o) in test_outcomes.iter().enumerate() {
            let s = surv[(i, j)];
            if o.event && o.time() <= t {
                total += s * s * inverse_weight(censoring.eval_left(o.time()))?;
            } else if o.time() > t {
                total += (1.0 - s) * (1.0 - s) * inverse_weight(g_t)?;
            }
        }
        scores.push(total / n);
    }
    let points: Vec<(f64, f64)> = times.iter().copied().zip(scores.iter().copied()).collect();
    let ibs = trapezoid_mean(&points);
    Ok(BrierCurve {
        times: times.to_vec(),
        scores,
        ibs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskGroups {
    pub median: f64,
    /// Indices with risk at or below the median.
    pub low: Vec<usize>,
    /// Indices with risk strictly above the median.
    pub high: Vec<usize>,
    pub low_curve: StepFunction,
    pub high_curve: StepFunction,
}

/// Splits subjects about the median risk and returns each group's KM curve.
pub fn risk_stratify(risks: &[f64], outcomes: &[SurvivalOutcome]) -> Result<RiskGroups> {
    check_lengths(outcomes, risks)?;
    if risks.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "risk stratification needs at least 4 subjects, got {}",
            risks.len()
        )));
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    let (high, low): (Vec<usize>, Vec<usize>) = (0..risks.len()).partition(|&i| risks[i] > median);
    if high.is_empty() || low.is_empty() {
        return Err(Error::DegenerateStratification);
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| outcomes[i]).collect::<Vec<_>>();
    Ok(RiskGroups {
        median,
        low_curve: kaplan_meier(&pick(&low))?,
        high_curve: kaplan_meier(&pick(&high))?,
        low,
        high,
    })
}

/// Samples each curve on `grid` and returns the pointwise mean and
/// population standard deviation.
pub fn average_curves(curves: &[StepFunction], grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if curves.is_empty() {
        return Err(Error::EmptyCurves);
    }
    let k = curves.len() as f64;
    let mut means = Vec::with_capacity(grid.len());
    let mut stds = Vec::with_capacity(grid.len());
    for &t in grid {
        let samples: Vec<f64> = curves.iter().map(|c| c.eval(t)).collect();
        let mean = samples.iter().sum::<f64>() / k;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok((means, stds))
}

/// `count` evenly spaced points on `[start, end]`.
pub fn evaluation_grid(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (count - 1) as f64;
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        end
                    } else {
                        start + step * i as f64
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub c_index: f64,
    pub n_concordant: u64,
    pub n_discordant: u64,
    pub n_tied_risk: u64,
    pub n_comparable: u64,
    /// `NaN` when not computable on this split.
    pub mean_auc: f64,
    pub auc_curve: Option<AucCurve>,
    pub ibs: f64,
    pub brier_curve: Option<BrierCurve>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn outs(times: &[u32], events: &[bool]) -> Vec<SurvivalOutcome> {
        times
            .iter()
            .zip(events)
            .map(|(&t, &e)| SurvivalOutcome::new(t, e))
            .collect()
    }

    fn brute_cindex(o: &[SurvivalOutcome], r: &[f64]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..o.len() {
            for j in 0..o.len() {
                if o[i].event && o[i].duration_days < o[j].duration_days {
                    den += 1.0;
                    if r[i] > r[j] {
                        num += 1.0;
                    } else if r[i] == r[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn cindex_examples() {
        let o = outs(&[1, 2, 3, 4], &[true, true, false, true]);
        let c = concordance_index(&o, &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(c.n_comparable, 5);
        assert_eq!(c.n_concordant, 5);
        assert_eq!(c.c_index, 1.0);
        let c = concordance_index(&o, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.c_index, 0.0);
        assert_eq!(c.n_discordant, 5);
        let c = concordance_index(&o, &[7.0; 4]).unwrap();
        assert_eq!(c.c_index, 0.5);
        assert_eq!(c.n_tied_risk, 5);
    }

    #[test]
    fn equal_times_not_comparable() {
        let o = outs(&[3, 3], &[true, true]);
        assert!(matches!(
            concordance_index(&o, &[1.0, 2.0]),
            Err(Error::NotComputable(_))
        ));
        let o = outs(&[3, 3], &[true, false]);
        assert!(concordance_index(&o, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn km_examples() {
        let s = kaplan_meier(&outs(&[1, 2, 3], &[true, false, true])).unwrap();
        assert_eq!(s.eval(0.5), 1.0);
        assert_abs_diff_eq!(s.eval(1.0), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eval(2.9), 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s.eval(3.0), 0.0);

        let s = kaplan_meier(&outs(&[4, 9], &[false, false])).unwrap();
        assert!(s.times.is_empty());
        assert_eq!(s.eval(100.0), 1.0);

        let s = kaplan_meier(&outs(&[2, 5], &[true, true])).unwrap();
        assert_eq!(s.values, vec![0.5, 0.0]);
    }

    #[test]
    fn censoring_km_examples() {
        let g = censoring_km(&outs(&[1, 2, 3], &[true, true, true])).unwrap();
        assert_eq!(g.eval(10.0), 1.0);
        let g = censoring_km(&outs(&[5, 5, 5], &[false, false, false])).unwrap();
        assert_eq!(g.eval(4.9), 1.0);
        assert_eq!(g.eval(5.0), 0.0);
        assert_eq!(g.eval_left(5.0), 1.0);
    }

    #[test]
    fn auc_perfect_ordering() {
        let o = outs(&[1, 2, 5, 6, 8], &[true, true, false, false, true]);
        let risks = [4.0, 3.0, 2.0, 1.0, 0.0];
        let train = outs(&[1, 2, 3], &[true, true, true]);
        let curve = cumulative_dynamic_auc(&train, &o, &risks, &[3.0]).unwrap();
        assert_eq!(curve.auc, vec![1.0]);
        assert_eq!(curve.mean_auc, 1.0);
    }

    #[test]
    fn auc_ties_are_half() {
        let o = outs(&[1, 2, 4, 6, 7, 9], &[true, true, true, false, true, false]);
        let curve = cumulative_dynamic_auc(&o, &o, &[1.0; 6], &[3.0, 5.0, 8.0]).unwrap();
        for a in &curve.auc {
            assert_eq!(*a, 0.5);
        }
        assert_eq!(curve.mean_auc, 0.5);
    }

    #[test]
    fn auc_rejects_out_of_range_times() {
        let o = outs(&[1, 2, 4], &[true, true, true]);
        assert!(matches!(
            cumulative_dynamic_auc(&o, &o, &[1.0, 2.0, 3.0], &[4.0]),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(cumulative_dynamic_auc(&o, &o, &[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn brier_examples() {
        let o = outs(&[2, 4, 6, 8], &[true, true, true, true]);
        let times = [2.0, 3.0, 5.0, 7.0];
        let oracle = DMatrix::from_fn(4, 4, |i, j| if times[j] < o[i].time() { 1.0 } else { 0.0 });
        let b = brier_curve(&o, &o, &oracle, &times).unwrap();
        assert!(b.scores.iter().all(|&s| s == 0.0));
        assert_eq!(b.ibs, 0.0);

        let half = DMatrix::from_element(4, 4, 0.5);
        let b = brier_curve(&o, &o, &half, &times).unwrap();
        for s in &b.scores {
            assert_abs_diff_eq!(*s, 0.25, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(b.ibs, 0.25, epsilon = 1e-15);
        assert!(brier_curve(&o, &o, &half.columns(0, 1).into_owned(), &[8.0]).is_err());
    }

    #[test]
    fn trapezoid_of_constant() {
        assert_abs_diff_eq!(
            trapezoid_mean(&[(1.0, 0.3), (2.5, 0.3), (4.0, 0.3)]),
            0.3,
            epsilon = 1e-15
        );
    }

    #[test]
    fn stratify_examples() {
        let o = outs(&[1, 2, 3, 4], &[true; 4]);
        let g = risk_stratify(&[1.0, 2.0, 3.0, 4.0], &o).unwrap();
        assert_eq!(g.low, vec![0, 1]);
        assert_eq!(g.high, vec![2, 3]);
        let g = risk_stratify(&[1.0, 1.0, 1.0, 2.0], &o).unwrap();
        assert_eq!(g.low, vec![0, 1, 2]);
        assert_eq!(g.high, vec![3]);
        assert!(matches!(
            risk_stratify(&[1.0; 4], &o),
            Err(Error::DegenerateStratification)
        ));
        assert!(risk_stratify(&[1.0, 2.0, 3.0], &o[..3]).is_err());
    }

    #[test]
    fn stratify_anticorrelated_high_curve_below_low() {
        let n = 40;
        let o: Vec<_> = (0..n)
            .map(|i| SurvivalOutcome::new(10 + 5 * i, i % 3 != 0))
            .collect();
        let risks: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let g = risk_stratify(&risks, &o).unwrap();
        for t in 0..250 {
            let t = t as f64;
            assert!(g.high_curve.eval(t) <= g.low_curve.eval(t));
        }
    }

    #[test]
    fn average_examples() {
        let c = kaplan_meier(&outs(&[2, 5, 7], &[true, false, true])).unwrap();
        let grid = [0.0, 2.0, 6.0, 10.0];
        let (m, s) = average_curves(&vec![c.clone(); 5], &grid).unwrap();
        for (t, (mv, sv)) in grid.iter().zip(m.iter().zip(&s)) {
            assert_abs_diff_eq!(*mv, c.eval(*t), epsilon = 1e-15);
            assert_eq!(*sv, 0.0);
        }
        let one = StepFunction::constant_one();
        let zero = StepFunction::new(vec![], vec![], 0.0).unwrap();
        let (m, s) = average_curves(&[one, zero], &grid).unwrap();
        assert!(m.iter().all(|&v| v == 0.5));
        assert!(s.iter().all(|&v| v == 0.5));
        let (m, _) = average_curves(&[c], &[-1.0]).unwrap();
        assert_eq!(m, vec![1.0]);
        assert!(matches!(
            average_curves(&[], &grid),
            Err(Error::EmptyCurves)
        ));
    }

    #[test]
    fn grid_endpoints() {
        let g = evaluation_grid(365.0, 1825.0, 100);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 365.0);
        assert_eq!(g[99], 1825.0);
    }

    fn arb_sample() -> impl Strategy<Value = (Vec<SurvivalOutcome>, Vec<f64>)> {
        prop::collection::vec((1u32..12, any::<bool>(), -4i32..4), 2..30).prop_map(|rows| {
            let o = rows
                .iter()
                .map(|r| SurvivalOutcome::new(r.0, r.1))
                .collect();
            let r = rows.iter().map(|r| f64::from(r.2)).collect();
            (o, r)
        })
    }

    proptest! {
        #[test]
        fn cindex_equals_brute_force((o, r) in arb_sample()) {
            match (concordance_index(&o, &r), brute_cindex(&o, &r)) {
                (Ok(c), Some(b)) => prop_assert_eq!(c.c_index, b),
                (Err(_), None) => {}
                (a, b) => prop_assert!(false, "mismatch {:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn rank_invariance((o, r) in arb_sample()) {
            let transformed: Vec<f64> = r.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
            let a = concordance_index(&o, &r);
            let b = concordance_index(&o, &transformed);
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(a, b);
            }
            if r.len() >= 4 {
                let a = risk_stratify(&r, &o);
                let b = risk_stratify(&transformed, &o);
                if let (Ok(a), Ok(b)) = (a, b) {
                    prop_assert_eq!(a.low, b.low);
                }
            }
        }

        #[test]
        fn km_properties((o, _) in arb_sample()) {
            let s = kaplan_meier(&o).unwrap();
            prop_assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(s.values.windows(2).all(|w| w[1] <= w[0]));
            let flipped: Vec<_> = o.iter().map(|x| SurvivalOutcome::new(x.duration_days, !x.event)).collect();
            prop_assert_eq!(kaplan_meier(&flipped).unwrap(), censoring_km(&o).unwrap());
        }
    }
}
