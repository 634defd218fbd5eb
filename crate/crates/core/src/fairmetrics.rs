//! Group confusion matrices, fairness gaps and the NVP model-selection rule.
//!
//! Counting is exact; rates and gaps are formed as exact rationals and
//! converted to `f64` once, at report construction. A rate whose
//! denominator is zero is `None`, as is any gap that depends on it.

use std::cmp::Ordering;
use std::fmt::Write as _;

use num_rational::Ratio;
use thiserror::Error;

use crate::data::{Dataset, Group};
use crate::Constraint;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{preds} predictions for {samples} samples")]
    LengthMismatch { preds: usize, samples: usize },
    #[error("model selection needs at least one candidate")]
    NoCandidates,
    #[error("no candidate has a defined fairness gap")]
    NoDefinedCandidates,
}

/// Confusion counts for one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, label: bool, pred: bool) {
        match (label, pred) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn error_rate(&self) -> Option<Rate> {
        rate(self.fp + self.fn_, self.total())
    }

    /// Positive-prediction rate `P(ŷ = 1)`.
    pub fn positive_rate(&self) -> Option<Rate> {
        rate(self.tp + self.fp, self.total())
    }

    pub fn fnr(&self) -> Option<Rate> {
        rate(self.fn_, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<Rate> {
        rate(self.fp, self.fp + self.tn)
    }

    /// False-discovery rate `P(y = 0 | ŷ = 1)`.
    pub fn fdr(&self) -> Option<Rate> {
        rate(self.fp, self.tp + self.fp)
    }
}

/// Exact rate.
pub type Rate = Ratio<i128>;

fn rate(num: u64, den: u64) -> Option<Rate> {
    (den > 0).then(|| Ratio::new(num as i128, den as i128))
}

fn to_f64(r: Rate) -> f64 {
    // numerators and denominators are sample counts, well inside 2^53
    *r.numer() as f64 / *r.denom() as f64
}

fn abs(r: Rate) -> Rate {
    if *r.numer() < 0 {
        -r
    } else {
        r
    }
}

fn abs_gap(a: Option<Rate>, b: Option<Rate>) -> Option<Rate> {
    Some(abs(a? - b?))
}

/// Per-group confusion counts, indexed by [`Group::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct GroupedConfusion {
    pub groups: [Confusion; 2],
}

impl GroupedConfusion {
    pub fn group(&self, g: Group) -> &Confusion {
        &self.groups[g.index()]
    }

    /// The same counts with the group labels exchanged.
    pub fn swapped(&self) -> Self {
        GroupedConfusion {
            groups: [self.groups[1], self.groups[0]],
        }
    }

    pub fn total(&self) -> u64 {
        self.groups[0].total() + self.groups[1].total()
    }
}

/// Counts `(label, prediction)` pairs per group. No smoothing.
pub fn confusion(preds: &[bool], data: &Dataset) -> Result<GroupedConfusion, MetricsError> {
    if preds.len() != data.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            samples: data.len(),
        });
    }
    let mut c = GroupedConfusion::default();
    for (s, &p) in data.samples().iter().zip(preds) {
        c.groups[s.group.index()].record(s.label, p);
    }
    Ok(c)
}

/// Every fairness functional of one classifier on one dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub err: Option<f64>,
    pub err_by_group: [Option<f64>; 2],
    pub positive_rate: [Option<f64>; 2],
    pub fnr: [Option<f64>; 2],
    pub fpr: [Option<f64>; 2],
    pub fdr: [Option<f64>; 2],
    /// `|P(ŷ=1 | s0) − P(ŷ=1 | s1)|`.
    pub ddp: Option<f64>,
    pub deo_fnr: Option<f64>,
    pub deo_fpr: Option<f64>,
    /// `|(FNR_s0 − FNR_s1) + (FPR_s0 − FPR_s1)|`; zero when both signed
    /// differences cancel.
    pub eodds: Option<f64>,
    pub pp_fdr_gap: Option<f64>,
}

pub const CSV_HEADER: &str = "id,err,err_s0,err_s1,ddp,deo_fnr,deo_fpr,eodds,pp_fdr_gap";

impl MetricReport {
    /// The gap matching a training constraint: DDP for demographic parity,
    /// the FNR or FPR gap for equal opportunity.
    pub fn gap(&self, constraint: Constraint) -> Option<f64> {
        match constraint {
            Constraint::DemographicParity => self.ddp,
            Constraint::EqualOpportunity(true) => self.deo_fnr,
            Constraint::EqualOpportunity(false) => self.deo_fpr,
        }
    }

    /// One CSV row in [`CSV_HEADER`] order; undefined values are empty.
    pub fn csv_row(&self, id: &str) -> String {
        let mut row = String::from(id);
        for v in [
            self.err,
            self.err_by_group[0],
            self.err_by_group[1],
            self.ddp,
            self.deo_fnr,
            self.deo_fpr,
            self.eodds,
            self.pp_fdr_gap,
        ] {
            row.push(',');
            if let Some(v) = v {
                let _ = write!(row, "{v}");
            }
        }
        row
    }
}

pub fn metric_report(c: &GroupedConfusion) -> MetricReport {
    let [g0, g1] = c.groups;
    let per = |f: fn(&Confusion) -> Option<Rate>| [f(&g0).map(to_f64), f(&g1).map(to_f64)];
    let signed = |f: fn(&Confusion) -> Option<Rate>| Some(f(&g0)? - f(&g1)?);
    let total = g0.total() + g1.total();
    let eodds = match (signed(Confusion::fnr), signed(Confusion::fpr)) {
        (Some(a), Some(b)) => Some(to_f64(abs(a + b))),
        _ => None,
    };
    MetricReport {
        err: rate(g0.fp + g0.fn_ + g1.fp + g1.fn_, total).map(to_f64),
        err_by_group: per(Confusion::error_rate),
        positive_rate: per(Confusion::positive_rate),
        fnr: per(Confusion::fnr),
        fpr: per(Confusion::fpr),
        fdr: per(Confusion::fdr),
        ddp: abs_gap(g0.positive_rate(), g1.positive_rate()).map(to_f64),
        deo_fnr: abs_gap(g0.fnr(), g1.fnr()).map(to_f64),
        deo_fpr: abs_gap(g0.fpr(), g1.fpr()).map(to_f64),
        eodds,
        pp_fdr_gap: abs_gap(g0.fdr(), g1.fdr()).map(to_f64),
    }
}

/// Convenience: [`confusion`] followed by [`metric_report`].
pub fn evaluate(preds: &[bool], data: &Dataset) -> Result<MetricReport, MetricsError> {
    Ok(metric_report(&confusion(preds, data)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NvpCandidate {
    pub id: String,
    pub err: f64,
    /// `None` when the gap is undefined; such candidates are never ranked.
    pub deo: Option<f64>,
}

impl NvpCandidate {
    pub fn new(id: impl Into<String>, err: f64, deo: Option<f64>) -> Self {
        NvpCandidate {
            id: id.into(),
            err,
            deo,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NvpSelection {
    pub candidates: Vec<NvpCandidate>,
    /// Ids of candidates dropped for an undefined gap.
    pub skipped: Vec<String>,
    pub best_err: f64,
    /// Minimum admissible accuracy, `0.9 · (1 − best_err)`.
    pub accuracy_floor: f64,
    pub admissible: Vec<String>,
    pub chosen: String,
}

impl NvpSelection {
    pub fn chosen_candidate(&self) -> &NvpCandidate {
        self.candidates
            .iter()
            .find(|c| c.id == self.chosen)
            .expect("chosen id comes from the candidate list")
    }
}

/// Orders ids numerically when both parse as integers, otherwise as strings.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Slack on the accuracy floor so that decimal inputs like `err = 0.19`
/// against `A* = 0.9` are not excluded by binary rounding.
const NVP_SLACK: f64 = 1e-12;

/// Best accuracy first, then the smallest gap among candidates whose
/// accuracy is at least 90% of the best. Ties go to the lower error, then
/// the lower id.
pub fn nvp_select(candidates: &[NvpCandidate]) -> Result<NvpSelection, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::NoCandidates);
    }
    let (defined, skipped): (Vec<&NvpCandidate>, Vec<&NvpCandidate>) =
        candidates.iter().partition(|c| c.deo.is_some());
    if defined.is_empty() {
        return Err(MetricsError::NoDefinedCandidates);
    }
    let best_err = defined.iter().map(|c| c.err).fold(f64::INFINITY, f64::min);
    let accuracy_floor = 0.9 * (1.0 - best_err);
    let admissible: Vec<&NvpCandidate> = defined
        .into_iter()
        .filter(|c| 1.0 - c.err >= accuracy_floor - NVP_SLACK)
        .collect();
    let chosen = admissible
        .iter()
        .min_by(|a, b| {
            a.deo
                .unwrap()
                .total_cmp(&b.deo.unwrap())
                .then(a.err.total_cmp(&b.err))
                .then(compare_ids(&a.id, &b.id))
        })
        .expect("the best-error candidate is always admissible");
    Ok(NvpSelection {
        candidates: candidates.to_vec(),
        skipped: skipped.iter().map(|c| c.id.clone()).collect(),
        best_err,
        accuracy_floor,
        admissible: admissible.iter().map(|c| c.id.clone()).collect(),
        chosen: chosen.id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn hand_data() -> (Dataset, Vec<bool>) {
        // s0: (1,1),(1,0),(0,0),(0,0); s1: (1,0),(1,0),(0,1),(1,1)
        let rows = [
            (Group::S0, true, true),
            (Group::S0, true, false),
            (Group::S0, false, false),
            (Group::S0, false, false),
            (Group::S1, true, false),
            (Group::S1, true, false),
            (Group::S1, false, true),
            (Group::S1, true, true),
        ];
        let samples = rows
            .iter()
            .map(|&(g, y, _)| Sample::new(vec![0.0], y, g))
            .collect();
        let preds = rows.iter().map(|r| r.2).collect();
        (Dataset::from_samples(samples).unwrap(), preds)
    }

    #[test]
    fn hand_confusion() {
        let (d, preds) = hand_data();
        let c = confusion(&preds, &d).unwrap();
        assert_eq!(c.groups[0], Confusion { tp: 1, fn_: 1, tn: 2, fp: 0 });
        assert_eq!(c.groups[1], Confusion { tp: 1, fn_: 2, tn: 0, fp: 1 });
    }

    #[test]
    fn hand_report() {
        let (d, preds) = hand_data();
        let r = evaluate(&preds, &d).unwrap();
        assert_eq!(r.fnr, [Some(0.5), Some(2.0 / 3.0)]);
        assert_eq!(r.deo_fnr, Some(1.0 / 6.0));
        assert_eq!(r.fpr, [Some(0.0), Some(1.0)]);
        assert_eq!(r.deo_fpr, Some(1.0));
        // (1/2 − 2/3) + (0 − 1) = −7/6
        assert_eq!(r.eodds, Some(7.0 / 6.0));
        assert_eq!(r.err, Some(4.0 / 8.0));
        assert_eq!(r.csv_row("7").split(',').count(), 9);
    }

    #[test]
    fn perfect_predictions() {
        let (d, _) = hand_data();
        let labels: Vec<bool> = d.samples().iter().map(|s| s.label).collect();
        let c = confusion(&labels, &d).unwrap();
        for g in c.groups {
            assert_eq!((g.fp, g.fn_), (0, 0));
        }
    }

    #[test]
    fn empty_group_is_undefined() {
        let mut c = GroupedConfusion::default();
        c.groups[0] = Confusion { tp: 3, fp: 1, tn: 2, fn_: 1 };
        let r = metric_report(&c);
        assert_eq!(r.err_by_group[1], None);
        assert_eq!(r.ddp, None);
        assert_eq!(r.deo_fnr, None);
        assert_eq!(r.err, Some(2.0 / 7.0));
        assert!(r.csv_row("x").ends_with(",,,,,"));
    }

    #[test]
    fn missing_positive_cell_leaves_fpr_defined() {
        let mut c = GroupedConfusion::default();
        c.groups[0] = Confusion { tp: 3, fp: 1, tn: 2, fn_: 1 };
        c.groups[1] = Confusion { tp: 0, fp: 2, tn: 2, fn_: 0 };
        let r = metric_report(&c);
        assert_eq!(r.deo_fnr, None);
        // 2/4 − 1/3 = 1/6, formed exactly before conversion
        assert_eq!(r.deo_fpr, Some(1.0 / 6.0));
    }

    #[test]
    fn length_mismatch() {
        let (d, _) = hand_data();
        assert_eq!(
            confusion(&[true], &d),
            Err(MetricsError::LengthMismatch { preds: 1, samples: 8 })
        );
    }

    #[test]
    fn nvp_spec_example() {
        let c = vec![
            NvpCandidate::new("1", 0.10, Some(0.08)),
            NvpCandidate::new("2", 0.12, Some(0.01)),
            NvpCandidate::new("3", 0.40, Some(0.00)),
        ];
        let s = nvp_select(&c).unwrap();
        assert_eq!(s.admissible, vec!["1", "2"]);
        assert_eq!(s.chosen, "2");
        assert!((s.best_err - 0.10).abs() < 1e-15);
    }

    #[test]
    fn nvp_ties_and_edges() {
        let c = vec![
            NvpCandidate::new("b", 0.11, Some(0.02)),
            NvpCandidate::new("a", 0.10, Some(0.02)),
        ];
        assert_eq!(nvp_select(&c).unwrap().chosen, "a");
        let c = vec![
            NvpCandidate::new("10", 0.1, Some(0.0)),
            NvpCandidate::new("9", 0.1, Some(0.0)),
        ];
        assert_eq!(nvp_select(&c).unwrap().chosen, "9");
        assert_eq!(nvp_select(&[]), Err(MetricsError::NoCandidates));
        let c = vec![
            NvpCandidate::new("u", 0.01, None),
            NvpCandidate::new("d", 0.2, Some(0.3)),
        ];
        let s = nvp_select(&c).unwrap();
        assert_eq!(s.skipped, vec!["u"]);
        assert_eq!(s.chosen, "d");
        assert_eq!(
            nvp_select(&[NvpCandidate::new("u", 0.0, None)]),
            Err(MetricsError::NoDefinedCandidates)
        );
    }

    #[test]
    fn accuracy_floor_boundary_is_inclusive() {
        // 1 − .19 = .81 = .9 · .9
        let c = vec![
            NvpCandidate::new("1", 0.10, Some(0.5)),
            NvpCandidate::new("2", 0.19, Some(0.1)),
        ];
        assert_eq!(nvp_select(&c).unwrap().chosen, "2");
    }
}
