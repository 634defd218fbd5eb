use std::fmt;
use std::str::FromStr;

/// Which group moment the fairness constraint equalises.
///
/// Every moment is the average, over a constraint cell, of a per-sample
/// "disagreement with a target label" statistic: for equal opportunity the
/// target is the true label and the cell is `(s, y)`; for demographic parity
/// the target is `0` (so the statistic is `1[ŷ = 1]`) and the cell is `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    /// Equal positive-prediction rate across groups.
    DemographicParity,
    /// Equal misclassification rate across groups among samples with the
    /// given true label. `true` is the FNR variant, `false` the FPR variant.
    EqualOpportunity(bool),
}

impl Constraint {
    /// Whether a sample with true label `label` falls in the constraint cell
    /// of its group.
    pub fn in_cell(self, label: bool) -> bool {
        match self {
            Constraint::DemographicParity => true,
            Constraint::EqualOpportunity(y) => label == y,
        }
    }

    /// The label a sample's moment statistic is measured against.
    pub fn moment_target(self, label: bool) -> bool {
        match self {
            Constraint::DemographicParity => false,
            Constraint::EqualOpportunity(_) => label,
        }
    }
}

impl Default for Constraint {
    fn default() -> Self {
        Constraint::EqualOpportunity(true)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::DemographicParity => f.write_str("dp"),
            Constraint::EqualOpportunity(true) => f.write_str("eo1"),
            Constraint::EqualOpportunity(false) => f.write_str("eo0"),
        }
    }
}

impl FromStr for Constraint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dp" => Ok(Constraint::DemographicParity),
            "eo1" | "eo" | "fnr" => Ok(Constraint::EqualOpportunity(true)),
            "eo0" | "fpr" => Ok(Constraint::EqualOpportunity(false)),
            other => Err(format!("unknown constraint `{other}` (expected dp, eo1 or eo0)")),
        }
    }
}
