//! Nested cross-validation over the four length estimators.

mod folds;
mod learner;
mod report;
mod runner;
mod select;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::{make_fold_plan, CaseKey, FoldPlan, Grouping};
pub use learner::{
    init_output_bias, segment_and_measure, transfer_and_verify, CaseOutput, FitRecord, FitRequest, Fitted, Learner,
    NetworkLearner, NetworkSettings, PerfectLearner, Stage,
};
pub use report::{write_results, FOLDS_DIR, PREDICTIONS_FILE, TABLE_FILE};
pub use runner::{run_experiment, CasePrediction, ExperimentConfig, ExperimentOutcome, FoldLog, LeakageAudit, MethodResult};
pub use select::{is_divergence, select_weight_decay, DecaySelection, DECAY_GRID};

/// Length estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Segment, then measure the mask.
    SB,
    /// Regress length from the U-Net encoder.
    DE,
    /// DE initialised from the trained segmentation encoder.
    DEW,
    /// Regress length with a VGG-19 style network.
    VGG,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SB, Method::DE, Method::DEW, Method::VGG];

    pub fn name(self) -> &'static str {
        match self {
            Method::SB => "SB",
            Method::DE => "DE",
            Method::DEW => "DEW",
            Method::VGG => "VGG",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}` (SB, DE, DEW, VGG)")))
    }
}
