//! Statistics over readout runs: exact count distributions, classification,
//! post-selection, fidelity reports, calibration fits and projections.

mod exact;
mod fit;
mod odmr;
mod predict;
mod report;
mod scenario;
mod threshold;

pub use exact::{
    exact_count_pmf, exact_heralded_pmf, exact_joint_pmf, pmf_mean, HeraldedPmf, JointPmf,
};
pub use fit::{
    fit_flip_rate, fit_shot_model, FitOptions, FitParameter, FitTargets, FlipFit, ModelFit,
};
pub use odmr::{find_peaks, major_minor, Peak, PeakPair};
pub use predict::{predict_dual_step, predict_single_read, PredictedDual, PredictedStats};
pub use report::{
    classify, classify_dual, classify_record, fidelity_report, fidelity_report_batches,
    ClassifierConfig, CountHistogram, FidelityReport, JointHistogram, RateEstimate, ReadoutMode,
    SelectionCounts, ShotTotals,
};
pub use scenario::{scenario, ConditionalChoice, ScenarioOverrides, ScenarioReport};
pub use threshold::{optimize_threshold, ThresholdChoice};
