//! Flow file I/O and evaluation metrics.

mod flo;
mod metrics;

pub use flo::{
    decode_flo, encode_flo, read_flo, read_mask, write_flo, GroundTruthFlow, UNKNOWN_FLOW_THRESHOLD,
};
pub use metrics::{
    accuracy_at_t, accuracy_report, coverage, densify_matches, epe, AccuracyReport, EpeReport,
    MetricReport, COVERAGE_STEP, DEFAULT_THRESHOLD,
};
