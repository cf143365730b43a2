//! Evaluation harness: rotated-box overlap, benchmark metrics, sequence
//! directories, result files and overlays.

pub mod dataset;
pub mod iou;
pub mod metrics;
pub mod overlay;
pub mod results;

pub use dataset::{load_sequence, write_sequence, Sequence};
pub use iou::{rotated_iou, RotatedBox};
pub use metrics::{precision_curve, success_auc, MetricReport};
pub use results::{read_results, write_results, FrameRecord};
