//! Analytic camera flow, block-matching flow estimation, flow error,
//! colour-threshold detection and grounding scores.

mod detect;
mod flow;
mod records;

pub use detect::{detect_boxes, miou_ap50, DetectionSet, DetectorConfig, GroundingScore};
pub use flow::{
    estimate_flow, flow_error, gt_flow_from_camera, read_flow, write_flow, FlowEstimate, FlowField,
    FLOW_MAGIC,
};
pub use records::{append_jsonl, read_jsonl, MetricRecord};

/// Default block size for [`estimate_flow`].
pub const FLOW_BLOCK: usize = 4;

/// Default search radius for a frame of width `w`.
pub fn flow_search_radius(w: usize) -> usize {
    (w / 4).max(1)
}
