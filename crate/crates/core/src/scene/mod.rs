//! Synthetic world: scenarios, geometry, rasterisation, BEV features and
//! detection noise. This replaces the camera and BEV-encoder stack.

pub mod detections;
pub mod features;
pub mod geometry;
pub mod raster;
pub mod scenario;

pub use detections::{corrupt_detections, Detection, DetectionFrame, NoiseSpec};
pub use features::{signature, synth_bev_features, FeatureSpec, SignatureKind};
pub use geometry::{rotated_iou, wrap_angle, Box2d};
pub use raster::{box_cells, rasterize_boxes, rasterize_polygons, rasterize_polylines};
pub use scenario::{
    generate_scenario, AgentClass, AgentFrame, AgentState, Command, MapLayers, Scenario, ScenarioAgent,
    ScenarioSpec, EGO_LENGTH, EGO_WIDTH,
};
