//! Seeded simulation of a robot team: ground truth, formations, sensors, the
//! dead-reckoning baseline and the closed estimation loop.

pub mod baseline;
pub mod formation;
pub mod scenario;
pub mod sensors;
pub mod truth;

pub use baseline::{naive_baseline_step, NaiveBaseline};
pub use formation::{formation_controller, formation_waypoints, ControllerGains, FormationShape, FormationSpec};
pub use scenario::{run_scenario, run_scenario_with, ScenarioConfig, Simulation};
pub use sensors::{gen_detections, gen_odometry, SensorConfig};
pub use truth::{step_truth, GroundTruth, TruthCommand};
