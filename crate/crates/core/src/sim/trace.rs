use serde::{Deserialize, Serialize};

use super::Vec2;

/// One simulator tick, written as a JSON line by scenario replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: usize,
    pub time: f64,
    pub robot: Vec2,
    pub robot_state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_state: Option<String>,
    /// Teleoperation joystick input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec2>,
    pub belief: Vec<f64>,
    /// Goal-to-go per candidate human goal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_to_go: Option<Vec<usize>>,
}
