use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geom::Point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub id: String,
    pub capabilities: BTreeSet<String>,
    /// Top speed in m/s.
    pub vmax: f64,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collaboration {
    pub id: String,
    /// One action per participating robot.
    pub actions: Vec<String>,
    /// Execution time in seconds once all participants are engaged.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TeamModel {
    pub robots: Vec<Robot>,
    pub collaborations: Vec<Collaboration>,
}

impl TeamModel {
    pub fn robot_index(&self, id: &str) -> Option<usize> {
        self.robots.iter().position(|r| r.id == id)
    }

    pub fn collaboration(&self, id: &str) -> Option<&Collaboration> {
        self.collaborations.iter().find(|c| c.id == id)
    }

    /// Checks speeds and that every collaboration action has a capable robot.
    pub fn validate(&self) -> Result<(), String> {
        let mut ids = BTreeSet::new();
        for r in &self.robots {
            if !(r.vmax > 0.0 && r.vmax.is_finite()) {
                return Err(format!("robot {} has non-positive speed {}", r.id, r.vmax));
            }
            if !ids.insert(&r.id) {
                return Err(format!("duplicate robot id {}", r.id));
            }
        }
        for c in &self.collaborations {
            if c.actions.is_empty() {
                return Err(format!("collaboration {} has no actions", c.id));
            }
            if !(c.duration >= 0.0) {
                return Err(format!("collaboration {} has negative duration", c.id));
            }
            for a in &c.actions {
                if !self.robots.iter().any(|r| r.capabilities.contains(a)) {
                    return Err(format!("no robot can perform action {a} of collaboration {}", c.id));
                }
            }
        }
        Ok(())
    }
}

/// Robots assigned to one subtask, sorted by robot index, with the action
/// each performs (`None` for a plain reach subtask).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Group {
    pub robots: Vec<usize>,
    pub actions: Vec<Option<String>>,
}

impl Group {
    pub fn contains(&self, robot: usize) -> bool {
        self.robots.contains(&robot)
    }
}
