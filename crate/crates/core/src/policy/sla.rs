use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::time::{SimTime, MS_PER_HOUR};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaRule {
    #[serde(default = "default_grace")]
    pub grace_ms: i64,
    #[serde(default = "default_fraction")]
    pub acceptable_violation_fraction: f64,
}

fn default_grace() -> i64 {
    24 * MS_PER_HOUR
}

fn default_fraction() -> f64 {
    0.01
}

impl Default for SlaRule {
    fn default() -> Self {
        SlaRule { grace_ms: default_grace(), acceptable_violation_fraction: default_fraction() }
    }
}

impl SlaRule {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.grace_ms < 0 {
            return Err(PolicyError::InvalidConfig("SLA grace must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.acceptable_violation_fraction) {
            return Err(PolicyError::InvalidConfig("acceptable violation fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// What the SLA check needs to know about one task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskOutcome {
    pub submission: SimTime,
    pub work_ms: i64,
    pub deadline: Option<SimTime>,
    pub finish: Option<SimTime>,
}

/// Expected completion is submission plus pure work time, unless the trace
/// gives a deadline. Unfinished tasks always violate.
pub fn sla_check(task: &TaskOutcome, rule: &SlaRule) -> bool {
    let Some(finish) = task.finish else { return true };
    let bound = match task.deadline {
        Some(d) => d,
        None => task.submission + task.work_ms + rule.grace_ms,
    };
    finish > bound
}
