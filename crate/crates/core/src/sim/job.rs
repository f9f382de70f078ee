use serde::{Deserialize, Serialize};

use super::SimError;

/// Where a job is in its life.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Waiting,
    Ready,
    Running,
    Suspended,
    Finished,
    Expired,
}

impl Lifecycle {
    /// Whether `self -> next` is an allowed transition.
    pub fn can_become(self, next: Lifecycle) -> bool {
        use Lifecycle::*;
        match (self, next) {
            (Finished | Expired, _) => false,
            (_, Expired) => true,
            (Waiting, Ready) => true,
            (Ready | Suspended, Running) => true,
            (Running, Suspended | Finished) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub value: f64,
    pub qos: f64,
    pub resource_req: u32,
    pub duration: u32,
    pub arrival_time: u64,
    pub expected_finish_time: u64,
    pub qos_violation_time: u64,
    pub remaining_work: u32,
    pub lifecycle: Lifecycle,
}

impl Job {
    /// Builds a freshly arrived job, deriving the finish and violation times.
    pub fn new(
        id: u64,
        value: f64,
        qos: f64,
        resource_req: u32,
        duration: u32,
        arrival_time: u64,
    ) -> Result<Self, SimError> {
        let expected_finish_time = arrival_time + duration as u64;
        Ok(Self {
            id,
            value,
            qos,
            resource_req,
            duration,
            arrival_time,
            expected_finish_time,
            qos_violation_time: qos_violation_time(expected_finish_time, qos)?,
            remaining_work: duration,
            lifecycle: Lifecycle::Waiting,
        })
    }

    pub(crate) fn transition(&mut self, next: Lifecycle) {
        debug_assert!(
            self.lifecycle.can_become(next),
            "illegal lifecycle transition {:?} -> {:?}",
            self.lifecycle,
            next
        );
        self.lifecycle = next;
    }
}

/// `ceil(expected_finish_time / qos)`.
///
/// QoS levels are decimal fractions that binary floats cannot hold exactly, so a
/// quotient within a relative 1e-9 of an integer is taken to be that integer.
pub fn qos_violation_time(expected_finish_time: u64, qos: f64) -> Result<u64, SimError> {
    if !(qos > 0.0 && qos <= 1.0) {
        return Err(SimError::Domain(format!("qos must lie in (0, 1], got {qos}")));
    }
    let quotient = expected_finish_time as f64 / qos;
    let nearest = quotient.round();
    if (quotient - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        Ok(nearest as u64)
    } else {
        Ok(quotient.ceil() as u64)
    }
}
