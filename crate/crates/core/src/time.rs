use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Simulated clock reading in milliseconds since the start of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub fn from_secs(secs: u64) -> Self {
        VirtualTime(secs * 1000)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    /// Signed distance `self - earlier` in milliseconds.
    pub fn signed_since(self, earlier: VirtualTime) -> i128 {
        self.0 as i128 - earlier.0 as i128
    }
}

impl Add<Duration> for VirtualTime {
    type Output = VirtualTime;

    fn add(self, rhs: Duration) -> VirtualTime {
        VirtualTime(self.0.saturating_add(rhs.as_millis() as u64))
    }
}

impl Sub for VirtualTime {
    type Output = Duration;

    fn sub(self, rhs: VirtualTime) -> Duration {
        Duration::from_millis(self.0.saturating_sub(rhs.0))
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t+{}ms", self.0)
    }
}
