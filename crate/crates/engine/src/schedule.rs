use std::time::{Duration, Instant};

/// Busy-until bookkeeping for one link.
///
/// A link generates one key at a time, so a new exchange can only start
/// once the previous one has finished.
#[derive(Debug, Clone)]
pub struct LinkSchedule {
    link: String,
    busy_until: Option<Instant>,
}

impl LinkSchedule {
    pub fn new(link: impl Into<String>) -> Self {
        Self {
            link: link.into(),
            busy_until: None,
        }
    }

    pub fn link(&self) -> &str {
        &self.link
    }

    pub fn busy_until(&self) -> Option<Instant> {
        self.busy_until
    }

    /// Books an exchange of `duration_s` emulated seconds that becomes
    /// eligible at `now`, and returns the wall-clock completion time.
    pub fn schedule(&mut self, now: Instant, duration_s: f64, time_scale: f64) -> Instant {
        debug_assert!(duration_s >= 0.0 && time_scale > 0.0);
        let start = match self.busy_until {
            Some(busy) if busy > now => busy,
            _ => now,
        };
        let completion = start + Duration::from_secs_f64(duration_s.max(0.0) / time_scale);
        self.busy_until = Some(completion);
        completion
    }
}
