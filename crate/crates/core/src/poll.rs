//! Minimum-period polling.
//!
//! The meters cannot produce a new measurement faster than once per second;
//! asking sooner returns the previous value again. [`PollCache`] enforces
//! that on the requesting side.

/// Default minimum period between meter reads, seconds.
pub const MIN_POLL_PERIOD_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PollCache<T> {
    period: f64,
    last: Option<(f64, T)>,
}

impl<T: Clone> PollCache<T> {
    pub fn new(period: f64) -> Self {
        PollCache { period, last: None }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Time and value of the last real read.
    pub fn last(&self) -> Option<&(f64, T)> {
        self.last.as_ref()
    }

    pub fn is_due(&self, now: f64) -> bool {
        self.last
            .as_ref()
            .is_none_or(|(at, _)| now - at >= self.period)
    }

    /// Return the cached value if the last read is younger than the period,
    /// otherwise call `fetch` and remember its result. Failed fetches leave
    /// the cache untouched.
    pub fn poll<E>(
        &mut self,
        now: f64,
        fetch: impl FnOnce() -> Result<T, E>,
    ) -> Result<(T, bool), E> {
        if let (false, Some((_, v))) = (self.is_due(now), self.last.as_ref()) {
            return Ok((v.clone(), false));
        }
        let v = fetch()?;
        self.last = Some((now, v.clone()));
        Ok((v, true))
    }
}

impl<T: Clone> Default for PollCache<T> {
    fn default() -> Self {
        PollCache::new(MIN_POLL_PERIOD_S)
    }
}
