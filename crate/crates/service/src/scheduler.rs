//! Cadence-driven batches for live events.

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use tracing::warn;

use crate::app::{App, BatchSummary};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Runs every batch whose window has closed by `clock.now()`, catching up
/// on missed windows in order. Failures are logged and the event is retried
/// on the next tick.
pub fn run_due(app: &App, clock: &dyn Clock) -> Vec<BatchSummary> {
    let now = clock.now();
    let mut done = Vec::new();
    for (event_id, _) in app.live_events() {
        loop {
            let due = app
                .live_events()
                .into_iter()
                .find(|(id, _)| *id == event_id)
                .is_some_and(|(_, end)| end <= now);
            if !due {
                break;
            }
            match app.run_batch(&event_id) {
                Ok(summary) => done.push(summary),
                Err(e) => {
                    warn!(event = %event_id, error = %e, "scheduled batch failed");
                    break;
                }
            }
        }
    }
    done
}

/// Checks for due batches every `tick` until `shutdown` resolves.
pub async fn run(
    app: Arc<App>,
    clock: Arc<dyn Clock>,
    tick: Duration,
    shutdown: impl std::future::Future<Output = ()>,
) {
    let mut interval = tokio::time::interval(tick);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            _ = interval.tick() => {
                let app = app.clone();
                let clock = clock.clone();
                if let Err(e) = tokio::task::spawn_blocking(move || run_due(&app, clock.as_ref())).await {
                    warn!(error = %e, "scheduler task panicked");
                }
            }
        }
    }
}
