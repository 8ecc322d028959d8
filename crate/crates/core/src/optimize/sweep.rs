//! Order-preserving parallel evaluation of a parameter grid.

use rayon::prelude::*;
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result of one grid point. Failures keep their message so the rest of the
/// table survives.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<P, R> {
    pub input: P,
    pub outcome: std::result::Result<R, String>,
}

impl<P, R> SweepPoint<P, R> {
    pub fn value(&self) -> Option<&R> {
        self.outcome.as_ref().ok()
    }
}

/// Evaluate every grid point. Output order matches `grid` regardless of the
/// order in which workers finish; errors and panics are recorded per point.
pub fn sweep<P, R, E, F>(grid: &[P], evaluate: F) -> Vec<SweepPoint<P, R>>
where
    P: Clone + Send + Sync,
    R: Send,
    E: std::fmt::Display,
    F: Fn(&P) -> std::result::Result<R, E> + Sync,
{
    grid.par_iter()
        .map(|p| {
            let outcome = match catch_unwind(AssertUnwindSafe(|| evaluate(p))) {
                Ok(Ok(r)) => Ok(r),
                Ok(Err(e)) => Err(e.to_string()),
                Err(panic) => Err(panic_message(panic.as_ref())),
            };
            SweepPoint {
                input: p.clone(),
                outcome,
            }
        })
        .collect()
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".to_string()
    }
}
