//! Reporting helpers for the acceptance suite in `tests/acceptance.rs`.

use std::fmt;
use std::time::{Duration, Instant};

/// Outcome of one numbered acceptance criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {}: {} ({:.1} s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs `check`, which returns `(pass, detail)`, and prints the verdict line
/// as soon as it is known. A panic inside `check` counts as a failure.
/// With `limit`, exceeding the runtime budget also fails the criterion.
pub fn run<F>(id: u32, title: &'static str, limit: Option<Duration>, check: F) -> Verdict
where
    F: FnOnce() -> (bool, String) + std::panic::UnwindSafe,
{
    let start = Instant::now();
    let (mut pass, mut detail) = match std::panic::catch_unwind(check) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail.push_str(&format!("; runtime over the {} s budget", limit.as_secs()));
        }
    }
    let v = Verdict {
        id,
        title,
        pass,
        detail,
        elapsed,
    };
    println!("{v}");
    v
}

/// Ids of failed criteria.
pub fn failures(verdicts: &[Verdict]) -> Vec<u32> {
    verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect()
}
