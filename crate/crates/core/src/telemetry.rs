//! Structured progress events, one JSON object per line.

use serde::Serialize;
use serde_json::{Map, Value};
use std::io::Write;
use std::sync::Mutex;

/// Budget counters attached to every event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BudgetCounters {
    pub used_rollouts: u64,
    pub max_rollouts: u64,
    pub used_search_steps: u64,
    pub max_search_steps: u64,
}

/// Single-writer event sink shared by all workers.
#[derive(Default)]
pub struct Telemetry {
    sink: Option<Mutex<Box<dyn Write + Send>>>,
}

impl Telemetry {
    pub fn disabled() -> Self {
        Self { sink: None }
    }

    pub fn to_writer(writer: impl Write + Send + 'static) -> Self {
        Self {
            sink: Some(Mutex::new(Box::new(writer))),
        }
    }

    pub fn event(&self, problem_id: &str, kind: &str, budget: BudgetCounters, extra: Value) {
        let Some(sink) = &self.sink else { return };
        let mut line = Map::new();
        line.insert("problem_id".into(), problem_id.into());
        line.insert("event".into(), kind.into());
        if let Value::Object(counters) = serde_json::to_value(budget).unwrap_or_default() {
            line.extend(counters);
        }
        if let Value::Object(fields) = extra {
            line.extend(fields);
        }
        let mut out = sink.lock().unwrap_or_else(|p| p.into_inner());
        // Telemetry is best effort; a closed stderr must not abort annotation.
        let _ = writeln!(out, "{}", Value::Object(line));
    }
}
