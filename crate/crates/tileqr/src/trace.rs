//! Per-worker execution timelines for idle-time and Gantt analysis.

use std::io::Write;

use serde::Serialize;

use crate::dag::Task;

/// One executed task: which worker ran it and when, in nanoseconds from the
/// start of the run (monotonic clock).
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    pub worker: usize,
    pub task: Task,
    pub start_ns: u64,
    pub end_ns: u64,
}

/// The timeline of one parallel run.
#[derive(Debug, Clone, Default)]
pub struct ExecutionTrace {
    pub records: Vec<TraceRecord>,
    pub workers: usize,
}

/// Aggregate timeline statistics.
#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub makespan_ns: u64,
    /// Busy time per worker in nanoseconds.
    pub busy_ns: Vec<u64>,
    /// Busy fraction of the makespan per worker.
    pub busy_fraction: Vec<f64>,
    /// Mean idle fraction across workers; 0 for a single worker, whose lone
    /// timeline has no one to wait for.
    pub idle_fraction: f64,
}

#[derive(Serialize)]
struct TraceLine {
    worker: usize,
    kind: char,
    k: usize,
    i: Option<usize>,
    j: Option<usize>,
    start_ns: u64,
    end_ns: u64,
}

impl ExecutionTrace {
    pub fn summary(&self) -> TraceSummary {
        let start = self.records.iter().map(|r| r.start_ns).min().unwrap_or(0);
        let end = self.records.iter().map(|r| r.end_ns).max().unwrap_or(0);
        let makespan_ns = end - start;
        let mut busy_ns = vec![0u64; self.workers];
        for r in &self.records {
            busy_ns[r.worker] += r.end_ns - r.start_ns;
        }
        let busy_fraction: Vec<f64> = busy_ns
            .iter()
            .map(|&b| {
                if makespan_ns == 0 {
                    1.0
                } else {
                    b as f64 / makespan_ns as f64
                }
            })
            .collect();
        let idle_fraction = if self.workers <= 1 {
            0.0
        } else {
            busy_fraction.iter().map(|f| 1.0 - f).sum::<f64>() / self.workers as f64
        };
        TraceSummary {
            makespan_ns,
            busy_ns,
            busy_fraction,
            idle_fraction,
        }
    }

    /// One flat JSON object per record.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            let line = TraceLine {
                worker: r.worker,
                kind: r.task.kind().letter(),
                k: r.task.step(),
                i: r.task.tile_row(),
                j: r.task.tile_col(),
                start_ns: r.start_ns,
                end_ns: r.end_ns,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Checks that each worker's records are time-ordered and
    /// non-overlapping.
    pub fn validate_timelines(&self) -> std::result::Result<(), String> {
        for w in 0..self.workers {
            let mut last_end = 0u64;
            for r in self.records.iter().filter(|r| r.worker == w) {
                if r.start_ns < last_end {
                    return Err(format!(
                        "worker {w}: task {} starts at {} before previous end {}",
                        r.task, r.start_ns, last_end
                    ));
                }
                if r.end_ns < r.start_ns {
                    return Err(format!("worker {w}: task {} ends before it starts", r.task));
                }
                last_end = r.end_ns;
            }
        }
        Ok(())
    }
}
