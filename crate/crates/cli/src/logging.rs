//! Logger with a stderr sink and an in-memory sink for `run.log`.
//!
//! The run log holds info-level records and above, without timestamps, and
//! skips records emitted inside parallel work items so its bytes do not depend
//! on the job count.

use std::io::Write as _;
use std::sync::Mutex;

use log::{Level, LevelFilter, Log, Metadata, Record};

struct RunLogger {
    stderr_level: LevelFilter,
    lines: Mutex<Vec<String>>,
}

static LOGGER: std::sync::OnceLock<RunLogger> = std::sync::OnceLock::new();

impl Log for RunLogger {
    fn enabled(&self, metadata: &Metadata<'_>) -> bool {
        metadata.level() <= self.stderr_level || metadata.level() <= Level::Info
    }

    fn log(&self, record: &Record<'_>) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = format!("{:<5} {}", record.level(), record.args());
        if record.level() <= self.stderr_level {
            let _ = writeln!(std::io::stderr(), "{line}");
        }
        if record.level() <= Level::Info && !recvisit::parallel::in_worker() {
            if let Ok(mut lines) = self.lines.lock() {
                lines.push(line);
            }
        }
    }

    fn flush(&self) {}
}

/// Installs the logger; `verbosity` 0 shows warnings, 1 info, 2+ debug.
pub fn init(verbosity: u8, quiet: bool) {
    let stderr_level = match (quiet, verbosity) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Warn,
        (false, 1) => LevelFilter::Info,
        (false, 2) => LevelFilter::Debug,
        (false, _) => LevelFilter::Trace,
    };
    let logger = LOGGER.get_or_init(|| RunLogger {
        stderr_level,
        lines: Mutex::new(Vec::new()),
    });
    if log::set_logger(logger).is_ok() {
        log::set_max_level(stderr_level.max(LevelFilter::Info));
    }
}

/// Run-log contents collected so far.
pub fn run_log() -> String {
    LOGGER
        .get()
        .and_then(|l| {
            l.lines
                .lock()
                .ok()
                .map(|lines| lines.iter().map(|l| format!("{l}\n")).collect())
        })
        .unwrap_or_default()
}
