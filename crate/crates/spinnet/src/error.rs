//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors produced by state construction, sequence execution, calibration,
/// configuration handling, and file output.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation before any state was touched.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A state operation was asked to do something its invariants forbid.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A mean transverse angle left the linearized (small-angle) regime.
    #[error("mode {mode}: mean transverse angle {angle_rad:.4} rad exceeds the 0.3 rad linearization bound")]
    SmallAngle { mode: usize, angle_rad: f64 },

    /// A covariance matrix lost symmetry or positive semi-definiteness.
    #[error("numerical state error: {0}")]
    NumericalState(String),

    /// A timeline event could not be executed; the event index is attached.
    #[error("timeline event {index}: {source}")]
    Timeline {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// A Monte Carlo trial failed; set and trial indices are attached.
    #[error("set {set}, trial {trial}: {source}")]
    Trial {
        set: usize,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    /// Probe calibration could not bracket or reach its target.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Configuration text could not be parsed (message carries line/column).
    #[error("config parse error: {0}")]
    Parse(String),

    /// File output failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the index of the timeline event that raised it.
    pub fn at_event(self, index: usize) -> Self {
        Error::Timeline {
            index,
            source: Box::new(self),
        }
    }

    /// Wrap an error with the set and trial indices that raised it.
    pub fn at_trial(self, set: usize, trial: usize) -> Self {
        Error::Trial {
            set,
            trial,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: configuration and parse problems map to
    /// 2, state/numerical/calibration problems to 3, i/o problems to 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Parse(_) => 2,
            Error::InvalidState(_)
            | Error::SmallAngle { .. }
            | Error::NumericalState(_)
            | Error::Calibration(_) => 3,
            Error::Timeline { source, .. } | Error::Trial { source, .. } => source.exit_code(),
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_by_class() {
        assert_eq!(Error::InvalidConfig("x".into()).exit_code(), 2);
        assert_eq!(Error::Parse("x".into()).exit_code(), 2);
        assert_eq!(Error::InvalidState("x".into()).exit_code(), 3);
        assert_eq!(
            Error::SmallAngle {
                mode: 0,
                angle_rad: 0.4
            }
            .exit_code(),
            3
        );
        assert_eq!(
            Error::NumericalState("x".into()).at_event(3).exit_code(),
            3
        );
        let io = Error::Io(std::io::Error::other("x"));
        assert_eq!(io.exit_code(), 4);
    }

    #[test]
    fn timeline_wrapper_reports_event_index() {
        let err = Error::InvalidState("bad".into()).at_event(7);
        let msg = format!("{err}");
        assert!(msg.contains("event 7"), "{msg}");
    }

    #[test]
    fn trial_wrapper_reports_indices_and_inherits_the_exit_code() {
        let err = Error::SmallAngle {
            mode: 1,
            angle_rad: 0.5,
        }
        .at_event(2)
        .at_trial(1, 42);
        assert_eq!(err.exit_code(), 3);
        let msg = format!("{err}");
        assert!(msg.contains("set 1, trial 42"), "{msg}");
    }
}
