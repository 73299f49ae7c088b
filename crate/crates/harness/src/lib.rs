//! Command-line harness for tnt-core: experiment configs, deterministic runs, output
//! files and the acceptance suite.

pub mod acceptance;
pub mod compare;
pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use run::run_experiment;

/// Worker count: `--threads` flag, then `TNT_THREADS`, then all available cores.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> std::result::Result<usize, HarnessError> {
    if let Some(n) = flag {
        return if n > 0 {
            Ok(n)
        } else {
            Err(HarnessError::Config("--threads must be positive".into()))
        };
    }
    if let Some(v) = env {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(HarnessError::Config(format!("TNT_THREADS must be a positive integer, got {v:?}"))),
        };
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_precedence() {
        assert_eq!(resolve_threads(Some(3), Some("5")).unwrap(), 3);
        assert_eq!(resolve_threads(None, Some("5")).unwrap(), 5);
        assert!(resolve_threads(None, None).unwrap() >= 1);
        assert!(resolve_threads(None, Some("zero")).is_err());
        assert!(resolve_threads(Some(0), None).is_err());
    }
}
