//! Exact-retrain oracles and the experiments built on them.

pub mod brute;
pub mod calibration;
pub mod experiment;
pub mod retrain;
pub mod sweep;

pub use brute::{brute_force_min_flipset, BRUTE_FORCE_MAX_K, BRUTE_FORCE_MAX_N};
pub use calibration::{group_effects, loo_calibration, CalibrationReport, PointCalibration};
pub use experiment::{
    run_experiment, run_experiment_resumable, ExperimentOptions, ExperimentOutcome, ExperimentReport,
    PointRecord,
};
pub use retrain::{retrain_without, verify_flip};
pub use sweep::{attribution_sweep, AttributionSweepReport, SweepCurve, SweepPoint, DEFAULT_K_GRID};
