//! Input-to-state-safe barrier functions with high relative degree, small-gain
//! safety verification for two interconnected subsystems, and the coupled
//! pendulum-on-cart tracking benchmark that exercises both.

pub mod barrier_chain;
pub mod comparison;
pub mod config;
pub mod gain_algebra;
pub mod gains;
pub mod pendulum;
pub mod report;
pub mod simulator;
pub mod suites;

pub use barrier_chain::{BarrierChain, ChainError, SetMembership};
pub use comparison::{ComparisonError, ComparisonProblem};
pub use config::{ConfigError, ScenarioConfig};
pub use gain_algebra::{SmallGainReport, SubsystemGains};
pub use gains::{Domain, GainError, GainExpr, GainFn, GainSpec};
pub use pendulum::{BenchmarkResult, ControllerGains, PendulumParams};
pub use report::ValidationReport;
pub use simulator::{SimError, SystemSpec, TimeGrid, Trajectory};
