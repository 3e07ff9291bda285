//! Quadratic C0 interior penalty finite elements for the Cahn-Hilliard
//! equation on the unit square, with nudging toward coarse observations of a
//! reference trajectory and a twin-experiment harness.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod forms;
pub mod linalg;
pub mod mesh;
pub mod observation;
pub mod projection;
pub mod quadrature;
pub mod space;
pub mod sparse;
pub mod stepper;

pub use error::{Error, Result};
pub use forms::{Assembler, AssembledForm, ConstantForms, FormKind, Penalty, SchemeParams, SmoothFunction};
pub use mesh::Mesh;
pub use observation::{CellAverageNudging, CoarseGrid, IndicatorNudging, Nudging};
pub use space::{Field, Space};
pub use experiments::{Experiment, RunManifest};
pub use stepper::{RunLog, Stepper, StepperConfig, TruthSource};
