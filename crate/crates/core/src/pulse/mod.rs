//! Chopped-random-basis pulse parametrization and hardware restrictions.

mod basis;
mod expansion;
mod io;
mod restriction;

pub use basis::{normal_cdf, sample_basis, sigmoid, Basis, BasisElement, BasisKind, DEFAULT_OFFSET_FACTOR};
pub use expansion::{evaluate_expansion, PulseExpansion, Waveform};
pub use io::{read_pulse, write_pulse, PulseFile};
pub use restriction::{apply_restriction, FlatTopWindow, RestrictionMode, RestrictionPolicy};
