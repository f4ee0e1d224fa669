mod fit;
mod formulas;
mod report;

pub use fit::{
    fit_gaussian_dip, fit_ramsey, levenberg_marquardt, FitConfig, GaussianDipFit, LeastSquaresFit,
    RamseyFit, RamseyLine,
};
pub use formulas::{
    decoherence_factor, eta_podmr, eta_ramsey, eta_spin_projection, gamma_nv, kappa_exp,
    SensitivityParams, GAUSSIAN_LINESHAPE_FACTOR, G_E, HBAR, MU_B,
};
pub use report::{ReportRow, SensitivityReport};
