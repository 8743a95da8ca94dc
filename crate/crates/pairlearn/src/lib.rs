//! Kernel-based regularized pairwise learning with shifted losses.
//!
//! The crate trains models f: X x X -> R of the form
//! f = sum_k alpha_k k((x_i, x_j), .) by minimizing a weighted empirical
//! pairwise risk plus lambda ||f||_H^2, where the loss enters in shifted
//! form L*(y, y', t) = L(y, y', t) - L(y, y', 0) so that heavy-tailed label
//! distributions (no moment assumptions) still yield finite objectives.
//!
//! Modules:
//! - [`data`]: validated weighted samples over X.
//! - [`kernel`]: pairwise kernels on X x X with certified sup bounds.
//! - [`loss`]: shifted pairwise losses and their certified constants.
//! - [`model`]: kernel expansions with exact H-space arithmetic.
//! - [`risk`]: pair measures, empirical risks, representer and norm
//!   diagnostics.
//! - [`train`]: closed-form, Newton, and projected-subgradient trainers.
//! - [`robustness`]: contamination models, empirical influence functions,
//!   and maxbias sweeps.
//! - [`experiments`]: deterministic synthetic-data studies emitting
//!   machine-checkable reports.

pub mod data;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod model;
mod par;
pub mod risk;
pub mod robustness;
pub mod train;

pub use data::{InputPoint, PairPoint, WeightedDataset};
pub use error::{Error, Result};
pub use kernel::{BaseKernel, PairKernel};
pub use loss::{LossSpec, PairwiseLoss, PhiKind};
pub use model::RplModel;
pub use risk::{
    check_norm_bounds, empirical_risk, representer_residual, risk_gradient, risk_report,
    BoundCheck, NormBoundReport, PairScheme, PairSet, RepresenterReport, RiskReport,
};
pub use train::{
    train, train_convex, train_convex_from, train_ls_closed_form, train_subgradient,
    train_subgradient_from, LineSearch, TrainConfig, TrainOutcome,
};
