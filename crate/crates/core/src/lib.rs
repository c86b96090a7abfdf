//! Numerical verification of commutator-of-flows identities.
//!
//! Curves of local diffeomorphisms `t ↦ φ_t` with `φ_0 = Id` are combined by
//! iterated commutators along a bracket word. The leading nonvanishing
//! `t`-derivative of the result is compared with the corresponding iterated
//! Lie bracket of the curves' leading fields, on points, on tensor sections
//! and on matrix groups.

pub mod bracket;
pub mod campaign;
pub mod deriv;
pub mod error;
pub mod field;
pub mod flow;
pub mod group;
pub mod tensor;

pub use bracket::BracketExpr;
pub use campaign::{run_campaign, CampaignConfig, Report, Statement};
pub use error::{Error, Result};
pub use field::{lie_bracket, BoxDomain, ScalarExpr, VectorField};
pub use flow::{FlowField, IntegratorOpts, LocalCurve};
pub use tensor::{TensorSection, TensorType};
