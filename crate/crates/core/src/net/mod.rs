//! The segmentation network family: adapter encoder with shared and
//! per-domain parameters, per-domain decoders, the FCN discriminator, and
//! the gradient reversal layer.

mod bundle;
pub mod checkpoint;
mod config;
mod decoder;
mod discriminator;
mod encoder;
mod grl;
mod layers;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use bundle::{FrozenModel, ModelBundle};
pub use config::{ArchConfig, NUM_CLASSES};
pub use grl::{grl_apply, GrlConfig};
pub use layers::{BnMode, ParamEntry, ParamKind};

/// 1-based identifier of a registered domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainId(pub usize);

impl DomainId {
    pub const SOURCE: DomainId = DomainId(1);
    pub const TARGET: DomainId = DomainId(2);

    pub(crate) fn from_index(index: usize) -> Self {
        DomainId(index + 1)
    }

    pub(crate) fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "domain{}", self.0)
    }
}

/// Ownership class of a model parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Domain-invariant encoder weights.
    Shared,
    /// Adapter kernels and batch-norm scale/shift (and running stats) of one domain.
    DomainSpecific(DomainId),
    Decoder(DomainId),
    Discriminator,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamGroup::Shared => write!(f, "phi_i"),
            ParamGroup::DomainSpecific(d) => write!(f, "phi_s{}", d.0),
            ParamGroup::Decoder(d) => write!(f, "D_{}", d.0),
            ParamGroup::Discriminator => write!(f, "d_rho"),
        }
    }
}

/// Training step a bundle is configured for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Step1,
    Step2,
}
