//! Two-step incremental unsupervised domain adaptation for binary crack
//! segmentation.
//!
//! Step 1 trains a segmentation network (shared encoder weights `phi_i`,
//! domain-1 adapters and batch norms `phi_s1`, decoder `D_1`) on labeled
//! source images. Step 2 registers a second domain initialized as a copy
//! of the first, freezes `phi_s1` and `D_1`, and alternates segmentation
//! epochs (cross-entropy on the domain-2 branch plus a KL term tying the
//! shared weights to the frozen step-1 model) with adversarial epochs
//! (a domain discriminator behind a gradient reversal layer).
//!
//! Modules:
//!
//! * [`net`]: the adapter encoder, decoders, discriminator, gradient
//!   reversal and checkpoints.
//! * [`objectives`]: cross-entropy, KL anchoring, domain BCE and the
//!   reversal-coefficient ramp.
//! * [`data`]: dataset trees, 4:1 leave-one-out splits, preprocessing,
//!   batch plans and the synthetic crack domains.
//! * [`train`]: both training steps, gradient routing checks and the
//!   desk-scale experiment.
//! * [`metrics`]: confusion matrices, mIoU and report tables.
//! * [`cli`]: the `adaptseg` command line.
//!
//! Runnable examples live in `crates/core/examples/`:
//!
//! | example | shows |
//! |---|---|
//! | `synth_domains` | the two synthetic domains and their statistics |
//! | `split_catalog` | leave-one-sub-dataset-out splits and manifests |
//! | `adapter_network` | parameter groups before and after `add_domain` |
//! | `gradient_reversal` | reversed gradients and the lambda ramp |
//! | `losses_and_schedule` | the three losses and their weighting |
//! | `routing_check` | which groups each step-2 loss updates |
//! | `step1_training` | step 1 with checkpoint selection |
//! | `incremental_uda` | both steps on synthetic domains |
//! | `evaluation_report` | mIoU and the table layouts |
//! | `checkpoint_roundtrip` | saving and reloading a step-2 bundle |

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
