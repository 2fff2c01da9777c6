//! Sparse Gaussian process binary classification trained with scalable
//! expectation propagation.
//!
//! The model places a GP prior over a latent function, approximates it with
//! m inducing points under the FITC conditional, and fits a Gaussian
//! posterior over the inducing values with expectation propagation. Site
//! updates, the marginal-likelihood estimate and its gradients are all
//! closed form, which makes three training regimes possible:
//!
//! * batch: one damped parallel EP sweep and one hyper-parameter ascent
//!   step per iteration,
//! * stochastic: minibatch site refinement with ADADELTA on a stochastic
//!   gradient estimate,
//! * distributed: master/worker rounds exchanging aggregated site messages.
//!
//! See the `examples/` directory for runnable entry points covering each
//! capability, and the `sepgp` binary for the command-line interface.

pub mod cli;
pub mod dataset;
pub mod distributed;
pub mod ep;
pub mod error;
pub mod kernel;
pub(crate) mod linalg;
pub mod objective;
pub mod optimizer;
pub mod predictor;
pub mod stats;
pub mod trainer;

pub use dataset::{Dataset, MinibatchSchedule, Standardization};
pub use error::{Result, SepError};
pub use kernel::{Hyperparameters, KernelBundle};
pub use ep::{PosteriorApprox, SiteFactors};
pub use objective::{GradientVector, LogZqReport};
pub use predictor::{EvalReport, LatentPrediction};
pub use trainer::{LearningCurve, Model, TrainConfig, TrainMode};
