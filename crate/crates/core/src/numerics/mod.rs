//! Numeric kernels shared by the classifiers.

pub mod kernel;
pub mod logistic;
pub mod platt;
pub mod rng;
pub mod standardize;
pub mod svm;
pub mod weibull;

pub use kernel::KernelSpec;
pub use logistic::{logistic_train, softmax, LogisticConfig, LogisticModel};
pub use platt::{platt_fit, PlattScaling};
pub use rng::Rng;
pub use standardize::Standardizer;
pub use svm::{enclosing_ball_train, svm_train_binary, BinarySvm, EnclosingBall, SvmFit};
pub use weibull::{weibull_mle, WeibullParams};
