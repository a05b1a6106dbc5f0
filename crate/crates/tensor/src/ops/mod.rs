pub(crate) mod activation;
pub(crate) mod conv;
mod conv_direct;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod resample;

pub use loss::PROB_EPS;
pub use norm::BatchStats;
