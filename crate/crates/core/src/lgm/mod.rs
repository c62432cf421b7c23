//! Latent Gaussian model and grid-based Laplace inference.

pub mod criteria;
pub mod grid;
pub mod laplace;
pub mod model;
pub mod predict;
pub mod prior;
pub mod summary;

pub use criteria::{criteria_from_draws, information_criteria, InformationCriteria, PointwiseAccumulator};
pub use grid::{explore_grid, nelder_mead, GridOptions, HyperPoint, PosteriorGrid};
pub use laplace::{constrain, gaussian_approx, log_marginal, ConstraintCorrection, Engine, GaussianApprox, LaplaceEvaluation};
pub use model::{
    assemble, BlockPrecision, ChargeModel, Hyperparameter, LatentBlock, LatentModel, Likelihood, Observations,
    SpatialKind, SpatialSpec, TemporalSpec,
};
pub use predict::{lognormal_mixture_mean, predict, Prediction};
pub use prior::{HyperPrior, PriorSpec};
pub use summary::{
    latent_marginal, latent_moments, marginals, mixture_cdf, mixture_marginal, mixture_quantile, normal_cdf,
    EffectSummary, LatentMoments, Marginal, PosteriorSummary,
};
