#pragma once

#include "lcgp/core.hpp"
#include "lcgp/model.hpp"

namespace lcgp {

struct LatentPrediction {
  MatrixXd mean;  // (N* Q) x S, one column per training sample
  MatrixXd cov;   // (N* Q) x (N* Q), shared by all samples
};

// Z at new inputs: conditional mean under the Wishart prior, with rows of
// training inputs reused verbatim on exact matches.
MatrixXd predict_z(const FittedModel& model, const MatrixXd& x_star);

// Mixing posterior means at new inputs, (N* Q) x M.
MatrixXd predict_mixing(const FittedModel& model, const MatrixXd& x_star);

// `x_star` is in the caller's (raw) input coordinates.
LatentPrediction predict_latent(const FittedModel& model, const MatrixXd& x_star);

// <B(x*)> <u_s(x*)> in original output units, M x N*.
MatrixXd predict_outputs(const FittedModel& model, const MatrixXd& x_star,
                         Index sample);
// Same with a latent mean supplied for a sample not in the training set;
// `latent` holds the (N Q) posterior mean at the training inputs.
MatrixXd predict_outputs(const FittedModel& model, const MatrixXd& x_star,
                         const VectorXd& latent);

struct SamplePosterior {
  VectorXd mean;  // N Q
  MatrixXd cov;   // N Q x N Q
};

// q(u) for a new sample observed at the training inputs (M x N, original
// units), computed without classification terms.
SamplePosterior new_sample_posterior(const FittedModel& model, const MatrixXd& y);

// Probit probability of the positive class for a new sample.
double predict_label(const FittedModel& model, const MatrixXd& y);
double label_probability(const FittedModel& model, const SamplePosterior& post);

// Entry (i, j) = (Z_i Z_j^T)_{pq} K_pq(x_i, x_j) over training inputs.
MatrixXd latent_covariance(const FittedModel& model, Index p, Index q);

}  // namespace lcgp
