"""The probabilistic final layer in isolation.

A factorized Gaussian posterior over 1x1-conv weights turns each pixel's
feature vector into a Gaussian over logits:

    mean_j = x . mean_weight_j + mean_bias_j
    var_j  = noise + x^2 . var_weight_j + var_bias_j

Zeroing the posterior variances recovers the deterministic layer exactly.
"""

import numpy as np

from uqseg import GaussianHead, mc_logit_moments, point_logits, predict_moments

rng = np.random.default_rng(7)
k, d = 4, 16
head = GaussianHead(
    mean_weight=rng.normal(size=(k, d), scale=0.5),
    mean_bias=rng.normal(size=k, scale=0.2),
    var_weight=rng.uniform(0.01, 0.2, size=(k, d)),
    var_bias=rng.uniform(0.01, 0.1, size=k),
    noise=0.05,
)

design = rng.normal(size=(2, 3, d)).astype(np.float32)
moments = predict_moments(design, head)
print("logit means, pixel (0,0):", np.round(moments.mean[0, 0], 4))
print("logit vars,  pixel (0,0):", np.round(moments.var[0, 0], 4))

# The mean field IS the deterministic layer output.
print("point logits equal mean field:",
      np.array_equal(point_logits(design, head), moments.mean))

# Scale a pixel's features: the feature term of the mean doubles (the bias
# does not), the feature term of the variance quadruples.
double = predict_moments(2.0 * design, head)
ratio = (double.mean[0, 0] - head.mean_bias) / (moments.mean[0, 0] - head.mean_bias)
print("feature-term mean ratio:", np.round(ratio, 3))

# Monte-Carlo cross-check of one pixel against weight sampling.
x = design[0, 0].astype(np.float64)
est = mc_logit_moments(x, head, n=200_000, seed=42)
z_mean = np.abs(moments.mean[0, 0] - est.mean) / est.se_mean
z_var = np.abs(moments.var[0, 0] - est.variance) / est.se_variance
print("per-class |z| of mean vs sampling:", np.round(z_mean, 2))
print("per-class |z| of var  vs sampling:", np.round(z_var, 2))
