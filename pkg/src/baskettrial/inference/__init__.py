"""Posterior inference for the five basket-trial models."""

from .fit import (PosteriorSamples, fit_bhm, fit_cbhm, fit_exnex, fit_independent,
                  fit_liu_bhmm, fit_model, posterior_prob_exceeds)
from .linalg import batch_cholesky, jitter_cholesky, mvn_logpdf
from .mcmc import Chain, McmcConfig, run_mcmc, split_rhat
from .models import (CBHM_PRIOR_SETS, MODEL_NAMES, BhmSpec, CbhmSpec, ExnexSpec, GammaPrior,
                     IndependentSpec, InvGammaPrior, LiuSpec, UniformPrior, cbhm_kl_sqexp,
                     cbhm_prior_set, default_spec)
from .samplers import BatchResult, sample_batch
