"""Adaptive diffusion denoised smoothing on desk-scale Gaussian-mixture tasks."""

from .schedule import (NoiseSchedule, build_linear_schedule, respace, match_timestep,
                       matching_alpha_bar, evenly_spaced_timesteps)
from .denoise import (DenoiserOutput, GmmModel, Denoiser, EpsDenoiser, ZeroDenoiser,
                      GmmDenoiser, GmmEpsDenoiser, gmm_posterior_mean,
                      mc_posterior_mean_oracle, ParseError, OracleError)
from .privacy import (BudgetVector, SpendRecord, step_constant, step_cost, privacy_filter,
                      max_feasible_scale, spend_guidance, ars_fixed_radius, filter_radius)
from .sampler import (PipelineConfig, Trajectory, ddpm_step, ddpm_step_eps, apply_guidance,
                      guided_mean, one_shot_x0, guided_denoise, sample_pipeline)
from .certify import (ABSTAIN, CertificationResult, phi_inv, clopper_pearson_lower, radius,
                      majority_vote, smoothed_predict, certify)
from .data import Dataset, make_gmm_task, bayes_classify, sample_dataset

__version__ = "0.1.0"
