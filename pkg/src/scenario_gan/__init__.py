"""Scenario forecasting with a Wasserstein GAN and latent-space optimization."""
