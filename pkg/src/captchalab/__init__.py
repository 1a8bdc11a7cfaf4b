"""captchalab: diffusion-backed image-click CAPTCHA generation, attack
evaluation, and usability testing."""

__version__ = "0.1.0"
