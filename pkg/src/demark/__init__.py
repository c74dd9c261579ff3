"""Visible watermark removal by adapting a pretrained inpainting backbone.

The package is organized around the pipeline stages:

- ``synth``    synthetic watermarked-image dataset generation
- ``blocks``   differentiable building blocks (attention, fusion, FFC, GAN critic)
- ``model``    the assembled dual-branch removal network
- ``losses``   pixel / perceptual / adversarial training objectives
- ``metrics``  PSNR / SSIM / RMSE / masked-RMSE evaluation harness
- ``trainer``  adversarial training loop with checkpoint + resume
- ``cli``      the ``demark`` command line entry point
- ``service``  HTTP inference endpoint for the mask-drawing UI
"""

__version__ = "0.1.0"
