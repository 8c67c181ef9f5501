"""Desk-scale selective state-space segmentation framework.

Subpackages and modules:
  numcore  float64 autodiff tensors, FFT, convolutions, grad_check
  ssm      ZOH discretization, selective scan, LTI kernel view
  freq     FFT bandpass feature branch with learnable spectral weights
  posenc   shared dual positional encoding
  tim      gated tri-feature token mixer block
  net      three-scale 2D/3D segmentation network
  metrics  DSC/IoU/mIoU/ACC/HD/ASSD/SO
  data     synthetic datasets, tensor container, manifests
  cli      train/eval/gradcheck/bench/filter/synth/sweep commands
"""

__version__ = "0.1.0"
