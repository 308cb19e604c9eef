"""Two-stage (wideband basis + subband coefficient) CSI feedback quantization."""
from .channel import (ArrayGeometry, ChannelSet, ClusterModelConfig, PolarizationMode,
                      generate_channels, normalized_sample_covariance)
from .codebook import (LineCodebook, ProductCodebook, VectorCodebook, lloyd_train,
                       pcb_quantize, quantize_line, tsodft)
from .errors import (ConfigError, ConvergenceError, DegenerateBasisError, DomainError,
                     InvariantViolation)
from .evaluate import (Pipeline, ZFConfig, bounds_check, decomposition_check,
                       overall_distortion, spectral_efficiency, subband_distortion,
                       zf_precoder)
from .subband import BitAllocationParams, SubbandScheme, bit_count, quantize_subband
from .wideband import WidebandScheme, decode_wideband, wideband_feedback

__version__ = "0.1.0"
