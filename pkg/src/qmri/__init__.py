"""Model-based quantitative MRI: T1/T2 maps straight from undersampled
multi-coil k-space via nonlinear conjugate gradient, with an unrolled
data-consistency/regularizer pipeline and a pluggable regularizer."""

from .baselines import (
    cg_sense_recon,
    nrmse,
    pixelwise_fit,
    seed_from_zero_filled,
    zero_filled_recon,
)
from .datatypes import (
    UNIT_SCALING,
    AcquisitionProtocol,
    ChannelScaling,
    CoilMaps,
    KSpaceData,
    ParameterState,
    SamplingMask,
)
from .encoding import (
    apply_coils,
    apply_mask,
    encode,
    encode_adjoint_linear,
    encode_linear,
    fft2_unitary,
    ifft2_unitary,
)
from .nlcg import NlcgConfig, NlcgReport, ObjectiveConfig, gradient, nlcg_minimize, objective
from .qmrt import read_tensor, write_tensor
from .regularizers import RegularizerSpec, builtin_regularizer, external_regularizer
from .signal_model import model_forward, model_jacobian_adjoint, model_jacobian_apply
from .simulate import (
    PRESETS,
    Ellipse,
    MaskSpec,
    PhantomSpec,
    acs_lines,
    make_coil_maps,
    make_mask,
    make_phantom,
    mask_accounting,
    phantom_preset,
    protocol_preset,
    sigma_for_snr,
    simulate_kspace,
    split_mask,
)
from .unroll import UnrollConfig, UnrollReport, auto_scaling, effective_lam, initialize, run_unrolled

__version__ = "0.1.0"
