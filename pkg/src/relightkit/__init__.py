"""relightkit: OLAT reflectance-field relighting engine.

Composes one-light-at-a-time image stacks under directional, variable-size
area, and HDRI environment lighting in linear radiance, decomposes
environment maps into panel weights or spherical gaussians, and ships the
pixel-level kernels for diffusion training support and dynamic gaussian
splatting, all verified against an internal synthetic-render oracle.
"""

from .compositor import (
    OlatStack,
    RelitSequence,
    area_light_target,
    area_light_weights,
    composite,
    crossfade_keyframes,
    animate_rotation,
    load_stack_manifest,
    relight_hdri,
    write_stack,
)
from .envmap import (
    EnvironmentMap,
    OlatWeights,
    SgSet,
    fit_sgs,
    hdri_to_olat_weights,
    rotate,
    synthesize_env,
)
from .lightmodel import (
    LightSample,
    PanelLayout,
    SphericalGaussian,
    build_stage,
    pad_embedding,
    scaled_direction,
    sg_eval,
    sg_sharpness,
    sg_sharpness_inverse,
    sh_encode,
    to_camera_space,
)
from .radiometry import (
    ColorChart,
    LinearImage,
    ScaleFactor3,
    apply_exposure,
    apply_scale,
    calibrate_color,
    linear_to_srgb,
    read_pfm,
    read_png,
    srgb_to_linear,
    write_pfm,
    write_png,
)

__version__ = "0.1.0"
