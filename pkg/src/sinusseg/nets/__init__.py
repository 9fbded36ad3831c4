from .cbam import CBAM, ChannelAttention, SpatialAttention
from .backbone import BackboneSpec, build_backbone, register_backbone, count_parameters
from .correction import CorrectionNetSpec, build_correction_net
from .cyclegan import ResnetGenerator, PatchDiscriminator, build_cyclegan_pair

__all__ = [
    "CBAM", "ChannelAttention", "SpatialAttention",
    "BackboneSpec", "build_backbone", "register_backbone", "count_parameters",
    "CorrectionNetSpec", "build_correction_net",
    "ResnetGenerator", "PatchDiscriminator", "build_cyclegan_pair",
]
