"""Textured partial human body completion: shape fitting, texture transfer and atlas inpainting."""

from .mesh import Mesh, TextureAtlas, TexturedMesh, HoleSpec, load_obj, save_obj, cut_holes
from .metrics import directed_chamfer, symmetric_chamfer
from .shape import ShapeModel, RefineConfig, complete_shape, refine_latent
from .texture import TransferConfig, MaskPair, transfer_texture, derive_masks
from .inpaint import InpaintNet, MaskedImage, unet_inpaint, inpaint_atlas, partial_conv_forward

__version__ = "0.1.0"

__all__ = [
    "Mesh", "TextureAtlas", "TexturedMesh", "HoleSpec", "load_obj", "save_obj", "cut_holes",
    "directed_chamfer", "symmetric_chamfer",
    "ShapeModel", "RefineConfig", "complete_shape", "refine_latent",
    "TransferConfig", "MaskPair", "transfer_texture", "derive_masks",
    "InpaintNet", "MaskedImage", "unet_inpaint", "inpaint_atlas", "partial_conv_forward",
]
