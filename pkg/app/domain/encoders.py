import logging
from enum import Enum

import torch
import torch.nn.functional as F

from app.errors import ConfigurationError, DimensionError

log = logging.getLogger("encoders")


class EncoderType(Enum):
    RANDOM_PROJECTION = "random_projection"
    CLIP_PROJECTION = "clip_projection"
    FIRST_PIXEL = "first_pixel"


class Encoder:
    """Maps an image (H, W, C) or a clip (w, H, W, C) to an out_dim vector.

    Stands in for a frozen pretrained backbone. Implementations must be
    deterministic: the same input always yields the same output.
    """

    def __init__(self, name, out_dim, input_size=(224, 224)):
        if out_dim < 1:
            raise ConfigurationError(f"Encoder {name} needs out_dim >= 1, got {out_dim}")
        self.name = name
        self.out_dim = out_dim
        self.input_size = tuple(input_size)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def encode_clip(self, clip: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError(f"Encoder {self.name} does not accept clips")

    def __repr__(self):
        return f"{self.__class__.__name__}(name={self.name!r}, out_dim={self.out_dim})"


class RandomProjectionEncoder(Encoder):
    """Seeded random linear map of an average-pooled pixel grid."""

    def __init__(self, name="spatial", out_dim=32, grid=4, channels=3, seed=0, input_size=(8, 8)):
        super().__init__(name, out_dim, input_size)
        self.grid = grid
        self.channels = channels
        generator = torch.Generator().manual_seed(seed)
        fan_in = grid * grid * channels
        self.weight = torch.randn(out_dim, fan_in, generator=generator) / fan_in**0.5

    def encode(self, image):
        _check_image(image, self.channels)
        pooled = F.adaptive_avg_pool2d(image.permute(2, 0, 1).float(), (self.grid, self.grid))
        return self.weight @ pooled.reshape(-1)


class ClipProjectionEncoder(Encoder):
    """Random projection of a (time, height, width) pooled clip volume."""

    def __init__(self, name="motion", out_dim=32, grid=4, time_grid=2, channels=3, seed=1, input_size=(8, 8)):
        super().__init__(name, out_dim, input_size)
        self.grid = grid
        self.time_grid = time_grid
        self.channels = channels
        generator = torch.Generator().manual_seed(seed)
        fan_in = time_grid * grid * grid * channels
        self.weight = torch.randn(out_dim, fan_in, generator=generator) / fan_in**0.5

    def encode_clip(self, clip):
        if clip.dim() != 4 or clip.shape[-1] != self.channels:
            raise DimensionError(
                f"Clip must be (w, H, W, {self.channels}), got {tuple(clip.shape)}"
            )
        volume = clip.permute(3, 0, 1, 2).float()
        pooled = F.adaptive_avg_pool3d(volume, (self.time_grid, self.grid, self.grid))
        return self.weight @ pooled.reshape(-1)

    def encode(self, image):
        return self.encode_clip(image.unsqueeze(0))


class FirstPixelEncoder(Encoder):
    """Returns the top-left pixel's first channel repeated out_dim times."""

    def __init__(self, name="first_pixel", out_dim=1, input_size=(1, 1)):
        super().__init__(name, out_dim, input_size)

    def encode(self, image):
        return image[0, 0, 0].reshape(1).repeat(self.out_dim)

    def encode_clip(self, clip):
        return self.encode(clip[0])


def _check_image(image, channels):
    if image.dim() != 3 or image.shape[-1] != channels:
        raise DimensionError(f"Image must be (H, W, {channels}), got {tuple(image.shape)}")


class FaceDetector:
    """Returns a face crop for a frame, or None when detection fails."""

    def detect(self, frame: torch.Tensor, index: int):
        raise NotImplementedError


class CenterCropDetector(FaceDetector):
    def __init__(self, fraction=0.5):
        self.fraction = fraction

    def detect(self, frame, index):
        height, width = frame.shape[0], frame.shape[1]
        crop_h = max(1, int(height * self.fraction))
        crop_w = max(1, int(width * self.fraction))
        top = (height - crop_h) // 2
        left = (width - crop_w) // 2
        return frame[top : top + crop_h, left : left + crop_w]


class MaskedDetector(FaceDetector):
    """Wraps another detector and fails on frames whose mask entry is False."""

    def __init__(self, mask, detector=None):
        self.mask = [bool(m) for m in mask]
        self.detector = detector or CenterCropDetector()

    def detect(self, frame, index):
        if index >= len(self.mask) or not self.mask[index]:
            return None
        return self.detector.detect(frame, index)


encoder_mapping: dict[EncoderType, type[Encoder]] = {
    EncoderType.RANDOM_PROJECTION: RandomProjectionEncoder,
    EncoderType.CLIP_PROJECTION: ClipProjectionEncoder,
    EncoderType.FIRST_PIXEL: FirstPixelEncoder,
}


def create_encoder(encoder_type, **kwargs) -> Encoder:
    try:
        key = EncoderType(encoder_type) if not isinstance(encoder_type, EncoderType) else encoder_type
    except ValueError as e:
        raise ConfigurationError(f"Unknown encoder type '{encoder_type}'") from e
    encoder = encoder_mapping[key](**kwargs)
    log.info(f"Created {encoder!r}")
    return encoder
