from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError


@dataclass
class FSENetConfig:
    """Architecture and objective settings.

    The channel widths and block counts are not pinned down by any published
    number; the defaults give a ~1M-parameter network. ``fsenet params``
    reports the count for any configuration.
    """

    depth: int = 2
    base_channels: int = 32
    heads: int = 4
    dat_blocks: int = 3
    ffn_expansion: int = 2
    unet_levels: int = 2
    unet_blocks: int = 2
    deformable: bool = True
    alpha_init: float = 1.0
    hf_channels: int = 16
    contour_blocks: int = 3
    trm_dilations: tuple = (1, 2, 4, 8)
    se_reduction: int = 4
    spp_grids: tuple = (1, 2, 4, 8)
    share_refinement: bool = False
    identity_init: bool = True
    lambda_ssim: float = 0.4
    seed: int = 0

    def __post_init__(self):
        self.trm_dilations = tuple(int(r) for r in self.trm_dilations)
        self.spp_grids = tuple(int(g) for g in self.spp_grids)
        self.validate()

    def validate(self):
        counts = (
            "depth", "base_channels", "heads", "dat_blocks", "ffn_expansion",
            "unet_levels", "unet_blocks", "hf_channels", "contour_blocks", "se_reduction",
        )
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.base_channels % self.heads:
            raise ConfigError("heads must divide base_channels")
        if self.lambda_ssim < 0:
            raise ConfigError("lambda_ssim must be >= 0")
        if self.alpha_init == 0:
            raise ConfigError("alpha_init must be nonzero")
        if not self.trm_dilations or min(self.trm_dilations) < 1:
            raise ConfigError("trm_dilations must be positive")

    @property
    def pad_factor(self):
        return 2 ** (self.depth + self.unet_levels - 1)

    def to_dict(self):
        d = asdict(self)
        d["trm_dilations"] = list(self.trm_dilations)
        d["spp_grids"] = list(self.spp_grids)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def toy_config(**overrides):
    """Small configuration used by tests and smoke runs."""
    base = dict(
        base_channels=8, heads=2, dat_blocks=3, ffn_expansion=1, unet_blocks=1,
        hf_channels=8, contour_blocks=2,
    )
    base.update(overrides)
    return FSENetConfig(**base)
