"""Model versions, coding-tool flags and architecture presets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from ..motion import MENetConfig
from ..nets.autoencoder import CodecArch
from ..nets.refine import ILR_SPECS, MC_SPECS, RefineArch
from ..recurrent import RecurrentConfig

VERSIONS = ("EEV-0.1", "EEV-0.2", "EEV-0.3", "EEV-0.4")
TOOLS = ("me_net", "mc_net", "rc_module", "mcp_refine", "ilr_network", "motion_decouple")

# Coding-tool matrix per version, in TOOLS order.
TOOL_MATRIX = {
    "EEV-0.1": (True, True, True, False, False, False),
    "EEV-0.2": (True, True, True, True, False, False),
    "EEV-0.3": (True, True, True, True, True, False),
    "EEV-0.4": (True, True, True, True, True, True),
}
# Two-stage (coarse-to-fine) residual coding ships with EEV-0.3; the
# feature-space EEV-0.4 path codes a single residual.
C2F_VERSIONS = ("EEV-0.3",)

PSNR_LAMBDAS = (2048, 1024, 512, 256)
MSSSIM_LAMBDAS = (64, 32, 16, 8)
METRICS = ("psnr", "msssim")
DEFAULT_PERIOD = 16


@dataclass(frozen=True)
class ArchConfig:
    name: str
    menet: MENetConfig
    mv: CodecArch
    residual: CodecArch
    refine: RefineArch
    ilr_specs: tuple
    mc_specs: tuple
    recurrent: RecurrentConfig

    @classmethod
    def full(cls) -> "ArchConfig":
        return cls("full", MENetConfig(), CodecArch(channels=2), CodecArch(channels=3), RefineArch(),
                   ILR_SPECS, MC_SPECS, RecurrentConfig())

    @classmethod
    def small(cls) -> "ArchConfig":
        """Narrow widths with the same topology, for desk-scale runs."""
        return cls("small", MENetConfig.small(),
                   CodecArch(channels=2, hidden=32, latent=32, hyper=32),
                   CodecArch(channels=3, hidden=32, latent=32, hyper=32),
                   RefineArch(channels=16, blocks=5, ratio=4),
                   ("k5c16s1", "k3c16s1", "k3c16s1", "k3c16s1", "k5c3s1"),
                   ("k3c16s1", "k3c16s1", "k3c3s1"),
                   RecurrentConfig.small())


ARCH_IDS = {"full": 0, "small": 1}
ARCH_PRESETS = {"full": ArchConfig.full, "small": ArchConfig.small}


def arch_by_id(arch_id: int) -> ArchConfig:
    for name, i in ARCH_IDS.items():
        if i == arch_id:
            return ARCH_PRESETS[name]()
    raise ValueError(f"unknown architecture id {arch_id}")


@dataclass(frozen=True)
class ModelConfig:
    version: str = "EEV-0.3"
    me_net: Optional[bool] = None
    mc_net: Optional[bool] = None
    rc_module: Optional[bool] = None
    mcp_refine: Optional[bool] = None
    ilr_network: Optional[bool] = None
    motion_decouple: Optional[bool] = None
    lam: int = 2048
    metric: str = "psnr"
    gop_size: int = DEFAULT_PERIOD
    intra_period: int = DEFAULT_PERIOD
    arch: ArchConfig = field(default_factory=ArchConfig.full)

    def __post_init__(self):
        if self.version not in TOOL_MATRIX:
            raise ValueError(f"unknown model version {self.version!r}; expected one of {', '.join(VERSIONS)}")
        expected = TOOL_MATRIX[self.version]
        for tool, want in zip(TOOLS, expected):
            got = getattr(self, tool)
            if got is None:
                object.__setattr__(self, tool, want)
            elif bool(got) != want:
                raise ValueError(f"{self.version} {'requires' if want else 'excludes'} tool {tool}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.lam <= 0 or int(self.lam) != self.lam:
            raise ValueError(f"lambda must be a positive integer, got {self.lam}")
        if self.gop_size < 1 or self.intra_period < 1:
            raise ValueError("GOP size and intra period must be positive")

    @property
    def model_id(self) -> int:
        return VERSIONS.index(self.version) + 1

    @property
    def c2f(self) -> bool:
        return self.version in C2F_VERSIONS

    @property
    def metric_id(self) -> int:
        return METRICS.index(self.metric)

    def tools(self) -> dict:
        out = {t: getattr(self, t) for t in TOOLS}
        out["c2f"] = self.c2f
        return out

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def version_from_id(model_id: int) -> str:
    if not 1 <= model_id <= len(VERSIONS):
        raise ValueError(f"unknown model id {model_id}")
    return VERSIONS[model_id - 1]


def normalize_version(text: str) -> str:
    """Accept "EEV-0.3", "eev-0.3", "0.3" or "3"."""
    t = str(text).strip().upper()
    if t.startswith("EEV-"):
        t = t[4:]
    if t.isdigit():
        t = f"0.{t}"
    v = f"EEV-{t}"
    if v not in TOOL_MATRIX:
        raise ValueError(f"unknown model version {text!r}")
    return v
